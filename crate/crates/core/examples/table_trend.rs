//! Parameter and operation counts across block counts and widths, next to the
//! published figures.

use lort::network::mac_breakdown;
use lort::verify::{reference_configs, table2_trend, TrendReport, TREND_DURATION_S};
use lort::ModelConfig;

fn main() {
    let report = table2_trend(&reference_configs());
    println!("{:>2} {:>3} {:>10} {:>10} {:>9} {:>9}", "N", "C", "params", "ref", "GFLOPs", "ref");
    for r in &report.rows {
        println!(
            "{:>2} {:>3} {:>10} {:>10} {:>9.2} {:>9.2}",
            r.n_blocks,
            r.channels,
            r.params,
            r.reference_params.map_or(0.0, |v| v),
            r.flops as f64 / 1e9,
            r.reference_flops.map_or(0.0, |v| v / 1e9)
        );
    }
    let inc = report.block_increments(16);
    let params: Vec<i64> = inc.iter().map(|p| p.0).collect();
    println!("per-block params {params:?}, spread {:.3}", TrendReport::increment_spread(&params));

    let m = mac_breakdown(&ModelConfig::default(), TREND_DURATION_S);
    println!(
        "default MACs: encoder {:.2}G, per block {:.2}G, decoders {:.2}G",
        m.encoder as f64 / 1e9,
        m.per_block as f64 / 1e9,
        m.decoders as f64 / 1e9
    );
}
