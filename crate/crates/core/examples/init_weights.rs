//! Build the parameter list for a configuration, initialise it, save it and
//! read it back.

use lort::network::{count_params, param_specs};
use lort::weights::WeightStore;
use lort::ModelConfig;

fn main() -> lort::Result<()> {
    let cfg = ModelConfig {
        n_blocks: 2,
        ..ModelConfig::default()
    };
    let specs = param_specs(&cfg);
    let store = WeightStore::initialize(&specs, 42);
    println!("{} tensors, {} parameters", specs.len(), count_params(&cfg));
    for s in specs.iter().filter(|s| s.name.starts_with("block0.tmsa")) {
        println!("  {:<28} {:?}", s.name, s.shape);
    }

    let path = std::env::temp_dir().join("lort-example-weights.bin");
    store.save(&path, Some(&cfg))?;
    let (back, saved) = WeightStore::load(&path)?;
    back.validate(&specs)?;
    println!(
        "saved {} bytes to {}, config restored: {}",
        std::fs::metadata(&path)?.len(),
        path.display(),
        saved.as_ref() == Some(&cfg)
    );
    Ok(())
}
