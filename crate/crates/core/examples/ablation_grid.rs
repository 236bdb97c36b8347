//! Runs every ablation variant (single branch, unshared encoders, concat
//! fusion, and the alternative heads) on the synthetic tone dataset.
//!
//! ```text
//! cargo run --example ablation_grid -- [epochs] [workers]
//! ```

use moedep::io::{featurize_manifest, parse_manifest, synth_dataset, SyntheticSpec};
use moedep::train::{ablation_grid, grid_table, run_grid, Inputs, ModelConfig};

fn main() -> moedep::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let dir = std::env::temp_dir().join("moedep-ablation");
    let manifest = synth_dataset(&SyntheticSpec::default(), &dir)?;
    let data = featurize_manifest(&parse_manifest(&manifest)?, Inputs::Both, 1)?;

    let base = ModelConfig {
        runs: 1,
        epochs: args.first().copied().unwrap_or(5),
        ..Default::default()
    };
    let workers = args.get(1).copied().unwrap_or(1);
    for (name, cfg) in ablation_grid(&base) {
        println!(
            "{name:<22} inputs={:?} fusion={:?} head={} shared={}",
            cfg.inputs, cfg.fusion, cfg.head, cfg.encoder_shared
        );
    }
    let rows = run_grid(&ablation_grid(&base), &data, workers)?;
    print!("{}", grid_table(&rows));
    Ok(())
}
