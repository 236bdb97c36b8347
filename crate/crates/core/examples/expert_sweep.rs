//! Accuracy against the number of experts for the tensor-ring head on the
//! synthetic tone dataset.
//!
//! ```text
//! cargo run --example expert_sweep -- [epochs] [workers]
//! ```

use moedep::io::{featurize_manifest, parse_manifest, synth_dataset, SyntheticSpec};
use moedep::train::{expert_sweep, grid_table, run_grid, Inputs, ModelConfig};

fn main() -> moedep::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let dir = std::env::temp_dir().join("moedep-expert-sweep");
    let manifest = synth_dataset(&SyntheticSpec::default(), &dir)?;
    let data = featurize_manifest(&parse_manifest(&manifest)?, Inputs::Both, 1)?;

    let base = ModelConfig {
        runs: 1,
        epochs: args.first().copied().unwrap_or(5),
        ..Default::default()
    };
    let workers = args.get(1).copied().unwrap_or(1);
    let rows = run_grid(&expert_sweep(&base, &[2, 4, 8, 16]), &data, workers)?;
    print!("{}", grid_table(&rows));
    Ok(())
}
