//! Cross-validates the default model on a generated two-class tone dataset.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [runs] [epochs] [workers]
//! ```

use std::time::Instant;

use moedep::io::{featurize_manifest, parse_manifest, synth_dataset, SyntheticSpec};
use moedep::train::{cross_validate, Inputs, ModelConfig};

fn main() -> moedep::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let dir = std::env::temp_dir().join("moedep-synth-example");
    let manifest = synth_dataset(&SyntheticSpec::default(), &dir)?;
    let t = Instant::now();
    let data = featurize_manifest(&parse_manifest(&manifest)?, Inputs::Both, 1)?;
    println!(
        "featurized {} subjects in {:.1}s",
        data.len(),
        t.elapsed().as_secs_f64()
    );

    let mut cfg = ModelConfig::default();
    cfg.runs = args.first().copied().unwrap_or(cfg.runs);
    cfg.epochs = args.get(1).copied().unwrap_or(cfg.epochs);
    let workers = args.get(2).copied().unwrap_or(1);
    let (report, outcomes) = cross_validate(&cfg, &data, workers)?;
    for o in &outcomes {
        println!(
            "run {} fold {}: accuracy {:.2} loss {:.4} -> {:.4}",
            o.entry.run,
            o.entry.fold,
            o.entry.metrics.accuracy,
            o.epoch_losses[0],
            o.epoch_losses.last().unwrap()
        );
    }
    print!("{}", report.table());
    println!("wall clock {:.1}s", report.wall_clock_secs);
    Ok(())
}
