//! Ablation grid and expert-count sweep on top of [`cross_validate`].

use std::fmt::Write as _;

use super::config::{FusionKind, Inputs, ModelConfig};
use super::harness::{cross_validate, Dataset};
use super::report::RunReport;
use crate::error::Result;
use crate::moe::HeadKind;

/// The base configuration and one variant per ablation switch.
pub fn ablation_grid(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let variant = |f: &dyn Fn(&mut ModelConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let single = |inputs: Inputs| {
        move |c: &mut ModelConfig| {
            c.inputs = inputs;
            c.fusion = FusionKind::None;
        }
    };
    let head = |kind: HeadKind| {
        move |c: &mut ModelConfig| {
            c.head = kind;
            c.n_experts = None;
        }
    };
    vec![
        ("full".to_string(), base.clone()),
        ("read_only".into(), variant(&single(Inputs::ReadOnly))),
        (
            "interview_only".into(),
            variant(&single(Inputs::InterviewOnly)),
        ),
        (
            "non_shared_encoders".into(),
            variant(&|c| c.encoder_shared = false),
        ),
        (
            "concat_fusion".into(),
            variant(&|c| c.fusion = FusionKind::Concat),
        ),
        ("dense128".into(), variant(&head(HeadKind::Dense128))),
        ("sparse_moe".into(), variant(&head(HeadKind::SparseMoe))),
        ("cp_mumoe".into(), variant(&head(HeadKind::CpMumoe))),
    ]
}

/// One configuration per expert count. For the sparse head `k` is capped
/// at the number of experts.
pub fn expert_sweep(base: &ModelConfig, counts: &[usize]) -> Vec<(String, ModelConfig)> {
    counts
        .iter()
        .map(|&n| {
            let mut c = base.clone();
            c.n_experts = Some(n);
            c.k = c.k.min(n);
            (format!("{n} experts"), c)
        })
        .collect()
}

/// Cross-validates every named configuration in order.
pub fn run_grid(
    configs: &[(String, ModelConfig)],
    data: &Dataset,
    workers: usize,
) -> Result<Vec<(String, RunReport)>> {
    configs
        .iter()
        .map(|(name, cfg)| Ok((name.clone(), cross_validate(cfg, data, workers)?.0)))
        .collect()
}

/// Accuracy and F1 (mean ± std, percent) per configuration.
pub fn grid_table(rows: &[(String, RunReport)]) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<22} {:>16} {:>16}",
        "configuration", "accuracy (%)", "F1 (%)"
    )
    .unwrap();
    for (name, report) in rows {
        match report.aggregate() {
            Ok(agg) => {
                let cell = |m: &str| agg.get(m).map(|v| v.format()).unwrap_or_default();
                writeln!(s, "{name:<22} {:>16} {:>16}", cell("accuracy"), cell("f1")).unwrap();
            }
            Err(_) => writeln!(s, "{name:<22} {:>16} {:>16}", "partial", "partial").unwrap(),
        }
    }
    s
}
