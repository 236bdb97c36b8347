//! Finite-difference checks of whole heads and models on random inputs.

use super::config::ModelConfig;
use super::model::{total_loss, Batch, Model};
use crate::audio::IMAGE_SIZE;
use crate::error::Result;
use crate::moe::{Head, HeadConfig, Mode};
use crate::tensor::{gradcheck, GradCheckConfig, GradCheckReport, ParamStore, RngStream, Tensor};

fn alternating_labels(n: usize) -> Vec<usize> {
    (0..n).map(|i| i % 2).collect()
}

/// Checks the loss `CE + alpha·(L_imp + L_load)` of a freshly initialized
/// head on `batch` random embeddings. Eval mode, so the sparse gate is noise-free.
pub fn check_head(
    head_cfg: &HeadConfig,
    batch: usize,
    alpha: f64,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(seed, 0);
    let mut store = ParamStore::new();
    let head = Head::new(&mut store, "head", head_cfg, &mut rng)?;
    let z = Tensor::from_fn(&[batch, head_cfg.input_dim], |_| rng.normal());
    let labels = alternating_labels(batch);
    gradcheck(
        &mut store,
        |t| {
            let zv = t.constant(z.clone());
            let out = head.forward(t, zv, Mode::Eval, &mut rng)?;
            Ok(total_loss(t, out.logits, &labels, out.aux, alpha)?.total)
        },
        cfg,
    )
}

/// Checks the full model loss on `batch` random feature images per branch.
pub fn check_model(
    model_cfg: &ModelConfig,
    batch: usize,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(model_cfg.seed, 0);
    let mut store = ParamStore::new();
    let model = Model::build(model_cfg, &mut store, &mut rng)?;
    let mut image = || {
        Some(Tensor::from_fn(&[batch, 3, IMAGE_SIZE, IMAGE_SIZE], |_| {
            rng.uniform()
        }))
    };
    let data = Batch {
        reading: image(),
        interview: image(),
        labels: alternating_labels(batch),
    };
    let mut noise = RngStream::new(model_cfg.seed, 1);
    gradcheck(
        &mut store,
        |t| Ok(model.loss(t, &data, Mode::Eval, &mut noise)?.total),
        cfg,
    )
}
