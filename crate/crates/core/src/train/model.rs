use super::config::{FusionKind, Inputs, ModelConfig};
use crate::encoder::{Encoder, EncoderConfig, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::fusion::{BlockFusion, BlockFusionConfig, ConcatFusion};
use crate::io::TensorContainer;
use crate::moe::{AuxLosses, Head, Mode};
use crate::tensor::{ParamStore, RngStream, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub enum FusionLayer {
    Block(BlockFusion),
    Concat(ConcatFusion),
    None,
}

/// The assembled network: encoder(s), fusion, and a classification head.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder_read: Option<Encoder>,
    pub encoder_interview: Option<Encoder>,
    pub fusion: FusionLayer,
    pub head: Head,
}

/// One mini-batch of feature images, each `[B, 3, 224, 224]`, plus labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub reading: Option<Tensor>,
    pub interview: Option<Tensor>,
    pub labels: Vec<usize>,
}

/// Scalar loss nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Loss {
    pub total: Var,
    pub ce: Var,
    pub aux: Option<AuxLosses>,
}

impl Model {
    pub fn build(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let enc_cfg = EncoderConfig {
            topology: cfg.encoder_topology,
            embedding_dim: EMBEDDING_DIM,
            shared_weights: cfg.encoder_shared,
        };
        let (encoder_read, encoder_interview) = match cfg.inputs {
            Inputs::ReadOnly => (Some(Encoder::build(store, "encoder", &enc_cfg, rng)), None),
            Inputs::InterviewOnly => (None, Some(Encoder::build(store, "encoder", &enc_cfg, rng))),
            Inputs::Both if cfg.encoder_shared => {
                let e = Encoder::build(store, "encoder", &enc_cfg, rng);
                (Some(e.clone()), Some(e))
            }
            Inputs::Both => (
                Some(Encoder::build(store, "encoder_read", &enc_cfg, rng)),
                Some(Encoder::build(store, "encoder_interview", &enc_cfg, rng)),
            ),
        };
        let fusion = match cfg.fusion {
            FusionKind::Block => FusionLayer::Block(BlockFusion::new(
                store,
                "fusion",
                BlockFusionConfig {
                    normalize: cfg.fusion_normalize,
                    ..Default::default()
                },
                rng,
            )?),
            FusionKind::Concat => FusionLayer::Concat(ConcatFusion::new(
                store,
                "fusion",
                EMBEDDING_DIM,
                EMBEDDING_DIM,
                rng,
            )),
            FusionKind::None => FusionLayer::None,
        };
        let head = Head::new(store, "head", &cfg.head_config(), rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder_read,
            encoder_interview,
            fusion,
            head,
        })
    }

    /// Fused `[B, 768]` embedding of a batch.
    pub fn embed(&self, tape: &mut Tape<'_>, batch: &Batch) -> Result<Var> {
        let branch = |tape: &mut Tape<'_>,
                      enc: &Option<Encoder>,
                      images: &Option<Tensor>,
                      name: &str|
         -> Result<Option<Var>> {
            match (enc, images) {
                (Some(enc), Some(img)) => {
                    let x = tape.constant(img.clone());
                    Ok(Some(enc.forward(tape, x)?))
                }
                (Some(_), None) => Err(Error::InvalidArgument(format!(
                    "batch has no {name} images"
                ))),
                (None, _) => Ok(None),
            }
        };
        let r = branch(tape, &self.encoder_read, &batch.reading, "reading")?;
        let i = branch(tape, &self.encoder_interview, &batch.interview, "interview")?;
        match (&self.fusion, r, i) {
            (FusionLayer::Block(f), Some(r), Some(i)) => f.forward(tape, r, i),
            (FusionLayer::Concat(f), Some(r), Some(i)) => f.forward(tape, r, i),
            (FusionLayer::None, Some(x), None) | (FusionLayer::None, None, Some(x)) => Ok(x),
            _ => Err(Error::Config(
                "fusion layer does not match the input branches".into(),
            )),
        }
    }

    /// Logits `[B, 2]` and, for the sparse head, its auxiliary losses.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        batch: &Batch,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Var, Option<AuxLosses>)> {
        let z = self.embed(tape, batch)?;
        let out = self.head.forward(tape, z, mode, rng)?;
        Ok((out.logits, out.aux))
    }

    pub fn loss(
        &self,
        tape: &mut Tape<'_>,
        batch: &Batch,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Loss> {
        let (logits, aux) = self.forward(tape, batch, mode, rng)?;
        total_loss(tape, logits, &batch.labels, aux, self.cfg.alpha)
    }

    /// Every model parameter under its store name.
    pub fn export_weights(store: &ParamStore) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        for (_, p) in store.iter() {
            c.insert(p.name.clone(), p.value.clone())?;
        }
        Ok(c)
    }

    /// Loads every parameter of `store` from `weights`, validating all names
    /// and shapes before writing.
    pub fn import_weights(store: &mut ParamStore, weights: &TensorContainer) -> Result<()> {
        for (_, p) in store.iter() {
            let t = weights.require(&p.name)?;
            if t.shape() != p.value.shape() {
                return Err(Error::TensorShape {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let t = weights.require(&store.get(id).name)?.clone();
            store.set_value(id, t)?;
        }
        Ok(())
    }
}

/// Mean cross-entropy, plus `alpha · (L_imp + L_load)` when auxiliary losses are given.
pub fn total_loss(
    tape: &mut Tape<'_>,
    logits: Var,
    labels: &[usize],
    aux: Option<AuxLosses>,
    alpha: f64,
) -> Result<Loss> {
    let ce = tape.cross_entropy(logits, labels)?;
    let total = match aux {
        Some(a) => {
            let sum = tape.add(a.importance, a.load)?;
            let weighted = tape.scale(sum, alpha);
            tape.add(ce, weighted)?
        }
        None => ce,
    };
    Ok(Loss { total, ce, aux })
}
