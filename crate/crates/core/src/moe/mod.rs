//! Mixture-of-experts classification heads.
//!
//! Every head maps a `[B, 768]` fused embedding to `[B, 2]` logits through a
//! shared shape: some expert computation producing `[B, 128]`, then a
//! two-unit output layer.
//!
//! * [`SparseMoe`]: noisy top-k softmax gating over MLP experts, with
//!   importance and load auxiliary losses.
//! * [`MuMoe`]: entmax-gated multilinear experts `y = W ×₁ a ×₂ z`, stored
//!   densely or factorized in CP or tensor-ring form.
//! * [`Dense128`]: a single hidden layer, used when the expert layer is
//!   ablated.

mod mumoe;
mod sparse;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use mumoe::{Core, Factorization, MuMoe, MuMoeConfig};
pub use sparse::{Expert, Gate, SparseMoe, SparseMoeConfig, EXPERT_HIDDEN_DIM};

use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::tensor::{ParamId, ParamStore, RngStream, Tape, Var};

/// Width of the expert output fed to the shared two-unit output layer.
pub const EXPERT_OUT_DIM: usize = 128;
pub const NUM_CLASSES: usize = 2;

/// Whether gating noise is sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    SparseMoe,
    DenseMumoe,
    CpMumoe,
    TrMumoe,
    Dense128,
}

impl HeadKind {
    pub const ALL: [HeadKind; 5] = [
        HeadKind::SparseMoe,
        HeadKind::DenseMumoe,
        HeadKind::CpMumoe,
        HeadKind::TrMumoe,
        HeadKind::Dense128,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::SparseMoe => "sparse_moe",
            HeadKind::DenseMumoe => "dense_mumoe",
            HeadKind::CpMumoe => "cp_mumoe",
            HeadKind::TrMumoe => "tr_mumoe",
            HeadKind::Dense128 => "dense128",
        }
    }

    /// Expert count used when the configuration leaves it unset.
    pub fn default_experts(self) -> usize {
        match self {
            HeadKind::SparseMoe => 4,
            _ => 3,
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|h| h.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown head `{s}`")))
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shape parameters of any head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub input_dim: usize,
    pub n_experts: usize,
    /// Experts kept by the sparse gate.
    pub k: usize,
    pub cp_rank: usize,
    pub tr_ranks: [usize; 3],
}

impl HeadConfig {
    pub fn new(kind: HeadKind) -> Self {
        Self {
            kind,
            input_dim: 768,
            n_experts: kind.default_experts(),
            k: 3,
            cp_rank: 4,
            tr_ranks: [4, 4, 4],
        }
    }
}

/// Trainable parameter counts of a head, split by role.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    /// Expert weights (the factorized core for μMoE heads).
    pub core: usize,
    /// Gating matrices.
    pub gate: usize,
    /// The two-unit output layer.
    pub output: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.core + self.gate + self.output
    }
}

/// Exact trainable-parameter count of a head configuration.
pub fn param_count(cfg: &HeadConfig) -> ParamCount {
    let (i, o, n) = (cfg.input_dim, EXPERT_OUT_DIM, cfg.n_experts);
    let output = o * NUM_CLASSES + NUM_CLASSES;
    let (core, gate) = match cfg.kind {
        HeadKind::SparseMoe => {
            let h = sparse::EXPERT_HIDDEN_DIM;
            (n * (i * h + h + h * o + o), 2 * i * n)
        }
        HeadKind::DenseMumoe => (n * i * o, i * n),
        HeadKind::CpMumoe => (cfg.cp_rank * (n + i + o), i * n),
        HeadKind::TrMumoe => {
            let [r1, r2, r3] = cfg.tr_ranks;
            (r1 * n * r2 + r2 * i * r3 + r3 * o * r1, i * n)
        }
        HeadKind::Dense128 => (i * o + o, 0),
    };
    ParamCount { core, gate, output }
}

/// Hidden layer plus output layer, standing in for the expert layer.
#[derive(Clone, Debug)]
pub struct Dense128 {
    pub hidden: Linear,
    pub out_layer: Linear,
}

impl Dense128 {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        rng: &mut RngStream,
    ) -> Self {
        Self {
            hidden: Linear::new(
                store,
                &format!("{prefix}.hidden"),
                input_dim,
                EXPERT_OUT_DIM,
                true,
                rng,
            ),
            out_layer: Linear::new(
                store,
                &format!("{prefix}.out"),
                EXPERT_OUT_DIM,
                NUM_CLASSES,
                true,
                rng,
            ),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, z: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, z)?;
        let h = tape.relu(h);
        self.out_layer.forward(tape, h)
    }
}

/// Auxiliary balancing losses of the sparse head, as scalar tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct AuxLosses {
    pub importance: Var,
    pub load: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    pub logits: Var,
    /// Present only for the sparse head.
    pub aux: Option<AuxLosses>,
}

#[derive(Clone, Debug)]
pub enum Head {
    Sparse(SparseMoe),
    MuMoe(MuMoe),
    Dense128(Dense128),
}

impl Head {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &HeadConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Ok(match cfg.kind {
            HeadKind::SparseMoe => Head::Sparse(SparseMoe::new(
                store,
                prefix,
                SparseMoeConfig {
                    input_dim: cfg.input_dim,
                    n_experts: cfg.n_experts,
                    k: cfg.k,
                },
                rng,
            )?),
            HeadKind::DenseMumoe | HeadKind::CpMumoe | HeadKind::TrMumoe => {
                let factorization = match cfg.kind {
                    HeadKind::DenseMumoe => Factorization::Dense,
                    HeadKind::CpMumoe => Factorization::Cp { rank: cfg.cp_rank },
                    _ => Factorization::TensorRing {
                        ranks: cfg.tr_ranks,
                    },
                };
                Head::MuMoe(MuMoe::new(
                    store,
                    prefix,
                    MuMoeConfig {
                        n_experts: cfg.n_experts,
                        input_dim: cfg.input_dim,
                        output_dim: EXPERT_OUT_DIM,
                        factorization,
                    },
                    rng,
                )?)
            }
            HeadKind::Dense128 => Head::Dense128(Dense128::new(store, prefix, cfg.input_dim, rng)),
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        z: Var,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<HeadOutput> {
        match self {
            Head::Sparse(h) => h.forward(tape, z, mode, rng),
            Head::MuMoe(h) => Ok(HeadOutput {
                logits: h.forward(tape, z)?,
                aux: None,
            }),
            Head::Dense128(h) => Ok(HeadOutput {
                logits: h.forward(tape, z)?,
                aux: None,
            }),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Head::Sparse(h) => h.params(),
            Head::MuMoe(h) => h.params(),
            Head::Dense128(h) => {
                let mut p = h.hidden.params();
                p.extend(h.out_layer.params());
                p
            }
        }
    }
}
