use super::{AuxLosses, HeadOutput, Mode, EXPERT_OUT_DIM, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::layers::{glorot_uniform, Linear};
use crate::tensor::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

pub const EXPERT_HIDDEN_DIM: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMoeConfig {
    pub input_dim: usize,
    pub n_experts: usize,
    pub k: usize,
}

/// A two-layer ReLU MLP expert.
#[derive(Clone, Debug)]
pub struct Expert {
    pub hidden: Linear,
    pub out: Linear,
}

impl Expert {
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, x)?;
        let h = tape.relu(h);
        self.out.forward(tape, h)
    }
}

/// Sparsely gated mixture of MLP experts with noisy top-k routing.
#[derive(Clone, Debug)]
pub struct SparseMoe {
    pub cfg: SparseMoeConfig,
    /// `[input_dim, n]` clean gate weights.
    pub w_gate: ParamId,
    /// `[input_dim, n]` weights of the per-expert noise scale.
    pub w_noise: ParamId,
    pub experts: Vec<Expert>,
    pub out_layer: Linear,
}

/// Intermediate gating quantities for a batch, all `[B, n]`.
#[derive(Clone, Copy, Debug)]
pub struct Gate {
    /// `x·W_g`.
    pub clean: Var,
    /// `softplus(x·W_noise)`.
    pub noise_std: Var,
    /// Realized logits `clean + ε·noise_std` (`ε = 0` in eval mode).
    pub logits: Var,
    /// `softmax(KeepTopK(logits, k))`.
    pub gates: Var,
}

impl SparseMoe {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: SparseMoeConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if cfg.n_experts == 0 || cfg.k == 0 || cfg.k > cfg.n_experts {
            return Err(Error::Config(format!(
                "sparse head needs 1 <= k <= n, got k = {}, n = {}",
                cfg.k, cfg.n_experts
            )));
        }
        let (i, n) = (cfg.input_dim, cfg.n_experts);
        let w_gate = store.add(
            format!("{prefix}.w_gate"),
            glorot_uniform(&[i, n], i, n, rng),
        );
        let w_noise = store.add(
            format!("{prefix}.w_noise"),
            glorot_uniform(&[i, n], i, n, rng),
        );
        let experts = (0..n)
            .map(|e| Expert {
                hidden: Linear::new(
                    store,
                    &format!("{prefix}.expert{e}.hidden"),
                    i,
                    EXPERT_HIDDEN_DIM,
                    true,
                    rng,
                ),
                out: Linear::new(
                    store,
                    &format!("{prefix}.expert{e}.out"),
                    EXPERT_HIDDEN_DIM,
                    EXPERT_OUT_DIM,
                    true,
                    rng,
                ),
            })
            .collect();
        let out_layer = Linear::new(
            store,
            &format!("{prefix}.out"),
            EXPERT_OUT_DIM,
            NUM_CLASSES,
            true,
            rng,
        );
        Ok(Self {
            cfg,
            w_gate,
            w_noise,
            experts,
            out_layer,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.w_gate, self.w_noise];
        for e in &self.experts {
            p.extend(e.hidden.params());
            p.extend(e.out.params());
        }
        p.extend(self.out_layer.params());
        p
    }

    /// Noisy top-k gating for `x: [B, input_dim]`. In train mode one
    /// standard-normal draw per entry is taken from `rng`.
    pub fn gate(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Gate> {
        let wg = tape.param(self.w_gate);
        let wn = tape.param(self.w_noise);
        let clean = tape.linear(x, wg, None)?;
        let raw_noise = tape.linear(x, wn, None)?;
        let noise_std = tape.softplus(raw_noise);
        let logits = match mode {
            Mode::Eval => clean,
            Mode::Train => {
                let eps = Tensor::from_fn(tape.shape(clean), |_| rng.normal());
                let eps = tape.constant(eps);
                let noise = tape.mul(eps, noise_std)?;
                tape.add(clean, noise)?
            }
        };
        let kept = tape.keep_topk(logits, self.cfg.k)?;
        let gates = tape.softmax(kept);
        Ok(Gate {
            clean,
            noise_std,
            logits,
            gates,
        })
    }

    /// Smooth probability that each expert lands in the top k when only its
    /// own noise is redrawn: `Φ((clean_i − kth_excluding(logits, k, i)) / noise_std_i)`.
    /// Identically one when `k = n`.
    pub fn load_probabilities(&self, tape: &mut Tape<'_>, gate: &Gate) -> Result<Var> {
        if self.cfg.k >= self.cfg.n_experts {
            let ones = Tensor::full(tape.shape(gate.clean), 1.0);
            return Ok(tape.constant(ones));
        }
        let threshold = tape.kth_excluding(gate.logits, self.cfg.k)?;
        let margin = tape.sub(gate.clean, threshold)?;
        let z = tape.div(margin, gate.noise_std)?;
        Ok(tape.normal_cdf(z))
    }

    /// Importance and load losses from a computed gate.
    pub fn aux_losses(&self, tape: &mut Tape<'_>, gate: &Gate) -> Result<AuxLosses> {
        let importance = tape.sum_rows(gate.gates)?;
        let importance = tape.cv_squared(importance);
        let probs = self.load_probabilities(tape, gate)?;
        let load = tape.sum_rows(probs)?;
        let load = tape.cv_squared(load);
        Ok(AuxLosses { importance, load })
    }

    /// Weighted sum of the selected experts' outputs, `[B, 128]`. Experts
    /// run only on the rows that selected them.
    pub fn combine(&self, tape: &mut Tape<'_>, x: Var, gates: Var) -> Result<Var> {
        let batch = tape.shape(x)[0];
        let n = self.cfg.n_experts;
        let mut y: Option<Var> = None;
        for (e, expert) in self.experts.iter().enumerate() {
            let rows: Vec<usize> = (0..batch)
                .filter(|&b| tape.value(gates).data()[b * n + e] > 0.0)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let xe = tape.select_rows(x, &rows)?;
            let out = expert.forward(tape, xe)?;
            let g = tape.slice_last(gates, e, 1)?;
            let g = tape.select_rows(g, &rows)?;
            let weighted = tape.scale_rows(out, g)?;
            let full = tape.scatter_rows(weighted, &rows, batch)?;
            y = Some(match y {
                Some(acc) => tape.add(acc, full)?,
                None => full,
            });
        }
        y.ok_or_else(|| Error::InvalidArgument("no expert selected".into()))
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<HeadOutput> {
        let gate = self.gate(tape, x, mode, rng)?;
        let aux = self.aux_losses(tape, &gate)?;
        let y = self.combine(tape, x, gate.gates)?;
        let logits = self.out_layer.forward(tape, y)?;
        Ok(HeadOutput {
            logits,
            aux: Some(aux),
        })
    }
}
