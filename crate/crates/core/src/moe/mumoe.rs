use super::{EXPERT_OUT_DIM, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::layers::{glorot_uniform, Linear};
use crate::tensor::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

/// Storage of the `[N, I, O]` expert weight tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factorization {
    /// Full tensor `W`.
    Dense,
    /// `W = Σ_r u1_r ∘ u2_r ∘ u3_r` with factors `U1: [R, N]`, `U2: [R, I]`, `U3: [R, O]`.
    Cp { rank: usize },
    /// `W[n, i, o] = trace(U1[:, n, :] · U2[:, i, :] · U3[:, o, :])` with cores
    /// `U1: [R1, N, R2]`, `U2: [R2, I, R3]`, `U3: [R3, O, R1]`.
    TensorRing { ranks: [usize; 3] },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MuMoeConfig {
    pub n_experts: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub factorization: Factorization,
}

impl MuMoeConfig {
    /// Number of weights in the expert tensor's stored form.
    pub fn core_params(&self) -> usize {
        let (n, i, o) = (self.n_experts, self.input_dim, self.output_dim);
        match self.factorization {
            Factorization::Dense => n * i * o,
            Factorization::Cp { rank } => rank * (n + i + o),
            Factorization::TensorRing {
                ranks: [r1, r2, r3],
            } => r1 * n * r2 + r2 * i * r3 + r3 * o * r1,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Core {
    Dense {
        w: ParamId,
    },
    Cp {
        u1: ParamId,
        u2: ParamId,
        u3: ParamId,
    },
    TensorRing {
        u1: ParamId,
        u2: ParamId,
        u3: ParamId,
    },
}

/// Multilinear mixture of experts: `a = entmax15(z·G)`, `y = W ×₁ a ×₂ z`,
/// logits `= out_layer(y)`.
#[derive(Clone, Debug)]
pub struct MuMoe {
    pub cfg: MuMoeConfig,
    /// `[I, N]` gate matrix.
    pub gate: ParamId,
    pub core: Core,
    pub out_layer: Linear,
}

/// Uniform factor entries sized so that a sum of `terms` products of three
/// independent entries has the Glorot variance `2 / (I + O)`.
fn factor_init(shape: &[usize], terms: usize, io: usize, rng: &mut RngStream) -> Tensor {
    let var = (2.0 / io as f64 / terms as f64).cbrt();
    let limit = (3.0 * var).sqrt();
    Tensor::from_fn(shape, |_| rng.uniform_range(-limit, limit))
}

impl MuMoe {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: MuMoeConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let (n, i, o) = (cfg.n_experts, cfg.input_dim, cfg.output_dim);
        if n == 0 || i == 0 || o == 0 {
            return Err(Error::Config("μMoE dimensions must be positive".into()));
        }
        match cfg.factorization {
            Factorization::Cp { rank: 0 } => {
                return Err(Error::Config("CP rank must be positive".into()))
            }
            Factorization::TensorRing { ranks } if ranks.contains(&0) => {
                return Err(Error::Config("tensor-ring ranks must be positive".into()))
            }
            _ => {}
        }
        let gate = store.add(format!("{prefix}.gate"), glorot_uniform(&[i, n], i, n, rng));
        let core = match cfg.factorization {
            Factorization::Dense => {
                let mut w = Vec::with_capacity(n * i * o);
                for _ in 0..n {
                    w.extend(glorot_uniform(&[i, o], i, o, rng).into_data());
                }
                Core::Dense {
                    w: store.add(format!("{prefix}.w"), Tensor::new(vec![n, i, o], w)?),
                }
            }
            Factorization::Cp { rank } => Core::Cp {
                u1: store.add(
                    format!("{prefix}.u1"),
                    factor_init(&[rank, n], rank, i + o, rng),
                ),
                u2: store.add(
                    format!("{prefix}.u2"),
                    factor_init(&[rank, i], rank, i + o, rng),
                ),
                u3: store.add(
                    format!("{prefix}.u3"),
                    factor_init(&[rank, o], rank, i + o, rng),
                ),
            },
            Factorization::TensorRing {
                ranks: [r1, r2, r3],
            } => {
                let terms = r1 * r2 * r3;
                Core::TensorRing {
                    u1: store.add(
                        format!("{prefix}.u1"),
                        factor_init(&[r1, n, r2], terms, i + o, rng),
                    ),
                    u2: store.add(
                        format!("{prefix}.u2"),
                        factor_init(&[r2, i, r3], terms, i + o, rng),
                    ),
                    u3: store.add(
                        format!("{prefix}.u3"),
                        factor_init(&[r3, o, r1], terms, i + o, rng),
                    ),
                }
            }
        };
        let out_layer = Linear::new(store, &format!("{prefix}.out"), o, NUM_CLASSES, true, rng);
        Ok(Self {
            cfg,
            gate,
            core,
            out_layer,
        })
    }

    /// Head for the default 768 → 128 widths.
    pub fn with_factorization(
        store: &mut ParamStore,
        prefix: &str,
        n_experts: usize,
        factorization: Factorization,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Self::new(
            store,
            prefix,
            MuMoeConfig {
                n_experts,
                input_dim: 768,
                output_dim: EXPERT_OUT_DIM,
                factorization,
            },
            rng,
        )
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.gate];
        match self.core {
            Core::Dense { w } => p.push(w),
            Core::Cp { u1, u2, u3 } | Core::TensorRing { u1, u2, u3 } => p.extend([u1, u2, u3]),
        }
        p.extend(self.out_layer.params());
        p
    }

    /// Entmax gate weights `[B, N]`.
    pub fn gate_weights(&self, tape: &mut Tape<'_>, z: Var) -> Result<Var> {
        let g = tape.param(self.gate);
        let logits = tape.linear(z, g, None)?;
        Ok(tape.entmax15(logits))
    }

    /// Expert mixture `y = W ×₁ a ×₂ z` for `z: [B, I]`, `a: [B, N]`, without
    /// materializing `W` for the factorized forms.
    pub fn mix(&self, tape: &mut Tape<'_>, z: Var, a: Var) -> Result<Var> {
        let batch = tape.shape(z)[0];
        let n = self.cfg.n_experts;
        match self.core {
            Core::Dense { w } => {
                let w = tape.param(w);
                // [B, I] · [N, I, O] over I -> [B, N, O], then weight by a.
                let t = tape.contract(z, w, &[(1, 1)])?;
                let a3 = tape.reshape(a, &[batch, 1, n])?;
                let y = tape.bmm(a3, t)?;
                tape.reshape(y, &[batch, self.cfg.output_dim])
            }
            Core::Cp { u1, u2, u3 } => {
                let (u1, u2, u3) = (tape.param(u1), tape.param(u2), tape.param(u3));
                let pa = tape.contract(a, u1, &[(1, 1)])?;
                let pz = tape.contract(z, u2, &[(1, 1)])?;
                let p = tape.mul(pa, pz)?;
                tape.contract(p, u3, &[(1, 0)])
            }
            Core::TensorRing { u1, u2, u3 } => {
                let (u1, u2, u3) = (tape.param(u1), tape.param(u2), tape.param(u3));
                let am = tape.contract(a, u1, &[(1, 1)])?; // [B, R1, R2]
                let zm = tape.contract(z, u2, &[(1, 1)])?; // [B, R2, R3]
                let m = tape.bmm(am, zm)?; // [B, R1, R3]
                                           // Close the ring: y[b, o] = Σ M[b, r1, r3] · U3[r3, o, r1].
                tape.contract(m, u3, &[(1, 2), (2, 0)])
            }
        }
    }

    /// Expert output `[B, O]` before the output layer.
    pub fn hidden(&self, tape: &mut Tape<'_>, z: Var) -> Result<Var> {
        let s = tape.shape(z);
        if s.len() != 2 || s[1] != self.cfg.input_dim {
            return Err(Error::shape(
                "mumoe",
                format!("input {s:?}, expected [B, {}]", self.cfg.input_dim),
            ));
        }
        let a = self.gate_weights(tape, z)?;
        self.mix(tape, z, a)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, z: Var) -> Result<Var> {
        let y = self.hidden(tape, z)?;
        self.out_layer.forward(tape, y)
    }

    /// The full `[N, I, O]` expert tensor implied by the stored factors.
    pub fn materialize(&self, store: &ParamStore) -> Tensor {
        let (n, i, o) = (self.cfg.n_experts, self.cfg.input_dim, self.cfg.output_dim);
        match self.core {
            Core::Dense { w } => store.value(w).clone(),
            Core::Cp { u1, u2, u3 } => {
                let (u1, u2, u3) = (store.value(u1), store.value(u2), store.value(u3));
                let r = u1.shape()[0];
                Tensor::from_fn(&[n, i, o], |idx| {
                    let (e, ii, oo) = (idx / (i * o), idx / o % i, idx % o);
                    (0..r)
                        .map(|k| u1.get(&[k, e]) * u2.get(&[k, ii]) * u3.get(&[k, oo]))
                        .sum()
                })
            }
            Core::TensorRing { u1, u2, u3 } => {
                let (u1, u2, u3) = (store.value(u1), store.value(u2), store.value(u3));
                let (r1, r2, r3) = (u1.shape()[0], u1.shape()[2], u2.shape()[2]);
                Tensor::from_fn(&[n, i, o], |idx| {
                    let (e, ii, oo) = (idx / (i * o), idx / o % i, idx % o);
                    let mut acc = 0.0;
                    for a in 0..r1 {
                        for b in 0..r2 {
                            for c in 0..r3 {
                                acc +=
                                    u1.get(&[a, e, b]) * u2.get(&[b, ii, c]) * u3.get(&[c, oo, a]);
                            }
                        }
                    }
                    acc
                })
            }
        }
    }
}
