//! Fusion of the reading and interview embeddings into one vector.
//!
//! [`BlockFusion`] projects both inputs, splits the projections into `K`
//! chunks and applies an independent bilinear core to each chunk pair:
//! `c_k = core_k ×₁ x̃_k ×₂ ỹ_k`. The chunk outputs are concatenated,
//! optionally passed through signed square root and L2 normalization, and
//! projected to the output width. [`ConcatFusion`] is the plain
//! concatenate-then-linear alternative.

use crate::error::{Error, Result};
use crate::layers::{glorot_uniform, Linear};
use crate::tensor::{ParamId, ParamStore, RngStream, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct BlockFusionConfig {
    pub input_dim: usize,
    pub projected_dim: usize,
    pub num_chunks: usize,
    pub chunk_out_dim: usize,
    pub output_dim: usize,
    pub normalize: bool,
}

impl Default for BlockFusionConfig {
    fn default() -> Self {
        Self {
            input_dim: 768,
            projected_dim: 256,
            num_chunks: 8,
            chunk_out_dim: 96,
            output_dim: 768,
            normalize: true,
        }
    }
}

impl BlockFusionConfig {
    pub fn chunk_in_dim(&self) -> usize {
        self.projected_dim / self.num_chunks
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_chunks == 0 || !self.projected_dim.is_multiple_of(self.num_chunks) {
            return Err(Error::Config(format!(
                "projected_dim {} is not divisible by {} chunks",
                self.projected_dim, self.num_chunks
            )));
        }
        if [
            self.input_dim,
            self.projected_dim,
            self.chunk_out_dim,
            self.output_dim,
        ]
        .contains(&0)
        {
            return Err(Error::Config("fusion dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BlockFusion {
    pub cfg: BlockFusionConfig,
    pub proj_x: Linear,
    pub proj_y: Linear,
    pub cores: Vec<ParamId>,
    pub proj_out: Linear,
}

impl BlockFusion {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: BlockFusionConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        cfg.validate()?;
        let proj_x = Linear::new(
            store,
            &format!("{prefix}.proj_x"),
            cfg.input_dim,
            cfg.projected_dim,
            true,
            rng,
        );
        let proj_y = Linear::new(
            store,
            &format!("{prefix}.proj_y"),
            cfg.input_dim,
            cfg.projected_dim,
            true,
            rng,
        );
        let c = cfg.chunk_in_dim();
        let cores = (0..cfg.num_chunks)
            .map(|k| {
                store.add(
                    format!("{prefix}.core{k}"),
                    glorot_uniform(&[c, c, cfg.chunk_out_dim], c * c, cfg.chunk_out_dim, rng),
                )
            })
            .collect();
        let concat_dim = cfg.num_chunks * cfg.chunk_out_dim;
        let proj_out = Linear::new(
            store,
            &format!("{prefix}.proj_out"),
            concat_dim,
            cfg.output_dim,
            true,
            rng,
        );
        Ok(Self {
            cfg,
            proj_x,
            proj_y,
            cores,
            proj_out,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.proj_x.params();
        p.extend(self.proj_y.params());
        p.extend(&self.cores);
        p.extend(self.proj_out.params());
        p
    }

    /// Concatenated chunk outputs `[B, K·chunk_out]` before normalization.
    pub fn bilinear(&self, tape: &mut Tape<'_>, x: Var, y: Var) -> Result<Var> {
        check_pair(tape, x, y, self.cfg.input_dim)?;
        let xp = self.proj_x.forward(tape, x)?;
        let yp = self.proj_y.forward(tape, y)?;
        let batch = tape.shape(x)[0];
        let c = self.cfg.chunk_in_dim();
        let mut chunks = Vec::with_capacity(self.cores.len());
        for (k, &core) in self.cores.iter().enumerate() {
            let xk = tape.slice_last(xp, k * c, c)?;
            let yk = tape.slice_last(yp, k * c, c)?;
            let core = tape.param(core);
            // [B, c] × [c, c, out] -> [B, c, out], indexed (b, j, o) by the y coordinate j.
            let t = tape.contract(xk, core, &[(1, 0)])?;
            let yk = tape.reshape(yk, &[batch, 1, c])?;
            let ck = tape.bmm(yk, t)?;
            chunks.push(tape.reshape(ck, &[batch, self.cfg.chunk_out_dim])?);
        }
        tape.concat_last(&chunks)
    }

    /// The vector handed to the output projection.
    pub fn pre_projection(&self, tape: &mut Tape<'_>, x: Var, y: Var) -> Result<Var> {
        let z = self.bilinear(tape, x, y)?;
        Ok(if self.cfg.normalize {
            let s = tape.signed_sqrt(z);
            tape.l2_normalize(s)
        } else {
            z
        })
    }

    /// Fuses `[B, input_dim]` pairs into `[B, output_dim]`.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, y: Var) -> Result<Var> {
        let z = self.pre_projection(tape, x, y)?;
        self.proj_out.forward(tape, z)
    }
}

/// Concatenation followed by one linear layer back to `output_dim`.
#[derive(Clone, Debug)]
pub struct ConcatFusion {
    pub proj: Linear,
    pub input_dim: usize,
}

impl ConcatFusion {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut RngStream,
    ) -> Self {
        Self {
            proj: Linear::new(
                store,
                &format!("{prefix}.proj"),
                2 * input_dim,
                output_dim,
                true,
                rng,
            ),
            input_dim,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.proj.params()
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, y: Var) -> Result<Var> {
        check_pair(tape, x, y, self.input_dim)?;
        let cat = tape.concat_last(&[x, y])?;
        self.proj.forward(tape, cat)
    }
}

fn check_pair(tape: &Tape<'_>, x: Var, y: Var, dim: usize) -> Result<()> {
    let (sx, sy) = (tape.shape(x), tape.shape(y));
    if sx.len() != 2 || sx != sy || sx[1] != dim {
        return Err(Error::shape(
            "fusion",
            format!("inputs {sx:?} and {sy:?}, expected [B, {dim}]"),
        ));
    }
    Ok(())
}
