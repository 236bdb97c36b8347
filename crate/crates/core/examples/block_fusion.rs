//! Fuses two embeddings with the block-term bilinear layer and with plain
//! concatenation, and shows that the bilinear output depends on the
//! interaction of the two inputs.

use moedep::fusion::{BlockFusion, BlockFusionConfig, ConcatFusion};
use moedep::tensor::{ParamStore, RngStream, Tape};
use moedep::Tensor;

fn main() -> moedep::Result<()> {
    let mut rng = RngStream::new(5, 0);
    let cfg = BlockFusionConfig::default();
    let mut store = ParamStore::new();
    let block = BlockFusion::new(&mut store, "block", cfg.clone(), &mut rng)?;
    let block_params = store.num_scalars();
    let concat = ConcatFusion::new(
        &mut store,
        "concat",
        cfg.input_dim,
        cfg.output_dim,
        &mut rng,
    );
    println!(
        "block fusion: {} chunks of {}×{}×{} cores, {} parameters",
        cfg.num_chunks,
        cfg.chunk_in_dim(),
        cfg.chunk_in_dim(),
        cfg.chunk_out_dim,
        block_params
    );
    println!(
        "concat fusion: {} parameters",
        store.num_scalars() - block_params
    );

    let d = cfg.input_dim;
    let x = Tensor::from_fn(&[2, d], |_| rng.normal());
    let y = Tensor::from_fn(&[2, d], |_| rng.normal());
    let y_scaled = y.map(|v| 2.0 * v);

    let mut tape = Tape::new(&store);
    let (xv, yv, ysv) = (tape.constant(x), tape.constant(y), tape.constant(y_scaled));
    let b = block.bilinear(&mut tape, xv, yv)?;
    let b2 = block.bilinear(&mut tape, xv, ysv)?;
    let fused = block.forward(&mut tape, xv, yv)?;
    let cat = concat.forward(&mut tape, xv, yv)?;

    println!(
        "fused shape {:?}, concat shape {:?}",
        tape.shape(fused),
        tape.shape(cat)
    );
    let norm = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    println!(
        "bilinear part: |b(x, y)| = {:.3}, |b(x, 2y)| = {:.3}",
        norm(tape.value(b)),
        norm(tape.value(b2))
    );
    let out = tape.value(fused);
    let row_norms: Vec<f64> = (0..2)
        .map(|r| norm(&Tensor::vector(out.data()[r * d..(r + 1) * d].to_vec())))
        .collect();
    println!("fused row norms {row_norms:.3?}");
    Ok(())
}
