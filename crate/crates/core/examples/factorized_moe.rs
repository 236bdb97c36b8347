//! Builds the multilinear expert layer in dense, CP and tensor-ring form,
//! prints the parameter savings and checks each factorized forward pass
//! against a dense layer holding the materialized expert tensor.

use moedep::moe::{param_count, Core, Factorization, HeadConfig, HeadKind, MuMoe, MuMoeConfig};
use moedep::tensor::{ParamStore, RngStream, Tape};
use moedep::Tensor;

fn main() -> moedep::Result<()> {
    println!(
        "{:<12} {:>10} {:>8} {:>8}",
        "head", "core", "gate", "output"
    );
    for kind in [
        HeadKind::DenseMumoe,
        HeadKind::CpMumoe,
        HeadKind::TrMumoe,
        HeadKind::SparseMoe,
        HeadKind::Dense128,
    ] {
        let c = param_count(&HeadConfig::new(kind));
        println!(
            "{:<12} {:>10} {:>8} {:>8}",
            kind.as_str(),
            c.core,
            c.gate,
            c.output
        );
    }

    let mut rng = RngStream::new(3, 0);
    let (n, i, o) = (3, 24, 10);
    let z = Tensor::from_fn(&[5, i], |_| rng.normal());
    for factorization in [
        Factorization::Cp { rank: 4 },
        Factorization::TensorRing { ranks: [2, 4, 3] },
    ] {
        let mut store = ParamStore::new();
        let cfg = MuMoeConfig {
            n_experts: n,
            input_dim: i,
            output_dim: o,
            factorization,
        };
        let layer = MuMoe::new(&mut store, "f", cfg.clone(), &mut rng)?;

        // A dense layer with the same gate and output layer and W = materialize(factors).
        let dense = MuMoe::new(
            &mut store,
            "d",
            MuMoeConfig {
                factorization: Factorization::Dense,
                ..cfg.clone()
            },
            &mut rng,
        )?;
        let w = layer.materialize(&store);
        let Core::Dense { w: dense_w } = dense.core else {
            unreachable!()
        };
        store.set_value(dense_w, w)?;
        let shared = [(layer.gate, dense.gate)].into_iter().chain(
            layer
                .out_layer
                .params()
                .into_iter()
                .zip(dense.out_layer.params()),
        );
        for (from, to) in shared {
            let v = store.value(from).clone();
            store.set_value(to, v)?;
        }

        let mut tape = Tape::new(&store);
        let zv = tape.constant(z.clone());
        let a = layer.gate_weights(&mut tape, zv)?;
        let fy = layer.forward(&mut tape, zv)?;
        let dy = dense.forward(&mut tape, zv)?;
        let diff = tape
            .value(fy)
            .data()
            .iter()
            .zip(tape.value(dy).data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let row0 = &tape.value(a).data()[..n];
        println!(
            "\n{factorization:?}: {} stored weights vs {} dense",
            cfg.core_params(),
            n * i * o
        );
        println!("  entmax gate of the first input: {row0:.3?}");
        println!("  max |factorized − dense| over the batch: {diff:.2e}");
    }
    Ok(())
}
