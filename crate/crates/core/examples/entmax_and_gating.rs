//! Compares softmax with 1.5-entmax and walks through noisy top-k gating:
//! kept experts, gate weights, load probabilities and the balancing losses.

use moedep::moe::{Mode, SparseMoe, SparseMoeConfig};
use moedep::tensor::ops::{entmax15_row, softmax_row};
use moedep::tensor::{ParamStore, RngStream, Tape};
use moedep::Tensor;

fn show(label: &str, v: &[f64]) {
    let cells: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    println!("{label:>10}: [{}]", cells.join(", "));
}

fn main() -> moedep::Result<()> {
    for z in [
        vec![0.5, 1.0, 3.0, 3.2],
        vec![-1.0, 0.0, 0.1, 2.0],
        vec![1.0; 4],
    ] {
        show("logits", &z);
        show("softmax", &softmax_row(&z));
        show("entmax1.5", &entmax15_row(&z));
        println!();
    }
    show("masked", &softmax_row(&[f64::NEG_INFINITY, 2.0, 3.0, 4.0]));

    let mut store = ParamStore::new();
    let mut rng = RngStream::new(11, 0);
    let cfg = SparseMoeConfig {
        input_dim: 16,
        n_experts: 4,
        k: 2,
    };
    let moe = SparseMoe::new(&mut store, "moe", cfg, &mut rng)?;
    let x = Tensor::from_fn(&[6, 16], |_| rng.normal());

    let mut tape = Tape::new(&store);
    let xv = tape.constant(x);
    for mode in [Mode::Eval, Mode::Train] {
        let gate = moe.gate(&mut tape, xv, mode, &mut rng)?;
        let probs = moe.load_probabilities(&mut tape, &gate)?;
        let aux = moe.aux_losses(&mut tape, &gate)?;
        println!("\n{mode:?} mode, k = 2 of 4");
        let gates = tape.value(gate.gates).clone();
        let probs = tape.value(probs).clone();
        for row in 0..6 {
            let g = &gates.data()[row * 4..row * 4 + 4];
            let p = &probs.data()[row * 4..row * 4 + 4];
            println!("  x{row}: gates {g:.3?}  P(kept) {p:.3?}");
        }
        println!(
            "  importance loss {:.4}, load loss {:.4}",
            tape.item(aux.importance),
            tape.item(aux.load)
        );
    }
    Ok(())
}
