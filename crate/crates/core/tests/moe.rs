#![allow(clippy::needless_range_loop)]

use moedep::moe::{
    param_count, Core, Factorization, Gate, HeadConfig, HeadKind, Mode, MuMoe, MuMoeConfig,
    SparseMoe, SparseMoeConfig, EXPERT_HIDDEN_DIM, EXPERT_OUT_DIM, NUM_CLASSES,
};
use moedep::tensor::ops::{entmax15_row, std_normal_cdf};
use moedep::tensor::{GradCheckConfig, ParamId, ParamStore, RngStream, Tape};
use moedep::train::check_head;
use moedep::Tensor;
use proptest::prelude::*;

fn random(shape: &[usize], rng: &mut RngStream) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

fn set(store: &mut ParamStore, id: ParamId, value: Tensor) {
    store.set_value(id, value).unwrap();
}

fn row_matmul(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (i, o) = (w.shape()[0], w.shape()[1]);
    (0..o)
        .map(|c| (0..i).map(|r| x[r] * w.get(&[r, c])).sum())
        .collect()
}

fn affine(x: &[f64], store: &ParamStore, l: &moedep::layers::Linear) -> Vec<f64> {
    let mut y = row_matmul(x, store.value(l.weight));
    if let Some(b) = l.bias {
        for (v, bv) in y.iter_mut().zip(store.value(b).data()) {
            *v += bv;
        }
    }
    y
}

fn sparse(input_dim: usize, n: usize, k: usize, seed: u64) -> (ParamStore, SparseMoe) {
    let mut store = ParamStore::new();
    let cfg = SparseMoeConfig {
        input_dim,
        n_experts: n,
        k,
    };
    let moe = SparseMoe::new(&mut store, "moe", cfg, &mut RngStream::new(seed, 0)).unwrap();
    (store, moe)
}

/// Eval-mode forward computed with explicit loops: softmax over the k largest
/// clean logits, weighted sum of expert MLPs, output layer.
fn sparse_oracle(store: &ParamStore, moe: &SparseMoe, x: &Tensor) -> Tensor {
    let (b, d) = (x.shape()[0], x.shape()[1]);
    let n = moe.cfg.n_experts;
    let mut out = Vec::new();
    for r in 0..b {
        let xr = &x.data()[r * d..(r + 1) * d];
        let clean = row_matmul(xr, store.value(moe.w_gate));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &c| clean[c].partial_cmp(&clean[a]).unwrap());
        let kept = &order[..moe.cfg.k];
        let m = kept
            .iter()
            .map(|&e| clean[e])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = kept.iter().map(|&e| (clean[e] - m).exp()).sum();
        let mut mixed = vec![0.0; EXPERT_OUT_DIM];
        for &e in kept {
            let g = (clean[e] - m).exp() / z;
            let h: Vec<f64> = affine(xr, store, &moe.experts[e].hidden)
                .into_iter()
                .map(|v| v.max(0.0))
                .collect();
            for (acc, v) in mixed.iter_mut().zip(affine(&h, store, &moe.experts[e].out)) {
                *acc += g * v;
            }
        }
        out.extend(affine(&mixed, store, &moe.out_layer));
    }
    Tensor::new(vec![b, NUM_CLASSES], out).unwrap()
}

fn sparse_forward(store: &ParamStore, moe: &SparseMoe, x: &Tensor) -> Tensor {
    let mut tape = Tape::new(store);
    let xv = tape.constant(x.clone());
    let out = moe
        .forward(&mut tape, xv, Mode::Eval, &mut RngStream::new(0, 0))
        .unwrap();
    tape.value(out.logits).clone()
}

/// Gate values for one row whose clean logits are `logits`.
fn eval_gates(logits: &[f64], k: usize) -> Vec<f64> {
    let n = logits.len();
    let (mut store, moe) = sparse(n, n, k, 3);
    set(&mut store, moe.w_gate, Tensor::eye(n));
    let mut tape = Tape::new(&store);
    let x = tape.constant(Tensor::matrix(1, n, logits.to_vec()).unwrap());
    let gate = moe
        .gate(&mut tape, x, Mode::Eval, &mut RngStream::new(0, 0))
        .unwrap();
    tape.value(gate.gates).data().to_vec()
}

#[test]
fn gate_top3_of_four() {
    let g = eval_gates(&[1.0, 2.0, 3.0, 4.0], 3);
    let expected = [0.0, 0.0900, 0.2447, 0.6652];
    assert_eq!(g[0], 0.0);
    for (a, b) in g.iter().zip(expected) {
        assert!((a - b).abs() < 1e-4, "{g:?}");
    }
}

#[test]
fn gate_with_all_experts_is_softmax() {
    let logits = [0.3, -1.2, 2.0, 0.7, 0.0];
    let g = eval_gates(&logits, 5);
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    for (a, l) in g.iter().zip(logits) {
        assert!((a - l.exp() / z).abs() < 1e-12);
    }
}

#[test]
fn train_gate_keeps_exactly_k() {
    let (store, moe) = sparse(6, 5, 2, 4);
    let mut rng = RngStream::new(5, 0);
    let x = random(&[16, 6], &mut rng);
    let mut tape = Tape::new(&store);
    let xv = tape.constant(x);
    let gate = moe.gate(&mut tape, xv, Mode::Train, &mut rng).unwrap();
    for row in tape.value(gate.gates).data().chunks(5) {
        assert_eq!(row.iter().filter(|&&v| v > 0.0).count(), 2);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn train_noise_depends_on_stream() {
    let (store, moe) = sparse(6, 4, 2, 4);
    let x = random(&[3, 6], &mut RngStream::new(1, 0));
    let logits = |seed: u64| {
        let mut tape = Tape::new(&store);
        let xv = tape.constant(x.clone());
        let g = moe
            .gate(&mut tape, xv, Mode::Train, &mut RngStream::new(seed, 0))
            .unwrap();
        tape.value(g.logits).clone()
    };
    assert_eq!(logits(9), logits(9));
    assert!(logits(9).max_abs_diff(&logits(10)) > 0.0);
}

#[test]
fn single_expert_is_mlp_then_output() {
    let (store, moe) = sparse(7, 1, 1, 8);
    let x = random(&[3, 7], &mut RngStream::new(2, 0));
    let got = sparse_forward(&store, &moe, &x);
    let mut expected = Vec::new();
    for r in x.data().chunks(7) {
        let e = &moe.experts[0];
        let h: Vec<f64> = affine(r, &store, &e.hidden)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        expected.extend(affine(&affine(&h, &store, &e.out), &store, &moe.out_layer));
    }
    assert!(got.max_abs_diff(&Tensor::new(vec![3, 2], expected).unwrap()) < 1e-10);
}

#[test]
fn identical_experts_act_as_one() {
    let (mut store, moe) = sparse(5, 4, 2, 11);
    let first = &moe.experts[0];
    let copies: Vec<(ParamId, Tensor)> = moe.experts[1..]
        .iter()
        .flat_map(|e| {
            [
                (e.hidden.weight, store.value(first.hidden.weight).clone()),
                (
                    e.hidden.bias.unwrap(),
                    store.value(first.hidden.bias.unwrap()).clone(),
                ),
                (e.out.weight, store.value(first.out.weight).clone()),
                (
                    e.out.bias.unwrap(),
                    store.value(first.out.bias.unwrap()).clone(),
                ),
            ]
        })
        .collect();
    for (id, v) in copies {
        set(&mut store, id, v);
    }
    let x = random(&[4, 5], &mut RngStream::new(3, 0));
    let got = sparse_forward(&store, &moe, &x);
    let mut expected = Vec::new();
    for r in x.data().chunks(5) {
        let h: Vec<f64> = affine(r, &store, &first.hidden)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        expected.extend(affine(
            &affine(&h, &store, &first.out),
            &store,
            &moe.out_layer,
        ));
    }
    assert!(got.max_abs_diff(&Tensor::new(vec![4, 2], expected).unwrap()) < 1e-10);
}

#[test]
fn sparse_forward_matches_loop_oracle() {
    for (n, k, seed) in [(4, 4, 1), (4, 2, 2), (6, 3, 3), (3, 1, 4)] {
        let (store, moe) = sparse(9, n, k, seed);
        let x = random(&[5, 9], &mut RngStream::new(seed + 100, 0));
        let got = sparse_forward(&store, &moe, &x);
        let want = sparse_oracle(&store, &moe, &x);
        assert!(got.max_abs_diff(&want) < 1e-10, "n={n} k={k}");
    }
}

#[test]
fn sparse_rejects_bad_k() {
    let mut store = ParamStore::new();
    let mut rng = RngStream::new(1, 0);
    for (n, k) in [(4, 5), (4, 0), (0, 0)] {
        let cfg = SparseMoeConfig {
            input_dim: 3,
            n_experts: n,
            k,
        };
        assert!(SparseMoe::new(&mut store, "m", cfg, &mut rng).is_err());
    }
}

/// A gate built from constant rows, for exercising the auxiliary losses.
fn const_gate(tape: &mut Tape<'_>, clean: Tensor, noise_std: Tensor, gates: Tensor) -> Gate {
    let clean = tape.constant(clean);
    Gate {
        clean,
        noise_std: tape.constant(noise_std),
        logits: clean,
        gates: tape.constant(gates),
    }
}

fn one_hot_rows(cols: &[usize], n: usize) -> Tensor {
    Tensor::from_fn(&[cols.len(), n], |i| {
        if i % n == cols[i / n] {
            1.0
        } else {
            0.0
        }
    })
}

#[test]
fn importance_loss_examples() {
    let (store, moe) = sparse(4, 4, 1, 1);
    for (cols, expected) in [(vec![0, 1, 2, 3], 0.0), (vec![0, 1, 2, 3, 3, 3], 1.0 / 3.0)] {
        let b = cols.len();
        let mut tape = Tape::new(&store);
        let g = const_gate(
            &mut tape,
            random(&[b, 4], &mut RngStream::new(1, 0)),
            Tensor::full(&[b, 4], 1.0),
            one_hot_rows(&cols, 4),
        );
        let aux = moe.aux_losses(&mut tape, &g).unwrap();
        assert!((tape.item(aux.importance) - expected).abs() < 1e-10);
    }
}

#[test]
fn cv_squared_uses_population_variance() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let v = tape.constant(Tensor::vector(vec![1.0, 1.0, 1.0, 3.0]));
    let c = tape.cv_squared(v);
    // mean 1.5, variance (3·0.25 + 2.25) / 4 = 0.75
    assert!((tape.item(c) - 0.75 / 2.25).abs() < 1e-10);
}

#[test]
fn load_probability_is_half_at_threshold() {
    let (store, moe) = sparse(4, 4, 1, 1);
    let mut tape = Tape::new(&store);
    // Expert 0 ties the best of the others.
    let g = const_gate(
        &mut tape,
        Tensor::matrix(1, 4, vec![3.0, 3.0, 1.0, 0.0]).unwrap(),
        Tensor::full(&[1, 4], 0.7),
        one_hot_rows(&[0], 4),
    );
    let p = moe.load_probabilities(&mut tape, &g).unwrap();
    let p = tape.value(p).data().to_vec();
    assert!((p[0] - 0.5).abs() < 1e-12);
    assert!((p[2] - std_normal_cdf(-2.0 / 0.7)).abs() < 1e-12);
}

#[test]
fn load_probabilities_match_hand_formula() {
    let (n, k) = (5, 2);
    let (store, moe) = sparse(3, n, k, 1);
    let mut rng = RngStream::new(6, 0);
    let clean = random(&[3, n], &mut rng);
    let std = Tensor::from_fn(&[3, n], |_| 0.2 + rng.uniform());
    let mut tape = Tape::new(&store);
    let g = const_gate(
        &mut tape,
        clean.clone(),
        std.clone(),
        Tensor::zeros(&[3, n]),
    );
    let p = moe.load_probabilities(&mut tape, &g).unwrap();
    let p = tape.value(p).clone();
    for b in 0..3 {
        for i in 0..n {
            let mut others: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| clean.get(&[b, j]))
                .collect();
            others.sort_by(|a, c| c.partial_cmp(a).unwrap());
            let want = std_normal_cdf((clean.get(&[b, i]) - others[k - 1]) / std.get(&[b, i]));
            assert!((p.get(&[b, i]) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn load_probability_is_one_without_sparsity() {
    let (store, moe) = sparse(3, 3, 3, 1);
    let mut tape = Tape::new(&store);
    let g = const_gate(
        &mut tape,
        random(&[2, 3], &mut RngStream::new(1, 0)),
        Tensor::full(&[2, 3], 1.0),
        Tensor::full(&[2, 3], 1.0 / 3.0),
    );
    let p = moe.load_probabilities(&mut tape, &g).unwrap();
    assert!(tape.value(p).data().iter().all(|&v| v == 1.0));
    let aux = moe.aux_losses(&mut tape, &g).unwrap();
    assert_eq!(tape.item(aux.load), 0.0);
}

fn permute_cols(t: &Tensor, perm: &[usize]) -> Tensor {
    let n = perm.len();
    Tensor::from_fn(t.shape(), |i| t.data()[i / n * n + perm[i % n]])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aux_losses_ignore_expert_order(seed in 0u64..10_000, n in 2usize..7, b in 1usize..6) {
        let k = 1 + (seed as usize) % (n - 1);
        let (store, moe) = sparse(2, n, k, 1);
        let mut rng = RngStream::new(seed, 0);
        let clean = random(&[b, n], &mut rng);
        let std = Tensor::from_fn(&[b, n], |_| 0.1 + rng.uniform());
        let gates = Tensor::from_fn(&[b, n], |_| rng.uniform());
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let losses = |c: &Tensor, s: &Tensor, g: &Tensor| {
            let mut tape = Tape::new(&store);
            let gate = const_gate(&mut tape, c.clone(), s.clone(), g.clone());
            let aux = moe.aux_losses(&mut tape, &gate).unwrap();
            (tape.item(aux.importance), tape.item(aux.load))
        };
        let (i0, l0) = losses(&clean, &std, &gates);
        let (i1, l1) = losses(&permute_cols(&clean, &perm), &permute_cols(&std, &perm), &permute_cols(&gates, &perm));
        prop_assert!((i0 - i1).abs() < 1e-10 && (l0 - l1).abs() < 1e-10);
    }

    #[test]
    fn load_probabilities_in_unit_interval(seed in 0u64..10_000, n in 2usize..8) {
        let k = 1 + (seed as usize) % (n - 1);
        let (store, moe) = sparse(4, n, k, seed);
        let mut rng = RngStream::new(seed, 1);
        let x = random(&[3, 4], &mut rng).scale(3.0);
        let mut tape = Tape::new(&store);
        let xv = tape.constant(x);
        let gate = moe.gate(&mut tape, xv, Mode::Train, &mut rng).unwrap();
        let p = moe.load_probabilities(&mut tape, &gate).unwrap();
        prop_assert!(tape.value(p).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

fn mumoe(
    n: usize,
    i: usize,
    o: usize,
    factorization: Factorization,
    seed: u64,
) -> (ParamStore, MuMoe) {
    let mut store = ParamStore::new();
    let cfg = MuMoeConfig {
        n_experts: n,
        input_dim: i,
        output_dim: o,
        factorization,
    };
    let m = MuMoe::new(&mut store, "mu", cfg, &mut RngStream::new(seed, 0)).unwrap();
    (store, m)
}

fn mumoe_hidden(store: &ParamStore, m: &MuMoe, z: &Tensor) -> Tensor {
    let mut tape = Tape::new(store);
    let zv = tape.constant(z.clone());
    let y = m.hidden(&mut tape, zv).unwrap();
    tape.value(y).clone()
}

/// Expert tensor `[N, I, O]` rebuilt from the stored factors with explicit sums.
fn expert_tensor(store: &ParamStore, m: &MuMoe) -> Tensor {
    let (n, i, o) = (m.cfg.n_experts, m.cfg.input_dim, m.cfg.output_dim);
    let mut w = Tensor::zeros(&[n, i, o]);
    match m.core {
        Core::Dense { w: id } => return store.value(id).clone(),
        Core::Cp { u1, u2, u3 } => {
            let (a, b, c) = (store.value(u1), store.value(u2), store.value(u3));
            for e in 0..n {
                for ii in 0..i {
                    for oo in 0..o {
                        let mut s = 0.0;
                        for r in 0..a.shape()[0] {
                            s += a.get(&[r, e]) * b.get(&[r, ii]) * c.get(&[r, oo]);
                        }
                        w.set(&[e, ii, oo], s);
                    }
                }
            }
        }
        Core::TensorRing { u1, u2, u3 } => {
            let (a, b, c) = (store.value(u1), store.value(u2), store.value(u3));
            let (r1, r2, r3) = (a.shape()[0], a.shape()[2], b.shape()[2]);
            for e in 0..n {
                for ii in 0..i {
                    for oo in 0..o {
                        let mut s = 0.0;
                        for p in 0..r1 {
                            for q in 0..r2 {
                                for r in 0..r3 {
                                    s +=
                                        a.get(&[p, e, q]) * b.get(&[q, ii, r]) * c.get(&[r, oo, p]);
                                }
                            }
                        }
                        w.set(&[e, ii, oo], s);
                    }
                }
            }
        }
    }
    w
}

/// `y[b, o] = Σ_n Σ_i W[n, i, o] · a[b, n] · z[b, i]` with `a = entmax15(z·G)`.
fn mumoe_oracle(store: &ParamStore, m: &MuMoe, z: &Tensor) -> Tensor {
    let w = expert_tensor(store, m);
    let (n, i, o) = (m.cfg.n_experts, m.cfg.input_dim, m.cfg.output_dim);
    let b = z.shape()[0];
    let mut y = Tensor::zeros(&[b, o]);
    for r in 0..b {
        let zr = &z.data()[r * i..(r + 1) * i];
        let a = entmax15_row(&row_matmul(zr, store.value(m.gate)));
        for oo in 0..o {
            let mut s = 0.0;
            for e in 0..n {
                for ii in 0..i {
                    s += w.get(&[e, ii, oo]) * a[e] * zr[ii];
                }
            }
            y.set(&[r, oo], s);
        }
    }
    y
}

fn factorizations() -> [Factorization; 4] {
    [
        Factorization::Dense,
        Factorization::Cp { rank: 3 },
        Factorization::TensorRing { ranks: [2, 3, 2] },
        Factorization::TensorRing { ranks: [1, 1, 1] },
    ]
}

#[test]
fn mumoe_matches_loop_oracle() {
    for (s, f) in factorizations().into_iter().enumerate() {
        let (store, m) = mumoe(4, 7, 5, f, s as u64);
        let z = random(&[3, 7], &mut RngStream::new(50 + s as u64, 0)).scale(2.0);
        let got = mumoe_hidden(&store, &m, &z);
        assert!(
            got.max_abs_diff(&mumoe_oracle(&store, &m, &z)) < 1e-10,
            "{f:?}"
        );
        assert!(
            m.materialize(&store)
                .max_abs_diff(&expert_tensor(&store, &m))
                < 1e-12
        );
    }
}

#[test]
fn mumoe_single_expert_is_linear_map() {
    for f in factorizations() {
        let (store, m) = mumoe(1, 6, 4, f, 2);
        let z = random(&[2, 6], &mut RngStream::new(3, 0));
        let w = expert_tensor(&store, &m).reshape(&[6, 4]).unwrap();
        let want: Vec<f64> = z.data().chunks(6).flat_map(|r| row_matmul(r, &w)).collect();
        let got = mumoe_hidden(&store, &m, &z);
        assert!(got.max_abs_diff(&Tensor::new(vec![2, 4], want).unwrap()) < 1e-12);
    }
}

#[test]
fn mumoe_one_hot_gate_selects_expert() {
    let (n, i, o) = (3, 5, 4);
    let z = random(&[1, i], &mut RngStream::new(4, 0));
    let norm2: f64 = z.data().iter().map(|v| v * v).sum();
    for j in 0..n {
        let (mut store, m) = mumoe(n, i, o, Factorization::Dense, 5);
        // z·G puts logit 2.5 on expert j and 0 elsewhere.
        let g = Tensor::from_fn(&[i, n], |idx| {
            if idx % n == j {
                2.5 * z.data()[idx / n] / norm2
            } else {
                0.0
            }
        });
        set(&mut store, m.gate, g);
        let w = expert_tensor(&store, &m);
        let wj = Tensor::from_fn(&[i, o], |idx| w.data()[j * i * o + idx]);
        let got = mumoe_hidden(&store, &m, &z);
        let want = Tensor::new(vec![1, o], row_matmul(z.data(), &wj)).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
    }
}

#[test]
fn mumoe_zero_input_gives_zero() {
    for f in factorizations() {
        let (store, m) = mumoe(3, 6, 4, f, 6);
        let y = mumoe_hidden(&store, &m, &Tensor::zeros(&[2, 6]));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn rank_one_ring_is_outer_product() {
    let (store, m) = mumoe(3, 4, 5, Factorization::TensorRing { ranks: [1, 1, 1] }, 7);
    let Core::TensorRing { u1, u2, u3 } = m.core else {
        unreachable!()
    };
    let (a, b, c) = (store.value(u1), store.value(u2), store.value(u3));
    let w = m.materialize(&store);
    for e in 0..3 {
        for i in 0..4 {
            for o in 0..5 {
                let want = a.data()[e] * b.data()[i] * c.data()[o];
                assert!((w.get(&[e, i, o]) - want).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn two_experts_interpolate() {
    let (store, m) = mumoe(2, 5, 6, Factorization::Cp { rank: 2 }, 8);
    let w = expert_tensor(&store, &m);
    let mut rng = RngStream::new(9, 0);
    for _ in 0..20 {
        let z = random(&[1, 5], &mut rng);
        let y = mumoe_hidden(&store, &m, &z);
        let ends: Vec<Vec<f64>> = (0..2)
            .map(|e| {
                row_matmul(
                    z.data(),
                    &Tensor::from_fn(&[5, 6], |idx| w.data()[e * 30 + idx]),
                )
            })
            .collect();
        // y = t·y0 + (1 − t)·y1 for some t in [0, 1].
        let d: Vec<f64> = ends[0].iter().zip(&ends[1]).map(|(a, b)| a - b).collect();
        let r: Vec<f64> = y.data().iter().zip(&ends[1]).map(|(a, b)| a - b).collect();
        let dd: f64 = d.iter().map(|v| v * v).sum();
        let t = d.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / dd;
        assert!((-1e-9..=1.0 + 1e-9).contains(&t));
        let resid = d
            .iter()
            .zip(&r)
            .map(|(a, b)| (b - t * a).abs())
            .fold(0.0, f64::max);
        assert!(resid < 1e-10);
    }
}

#[test]
fn mumoe_rejects_zero_rank() {
    let mut store = ParamStore::new();
    let mut rng = RngStream::new(1, 0);
    for f in [
        Factorization::Cp { rank: 0 },
        Factorization::TensorRing { ranks: [2, 0, 2] },
    ] {
        let cfg = MuMoeConfig {
            n_experts: 2,
            input_dim: 3,
            output_dim: 2,
            factorization: f,
        };
        assert!(MuMoe::new(&mut store, "m", cfg, &mut rng).is_err());
    }
}

#[test]
fn head_parameter_counts() {
    let cp = param_count(&HeadConfig::new(HeadKind::CpMumoe));
    assert_eq!(cp.core, 4 * (3 + 768 + 128));
    assert_eq!(cp.core, 3596);
    let tr = param_count(&HeadConfig::new(HeadKind::TrMumoe));
    assert_eq!(tr.core, 4 * 3 * 4 + 4 * 768 * 4 + 4 * 128 * 4);
    assert_eq!(tr.core, 14384);
    assert_eq!(
        param_count(&HeadConfig::new(HeadKind::DenseMumoe)).core,
        3 * 768 * 128
    );
    let dense128 = param_count(&HeadConfig::new(HeadKind::Dense128)).total();
    let mut sparse4 = HeadConfig::new(HeadKind::SparseMoe);
    sparse4.n_experts = 4;
    assert!(dense128 < param_count(&sparse4).total());
}

#[test]
fn parameter_count_matches_built_head() {
    for kind in HeadKind::ALL {
        let cfg = HeadConfig::new(kind);
        let mut store = ParamStore::new();
        moedep::moe::Head::new(&mut store, "h", &cfg, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(store.num_scalars(), param_count(&cfg).total(), "{kind}");
    }
    // The expert MLP widths are fixed.
    let s = param_count(&HeadConfig::new(HeadKind::SparseMoe));
    assert_eq!(
        s.core,
        4 * (768 * EXPERT_HIDDEN_DIM + EXPERT_HIDDEN_DIM + EXPERT_HIDDEN_DIM * 128 + 128)
    );
}

#[test]
fn head_gradients_match_finite_differences() {
    let cfg = GradCheckConfig {
        coords_per_param: 20,
        ..Default::default()
    };
    for kind in HeadKind::ALL {
        let report = check_head(&HeadConfig::new(kind), 4, 0.1, 21, &cfg).unwrap();
        assert!(report.passed(), "{kind}: {report}");
        assert!(report.max_rel_err() < 1e-4);
    }
}
