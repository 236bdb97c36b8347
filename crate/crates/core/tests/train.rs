use std::sync::OnceLock;

use moedep::io::{featurize_manifest, parse_manifest, synth_dataset, SyntheticSpec};
use moedep::moe::{HeadKind, Mode};
use moedep::tensor::{ParamStore, RngStream, Tape};
use moedep::train::{
    aggregate_report, cross_validate, evaluate_metrics, fit, kfold_split, predict, run_folds,
    total_loss, Adam, Dataset, FitStreams, FoldEntry, Inputs, Metrics, ModelConfig, RunReport,
};
use moedep::Tensor;
use proptest::prelude::*;

/// 40 featurized synthetic subjects, built once per test binary.
fn synthetic() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_dataset(&SyntheticSpec::default(), dir.path()).unwrap();
        let entries = parse_manifest(&manifest).unwrap();
        featurize_manifest(&entries, Inputs::Both, 1).unwrap()
    })
}

fn scalar_loss(
    logits: Vec<f64>,
    labels: &[usize],
    aux: Option<(f64, f64)>,
    alpha: f64,
) -> (f64, f64) {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let l = tape.constant(Tensor::new(vec![labels.len(), 2], logits).unwrap());
    let aux = aux.map(|(i, l)| moedep::moe::AuxLosses {
        importance: tape.constant(Tensor::scalar(i)),
        load: tape.constant(Tensor::scalar(l)),
    });
    let loss = total_loss(&mut tape, l, labels, aux, alpha).unwrap();
    (tape.item(loss.total), tape.item(loss.ce))
}

#[test]
fn uniform_logits_cost_ln2() {
    for label in [0, 1] {
        let (total, ce) = scalar_loss(vec![0.0, 0.0], &[label], None, 0.1);
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(total, ce);
    }
}

#[test]
fn confident_logits_cost_nothing() {
    let (_, ce) = scalar_loss(vec![20.0, -20.0, -20.0, 20.0], &[0, 1], None, 0.1);
    assert!(ce < 1e-8);
}

#[test]
fn aux_terms_weighted_by_alpha() {
    let (total, ce) = scalar_loss(vec![0.3, -0.2], &[1], Some((0.5, 0.25)), 0.1);
    assert!((total - ce - 0.1 * 0.75).abs() < 1e-12);
    let (total, ce) = scalar_loss(vec![0.3, -0.2], &[1], Some((0.5, 0.25)), 0.0);
    assert_eq!(total, ce);
}

/// Textbook Adam on one scalar, written out step by step.
fn adam_trace(theta0: f64, grads: &[f64], lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    let mut out = Vec::new();
    for (t, &g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        theta -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(theta);
    }
    out
}

fn adam_run(theta0: f64, grads: &[f64], lr: f64) -> (Vec<f64>, u64) {
    let mut store = ParamStore::new();
    let id = store.add("theta", Tensor::vector(vec![theta0]));
    let mut adam = Adam::new(&store, lr);
    let mut out = Vec::new();
    for &g in grads {
        store.zero_grad();
        store.get_mut(id).grad = Tensor::vector(vec![g]);
        adam.step(&mut store);
        out.push(store.value(id).data()[0]);
    }
    (out, adam.steps())
}

#[test]
fn adam_first_step_moves_by_lr() {
    for g in [3.0, -0.02, 1e3] {
        let (out, _) = adam_run(0.5, &[g], 1e-4);
        let step = 0.5 - out[0];
        assert!((step.abs() - 1e-4).abs() < 1e-9, "{step}");
        assert_eq!(step.signum(), g.signum());
    }
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let (out, t) = adam_run(1.25, &[0.0, 0.0], 1e-3);
    assert_eq!(out, vec![1.25, 1.25]);
    assert_eq!(t, 2);
}

#[test]
fn adam_matches_hand_trace() {
    let grads = [0.7, -1.3, 0.2];
    let (out, _) = adam_run(0.4, &grads, 1e-2);
    for (a, b) in out.iter().zip(adam_trace(0.4, &grads, 1e-2)) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn check_partition(labels: &[usize], folds: &[moedep::train::Fold]) {
    let mut seen = vec![0; labels.len()];
    for f in folds {
        for &i in &f.test {
            seen[i] += 1;
            assert!(f.train.binary_search(&i).is_err());
        }
        assert_eq!(f.train.len() + f.test.len(), labels.len());
    }
    assert!(seen.iter().all(|&c| c == 1));
}

#[test]
fn kfold_ten_subjects() {
    let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
    let folds = kfold_split(&labels, 5, &mut RngStream::new(3, 0)).unwrap();
    assert!(folds.iter().all(|f| f.test.len() == 2));
    check_partition(&labels, &folds);
}

#[test]
fn kfold_stratifies_unbalanced_classes() {
    let labels: Vec<usize> = (0..110).map(|i| usize::from(i >= 52)).collect();
    for seed in 0..20 {
        let folds = kfold_split(&labels, 5, &mut RngStream::new(seed, 0)).unwrap();
        check_partition(&labels, &folds);
        for f in &folds {
            let control = f.test.iter().filter(|&&i| labels[i] == 0).count();
            let depression = f.test.len() - control;
            assert!((10..=11).contains(&control), "{control}");
            assert!((11..=12).contains(&depression), "{depression}");
        }
    }
}

#[test]
fn kfold_is_seeded() {
    let labels: Vec<usize> = (0..30).map(|i| i % 3 % 2).collect();
    let split = |s| kfold_split(&labels, 5, &mut RngStream::new(s, 0)).unwrap();
    assert_eq!(split(4), split(4));
    assert_ne!(split(4), split(5));
}

#[test]
fn kfold_needs_enough_subjects() {
    assert!(kfold_split(&[0, 1, 0], 5, &mut RngStream::new(1, 0)).is_err());
}

#[test]
fn run_seeds_give_different_splits() {
    let cfg = ModelConfig::default();
    let data = synthetic();
    assert_ne!(
        run_folds(&cfg, data, 0).unwrap(),
        run_folds(&cfg, data, 1).unwrap()
    );
    assert_eq!(
        run_folds(&cfg, data, 2).unwrap(),
        run_folds(&cfg, data, 2).unwrap()
    );
}

#[test]
fn metrics_examples() {
    let m = evaluate_metrics(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap();
    for v in [m.accuracy, m.precision, m.recall, m.f1, m.specificity] {
        assert_eq!(v, 1.0);
    }
    let m = evaluate_metrics(&[1, 1, 0, 0], &[1, 0, 0, 1]).unwrap();
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (1, 1, 1, 1));
    for v in [m.accuracy, m.precision, m.recall, m.f1, m.specificity] {
        assert_eq!(v, 0.5);
    }
    let m = evaluate_metrics(&[0, 0, 0, 0], &[1, 0, 1, 0]).unwrap();
    assert_eq!((m.recall, m.specificity, m.precision), (0.0, 1.0, 0.0));
    assert!(m.undefined.precision && !m.undefined.recall);
    assert!(evaluate_metrics(&[], &[]).is_err());
    assert!(evaluate_metrics(&[1], &[1, 0]).is_err());
}

fn entry(run: usize, fold: usize, tp: usize, fp: usize, tn: usize, fn_: usize) -> FoldEntry {
    FoldEntry {
        run,
        fold,
        metrics: Metrics::from_counts(tp, fp, tn, fn_).unwrap(),
        final_loss: 0.25,
    }
}

#[test]
fn aggregate_two_entries() {
    // Accuracies 80% and 90%.
    let entries = [entry(0, 0, 4, 1, 4, 1), entry(0, 1, 5, 0, 4, 1)];
    let agg = aggregate_report(&entries, 1, 2).unwrap();
    let acc = agg.get("accuracy").unwrap();
    assert!((acc.mean - 85.0).abs() < 1e-12 && (acc.std - 5.0).abs() < 1e-12);
    assert_eq!(acc.format(), "85.00 ± 5.00");
}

#[test]
fn aggregate_identical_entries_have_zero_std() {
    let entries: Vec<FoldEntry> = (0..4).map(|f| entry(0, f, 3, 1, 2, 1)).collect();
    let agg = aggregate_report(&entries, 1, 4).unwrap();
    assert!(agg.metrics.iter().all(|(_, m)| m.std == 0.0));
}

#[test]
fn aggregate_requires_every_cell() {
    let entries = [entry(0, 0, 1, 0, 1, 0), entry(1, 1, 1, 0, 1, 0)];
    assert!(aggregate_report(&entries, 2, 2).is_err());
    let dup = [entry(0, 0, 1, 0, 1, 0), entry(0, 0, 1, 0, 1, 0)];
    assert!(aggregate_report(&dup, 1, 2).is_err());
}

proptest! {
    #[test]
    fn aggregate_ignores_entry_order(counts in prop::collection::vec((0usize..6, 0usize..6, 0usize..6, 0usize..6), 6), seed in 0u64..1000) {
        let entries: Vec<FoldEntry> = counts
            .iter()
            .enumerate()
            .map(|(i, &(a, b, c, d))| entry(i / 3, i % 3, a + 1, b, c, d))
            .collect();
        let mut shuffled = entries.clone();
        RngStream::new(seed, 0).shuffle(&mut shuffled);
        let a = aggregate_report(&entries, 2, 3).unwrap();
        let b = aggregate_report(&shuffled, 2, 3).unwrap();
        for ((_, x), (_, y)) in a.metrics.iter().zip(&b.metrics) {
            prop_assert!((x.mean - y.mean).abs() < 1e-9 && (x.std - y.std).abs() < 1e-9);
        }
    }

    #[test]
    fn accuracy_is_count_ratio(tp in 0usize..20, fp in 0usize..20, tn in 0usize..20, fn_ in 0usize..20) {
        prop_assume!(tp + fp + tn + fn_ > 0);
        let m = Metrics::from_counts(tp, fp, tn, fn_).unwrap();
        prop_assert_eq!(m.accuracy, (tp + tn) as f64 / (tp + fp + tn + fn_) as f64);
        if tp > 0 {
            prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-12);
        }
    }
}

fn sample_report(n_entries: usize) -> RunReport {
    let cfg = ModelConfig {
        runs: 2,
        folds: 2,
        ..Default::default()
    };
    let cells = [(0, 0), (0, 1), (1, 0), (1, 1)];
    RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        runs: 2,
        folds: 2,
        entries: cells[..n_entries]
            .iter()
            .enumerate()
            .map(|(i, &(r, f))| FoldEntry {
                final_loss: 0.1 / (i + 1) as f64,
                ..entry(r, f, 2 + i, 1, 3, i % 2)
            })
            .collect(),
        wall_clock_secs: 12.5,
    }
}

#[test]
fn report_text_round_trip() {
    let r = sample_report(4);
    let back = RunReport::from_text(&r.to_text()).unwrap();
    assert_eq!(back, r);
    assert!(r.to_text().contains("partial = false"));
    assert!(r.table().contains("Accuracy") || r.table().contains("accuracy"));
}

#[test]
fn incomplete_report_is_partial() {
    let r = sample_report(3);
    let text = r.to_text();
    assert!(text.contains("partial = true"));
    assert!(!r.is_complete());
    let back = RunReport::from_text(&text).unwrap();
    assert!(back.aggregate().is_err());
}

#[test]
fn same_results_ignores_wall_clock() {
    let a = sample_report(4);
    let mut b = a.clone();
    b.wall_clock_secs = 99.0;
    assert!(a.same_results(&b));
    b.entries[0].final_loss += 1e-15;
    assert!(!a.same_results(&b));
}

#[test]
fn config_toml_round_trip_and_rejects_unknown_keys() {
    let cfg = ModelConfig {
        head: HeadKind::SparseMoe,
        n_experts: Some(8),
        epochs: 3,
        ..Default::default()
    };
    assert_eq!(ModelConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert!(ModelConfig::from_toml("epochs = 2\nlearning_rate = 0.1\n").is_err());
    let partial = ModelConfig::from_toml("epochs = 2\n").unwrap();
    assert_eq!(partial.epochs, 2);
    assert_eq!(partial.lr, 1e-4);
}

#[test]
fn config_validation() {
    let bad = [
        ModelConfig {
            inputs: Inputs::ReadOnly,
            ..Default::default()
        },
        ModelConfig {
            head: HeadKind::SparseMoe,
            k: 5,
            ..Default::default()
        },
        ModelConfig {
            folds: 1,
            ..Default::default()
        },
        ModelConfig {
            lr: 0.0,
            ..Default::default()
        },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    assert!(ModelConfig::default().validate().is_ok());
}

fn quick(epochs: usize) -> ModelConfig {
    ModelConfig {
        epochs,
        runs: 1,
        ..Default::default()
    }
}

#[test]
fn training_loss_mostly_decreases() {
    let data = synthetic();
    let cfg = quick(30);
    let train: Vec<usize> = (0..data.len()).collect();
    let streams = FitStreams::for_fold(&RngStream::new(cfg.seed, 0), 0);
    let trained = fit(&cfg, data, &train, streams).unwrap();
    let losses = &trained.epoch_losses;
    assert_eq!(losses.len(), 30);
    // Epoch 0 has no predecessor, so it counts as non-increasing.
    let ok = 1 + losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(ok >= 25, "{ok}/30 non-increasing: {losses:?}");

    // Eval-mode inference repeats exactly.
    let a = predict(&trained.model, &trained.store, data, &train, 8).unwrap();
    let b = predict(&trained.model, &trained.store, data, &train, 3).unwrap();
    assert_eq!(a, b);
    let mut tape = Tape::new(&trained.store);
    let batch = data.batch(&[0, 1], cfg.inputs).unwrap();
    let (l1, _) = trained
        .model
        .forward(&mut tape, &batch, Mode::Eval, &mut RngStream::new(1, 0))
        .unwrap();
    let (l2, _) = trained
        .model
        .forward(&mut tape, &batch, Mode::Eval, &mut RngStream::new(2, 0))
        .unwrap();
    assert_eq!(tape.value(l1), tape.value(l2));
}

#[test]
fn sparse_head_logs_weighted_aux_losses() {
    let data = synthetic();
    let cfg = ModelConfig {
        head: HeadKind::SparseMoe,
        ..quick(1)
    };
    let train: Vec<usize> = (0..24).collect();
    let trained = fit(
        &cfg,
        data,
        &train,
        FitStreams::for_fold(&RngStream::new(1, 0), 0),
    )
    .unwrap();
    assert_eq!(trained.steps.len(), 3);
    for s in &trained.steps {
        let (imp, load) = s.aux.unwrap();
        assert!((s.total - s.ce - 0.1 * (imp + load)).abs() < 1e-10);
    }
}

#[test]
fn training_refuses_single_class() {
    let data = synthetic();
    let controls: Vec<usize> = (0..data.len())
        .filter(|&i| data.subjects[i].label == 0)
        .collect();
    assert!(fit(
        &quick(1),
        data,
        &controls,
        FitStreams::for_fold(&RngStream::new(1, 0), 0)
    )
    .is_err());
}

#[test]
fn cross_validation_holds_out_subjects() {
    let data = synthetic();
    let cfg = ModelConfig {
        folds: 4,
        ..quick(1)
    };
    let (report, outcomes) = cross_validate(&cfg, data, 2).unwrap();
    assert!(report.is_complete());
    let folds = run_folds(&cfg, data, 0).unwrap();
    let mut tested = vec![0; data.len()];
    for (o, f) in outcomes.iter().zip(&folds) {
        assert_eq!(o.test, f.test);
        for &t in &o.test {
            tested[t] += 1;
            assert!(!f.train.contains(&t));
        }
        let labels: Vec<usize> = o.test.iter().map(|&i| data.subjects[i].label).collect();
        assert_eq!(
            evaluate_metrics(&o.predictions, &labels).unwrap(),
            o.entry.metrics
        );
    }
    assert!(tested.iter().all(|&c| c == 1));
}

#[test]
fn permuted_labels_give_chance_accuracy() {
    let data = synthetic();
    let mut labels = data.labels();
    RngStream::new(99, 0).shuffle(&mut labels);
    let permuted = data.with_labels(&labels);
    let cfg = ModelConfig {
        runs: 2,
        ..quick(3)
    };
    let (report, _) = cross_validate(&cfg, &permuted, 1).unwrap();
    let acc = report.aggregate().unwrap().get("accuracy").unwrap().mean / 100.0;
    assert!((acc - 0.5).abs() <= 0.15, "mean accuracy {acc}");
}
