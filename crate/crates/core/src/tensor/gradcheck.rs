//! Central-difference gradient checking against the tape.

use std::fmt;

use super::{ParamId, ParamStore, RngStream, Tape, Var};
use crate::error::{Error, Result};

/// Settings for [`gradcheck`].
#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Maximum allowed relative error per coordinate.
    pub tolerance: f64,
    /// Coordinates sampled per parameter (all of them when the parameter is smaller).
    pub coords_per_param: usize,
    /// Largest step is `step_scale · (1 + |θ|)`.
    pub step_scale: f64,
    /// How many times the step may be divided by ten, either because a
    /// perturbation crossed a non-smooth point (ReLU hinge, pooling winner
    /// change, top-k swap) or because estimates at successive steps disagree.
    pub max_step_shrinks: usize,
    pub seed: u64,
    /// Restrict the check to these parameters; `None` checks all of them.
    pub params: Option<Vec<ParamId>>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            coords_per_param: 50,
            step_scale: 1e-3,
            max_step_shrinks: 4,
            seed: 0x6772_6164,
            params: None,
        }
    }
}

/// Result for one parameter.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates abandoned because every step size crossed a kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.max_rel_err < self.tolerance && p.checked > 0)
    }

    /// Converts a failing report into [`Error::GradCheck`] naming the worst parameter.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let worst = self
            .params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
            .expect("failing report has parameters");
        Err(Error::GradCheck {
            name: worst.name.clone(),
            max_rel_err: worst.max_rel_err,
            tolerance: self.tolerance,
        })
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            let status = if p.max_rel_err < self.tolerance && p.checked > 0 {
                "ok"
            } else {
                "FAIL"
            };
            writeln!(
                f,
                "{status:4} {:32} checked={:3} skipped={:2} max_rel_err={:.3e}",
                p.name, p.checked, p.skipped, p.max_rel_err
            )?;
        }
        write!(
            f,
            "max_rel_err={:.3e} tolerance={:.1e} {}",
            self.max_rel_err(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Two estimates at successive step sizes are accepted once they agree to
/// this fraction of the tolerance.
const AGREEMENT: f64 = 0.01;

/// The estimate closest to its smaller-step neighbour, or the only one.
fn most_consistent(estimates: &[Option<f64>]) -> Option<f64> {
    let pairs = estimates.windows(2).filter_map(|w| match w {
        [Some(a), Some(b)] => Some((relative_error(*a, *b), *b)),
        _ => None,
    });
    pairs
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|(_, b)| b)
        .or_else(|| estimates.iter().flatten().next().copied())
}

/// Relative error used throughout: `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares tape gradients of the scalar built by `f` with central
/// differences. `f` must be deterministic: it is re-run for every
/// perturbation.
///
/// Each coordinate starts at the largest step, where roundoff is smallest,
/// and shrinks it until two successive extrapolated estimates agree;
/// steps whose perturbation changes the discrete pattern of the pass are
/// discarded. A coordinate with no usable step is counted as skipped.
pub fn gradcheck<F>(
    store: &mut ParamStore,
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: for<'t> FnMut(&mut Tape<'t>) -> Result<Var>,
{
    let (grads, base_pattern) = {
        let mut tape = Tape::new(store);
        let out = f(&mut tape)?;
        if !tape.value(out).all_finite() {
            return Err(Error::NonFinite("gradcheck objective".into()));
        }
        (tape.backward(out)?, tape.pattern())
    };

    let mut eval = |store: &ParamStore| -> Result<(f64, u64)> {
        let mut tape = Tape::new(store);
        let out = f(&mut tape)?;
        Ok((tape.item(out), tape.pattern()))
    };

    let ids: Vec<ParamId> = cfg.params.clone().unwrap_or_else(|| store.ids().collect());
    let mut rng = RngStream::new(cfg.seed, 0);
    let mut report = GradCheckReport {
        tolerance: cfg.tolerance,
        params: Vec::with_capacity(ids.len()),
    };

    for id in ids {
        let n = store.value(id).len();
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let analytic = grads
            .get(id)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        let mut check = ParamCheck {
            name: store.get(id).name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for &coord in &order {
            if check.checked >= cfg.coords_per_param {
                break;
            }
            let theta = store.value(id).data()[coord];
            let mut estimates: Vec<Option<f64>> = Vec::new();
            let mut numeric = None;
            for i in 0..=cfg.max_step_shrinks {
                let h = cfg.step_scale * 10f64.powi(-(i as i32)) * (1.0 + theta.abs());
                // Central differences at h and h/2, combined by Richardson
                // extrapolation so the truncation error is O(h⁴).
                let mut d = [0.0; 2];
                let mut smooth = true;
                for (slot, step) in d.iter_mut().zip([h, h / 2.0]) {
                    store.get_mut(id).value.data_mut()[coord] = theta + step;
                    let plus = eval(store);
                    store.get_mut(id).value.data_mut()[coord] = theta - step;
                    let minus = eval(store);
                    store.get_mut(id).value.data_mut()[coord] = theta;
                    let ((fp, pp), (fm, pm)) = (plus?, minus?);
                    if pp != base_pattern || pm != base_pattern {
                        smooth = false;
                        break;
                    }
                    *slot = (fp - fm) / (2.0 * step);
                }
                let estimate = smooth.then(|| (4.0 * d[1] - d[0]) / 3.0);
                if let (Some(Some(prev)), Some(cur)) = (estimates.last(), estimate) {
                    if relative_error(*prev, cur) < AGREEMENT * cfg.tolerance {
                        numeric = Some(cur);
                        break;
                    }
                }
                estimates.push(estimate);
            }
            if numeric.is_none() {
                numeric = most_consistent(&estimates);
            }
            match numeric {
                Some(num) => {
                    let a = analytic[coord];
                    check.checked += 1;
                    check.max_rel_err = check.max_rel_err.max(relative_error(a, num));
                    check.max_abs_err = check.max_abs_err.max((a - num).abs());
                }
                None => check.skipped += 1,
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
