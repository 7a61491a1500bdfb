//! Box-constrained limited-memory BFGS with finite-difference gradients.
//!
//! The objective is only available as a black box, so gradients are probed
//! numerically. Iterates are projected onto the box after every step and all
//! gradient probes stay inside it; a component whose box is degenerate
//! (`lo == hi`) is held fixed.
//!
//! Each iteration builds a search direction from the two-loop recursion over
//! the stored curvature pairs, restricted to variables that are not pinned at
//! an active bound, then backtracks along the projected path until the
//! Armijo condition holds. If backtracking fails the memory is discarded and
//! a projected steepest-descent step is tried instead. The run ends when an
//! accepted step lowers the objective by less than `f_rel_tol` relative to
//! its previous value, when no descent step can be found, or when the
//! evaluation budget is spent. The best point observed is returned.

use std::collections::VecDeque;

/// How gradient components are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientScheme {
    /// `(f(x+h) - f(x)) / h`, or the backward difference against an upper bound.
    Forward,
    /// `(f(x+h) - f(x-h)) / 2h`, one-sided when a probe would leave the box.
    #[default]
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimiserSettings {
    pub fd_step: f64,
    pub scheme: GradientScheme,
    pub f_rel_tol: f64,
    pub max_evals: usize,
    pub history: usize,
    /// Largest per-component move of the first (steepest-descent) trial step.
    pub initial_step: f64,
}

impl Default for MinimiserSettings {
    fn default() -> Self {
        MinimiserSettings {
            fd_step: 1e-4,
            scheme: GradientScheme::Central,
            f_rel_tol: 1e-6,
            max_evals: 200,
            history: 10,
            initial_step: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub x: Vec<f64>,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Every objective evaluation in call order.
    pub trace: Vec<Evaluation>,
}

struct BudgetExhausted;

/// Counts evaluations, records the trace and tracks the best point.
struct Tracker<F> {
    f: F,
    max_evals: usize,
    trace: Vec<Evaluation>,
    best: usize,
}

impl<F: FnMut(&[f64]) -> f64> Tracker<F> {
    fn eval(&mut self, x: &[f64]) -> Result<f64, BudgetExhausted> {
        if self.trace.len() >= self.max_evals {
            return Err(BudgetExhausted);
        }
        let mut v = (self.f)(x);
        if v.is_nan() {
            v = f64::INFINITY;
        }
        self.trace.push(Evaluation {
            x: x.to_vec(),
            f: v,
        });
        // strict comparison keeps the earlier point on ties
        if v < self.trace[self.best].f {
            self.best = self.trace.len() - 1;
        }
        Ok(v)
    }
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gradient<F: FnMut(&[f64]) -> f64>(
    t: &mut Tracker<F>,
    x: &[f64],
    fx: f64,
    bounds: &[(f64, f64)],
    scheme: GradientScheme,
    h: f64,
) -> Result<Vec<f64>, BudgetExhausted> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let (lo, hi) = bounds[i];
        let up = x[i] + h <= hi;
        let down = x[i] - h >= lo;
        let mut at = |v: f64, t: &mut Tracker<F>| -> Result<f64, BudgetExhausted> {
            probe[i] = v;
            let r = t.eval(&probe);
            probe[i] = x[i];
            r
        };
        g[i] = match (scheme, up, down) {
            (GradientScheme::Central, true, true) => {
                (at(x[i] + h, t)? - at(x[i] - h, t)?) / (2.0 * h)
            }
            (_, true, _) => (at(x[i] + h, t)? - fx) / h,
            (_, false, true) => (fx - at(x[i] - h, t)?) / h,
            // box narrower than the probe: treat as fixed
            (_, false, false) => 0.0,
        };
    }
    Ok(g)
}

/// Variables free to move: not fixed and not pinned against a bound by the
/// gradient.
fn free_set(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> Vec<bool> {
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((&xi, &gi), &(lo, hi))| {
            if hi <= lo {
                false
            } else if xi <= lo {
                gi < 0.0
            } else if xi >= hi {
                gi > 0.0
            } else {
                true
            }
        })
        .collect()
}

fn two_loop(g: &[f64], free: &[bool], mem: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .zip(free)
            .map(|(x, &f)| if f { *x } else { 0.0 })
            .collect()
    };
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(mem.len());
    for (sv, yv) in mem.iter().rev() {
        let (sv, yv) = (mask(sv), mask(yv));
        let sy = dot(&sv, &yv);
        if sy <= 0.0 {
            alphas.push(0.0);
            continue;
        }
        let alpha = dot(&sv, &q) / sy;
        for (qi, yi) in q.iter_mut().zip(&yv) {
            *qi -= alpha * yi;
        }
        alphas.push(alpha);
    }
    let gamma = mem
        .back()
        .map(|(sv, yv)| {
            let (sv, yv) = (mask(sv), mask(yv));
            let yy = dot(&yv, &yv);
            if yy > 0.0 {
                dot(&sv, &yv) / yy
            } else {
                1.0
            }
        })
        .filter(|g| *g > 0.0)
        .unwrap_or(1.0);
    for qi in &mut q {
        *qi *= gamma;
    }
    for ((sv, yv), alpha) in mem.iter().zip(alphas.iter().rev()) {
        let (sv, yv) = (mask(sv), mask(yv));
        let sy = dot(&sv, &yv);
        if sy <= 0.0 {
            continue;
        }
        let beta = dot(&yv, &q) / sy;
        for (qi, si) in q.iter_mut().zip(&sv) {
            *qi += (alpha - beta) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;

/// Minimise `f` over the box `bounds` starting from `x0` (projected into the
/// box first).
pub fn minimise_box<F>(f: F, x0: &[f64], bounds: &[(f64, f64)], s: &MinimiserSettings) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(
        x0.len(),
        bounds.len(),
        "start point and bounds differ in length"
    );
    let mut t = Tracker {
        f,
        max_evals: s.max_evals.max(1),
        trace: Vec::new(),
        best: 0,
    };
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let converged = run(&mut t, &mut x, bounds, s).unwrap_or(false);
    let best = &t.trace[t.best];
    Minimum {
        x: best.x.clone(),
        f: best.f,
        evaluations: t.trace.len(),
        converged,
        trace: t.trace,
    }
}

fn run<F: FnMut(&[f64]) -> f64>(
    t: &mut Tracker<F>,
    x: &mut Vec<f64>,
    bounds: &[(f64, f64)],
    s: &MinimiserSettings,
) -> Result<bool, BudgetExhausted> {
    let mut fx = t.eval(x)?;
    let h = s.fd_step;
    let mut g = gradient(t, x, fx, bounds, s.scheme, h)?;
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(s.history);

    loop {
        let free = free_set(x, &g, bounds);
        if free.iter().zip(&g).all(|(&f, &gi)| !f || gi == 0.0) {
            return Ok(true);
        }

        let mut step = None;
        for use_memory in [true, false] {
            if !use_memory && mem.is_empty() {
                break;
            }
            let mut d = if use_memory && !mem.is_empty() {
                two_loop(&g, &free, &mem)
            } else {
                g.iter()
                    .zip(&free)
                    .map(|(gi, &f)| if f { -gi } else { 0.0 })
                    .collect()
            };
            if dot(&d, &g) >= 0.0 {
                d = g
                    .iter()
                    .zip(&free)
                    .map(|(gi, &f)| if f { -gi } else { 0.0 })
                    .collect();
                mem.clear();
            }
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut alpha = if mem.is_empty() {
                (s.initial_step / dmax).min(1.0)
            } else {
                1.0
            };
            for _ in 0..MAX_BACKTRACKS {
                let mut trial: Vec<f64> =
                    x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
                project(&mut trial, bounds);
                if trial == *x {
                    break;
                }
                let delta: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
                let ft = t.eval(&trial)?;
                if ft <= fx + ARMIJO_C1 * dot(&g, &delta) && ft < fx {
                    step = Some((trial, ft));
                    break;
                }
                alpha *= 0.5;
            }
            if step.is_some() {
                break;
            }
            mem.clear();
        }

        let Some((x_new, f_new)) = step else {
            // no descent at the probe resolution
            return Ok(true);
        };

        let rel = (fx - f_new) / fx.abs().max(f64::MIN_POSITIVE);
        let s_vec: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        *x = x_new;
        let f_old = fx;
        fx = f_new;
        if rel < s.f_rel_tol || fx == 0.0 {
            return Ok(true);
        }
        let g_new = gradient(t, x, fx, bounds, s.scheme, h)?;
        let y_vec: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s_vec, &y_vec);
        if sy > 1e-12 * dot(&y_vec, &y_vec).max(f64::MIN_POSITIVE) && sy > 0.0 {
            if mem.len() == s.history.max(1) {
                mem.pop_front();
            }
            mem.push_back((s_vec, y_vec));
        }
        g = g_new;
        debug_assert!(fx <= f_old);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box4() -> Vec<(f64, f64)> {
        vec![(0.95, 1.05), (-0.05, 0.05), (-0.05, 0.05), (-0.05, 0.05)]
    }

    #[test]
    fn recovers_interior_quadratic_minimum() {
        let target = [1.013, -0.021, 0.007, 0.033];
        let f = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        };
        let m = minimise_box(
            f,
            &[0.99, 0.01, 0.0, 0.0],
            &box4(),
            &MinimiserSettings::default(),
        );
        for (got, want) in m.x.iter().zip(&target) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        assert!(m.converged);
    }

    #[test]
    fn active_upper_bound_is_returned() {
        let f = |x: &[f64]| (x[0] - 1.2).abs() + x[1].powi(2) + x[2].powi(2) + x[3].powi(2);
        let m = minimise_box(
            f,
            &[0.99, 0.01, 0.0, 0.0],
            &box4(),
            &MinimiserSettings::default(),
        );
        assert_eq!(m.x[0], 1.05);
    }

    #[test]
    fn iterates_and_probes_stay_in_box() {
        let f = |x: &[f64]| {
            (x[0] - 3.0).powi(2) + (x[1] + 2.0).powi(2) + (x[2] * 40.0).sin() + x[3].abs()
        };
        let b = box4();
        let m = minimise_box(
            f,
            &[0.99, 0.01, 0.0, 0.0],
            &b,
            &MinimiserSettings::default(),
        );
        for e in &m.trace {
            for (v, (lo, hi)) in e.x.iter().zip(&b) {
                assert!(v >= lo && v <= hi);
            }
        }
        assert!(m.evaluations <= 200);
    }

    #[test]
    fn fixed_components_never_move() {
        let mut b = box4();
        b[2] = (0.0, 0.0);
        b[3] = (0.0, 0.0);
        let f = |x: &[f64]| (x[0] - 1.01).powi(2) + (x[1] - 0.02).powi(2) + (x[2] - 0.03).powi(2);
        let m = minimise_box(
            f,
            &[0.99, 0.01, 0.0, 0.0],
            &b,
            &MinimiserSettings::default(),
        );
        assert!(m.trace.iter().all(|e| e.x[2] == 0.0 && e.x[3] == 0.0));
        assert!((m.x[0] - 1.01).abs() < 1e-6 && (m.x[1] - 0.02).abs() < 1e-6);
    }

    #[test]
    fn central_gradient_matches_analytic() {
        let target = [1.013, -0.021, 0.007, 0.033];
        let f = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        };
        let x = [0.97, 0.02, -0.03, 0.01];
        let mut t = Tracker {
            f,
            max_evals: 100,
            trace: vec![],
            best: 0,
        };
        let fx = t.eval(&x).ok().unwrap();
        let g = gradient(&mut t, &x, fx, &box4(), GradientScheme::Central, 1e-4)
            .ok()
            .unwrap();
        for i in 0..4 {
            let analytic = 2.0 * (x[i] - target[i]);
            assert!(
                ((g[i] - analytic) / analytic).abs() < 1e-6,
                "component {i}: {} vs {analytic}",
                g[i]
            );
        }
    }

    #[test]
    fn budget_exhaustion_returns_best_so_far() {
        let f = |x: &[f64]| (x[0] - 1.02).powi(2) + (x[1] - 0.03).powi(2);
        let s = MinimiserSettings {
            max_evals: 7,
            ..Default::default()
        };
        let m = minimise_box(f, &[0.99, 0.01], &[(0.95, 1.05), (-0.05, 0.05)], &s);
        assert!(!m.converged);
        assert_eq!(m.evaluations, 7);
        let best = m.trace.iter().map(|e| e.f).fold(f64::INFINITY, f64::min);
        assert_eq!(m.f, best);
    }

    #[test]
    fn ties_keep_the_earlier_point() {
        let m = minimise_box(
            |_| 1.0,
            &[1.0, 0.0],
            &[(0.95, 1.05), (-0.05, 0.05)],
            &MinimiserSettings::default(),
        );
        assert_eq!(m.x, vec![1.0, 0.0]);
        assert!(m.converged);
    }
}
