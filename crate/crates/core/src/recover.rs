//! Coefficient recovery.
//!
//! The R and B planes are each warped towards G; the error for a candidate
//! quadruple is the mean absolute difference between the bilinearly warped
//! working plane and the reference, taken only over pixels whose source
//! sample lies inside the working plane. All three planes are histogram
//! equalised first so that colour casts do not bias the fit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imgio::{Plane, RgbImage};
use crate::optim::{self, GradientScheme, MinimiserSettings};
use crate::par;
use crate::planes::equalise_histogram;
use crate::warp::{sample_bilinear, Coefficients, Intrinsics};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoverySettings {
    pub init: Coefficients,
    pub bounds_a: (f64, f64),
    /// Shared by the b, c and d terms.
    pub bounds_bcd: (f64, f64),
    pub fd_step: f64,
    pub gradient: GradientScheme,
    pub f_rel_tol: f64,
    pub max_evals: usize,
    pub history: usize,
}

impl Default for RecoverySettings {
    fn default() -> Self {
        RecoverySettings {
            init: Coefficients::new(0.99, 0.01, 0.0, 0.0),
            bounds_a: (0.95, 1.05),
            bounds_bcd: (-0.05, 0.05),
            fd_step: 1e-4,
            gradient: GradientScheme::Central,
            f_rel_tol: 1e-6,
            max_evals: 200,
            history: 10,
        }
    }
}

impl RecoverySettings {
    pub fn bounds(&self) -> [(f64, f64); 4] {
        [
            self.bounds_a,
            self.bounds_bcd,
            self.bounds_bcd,
            self.bounds_bcd,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let inside = self
            .init
            .to_array()
            .iter()
            .zip(self.bounds())
            .all(|(v, (lo, hi))| lo < *v && *v < hi);
        if !inside {
            return Err(Error::InvalidSettings(format!(
                "initial coefficients {:?} not strictly inside bounds",
                self.init.to_array()
            )));
        }
        if !(self.fd_step.is_finite() && self.fd_step > 0.0) {
            return Err(Error::InvalidSettings("fd_step must be positive".into()));
        }
        if !(self.f_rel_tol.is_finite() && self.f_rel_tol > 0.0) {
            return Err(Error::InvalidSettings("f_rel_tol must be positive".into()));
        }
        if self.max_evals < 2 {
            return Err(Error::InvalidSettings(
                "max_evals must be at least 2".into(),
            ));
        }
        Ok(())
    }

    fn minimiser(&self) -> MinimiserSettings {
        MinimiserSettings {
            fd_step: self.fd_step,
            scheme: self.gradient,
            f_rel_tol: self.f_rel_tol,
            max_evals: self.max_evals,
            history: self.history,
            ..MinimiserSettings::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub coeffs: Coefficients,
    pub final_error: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub trace: Vec<(Coefficients, f64)>,
}

/// Masked mean absolute difference between `work` warped by `c` (bilinear)
/// and `reference`.
pub fn objective(
    work: &Plane,
    reference: &Plane,
    c: &Coefficients,
    intr: &Intrinsics,
) -> Result<f64> {
    work.check_same_dims(reference)?;
    let (w, h) = work.dims();
    let rs = reference.samples();
    let rows = par::map_range(h, |y| {
        let mut sum = 0.0;
        let mut n = 0usize;
        let base = y * w;
        for x in 0..w {
            let (sx, sy) = intr.source_point(x, y, c);
            if let Some(v) = sample_bilinear(work, sx, sy) {
                sum += (v - rs[base + x]).abs();
                n += 1;
            }
        }
        (sum, n)
    });
    let (sum, n) = rows
        .into_iter()
        .fold((0.0, 0usize), |(s, n), (rs, rn)| (s + rs, n + rn));
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Minimise `f` over the recovery bounds.
pub fn minimise_bounded<F>(f: F, s: &RecoverySettings) -> RecoveryResult
where
    F: FnMut(&Coefficients) -> f64,
{
    minimise_bounded_in(f, s, s.bounds())
}

/// As [`minimise_bounded`] with an explicit box; a component with equal
/// bounds is held at that value.
pub fn minimise_bounded_in<F>(
    mut f: F,
    s: &RecoverySettings,
    bounds: [(f64, f64); 4],
) -> RecoveryResult
where
    F: FnMut(&Coefficients) -> f64,
{
    let m = optim::minimise_box(
        |x: &[f64]| f(&Coefficients::new(x[0], x[1], x[2], x[3])),
        &s.init.to_array(),
        &bounds,
        &s.minimiser(),
    );
    let to_c = |x: &[f64]| Coefficients::new(x[0], x[1], x[2], x[3]);
    RecoveryResult {
        coeffs: to_c(&m.x),
        final_error: m.f,
        evaluations: m.evaluations,
        converged: m.converged,
        trace: m.trace.iter().map(|e| (to_c(&e.x), e.f)).collect(),
    }
}

/// Fit one working plane against a reference (both already equalised).
pub fn recover_plane(
    work: &Plane,
    reference: &Plane,
    intr: &Intrinsics,
    s: &RecoverySettings,
) -> Result<RecoveryResult> {
    s.validate()?;
    work.check_same_dims(reference)?;
    Ok(minimise_bounded(
        |c| objective(work, reference, c, intr).unwrap_or(f64::INFINITY),
        s,
    ))
}

/// Recover the R->G and B->G quadruples for an image. The input is not
/// modified; equalisation works on copies.
pub fn recover_coefficients(
    img: &RgbImage,
    intr: &Intrinsics,
    s: &RecoverySettings,
) -> Result<(RecoveryResult, RecoveryResult)> {
    s.validate()?;
    let (r, (g, b)) = par::join(
        || equalise_histogram(&img.r),
        || par::join(|| equalise_histogram(&img.g), || equalise_histogram(&img.b)),
    );
    let (rg, bg) = par::join(
        || recover_plane(&r, &g, intr, s),
        || recover_plane(&b, &g, intr, s),
    );
    Ok((rg?, bg?))
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Objective sampled over an (a, b) grid with c = d = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSurface {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Row-major: `errors[i * b.len() + j]` is the error at `(a[i], b[j])`.
    pub errors: Vec<f64>,
}

impl ErrorSurface {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.errors[i * self.b.len() + j]
    }

    /// Grid indices of the smallest error (first on ties).
    pub fn argmin(&self) -> (usize, usize) {
        let k =
            self.errors.iter().enumerate().fold(
                0,
                |best, (k, &v)| if v < self.errors[best] { k } else { best },
            );
        (k / self.b.len(), k % self.b.len())
    }

    /// True when exactly one cell attains the minimum value.
    pub fn has_unique_minimum(&self) -> bool {
        let (i, j) = self.argmin();
        let m = self.at(i, j);
        self.errors.iter().filter(|&&v| v == m).count() == 1
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,b,error\n");
        for (i, a) in self.a.iter().enumerate() {
            for (j, b) in self.b.iter().enumerate() {
                let _ = writeln!(out, "{a},{b},{}", self.at(i, j));
            }
        }
        out
    }
}

pub fn sweep_error_surface(
    work: &Plane,
    reference: &Plane,
    intr: &Intrinsics,
    grid_a: &[f64],
    grid_b: &[f64],
) -> Result<ErrorSurface> {
    work.check_same_dims(reference)?;
    let nb = grid_b.len();
    let errors = par::map_range(grid_a.len() * nb, |k| {
        let c = Coefficients::new(grid_a[k / nb], grid_b[k % nb], 0.0, 0.0);
        objective(work, reference, &c, intr).unwrap_or(f64::INFINITY)
    });
    Ok(ErrorSurface {
        a: grid_a.to_vec(),
        b: grid_b.to_vec(),
        errors,
    })
}

/// CSV of every evaluation, `eval,a,b,c,d,error`, numbered from 1 across
/// all given runs in order.
pub fn trace_csv(runs: &[&RecoveryResult]) -> String {
    let mut out = String::from("eval,a,b,c,d,error\n");
    let mut k = 0;
    for run in runs {
        for (c, e) in &run.trace {
            k += 1;
            let _ = writeln!(out, "{k},{},{},{},{},{e}", c.a, c.b, c.c, c.d);
        }
    }
    out
}

pub fn write_trace(path: impl AsRef<Path>, runs: &[&RecoveryResult]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, trace_csv(runs)).map_err(|e| Error::io(path, e))
}
