//! Append-only store of recovered coefficients keyed by lens settings.
//!
//! The store is a UTF-8 file with one JSON record per line. Lookups scan the
//! whole file; records for other lenses are ignored. Distances between lens
//! settings are taken on a log2 scale, where a unit step is one stop of
//! aperture or a doubling of focal length / focus distance.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::warp::{radial_map, Coefficients, Intrinsics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensParams {
    pub lens_id: String,
    pub focal_length: f64,
    pub aperture: f64,
    pub focus_distance: f64,
}

impl LensParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("focal_length", self.focal_length),
            ("aperture", self.aperture),
            ("focus_distance", self.focus_distance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidMetadata(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn log2_values(&self) -> [f64; 3] {
        [
            self.focal_length.log2(),
            self.aperture.log2(),
            self.focus_distance.log2(),
        ]
    }
}

/// One database row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    #[serde(flatten)]
    pub params: LensParams,
    pub rg: Coefficients,
    pub bg: Coefficients,
    pub width: usize,
    pub height: usize,
    pub centre_x: f64,
    pub centre_y: f64,
    pub created_at: DateTime<Utc>,
}

/// Per-parameter weights of the squared log2 distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryWeights {
    pub w_focal: f64,
    pub w_aperture: f64,
    pub w_focus: f64,
}

impl Default for QueryWeights {
    fn default() -> Self {
        QueryWeights {
            w_focal: 1.0,
            w_aperture: 1.0,
            w_focus: 0.25,
        }
    }
}

impl QueryWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_focal, self.w_aperture, self.w_focus];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidSettings(format!(
                "query weights must be non-negative and not all zero, got {w:?}"
            )));
        }
        Ok(())
    }

    /// Weighted squared log2 distance.
    pub fn distance2(&self, a: &LensParams, b: &LensParams) -> f64 {
        let (la, lb) = (a.log2_values(), b.log2_values());
        let w = [self.w_focal, self.w_aperture, self.w_focus];
        (0..3).map(|i| w[i] * (la[i] - lb[i]).powi(2)).sum()
    }
}

/// How coefficients are drawn from the database for a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lookup {
    Nearest(QueryWeights),
    Interpolate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nearest {
    pub record: CorrectionRecord,
    pub distance: f64,
}

/// Handle to a database file. The file need not exist until the first append.
#[derive(Debug, Clone)]
pub struct LensDb {
    path: PathBuf,
}

impl LensDb {
    pub fn open(path: impl Into<PathBuf>) -> Self {
        LensDb { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// All records in file order. A missing file is an empty database.
    pub fn records(&self) -> Result<Vec<CorrectionRecord>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Database {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn records_for(&self, lens_id: &str) -> Result<Vec<CorrectionRecord>> {
        Ok(self
            .records()?
            .into_iter()
            .filter(|r| r.params.lens_id == lens_id)
            .collect())
    }

    /// Append one record as a single line. Callers serialise writers.
    pub fn append(&self, rec: &CorrectionRecord) -> Result<()> {
        let mut line = serde_json::to_string(rec)?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(line.as_bytes())
            .map_err(|e| Error::io(&self.path, e))?;
        f.sync_data().map_err(|e| Error::io(&self.path, e))
    }

    pub fn nearest(&self, q: &LensParams, w: &QueryWeights) -> Result<Nearest> {
        w.validate()?;
        q.validate()?;
        let recs = self.records_for(&q.lens_id)?;
        nearest_of(&recs, q, w).ok_or_else(|| Error::NoRecord(q.lens_id.clone()))
    }

    pub fn coefficients_for(
        &self,
        q: &LensParams,
        intr: &Intrinsics,
        lookup: Lookup,
    ) -> Result<(Coefficients, Coefficients)> {
        match lookup {
            Lookup::Nearest(w) => self.nearest(q, &w).map(|n| (n.record.rg, n.record.bg)),
            Lookup::Interpolate => self.interpolate(q, intr),
        }
    }

    /// Coefficients for `q` by blending the bracketing records' polynomials.
    ///
    /// Parameters are visited in the order aperture, focal length, focus
    /// distance. For each, the nearest record at or below `q` and the
    /// nearest at or above `q` along that parameter are located; if they
    /// differ in that parameter, both polynomials are sampled at `R + 1`
    /// evenly spaced normalised radii (`R` = the radius normalisation in
    /// pixels) and blended with weight `t`, the log-scale position of `q`
    /// between them. A quartic without constant term is least-squares fitted
    /// through all blended samples. If no parameter brackets `q`, the
    /// nearest record is returned unchanged.
    pub fn interpolate(
        &self,
        q: &LensParams,
        intr: &Intrinsics,
    ) -> Result<(Coefficients, Coefficients)> {
        q.validate()?;
        let recs = self.records_for(&q.lens_id)?;
        if recs.is_empty() {
            return Err(Error::NoRecord(q.lens_id.clone()));
        }
        if recs.len() < 2 {
            return Err(Error::TooFewRecords(q.lens_id.clone()));
        }
        let weights = QueryWeights::default();
        let intervals = (intr.r_norm.round() as usize).max(4);
        let radii: Vec<f64> = (0..=intervals)
            .map(|i| i as f64 / intervals as f64)
            .collect();

        let mut samples_rg = Vec::new();
        let mut samples_bg = Vec::new();
        for axis in [Axis::Aperture, Axis::Focal, Axis::Focus] {
            let qv = axis.value(q);
            let lower: Vec<CorrectionRecord> = recs
                .iter()
                .filter(|r| axis.value(&r.params) <= qv)
                .cloned()
                .collect();
            let upper: Vec<CorrectionRecord> = recs
                .iter()
                .filter(|r| axis.value(&r.params) >= qv)
                .cloned()
                .collect();
            let (Some(lo), Some(hi)) = (
                nearest_of(&lower, q, &weights),
                nearest_of(&upper, q, &weights),
            ) else {
                continue;
            };
            let (lv, hv) = (axis.value(&lo.record.params), axis.value(&hi.record.params));
            if lv == hv {
                continue;
            }
            let t = (qv.log2() - lv.log2()) / (hv.log2() - lv.log2());
            for &r in &radii {
                let blend = |a: &Coefficients, b: &Coefficients| {
                    radial_map(r, a) * (1.0 - t) + radial_map(r, b) * t
                };
                samples_rg.push((r, blend(&lo.record.rg, &hi.record.rg)));
                samples_bg.push((r, blend(&lo.record.bg, &hi.record.bg)));
            }
        }
        if samples_rg.is_empty() {
            let n = nearest_of(&recs, q, &weights).expect("records are non-empty");
            return Ok((n.record.rg, n.record.bg));
        }
        Ok((fit_quartic(&samples_rg), fit_quartic(&samples_bg)))
    }
}

#[derive(Debug, Clone, Copy)]
enum Axis {
    Aperture,
    Focal,
    Focus,
}

impl Axis {
    fn value(self, p: &LensParams) -> f64 {
        match self {
            Axis::Aperture => p.aperture,
            Axis::Focal => p.focal_length,
            Axis::Focus => p.focus_distance,
        }
    }
}

/// Minimum weighted distance; ties go to the newest `created_at`, then to
/// the later record.
fn nearest_of(recs: &[CorrectionRecord], q: &LensParams, w: &QueryWeights) -> Option<Nearest> {
    let mut best: Option<Nearest> = None;
    for r in recs {
        let d = w.distance2(&r.params, q);
        let better = match &best {
            None => true,
            Some(b) => d < b.distance || (d == b.distance && r.created_at >= b.record.created_at),
        };
        if better {
            best = Some(Nearest {
                record: r.clone(),
                distance: d,
            });
        }
    }
    best
}

/// Least-squares `a r + b r^2 + c r^3 + d r^4` through `(r, value)` points.
pub fn fit_quartic(points: &[(f64, f64)]) -> Coefficients {
    let design = DMatrix::from_fn(points.len(), 4, |i, j| points[i].0.powi(j as i32 + 1));
    let rhs = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let x = design
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .expect("SVD was computed with both U and V");
    Coefficients::new(x[0], x[1], x[2], x[3])
}
