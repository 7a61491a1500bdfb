//! Plane-level operations: RGGB mosaic and bilinear demosaic, histogram
//! equalisation, photopic luminance and masked difference metrics.

use crate::error::{Error, Result};
use crate::imgio::{Plane, RgbImage};
use crate::par;
use crate::warp::Mask;

/// Colour filter layout of a 2x2 Bayer quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BayerPattern {
    #[default]
    Rggb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Red,
    Green,
    Blue,
}

impl BayerPattern {
    /// Which filter sits over pixel `(x, y)`.
    #[inline]
    pub fn channel_at(self, x: usize, y: usize) -> Channel {
        match self {
            BayerPattern::Rggb => match (x & 1, y & 1) {
                (0, 0) => Channel::Red,
                (1, 1) => Channel::Blue,
                _ => Channel::Green,
            },
        }
    }
}

/// Single-sample-per-pixel sensor readout.
#[derive(Debug, Clone, PartialEq)]
pub struct BayerMosaic {
    width: usize,
    height: usize,
    pattern: BayerPattern,
    samples: Vec<f64>,
}

impl BayerMosaic {
    pub fn new(
        width: usize,
        height: usize,
        pattern: BayerPattern,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimensions);
        }
        if !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(Error::OddDimensions(width, height));
        }
        // reuse Plane's length/range validation
        let samples = Plane::new(width, height, samples)?.into_samples();
        Ok(BayerMosaic {
            width,
            height,
            pattern,
            samples,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pattern(&self) -> BayerPattern {
        self.pattern
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

/// Sample an image through an RGGB colour filter array.
pub fn mosaic(img: &RgbImage) -> Result<BayerMosaic> {
    let (w, h) = img.dims();
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::OddDimensions(w, h));
    }
    let pattern = BayerPattern::Rggb;
    let mut samples = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let plane = match pattern.channel_at(x, y) {
                Channel::Red => &img.r,
                Channel::Green => &img.g,
                Channel::Blue => &img.b,
            };
            samples.push(plane.get(x, y));
        }
    }
    Ok(BayerMosaic {
        width: w,
        height: h,
        pattern,
        samples,
    })
}

/// Rebuild full planes by averaging the nearest same-channel neighbours.
///
/// Green is missing at R and B sites and is taken from the four orthogonal
/// neighbours. Red and blue are missing at the other three sites: two
/// horizontal or two vertical neighbours at green sites, four diagonal
/// neighbours at the opposite colour site. At borders only the neighbours
/// that exist are averaged.
pub fn demosaic_bilinear(m: &BayerMosaic) -> RgbImage {
    let (w, h) = m.dims();
    let fill = |channel: Channel| -> Plane {
        let mut out = vec![0.0; w * h];
        par::for_each_row(&mut out, w, |y, row| {
            for (x, v) in row.iter_mut().enumerate() {
                if m.pattern.channel_at(x, y) == channel {
                    *v = m.samples[y * w + x];
                    continue;
                }
                let (mut first, mut sum, mut n) = (None, 0.0, 0u32);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if m.pattern.channel_at(nx, ny) != channel {
                            continue;
                        }
                        // green sites touch green only orthogonally
                        if channel == Channel::Green && dx != 0 && dy != 0 {
                            continue;
                        }
                        let s = m.samples[ny * w + nx];
                        let base = *first.get_or_insert(s);
                        sum += s - base;
                        n += 1;
                    }
                }
                *v = match first {
                    Some(base) => (base + sum / n as f64).clamp(0.0, 1.0),
                    None => 0.0,
                };
            }
        });
        Plane::from_raw(w, h, out)
    };
    RgbImage {
        r: fill(Channel::Red),
        g: fill(Channel::Green),
        b: fill(Channel::Blue),
    }
}

pub const HISTOGRAM_BINS: usize = 65536;

#[inline]
fn bin_of(v: f64) -> usize {
    ((v * (HISTOGRAM_BINS - 1) as f64).round() as usize).min(HISTOGRAM_BINS - 1)
}

/// Cumulative-distribution equalisation over 65536 bins.
///
/// `out = (cdf(bin(v)) - cdf_min) / (n - cdf_min)` where `cdf_min` is the
/// cumulative count of the lowest occupied bin. A plane with one occupied
/// bin maps to all zeros.
pub fn equalise_histogram(p: &Plane) -> Plane {
    let mut hist = vec![0u64; HISTOGRAM_BINS];
    for &v in p.samples() {
        hist[bin_of(v)] += 1;
    }
    let n = p.samples().len() as u64;
    let mut cdf = hist;
    let mut running = 0u64;
    let mut cdf_min = None;
    for c in cdf.iter_mut() {
        running += *c;
        if cdf_min.is_none() && *c > 0 {
            cdf_min = Some(running);
        }
        *c = running;
    }
    let cdf_min = cdf_min.unwrap_or(0);
    let denom = (n - cdf_min) as f64;
    let lut: Vec<f64> = cdf
        .iter()
        .map(|&c| {
            if denom > 0.0 {
                ((c.saturating_sub(cdf_min)) as f64 / denom).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    let (w, h) = p.dims();
    Plane::from_raw(w, h, p.samples().iter().map(|&v| lut[bin_of(v)]).collect())
}

pub const LUMA_R: f64 = 0.299;
pub const LUMA_G: f64 = 0.587;
pub const LUMA_B: f64 = 0.114;

/// Photopic luminance `Y = 0.299 R + 0.587 G + 0.114 B`, evaluated
/// relative to G so grey pixels pass through exactly.
pub fn luminance(img: &RgbImage) -> Plane {
    let (w, h) = img.dims();
    let (r, g, b) = (img.r.samples(), img.g.samples(), img.b.samples());
    Plane::from_raw(
        w,
        h,
        (0..w * h)
            .map(|i| (g[i] + LUMA_R * (r[i] - g[i]) + LUMA_B * (b[i] - g[i])).clamp(0.0, 1.0))
            .collect(),
    )
}

/// Per-pixel absolute difference of two planes.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMap {
    pub plane: Plane,
    /// Filled in by [`masked_average`].
    pub mean_masked: Option<f64>,
}

pub fn abs_difference(a: &Plane, b: &Plane) -> Result<DifferenceMap> {
    a.check_same_dims(b)?;
    let (w, h) = a.dims();
    let mut out = vec![0.0; w * h];
    let (sa, sb) = (a.samples(), b.samples());
    par::for_each_row(&mut out, w, |y, row| {
        let base = y * w;
        for (x, v) in row.iter_mut().enumerate() {
            *v = (sa[base + x] - sb[base + x]).abs();
        }
    });
    Ok(DifferenceMap {
        plane: Plane::from_raw(w, h, out),
        mean_masked: None,
    })
}

/// Mean of the difference samples under the set bits of `mask`. Also records
/// the value in `d.mean_masked`.
pub fn masked_average(d: &mut DifferenceMap, mask: &Mask) -> Result<f64> {
    let (w, h) = d.plane.dims();
    if mask.dims() != (w, h) {
        return Err(Error::DimensionMismatch(w, h, mask.width(), mask.height()));
    }
    let s = d.plane.samples();
    let bits = mask.bits();
    let rows = par::map_range(h, |y| {
        let base = y * w;
        let mut sum = 0.0;
        let mut n = 0usize;
        for x in 0..w {
            if bits[base + x] {
                sum += s[base + x];
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
    let mean = sum / n as f64;
    d.mean_masked = Some(mean);
    Ok(mean)
}

/// Relative reduction in masked mean difference between two maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaReduction {
    /// `100 (before - after) / before`; negative if `after` is worse.
    pub percent: f64,
    /// Set when `before` averages to zero and the ratio is undefined; the
    /// percentage is then reported as 0.
    pub degenerate: bool,
}

pub fn difference_area_reduction(
    before: &DifferenceMap,
    after: &DifferenceMap,
    mask: &Mask,
) -> Result<AreaReduction> {
    before.plane.check_same_dims(&after.plane)?;
    let mb = masked_average(&mut before.clone(), mask)?;
    let ma = masked_average(&mut after.clone(), mask)?;
    if mb == 0.0 {
        return Ok(AreaReduction {
            percent: 0.0,
            degenerate: true,
        });
    }
    Ok(AreaReduction {
        percent: 100.0 * ((mb - ma) / mb),
        degenerate: false,
    })
}
