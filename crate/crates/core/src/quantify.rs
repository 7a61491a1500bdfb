//! Spatial-frequency change between two images.
//!
//! Each image is reduced to photopic luminance, zero-padded to a square, and
//! transformed with a 1/(MN)-normalised 2-D DFT. The per-frequency value
//! `log((1 + |F|) / height)` is DC-centred, two such maps are subtracted, and
//! the difference is averaged over rings of equal spatial frequency and
//! smoothed with a Hann window.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::imgio::{Plane, RgbImage};
use crate::par;
use crate::planes::luminance;

pub const DEFAULT_HANN_WINDOW: usize = 11;

/// DC-centred log-magnitude spectrum of a square-padded plane.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeMap {
    pub n: usize,
    /// Row-major `n x n`; DC at `(n/2, n/2)`.
    pub values: Vec<f64>,
}

impl MagnitudeMap {
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.n + u]
    }
}

fn fft_rows(data: &mut [Complex64], n: usize) {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    par::for_each_row(data, n, |_, row| fft.process(row));
}

fn transpose(data: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for y in 0..n {
        for x in 0..n {
            out[x * n + y] = data[y * n + x];
        }
    }
    out
}

/// Normalised 2-D DFT of `p` zero-padded to `n = max(w, h)`; uncentred,
/// `out[v * n + u]` is `F(u, v)` with `u` along x.
pub fn dft2(p: &Plane) -> (usize, Vec<Complex64>) {
    let (w, h) = p.dims();
    let n = w.max(h);
    let mut data = vec![Complex64::new(0.0, 0.0); n * n];
    for y in 0..h {
        for x in 0..w {
            data[y * n + x] = Complex64::new(p.get(x, y), 0.0);
        }
    }
    fft_rows(&mut data, n);
    let mut t = transpose(&data, n);
    fft_rows(&mut t, n);
    let mut out = transpose(&t, n);
    let norm = 1.0 / (n * n) as f64;
    for v in &mut out {
        *v *= norm;
    }
    (n, out)
}

/// Move index `i` of an `n`-periodic axis so that 0 lands on `n / 2`.
#[inline]
fn centred(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

pub fn dft_magnitude(lum: &Plane) -> MagnitudeMap {
    let height = lum.height() as f64;
    let (n, f) = dft2(lum);
    let mut values = vec![0.0; n * n];
    for v in 0..n {
        for u in 0..n {
            let m = f[v * n + u].norm();
            values[centred(v, n) * n + centred(u, n)] = ((1.0 + m) / height).ln();
        }
    }
    MagnitudeMap { n, values }
}

/// Radial profile of a magnitude difference.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `(fraction of Nyquist, value)` per integer-radius bin.
    pub bins: Vec<(f64, f64)>,
    /// Pixels that fell in each bin before smoothing.
    pub counts: Vec<usize>,
    pub window: usize,
}

impl Spectrogram {
    pub fn values(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.1).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_fraction,delta\n");
        for (f, v) in &self.bins {
            let _ = writeln!(out, "{},{}", sig9(*f), sig9(*v));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Nine significant digits in scientific notation.
fn sig9(v: f64) -> String {
    if v == 0.0 {
        // avoid "-0.00000000e0"
        return "0.00000000e0".to_string();
    }
    format!("{v:.8e}")
}

/// Normalised Hann taps of length `len` (all strictly positive).
pub fn hann_window(len: usize) -> Vec<f64> {
    let len = len.max(1);
    let raw: Vec<f64> = (0..len)
        .map(|k| {
            let s = (std::f64::consts::PI * (k + 1) as f64 / (len + 1) as f64).sin();
            s * s
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

/// Convolve with a Hann window; near the ends the window is truncated and
/// renormalised.
pub fn hann_smooth(values: &[f64], len: usize) -> Vec<f64> {
    let w = hann_window(len);
    let half = (w.len() - 1) / 2;
    (0..values.len())
        .map(|i| {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (k, wk) in w.iter().enumerate() {
                let j = i as i64 + k as i64 - half as i64;
                if j >= 0 && (j as usize) < values.len() {
                    acc += wk * values[j as usize];
                    wsum += wk;
                }
            }
            acc / wsum
        })
        .collect()
}

/// Per-ring sums and pixel counts for `floor(n/2) + 1` integer-radius bins;
/// radii at or beyond `n/2` are dropped.
pub fn radial_bins(values: &[f64], n: usize) -> (Vec<f64>, Vec<usize>) {
    let nbins = n / 2 + 1;
    let half = n as f64 / 2.0;
    let c = (n / 2) as f64;
    let mut sums = vec![0.0; nbins];
    let mut counts = vec![0usize; nbins];
    for v in 0..n {
        for u in 0..n {
            let rho = (u as f64 - c).hypot(v as f64 - c);
            if rho >= half {
                continue;
            }
            let bin = rho.floor() as usize;
            sums[bin] += values[v * n + u];
            counts[bin] += 1;
        }
    }
    (sums, counts)
}

/// Radial mean of `a - b`, Hann-smoothed. Empty bins hold 0.
pub fn spectrogram_diff(a: &MagnitudeMap, b: &MagnitudeMap, window: usize) -> Result<Spectrogram> {
    if a.n != b.n {
        return Err(Error::DimensionMismatch(a.n, a.n, b.n, b.n));
    }
    let n = a.n;
    let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let (sums, counts) = radial_bins(&diff, n);
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let smoothed = hann_smooth(&means, window);
    let half = n as f64 / 2.0;
    Ok(Spectrogram {
        bins: smoothed
            .into_iter()
            .enumerate()
            .map(|(i, v)| (i as f64 / half, v))
            .collect(),
        counts,
        window: window.max(1),
    })
}

/// Frequency content gained by `after` relative to `before` (positive
/// values mean `after` has more).
pub fn quantify_pair(before: &RgbImage, after: &RgbImage, window: usize) -> Result<Spectrogram> {
    before.g.check_same_dims(&after.g)?;
    let (mb, ma) = par::join(
        || dft_magnitude(&luminance(before)),
        || dft_magnitude(&luminance(after)),
    );
    spectrogram_diff(&ma, &mb, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_plane(w: usize, h: usize, seed: u64) -> Plane {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Plane::new(w, h, (0..w * h).map(|_| r.gen::<f64>()).collect()).unwrap()
    }

    /// Direct O(n^4) summation, independent of the FFT path.
    fn naive_dft(p: &Plane) -> (usize, Vec<Complex64>) {
        let (w, h) = p.dims();
        let n = w.max(h);
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for v in 0..n {
            for u in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let phase = -2.0
                            * std::f64::consts::PI
                            * ((u * x) as f64 / n as f64 + (v * y) as f64 / n as f64);
                        acc += p.get(x, y) * Complex64::from_polar(1.0, phase);
                    }
                }
                out[v * n + u] = acc / (n * n) as f64;
            }
        }
        (n, out)
    }

    #[test]
    fn fft_matches_direct_summation() {
        for (w, h, seed) in [(8, 8, 1), (8, 5, 2), (3, 7, 3)] {
            let p = random_plane(w, h, seed);
            let (n, fast) = dft2(&p);
            let (_, slow) = naive_dft(&p);
            assert_eq!(n, w.max(h));
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn parseval() {
        let p = random_plane(8, 8, 4);
        let (n, f) = dft2(&p);
        let spectral: f64 = f.iter().map(|c| c.norm_sqr()).sum::<f64>() * (n * n) as f64;
        let spatial: f64 = p.samples().iter().map(|v| v * v).sum();
        assert!(((spectral - spatial) / spatial).abs() < 1e-9);
    }

    #[test]
    fn constant_plane_spectrum() {
        let v = 0.6;
        let map = dft_magnitude(&Plane::filled(8, 8, v));
        let c = 4;
        assert!((map.at(c, c) - ((1.0 + v) / 8.0).ln()).abs() < 1e-12);
        for vv in 0..8 {
            for u in 0..8 {
                if (u, vv) != (c, c) {
                    assert!((map.at(u, vv) - (1.0f64 / 8.0).ln()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn horizontal_cosine_peaks_on_axis() {
        let (n, k) = (32, 5);
        let p = Plane::from_fn(n, n, |x, _| {
            0.5 + 0.4 * (2.0 * std::f64::consts::PI * k as f64 * x as f64 / n as f64).cos()
        });
        let map = dft_magnitude(&p);
        let c = n / 2;
        let floor = (1.0f64 / n as f64).ln();
        let mut peaks = vec![];
        for v in 0..n {
            for u in 0..n {
                if (u, v) != (c, c) && map.at(u, v) > floor + 1e-6 {
                    peaks.push((u, v));
                }
            }
        }
        peaks.sort();
        assert_eq!(peaks, vec![(c - k, c), (c + k, c)]);
    }

    #[test]
    fn identical_maps_give_zero_and_swap_negates() {
        let a = dft_magnitude(&random_plane(16, 12, 5));
        let b = dft_magnitude(&random_plane(16, 12, 6));
        let z = spectrogram_diff(&a, &a, 11).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        let ab = spectrogram_diff(&a, &b, 11).unwrap();
        let ba = spectrogram_diff(&b, &a, 11).unwrap();
        for (x, y) in ab.values().iter().zip(ba.values()) {
            assert_eq!(*x, -y);
        }
        assert_eq!(ab.bins.len(), 16 / 2 + 1);
        assert!(ab.bins.windows(2).all(|w| w[0].0 < w[1].0));
        let other = dft_magnitude(&random_plane(8, 8, 7));
        assert!(spectrogram_diff(&a, &other, 11).is_err());
    }

    #[test]
    fn binning_counts_every_pixel_inside_half_side() {
        for n in [7, 8, 16, 33] {
            let (_, counts) = radial_bins(&vec![1.0; n * n], n);
            let c = (n / 2) as f64;
            let inside = (0..n * n)
                .filter(|k| ((k % n) as f64 - c).hypot((k / n) as f64 - c) < n as f64 / 2.0)
                .count();
            assert_eq!(counts.iter().sum::<usize>(), inside);
            assert_eq!(counts.len(), n / 2 + 1);
        }
    }

    #[test]
    fn hann_preserves_interior_mass() {
        let mut v = vec![0.0; 60];
        for (i, x) in v.iter_mut().enumerate().take(40).skip(20) {
            *x = (i as f64 * 0.37).sin() + 1.5;
        }
        let s = hann_smooth(&v, 11);
        let before: f64 = v.iter().sum();
        let after: f64 = s.iter().sum();
        assert!(((after - before) / before).abs() < 1e-9);
        let w = hann_window(11);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(w.iter().all(|&x| x > 0.0));
        // symmetric
        for i in 0..11 {
            assert!((w[i] - w[10 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_images_quantify_to_zero() {
        let p = random_plane(20, 14, 8);
        let img = RgbImage::new(p.clone(), random_plane(20, 14, 9), p).unwrap();
        let s = quantify_pair(&img, &img, DEFAULT_HANN_WINDOW).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
        let csv = s.to_csv();
        assert!(csv.starts_with("freq_fraction,delta\n"));
        assert!(csv.lines().nth(1).unwrap() == "0.00000000e0,0.00000000e0");
    }

    #[test]
    fn sig9_format() {
        assert_eq!(sig9(0.123456789123), "1.23456789e-1");
        assert_eq!(sig9(-2.0), "-2.00000000e0");
    }
}
