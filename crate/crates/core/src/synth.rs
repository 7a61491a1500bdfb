//! Synthetic targets with known chromatic distortion.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{metadata_to_json, ImageMetadata, Plane, RgbImage};
use crate::planes::{demosaic_bilinear, mosaic};
use crate::warp::{radial_map, sample_bilinear, Coefficients, Intrinsics};

pub const DEFAULT_WIDTH: usize = 1024;
pub const DEFAULT_HEIGHT: usize = 768;
pub const DEFAULT_CELL: usize = 32;

/// Red distortion of the standard corpus.
pub const DEFAULT_RG: Coefficients = Coefficients {
    a: 0.98,
    b: 0.01,
    c: -0.01,
    d: 0.0,
};

/// Blue distortion of the standard corpus, displaced the other way.
pub const DEFAULT_BG: Coefficients = Coefficients {
    a: 1.02,
    b: -0.01,
    c: 0.01,
    d: 0.0,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChequerSpec {
    pub width: usize,
    pub height: usize,
    pub cell: usize,
    pub fg: f64,
    pub bg: f64,
}

impl Default for ChequerSpec {
    fn default() -> Self {
        ChequerSpec {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            cell: DEFAULT_CELL,
            fg: 1.0,
            bg: 0.0,
        }
    }
}

impl ChequerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::ZeroDimensions);
        }
        if self.cell < 2 {
            return Err(Error::InvalidSettings(format!(
                "cell must be at least 2, got {}",
                self.cell
            )));
        }
        for v in [self.fg, self.bg] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidSettings(format!(
                    "intensity {v} outside [0, 1]"
                )));
            }
        }
        if self.fg == self.bg {
            return Err(Error::InvalidSettings("fg and bg must differ".into()));
        }
        Ok(())
    }
}

pub fn render_chequerboard(spec: &ChequerSpec) -> Result<RgbImage> {
    spec.validate()?;
    Ok(chequer_unchecked(
        spec.width,
        spec.height,
        spec.cell,
        spec.fg,
        spec.bg,
    ))
}

fn chequer_unchecked(w: usize, h: usize, cell: usize, fg: f64, bg: f64) -> RgbImage {
    let p = Plane::from_fn(w, h, |x, y| {
        if (x / cell + y / cell).is_multiple_of(2) {
            fg
        } else {
            bg
        }
    });
    RgbImage::grey(p)
}

/// Single-pixel chequerboard, outside what `ChequerSpec` accepts. Used as a
/// worst case for the sensor simulation.
pub fn pixel_chequerboard(width: usize, height: usize) -> RgbImage {
    chequer_unchecked(width, height, 1, 1.0, 0.0)
}

/// Warp R with `rg` and B with `bg` (bilinear); G is copied.
///
/// Sources outside the frame take the nearest edge sample, as if the scene
/// carried on past the border, so an expanding map leaves no black margin.
pub fn apply_lca(
    img: &RgbImage,
    rg: &Coefficients,
    bg: &Coefficients,
    intr: &Intrinsics,
) -> RgbImage {
    let (r, b) = crate::par::join(
        || warp_clamped(&img.r, rg, intr),
        || warp_clamped(&img.b, bg, intr),
    );
    RgbImage {
        r,
        g: img.g.clone(),
        b,
    }
}

fn warp_clamped(p: &Plane, c: &Coefficients, intr: &Intrinsics) -> Plane {
    let (w, h) = p.dims();
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    let mut out = vec![0.0; w * h];
    crate::par::for_each_row(&mut out, w, |y, row| {
        for (x, v) in row.iter_mut().enumerate() {
            let (sx, sy) = intr.source_point(x, y, c);
            *v = sample_bilinear(p, sx.clamp(0.0, xmax), sy.clamp(0.0, ymax)).unwrap_or(0.0);
        }
    });
    Plane::from_raw(w, h, out)
}

/// Round trip through an RGGB mosaic and bilinear demosaicing.
pub fn simulate_sensor(img: &RgbImage) -> Result<RgbImage> {
    Ok(demosaic_bilinear(&mosaic(img)?))
}

/// Smooth achromatic texture with detail at several scales and
/// orientations. Deterministic in its arguments.
pub fn procedural_texture(width: usize, height: usize) -> RgbImage {
    const WAVES: [(f64, f64, f64, f64); 6] = [
        // (period in px, angle, phase, amplitude)
        (41.0, 0.3, 0.0, 0.20),
        (23.0, 1.9, 1.1, 0.12),
        (13.0, 0.9, 2.3, 0.08),
        (67.0, 2.6, 0.7, 0.15),
        (17.0, 2.2, 4.0, 0.07),
        (97.0, 1.2, 5.1, 0.13),
    ];
    let amp: f64 = WAVES.iter().map(|w| w.3).sum();
    let p = Plane::from_fn(width, height, |x, y| {
        let v: f64 = WAVES
            .iter()
            .map(|&(period, ang, ph, a)| {
                let t = (x as f64 * ang.cos() + y as f64 * ang.sin()) * 2.0 * PI / period;
                a * (t + ph).sin()
            })
            .sum();
        0.5 + 0.5 * v / amp
    });
    RgbImage::grey(p)
}

/// Source radius `s` with `radial_map(s, c) == r`, by bisection on
/// `[0, hi]`. The map must be increasing on that interval.
pub fn invert_radial(r: f64, c: &Coefficients, hi: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if radial_map(mid, c) < r {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Samples `inverse` of `c` on `[0, 1]` and fits a quartic through them.
pub fn inverse_coefficients(c: &Coefficients, samples: usize) -> Coefficients {
    let pts: Vec<(f64, f64)> = (0..=samples)
        .map(|i| i as f64 / samples as f64)
        .map(|r| (r, invert_radial(r, c, 2.0)))
        .collect();
    crate::lensdb::fit_quartic(&pts)
}

/// Largest deviation from identity, in pixels, of `applied ∘ recovered`
/// at `samples` evenly spaced radii in `[0, r_norm]`.
///
/// Correcting with `recovered` reads the distorted plane at
/// `recovered(r)`, which in turn holds the original at
/// `applied(recovered(r))`.
pub fn composed_map_error(
    applied: &Coefficients,
    recovered: &Coefficients,
    r_norm: f64,
    samples: usize,
) -> f64 {
    (0..samples)
        .map(|i| i as f64 / (samples - 1).max(1) as f64)
        .map(|r| (radial_map(radial_map(r, recovered), applied) - r).abs() * r_norm)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub rg: Coefficients,
    pub bg: Coefficients,
}

/// Sidecar JSON for a synthetic image with the applied coefficients
/// recorded under `truth`.
pub fn sidecar_with_truth(meta: &ImageMetadata, truth: &Truth) -> Result<String> {
    let mut v: serde_json::Value = serde_json::from_str(&metadata_to_json(meta)?)?;
    if let serde_json::Value::Object(m) = &mut v {
        m.insert("truth".into(), serde_json::to_value(truth)?);
    }
    Ok(serde_json::to_string_pretty(&v)?)
}

pub fn write_sidecar_with_truth(
    meta: &ImageMetadata,
    truth: &Truth,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, sidecar_with_truth(meta, truth)?).map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Truth> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let t = v
        .get("truth")
        .ok_or_else(|| Error::MissingField("truth".into()))?;
    Ok(serde_json::from_value(t.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recover::objective;
    use crate::warp::{compute_mask, distort_plane, Interpolation};

    fn spec(w: usize, h: usize, cell: usize) -> ChequerSpec {
        ChequerSpec {
            width: w,
            height: h,
            cell,
            fg: 1.0,
            bg: 0.0,
        }
    }

    #[test]
    fn small_board_layout() {
        let img = render_chequerboard(&spec(4, 4, 2)).unwrap();
        let want = [
            1., 1., 0., 0., 1., 1., 0., 0., 0., 0., 1., 1., 0., 0., 1., 1.,
        ];
        assert_eq!(img.r.samples(), &want);
        assert_eq!(img.r, img.g);
        assert_eq!(img.g, img.b);
    }

    #[test]
    fn invalid_specs() {
        assert!(render_chequerboard(&spec(8, 8, 1)).is_err());
        assert!(render_chequerboard(&ChequerSpec {
            fg: 0.4,
            bg: 0.4,
            ..spec(8, 8, 2)
        })
        .is_err());
        assert!(render_chequerboard(&spec(0, 8, 2)).is_err());
    }

    #[test]
    fn rendering_is_pure() {
        let a = render_chequerboard(&spec(64, 48, 5)).unwrap();
        let b = render_chequerboard(&spec(64, 48, 5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn own_planes_have_zero_error() {
        let img = render_chequerboard(&spec(64, 48, 4)).unwrap();
        let intr = Intrinsics::for_dims(64, 48);
        assert_eq!(
            objective(&img.r, &img.g, &Coefficients::IDENTITY, &intr).unwrap(),
            0.0
        );
    }

    #[test]
    fn identity_lca_is_noop_and_green_is_kept() {
        let img = procedural_texture(80, 60);
        let intr = Intrinsics::for_dims(80, 60);
        assert_eq!(
            apply_lca(
                &img,
                &Coefficients::IDENTITY,
                &Coefficients::IDENTITY,
                &intr
            ),
            img
        );
        let out = apply_lca(&img, &DEFAULT_RG, &DEFAULT_BG, &intr);
        assert_eq!(out.g, img.g);
        assert_ne!(out.r, img.r);
        // inside the frame the warp is the ordinary bilinear one
        let plain = distort_plane(&img.r, &DEFAULT_RG, &intr, Interpolation::Bilinear);
        assert_eq!(out.r, plain);
        let wide = apply_lca(&img, &DEFAULT_BG, &DEFAULT_BG, &intr);
        assert!(wide.b.samples().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn bisection_inverts_the_map() {
        for r in [0.0, 0.1, 0.5, 0.9, 1.0] {
            let s = invert_radial(r, &DEFAULT_RG, 2.0);
            assert!((radial_map(s, &DEFAULT_RG) - r).abs() < 1e-14);
        }
    }

    fn warp_back_error(img: &RgbImage, skip: impl Fn(usize, usize) -> bool) -> f64 {
        let (w, h) = img.dims();
        let intr = Intrinsics::for_dims(w, h);
        let distorted = apply_lca(img, &DEFAULT_RG, &Coefficients::IDENTITY, &intr);
        // sample the distorted plane at the exact inverse radius
        let (mut sum, mut n) = (0.0, 0usize);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - intr.centre_x, y as f64 - intr.centre_y);
                let r = dx.hypot(dy) / intr.r_norm;
                if r > 0.9 || skip(x, y) {
                    continue;
                }
                let k = if r > 0.0 {
                    invert_radial(r, &DEFAULT_RG, 2.0) / r
                } else {
                    1.0 / DEFAULT_RG.a
                };
                let Some(v) =
                    sample_bilinear(&distorted.r, intr.centre_x + dx * k, intr.centre_y + dy * k)
                else {
                    continue;
                };
                sum += (v - img.r.get(x, y)).abs();
                n += 1;
            }
        }
        sum / n as f64
    }

    #[test]
    fn warping_back_with_the_inverse_restores_the_board() {
        let img = render_chequerboard(&ChequerSpec::default()).unwrap();
        let near_edge = |x: usize, y: usize| {
            let (u, v) = (x % DEFAULT_CELL, y % DEFAULT_CELL);
            u < 2 || v < 2 || u >= DEFAULT_CELL - 2 || v >= DEFAULT_CELL - 2
        };
        let away = warp_back_error(&img, near_edge);
        assert!(away < 0.01, "{away}");
        // two bilinear passes smear each hard edge over about a pixel
        let all = warp_back_error(&img, |_, _| false);
        assert!(all < 0.025, "{all}");
    }

    #[test]
    fn warping_back_restores_a_smooth_texture() {
        let err = warp_back_error(
            &procedural_texture(DEFAULT_WIDTH, DEFAULT_HEIGHT),
            |_, _| false,
        );
        assert!(err < 0.01, "{err}");
    }

    #[test]
    fn composed_error_of_exact_inverse_is_small() {
        let inv = inverse_coefficients(&DEFAULT_RG, 256);
        assert!(composed_map_error(&DEFAULT_RG, &inv, 640.0, 32) < 0.01);
        assert!(composed_map_error(&DEFAULT_RG, &Coefficients::IDENTITY, 640.0, 32) > 10.0);
    }

    #[test]
    fn sensor_keeps_constant_and_affine_images() {
        let c = RgbImage::grey(Plane::filled(16, 12, 0.3));
        assert_eq!(simulate_sensor(&c).unwrap(), c);
        let ramp = RgbImage::grey(Plane::from_fn(16, 12, |x, y| {
            0.02 * x as f64 + 0.03 * y as f64
        }));
        let out = simulate_sensor(&ramp).unwrap();
        for y in 1..11 {
            for x in 1..15 {
                for (a, b) in [(&out.r, &ramp.r), (&out.g, &ramp.g), (&out.b, &ramp.b)] {
                    assert!((a.get(x, y) - b.get(x, y)).abs() < 1e-12);
                }
            }
        }
        assert!(simulate_sensor(&RgbImage::grey(Plane::filled(5, 4, 0.0))).is_err());
    }

    #[test]
    fn pixel_board_through_sensor_matches_golden() {
        let out = simulate_sensor(&pixel_chequerboard(8, 6)).unwrap();
        let golden = include_bytes!("../tests/data/pixel_chequer_sensor.ppm");
        let (want, _) = crate::imgio::decode_pnm(golden).unwrap();
        assert_eq!(out, want);
    }

    #[test]
    fn truth_sidecar_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("board.lens.json");
        let meta = crate::imgio::parse_metadata(
            r#"{"lens_id":"synthetic","camera_id":"synth","focal_length_mm":18,"aperture_f":8,
                "focus_distance_mm":3100,"orientation":"top-left","width":16,"height":12,"lca_corrected":false}"#,
        )
        .unwrap();
        let truth = Truth {
            rg: DEFAULT_RG,
            bg: DEFAULT_BG,
        };
        write_sidecar_with_truth(&meta, &truth, &path).unwrap();
        assert_eq!(read_truth(&path).unwrap(), truth);
        assert_eq!(crate::imgio::read_metadata(&path).unwrap(), meta);
    }

    #[test]
    fn default_corpus_masks_are_large() {
        let intr = Intrinsics::for_dims(DEFAULT_WIDTH, DEFAULT_HEIGHT);
        let m = compute_mask((DEFAULT_WIDTH, DEFAULT_HEIGHT), &DEFAULT_BG, &intr);
        assert!(m.count() > DEFAULT_WIDTH * DEFAULT_HEIGHT / 2);
    }
}
