//! Radial distortion model and plane resampling.
//!
//! A plane is warped by gathering: every output pixel at normalised radius
//! `r` from the optical centre reads the input at radius `radial_map(r)`
//! along the same direction. Radii are normalised by half the image diagonal
//! so `r = 1` at the corners and coefficients transfer between image sizes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::imgio::{Plane, RgbImage};
use crate::par;

/// Quartic radial polynomial `a r + b r^2 + c r^3 + d r^4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Coefficients {
    pub const IDENTITY: Coefficients = Coefficients {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 0.0,
    };

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Coefficients { a, b, c, d }
    }

    pub fn to_array(self) -> [f64; 4] {
        self.into()
    }

    /// Radial magnification `radial_map(r) / r`, evaluated without dividing
    /// so it is well defined at the centre.
    #[inline]
    pub fn scale_at(&self, r: f64) -> f64 {
        self.a + r * (self.b + r * (self.c + r * self.d))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl From<[f64; 4]> for Coefficients {
    fn from(v: [f64; 4]) -> Self {
        Coefficients::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Coefficients> for [f64; 4] {
    fn from(c: Coefficients) -> Self {
        [c.a, c.b, c.c, c.d]
    }
}

/// Map a normalised radius through the polynomial.
#[inline]
pub fn radial_map(r: f64, c: &Coefficients) -> f64 {
    r * c.scale_at(r)
}

/// Optical centre and radius normalisation for one image geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub centre_x: f64,
    pub centre_y: f64,
    pub r_norm: f64,
}

impl Intrinsics {
    /// Geometric centre, radius normalised to the half diagonal.
    pub fn for_dims(width: usize, height: usize) -> Self {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        Intrinsics {
            centre_x: cx,
            centre_y: cy,
            r_norm: cx.hypot(cy).max(f64::MIN_POSITIVE),
        }
    }

    /// Decentred optics; the normalisation stays tied to the image size.
    pub fn with_centre(width: usize, height: usize, centre_x: f64, centre_y: f64) -> Self {
        Intrinsics {
            centre_x,
            centre_y,
            ..Intrinsics::for_dims(width, height)
        }
    }

    /// Source coordinate read by output pixel `(x, y)`.
    #[inline]
    pub fn source_point(&self, x: usize, y: usize, c: &Coefficients) -> (f64, f64) {
        let dx = x as f64 - self.centre_x;
        let dy = y as f64 - self.centre_y;
        let r = (dx * dx + dy * dy).sqrt() / self.r_norm;
        let s = c.scale_at(r);
        (self.centre_x + dx * s, self.centre_y + dy * s)
    }
}

/// Per-pixel validity: set where the warped sample lies inside the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask length mismatch");
        Mask {
            width,
            height,
            bits,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask::new(width, height, vec![true; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Set-wise intersection.
    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!(self.dims(), other.dims(), "mask dimension mismatch");
        Mask::new(
            self.width,
            self.height,
            self.bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a && *b)
                .collect(),
        )
    }

    /// Every bit set here is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Bilinear,
    Lanczos3,
}

#[inline]
fn in_bounds(p: &Plane, sx: f64, sy: f64) -> bool {
    sx >= 0.0 && sy >= 0.0 && sx <= (p.width() - 1) as f64 && sy <= (p.height() - 1) as f64
}

/// Bilinear sample, `None` outside `[0, w-1] x [0, h-1]`.
#[inline]
pub fn sample_bilinear(p: &Plane, sx: f64, sy: f64) -> Option<f64> {
    if !in_bounds(p, sx, sy) {
        return None;
    }
    let (w, h) = p.dims();
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let s = p.samples();
    let top = s[y0 * w + x0] * (1.0 - fx) + s[y0 * w + x1] * fx;
    let bottom = s[y1 * w + x0] * (1.0 - fx) + s[y1 * w + x1] * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

const LANCZOS_A: i64 = 3;

#[inline]
fn lanczos_kernel(t: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let a = LANCZOS_A as f64;
    if t.abs() >= a {
        return 0.0;
    }
    let pt = PI * t;
    a * pt.sin() * (pt / a).sin() / (pt * pt)
}

/// Six renormalised taps for fractional offset `f` from integer `i0`; tap
/// indices are clamped to `[0, len)`. A zero offset collapses to one tap.
#[inline]
fn lanczos_taps(i0: usize, f: f64, len: usize) -> ([usize; 6], [f64; 6]) {
    let mut idx = [i0; 6];
    let mut w = [0.0; 6];
    if f == 0.0 {
        w[0] = 1.0;
        return (idx, w);
    }
    let mut sum = 0.0;
    for k in 0..6 {
        let off = k as i64 - (LANCZOS_A - 1);
        let i = (i0 as i64 + off).clamp(0, len as i64 - 1) as usize;
        idx[k] = i;
        w[k] = lanczos_kernel(f - off as f64);
        sum += w[k];
    }
    for v in &mut w {
        *v /= sum;
    }
    (idx, w)
}

/// 6x6 windowed-sinc sample, clamped to `[0, 1]`; `None` outside the plane.
pub fn sample_lanczos3(p: &Plane, sx: f64, sy: f64) -> Option<f64> {
    if !in_bounds(p, sx, sy) {
        return None;
    }
    let (w, h) = p.dims();
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let (xi, xw) = lanczos_taps(x0, sx - x0 as f64, w);
    let (yi, yw) = lanczos_taps(y0, sy - y0 as f64, h);
    let s = p.samples();
    let mut acc = 0.0;
    for (&y, &wy) in yi.iter().zip(&yw) {
        if wy == 0.0 {
            continue;
        }
        let row = &s[y * w..(y + 1) * w];
        let mut racc = 0.0;
        for (&x, &wx) in xi.iter().zip(&xw) {
            if wx != 0.0 {
                racc += row[x] * wx;
            }
        }
        acc += racc * wy;
    }
    Some(acc.clamp(0.0, 1.0))
}

/// Warp a plane by the radial polynomial. Pixels whose source falls outside
/// the input read as 0; [`compute_mask`] marks them.
pub fn distort_plane(
    p: &Plane,
    c: &Coefficients,
    intr: &Intrinsics,
    interp: Interpolation,
) -> Plane {
    let (w, h) = p.dims();
    let mut out = vec![0.0; w * h];
    par::for_each_row(&mut out, w, |y, row| {
        for (x, v) in row.iter_mut().enumerate() {
            let (sx, sy) = intr.source_point(x, y, c);
            let s = match interp {
                Interpolation::Bilinear => sample_bilinear(p, sx, sy),
                Interpolation::Lanczos3 => sample_lanczos3(p, sx, sy),
            };
            *v = s.unwrap_or(0.0);
        }
    });
    Plane::from_raw(w, h, out)
}

/// Validity mask for a warp of a `width x height` plane.
pub fn compute_mask(dims: (usize, usize), c: &Coefficients, intr: &Intrinsics) -> Mask {
    let (w, h) = dims;
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    let mut bits = vec![false; w * h];
    par::for_each_row(&mut bits, w, |y, row| {
        for (x, b) in row.iter_mut().enumerate() {
            let (sx, sy) = intr.source_point(x, y, c);
            *b = sx >= 0.0 && sy >= 0.0 && sx <= xmax && sy <= ymax;
        }
    });
    Mask::new(w, h, bits)
}

/// Final correction: R and B resampled with Lanczos3, G passed through.
pub fn correct_image(
    img: &RgbImage,
    rg: &Coefficients,
    bg: &Coefficients,
    intr: &Intrinsics,
) -> RgbImage {
    RgbImage {
        r: distort_plane(&img.r, rg, intr, Interpolation::Lanczos3),
        g: img.g.clone(),
        b: distort_plane(&img.b, bg, intr, Interpolation::Lanczos3),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_plane(w: usize, h: usize, seed: u64) -> Plane {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Plane::new(w, h, (0..w * h).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn radial_map_values() {
        assert_eq!(radial_map(0.37, &Coefficients::IDENTITY), 0.37);
        let c = Coefficients::new(0.98, 0.01, -0.01, 0.0);
        assert!((radial_map(1.0, &c) - 0.98).abs() < 1e-15);
        assert_eq!(radial_map(0.0, &c), 0.0);
    }

    proptest! {
        #[test]
        fn radial_map_matches_naive_powers(
            r in 0.0f64..1.5,
            a in 0.9f64..1.1, b in -0.1f64..0.1, c in -0.1f64..0.1, d in -0.1f64..0.1
        ) {
            let coeffs = Coefficients::new(a, b, c, d);
            let naive = a * r + b * r.powi(2) + c * r.powi(3) + d * r.powi(4);
            let got = radial_map(r, &coeffs);
            prop_assert!((got - naive).abs() <= 1e-15 * naive.abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn warped_samples_stay_in_unit_range(
            seed in any::<u64>(),
            a in 0.95f64..1.05, b in -0.05f64..0.05, c in -0.05f64..0.05, d in -0.05f64..0.05,
        ) {
            let p = random_plane(13, 9, seed);
            let intr = Intrinsics::for_dims(13, 9);
            let coeffs = Coefficients::new(a, b, c, d);
            for interp in [Interpolation::Bilinear, Interpolation::Lanczos3] {
                let out = distort_plane(&p, &coeffs, &intr, interp);
                prop_assert!(out.samples().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn identity_warp_is_exact() {
        for (w, h) in [(16, 16), (17, 9), (1, 5)] {
            let p = random_plane(w, h, 3);
            let intr = Intrinsics::for_dims(w, h);
            assert_eq!(
                distort_plane(&p, &Coefficients::IDENTITY, &intr, Interpolation::Bilinear),
                p
            );
            assert_eq!(
                distort_plane(&p, &Coefficients::IDENTITY, &intr, Interpolation::Lanczos3),
                p
            );
            assert_eq!(
                compute_mask((w, h), &Coefficients::IDENTITY, &intr).count(),
                w * h
            );
        }
    }

    #[test]
    fn constant_plane_stays_constant_on_mask() {
        let p = Plane::filled(40, 30, 0.42);
        let intr = Intrinsics::for_dims(40, 30);
        let c = Coefficients::new(1.03, -0.02, 0.01, 0.004);
        let mask = compute_mask((40, 30), &c, &intr);
        for interp in [Interpolation::Bilinear, Interpolation::Lanczos3] {
            let out = distort_plane(&p, &c, &intr, interp);
            for (v, m) in out.samples().iter().zip(mask.bits()) {
                if *m {
                    assert!((v - 0.42).abs() < 1e-12);
                } else {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn bright_pixel_moves_outward_when_a_below_one() {
        // Output radius r reads source radius 0.98 r, so a source dot at r0
        // appears at r0 / 0.98.
        let (w, h) = (101, 101);
        let intr = Intrinsics::for_dims(w, h);
        let (sx, sy) = (50 + 40, 50);
        let p = Plane::from_fn(w, h, |x, y| if (x, y) == (sx, sy) { 1.0 } else { 0.0 });
        let out = distort_plane(
            &p,
            &Coefficients::new(0.98, 0.0, 0.0, 0.0),
            &intr,
            Interpolation::Bilinear,
        );
        let (mut m, mut mx, mut my) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let v = out.get(x, y);
                m += v;
                mx += v * x as f64;
                my += v * y as f64;
            }
        }
        let cx = mx / m - intr.centre_x;
        let cy = my / m - intr.centre_y;
        let radius = cx.hypot(cy);
        assert!(
            (radius - 40.0 / 0.98).abs() < 0.5,
            "centroid radius {radius}"
        );
        assert!(cy.abs() < 0.5);
    }

    #[test]
    fn mask_clears_corners_for_expanding_map() {
        let (w, h) = (64, 48);
        let intr = Intrinsics::for_dims(w, h);
        let mask = compute_mask((w, h), &Coefficients::new(1.04, 0.0, 0.0, 0.0), &intr);
        for (x, y) in [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)] {
            assert!(!mask.get(x, y));
        }
        assert!(mask.get(w / 2, h / 2));
        // Along the horizontal axis the bound is |dx| * 1.04 <= 31.5.
        let y = 24; // dy = 0.5, negligible for this bound check
        for x in 0..w {
            let dx = x as f64 - intr.centre_x;
            let (sx, _) = intr.source_point(x, y, &Coefficients::new(1.04, 0.0, 0.0, 0.0));
            assert_eq!(mask.get(x, y), (0.0..=63.0).contains(&sx), "x={x} dx={dx}");
        }
    }

    #[test]
    fn mask_is_four_fold_symmetric_about_geometric_centre() {
        let (w, h) = (40, 26);
        let intr = Intrinsics::for_dims(w, h);
        let mask = compute_mask((w, h), &Coefficients::new(1.03, 0.02, -0.01, 0.01), &intr);
        for y in 0..h {
            for x in 0..w {
                let v = mask.get(x, y);
                assert_eq!(v, mask.get(w - 1 - x, y));
                assert_eq!(v, mask.get(x, h - 1 - y));
            }
        }
    }

    #[test]
    fn masks_shrink_as_magnification_grows() {
        let (w, h) = (50, 30);
        let intr = Intrinsics::for_dims(w, h);
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.005).collect();
        for pair in grid.windows(2) {
            for sign in [1.0, -1.0] {
                let inner = compute_mask(
                    (w, h),
                    &Coefficients::new(1.0 + sign * pair[0], 0.0, 0.0, 0.0),
                    &intr,
                );
                let outer = compute_mask(
                    (w, h),
                    &Coefficients::new(1.0 + sign * pair[1], 0.0, 0.0, 0.0),
                    &intr,
                );
                assert!(outer.is_subset_of(&inner));
            }
        }
    }

    #[test]
    fn warp_commutes_with_quarter_turn() {
        let n = 21;
        let p = random_plane(n, n, 11);
        // rotated(x, y) = p(y, n-1-x)
        let rot = |q: &Plane| Plane::from_fn(n, n, |x, y| q.get(y, n - 1 - x));
        let intr = Intrinsics::for_dims(n, n);
        let c = Coefficients::new(0.97, 0.03, -0.02, 0.01);
        let a = distort_plane(&rot(&p), &c, &intr, Interpolation::Bilinear);
        let b = rot(&distort_plane(&p, &c, &intr, Interpolation::Bilinear));
        let max = a
            .samples()
            .iter()
            .zip(b.samples())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max < 1e-12, "max deviation {max}");
    }

    #[test]
    fn correct_image_leaves_green_untouched() {
        let img = RgbImage::new(
            random_plane(30, 20, 1),
            random_plane(30, 20, 2),
            random_plane(30, 20, 3),
        )
        .unwrap();
        let intr = Intrinsics::for_dims(30, 20);
        let out = correct_image(
            &img,
            &Coefficients::new(1.02, 0.01, 0.0, -0.01),
            &Coefficients::new(0.97, 0.0, 0.02, 0.0),
            &intr,
        );
        assert_eq!(out.g, img.g);
        assert_ne!(out.r, img.r);
        let same = correct_image(
            &img,
            &Coefficients::IDENTITY,
            &Coefficients::IDENTITY,
            &intr,
        );
        assert_eq!(same, img);
    }

    #[test]
    fn lanczos_taps_sum_to_one() {
        for f in [0.1, 0.25, 0.5, 0.9] {
            let (_, w) = lanczos_taps(10, f, 40);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }
}
