//! Raster and sidecar-metadata ingestion/egress.
//!
//! Rasters are binary Netpbm: P6 (RGB) and P5 (greyscale, replicated into all
//! three planes on read), maxval up to 65535 with 16-bit samples big-endian.
//! Samples are normalised to `[0, 1]` on read by dividing by maxval.
//!
//! Lens metadata lives in a JSON sidecar next to the image
//! (`photo.ppm` -> `photo.lens.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::warp::{Coefficients, Intrinsics};

/// A single-channel raster of intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimensions);
        }
        if data.len() != width * height {
            return Err(Error::BufferLength {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::SampleRange { index, value });
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    /// Panics on zero dimensions.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "plane dimensions must be non-zero");
        Plane {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    /// Build a plane from a per-pixel function; values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "plane dimensions must be non-zero");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    /// Callers guarantee the length and range invariants.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Plane {
            width,
            height,
            data,
        }
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

    pub fn samples(&self) -> &[f64] {
        &self.data
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Multiply every sample by `factor`, clamping to `[0, 1]`.
    pub fn scaled(&self, factor: f64) -> Plane {
        Plane::from_raw(
            self.width,
            self.height,
            self.data
                .iter()
                .map(|v| (v * factor).clamp(0.0, 1.0))
                .collect(),
        )
    }

    pub(crate) fn check_same_dims(&self, other: &Plane) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}

/// Three colour planes of identical dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub r: Plane,
    pub g: Plane,
    pub b: Plane,
}

impl RgbImage {
    pub fn new(r: Plane, g: Plane, b: Plane) -> Result<Self> {
        r.check_same_dims(&g)?;
        r.check_same_dims(&b)?;
        Ok(RgbImage { r, g, b })
    }

    /// Greyscale image with the same plane in all three channels.
    pub fn grey(p: Plane) -> Self {
        RgbImage {
            r: p.clone(),
            g: p.clone(),
            b: p,
        }
    }

    pub fn width(&self) -> usize {
        self.g.width()
    }

    pub fn height(&self) -> usize {
        self.g.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.g.dims()
    }
}

/// Stored sample depth of a raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(BitDepth::Eight),
            16 => Some(BitDepth::Sixteen),
            _ => None,
        }
    }
}

fn skip_ws_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn header_int(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    *pos = skip_ws_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::UnsupportedFormat("malformed Netpbm header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::UnsupportedFormat("header value out of range".into()))
}

/// Decode a binary P5/P6 raster. Returns the image and the depth it was
/// stored at (maxval < 256 is one byte per sample, otherwise two).
pub fn decode_pnm(bytes: &[u8]) -> Result<(RgbImage, BitDepth)> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::UnsupportedFormat("not a Netpbm file".into()));
    }
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "Netpbm variant P{} (only binary P5/P6)",
                other as char
            )))
        }
    };
    let mut pos = 2;
    let width = header_int(bytes, &mut pos)? as usize;
    let height = header_int(bytes, &mut pos)? as usize;
    let maxval = header_int(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimensions);
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Truncated {
            expected: 1,
            found: 0,
        });
    }
    pos += 1;

    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let n = width * height;
    let expected = n * channels * bytes_per_sample;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let sample = |i: usize| -> f64 {
        let v = if bytes_per_sample == 1 {
            payload[i] as u32
        } else {
            u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]) as u32
        };
        v.min(maxval) as f64 / maxval as f64
    };

    let depth = if bytes_per_sample == 1 {
        BitDepth::Eight
    } else {
        BitDepth::Sixteen
    };
    let image = if channels == 1 {
        RgbImage::grey(Plane::from_raw(width, height, (0..n).map(sample).collect()))
    } else {
        let plane =
            |c: usize| Plane::from_raw(width, height, (0..n).map(|i| sample(3 * i + c)).collect());
        RgbImage {
            r: plane(0),
            g: plane(1),
            b: plane(2),
        }
    };
    Ok((image, depth))
}

#[inline]
fn quantise(v: f64, maxval: u32) -> u32 {
    // round half up
    ((v.clamp(0.0, 1.0) * maxval as f64) + 0.5).floor() as u32
}

/// Encode as binary P6 at the requested depth.
pub fn encode_pnm(img: &RgbImage, depth: BitDepth) -> Vec<u8> {
    let (w, h) = img.dims();
    let maxval = depth.maxval();
    let header = format!("P6\n{w} {h}\n{maxval}\n");
    let bps = if depth == BitDepth::Eight { 1 } else { 2 };
    let mut out = Vec::with_capacity(header.len() + w * h * 3 * bps);
    out.extend_from_slice(header.as_bytes());
    let (r, g, b) = (img.r.samples(), img.g.samples(), img.b.samples());
    for i in 0..w * h {
        for v in [r[i], g[i], b[i]] {
            let q = quantise(v, maxval);
            match depth {
                BitDepth::Eight => out.push(q as u8),
                BitDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
            }
        }
    }
    out
}

/// Read a raster and report the depth it was stored at.
pub fn read_raster(path: impl AsRef<Path>) -> Result<(RgbImage, BitDepth)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    read_raster(path).map(|(img, _)| img)
}

pub fn write_image(img: &RgbImage, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(img, depth)).map_err(|e| Error::io(path, e))
}

/// EXIF-style image orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    #[default]
    TopLeft,
    TopRight,
    BottomRight,
    BottomLeft,
    LeftTop,
    RightTop,
    RightBottom,
    LeftBottom,
}

/// Lens and geometry metadata carried alongside an image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetadata {
    pub lens_id: String,
    pub camera_id: String,
    pub focal_length: f64,
    pub aperture: f64,
    pub focus_distance: f64,
    pub orientation: Orientation,
    pub width: usize,
    pub height: usize,
    pub lca_corrected: bool,
    pub centre_x: Option<f64>,
    pub centre_y: Option<f64>,
    pub coeffs_rg: Option<Coefficients>,
    pub coeffs_bg: Option<Coefficients>,
}

impl ImageMetadata {
    pub fn lens_params(&self) -> crate::lensdb::LensParams {
        crate::lensdb::LensParams {
            lens_id: self.lens_id.clone(),
            focal_length: self.focal_length,
            aperture: self.aperture,
            focus_distance: self.focus_distance,
        }
    }

    /// Warp geometry for this image; a missing centre defaults to the
    /// geometric one.
    pub fn intrinsics(&self) -> Intrinsics {
        let d = Intrinsics::for_dims(self.width, self.height);
        Intrinsics::with_centre(
            self.width,
            self.height,
            self.centre_x.unwrap_or(d.centre_x),
            self.centre_y.unwrap_or(d.centre_y),
        )
    }

    pub fn matches_dims(&self, img: &RgbImage) -> bool {
        (self.width, self.height) == img.dims()
    }
}

/// On-disk form. Everything is optional so that absent fields can be
/// reported by name rather than as a generic parse failure.
#[derive(Debug, Default, Serialize, Deserialize)]
struct SidecarRepr {
    lens_id: Option<String>,
    camera_id: Option<String>,
    focal_length_mm: Option<f64>,
    aperture_f: Option<f64>,
    focus_distance_mm: Option<f64>,
    #[serde(default)]
    orientation: Orientation,
    width: Option<usize>,
    height: Option<usize>,
    #[serde(default)]
    lca_corrected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    centre_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    centre_y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coeffs_rg: Option<Coefficients>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coeffs_bg: Option<Coefficients>,
}

impl From<&ImageMetadata> for SidecarRepr {
    fn from(m: &ImageMetadata) -> Self {
        SidecarRepr {
            lens_id: Some(m.lens_id.clone()),
            camera_id: Some(m.camera_id.clone()),
            focal_length_mm: Some(m.focal_length),
            aperture_f: Some(m.aperture),
            focus_distance_mm: Some(m.focus_distance),
            orientation: m.orientation,
            width: Some(m.width),
            height: Some(m.height),
            lca_corrected: m.lca_corrected,
            centre_x: m.centre_x,
            centre_y: m.centre_y,
            coeffs_rg: m.coeffs_rg,
            coeffs_bg: m.coeffs_bg,
        }
    }
}

impl TryFrom<SidecarRepr> for ImageMetadata {
    type Error = Error;

    fn try_from(r: SidecarRepr) -> Result<Self> {
        fn req<T>(v: Option<T>, name: &str) -> Result<T> {
            v.ok_or_else(|| Error::MissingField(name.to_string()))
        }
        fn positive(v: f64, name: &str) -> Result<f64> {
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(Error::InvalidMetadata(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        }
        Ok(ImageMetadata {
            lens_id: req(r.lens_id, "lens_id")?,
            camera_id: req(r.camera_id, "camera_id")?,
            focal_length: positive(
                req(r.focal_length_mm, "focal_length_mm")?,
                "focal_length_mm",
            )?,
            aperture: positive(req(r.aperture_f, "aperture_f")?, "aperture_f")?,
            focus_distance: positive(
                req(r.focus_distance_mm, "focus_distance_mm")?,
                "focus_distance_mm",
            )?,
            orientation: r.orientation,
            width: req(r.width, "width")?,
            height: req(r.height, "height")?,
            lca_corrected: r.lca_corrected,
            centre_x: r.centre_x,
            centre_y: r.centre_y,
            coeffs_rg: r.coeffs_rg,
            coeffs_bg: r.coeffs_bg,
        })
    }
}

/// `photo.ppm` -> `photo.lens.json`.
pub fn sidecar_path(image_path: impl AsRef<Path>) -> PathBuf {
    image_path.as_ref().with_extension("lens.json")
}

pub fn parse_metadata(text: &str) -> Result<ImageMetadata> {
    let repr: SidecarRepr = serde_json::from_str(text)?;
    repr.try_into()
}

pub fn metadata_to_json(meta: &ImageMetadata) -> Result<String> {
    Ok(serde_json::to_string_pretty(&SidecarRepr::from(meta))?)
}

pub fn read_metadata(path: impl AsRef<Path>) -> Result<ImageMetadata> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metadata(&text)
}

/// Write a sidecar as-is.
pub fn save_metadata(meta: &ImageMetadata, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = metadata_to_json(meta)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write a sidecar for a corrected image: sets the corrected flag and embeds
/// the applied coefficients.
pub fn write_metadata(
    meta: &ImageMetadata,
    coeffs_rg: Coefficients,
    coeffs_bg: Coefficients,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut m = meta.clone();
    m.lca_corrected = true;
    m.coeffs_rg = Some(coeffs_rg);
    m.coeffs_bg = Some(coeffs_bg);
    save_metadata(&m, path)
}
