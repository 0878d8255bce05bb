//! Photometric augmentation cascade with recorded parameters.
//!
//! The cascade applies, in order: random contrast, brightness, saturation,
//! lighting, and per-annotation box erase. Every sampled value is recorded in
//! an [`AppliedParams`] so a run can be replayed bit-exactly.
//!
//! Per-pixel formulas (all channel math in f64, rounded to nearest and
//! clamped to `[0, 255]` after each stage):
//!
//! * contrast: `p' = mean_gray + f * (p - mean_gray)` with `mean_gray` the
//!   image mean of `gray(p) = 0.299 R + 0.587 G + 0.114 B`;
//! * brightness: `p' = f * p`;
//! * saturation: `p' = gray(p) + f * (p - gray(p))` per pixel;
//! * lighting: per-channel additive shift `scale * (basis . alpha)` with
//!   `alpha` three standard-normal draws and an identity channel basis by
//!   default;
//! * erase: for each ground-truth box, with configurable probability, a
//!   random sub-rectangle (area fraction and aspect drawn from the
//!   configured ranges, fully inside the box) is filled with uniform noise.
//!
//! Neutral parameters (factor 1.0, zero shift, no erase) leave the raster
//! bit-identical: neutral stages are skipped rather than computed.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng;

/// Row-major 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain(format!(
                "raster dims {width}x{height} not positive"
            )));
        }
        let expect = width as usize * height as usize * 3;
        if pixels.len() != expect {
            return Err(Error::domain(format!(
                "pixel buffer holds {} bytes, expected {expect}",
                pixels.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            pixels.extend_from_slice(&rgb);
        }
        Raster::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.idx(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.idx(x, y);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Binary PPM (P6, maxval 255).
    pub fn write_ppm_to(&self, w: &mut impl Write) -> io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_ppm_to(&mut buf).expect("vec write cannot fail");
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm_from(r: &mut impl Read) -> Result<Self> {
        let mut data = Vec::new();
        r.read_to_end(&mut data)
            .map_err(|e| Error::io("<stream>", e))?;
        Raster::parse_ppm(&data)
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        Raster::parse_ppm(&data)
    }

    fn parse_ppm(data: &[u8]) -> Result<Self> {
        fn bad(offset: usize, message: &str) -> Error {
            Error::Parse {
                offset,
                line: 0,
                column: 0,
                message: message.to_string(),
            }
        }
        // Header tokens separated by whitespace; '#' starts a comment.
        let mut pos = 0usize;
        let mut token = |data: &[u8]| -> Result<(usize, String)> {
            while pos < data.len() {
                match data[pos] {
                    b'#' => {
                        while pos < data.len() && data[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    c if c.is_ascii_whitespace() => pos += 1,
                    _ => break,
                }
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad(start, "unexpected end of header"));
            }
            let s = std::str::from_utf8(&data[start..pos])
                .map_err(|_| bad(start, "non-ascii header token"))?;
            Ok((start, s.to_string()))
        };

        let (off, magic) = token(data)?;
        if magic != "P6" {
            return Err(bad(off, "not a P6 raster"));
        }
        let mut dims = [0u32; 3];
        for d in &mut dims {
            let (off, tok) = token(data)?;
            *d = tok
                .parse()
                .map_err(|_| bad(off, "invalid integer in header"))?;
        }
        if dims[2] != 255 {
            return Err(bad(0, "only maxval 255 is supported"));
        }
        pos += 1; // single whitespace byte after maxval
        let expect = dims[0] as usize * dims[1] as usize * 3;
        if data.len() < pos + expect {
            return Err(bad(data.len(), "truncated pixel data"));
        }
        Raster::new(dims[0], dims[1], data[pos..pos + expect].to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub contrast_range: [f64; 2],
    pub brightness_range: [f64; 2],
    pub saturation_range: [f64; 2],
    pub lighting_scale: f64,
    /// Channel basis for the lighting shift; identity applies an independent
    /// per-channel jitter, any other 3x3 matrix mixes channels.
    pub lighting_basis: [[f64; 3]; 3],
    pub erase_area_range: [f64; 2],
    pub erase_aspect_range: [f64; 2],
    pub erase_probability: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            contrast_range: [0.5, 1.5],
            brightness_range: [0.5, 1.5],
            saturation_range: [0.5, 1.5],
            lighting_scale: 1.2,
            lighting_basis: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            erase_area_range: [0.4, 0.7],
            erase_aspect_range: [0.3, 3.3],
            erase_probability: 0.5,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// Ranges whose endpoints pin every stage to its neutral value.
    pub fn neutral(seed: u64) -> Self {
        AugmentSpec {
            contrast_range: [1.0, 1.0],
            brightness_range: [1.0, 1.0],
            saturation_range: [1.0, 1.0],
            lighting_scale: 0.0,
            erase_probability: 0.0,
            seed,
            ..AugmentSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("contrast_range", self.contrast_range),
            ("brightness_range", self.brightness_range),
            ("saturation_range", self.saturation_range),
            ("erase_area_range", self.erase_area_range),
            ("erase_aspect_range", self.erase_aspect_range),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::domain(format!(
                    "{name} = [{lo}, {hi}] must be positive with lo <= hi"
                )));
            }
        }
        if self.erase_area_range[1] > 1.0 {
            return Err(Error::domain("erase area fraction cannot exceed 1"));
        }
        if !(self.lighting_scale >= 0.0 && self.lighting_scale.is_finite()) {
            return Err(Error::domain("lighting_scale must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.erase_probability) {
            return Err(Error::domain("erase_probability outside [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EraseRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    /// Seed of the noise fill, kept so replay regenerates identical bytes.
    pub noise_seed: u64,
}

/// Every value sampled by one augmentation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedParams {
    pub width: u32,
    pub height: u32,
    pub contrast_factor: f64,
    pub brightness_factor: f64,
    pub saturation_factor: f64,
    pub lighting_shift: [f64; 3],
    /// One entry per input box, in input order.
    pub erases: Vec<Option<EraseRect>>,
}

impl AppliedParams {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("params serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            offset: 0,
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

fn gray(rgb: [u8; 3]) -> f64 {
    0.299 * f64::from(rgb[0]) + 0.587 * f64::from(rgb[1]) + 0.114 * f64::from(rgb[2])
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn check_boxes_in_bounds(img: &Raster, boxes: &[BBox]) -> Result<()> {
    for (i, b) in boxes.iter().enumerate() {
        if !b.is_valid()
            || b.x1 < 0.0
            || b.y1 < 0.0
            || b.x2 > f64::from(img.width)
            || b.y2 > f64::from(img.height)
        {
            return Err(Error::domain(format!(
                "box {i} ({}, {}, {}, {}) outside {}x{} image",
                b.x1, b.y1, b.x2, b.y2, img.width, img.height
            )));
        }
    }
    Ok(())
}

/// Integer rectangle dimensions for the target area and aspect inside a
/// `bw x bh` pixel extent. Area error beyond one pixel is minimized first,
/// aspect deviation second, so the erased fraction stays within a pixel of
/// the sampled one whenever the box geometry allows it.
fn erase_rect_dims(target: f64, aspect: f64, bw: i64, bh: i64) -> (i64, i64) {
    let mut best = (f64::INFINITY, f64::INFINITY, 1i64, 1i64);
    for iw in 1..=bw {
        let ih = ((target / iw as f64).round() as i64).clamp(1, bh);
        let area_err = ((iw * ih) as f64 - target).abs();
        let beyond_tolerance = (area_err - 1.0).max(0.0);
        let aspect_dist = ((iw as f64 / ih as f64) / aspect).ln().abs();
        let key = (beyond_tolerance, aspect_dist, iw, ih);
        if (key.0, key.1, key.2) < (best.0, best.1, best.2) {
            best = key;
        }
    }
    (best.2, best.3)
}

fn sample_erase(rng: &mut ChaCha8Rng, b: &BBox, spec: &AugmentSpec) -> Option<EraseRect> {
    // Integer pixel extent fully inside the (possibly fractional) box.
    let bx0 = b.x1.ceil() as i64;
    let by0 = b.y1.ceil() as i64;
    let bx1 = b.x2.floor() as i64;
    let by1 = b.y2.floor() as i64;
    let (bw, bh) = (bx1 - bx0, by1 - by0);
    if bw < 1 || bh < 1 {
        return None;
    }

    let area_frac = rng.random_range(spec.erase_area_range[0]..=spec.erase_area_range[1]);
    let aspect = rng.random_range(spec.erase_aspect_range[0]..=spec.erase_aspect_range[1]);
    let (iw, ih) = erase_rect_dims(area_frac * b.area(), aspect, bw, bh);

    let x = rng.random_range(bx0..=bx1 - iw);
    let y = rng.random_range(by0..=by1 - ih);
    Some(EraseRect {
        x: x as u32,
        y: y as u32,
        w: iw as u32,
        h: ih as u32,
        noise_seed: rng.random(),
    })
}

/// Apply the cascade, sampling all parameters from `spec.seed`.
///
/// `(img, boxes, spec)` fully determines the output.
pub fn augment_image(
    img: &Raster,
    boxes: &[BBox],
    spec: &AugmentSpec,
) -> Result<(Raster, AppliedParams)> {
    spec.validate()?;
    check_boxes_in_bounds(img, boxes)?;

    let mut rng = rng::stream(spec.seed, "augment", 0);
    let contrast_factor = rng.random_range(spec.contrast_range[0]..=spec.contrast_range[1]);
    let brightness_factor = rng.random_range(spec.brightness_range[0]..=spec.brightness_range[1]);
    let saturation_factor = rng.random_range(spec.saturation_range[0]..=spec.saturation_range[1]);

    let alpha: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let lighting_shift: [f64; 3] = std::array::from_fn(|c| {
        spec.lighting_scale
            * (0..3)
                .map(|j| spec.lighting_basis[c][j] * alpha[j])
                .sum::<f64>()
    });

    let erases = boxes
        .iter()
        .map(|b| {
            if spec.erase_probability > 0.0 && rng.random_bool(spec.erase_probability) {
                sample_erase(&mut rng, b, spec)
            } else {
                None
            }
        })
        .collect();

    let params = AppliedParams {
        width: img.width,
        height: img.height,
        contrast_factor,
        brightness_factor,
        saturation_factor,
        lighting_shift,
        erases,
    };
    let out = apply_params(img, &params)?;
    Ok((out, params))
}

/// Re-run a recorded augmentation. Replaying on the original input raster
/// reproduces the original output bit for bit.
pub fn replay_augment(img: &Raster, params: &AppliedParams) -> Result<Raster> {
    if img.width != params.width || img.height != params.height {
        return Err(Error::domain(format!(
            "params recorded for {}x{}, raster is {}x{}",
            params.width, params.height, img.width, img.height
        )));
    }
    apply_params(img, params)
}

fn apply_params(img: &Raster, p: &AppliedParams) -> Result<Raster> {
    for rect in p.erases.iter().flatten() {
        if rect.w == 0
            || rect.h == 0
            || u64::from(rect.x) + u64::from(rect.w) > u64::from(img.width)
            || u64::from(rect.y) + u64::from(rect.h) > u64::from(img.height)
        {
            return Err(Error::domain(format!(
                "erase rect ({}, {}, {}, {}) outside {}x{} image",
                rect.x, rect.y, rect.w, rect.h, img.width, img.height
            )));
        }
    }

    let mut out = img.clone();

    if p.contrast_factor != 1.0 {
        let n = (out.width as usize * out.height as usize) as f64;
        let mean: f64 = out
            .pixels
            .chunks_exact(3)
            .map(|c| gray([c[0], c[1], c[2]]))
            .sum::<f64>()
            / n;
        for v in &mut out.pixels {
            *v = quantize(mean + p.contrast_factor * (f64::from(*v) - mean));
        }
    }

    if p.brightness_factor != 1.0 {
        for v in &mut out.pixels {
            *v = quantize(p.brightness_factor * f64::from(*v));
        }
    }

    if p.saturation_factor != 1.0 {
        for c in out.pixels.chunks_exact_mut(3) {
            let g = gray([c[0], c[1], c[2]]);
            for v in c {
                *v = quantize(g + p.saturation_factor * (f64::from(*v) - g));
            }
        }
    }

    if p.lighting_shift != [0.0; 3] {
        for c in out.pixels.chunks_exact_mut(3) {
            for (v, shift) in c.iter_mut().zip(p.lighting_shift) {
                *v = quantize(f64::from(*v) + shift);
            }
        }
    }

    for rect in p.erases.iter().flatten() {
        let mut noise = ChaCha8Rng::seed_from_u64(rect.noise_seed);
        for y in rect.y..rect.y + rect.h {
            for x in rect.x..rect.x + rect.w {
                out.set_pixel(x, y, [noise.random(), noise.random(), noise.random()]);
            }
        }
    }

    Ok(out)
}
