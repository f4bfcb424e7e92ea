//! Procedural RAW/sRGB training pairs with scene-dependent rendering.
//!
//! RAW scenes are built from gradients, flat color shapes and value-noise
//! octaves under one of four exposure styles. The sRGB rendering is a gamma
//! curve plus three scene-dependent adjustments:
//!
//! * a global tone curve that lifts shadows in proportion to the image's
//!   dark-bin mass and compresses highlights in proportion to its
//!   bright-bin mass, both measured on the RAW lightness histogram;
//! * a saturation boost that is stronger for images with little chroma
//!   spread;
//! * a local shadow lift driven by a box-blurred luminance mask.
//!
//! With all strengths at zero the rendering is the plain gamma curve.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{quantize, write_rgb, BitDepth};
use super::manifest::{save_manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Smallest RAW value the generator emits.
pub const RAW_FLOOR: f32 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Histogram-conditioned shadow lift / highlight compression.
    pub contrast_strength: f64,
    /// Chroma-conditioned saturation boost.
    pub saturation_strength: f64,
    /// Blurred-luminance local shadow lift.
    pub shadow_lift_strength: f64,
    /// Box-blur radius of the local lift mask, in pixels.
    pub lift_radius: usize,
    pub gamma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 64,
            size: 128,
            seed: 0,
            contrast_strength: 0.7,
            saturation_strength: 0.4,
            shadow_lift_strength: 0.3,
            lift_radius: 4,
            gamma: 1.0 / 2.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let strengths = [
            ("contrast", self.contrast_strength),
            ("saturation", self.saturation_strength),
            ("shadow lift", self.shadow_lift_strength),
        ];
        for (name, v) in strengths {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} strength must be >= 0, got {v}")));
            }
        }
        if self.size < 8 {
            return Err(Error::config(format!(
                "image size must be >= 8, got {}",
                self.size
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn zero_strengths(self) -> Self {
        SynthConfig {
            contrast_strength: 0.0,
            saturation_strength: 0.0,
            shadow_lift_strength: 0.0,
            ..self
        }
    }
}

/// Exposure style of a generated scene, in the gamma domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exposure {
    Dark,
    Bright,
    HighContrast,
    Mid,
}

impl Exposure {
    pub const ALL: [Exposure; 4] = [
        Exposure::Dark,
        Exposure::Bright,
        Exposure::HighContrast,
        Exposure::Mid,
    ];

    fn tone(self, t: f32) -> f32 {
        match self {
            Exposure::Dark => 0.08 + 0.34 * t.powf(1.5),
            Exposure::Bright => 0.55 + 0.45 * t.powf(0.6),
            Exposure::HighContrast => {
                let s = 1.0 / (1.0 + (-12.0 * (t - 0.5)).exp());
                0.08 + 0.9 * s
            }
            Exposure::Mid => 0.35 + 0.4 * t,
        }
    }
}

/// Global statistics the rendering conditions on, all from the RAW image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneStats {
    /// Mean triangular vote of lightness for the bin at 0 (half-width 0.2).
    pub dark_mass: f64,
    /// Mean summed votes for the bins at 0.6, 0.8 and 1.0.
    pub bright_mass: f64,
    /// `sqrt(var r + var g)` of the chromaticities.
    pub chroma_spread: f64,
}

fn tri(x: f64, c: f64) -> f64 {
    (1.0 - (x - c).abs() / 0.2).max(0.0)
}

pub fn scene_stats(raw: &Tensor<f32>) -> SceneStats {
    let n = raw.shape().pixels() as f64;
    let (mut dark, mut bright) = (0.0, 0.0);
    let (mut sr, mut sg, mut sr2, mut sg2) = (0.0, 0.0, 0.0, 0.0);
    for px in raw.data().chunks(3) {
        let (r, g, b) = (px[0] as f64, px[1] as f64, px[2] as f64);
        let sum = r + g + b;
        let l = sum / 3.0;
        dark += tri(l, 0.0);
        bright += tri(l, 0.6) + tri(l, 0.8) + tri(l, 1.0);
        let d = sum + 1e-8;
        let (cr, cg) = (r / d, g / d);
        sr += cr;
        sg += cg;
        sr2 += cr * cr;
        sg2 += cg * cg;
    }
    let var = |s: f64, s2: f64| (s2 / n - (s / n).powi(2)).max(0.0);
    SceneStats {
        dark_mass: dark / n,
        bright_mass: bright / n,
        chroma_spread: (var(sr, sr2) + var(sg, sg2)).sqrt(),
    }
}

/// Shadow bump, the mirror image of [`highlight_bump`]: zero at 0 and above
/// 0.5, peak 1 at `v = 1/6`.
fn shadow_bump(v: f32) -> f32 {
    highlight_bump(1.0 - v)
}

/// Highlight bump, zero below 0.5 and at 1, peak 1 at `v = 5/6`.
fn highlight_bump(v: f32) -> f32 {
    if v <= 0.5 {
        return 0.0;
    }
    let u = 2.0 * (v - 0.5);
    6.75 * u * u * (1.0 - u)
}

/// Mean over a `(2r+1)^2` window with edge-replicated borders.
fn box_blur(values: &[f32], h: usize, w: usize, r: usize) -> Vec<f32> {
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![0.0; src.len()];
        let k = (2 * r + 1) as f32;
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for d in -(r as isize)..=(r as isize) {
                    let (yy, xx) = if horizontal {
                        (y, (x as isize + d).clamp(0, w as isize - 1) as usize)
                    } else {
                        ((y as isize + d).clamp(0, h as isize - 1) as usize, x)
                    };
                    s += src[yy * w + xx];
                }
                out[y * w + x] = s / k;
            }
        }
        out
    };
    pass(&pass(values, true), false)
}

/// Renders the sRGB counterpart of one `(1, h, w, 3)` RAW image.
pub fn render(raw: &Tensor<f32>, cfg: &SynthConfig) -> Result<Tensor<f32>> {
    render_with_stats(raw, &scene_stats(raw), cfg)
}

/// [`render`] conditioned on `stats` instead of the image's own statistics.
pub fn render_with_stats(raw: &Tensor<f32>, stats: &SceneStats, cfg: &SynthConfig) -> Result<Tensor<f32>> {
    let s = raw.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::config(format!("render expects one RGB image, got {s}")));
    }
    let a = (cfg.contrast_strength * stats.dark_mass) as f32;
    let b = (cfg.contrast_strength * stats.bright_mass) as f32;
    let sigma = (cfg.saturation_strength * (1.0 - stats.chroma_spread / 0.3).clamp(0.0, 1.0)) as f32;
    let lift = cfg.shadow_lift_strength as f32;
    let gamma = cfg.gamma as f32;

    let mut out = raw.map(|v| v.max(0.0).powf(gamma));
    let mask = if lift > 0.0 {
        let lum: Vec<f32> = out.data().chunks(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect();
        box_blur(&lum, s.h, s.w, cfg.lift_radius)
    } else {
        vec![0.0; s.pixels()]
    };
    for (px, &m) in out.data_mut().chunks_mut(3).zip(&mask) {
        let local = lift * (0.5 - m).max(0.0) * 2.0;
        for v in px.iter_mut() {
            let g = *v;
            *v = g + (a + local) * shadow_bump(g) - b * highlight_bump(g);
        }
        if sigma > 0.0 {
            let mean = (px[0] + px[1] + px[2]) / 3.0;
            for v in px.iter_mut() {
                *v = mean + (1.0 + sigma) * (*v - mean);
            }
        }
        for v in px.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Bilinearly interpolated lattice noise in `[0, 1]` with `cells` cells per
/// side.
fn value_noise<R: Rng>(rng: &mut R, n: usize, cells: usize) -> Vec<f32> {
    let g = cells + 1;
    let lattice: Vec<f32> = (0..g * g).map(|_| rng.random()).collect();
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        let fy = y as f32 / n as f32 * cells as f32;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..n {
            let fx = x as f32 / n as f32 * cells as f32;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let at = |yy: usize, xx: usize| lattice[yy * g + xx];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out[y * n + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Color with max component 1 whose smallest component is at least
/// `1 - saturation`.
fn random_color<R: Rng>(rng: &mut R, saturation: f32) -> [f32; 3] {
    let c: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    let max = c.iter().cloned().fold(1e-3, f32::max);
    c.map(|v| 1.0 - saturation * (1.0 - v / max))
}

fn scene_rng(cfg: &SynthConfig, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    rng
}

/// The exposure style scene `index` is drawn with.
pub fn scene_exposure(cfg: &SynthConfig, index: usize) -> Exposure {
    Exposure::ALL[scene_rng(cfg, index).random_range(0..4)]
}

/// RAW image of scene `index`, already quantized to 16 bits.
pub fn synth_raw(cfg: &SynthConfig, index: usize) -> Result<Tensor<f32>> {
    synth_raw_with(cfg, index, scene_exposure(cfg, index))
}

/// Like [`synth_raw`] with the exposure style forced.
pub fn synth_raw_with(cfg: &SynthConfig, index: usize, exposure: Exposure) -> Result<Tensor<f32>> {
    cfg.validate()?;
    let n = cfg.size;
    let mut rng = scene_rng(cfg, index);
    let _style: usize = rng.random_range(0..4);
    let saturation: f32 = rng.random_range(0.05..0.7);

    // Background: a linear gradient between two colors.
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let c0 = random_color(&mut rng, saturation);
    let c1 = random_color(&mut rng, saturation);
    let mut tone = vec![0.0f32; n * n];
    let mut color = vec![[0.0f32; 3]; n * n];
    for y in 0..n {
        for x in 0..n {
            let u = (ca * (x as f32 / n as f32 - 0.5) + sa * (y as f32 / n as f32 - 0.5)) + 0.5;
            let u = u.clamp(0.0, 1.0);
            tone[y * n + x] = u;
            color[y * n + x] = [0, 1, 2].map(|k| c0[k] * (1.0 - u) + c1[k] * u);
        }
    }

    // Flat shapes, rectangles or discs, painted back to front.
    let shapes = rng.random_range(3..9);
    for _ in 0..shapes {
        let t: f32 = rng.random();
        let c = random_color(&mut rng, saturation);
        let (cy, cx) = (rng.random_range(0..n) as f32, rng.random_range(0..n) as f32);
        let (ry, rx) = (
            rng.random_range(n as f32 * 0.08..n as f32 * 0.35),
            rng.random_range(n as f32 * 0.08..n as f32 * 0.35),
        );
        let disc: bool = rng.random();
        for y in 0..n {
            for x in 0..n {
                let (dy, dx) = ((y as f32 - cy) / ry, (x as f32 - cx) / rx);
                let inside = if disc {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    let i = y * n + x;
                    tone[i] = 0.25 * tone[i] + 0.75 * t;
                    color[i] = c;
                }
            }
        }
    }

    // Texture: three octaves of value noise.
    for (cells, amp) in [(4usize, 0.12f32), (8, 0.06), (16, 0.03)] {
        let noise = value_noise(&mut rng, n, cells.min(n));
        for (t, v) in tone.iter_mut().zip(noise) {
            *t += amp * (v - 0.5) * 2.0;
        }
    }

    let mut raw = Tensor::zeros(Shape::new(1, n, n, 3)?);
    for (i, px) in raw.data_mut().chunks_mut(3).enumerate() {
        let g = exposure.tone(tone[i].clamp(0.0, 1.0));
        for k in 0..3 {
            px[k] = (g * color[i][k])
                .powf(1.0 / cfg.gamma as f32)
                .clamp(RAW_FLOOR, 1.0);
        }
    }
    // A small white light source pins the maximum at exactly 1.
    let spot = (n / 32).max(1);
    let (sy, sx) = (rng.random_range(0..=n - spot), rng.random_range(0..=n - spot));
    for y in sy..sy + spot {
        for x in sx..sx + spot {
            raw.pixel_mut(0, y, x).iter_mut().for_each(|v| *v = 1.0);
        }
    }
    Ok(raw.map(|v| quantize(v, BitDepth::Sixteen) as f32 / 65535.0))
}

/// RAW and rendered sRGB of scene `index`; the sRGB is 8-bit quantized the
/// same way the written file is.
pub fn synth_pair(cfg: &SynthConfig, index: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let raw = synth_raw(cfg, index)?;
    let srgb = render(&raw, cfg)?.map(|v| quantize(v, BitDepth::Eight) as f32 / 255.0);
    Ok((raw, srgb))
}

pub fn scene_id(index: usize) -> String {
    format!("scene{index:04}")
}

pub const MANIFEST_NAME: &str = "manifest.csv";
pub const SIDECAR_NAME: &str = "synth_config.json";

#[derive(Serialize)]
struct Sidecar<'a> {
    generator: &'static str,
    note: &'static str,
    config: &'a SynthConfig,
    exposures: Vec<Exposure>,
}

/// Writes `count` pairs under `out` (`raw/` 16-bit, `srgb/` 8-bit), the
/// manifest with unit white-balance gains and the generator sidecar.
/// Returns the manifest path.
pub fn synth_generate(cfg: &SynthConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let raw_dir = out.join("raw");
    let srgb_dir = out.join("srgb");
    for d in [out, &raw_dir, &srgb_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let entries = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let id = scene_id(i);
            let (raw, srgb) = synth_pair(cfg, i)?;
            let raw_path = raw_dir.join(format!("{id}.png"));
            let srgb_path = srgb_dir.join(format!("{id}.png"));
            write_rgb(&raw_path, &raw, BitDepth::Sixteen)?;
            write_rgb(&srgb_path, &srgb, BitDepth::Eight)?;
            Ok(ManifestEntry {
                id,
                raw_path,
                srgb_path,
                wb_gains: [1.0; 3],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = out.join(MANIFEST_NAME);
    save_manifest(&manifest, &entries)?;
    let sidecar = Sidecar {
        generator: "procedural photofinishing pairs",
        note: "synthetic data; not captured by a camera",
        config: cfg,
        exposures: (0..cfg.count).map(|i| scene_exposure(cfg, i)).collect(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("plain data serializes");
    let side = out.join(SIDECAR_NAME);
    fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))?;
    Ok(manifest)
}
