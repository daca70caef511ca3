use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result, SmtError};
use crate::signal::{load_image, save_rgb8, RgbImage};

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    Path(PathBuf),
    Memory(RgbImage),
}

impl ImageSource {
    pub fn load(&self) -> Result<RgbImage> {
        match self {
            ImageSource::Path(p) => load_image(p),
            ImageSource::Memory(img) => Ok(img.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Triangle,
    Disc,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Rectangle, ShapeKind::Triangle, ShapeKind::Disc];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Disc => "disc",
        }
    }
}

/// Ground truth of a generated image. Corners are `(y, x)` in pixel units,
/// where pixel `(r, c)` covers `[r, r + 1) x [c, c + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeInfo {
    pub kind: ShapeKind,
    pub corners: Vec<(f64, f64)>,
}

impl ShapeInfo {
    /// Pixel containing each corner.
    pub fn corner_pixels(&self, height: usize, width: usize) -> Vec<(usize, usize)> {
        self.corners
            .iter()
            .map(|&(y, x)| {
                let clamp = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
                (clamp(y, height), clamp(x, width))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataItem {
    pub source: ImageSource,
    pub label: usize,
    pub shape: Option<ShapeInfo>,
}

/// Labelled images with dense labels in `[0, class_names.len())`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<DataItem>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(items: Vec<DataItem>, class_names: Vec<String>) -> Result<Self> {
        if items.is_empty() {
            return param_err("dataset is empty");
        }
        let k = class_names.len();
        if let Some(item) = items.iter().find(|i| i.label >= k) {
            return param_err(format!("label {} outside [0, {k})", item.label));
        }
        Ok(Self { items, class_names })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    /// Visiting order for one epoch, a deterministic function of `(seed, epoch)`.
    pub fn epoch_order(&self, seed: u64, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Reads `root/<class>/*.png`; classes and files are sorted by name.
    pub fn from_folder(root: &Path) -> Result<Self> {
        let mut classes: Vec<PathBuf> = read_dir_sorted(root)?.into_iter().filter(|p| p.is_dir()).collect();
        classes.retain(|p| !file_name(p).starts_with('.'));
        if classes.is_empty() {
            return Err(SmtError::Config(format!("{} has no class subdirectories", root.display())));
        }
        let mut items = Vec::new();
        let mut names = Vec::new();
        for (label, dir) in classes.iter().enumerate() {
            names.push(file_name(dir));
            for path in read_dir_sorted(dir)? {
                let is_png = path
                    .extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"));
                if path.is_file() && is_png {
                    items.push(DataItem {
                        source: ImageSource::Path(path),
                        label,
                        shape: None,
                    });
                }
            }
        }
        if items.is_empty() {
            return Err(SmtError::Config(format!("no PNG images under {}", root.display())));
        }
        Self::new(items, names)
    }

    /// Writes every image as `root/<class>/<index>.png` (8-bit) and shape
    /// metadata, when present, to `root/shapes.json`.
    pub fn save_to_folder(&self, root: &Path) -> Result<()> {
        let mut shapes = Vec::new();
        for name in &self.class_names {
            let dir = root.join(name);
            fs::create_dir_all(&dir).map_err(|e| SmtError::io(&dir, e))?;
        }
        for (i, item) in self.items.iter().enumerate() {
            let rel = format!("{}/{i:05}.png", self.class_names[item.label]);
            save_rgb8(root.join(&rel), &item.source.load()?)?;
            if let Some(shape) = &item.shape {
                shapes.push(serde_json::json!({"file": rel, "shape": shape}));
            }
        }
        if !shapes.is_empty() {
            let path = root.join("shapes.json");
            let text = serde_json::to_string_pretty(&shapes).map_err(|e| SmtError::Format(e.to_string()))?;
            fs::write(&path, text).map_err(|e| SmtError::io(&path, e))?;
        }
        Ok(())
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .map_err(|e| SmtError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| SmtError::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Per channel `(x - 0.5) / 0.5`, mapping `[0, 1]` onto `[-1, 1]`.
pub fn normalize_inception(img: &RgbImage) -> RgbImage {
    img.map(|v| (v - 0.5) / 0.5).expect("affine map of finite values is finite")
}

pub fn denormalize_inception(img: &RgbImage) -> RgbImage {
    img.map(|v| v * 0.5 + 0.5).expect("affine map of finite values is finite")
}

const SUPERSAMPLE: usize = 4;

fn inside_convex(poly: &[(f64, f64)], y: f64, x: f64) -> bool {
    let mut sign = 0.0;
    for i in 0..poly.len() {
        let (y0, x0) = poly[i];
        let (y1, x1) = poly[(i + 1) % poly.len()];
        let cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
        if cross != 0.0 {
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
    }
    true
}

fn tinted(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    let level = rng.random_range(lo..hi);
    [0, 1, 2].map(|_| level + rng.random_range(-0.05..0.05))
}

fn render(size: usize, rng: &mut ChaCha8Rng, inside: impl Fn(f64, f64) -> bool) -> RgbImage {
    let bg = tinted(rng, 0.1, 0.4);
    let fg = tinted(rng, 0.6, 0.9);
    let freq = rng.random_range(0.02..0.05);
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let amp = 0.04;
    let noise: Vec<f64> = (0..size * size).map(|_| rng.random_range(-0.02..0.02)).collect();
    RgbImage::from_fn(size, size, |r, c| {
        let mut hits = 0;
        for i in 0..SUPERSAMPLE {
            for j in 0..SUPERSAMPLE {
                let y = r as f64 + (i as f64 + 0.5) / SUPERSAMPLE as f64;
                let x = c as f64 + (j as f64 + 0.5) / SUPERSAMPLE as f64;
                hits += usize::from(inside(y, x));
            }
        }
        let a = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
        let texture = amp * (std::f64::consts::TAU * freq * (x * theta.cos() + y * theta.sin()) + phase).sin()
            + noise[r * size + c];
        let mut px = [0.0; 3];
        for ch in 0..3 {
            let back = (bg[ch] + texture).clamp(0.0, 1.0);
            px[ch] = back * (1.0 - a) + fg[ch] * a;
        }
        px
    })
    .expect("generated pixels are finite")
}

fn polygon_fits(poly: &[(f64, f64)], lo: f64, hi: f64) -> bool {
    poly.iter().all(|&(y, x)| (lo..=hi).contains(&y) && (lo..=hi).contains(&x))
}

fn generate_shape(kind: ShapeKind, size: usize, rng: &mut ChaCha8Rng) -> (RgbImage, ShapeInfo) {
    let s = size as f64;
    let scale = s / 32.0;
    let margin = 2.5 * scale;
    match kind {
        ShapeKind::Rectangle => {
            let poly = loop {
                let (h, w) = (rng.random_range(10.0..18.0) * scale, rng.random_range(10.0..18.0) * scale);
                let (cy, cx) = (rng.random_range(0.3..0.7) * s, rng.random_range(0.3..0.7) * s);
                let poly: Vec<(f64, f64)> = [(-1.0, -1.0), (-1.0, 1.0), (1.0, 1.0), (1.0, -1.0)]
                    .iter()
                    .map(|&(u, v)| (cy + u * h / 2.0, cx + v * w / 2.0))
                    .collect();
                if polygon_fits(&poly, margin, s - margin) {
                    break poly;
                }
            };
            let p = poly.clone();
            let img = render(size, rng, move |y, x| inside_convex(&p, y, x));
            (img, ShapeInfo { kind, corners: poly })
        }
        ShapeKind::Triangle => {
            let poly = loop {
                let radius = rng.random_range(8.0..12.0) * scale;
                let start = -std::f64::consts::FRAC_PI_2;
                let (cy, cx) = (rng.random_range(0.3..0.7) * s, rng.random_range(0.3..0.7) * s);
                let poly: Vec<(f64, f64)> = (0..3)
                    .map(|k| {
                        let a = start + k as f64 * std::f64::consts::TAU / 3.0 + rng.random_range(-0.35..0.35);
                        (cy + radius * a.sin(), cx + radius * a.cos())
                    })
                    .collect();
                if polygon_fits(&poly, margin, s - margin) {
                    break poly;
                }
            };
            let p = poly.clone();
            let img = render(size, rng, move |y, x| inside_convex(&p, y, x));
            (img, ShapeInfo { kind, corners: poly })
        }
        ShapeKind::Disc => {
            let radius = rng.random_range(6.0..10.0) * scale;
            let lo = radius + margin;
            let (cy, cx) = (rng.random_range(lo..s - lo), rng.random_range(lo..s - lo));
            let img = render(size, rng, move |y, x| (y - cy).powi(2) + (x - cx).powi(2) <= radius * radius);
            (img, ShapeInfo { kind, corners: vec![] })
        }
    }
}

/// Three classes (axis-aligned rectangle, upright triangle, disc) of bright,
/// slightly tinted shapes at random positions and sizes over a darker
/// background with a faint grating and pixel noise.
///
/// Items are interleaved by class. The output is a pure function of the
/// arguments.
pub fn make_synthetic_dataset(num_per_class: usize, image_size: usize, seed: u64) -> Result<Dataset> {
    if num_per_class == 0 {
        return param_err("num_per_class must be positive");
    }
    if image_size < 16 {
        return param_err(format!("image_size must be at least 16, got {image_size}"));
    }
    let mut items = Vec::with_capacity(num_per_class * 3);
    for i in 0..num_per_class {
        for (label, &kind) in ShapeKind::ALL.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((i * 3 + label) as u64);
            let (img, info) = generate_shape(kind, image_size, &mut rng);
            items.push(DataItem {
                source: ImageSource::Memory(img),
                label,
                shape: Some(info),
            });
        }
    }
    let names = ShapeKind::ALL.iter().map(|k| k.name().to_string()).collect();
    Dataset::new(items, names)
}
