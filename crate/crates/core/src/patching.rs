//! Non-overlapping patch grid, per-patch saliency scores and top-m selection.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Result};
use crate::saliency::SaliencyMap;
use crate::signal::{LuminanceImage, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGridSpec {
    pub patch_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl PatchGridSpec {
    /// Grid for an image that must be an exact multiple of `patch_size`.
    pub fn for_image(height: usize, width: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 {
            return param_err("patch size must be positive");
        }
        if height % patch_size != 0 || width % patch_size != 0 || height == 0 || width == 0 {
            return shape_err(format!(
                "{height}x{width} image is not divisible into {patch_size}x{patch_size} patches"
            ));
        }
        Ok(Self {
            patch_size,
            grid_rows: height / patch_size,
            grid_cols: width / patch_size,
        })
    }

    pub fn num_patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn coord(&self, index: usize) -> (usize, usize) {
        (index / self.grid_cols, index % self.grid_cols)
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.grid_rows * self.patch_size, self.grid_cols * self.patch_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchScoreGrid {
    pub grid: PatchGridSpec,
    /// Row-major, one entry per patch.
    pub scores: Vec<f64>,
}

impl PatchScoreGrid {
    pub fn new(grid: PatchGridSpec, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != grid.num_patches() {
            return shape_err(format!(
                "{} scores for a {}x{} grid",
                scores.len(),
                grid.grid_rows,
                grid.grid_cols
            ));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return param_err("patch scores must be finite and non-negative");
        }
        Ok(Self { grid, scores })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.grid.grid_cols + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedPatch {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub score: f64,
}

/// Order in which selected patches are handed to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedOrder {
    #[default]
    ScoreDescending,
    Raster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSelection {
    pub grid: PatchGridSpec,
    pub entries: Vec<SelectedPatch>,
}

/// JSON form written by the `select` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDocument {
    pub patch_size: usize,
    pub m: usize,
    pub entries: Vec<SelectedPatch>,
}

impl PatchSelection {
    pub fn m(&self) -> usize {
        self.entries.len()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn in_order(&self, order: FeedOrder) -> PatchSelection {
        let mut entries = self.entries.clone();
        if order == FeedOrder::Raster {
            entries.sort_by_key(|e| e.index);
        }
        PatchSelection {
            grid: self.grid,
            entries,
        }
    }

    pub fn to_document(&self) -> SelectionDocument {
        SelectionDocument {
            patch_size: self.grid.patch_size,
            m: self.m(),
            entries: self.entries.clone(),
        }
    }
}

/// Sums `values` over every patch of the grid.
pub fn patch_sums(values: &LuminanceImage, patch_size: usize) -> Result<(PatchGridSpec, Vec<f64>)> {
    let grid = PatchGridSpec::for_image(values.height(), values.width(), patch_size)?;
    let mut sums = vec![0.0; grid.num_patches()];
    let w = values.width();
    for (r, row) in values.pixels().chunks_exact(w).enumerate() {
        let base = (r / patch_size) * grid.grid_cols;
        for (gc, chunk) in row.chunks_exact(patch_size).enumerate() {
            sums[base + gc] += chunk.iter().sum::<f64>();
        }
    }
    Ok((grid, sums))
}

/// Summed absolute curvature of every `p x p` patch.
pub fn patch_scores(map: &SaliencyMap, patch_size: usize) -> Result<PatchScoreGrid> {
    let (grid, sums) = patch_sums(map.values(), patch_size)?;
    PatchScoreGrid::new(grid, sums)
}

fn rank(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `m` best patches, highest score first; equal scores keep row-major order.
pub fn select_top_m(grid: &PatchScoreGrid, m: usize) -> Result<PatchSelection> {
    let total = grid.grid.num_patches();
    if m == 0 || m > total {
        return param_err(format!("m must be in 1..={total}, got {m}"));
    }
    let mut ranked: Vec<(usize, f64)> = grid.scores.iter().copied().enumerate().collect();
    if m < total {
        ranked.select_nth_unstable_by(m - 1, rank);
        ranked.truncate(m);
    }
    ranked.sort_unstable_by(rank);
    let entries = ranked
        .into_iter()
        .map(|(index, score)| {
            let (row, col) = grid.grid.coord(index);
            SelectedPatch {
                index,
                row,
                col,
                score,
            }
        })
        .collect();
    Ok(PatchSelection {
        grid: grid.grid,
        entries,
    })
}

/// Raw pixels of one patch (row-major, channels interleaved) and its grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: Vec<f64>,
    pub row: usize,
    pub col: usize,
}

pub fn extract_patches(img: &RgbImage, sel: &PatchSelection, p: usize) -> Result<Vec<Patch>> {
    let grid = PatchGridSpec::for_image(img.height(), img.width(), p)?;
    if grid != sel.grid {
        return shape_err(format!(
            "selection grid {}x{} (p={}) does not match image grid {}x{} (p={p})",
            sel.grid.grid_rows, sel.grid.grid_cols, sel.grid.patch_size, grid.grid_rows, grid.grid_cols
        ));
    }
    let w = img.width();
    let px = img.pixels();
    sel.entries
        .iter()
        .map(|e| {
            if e.row >= grid.grid_rows || e.col >= grid.grid_cols {
                return param_err(format!("patch ({}, {}) outside the grid", e.row, e.col));
            }
            let mut pixels = Vec::with_capacity(p * p * 3);
            for r in e.row * p..(e.row + 1) * p {
                let start = (r * w + e.col * p) * 3;
                pixels.extend_from_slice(&px[start..start + p * 3]);
            }
            Ok(Patch {
                pixels,
                row: e.row,
                col: e.col,
            })
        })
        .collect()
}

/// Writes patches back at their grid positions; cells without a patch stay 0.
pub fn reassemble(patches: &[Patch], grid: &PatchGridSpec) -> Result<RgbImage> {
    let p = grid.patch_size;
    let (h, w) = grid.image_shape();
    let mut px = vec![0.0; h * w * 3];
    for patch in patches {
        if patch.pixels.len() != p * p * 3 {
            return shape_err(format!("patch has {} values, expected {}", patch.pixels.len(), p * p * 3));
        }
        for (i, line) in patch.pixels.chunks_exact(p * 3).enumerate() {
            let start = ((patch.row * p + i) * w + patch.col * p) * 3;
            px[start..start + p * 3].copy_from_slice(line);
        }
    }
    RgbImage::new(h, w, px)
}

/// Copy of `img` with every non-selected patch scaled by `dim`.
pub fn selection_overlay(img: &RgbImage, sel: &PatchSelection, dim: f64) -> Result<RgbImage> {
    let grid = sel.grid;
    if img.shape() != grid.image_shape() {
        return shape_err("overlay image does not match the selection grid");
    }
    let mut keep = vec![false; grid.num_patches()];
    for e in &sel.entries {
        keep[e.index] = true;
    }
    let p = grid.patch_size;
    RgbImage::from_fn(img.height(), img.width(), |r, c| {
        let px = img.get(r, c);
        if keep[(r / p) * grid.grid_cols + c / p] {
            px
        } else {
            px.map(|v| v * dim)
        }
    })
}
