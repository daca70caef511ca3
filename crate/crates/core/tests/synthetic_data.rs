use std::collections::HashSet;

use smt_core::patching::{patch_scores, select_top_m};
use smt_core::saliency::{SaliencyOperator, SaliencyParams};
use smt_core::signal::to_luminance;
use smt_core::training::{make_synthetic_dataset, ShapeKind};

/// Fraction of shapes of `kind` whose every corner pixel falls in a top-25% patch.
fn corner_coverage(seed: u64, kind: ShapeKind) -> f64 {
    let data = make_synthetic_dataset(300, 32, seed).unwrap();
    let op = SaliencyOperator::new(SaliencyParams::default(), 32, 32).unwrap();
    let (mut hit, mut total) = (0, 0);
    for item in &data.items {
        let shape = item.shape.as_ref().unwrap();
        if shape.kind != kind {
            continue;
        }
        let img = item.source.load().unwrap();
        let map = op.compute(&to_luminance(&img)).unwrap();
        let sel = select_top_m(&patch_scores(&map, 4).unwrap(), 16).unwrap();
        let cells: HashSet<(usize, usize)> = sel.entries.iter().map(|e| (e.row, e.col)).collect();
        total += 1;
        if shape.corner_pixels(32, 32).iter().all(|&(r, c)| cells.contains(&(r / 4, c / 4))) {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

#[test]
fn top_quarter_covers_rectangle_corners() {
    for seed in [3, 11] {
        let cov = corner_coverage(seed, ShapeKind::Rectangle);
        assert!(cov >= 0.90, "seed {seed}: rectangle corner coverage {cov:.3}");
    }
}

#[test]
fn saliency_prefers_shape_boundary_over_background() {
    let data = make_synthetic_dataset(20, 32, 5).unwrap();
    let op = SaliencyOperator::new(SaliencyParams::default(), 32, 32).unwrap();
    for item in &data.items {
        let shape = item.shape.as_ref().unwrap();
        if shape.kind != ShapeKind::Disc {
            continue;
        }
        let img = item.source.load().unwrap();
        let map = op.compute(&to_luminance(&img)).unwrap();
        let (r, c) = map.argmax();
        let mean = |px: [f64; 3]| px.iter().sum::<f64>() / 3.0;
        let bg = mean(img.get(0, 0));
        let near_shape = (r.saturating_sub(2)..(r + 3).min(32))
            .flat_map(|y| (c.saturating_sub(2)..(c + 3).min(32)).map(move |x| (y, x)))
            .any(|(y, x)| mean(img.get(y, x)) - bg > 0.1);
        assert!(near_shape, "saliency peak ({r}, {c}) far from the disc");
    }
}
