//! Analytic cost models and wall-clock measurement as functions of the
//! sequence length `s` (selected patches; the class token makes `s + 1`
//! tokens).
//!
//! FLOPs count every multiply-accumulate as two operations. Each stage also
//! reports its raw multiply-accumulate count. Layer norm, softmax and GELU
//! are charged a fixed number of operations per element
//! ([`LN_FLOPS_PER_ELEMENT`], [`SOFTMAX_FLOPS_PER_ELEMENT`],
//! [`GELU_FLOPS_PER_ELEMENT`]) in a separate `elementwise` stage.
//!
//! The memory model counts activations kept for the backward pass plus a
//! constant for parameters, gradients and the two AdamW moments.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::model::{forward, init_params, loss_and_grad, Mode, ModelConfig, PatchSequence};

pub const LN_FLOPS_PER_ELEMENT: u64 = 8;
pub const SOFTMAX_FLOPS_PER_ELEMENT: u64 = 5;
pub const GELU_FLOPS_PER_ELEMENT: u64 = 10;

/// Bytes per stored value in the memory model (32-bit training).
pub const DEFAULT_ELEMENT_BYTES: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub name: String,
    pub value: u64,
    /// Multiply-accumulates behind `value`; zero for memory stages.
    pub macs: u64,
}

/// Per-stage costs for one `(cfg, s, batch)`; `total` is the stage sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub metric: String,
    pub unit: String,
    pub s: usize,
    pub batch: usize,
    pub element_bytes: Option<u64>,
    pub config: ModelConfig,
    pub stages: Vec<StageCost>,
    pub total: u64,
}

impl CostReport {
    fn new(metric: &str, unit: &str, cfg: &ModelConfig, s: usize, batch: usize, stages: Vec<StageCost>) -> Self {
        let total = stages.iter().map(|st| st.value).sum();
        Self {
            metric: metric.into(),
            unit: unit.into(),
            s,
            batch,
            element_bytes: None,
            config: *cfg,
            stages,
            total,
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageCost> {
        self.stages.iter().find(|st| st.name == name)
    }
}

fn check(cfg: &ModelConfig, s: usize, batch: usize) -> Result<()> {
    cfg.validate()?;
    if s == 0 || batch == 0 {
        return param_err("s and batch must be positive");
    }
    Ok(())
}

/// Forward-pass FLOPs.
///
/// Per block: `s'(4D^2 + 2 D mlp)` MACs for the projections and MLP and
/// `2 s'^2 D` for scores and the weighted sum, with `s' = s + 1`. The patch
/// and coordinate embeddings cover `s` tokens; the head reads one.
pub fn flops_estimate(cfg: &ModelConfig, s: usize, batch: usize) -> Result<CostReport> {
    check(cfg, s, batch)?;
    let (b, s, sp) = (batch as u64, s as u64, s as u64 + 1);
    let (d, l, h, mlp) = (cfg.embed_dim as u64, cfg.depth as u64, cfg.num_heads as u64, cfg.mlp_dim as u64);
    let pd = cfg.patch_dim() as u64;
    let c = cfg.num_classes as u64;
    let mac_stage = |name: &str, macs: u64| StageCost {
        name: name.into(),
        value: 2 * macs,
        macs,
    };
    let elementwise = b
        * (l * (2 * LN_FLOPS_PER_ELEMENT * sp * d + SOFTMAX_FLOPS_PER_ELEMENT * h * sp * sp + GELU_FLOPS_PER_ELEMENT * sp * mlp)
            + LN_FLOPS_PER_ELEMENT * d);
    let stages = vec![
        mac_stage("embed", b * s * (pd * d + 2 * d)),
        mac_stage("attention_linear", b * l * sp * 4 * d * d),
        mac_stage("attention_quadratic", b * l * 2 * sp * sp * d),
        mac_stage("mlp", b * l * sp * 2 * d * mlp),
        mac_stage("head", b * d * c),
        StageCost {
            name: "elementwise".into(),
            value: elementwise,
            macs: 0,
        },
    ];
    Ok(CostReport::new("forward_flops", "flop", cfg, s as usize, batch, stages))
}

/// Scalar count of all parameters.
pub fn param_count(cfg: &ModelConfig) -> u64 {
    let (d, mlp) = (cfg.embed_dim as u64, cfg.mlp_dim as u64);
    let per_block = 4 * (d * d + d) + 2 * (d * mlp) + mlp + d + 4 * d;
    (cfg.patch_dim() as u64 + 1) * d + 3 * d + d + cfg.depth as u64 * per_block + 2 * d + (d + 1) * cfg.num_classes as u64
}

/// Training-time memory in bytes.
///
/// Stages retained per block and example: `tokens` holds eight `s x D`
/// tensors (two layer-norm inputs and outputs, Q, K, V, attention
/// context), `mlp_hidden` the pre- and post-GELU `s x mlp` tensors,
/// `attention_probs` the `H s'^2` softmax outputs. The class token's share
/// of the first two sits in `class_token` so that `tokens` is exactly
/// proportional to `s`. `input` is the patch batch. `model_state` holds
/// parameters, gradients and two AdamW moments and does not depend on `s`.
pub fn memory_estimate(cfg: &ModelConfig, s: usize, batch: usize, element_bytes: u64) -> Result<CostReport> {
    check(cfg, s, batch)?;
    if element_bytes == 0 {
        return param_err("element_bytes must be positive");
    }
    let (b, s64, sp) = (batch as u64, s as u64, s as u64 + 1);
    let (d, l, h, mlp) = (cfg.embed_dim as u64, cfg.depth as u64, cfg.num_heads as u64, cfg.mlp_dim as u64);
    let e = element_bytes;
    let stage = |name: &str, elems: u64| StageCost {
        name: name.into(),
        value: elems * e,
        macs: 0,
    };
    let stages = vec![
        stage("input", b * s64 * cfg.patch_dim() as u64),
        stage("tokens", b * l * 8 * s64 * d),
        stage("mlp_hidden", b * l * 2 * s64 * mlp),
        stage("attention_probs", b * l * h * sp * sp),
        stage("class_token", b * (l * (8 * d + 2 * mlp) + 2 * d)),
        stage("model_state", 4 * param_count(cfg)),
    ];
    let mut report = CostReport::new("training_memory", "byte", cfg, s, batch, stages);
    report.element_bytes = Some(element_bytes);
    Ok(report)
}

/// Median and interquartile range of a set of samples, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub iqr_ms: f64,
}

impl TimingStats {
    pub fn from_samples(samples_ms: Vec<f64>) -> Self {
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        Self {
            median_ms: quantile(&sorted, 0.5),
            iqr_ms: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
            samples_ms,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeReport {
    pub s: usize,
    pub batch: usize,
    pub threads: usize,
    pub warmup: usize,
    pub forward: TimingStats,
    pub forward_backward: TimingStats,
}

pub const MIN_REPEATS: usize = 5;

/// Random inputs for benchmarking, deterministic per seed.
pub fn synthetic_batch(cfg: &ModelConfig, s: usize, batch: usize, seed: u64) -> Result<Vec<PatchSequence>> {
    check(cfg, s, batch)?;
    if s > cfg.num_patches() {
        return param_err(format!("s = {s} exceeds the {} patches of the grid", cfg.num_patches()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = cfg.grid_side();
    Ok((0..batch)
        .map(|_| {
            let patches = (0..s * cfg.patch_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let coords = (0..s).map(|i| (i / side, i % side)).collect();
            PatchSequence::new(patches, coords)
        })
        .collect())
}

/// Times `repeats` forward and forward+backward passes after one untimed
/// warmup of each. Runs on the current rayon pool; its size is recorded.
pub fn measure_runtime(cfg: &ModelConfig, s: usize, batch: usize, repeats: usize, seed: u64) -> Result<RuntimeReport> {
    if repeats < MIN_REPEATS {
        return param_err(format!("repeats must be at least {MIN_REPEATS}, got {repeats}"));
    }
    let inputs = synthetic_batch(cfg, s, batch, seed)?;
    let params = init_params(cfg, seed)?;
    let labels: Vec<usize> = (0..batch).map(|i| i % cfg.num_classes).collect();
    let warmup = 1;
    let time = |f: &dyn Fn() -> Result<()>| -> Result<Vec<f64>> {
        for _ in 0..warmup {
            f()?;
        }
        (0..repeats)
            .map(|_| {
                let t = Instant::now();
                f()?;
                Ok(t.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    };
    let fwd = time(&|| forward(&inputs, &params, cfg, Mode::Eval).map(|_| ()))?;
    let fb = time(&|| loss_and_grad(&inputs, &labels, &params, cfg, Mode::Eval).map(|_| ()))?;
    Ok(RuntimeReport {
        s,
        batch,
        threads: rayon::current_num_threads(),
        warmup,
        forward: TimingStats::from_samples(fwd),
        forward_backward: TimingStats::from_samples(fb),
    })
}

/// One row of the plotting table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub s: usize,
    pub flops: u64,
    pub mem_estimate: u64,
    pub runtime_ms: Option<f64>,
}

/// `s,flops,mem_estimate,runtime_ms`; runtime is empty when not measured.
pub fn cost_rows_csv(rows: &[CostRow]) -> String {
    let mut out = String::from("s,flops,mem_estimate,runtime_ms\n");
    for r in rows {
        let rt = r.runtime_ms.map(|v| format!("{v:?}")).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.s, r.flops, r.mem_estimate, rt));
    }
    out
}

/// Least-squares line through `(x, y)` and its coefficient of determination.
pub fn affine_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (intercept, slope, 1.0 - ss_res / ss_tot)
}
