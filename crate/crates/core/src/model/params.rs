use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub depth: usize,
    pub mlp_dim: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(3)
    }
}

impl ModelConfig {
    /// ViT-Base at 224 px with 16 px patches.
    pub fn base(num_classes: usize) -> Self {
        Self {
            input_size: 224,
            patch_size: 16,
            embed_dim: 768,
            num_heads: 12,
            depth: 12,
            mlp_dim: 3072,
            num_classes,
            dropout_rate: 0.0,
        }
    }

    /// 32 px inputs, 4 px patches (an 8x8 grid), four 64-wide blocks.
    pub fn desk(num_classes: usize) -> Self {
        Self {
            input_size: 32,
            patch_size: 4,
            embed_dim: 64,
            num_heads: 4,
            depth: 4,
            mlp_dim: 128,
            num_classes,
            dropout_rate: 0.0,
        }
    }

    /// The small configuration used for finite-difference gradient checks.
    pub fn tiny() -> Self {
        Self {
            input_size: 4,
            patch_size: 2,
            embed_dim: 8,
            num_heads: 2,
            depth: 1,
            mlp_dim: 16,
            num_classes: 3,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_size", self.input_size),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("num_heads", self.num_heads),
            ("depth", self.depth),
            ("mlp_dim", self.mlp_dim),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return param_err(format!("model.{name} must be positive"));
        }
        if self.embed_dim % self.num_heads != 0 {
            return param_err(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.input_size % self.patch_size != 0 {
            return param_err(format!(
                "input_size {} is not divisible by patch_size {}",
                self.input_size, self.patch_size
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return param_err(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn grid_side(&self) -> usize {
        self.input_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

/// Dense parameter array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// How the optimizer treats a tensor. Weight decay applies to `Weight` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub norm1_scale: Tensor,
    pub norm1_shift: Tensor,
    pub q_w: Tensor,
    pub q_b: Tensor,
    pub k_w: Tensor,
    pub k_b: Tensor,
    pub v_w: Tensor,
    pub v_b: Tensor,
    pub o_w: Tensor,
    pub o_b: Tensor,
    pub norm2_scale: Tensor,
    pub norm2_shift: Tensor,
    pub mlp1_w: Tensor,
    pub mlp1_b: Tensor,
    pub mlp2_w: Tensor,
    pub mlp2_b: Tensor,
}

const BLOCK_FIELDS: [(&str, ParamKind); 16] = [
    ("norm1.scale", ParamKind::Norm),
    ("norm1.shift", ParamKind::Norm),
    ("attn.q.weight", ParamKind::Weight),
    ("attn.q.bias", ParamKind::Bias),
    ("attn.k.weight", ParamKind::Weight),
    ("attn.k.bias", ParamKind::Bias),
    ("attn.v.weight", ParamKind::Weight),
    ("attn.v.bias", ParamKind::Bias),
    ("attn.o.weight", ParamKind::Weight),
    ("attn.o.bias", ParamKind::Bias),
    ("norm2.scale", ParamKind::Norm),
    ("norm2.shift", ParamKind::Norm),
    ("mlp.fc1.weight", ParamKind::Weight),
    ("mlp.fc1.bias", ParamKind::Bias),
    ("mlp.fc2.weight", ParamKind::Weight),
    ("mlp.fc2.bias", ParamKind::Bias),
];

impl BlockParams {
    fn zeros(d: usize, mlp: usize) -> Self {
        Self {
            norm1_scale: Tensor::zeros(&[d]),
            norm1_shift: Tensor::zeros(&[d]),
            q_w: Tensor::zeros(&[d, d]),
            q_b: Tensor::zeros(&[d]),
            k_w: Tensor::zeros(&[d, d]),
            k_b: Tensor::zeros(&[d]),
            v_w: Tensor::zeros(&[d, d]),
            v_b: Tensor::zeros(&[d]),
            o_w: Tensor::zeros(&[d, d]),
            o_b: Tensor::zeros(&[d]),
            norm2_scale: Tensor::zeros(&[d]),
            norm2_shift: Tensor::zeros(&[d]),
            mlp1_w: Tensor::zeros(&[d, mlp]),
            mlp1_b: Tensor::zeros(&[mlp]),
            mlp2_w: Tensor::zeros(&[mlp, d]),
            mlp2_b: Tensor::zeros(&[d]),
        }
    }

    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.norm1_scale,
            &self.norm1_shift,
            &self.q_w,
            &self.q_b,
            &self.k_w,
            &self.k_b,
            &self.v_w,
            &self.v_b,
            &self.o_w,
            &self.o_b,
            &self.norm2_scale,
            &self.norm2_shift,
            &self.mlp1_w,
            &self.mlp1_b,
            &self.mlp2_w,
            &self.mlp2_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.norm1_scale,
            &mut self.norm1_shift,
            &mut self.q_w,
            &mut self.q_b,
            &mut self.k_w,
            &mut self.k_b,
            &mut self.v_w,
            &mut self.v_b,
            &mut self.o_w,
            &mut self.o_b,
            &mut self.norm2_scale,
            &mut self.norm2_shift,
            &mut self.mlp1_w,
            &mut self.mlp1_b,
            &mut self.mlp2_w,
            &mut self.mlp2_b,
        ]
    }
}

/// All learnable tensors. Linear weights are stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub patch_embed_w: Tensor,
    pub patch_embed_b: Tensor,
    pub pos_w: Tensor,
    pub pos_b: Tensor,
    pub class_token: Tensor,
    pub blocks: Vec<BlockParams>,
    pub norm_scale: Tensor,
    pub norm_shift: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

/// Name, optimizer treatment and value of one tensor, in checkpoint order.
pub struct NamedTensor<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: &'a Tensor,
}

impl ModelParams {
    /// Every tensor zero, including norm scales.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        Self {
            patch_embed_w: Tensor::zeros(&[cfg.patch_dim(), d]),
            patch_embed_b: Tensor::zeros(&[d]),
            pos_w: Tensor::zeros(&[2, d]),
            pos_b: Tensor::zeros(&[d]),
            class_token: Tensor::zeros(&[d]),
            blocks: (0..cfg.depth).map(|_| BlockParams::zeros(d, cfg.mlp_dim)).collect(),
            norm_scale: Tensor::zeros(&[d]),
            norm_shift: Tensor::zeros(&[d]),
            head_w: Tensor::zeros(&[d, cfg.num_classes]),
            head_b: Tensor::zeros(&[cfg.num_classes]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.tensors_mut().into_iter().for_each(|t| t.data.fill(0.0));
        out
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        let mut push = |name: String, kind, tensor| out.push(NamedTensor { name, kind, tensor });
        push("patch_embed.weight".into(), ParamKind::Weight, &self.patch_embed_w);
        push("patch_embed.bias".into(), ParamKind::Bias, &self.patch_embed_b);
        push("pos_encode.weight".into(), ParamKind::Weight, &self.pos_w);
        push("pos_encode.bias".into(), ParamKind::Bias, &self.pos_b);
        push("class_token".into(), ParamKind::Weight, &self.class_token);
        for (i, block) in self.blocks.iter().enumerate() {
            for ((field, kind), t) in BLOCK_FIELDS.iter().zip(block.tensors()) {
                push(format!("blocks.{i}.{field}"), *kind, t);
            }
        }
        push("norm.scale".into(), ParamKind::Norm, &self.norm_scale);
        push("norm.shift".into(), ParamKind::Norm, &self.norm_shift);
        push("head.weight".into(), ParamKind::Weight, &self.head_w);
        push("head.bias".into(), ParamKind::Bias, &self.head_b);
        out
    }

    /// Mutable tensors in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.patch_embed_w,
            &mut self.patch_embed_b,
            &mut self.pos_w,
            &mut self.pos_b,
            &mut self.class_token,
        ];
        for block in &mut self.blocks {
            out.extend(block.tensors_mut());
        }
        out.extend([
            &mut self.norm_scale,
            &mut self.norm_shift,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|t| t.tensor.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor in a fixed order.
    pub fn add_scaled(&mut self, other: &ModelParams, alpha: f64) {
        let theirs = other.named_tensors();
        for (mine, t) in self.tensors_mut().into_iter().zip(theirs) {
            for (a, b) in mine.data.iter_mut().zip(&t.tensor.data) {
                *a += alpha * b;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.named_tensors()
            .iter()
            .flat_map(|t| t.tensor.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|t| t.tensor.data.iter().all(|v| v.is_finite()))
    }

    /// Checks that every tensor has the shape `cfg` implies.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let want = ModelParams::zeros(cfg);
        let (a, b) = (self.named_tensors(), want.named_tensors());
        if a.len() != b.len() {
            return param_err(format!("expected {} tensors, found {}", b.len(), a.len()));
        }
        for (x, y) in a.iter().zip(&b) {
            if x.tensor.shape != y.tensor.shape || x.tensor.data.len() != y.tensor.len() {
                return param_err(format!(
                    "{}: shape {:?}, expected {:?}",
                    y.name, x.tensor.shape, y.tensor.shape
                ));
            }
        }
        Ok(())
    }
}

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Deterministic initialization from `seed`.
///
/// Weights, the class token and the positional projection are drawn from a
/// normal with std 0.02 truncated at two standard deviations. Biases and
/// norm shifts are 0, norm scales 1. The classifier weights start at zero so
/// the initial prediction is uniform over classes.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut params = ModelParams::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut trunc_normal = |t: &mut Tensor| {
        for v in t.data.iter_mut() {
            *v = loop {
                let x: f64 = normal.sample(&mut rng);
                if x.abs() <= 2.0 * INIT_STD {
                    break x;
                }
            };
        }
    };
    let kinds: Vec<(String, ParamKind)> = params
        .named_tensors()
        .into_iter()
        .map(|t| (t.name, t.kind))
        .collect();
    for ((name, kind), t) in kinds.into_iter().zip(params.tensors_mut()) {
        match kind {
            ParamKind::Weight if name.starts_with("head.") => {}
            ParamKind::Weight => trunc_normal(t),
            ParamKind::Bias => {}
            ParamKind::Norm => {
                if name.ends_with(".scale") {
                    t.data.fill(1.0);
                }
            }
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_config_is_valid() {
        let cfg = ModelConfig::base(1000);
        cfg.validate().unwrap();
        assert_eq!(cfg.num_patches(), 196);
        assert_eq!(cfg.head_dim(), 64);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ModelConfig::tiny();
        cfg.num_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::tiny();
        cfg.input_size = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::tiny();
        cfg.depth = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = ModelConfig::tiny();
        assert_eq!(init_params(&cfg, 5).unwrap(), init_params(&cfg, 5).unwrap());
        assert_ne!(init_params(&cfg, 5).unwrap(), init_params(&cfg, 6).unwrap());
    }

    #[test]
    fn init_std_in_range_for_base_embedding() {
        let cfg = ModelConfig::base(10);
        let p = init_params(&cfg, 0).unwrap();
        let w = &p.patch_embed_w.data;
        assert!(w.len() >= 100_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!((0.015..=0.025).contains(&std), "std {std}");
        assert!(w.iter().all(|v| v.abs() <= 2.0 * INIT_STD));
    }

    #[test]
    fn init_layout() {
        let p = init_params(&ModelConfig::tiny(), 1).unwrap();
        assert!(p.norm_scale.data.iter().all(|&v| v == 1.0));
        assert!(p.blocks[0].norm2_shift.data.iter().all(|&v| v == 0.0));
        assert!(p.blocks[0].q_b.data.iter().all(|&v| v == 0.0));
        assert!(p.head_w.data.iter().all(|&v| v == 0.0));
        assert!(p.blocks[0].q_w.data.iter().any(|&v| v != 0.0));
        p.check_shapes(&ModelConfig::tiny()).unwrap();
    }

    #[test]
    fn tensor_order_is_consistent() {
        let mut p = init_params(&ModelConfig::tiny(), 2).unwrap();
        let shapes: Vec<Vec<usize>> = p.named_tensors().iter().map(|t| t.tensor.shape.clone()).collect();
        let shapes_mut: Vec<Vec<usize>> = p.tensors_mut().iter().map(|t| t.shape.clone()).collect();
        assert_eq!(shapes, shapes_mut);
    }
}
