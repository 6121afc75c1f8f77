use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError, Result};
use crate::rng;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

/// Weights of one encoder block. Projection matrices are stored
/// `[in, out]` and applied as `x · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
}

const LAYER_FIELDS: [&str; 16] = [
    "ln1.gamma",
    "ln1.beta",
    "attn.wq",
    "attn.bq",
    "attn.wk",
    "attn.bk",
    "attn.wv",
    "attn.bv",
    "attn.wo",
    "attn.bo",
    "ln2.gamma",
    "ln2.beta",
    "ffn.w1",
    "ffn.b1",
    "ffn.w2",
    "ffn.b2",
];

impl LayerParams {
    pub fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
        ]
    }

    fn from_iter(it: &mut impl Iterator<Item = Tensor>) -> Self {
        let mut next = || it.next().expect("layer tensor count");
        LayerParams {
            ln1_gamma: next(),
            ln1_beta: next(),
            wq: next(),
            bq: next(),
            wk: next(),
            bk: next(),
            wv: next(),
            bv: next(),
            wo: next(),
            bo: next(),
            ln2_gamma: next(),
            ln2_beta: next(),
            ffn_w1: next(),
            ffn_b1: next(),
            ffn_w2: next(),
            ffn_b2: next(),
        }
    }
}

/// All learnable tensors of the model, in a fixed canonical order (see
/// [`ViTParams::layout`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ViTParams {
    config: ModelConfig,
    pub patch_w: Tensor,
    pub patch_b: Tensor,
    pub pos_embed: Tensor,
    pub cls_token: Tensor,
    pub layers: Vec<LayerParams>,
    pub final_gamma: Tensor,
    pub final_beta: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

/// How a tensor is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

fn init_kind(name: &str) -> Init {
    if name.ends_with(".gamma") {
        Init::Ones
    } else if name.ends_with("weight")
        || [".wq", ".wk", ".wv", ".wo", ".w1", ".w2"]
            .iter()
            .any(|s| name.ends_with(s))
    {
        Init::TruncNormal
    } else {
        Init::Zeros
    }
}

impl ViTParams {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Canonical `(name, shape)` list for a config.
    pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let d = config.embed_dim;
        let f = config.ffn_dim;
        let mut out = vec![
            ("patch_embed.weight".to_string(), vec![config.patch_dim(), d]),
            ("patch_embed.bias".to_string(), vec![d]),
            ("pos_embed".to_string(), vec![config.seq_len(), d]),
            ("cls_token".to_string(), vec![d]),
        ];
        let layer_shapes = [
            vec![d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![d, f],
            vec![f],
            vec![f, d],
            vec![d],
        ];
        for l in 0..config.num_layers {
            for (field, shape) in LAYER_FIELDS.iter().zip(&layer_shapes) {
                out.push((format!("layers.{l}.{field}"), shape.clone()));
            }
        }
        out.extend([
            ("final_norm.gamma".to_string(), vec![d]),
            ("final_norm.beta".to_string(), vec![d]),
            ("head.weight".to_string(), vec![d, config.num_classes]),
            ("head.bias".to_string(), vec![config.num_classes]),
        ]);
        out
    }

    /// Tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.patch_w, &self.patch_b, &self.pos_embed, &self.cls_token];
        for layer in &self.layers {
            out.extend(layer.tensors());
        }
        out.extend([&self.final_gamma, &self.final_beta, &self.head_w, &self.head_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.patch_w,
            &mut self.patch_b,
            &mut self.pos_embed,
            &mut self.cls_token,
        ];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend([
            &mut self.final_gamma,
            &mut self.final_beta,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        Self::layout(&self.config)
            .into_iter()
            .map(|(n, _)| n)
            .zip(self.tensors())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Assembles parameters from named tensors, which must match the
    /// config's layout exactly (same names, same order, same shapes).
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = Self::layout(&config);
        let mut given = named.into_iter();
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            let (got_name, t) = given.next().ok_or_else(|| ModelError::Missing(name.clone()))?;
            if &got_name != name {
                return Err(ModelError::Unexpected(got_name));
            }
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
            if !t.all_finite() {
                return Err(ModelError::Input(format!("tensor {name} has non-finite values")));
            }
            tensors.push(t);
        }
        if let Some((extra, _)) = given.next() {
            return Err(ModelError::Unexpected(extra));
        }
        Ok(Self::from_ordered(config, tensors))
    }

    fn from_ordered(config: ModelConfig, tensors: Vec<Tensor>) -> Self {
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("tensor count");
        let patch_w = next();
        let patch_b = next();
        let pos_embed = next();
        let cls_token = next();
        let mut rest: Vec<Tensor> = it.collect();
        let tail = rest.split_off(rest.len() - 4);
        let mut layer_iter = rest.into_iter();
        let layers = (0..config.num_layers)
            .map(|_| LayerParams::from_iter(&mut layer_iter))
            .collect();
        let [final_gamma, final_beta, head_w, head_b]: [Tensor; 4] =
            tail.try_into().expect("four tail tensors");
        ViTParams {
            config,
            patch_w,
            patch_b,
            pos_embed,
            cls_token,
            layers,
            final_gamma,
            final_beta,
            head_w,
            head_b,
        }
    }
}

/// Random initialisation: projection weights from a normal with std 0.02
/// truncated to `(-0.04, 0.04)`; LayerNorm gains one; biases, positions and
/// the class token zero.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ViTParams> {
    config.validate()?;
    let mut r = rng::from_seed(rng::derive_seed(seed, rng::stream::INIT));
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let bound = 2.0 * INIT_STD;
    let tensors = ViTParams::layout(config)
        .into_iter()
        .map(|(name, shape)| match init_kind(&name) {
            Init::Ones => Tensor::full(&shape, 1.0),
            Init::Zeros => Tensor::zeros(&shape),
            Init::TruncNormal => {
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| loop {
                        let v: f64 = normal.sample(&mut r);
                        if v.abs() < bound {
                            break v;
                        }
                    })
                    .collect();
                Tensor::new(shape, data).expect("layout shape")
            }
        })
        .collect();
    Ok(ViTParams::from_ordered(config.clone(), tensors))
}
