use super::{ModelConfig, ModelError, Result, ViTParams, LN_EPS};
use crate::dataio::ImageTensor;
use crate::tensor::{Graph, Tensor, Var};

/// Encoder-block weights registered in a graph.
#[derive(Debug, Clone)]
pub struct LayerVars {
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
}

/// [`ViTParams`] registered as graph leaves.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub patch_w: Var,
    pub patch_b: Var,
    pub pos_embed: Var,
    pub cls_token: Var,
    pub layers: Vec<LayerVars>,
    pub final_gamma: Var,
    pub final_beta: Var,
    pub head_w: Var,
    pub head_b: Var,
    all: Vec<Var>,
}

impl ParamVars {
    /// Adds every parameter to `g`; `trainable` decides whether they
    /// receive gradients.
    pub fn register(g: &mut Graph, params: &ViTParams, trainable: bool) -> Result<Self> {
        let all = params
            .tensors()
            .into_iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.input(t.clone())
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut it = all.iter().copied();
        let mut next = || it.next().expect("param count");
        let patch_w = next();
        let patch_b = next();
        let pos_embed = next();
        let cls_token = next();
        let layers = (0..params.layers.len())
            .map(|_| LayerVars {
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
            })
            .collect();
        Ok(ParamVars {
            patch_w,
            patch_b,
            pos_embed,
            cls_token,
            layers,
            final_gamma: next(),
            final_beta: next(),
            head_w: next(),
            head_b: next(),
            all,
        })
    }

    /// Leaves in the canonical parameter order of [`ViTParams::tensors`].
    pub fn vars(&self) -> &[Var] {
        &self.all
    }
}

/// Splits a `(C, H, W)` image into non-overlapping `p`×`p` patches.
/// Patches are enumerated row-major over the grid; each row of the result
/// is one patch flattened channel-major, then row-major inside the patch.
pub fn patchify(img: &ImageTensor, p: usize) -> Result<Tensor> {
    let (c, h, w) = img.shape();
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(ModelError::Input(format!(
            "image {h}x{w} cannot be cut into {p}x{p} patches"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    let mut data = Vec::with_capacity(c * h * w);
    for gy in 0..gh {
        for gx in 0..gw {
            for ch in 0..c {
                for py in 0..p {
                    for px in 0..p {
                        data.push(img.get(ch, gy * p + py, gx * p + px));
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![gh * gw, c * p * p], data)?)
}

/// Token sequences for a stacked batch of patches `[B·N, patch_dim]`:
/// per image `[cls + pos_0; E_1 + pos_1; ...; E_N + pos_N]` with
/// `E_i = patch_i · W + b`. Returns `[B·(N+1), D]`.
pub fn embed(g: &mut Graph, pv: &ParamVars, cfg: &ModelConfig, patches: Var) -> Result<Var> {
    let n = cfg.num_patches();
    let rows = g.shape(patches)[0];
    if rows % n != 0 {
        return Err(ModelError::Input(format!(
            "{rows} patch rows is not a multiple of {n} patches per image"
        )));
    }
    let batch = rows / n;
    let projected = g.matmul(patches, pv.patch_w)?;
    let projected = g.add_row(projected, pv.patch_b)?;
    let cls = g.reshape(pv.cls_token, &[1, cfg.embed_dim])?;
    let mut seqs = Vec::with_capacity(2 * batch);
    for b in 0..batch {
        seqs.push(cls);
        seqs.push(g.slice_rows(projected, b * n, (b + 1) * n)?);
    }
    let tokens = g.concat_rows(&seqs)?;
    let pos = g.concat_rows(&vec![pv.pos_embed; batch])?;
    Ok(g.add(tokens, pos)?)
}

/// `softmax(Q Kᵀ / sqrt(d_k)) V`. Returns the output and the row-stochastic
/// weight matrix.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks[0] != vs[0] {
        return Err(ModelError::Input(format!(
            "attention shapes incompatible: Q {qs:?}, K {ks:?}, V {vs:?}"
        )));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (qs[1] as f64).sqrt())?;
    let weights = g.softmax(scores, 1)?;
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    Ok(g.add_row(y, b)?)
}

/// Multi-head self-attention over `batch` stacked sequences `[B·S, D]`.
/// Heads attend on `D/h`-wide column slices of the projected Q, K, V;
/// outputs are concatenated and projected by `Wo`. Attention weight
/// matrices are appended to `weights_out` (image-major, then head).
pub fn multi_head_attention(
    g: &mut Graph,
    x: Var,
    lv: &LayerVars,
    heads: usize,
    batch: usize,
    weights_out: &mut Vec<Var>,
) -> Result<Var> {
    let (rows, d) = (g.shape(x)[0], g.shape(x)[1]);
    if heads == 0 || d % heads != 0 || batch == 0 || rows % batch != 0 {
        return Err(ModelError::Input(format!(
            "cannot split [{rows}, {d}] into {batch} sequences and {heads} heads"
        )));
    }
    let seq = rows / batch;
    let dk = d / heads;
    let q = linear(g, x, lv.wq, lv.bq)?;
    let k = linear(g, x, lv.wk, lv.bk)?;
    let v = linear(g, x, lv.wv, lv.bv)?;
    let mut per_image = Vec::with_capacity(batch);
    for b in 0..batch {
        let (lo, hi) = (b * seq, (b + 1) * seq);
        let (qb, kb, vb) = (
            g.slice_rows(q, lo, hi)?,
            g.slice_rows(k, lo, hi)?,
            g.slice_rows(v, lo, hi)?,
        );
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (c0, c1) = (h * dk, (h + 1) * dk);
            let qh = if heads == 1 { qb } else { g.slice_cols(qb, c0, c1)? };
            let kh = if heads == 1 { kb } else { g.slice_cols(kb, c0, c1)? };
            let vh = if heads == 1 { vb } else { g.slice_cols(vb, c0, c1)? };
            let (out, w) = attention(g, qh, kh, vh)?;
            weights_out.push(w);
            head_outs.push(out);
        }
        per_image.push(if heads == 1 {
            head_outs[0]
        } else {
            g.concat_cols(&head_outs)?
        });
    }
    let merged = if batch == 1 {
        per_image[0]
    } else {
        g.concat_rows(&per_image)?
    };
    linear(g, merged, lv.wo, lv.bo)
}

/// Attention half of a pre-norm block: `z + MHA(LN1(z))`.
pub fn attention_block(
    g: &mut Graph,
    z: Var,
    lv: &LayerVars,
    cfg: &ModelConfig,
    batch: usize,
    weights_out: &mut Vec<Var>,
) -> Result<Var> {
    if g.shape(z).len() != 2 || g.shape(z)[1] != cfg.embed_dim {
        return Err(ModelError::Input(format!(
            "encoder input {:?} does not have embed_dim {}",
            g.shape(z),
            cfg.embed_dim
        )));
    }
    let h = g.layer_norm(z, lv.ln1_gamma, lv.ln1_beta, LN_EPS)?;
    let attn = multi_head_attention(g, h, lv, cfg.num_heads, batch, weights_out)?;
    Ok(g.add(z, attn)?)
}

/// Feed-forward half: `z + W2·GELU(W1·LN2(z) + b1) + b2`.
pub fn ffn_block(g: &mut Graph, z: Var, lv: &LayerVars) -> Result<Var> {
    let h = g.layer_norm(z, lv.ln2_gamma, lv.ln2_beta, LN_EPS)?;
    let hidden = linear(g, h, lv.ffn_w1, lv.ffn_b1)?;
    let hidden = g.gelu(hidden)?;
    let ffn = linear(g, hidden, lv.ffn_w2, lv.ffn_b2)?;
    Ok(g.add(z, ffn)?)
}

/// Pre-norm encoder block, [`attention_block`] then [`ffn_block`].
pub fn encoder_layer(
    g: &mut Graph,
    z: Var,
    lv: &LayerVars,
    cfg: &ModelConfig,
    batch: usize,
    weights_out: &mut Vec<Var>,
) -> Result<Var> {
    let z1 = attention_block(g, z, lv, cfg, batch, weights_out)?;
    ffn_block(g, z1, lv)
}

/// Final LayerNorm on each sequence's class token, affine head, softmax.
/// Returns `(logits, probs)`.
pub fn classify(
    g: &mut Graph,
    pv: &ParamVars,
    cfg: &ModelConfig,
    z: Var,
    batch: usize,
) -> Result<(Var, Var)> {
    let seq = cfg.seq_len();
    if g.shape(z) != [batch * seq, cfg.embed_dim] {
        return Err(ModelError::Input(format!(
            "classifier input {:?} is not [{}, {}]",
            g.shape(z),
            batch * seq,
            cfg.embed_dim
        )));
    }
    let cls_rows = (0..batch)
        .map(|b| g.slice_rows(z, b * seq, b * seq + 1))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let cls = if batch == 1 {
        cls_rows[0]
    } else {
        g.concat_rows(&cls_rows)?
    };
    let cls = g.layer_norm(cls, pv.final_gamma, pv.final_beta, LN_EPS)?;
    let logits = linear(g, cls, pv.head_w, pv.head_b)?;
    let probs = g.softmax(logits, 1)?;
    Ok((logits, probs))
}

/// Handles into the graph produced by [`forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[B, num_classes]` class probabilities.
    pub probs: Var,
    pub logits: Var,
    /// Every attention weight matrix, layer-major.
    pub attention: Vec<Var>,
}

/// Full model: patchify, embed, encoder blocks, final LayerNorm on the
/// class tokens, affine head, softmax.
pub fn forward(
    g: &mut Graph,
    pv: &ParamVars,
    cfg: &ModelConfig,
    images: &[&ImageTensor],
) -> Result<Forward> {
    if images.is_empty() {
        return Err(ModelError::Input("empty batch".into()));
    }
    let expected = (cfg.in_channels, cfg.image_size, cfg.image_size);
    let mut patch_data = Vec::with_capacity(images.len() * cfg.num_patches() * cfg.patch_dim());
    for (i, img) in images.iter().enumerate() {
        if img.shape() != expected {
            return Err(ModelError::Input(format!(
                "image {i} has shape {:?}, model expects {expected:?}",
                img.shape()
            )));
        }
        patch_data.extend(patchify(img, cfg.patch_size)?.into_data());
    }
    let batch = images.len();
    let patches = g.input(Tensor::new(
        vec![batch * cfg.num_patches(), cfg.patch_dim()],
        patch_data,
    )?)?;
    let mut z = embed(g, pv, cfg, patches)?;
    let mut attention = Vec::new();
    for lv in &pv.layers {
        z = encoder_layer(g, z, lv, cfg, batch, &mut attention)?;
    }
    let (logits, probs) = classify(g, pv, cfg, z, batch)?;
    Ok(Forward {
        probs,
        logits,
        attention,
    })
}

/// Inference-only forward pass returning `[B, num_classes]` probabilities.
pub fn predict(params: &ViTParams, images: &[&ImageTensor]) -> Result<Tensor> {
    let mut g = Graph::new();
    let pv = ParamVars::register(&mut g, params, false)?;
    let out = forward(&mut g, &pv, params.config(), images)?;
    Ok(g.value(out.probs).clone())
}
