use super::attention::{attention_backward, attention_forward, AttentionCache};
use super::layers::{
    apply_linear, gated_mlp, gated_mlp_backward, linear_backward, relu, relu_backward, rmsnorm_rows,
    rmsnorm_rows_backward, MlpCache, RmsCache,
};
use super::params::BlockIdx;
use super::{ModelError, ModelParams};
use crate::meshkit::Adjacency;
use crate::tensor::{Mat, Scalar};

struct BlockCache<T> {
    attn: AttentionCache<T>,
    norm1: RmsCache<T>,
    mlp: MlpCache<T>,
    norm2: RmsCache<T>,
}

/// Intermediate values of a forward pass, consumed by [`backward_from_cache`].
pub struct ForwardCache<T> {
    features: Mat<T>,
    enc_pre: Mat<T>,
    enc_hidden: Mat<T>,
    enc_norm: RmsCache<T>,
    blocks: Vec<BlockCache<T>>,
    dec_in: Mat<T>,
    dec_norm: RmsCache<T>,
    dec_act_pre: Mat<T>,
    dec_act: Mat<T>,
}

/// Parameter and input gradients of one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Vec<T>,
    pub input: Mat<T>,
}

fn check<T: Scalar>(m: &Mat<T>, layer: impl FnOnce() -> String) -> Result<(), ModelError> {
    match m.first_non_finite() {
        None => Ok(()),
        Some(k) => Err(ModelError::NonFinite { layer: layer(), node: k / m.cols.max(1) }),
    }
}

fn check_shapes<T: Scalar>(params: &ModelParams<T>, features: &Mat<T>, adj: &Adjacency) -> Result<(), ModelError> {
    let c = &params.config;
    if features.cols != c.in_features {
        return Err(ModelError::Shape(format!("features have {} columns, model expects {}", features.cols, c.in_features)));
    }
    if adj.num_nodes() != features.rows {
        return Err(ModelError::Shape(format!("adjacency has {} nodes, features {}", adj.num_nodes(), features.rows)));
    }
    Ok(())
}

fn block_forward_cached<T: Scalar>(
    z: Mat<T>,
    adj: &Adjacency,
    params: &ModelParams<T>,
    b: &BlockIdx,
    for_backward: bool,
) -> (Mat<T>, BlockCache<T>) {
    let c = &params.config;
    let p = &params.values;
    let eps = T::of(c.rms_eps);
    let residual = z.clone();
    let (mut u, attn) = attention_forward(z, adj, p, b, c.heads, c.mask_mode, for_backward);
    u.add_assign(&residual);
    let (z1, norm1) = rmsnorm_rows(u, &p[b.norm1.clone()], eps);
    let (mut w, mlp) = gated_mlp(z1.clone(), p, &b.l, &b.r, &b.f);
    w.add_assign(&z1);
    let (z2, norm2) = rmsnorm_rows(w, &p[b.norm2.clone()], eps);
    (z2, BlockCache { attn, norm1, mlp, norm2 })
}

/// Full encode-process-decode pass keeping everything backward needs.
pub fn forward_with_cache<T: Scalar>(
    params: &ModelParams<T>,
    features: &Mat<T>,
    adj: &Adjacency,
) -> Result<(Mat<T>, ForwardCache<T>), ModelError> {
    check_shapes(params, features, adj)?;
    let lay = &params.layout;
    let p = &params.values;
    let eps = T::of(params.config.rms_eps);

    let enc_pre = apply_linear(features, p, &lay.enc1);
    let enc_hidden = relu(&enc_pre);
    let h2 = apply_linear(&enc_hidden, p, &lay.enc2);
    let (mut z, enc_norm) = rmsnorm_rows(h2, &p[lay.enc_norm.clone()], eps);
    check(&z, || "encoder".into())?;

    let mut blocks = Vec::with_capacity(lay.blocks.len());
    for (l, b) in lay.blocks.iter().enumerate() {
        let (next, cache) = block_forward_cached(z, adj, params, b, true);
        check(&next, || format!("block {l}"))?;
        blocks.push(cache);
        z = next;
    }

    let dec_pre = apply_linear(&z, p, &lay.dec1);
    let (dec_act_pre, dec_norm) = rmsnorm_rows(dec_pre, &p[lay.dec_norm.clone()], eps);
    let dec_act = relu(&dec_act_pre);
    let out = apply_linear(&dec_act, p, &lay.dec2);
    check(&out, || "decoder".into())?;
    Ok((
        out,
        ForwardCache {
            features: features.clone(),
            enc_pre,
            enc_hidden,
            enc_norm,
            blocks,
            dec_in: z,
            dec_norm,
            dec_act_pre,
            dec_act,
        },
    ))
}

/// `decoder(blocks(encoder(features)))`.
pub fn forward<T: Scalar>(params: &ModelParams<T>, features: &Mat<T>, adj: &Adjacency) -> Result<Mat<T>, ModelError> {
    check_shapes(params, features, adj)?;
    let lay = &params.layout;
    let p = &params.values;
    let eps = T::of(params.config.rms_eps);
    let h = relu(&apply_linear(features, p, &lay.enc1));
    let mut z = rmsnorm_rows(apply_linear(&h, p, &lay.enc2), &p[lay.enc_norm.clone()], eps).0;
    check(&z, || "encoder".into())?;
    for (l, b) in lay.blocks.iter().enumerate() {
        z = block_forward_cached(z, adj, params, b, false).0;
        check(&z, || format!("block {l}"))?;
    }
    let h = rmsnorm_rows(apply_linear(&z, p, &lay.dec1), &p[lay.dec_norm.clone()], eps).0;
    let out = apply_linear(&relu(&h), p, &lay.dec2);
    check(&out, || "decoder".into())?;
    Ok(out)
}

/// Reverse-mode gradients of `<upstream, forward(..)>`.
pub fn backward_from_cache<T: Scalar>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    adj: &Adjacency,
    upstream: &Mat<T>,
) -> Result<Gradients<T>, ModelError> {
    let c = &params.config;
    if upstream.rows != cache.features.rows || upstream.cols != c.out_features {
        return Err(ModelError::Shape(format!(
            "upstream gradient is {}x{}, expected {}x{}",
            upstream.rows, upstream.cols, cache.features.rows, c.out_features
        )));
    }
    let lay = &params.layout;
    let p = &params.values;
    let mut g = vec![T::zero(); p.len()];

    let g_act = linear_backward(&cache.dec_act, p, &lay.dec2, upstream, &mut g);
    let g_norm_out = relu_backward(&cache.dec_act_pre, &g_act);
    let g_dec_pre =
        rmsnorm_rows_backward(&cache.dec_norm, &p[lay.dec_norm.clone()], &g_norm_out, &mut g[lay.dec_norm.clone()]);
    let mut gz = linear_backward(&cache.dec_in, p, &lay.dec1, &g_dec_pre, &mut g);

    for (b, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
        // z2 = norm2(mlp(z1) + z1)
        let gw = rmsnorm_rows_backward(&bc.norm2, &p[b.norm2.clone()], &gz, &mut g[b.norm2.clone()]);
        let mut gz1 = gated_mlp_backward(&bc.mlp, p, &b.l, &b.r, &b.f, &gw, &mut g);
        gz1.add_assign(&gw);
        // z1 = norm1(attn(z) + z)
        let gu = rmsnorm_rows_backward(&bc.norm1, &p[b.norm1.clone()], &gz1, &mut g[b.norm1.clone()]);
        let mut gin = attention_backward(&bc.attn, adj, p, b, c.heads, c.mask_mode, &gu, &mut g);
        gin.add_assign(&gu);
        gz = gin;
    }

    let gh2 = rmsnorm_rows_backward(&cache.enc_norm, &p[lay.enc_norm.clone()], &gz, &mut g[lay.enc_norm.clone()]);
    let g_hidden = linear_backward(&cache.enc_hidden, p, &lay.enc2, &gh2, &mut g);
    let g_pre = relu_backward(&cache.enc_pre, &g_hidden);
    let g_in = linear_backward(&cache.features, p, &lay.enc1, &g_pre, &mut g);
    Ok(Gradients { params: g, input: g_in })
}

/// Runs the forward pass and returns gradients for `upstream`.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    features: &Mat<T>,
    adj: &Adjacency,
    upstream: &Mat<T>,
) -> Result<Gradients<T>, ModelError> {
    let (_, cache) = forward_with_cache(params, features, adj)?;
    backward_from_cache(params, &cache, adj, upstream)
}

/// Attention sublayer of block `layer` on its own.
pub fn masked_attention<T: Scalar>(
    params: &ModelParams<T>,
    layer: usize,
    z: &Mat<T>,
    adj: &Adjacency,
) -> Result<Mat<T>, ModelError> {
    let b = block_idx(params, layer)?;
    check_tokens(params, z, adj)?;
    let c = &params.config;
    Ok(attention_forward(z.clone(), adj, &params.values, b, c.heads, c.mask_mode, false).0)
}

/// Gated MLP of block `layer` on its own.
pub fn gated_mlp_layer<T: Scalar>(params: &ModelParams<T>, layer: usize, z: &Mat<T>) -> Result<Mat<T>, ModelError> {
    let b = block_idx(params, layer)?;
    if z.cols != params.config.width {
        return Err(ModelError::Shape(format!("tokens have width {}, model {}", z.cols, params.config.width)));
    }
    Ok(gated_mlp(z.clone(), &params.values, &b.l, &b.r, &b.f).0)
}

/// One processor block: `Z' = norm(attn(Z) + Z)`, `Z_l = norm(mlp(Z') + Z')`.
pub fn block_forward<T: Scalar>(
    params: &ModelParams<T>,
    layer: usize,
    z: &Mat<T>,
    adj: &Adjacency,
) -> Result<Mat<T>, ModelError> {
    let b = block_idx(params, layer)?;
    check_tokens(params, z, adj)?;
    Ok(block_forward_cached(z.clone(), adj, params, b, false).0)
}

fn block_idx<T>(params: &ModelParams<T>, layer: usize) -> Result<&BlockIdx, ModelError> {
    params
        .layout
        .blocks
        .get(layer)
        .ok_or_else(|| ModelError::Shape(format!("no block {layer} in a {}-layer model", params.layout.blocks.len())))
}

fn check_tokens<T: Scalar>(params: &ModelParams<T>, z: &Mat<T>, adj: &Adjacency) -> Result<(), ModelError> {
    if z.cols != params.config.width {
        return Err(ModelError::Shape(format!("tokens have width {}, model {}", z.cols, params.config.width)));
    }
    if adj.num_nodes() != z.rows {
        return Err(ModelError::Shape(format!("adjacency has {} nodes, tokens {}", adj.num_nodes(), z.rows)));
    }
    Ok(())
}
