//! Forward passes of the embedding network: shallow feature extraction,
//! residual dense blocks, windowed dual attention, and global fusion.

use super::IvfConfig;
use crate::error::{Error, Result};
use crate::numerics::layout::{
    merge_heads_map, split_heads_map, window_merge_map, window_partition_map,
};
use crate::numerics::tape::{concat, BoundParams, Var};
use crate::numerics::Element;

fn conv<'t, E: Element>(
    x: Var<'t, E>,
    name: &str,
    params: &BoundParams<'t, E>,
) -> Result<Var<'t, E>> {
    x.conv2d(
        params.var(&format!("{name}.weight"))?,
        params.var(&format!("{name}.bias"))?,
    )
}

fn linear<'t, E: Element>(
    x: Var<'t, E>,
    name: &str,
    params: &BoundParams<'t, E>,
) -> Result<Var<'t, E>> {
    x.linear(
        params.var(&format!("{name}.weight"))?,
        params.var(&format!("{name}.bias"))?,
    )
}

fn layer_norm<'t, E: Element>(
    x: Var<'t, E>,
    name: &str,
    params: &BoundParams<'t, E>,
) -> Result<Var<'t, E>> {
    x.layer_norm(
        params.var(&format!("{name}.gamma"))?,
        params.var(&format!("{name}.beta"))?,
    )
}

/// Residual dense block: densely connected 3x3 convs with ReLU, a 1x1
/// local fusion, and a local residual.
pub fn rdb_forward<'t, E: Element>(
    x: Var<'t, E>,
    prefix: &str,
    params: &BoundParams<'t, E>,
    cfg: &IvfConfig,
) -> Result<Var<'t, E>> {
    let mut feats = vec![x];
    for j in 0..cfg.rdb_convs {
        let inp = concat(&feats, 0)?;
        feats.push(conv(inp, &format!("{prefix}.conv{j}"), params)?.relu());
    }
    let fused = conv(concat(&feats, 0)?, &format!("{prefix}.fuse"), params)?;
    fused.add(x)
}

/// Shallow feature extraction: pixel-unshuffle by 2, a 5x5 conv producing
/// the fusion residual, then a 3x3 conv producing the block input. Both
/// outputs are `(C, H/2, W/2)`.
pub fn sfe_forward<'t, E: Element>(
    x: Var<'t, E>,
    prefix: &str,
    params: &BoundParams<'t, E>,
) -> Result<(Var<'t, E>, Var<'t, E>)> {
    let shape = x.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "shallow feature extraction needs even dims, got {h}x{w}"
        )));
    }
    let down = x.gather(&crate::numerics::layout::pixel_unshuffle_map(c, h, w, 2)?)?;
    let feat_m1 = conv(down, &format!("{prefix}.conv5"), params)?;
    let feat_0 = conv(feat_m1, &format!("{prefix}.conv3"), params)?;
    Ok((feat_m1, feat_0))
}

/// Two-layer token MLP with a pre-norm and GELU.
fn token_mlp<'t, E: Element>(
    x: Var<'t, E>,
    prefix: &str,
    params: &BoundParams<'t, E>,
) -> Result<Var<'t, E>> {
    let n = layer_norm(x, &format!("{prefix}.norm"), params)?;
    let h = linear(n, &format!("{prefix}.fc1"), params)?.gelu();
    linear(h, &format!("{prefix}.fc2"), params)
}

/// The dual attention mechanism over head-split window tokens.
///
/// The image attention calibrates the event attention additively after the
/// softmax (calibrated rows sum to 2 unless `dam_renormalize`), the
/// calibrated weights aggregate the event values, and the image token MLP
/// consumes the concatenation of both aggregates so event texture flows
/// into the image path. Inputs: attention `(nw*heads, T, T)`, values
/// `(nw*heads, T, d)`. Outputs: per-stream tokens `(nw, T, C)`.
pub fn dam_attention<'t, E: Element>(
    attn_b: Var<'t, E>,
    attn_e: Var<'t, E>,
    v_b: Var<'t, E>,
    v_e: Var<'t, E>,
    windows: usize,
    block_prefix: &str,
    params: &BoundParams<'t, E>,
    cfg: &IvfConfig,
) -> Result<(Var<'t, E>, Var<'t, E>)> {
    let v_shape = v_b.shape();
    let tokens = v_shape[1];
    let merge = merge_heads_map(windows, tokens, cfg.channels, cfg.heads)?;

    let b_bar = attn_b.bmm(v_b)?.gather(&merge)?;
    let e_bar = if cfg.dam {
        let mut calibrated = attn_e.add(attn_b)?;
        if cfg.dam_renormalize {
            calibrated = calibrated.scale(0.5);
        }
        calibrated.bmm(v_e)?.gather(&merge)?
    } else {
        attn_e.bmm(v_e)?.gather(&merge)?
    };

    let e_out = token_mlp(e_bar, &format!("{block_prefix}.e.mlp"), params)?;
    let b_in = if cfg.dam {
        concat(&[b_bar, e_bar], 2)?
    } else {
        b_bar
    };
    let b_out = token_mlp(b_in, &format!("{block_prefix}.b.mlp"), params)?;
    Ok((b_out, e_out))
}

fn qkv<'t, E: Element>(
    tokens: Var<'t, E>,
    prefix: &str,
    params: &BoundParams<'t, E>,
    cfg: &IvfConfig,
) -> Result<(Var<'t, E>, Var<'t, E>, Var<'t, E>)> {
    let shape = tokens.shape();
    let (nw, t) = (shape[0], shape[1]);
    let split = split_heads_map(nw, t, cfg.channels, cfg.heads)?;
    let n = layer_norm(tokens, &format!("{prefix}.norm1"), params)?;
    let q = linear(n, &format!("{prefix}.q"), params)?.gather(&split)?;
    let k = linear(n, &format!("{prefix}.k"), params)?.gather(&split)?;
    let v = linear(n, &format!("{prefix}.v"), params)?.gather(&split)?;
    Ok((q, k, v))
}

/// One dual-attention block: per-stream residual dense block, window
/// partition (cyclically shifted on even 1-based block indices), per-stream
/// multi-head attention weights, the dual attention mechanism, and a
/// residual connection around the attention unit.
pub fn dals_forward<'t, E: Element>(
    b_feat: Var<'t, E>,
    e_feat: Var<'t, E>,
    block_index: usize,
    params: &BoundParams<'t, E>,
    cfg: &IvfConfig,
) -> Result<(Var<'t, E>, Var<'t, E>)> {
    let shape = b_feat.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if h % cfg.window != 0 || w % cfg.window != 0 {
        return Err(Error::shape(format!(
            "feature dims {h}x{w} not divisible by window {}",
            cfg.window
        )));
    }
    let prefix = format!("dals{block_index}");
    let b_r = rdb_forward(b_feat, &format!("{prefix}.b.rdb"), params, cfg)?;
    let e_r = rdb_forward(e_feat, &format!("{prefix}.e.rdb"), params, cfg)?;

    let shift = block_index % 2 == 0;
    let part = window_partition_map(c, h, w, cfg.window, shift)?;
    let merge = window_merge_map(c, h, w, cfg.window, shift)?;
    let tb = b_r.gather(&part)?;
    let te = e_r.gather(&part)?;
    let windows = tb.shape()[0];

    let (qb, kb, vb) = qkv(tb, &format!("{prefix}.b"), params, cfg)?;
    let (qe, ke, ve) = qkv(te, &format!("{prefix}.e"), params, cfg)?;
    let scale = 1.0 / ((cfg.channels / cfg.heads) as f64).sqrt();
    let attn_b = qb.bmm_nt(kb)?.scale(scale).softmax_lastdim();
    let attn_e = qe.bmm_nt(ke)?.scale(scale).softmax_lastdim();

    let (b_out, e_out) =
        dam_attention(attn_b, attn_e, vb, ve, windows, &prefix, params, cfg)?;
    let b_next = tb.add(b_out)?.gather(&merge)?;
    let e_next = te.add(e_out)?.gather(&merge)?;
    Ok((b_next, e_next))
}

/// The full time-constant embedding: shallow features for both streams,
/// all dual-attention blocks, and global feature fusion
/// `F_db = B_feat^-1 + Conv_k(Conv_1x1(F_cat))`.
///
/// Returns `(F_db, B_feat^-1)`; nothing here depends on a query time.
pub fn embed_forward<'t, E: Element>(
    blur: Var<'t, E>,
    events: Var<'t, E>,
    params: &BoundParams<'t, E>,
    cfg: &IvfConfig,
) -> Result<(Var<'t, E>, Var<'t, E>)> {
    let bs = blur.shape();
    let es = events.shape();
    if bs.len() != 3 || es.len() != 3 || bs[1] != es[1] || bs[2] != es[2] {
        return Err(Error::shape(
            "blur and event tensors must be (C, H, W) with equal spatial dims",
        ));
    }
    let (b_m1, mut b) = sfe_forward(blur, "sfe_img", params)?;
    let (_e_m1, mut e) = sfe_forward(events, "sfe_evt", params)?;

    let mut collected = Vec::with_capacity(cfg.dals_blocks);
    let mut collected_e = Vec::new();
    for i in 1..=cfg.dals_blocks {
        let (nb, ne) = dals_forward(b, e, i, params, cfg)?;
        b = nb;
        e = ne;
        collected.push(nb);
        if !cfg.dam {
            collected_e.push(ne);
        }
    }
    collected.extend(collected_e);
    let f_cat = concat(&collected, 0)?;
    let fused = conv(conv(f_cat, "gff.conv1", params)?, "gff.conv2", params)?;
    let f_db = b_m1.add(fused)?;
    Ok((f_db, b_m1))
}
