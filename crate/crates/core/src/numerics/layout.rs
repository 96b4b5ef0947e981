//! Data-movement layers expressed as index bijections: pixel
//! shuffle/unshuffle, (shifted) window partition/merge, attention head
//! split/merge, and the channel-map/token-list reshape. Representing them
//! all as gathers gives every pair an exact inverse and a trivial adjoint
//! (scatter through the same map).

use std::sync::Arc;

use crate::error::{Error, Result};

/// A bijective gather: `out[i] = in[index[i]]` with the given shapes.
#[derive(Debug, Clone)]
pub struct LayoutMap {
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub index: Arc<Vec<u32>>,
}

impl LayoutMap {
    fn new(in_shape: Vec<usize>, out_shape: Vec<usize>, index: Vec<u32>) -> Self {
        debug_assert_eq!(
            in_shape.iter().product::<usize>(),
            out_shape.iter().product::<usize>()
        );
        debug_assert_eq!(index.len(), out_shape.iter().product::<usize>());
        LayoutMap {
            in_shape,
            out_shape,
            index: Arc::new(index),
        }
    }

    /// The inverse bijection (gathering back).
    pub fn inverse(&self) -> LayoutMap {
        let mut inv = vec![0u32; self.index.len()];
        for (out_pos, &in_pos) in self.index.iter().enumerate() {
            inv[in_pos as usize] = out_pos as u32;
        }
        LayoutMap::new(self.out_shape.clone(), self.in_shape.clone(), inv)
    }
}

/// `(c, h, w) -> (c * r^2, h / r, w / r)`: sub-pixel `(y % r, x % r)` of
/// input channel `c` becomes output channel `c * r^2 + (y % r) * r + (x % r)`.
pub fn pixel_unshuffle_map(c: usize, h: usize, w: usize, r: usize) -> Result<LayoutMap> {
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::shape(format!(
            "pixel_unshuffle: {h}x{w} not divisible by r={r}"
        )));
    }
    let (ho, wo) = (h / r, w / r);
    let mut index = Vec::with_capacity(c * h * w);
    for co in 0..c * r * r {
        let ci = co / (r * r);
        let dy = (co % (r * r)) / r;
        let dx = co % r;
        for y in 0..ho {
            for x in 0..wo {
                index.push(((ci * h + (y * r + dy)) * w + (x * r + dx)) as u32);
            }
        }
    }
    Ok(LayoutMap::new(
        vec![c, h, w],
        vec![c * r * r, ho, wo],
        index,
    ))
}

/// Exact inverse of [`pixel_unshuffle_map`]: `(c, h, w) -> (c / r^2, h * r, w * r)`.
pub fn pixel_shuffle_map(c: usize, h: usize, w: usize, r: usize) -> Result<LayoutMap> {
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::shape(format!(
            "pixel_shuffle: {c} channels not divisible by r^2={}",
            r * r
        )));
    }
    Ok(pixel_unshuffle_map(c / (r * r), h * r, w * r, r)?.inverse())
}

/// Partition `(c, h, w)` into non-overlapping `win x win` windows of
/// flattened tokens: output `(n_windows, win * win, c)`, windows ordered
/// row-major, tokens row-major within each window. With `shift`, a cyclic
/// roll by `(win/2, win/2)` is applied first.
pub fn window_partition_map(
    c: usize,
    h: usize,
    w: usize,
    win: usize,
    shift: bool,
) -> Result<LayoutMap> {
    if win == 0 || h % win != 0 || w % win != 0 {
        return Err(Error::shape(format!(
            "window_partition: {h}x{w} not divisible by window {win}"
        )));
    }
    let s = if shift { win / 2 } else { 0 };
    let (wy_n, wx_n) = (h / win, w / win);
    let mut index = Vec::with_capacity(c * h * w);
    for wy in 0..wy_n {
        for wx in 0..wx_n {
            for ty in 0..win {
                for tx in 0..win {
                    let y = (wy * win + ty + s) % h;
                    let x = (wx * win + tx + s) % w;
                    for ci in 0..c {
                        index.push(((ci * h + y) * w + x) as u32);
                    }
                }
            }
        }
    }
    Ok(LayoutMap::new(
        vec![c, h, w],
        vec![wy_n * wx_n, win * win, c],
        index,
    ))
}

/// Exact inverse of [`window_partition_map`] with the same `shift`.
pub fn window_merge_map(
    c: usize,
    h: usize,
    w: usize,
    win: usize,
    shift: bool,
) -> Result<LayoutMap> {
    Ok(window_partition_map(c, h, w, win, shift)?.inverse())
}

/// `(b, t, c) -> (b * heads, t, c / heads)`; head `i` takes the channel
/// block `[i * d, (i + 1) * d)`.
pub fn split_heads_map(b: usize, t: usize, c: usize, heads: usize) -> Result<LayoutMap> {
    if heads == 0 || c % heads != 0 {
        return Err(Error::shape(format!(
            "split_heads: {c} channels not divisible by {heads} heads"
        )));
    }
    let d = c / heads;
    let mut index = Vec::with_capacity(b * t * c);
    for bi in 0..b {
        for head in 0..heads {
            for ti in 0..t {
                for di in 0..d {
                    index.push(((bi * t + ti) * c + head * d + di) as u32);
                }
            }
        }
    }
    Ok(LayoutMap::new(vec![b, t, c], vec![b * heads, t, d], index))
}

pub fn merge_heads_map(b: usize, t: usize, c: usize, heads: usize) -> Result<LayoutMap> {
    Ok(split_heads_map(b, t, c, heads)?.inverse())
}

/// `(c, h, w) -> (h * w, c)`: one token per pixel for per-pixel MLPs.
pub fn chw_to_tokens_map(c: usize, h: usize, w: usize) -> LayoutMap {
    let mut index = Vec::with_capacity(c * h * w);
    for pix in 0..h * w {
        for ci in 0..c {
            index.push((ci * h * w + pix) as u32);
        }
    }
    LayoutMap::new(vec![c, h, w], vec![h * w, c], index)
}
