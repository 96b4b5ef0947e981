//! Continuous-time decoding: upsample the time-constant embedding, attach
//! the Fourier-encoded query time per pixel, and run the per-pixel MLP that
//! produces the residual around the blurry input.

use std::cell::Cell;

use super::eer::{eer_forward, EerParams};
use super::{
    event_tensor_to_tensor, frame_to_tensor, subtle_to_tensor, tensor_to_frame, IvfConfig,
    IvfParams,
};
use crate::error::{Error, Result};
use crate::events::EventStream;
use crate::imaging::Frame;
use crate::numerics::layout::{chw_to_tokens_map, pixel_shuffle_map};
use crate::numerics::tape::{concat, BoundParams, Var};
use crate::numerics::{Element, Tape, Tensor};
use crate::representation::{fourier_encode, stack_events, subtle_segments};

/// Decode the latent image at normalized time `t`.
///
/// Returns the *pre-clamp* `(1, H, W)` output `B + residual`; training
/// losses read it directly, inference clamps afterwards. `f_db` is the
/// time-constant embedding, `blur` the `(1, H, W)` blurry input.
pub fn decode_forward<'t, E: Element>(
    f_db: Var<'t, E>,
    t: f64,
    blur: Var<'t, E>,
    params: &BoundParams<'t, E>,
    cfg: &IvfConfig,
) -> Result<Var<'t, E>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!(
            "query time {t} outside the exposure interval [0, 1]"
        )));
    }
    let shape = f_db.shape();
    let (c, h2, w2) = (shape[0], shape[1], shape[2]);
    let (h, w) = (2 * h2, 2 * w2);

    // Time-independent upsampling path.
    let up = f_db
        .gather(&pixel_shuffle_map(c, h2, w2, 2)?)?
        .conv2d(params.var("up.conv.weight")?, params.var("up.conv.bias")?)?;

    // Broadcast the time encoding across the spatial grid as 2L channels.
    let eta = fourier_encode(t, cfg.fourier_l)?;
    let tape_eta = {
        let mut data = Vec::with_capacity(2 * cfg.fourier_l * h * w);
        for &v in eta.values() {
            data.extend(std::iter::repeat(E::from_f64(v)).take(h * w));
        }
        Tensor::new(&[2 * cfg.fourier_l, h, w], data)?
    };
    let eta_var = blur.tape().constant(tape_eta);

    let x = concat(&[up, eta_var], 0)?;
    let mut tokens = x.gather(&chw_to_tokens_map(c + 2 * cfg.fourier_l, h, w))?;
    for j in 0..cfg.mlp_layers {
        tokens = tokens
            .linear(
                params.var(&format!("mlp.fc{j}.weight"))?,
                params.var(&format!("mlp.fc{j}.bias"))?,
            )?
            .gelu();
    }
    let residual = tokens
        .linear(params.var("mlp.out.weight")?, params.var("mlp.out.bias")?)?
        .reshape(&[1, h, w])?;
    blur.add(residual)
}

/// One blurry image plus its events, embedded once and queried at many
/// timestamps. Counts embeddings and queries so callers can assert the
/// embedding is reused.
pub struct QuerySession<'p, E: Element> {
    params: &'p IvfParams<E>,
    blur: Frame,
    stream: EventStream,
    f_db: Tensor<E>,
    embed_calls: usize,
    queries: Cell<usize>,
}

impl<'p, E: Element> QuerySession<'p, E> {
    /// Build the session: stacks the events into `segments` intervals and
    /// runs the embedding network exactly once, without gradients.
    pub fn new(
        params: &'p IvfParams<E>,
        blur: &Frame,
        stream: &EventStream,
        segments: usize,
    ) -> Result<Self> {
        if blur.width() != stream.width() || blur.height() != stream.height() {
            return Err(Error::shape("blur and event stream dimensions differ"));
        }
        let event_tensor = stack_events(stream, segments)?;
        if 2 * segments != params.event_channels {
            return Err(Error::shape(format!(
                "model expects {} event channels, stacking produced {}",
                params.event_channels,
                2 * segments
            )));
        }
        let tape = Tape::new(false);
        let bound = params.store.bind(&tape);
        let blur_var = tape.constant(frame_to_tensor(blur));
        let ev_var = tape.constant(event_tensor_to_tensor(&event_tensor));
        let (f_db, _) = super::embed_forward(blur_var, ev_var, &bound, &params.config)?;
        Ok(QuerySession {
            params,
            blur: blur.clone(),
            stream: stream.clone(),
            f_db: f_db.value(),
            embed_calls: 1,
            queries: Cell::new(0),
        })
    }

    pub fn embed_calls(&self) -> usize {
        self.embed_calls
    }

    pub fn queries(&self) -> usize {
        self.queries.get()
    }

    /// The cached time-constant embedding.
    pub fn embedding(&self) -> &Tensor<E> {
        &self.f_db
    }

    /// Latent image at `t`, clamped into `[0, 1]`.
    pub fn decode(&self, t: f64) -> Result<Frame> {
        self.queries.set(self.queries.get() + 1);
        let tape = Tape::new(false);
        let bound = self.params.store.bind(&tape);
        let f_db = tape.constant(self.f_db.clone());
        let blur = tape.constant(frame_to_tensor(&self.blur));
        let out = decode_forward(f_db, t, blur, &bound, &self.params.config)?;
        tensor_to_frame(&out.value(), t)
    }

    /// Latent image at `t`, optionally refined by the edge-refinement
    /// network using the nearest-event stacks around `t`.
    pub fn query(&self, t: f64, eer: Option<&EerParams<E>>) -> Result<Frame> {
        let initial = self.decode(t)?;
        match eer {
            None => Ok(initial),
            Some(eer_params) => {
                let subtle = subtle_segments(&self.stream, t, &eer_params.config.p_list)?;
                let tape = Tape::new(false);
                let bound = eer_params.store.bind(&tape);
                let init_var = tape.constant(frame_to_tensor(&initial));
                let subtle_var = tape.constant(subtle_to_tensor(&subtle));
                let out = eer_forward(init_var, subtle_var, &bound, &eer_params.config)?;
                tensor_to_frame(&out.value(), t)
            }
        }
    }
}

/// One-shot convenience wrapper: embed, then decode (and optionally refine)
/// at a single timestamp.
pub fn query<E: Element>(
    params: &IvfParams<E>,
    blur: &Frame,
    stream: &EventStream,
    segments: usize,
    t: f64,
    eer: Option<&EerParams<E>>,
) -> Result<Frame> {
    QuerySession::new(params, blur, stream, segments)?.query(t, eer)
}
