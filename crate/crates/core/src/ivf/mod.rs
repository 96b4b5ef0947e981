//! The implicit-video-function network: dual shallow feature extraction,
//! dual-attention blocks over windowed tokens, global feature fusion, a
//! continuous-time decoding MLP, and the event-based edge refinement
//! network.

pub mod blocks;
pub mod decoder;
pub mod eer;

pub use blocks::{dals_forward, dam_attention, embed_forward, sfe_forward};
pub use decoder::{decode_forward, QuerySession};
pub use eer::{eer_forward, EerConfig, EerParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Frame;
use crate::numerics::{Element, ParamStore, Tensor};
use crate::representation::EventTensor;

/// Architecture hyper-parameters. The defaults are the desk-scale
/// configuration; the full-size configuration (20 blocks, 256-wide decoder
/// layers) is expressible through the same fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IvfConfig {
    /// Feature channels C per stream.
    pub channels: usize,
    /// Number of dual-attention blocks N.
    pub dals_blocks: usize,
    /// Attention window edge length.
    pub window: usize,
    /// Attention heads; must divide `channels`.
    pub heads: usize,
    /// Fourier time-encoding frequencies L (encoding length 2L).
    pub fourier_l: usize,
    /// Hidden width of the decoding MLP.
    pub mlp_hidden: usize,
    /// Number of hidden layers in the decoding MLP.
    pub mlp_layers: usize,
    /// Dense conv layers per residual dense block.
    pub rdb_convs: usize,
    /// Growth channels per dense conv layer.
    pub rdb_growth: usize,
    /// Kernel size of the second fusion convolution.
    pub gff_kernel: usize,
    /// Dual attention: calibrate event attention with image attention and
    /// feed event features into the image MLP. Disabling gives the
    /// ablation variant with independent streams fused only at the end.
    pub dam: bool,
    /// Renormalize calibrated attention rows back to sum 1 instead of the
    /// literal post-softmax sum of 2.
    pub dam_renormalize: bool,
}

impl Default for IvfConfig {
    fn default() -> Self {
        IvfConfig {
            channels: 16,
            dals_blocks: 4,
            window: 4,
            heads: 2,
            fourier_l: 8,
            mlp_hidden: 64,
            mlp_layers: 4,
            rdb_convs: 3,
            rdb_growth: 8,
            gff_kernel: 3,
            dam: true,
            dam_renormalize: false,
        }
    }
}

impl IvfConfig {
    /// A deliberately tiny configuration for finite-difference checks.
    pub fn tiny() -> Self {
        IvfConfig {
            channels: 4,
            dals_blocks: 2,
            window: 2,
            heads: 2,
            fourier_l: 3,
            mlp_hidden: 8,
            mlp_layers: 2,
            rdb_convs: 2,
            rdb_growth: 2,
            gff_kernel: 3,
            dam: true,
            dam_renormalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::invalid(
                "channels must be positive and divisible by heads",
            ));
        }
        if self.channels % 4 != 0 {
            return Err(Error::invalid(
                "channels must be divisible by 4 for the pixel-shuffle decoder",
            ));
        }
        if self.dals_blocks == 0 || self.window == 0 {
            return Err(Error::invalid("dals_blocks and window must be positive"));
        }
        if self.gff_kernel % 2 == 0 {
            return Err(Error::invalid("gff_kernel must be odd"));
        }
        if self.fourier_l == 0 || self.mlp_hidden == 0 || self.mlp_layers == 0 {
            return Err(Error::invalid("decoder sizes must be positive"));
        }
        if self.rdb_convs == 0 || self.rdb_growth == 0 {
            return Err(Error::invalid("rdb sizes must be positive"));
        }
        Ok(())
    }

    /// Width of the transformer MLPs (not separately configurable).
    pub(crate) fn token_mlp_hidden(&self) -> usize {
        2 * self.channels
    }
}

/// Named parameters of the embedding network and decoder, tied to a config
/// and the event-tensor channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfParams<E: Element> {
    pub config: IvfConfig,
    pub event_channels: usize,
    pub store: ParamStore<E>,
}

/// `(name, shape, init)` triple for one parameter.
enum Init {
    Kaiming { fan_in: usize },
    Zero,
    One,
}

fn ivf_schema(config: &IvfConfig, event_channels: usize) -> Vec<(String, Vec<usize>, Init)> {
    let c = config.channels;
    let mut out = Vec::new();
    let conv = |name: String, c_out: usize, c_in: usize, k: usize, v: &mut Vec<_>| {
        v.push((
            format!("{name}.weight"),
            vec![c_out, c_in, k, k],
            Init::Kaiming { fan_in: c_in * k * k },
        ));
        v.push((format!("{name}.bias"), vec![c_out], Init::Zero));
    };
    let linear = |name: String, out_d: usize, in_d: usize, v: &mut Vec<_>| {
        v.push((
            format!("{name}.weight"),
            vec![out_d, in_d],
            Init::Kaiming { fan_in: in_d },
        ));
        v.push((format!("{name}.bias"), vec![out_d], Init::Zero));
    };
    let norm = |name: String, d: usize, v: &mut Vec<_>| {
        v.push((format!("{name}.gamma"), vec![d], Init::One));
        v.push((format!("{name}.beta"), vec![d], Init::Zero));
    };
    let rdb = |name: String, v: &mut Vec<_>| {
        for j in 0..config.rdb_convs {
            conv(
                format!("{name}.conv{j}"),
                config.rdb_growth,
                c + j * config.rdb_growth,
                3,
                v,
            );
        }
        conv(
            format!("{name}.fuse"),
            c,
            c + config.rdb_convs * config.rdb_growth,
            1,
            v,
        );
    };

    // Shallow feature extraction: pixel-unshuffle then 5x5 and 3x3 convs.
    conv("sfe_img.conv5".into(), c, 4, 5, &mut out);
    conv("sfe_img.conv3".into(), c, c, 3, &mut out);
    conv("sfe_evt.conv5".into(), c, 4 * event_channels, 5, &mut out);
    conv("sfe_evt.conv3".into(), c, c, 3, &mut out);

    for i in 1..=config.dals_blocks {
        for stream in ["b", "e"] {
            let p = format!("dals{i}.{stream}");
            rdb(format!("{p}.rdb"), &mut out);
            norm(format!("{p}.norm1"), c, &mut out);
            for proj in ["q", "k", "v"] {
                linear(format!("{p}.{proj}"), c, c, &mut out);
            }
        }
        // Token MLPs: the image-stream MLP consumes the concatenation of
        // image and event attention outputs when DAM is enabled.
        let hidden = config.token_mlp_hidden();
        let b_in = if config.dam { 2 * c } else { c };
        norm(format!("dals{i}.b.mlp.norm"), b_in, &mut out);
        linear(format!("dals{i}.b.mlp.fc1"), hidden, b_in, &mut out);
        linear(format!("dals{i}.b.mlp.fc2"), c, hidden, &mut out);
        norm(format!("dals{i}.e.mlp.norm"), c, &mut out);
        linear(format!("dals{i}.e.mlp.fc1"), hidden, c, &mut out);
        linear(format!("dals{i}.e.mlp.fc2"), c, hidden, &mut out);
    }

    // Global feature fusion over the concatenated block outputs. Without
    // DAM both streams feed the fusion so events still reach the decoder.
    let cat_channels = if config.dam {
        config.dals_blocks * c
    } else {
        2 * config.dals_blocks * c
    };
    conv("gff.conv1".into(), c, cat_channels, 1, &mut out);
    conv("gff.conv2".into(), c, c, config.gff_kernel, &mut out);

    // Decoder: pixel-shuffle upsampling conv plus the per-pixel MLP.
    conv("up.conv".into(), c, c / 4, 3, &mut out);
    let mut in_d = c + 2 * config.fourier_l;
    for j in 0..config.mlp_layers {
        linear(format!("mlp.fc{j}"), config.mlp_hidden, in_d, &mut out);
        in_d = config.mlp_hidden;
    }
    // Final layer zero-initialized: the decoder starts as the identity
    // around the blurry input.
    out.push((
        "mlp.out.weight".into(),
        vec![1, config.mlp_hidden],
        Init::Zero,
    ));
    out.push(("mlp.out.bias".into(), vec![1], Init::Zero));
    out
}

fn init_store<E: Element>(
    schema: &[(String, Vec<usize>, Init)],
    seed: u64,
) -> ParamStore<E> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape, init) in schema {
        let tensor = match init {
            Init::Kaiming { fan_in } => {
                let bound = (6.0 / *fan_in as f64).sqrt();
                Tensor::from_fn(shape, |_| E::from_f64(rng.gen_range(-bound..bound)))
            }
            Init::Zero => Tensor::zeros(shape),
            Init::One => Tensor::full(shape, E::ONE),
        };
        store.insert(name.clone(), tensor);
    }
    store
}

fn validate_store<E: Element>(
    schema: &[(String, Vec<usize>, Init)],
    store: &ParamStore<E>,
) -> Result<()> {
    if store.len() != schema.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count mismatch: store has {}, config wants {}",
            store.len(),
            schema.len()
        )));
    }
    for (name, shape, _) in schema {
        let tensor = store
            .get(name)
            .map_err(|_| Error::Checkpoint(format!("missing parameter '{name}'")))?;
        if tensor.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter '{name}' has shape {:?}, config wants {shape:?}",
                tensor.shape()
            )));
        }
    }
    Ok(())
}

impl<E: Element> IvfParams<E> {
    /// Fresh parameters: Kaiming-uniform convs and linears, unit norms,
    /// zero-initialized decoder head.
    pub fn init(config: IvfConfig, event_channels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if event_channels == 0 {
            return Err(Error::invalid("event tensor must have channels"));
        }
        let schema = ivf_schema(&config, event_channels);
        Ok(IvfParams {
            store: init_store(&schema, seed),
            config,
            event_channels,
        })
    }

    /// Wrap an existing store (e.g. a loaded checkpoint), validating every
    /// name and shape against the config.
    pub fn from_store(
        config: IvfConfig,
        event_channels: usize,
        store: ParamStore<E>,
    ) -> Result<Self> {
        config.validate()?;
        let schema = ivf_schema(&config, event_channels);
        validate_store(&schema, &store)?;
        Ok(IvfParams {
            config,
            event_channels,
            store,
        })
    }

    pub fn cast<F: Element>(&self) -> IvfParams<F> {
        IvfParams {
            config: self.config.clone(),
            event_channels: self.event_channels,
            store: self.store.cast(),
        }
    }
}

/// Frame as a `(1, H, W)` network input.
pub fn frame_to_tensor<E: Element>(frame: &Frame) -> Tensor<E> {
    Tensor::new(
        &[1, frame.height(), frame.width()],
        frame.pixels().iter().map(|&v| E::from_f64(v)).collect(),
    )
    .expect("frame dims are consistent")
}

/// Stacked event tensor as a `(2S, H, W)` network input.
pub fn event_tensor_to_tensor<E: Element>(et: &EventTensor) -> Tensor<E> {
    Tensor::new(
        &[et.channels(), et.height(), et.width()],
        et.data().iter().map(|&v| E::from_f64(v)).collect(),
    )
    .expect("event tensor dims are consistent")
}

/// Subtle-segment stack as a `(2L, H, W)` network input.
pub fn subtle_to_tensor<E: Element>(
    st: &crate::representation::SubtleSegmentTensor,
) -> Tensor<E> {
    Tensor::new(
        &[st.channels(), st.height(), st.width()],
        st.data().iter().map(|&v| E::from_f64(v)).collect(),
    )
    .expect("subtle tensor dims are consistent")
}

/// Network output `(1, H, W)` back to a frame, clamped into `[0, 1]`.
pub fn tensor_to_frame<E: Element>(tensor: &Tensor<E>, timestamp: f64) -> Result<Frame> {
    if tensor.ndim() != 3 || tensor.shape()[0] != 1 {
        return Err(Error::shape(format!(
            "expected (1, H, W) output, got {:?}",
            tensor.shape()
        )));
    }
    Ok(Frame::new(
        tensor.shape()[2],
        tensor.shape()[1],
        timestamp,
        tensor
            .data()
            .iter()
            .map(|&v| v.to_f64().clamp(0.0, 1.0))
            .collect(),
    )?)
}
