//! Event-based edge refinement: a small residual-dense network that
//! consumes an initial restoration concatenated with the multi-scale
//! nearest-event stacks around the query time and outputs a residual
//! correction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::blocks::rdb_forward;
use super::IvfConfig;
use crate::error::{Error, Result};
use crate::numerics::tape::{concat, BoundParams, Var};
use crate::numerics::{Element, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EerConfig {
    /// Feature channels.
    pub channels: usize,
    /// Number of residual dense blocks.
    pub rdbs: usize,
    /// Dense conv layers per block.
    pub rdb_convs: usize,
    /// Growth channels per dense layer.
    pub rdb_growth: usize,
    /// Nearest-event budgets; the input carries `1 + 2 * p_list.len()`
    /// channels.
    pub p_list: Vec<usize>,
}

impl Default for EerConfig {
    fn default() -> Self {
        EerConfig {
            channels: 16,
            rdbs: 2,
            rdb_convs: 3,
            rdb_growth: 8,
            p_list: vec![64, 256],
        }
    }
}

impl EerConfig {
    pub fn tiny() -> Self {
        EerConfig {
            channels: 4,
            rdbs: 1,
            rdb_convs: 2,
            rdb_growth: 2,
            p_list: vec![2, 8],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.rdbs == 0 || self.rdb_convs == 0 || self.rdb_growth == 0 {
            return Err(Error::invalid("eer sizes must be positive"));
        }
        if self.p_list.is_empty()
            || self.p_list[0] == 0
            || !self.p_list.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::invalid(
                "eer p_list must be strictly ascending positive",
            ));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        1 + 2 * self.p_list.len()
    }

    /// The RDB parameters reuse the shared residual-dense forward, which
    /// reads its sizes from an [`IvfConfig`].
    fn as_rdb_host(&self) -> IvfConfig {
        IvfConfig {
            channels: self.channels,
            rdb_convs: self.rdb_convs,
            rdb_growth: self.rdb_growth,
            ..IvfConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EerParams<E: Element> {
    pub config: EerConfig,
    pub store: ParamStore<E>,
}

fn eer_schema(config: &EerConfig) -> Vec<(String, Vec<usize>, bool)> {
    // (name, shape, zero_init)
    let c = config.channels;
    let mut out = Vec::new();
    let mut conv = |name: String, c_out: usize, c_in: usize, k: usize, zero: bool| {
        out.push((format!("{name}.weight"), vec![c_out, c_in, k, k], zero));
        out.push((format!("{name}.bias"), vec![c_out], true));
    };
    conv("eer.sfe".into(), c, config.input_channels(), 3, false);
    for i in 0..config.rdbs {
        for j in 0..config.rdb_convs {
            conv(
                format!("eer.rdb{i}.conv{j}"),
                config.rdb_growth,
                c + j * config.rdb_growth,
                3,
                false,
            );
        }
        conv(
            format!("eer.rdb{i}.fuse"),
            c,
            c + config.rdb_convs * config.rdb_growth,
            1,
            false,
        );
    }
    conv("eer.gff1".into(), c, config.rdbs * c, 1, false);
    conv("eer.gff2".into(), c, c, 3, false);
    // Zero-initialized output: refinement starts as the identity.
    conv("eer.out".into(), 1, c, 3, true);
    out
}

impl<E: Element> EerParams<E> {
    pub fn init(config: EerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, zero) in eer_schema(&config) {
            let tensor = if zero {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                Tensor::from_fn(&shape, |_| E::from_f64(rng.gen_range(-bound..bound)))
            };
            store.insert(name, tensor);
        }
        Ok(EerParams { config, store })
    }

    pub fn from_store(config: EerConfig, store: ParamStore<E>) -> Result<Self> {
        config.validate()?;
        let schema = eer_schema(&config);
        if store.len() != schema.len() {
            return Err(Error::Checkpoint(format!(
                "eer parameter count mismatch: store has {}, config wants {}",
                store.len(),
                schema.len()
            )));
        }
        for (name, shape, _) in &schema {
            let t = store
                .get(name)
                .map_err(|_| Error::Checkpoint(format!("missing parameter '{name}'")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, config wants {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(EerParams { config, store })
    }

    pub fn cast<F: Element>(&self) -> EerParams<F> {
        EerParams {
            config: self.config.clone(),
            store: self.store.cast(),
        }
    }
}

/// Refine an initial restoration: residual-dense trunk over the
/// concatenated `(initial, subtle-event stacks)` input, global fusion, and
/// an additive correction. Returns the pre-clamp `(1, H, W)` output.
pub fn eer_forward<'t, E: Element>(
    initial: Var<'t, E>,
    subtle: Var<'t, E>,
    params: &BoundParams<'t, E>,
    cfg: &EerConfig,
) -> Result<Var<'t, E>> {
    let init_shape = initial.shape();
    let sub_shape = subtle.shape();
    if init_shape.len() != 3 || init_shape[0] != 1 {
        return Err(Error::shape("eer initial input must be (1, H, W)"));
    }
    if sub_shape.len() != 3
        || sub_shape[0] != 2 * cfg.p_list.len()
        || sub_shape[1..] != init_shape[1..]
    {
        return Err(Error::shape(format!(
            "eer subtle input must be ({}, H, W) aligned with the initial frame",
            2 * cfg.p_list.len()
        )));
    }
    let host = cfg.as_rdb_host();
    let x = concat(&[initial, subtle], 0)?;
    let f0 = x.conv2d(params.var("eer.sfe.weight")?, params.var("eer.sfe.bias")?)?;
    let mut feat = f0;
    let mut outs = Vec::with_capacity(cfg.rdbs);
    for i in 0..cfg.rdbs {
        feat = rdb_forward(feat, &format!("eer.rdb{i}"), params, &host)?;
        outs.push(feat);
    }
    let fused = concat(&outs, 0)?
        .conv2d(params.var("eer.gff1.weight")?, params.var("eer.gff1.bias")?)?
        .conv2d(params.var("eer.gff2.weight")?, params.var("eer.gff2.bias")?)?;
    let trunk = fused.add(f0)?;
    let residual = trunk.conv2d(params.var("eer.out.weight")?, params.var("eer.out.bias")?)?;
    initial.add(residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    #[test]
    fn zero_initialized_output_is_identity() {
        let params = EerParams::<f64>::init(EerConfig::tiny(), 5).unwrap();
        let tape = Tape::new(false);
        let bound = params.store.bind(&tape);
        let initial = tape.constant(Tensor::from_fn(&[1, 8, 8], |i| (i % 13) as f64 / 12.0));
        let subtle = tape.constant(Tensor::from_fn(&[4, 8, 8], |i| ((i % 3) as f64) - 1.0));
        let out = eer_forward(initial, subtle, &bound, &EerConfig::tiny()).unwrap();
        assert_eq!(out.value(), initial.value());
    }

    #[test]
    fn zero_subtle_with_zero_init_keeps_initial() {
        let params = EerParams::<f64>::init(EerConfig::tiny(), 6).unwrap();
        let tape = Tape::new(false);
        let bound = params.store.bind(&tape);
        let initial = tape.constant(Tensor::from_fn(&[1, 8, 8], |i| (i % 7) as f64 / 6.0));
        let subtle = tape.constant(Tensor::zeros(&[4, 8, 8]));
        let out = eer_forward(initial, subtle, &bound, &EerConfig::tiny()).unwrap();
        assert_eq!(out.value(), initial.value());
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let params = EerParams::<f64>::init(EerConfig::tiny(), 7).unwrap();
        let tape = Tape::new(false);
        let bound = params.store.bind(&tape);
        let initial = tape.constant(Tensor::zeros(&[1, 8, 8]));
        let subtle = tape.constant(Tensor::zeros(&[6, 8, 8]));
        assert!(eer_forward(initial, subtle, &bound, &EerConfig::tiny()).is_err());
    }

    #[test]
    fn from_store_validates_shapes() {
        let params = EerParams::<f64>::init(EerConfig::tiny(), 8).unwrap();
        assert!(EerParams::from_store(EerConfig::tiny(), params.store.clone()).is_ok());
        let mut other = EerConfig::tiny();
        other.channels = 8;
        assert!(EerParams::from_store(other, params.store).is_err());
    }
}
