//! The JSON run configuration shared by every subcommand.

use std::fs;
use std::path::Path;

use evdeblur::error::{Error, Result};
use evdeblur::ivf::{EerConfig, IvfConfig};
use evdeblur::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub width: usize,
    pub height: usize,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            width: 32,
            height: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Latent frames rendered per unit exposure; frame count = round(fps).
    pub fps: f64,
    pub threshold_c: f64,
    pub log_eps: f64,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            fps: 31.0,
            threshold_c: 0.1,
            log_eps: 1e-3,
            noise_level: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlurConfig {
    pub window_frames: usize,
}

impl Default for BlurConfig {
    fn default() -> Self {
        BlurConfig { window_frames: 31 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepresentationConfig {
    pub segments: usize,
    pub fourier_l: usize,
    pub p_list: Vec<usize>,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        RepresentationConfig {
            segments: 6,
            fourier_l: 8,
            p_list: vec![64, 256],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// EDI integration samples used by `edi` and `eval --method edi`.
    pub edi_samples: usize,
    /// Optional explicit evaluation timestamps (normalized); defaults to
    /// every latent frame inside the blur window.
    pub timestamps: Option<Vec<f64>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            edi_samples: 256,
            timestamps: None,
        }
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sensor: SensorConfig,
    pub sim: SimConfig,
    pub blur: BlurConfig,
    pub representation: RepresentationConfig,
    pub network: IvfConfig,
    pub eer: EerConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
            Error::invalid(format!("{}: {e}", path.display()))
        })?;
        // The refinement network consumes the representation's P list; the
        // network consumes its Fourier length.
        cfg.eer.p_list = cfg.representation.p_list.clone();
        cfg.network.fourier_l = cfg.representation.fourier_l;
        cfg.validate()
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensor.width == 0 || self.sensor.height == 0 {
            return Err(Error::invalid("sensor: dimensions must be positive"));
        }
        if !(self.sim.fps >= 2.0) {
            return Err(Error::invalid("sim: fps must be at least 2"));
        }
        if !(self.sim.threshold_c > 0.0) {
            return Err(Error::invalid("sim: threshold_c must be positive"));
        }
        if !(self.sim.log_eps > 0.0) {
            return Err(Error::invalid("sim: log_eps must be positive"));
        }
        if !(0.0..=10.0).contains(&self.sim.noise_level) {
            return Err(Error::invalid("sim: noise_level must lie in [0, 10]"));
        }
        if self.blur.window_frames == 0 {
            return Err(Error::invalid("blur: window_frames must be positive"));
        }
        if self.representation.segments == 0 {
            return Err(Error::invalid("representation: segments must be positive"));
        }
        if self.representation.p_list.is_empty()
            || self.representation.p_list[0] == 0
            || !self.representation.p_list.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::invalid(
                "representation: p_list must be strictly ascending positive",
            ));
        }
        if self.eval.edi_samples < 2 {
            return Err(Error::invalid("eval: edi_samples must be at least 2"));
        }
        if let Some(ts) = &self.eval.timestamps {
            if ts.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(Error::invalid("eval: timestamps must lie in [0, 1]"));
            }
        }
        self.network
            .validate()
            .map_err(|e| Error::invalid(format!("network: {e}")))?;
        self.eer
            .validate()
            .map_err(|e| Error::invalid(format!("eer: {e}")))?;
        self.train
            .validate()
            .map_err(|e| Error::invalid(format!("train: {e}")))?;
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.sim.fps.round() as usize
    }
}
