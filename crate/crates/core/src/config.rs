//! Run configuration: one TOML file with a section per stage. Every field
//! has a default, so an empty file is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::disambiguation::{LossMode, PrototypeInit, Schedules, TrainConfig};
use crate::encoder::EncoderConfig;
use crate::error::{CoreError, Result};
use crate::labeling::{Footprint, LabelWindow, TokenConfig, CELL_VALUES};
use crate::synthworld::{DriveSpec, SceneSpec};
use crate::terrain::{InferenceParams, NUM_CHANNELS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSettings {
    /// Cell size (m).
    pub cell_size: f64,
    /// Side of the square map (m).
    pub extent: f64,
    pub length_scale: f64,
    pub range_sigma: f64,
    pub prior_beta: f64,
    /// Seconds between simulated scans.
    pub scan_period: f64,
    /// Seconds between key frames; the first key frame is at one period.
    pub keyframe_period: f64,
}

impl Default for MapSettings {
    fn default() -> Self {
        let p = InferenceParams::default();
        MapSettings {
            cell_size: 0.2,
            extent: 40.0,
            length_scale: p.length_scale,
            range_sigma: p.range_sigma,
            prior_beta: p.prior_beta,
            scan_period: 1.0,
            keyframe_period: 2.0,
        }
    }
}

impl MapSettings {
    pub fn inference(&self) -> InferenceParams {
        InferenceParams {
            length_scale: self.length_scale,
            range_sigma: self.range_sigma,
            prior_beta: self.prior_beta,
        }
    }

    /// Cells per map side.
    pub fn cells(&self) -> usize {
        (self.extent / self.cell_size).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSettings {
    /// Axle separation (m).
    pub wheelbase: f64,
    /// Wheel separation (m).
    pub track: f64,
    pub past: f64,
    pub future: f64,
    pub sample_period: f64,
}

impl Default for LabelSettings {
    fn default() -> Self {
        let w = LabelWindow::default();
        LabelSettings {
            wheelbase: 2.0,
            track: 1.6,
            past: w.past,
            future: w.future,
            sample_period: w.sample_period,
        }
    }
}

impl LabelSettings {
    pub fn footprint(&self) -> Result<Footprint> {
        Footprint::rectangle(self.wheelbase, self.track)
    }

    pub fn window(&self) -> LabelWindow {
        LabelWindow {
            past: self.past,
            future: self.future,
            sample_period: self.sample_period,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenSettings {
    /// Patch side `M` (odd).
    pub patch: usize,
    /// Window side `W` in patches.
    pub window: usize,
    pub stride: usize,
    /// Classes / prototypes `K`.
    pub classes: usize,
    /// Per-channel multipliers, in channel order.
    pub channel_scale: Vec<f32>,
    /// Subtracted after scaling, in channel order with the known mask last.
    pub channel_center: Vec<f32>,
    pub channel_clip: f32,
}

impl Default for TokenSettings {
    fn default() -> Self {
        let t = TokenConfig::default();
        TokenSettings {
            patch: t.patch,
            window: t.window,
            stride: t.stride,
            classes: t.classes,
            channel_scale: t.channel_scale.to_vec(),
            channel_center: t.channel_center.to_vec(),
            channel_clip: t.channel_clip,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    /// Embedding width `D`.
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub init_std: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let e = EncoderConfig::default();
        ModelSettings {
            dim: e.dim,
            blocks: e.blocks,
            heads: e.heads,
            mlp_ratio: e.mlp_ratio,
            init_std: e.init_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub seed: u64,
    pub queue_capacity: usize,
    pub queue_warmup: usize,
    pub loss: LossMode,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub reanchor_positive: bool,
    pub prototype_init: PrototypeInit,
    pub batch_windows: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            seed: t.seed,
            queue_capacity: t.queue_capacity,
            queue_warmup: t.queue_warmup,
            loss: t.loss,
            sgd_momentum: t.sgd_momentum,
            weight_decay: t.weight_decay,
            reanchor_positive: t.reanchor_positive,
            prototype_init: t.prototype_init,
            batch_windows: t.batch_windows,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Hard limits of the rule baseline as a multiple of the soft limits.
    pub hard_factor: f64,
    /// Training seeds of the ablation grid.
    pub ablation_seeds: Vec<u64>,
    /// Prototype counts of the K sweep.
    pub ablation_classes: Vec<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            hard_factor: 2.0,
            ablation_seeds: vec![42, 43, 44],
            ablation_classes: vec![2, 3, 4, 5, 6],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub drive: DriveSpec,
    pub map: MapSettings,
    pub labeling: LabelSettings,
    pub tokens: TokenSettings,
    pub model: ModelSettings,
    pub schedules: Schedules,
    pub train: TrainSettings,
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        let m = &self.map;
        if !(m.cell_size > 0.0) || !(m.extent > 0.0) {
            return Err(CoreError::Config(
                "map cell_size and extent must be positive".into(),
            ));
        }
        let ratio = m.extent / m.cell_size;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return Err(CoreError::Config(format!(
                "map extent {} is not a whole number of {} m cells",
                m.extent, m.cell_size
            )));
        }
        if !(m.scan_period > 0.0) || !(m.keyframe_period > 0.0) {
            return Err(CoreError::Config(
                "scan_period and keyframe_period must be positive".into(),
            ));
        }
        if !(m.length_scale > 0.0) || !(m.range_sigma > 0.0) || !(m.prior_beta >= 0.0) {
            return Err(CoreError::Config("invalid inference parameters".into()));
        }
        self.token_config()?.validate()?;
        self.encoder_config().validate()?;
        self.schedules.validate()?;
        if self.train.batch_windows == 0 {
            return Err(CoreError::Config("batch_windows must be positive".into()));
        }
        if self.train.queue_capacity == 0 {
            return Err(CoreError::Config("queue_capacity must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train.sgd_momentum) || !(self.train.weight_decay >= 0.0) {
            return Err(CoreError::Config(
                "sgd_momentum must lie in [0, 1] and weight_decay be >= 0".into(),
            ));
        }
        self.labeling.footprint()?;
        Ok(())
    }

    pub fn token_config(&self) -> Result<TokenConfig> {
        let t = &self.tokens;
        let scale: [f32; NUM_CHANNELS] = t.channel_scale.as_slice().try_into().map_err(|_| {
            CoreError::Config(format!(
                "channel_scale needs {NUM_CHANNELS} entries, got {}",
                t.channel_scale.len()
            ))
        })?;
        let center: [f32; CELL_VALUES] = t.channel_center.as_slice().try_into().map_err(|_| {
            CoreError::Config(format!(
                "channel_center needs {CELL_VALUES} entries, got {}",
                t.channel_center.len()
            ))
        })?;
        Ok(TokenConfig {
            patch: t.patch,
            window: t.window,
            stride: t.stride,
            classes: t.classes,
            channel_scale: scale,
            channel_center: center,
            channel_clip: t.channel_clip,
        })
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let m = &self.model;
        let t = TokenConfig {
            patch: self.tokens.patch,
            ..TokenConfig::default()
        };
        EncoderConfig {
            input_len: t.token_len(),
            dim: m.dim,
            blocks: m.blocks,
            heads: m.heads,
            mlp_ratio: m.mlp_ratio,
            init_std: m.init_std,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            encoder: self.encoder_config(),
            schedules: self.schedules.clone(),
            classes: self.tokens.classes,
            queue_capacity: t.queue_capacity,
            queue_warmup: t.queue_warmup,
            loss: t.loss,
            seed: t.seed,
            sgd_momentum: t.sgd_momentum,
            weight_decay: t.weight_decay,
            reanchor_positive: t.reanchor_positive,
            prototype_init: t.prototype_init,
            batch_windows: t.batch_windows,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.tokens.classes = 6;
        c.train.loss = LossMode::Cls;
        c.schedules.epochs = 7;
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_sections_override() {
        let c = RunConfig::from_toml("[tokens]\nclasses = 2\n[schedules]\nepochs = 3\n").unwrap();
        assert_eq!(c.tokens.classes, 2);
        assert_eq!(c.schedules.epochs, 3);
        assert_eq!(c.tokens.patch, 11);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("[tokens]\npatch = 10\n").is_err());
        assert!(RunConfig::from_toml("[map]\nextent = 40.1\n").is_err());
        assert!(RunConfig::from_toml("[tokens]\nchannel_scale = [1.0]\n").is_err());
        let e = RunConfig::from_toml("[train]\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"));
    }
}
