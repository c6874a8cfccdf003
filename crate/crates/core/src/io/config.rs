//! Experiment configuration (TOML). Times are in seconds; sizes are counts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rmc::{CellKind, RmcConfig};
use crate::synth::{MeetingParams, PoolParams};
use crate::trainer::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory that receives generated corpora and run outputs.
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub enabled: bool,
    /// Strength of the random rotation.
    pub rotation: f64,
    /// Upper bound on the condition number of the channel matrix.
    pub max_condition: f64,
    /// Standard deviation of additive noise before renormalization.
    pub noise: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            enabled: true,
            rotation: 1.0,
            max_condition: 8.0,
            noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub dim: usize,
    /// Per-window spread around each speaker direction.
    pub spread: f64,
    pub train_speakers: usize,
    pub eval_speakers: usize,
    pub eval_meetings: usize,
    /// Meetings among training speakers added to the training data.
    pub train_meetings: usize,
    /// Speakers per meeting.
    pub roster_size: usize,
    pub channel: ChannelConfig,
    pub pool: PoolParams,
    pub meeting: MeetingParams,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            dim: 32,
            spread: 0.1,
            train_speakers: 500,
            eval_speakers: 50,
            eval_meetings: 10,
            train_meetings: 10,
            roster_size: 4,
            channel: ChannelConfig::default(),
            pool: PoolParams::default(),
            meeting: MeetingParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    /// Output dimension of the LDA projection; `None` keeps the input size.
    pub lda_dim: Option<usize>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig { lda_dim: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    /// Segments closer than this are merged (strictly less).
    pub gap: f64,
    pub collar: f64,
    pub ignore_overlap: bool,
    /// Median filter length; 1 disables smoothing.
    pub taps: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            gap: 0.0,
            collar: 0.25,
            ignore_overlap: true,
            taps: 1,
        }
    }
}

/// Model architecture; the input dimension comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub n_max: usize,
    /// Defaults to `n_max + 1`.
    pub memory_slots: Option<usize>,
    pub slot_width: usize,
    pub heads: usize,
    pub attention_mlp_width: usize,
    pub mlp_head_layers: usize,
    pub mlp_head_width: usize,
    /// LSTM hidden width; `None` means `Q·P`.
    pub lstm_hidden: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = RmcConfig::desk(1, 4);
        ModelConfig {
            cell: d.cell,
            n_max: d.n_max,
            memory_slots: None,
            slot_width: d.slot_width,
            heads: d.heads,
            attention_mlp_width: d.attention_mlp_width,
            mlp_head_layers: d.mlp_head_layers,
            mlp_head_width: d.mlp_head_width,
            lstm_hidden: None,
        }
    }
}

impl ModelConfig {
    pub fn to_rmc(&self, input_dim: usize, seed: u64) -> RmcConfig {
        RmcConfig {
            cell: self.cell,
            n_max: self.n_max,
            memory_slots: self.memory_slots.unwrap_or(self.n_max + 1),
            slot_width: self.slot_width,
            heads: self.heads,
            attention_mlp_width: self.attention_mlp_width,
            mlp_head_layers: self.mlp_head_layers,
            mlp_head_width: self.mlp_head_width,
            input_dim,
            seed,
            lstm_hidden: self.lstm_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed for corpus generation and model initialization.
    pub seed: u64,
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub backend: BackendConfig,
    pub scoring: ScoringConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).map_err(Error::file(path))?)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(Error::file(path))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("seed = 1\nbogus = 2\n").is_err());
        assert!(ExperimentConfig::from_toml("[scoring]\ncolar = 0.25\n").is_err());
        assert!(ExperimentConfig::from_toml(
            "[training.optimizer]\nkind = \"sgd\"\nmomentum = 0.9\n"
        )
        .is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 5\n[scoring]\ntaps = 3\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.scoring.taps, 3);
        assert_eq!(cfg.scoring.collar, 0.25);
        assert!(cfg.scoring.ignore_overlap);
    }
}
