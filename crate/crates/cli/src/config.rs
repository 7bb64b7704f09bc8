//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use superchan::link::{EvalPolicy, LinkConfig};
use superchan::training::TrainConfig;
use superchan::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    VpSweep,
    FreqResponse,
    GuardbandSweep,
    Ablation,
    BaselineConstellation,
    SingleEval,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::VpSweep => "vp_sweep",
            ExperimentKind::FreqResponse => "freq_response",
            ExperimentKind::GuardbandSweep => "guardband_sweep",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::BaselineConstellation => "baseline_constellation",
            ExperimentKind::SingleEval => "single_eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grids {
    /// Drive levels of the single-channel sweep.
    pub v_p: Vec<f64>,
    /// Guard bands of the superchannel sweeps.
    pub eta: Vec<f64>,
    /// Clipping levels searched for the baseline pre-distortion.
    pub v_clip: Vec<f64>,
    /// Drive levels searched for the baseline in the guard-band sweep.
    pub baseline_v_p: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            v_p: vec![0.7, 0.8, 0.9, 1.0, 1.1, 1.2],
            eta: vec![0.0, 0.025, 0.05, 0.1, 0.15, 0.2, 0.3],
            v_clip: vec![0.80, 0.85, 0.90, 0.95, 1.00],
            baseline_v_p: vec![0.7, 0.8, 0.9, 1.0, 1.1, 1.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Constellation CSV; trained on AWGN at `snr_db` when absent.
    pub constellation: Option<PathBuf>,
    pub snr_db: f64,
    /// Clipping level used by `eval`.
    pub v_clip: f64,
    /// Score the baseline with the pre-trained demapper instead of minimum
    /// distance.
    pub network_demapper: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { constellation: None, snr_db: 18.0, v_clip: 1.0, network_demapper: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Checkpoints {
    /// Transceiver trained without neighbours (frequency response).
    pub single: Option<PathBuf>,
    /// Transceiver trained in the superchannel (frequency response).
    pub multi: Option<PathBuf>,
    /// Transceiver scored by `eval`, or the starting point of `train`.
    pub eval: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub n_fft: usize,
    /// Lowest level written to the spectrum CSV.
    pub floor_db: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { n_fft: 8192, floor_db: -80.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub run_id: String,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub link: LinkConfig,
    pub train: TrainConfig,
    pub eval: EvalPolicy,
    pub grids: Grids,
    pub baseline: BaselineConfig,
    pub checkpoints: Checkpoints,
    pub spectrum: SpectrumConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: None,
            run_id: "run".into(),
            out_dir: PathBuf::from("out"),
            workers: 1,
            link: LinkConfig::default(),
            train: TrainConfig::default(),
            eval: EvalPolicy::default(),
            grids: Grids::default(),
            baseline: BaselineConfig::default(),
            checkpoints: Checkpoints::default(),
            spectrum: SpectrumConfig::default(),
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::NotFound(format!("config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| bad(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.train.validate()?;
        if self.workers == 0 {
            return Err(bad("workers must be at least 1"));
        }
        if self.run_id.is_empty() {
            return Err(bad("run_id must not be empty"));
        }
        let grids = &self.grids;
        match self.kind {
            Some(ExperimentKind::VpSweep) => {
                if grids.v_p.is_empty() || grids.v_clip.is_empty() {
                    return Err(bad("vp_sweep needs non-empty v_p and v_clip grids"));
                }
            }
            Some(ExperimentKind::GuardbandSweep) => {
                if grids.eta.is_empty() || grids.v_clip.is_empty() || grids.baseline_v_p.is_empty() {
                    return Err(bad("guardband_sweep needs non-empty eta, v_clip and baseline_v_p grids"));
                }
            }
            Some(ExperimentKind::Ablation) => {
                if grids.eta.is_empty() {
                    return Err(bad("ablation needs a non-empty eta grid"));
                }
            }
            _ => {}
        }
        if grids.v_p.iter().chain(&grids.baseline_v_p).any(|&v| !(v > 0.0)) {
            return Err(bad("drive levels must be positive"));
        }
        if grids.v_clip.iter().any(|&v| !(v > 0.0)) {
            return Err(bad("clipping levels must be positive"));
        }
        if grids.eta.iter().any(|&e| !(e >= 0.0)) {
            return Err(bad("guard bands must be non-negative"));
        }
        if self.spectrum.n_fft < self.link.shaper_taps() {
            return Err(bad("spectrum n_fft shorter than the shaper"));
        }
        Ok(())
    }

    /// Applies a command-line seed to training, the channel stream and
    /// evaluation.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.link.channel.seed = seed;
        self.eval.seed = seed ^ 0xE7A1;
        self
    }

    /// Fails unless the configured kind is absent or equal to `expected`.
    pub fn expect_kind(&self, expected: ExperimentKind) -> Result<()> {
        match self.kind {
            Some(k) if k != expected => Err(bad(format!(
                "config is for {} but {} was requested",
                k.name(),
                expected.name()
            ))),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig { kind: Some(ExperimentKind::Ablation), ..Default::default() };
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("run_id = \"a\"\nrunid = \"b\"\n").is_err());
        assert!(ExperimentConfig::from_toml("[link]\nrolof = 0.1\n").is_err());
        assert!(ExperimentConfig::from_toml("[link]\nrolloff = 0.01\n").is_ok());
    }

    #[test]
    fn sweep_kinds_need_grids() {
        let t = "kind = \"guardband_sweep\"\n[grids]\neta = []\n";
        assert!(matches!(ExperimentConfig::from_toml(t), Err(Error::InvalidArgument(_))));
        let t = "kind = \"vp_sweep\"\n[grids]\nv_p = []\n";
        assert!(ExperimentConfig::from_toml(t).is_err());
        assert!(ExperimentConfig::from_toml("[link]\nrolloff = 0.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[link]\nrolloff = 1.5\n").is_err());
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let cfg = ExperimentConfig { kind: Some(ExperimentKind::VpSweep), ..Default::default() };
        assert!(cfg.expect_kind(ExperimentKind::VpSweep).is_ok());
        assert!(cfg.expect_kind(ExperimentKind::Ablation).is_err());
        assert!(ExperimentConfig::default().expect_kind(ExperimentKind::Ablation).is_ok());
    }
}
