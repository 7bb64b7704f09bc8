//! Small configurations that exercise every stage of a run in seconds.

use std::path::Path;

use superchan::channel::ChannelConfig;
use superchan::link::{EvalPolicy, LinkConfig};
use superchan::training::TrainConfig;
use superchan::tx::ConstellationTable;
use superchan::Result;
use superchan_cli::config::{ExperimentConfig, ExperimentKind, Grids};

/// Writes a 16-QAM constellation CSV under `dir`, returning its path.
pub fn qam16(dir: &Path) -> Result<std::path::PathBuf> {
    let path = dir.join("qam16.csv");
    ConstellationTable::<f64>::qam(16)?.write_csv(&path)?;
    Ok(path)
}

/// Three-channel 16-point link with short frames and a few dozen training
/// steps, reading its constellation from `constellation`.
pub fn tiny(kind: ExperimentKind, out: &Path, constellation: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        kind: Some(kind),
        run_id: "tiny".into(),
        out_dir: out.to_path_buf(),
        workers: 2,
        link: LinkConfig {
            channel: ChannelConfig { n_channels: 3, eta: 0.05, v_p: 1.0, ..ChannelConfig::default() },
            m: 16,
            span: 8,
            payload: 512,
            guard: 16,
            ..LinkConfig::default()
        },
        train: TrainConfig {
            batch_symbols: 256,
            guard_symbols: 16,
            iterations: 30,
            pretrain_iterations: 600,
            ..TrainConfig::default()
        },
        eval: EvalPolicy { min_errors: 50, min_symbols: 2_048, max_frames: 8, seed: 9 },
        grids: Grids {
            v_p: vec![1.0],
            eta: vec![0.0, 0.1],
            v_clip: vec![0.9, 1.0],
            baseline_v_p: vec![1.0],
        },
        ..ExperimentConfig::default()
    };
    cfg.baseline.constellation = Some(constellation.to_path_buf());
    cfg.spectrum.n_fft = 1024;
    cfg
}
