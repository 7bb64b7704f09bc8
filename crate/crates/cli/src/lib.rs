//! Experiment runner for the superchannel transceiver simulator.

pub mod config;
pub mod experiments;
pub mod lab;
pub mod plot;
pub mod record;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use superchan::gradcore::{FreezeMask, ParamVector};
use superchan::training::{pretrain_all, train_joint};
use superchan::tx::ConstellationTable;
use superchan::{Error, Params32, Result};

use config::{ExperimentConfig, ExperimentKind};
use lab::Lab;
use plot::{Chart, Series};
use record::{read_records, read_rows, write_records, write_rows, ResultRecord, SpectrumRow};

/// Top-level commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Pretrain,
    Train,
    Eval,
    VpSweep,
    FreqResponse,
    Guardband,
    Ablation,
    BaselineConstellation,
}

impl Command {
    fn kind(self) -> Option<ExperimentKind> {
        match self {
            Command::Pretrain | Command::Train => None,
            Command::Eval => Some(ExperimentKind::SingleEval),
            Command::VpSweep => Some(ExperimentKind::VpSweep),
            Command::FreqResponse => Some(ExperimentKind::FreqResponse),
            Command::Guardband => Some(ExperimentKind::GuardbandSweep),
            Command::Ablation => Some(ExperimentKind::Ablation),
            Command::BaselineConstellation => Some(ExperimentKind::BaselineConstellation),
        }
    }

    fn stem(self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::Train => "train",
            other => other.kind().map_or("run", |k| k.name()),
        }
    }
}

/// Files written by a command and the errors of any failed points.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failures: Vec<Error>,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::NotFound(_) => 2,
        Error::TrainingDiverged { .. } => 3,
        Error::PretrainFailure { .. } => 4,
        _ => 1,
    }
}

/// Exit status of a finished command: that of its first failed point.
pub fn outcome_code(o: &Outcome) -> i32 {
    o.failures.first().map_or(0, exit_code)
}

/// Lab configured from `cfg`: supplied constellation, checkpoint directory
/// and baseline receiver.
pub fn make_lab(cfg: &ExperimentConfig) -> Result<Lab> {
    let mut lab = Lab::new(cfg.train.clone(), cfg.eval);
    lab.baseline_snr_db = cfg.baseline.snr_db;
    lab.network_demapper = cfg.baseline.network_demapper;
    lab.checkpoint_dir = Some(cfg.out_dir.join(format!("{}_checkpoints", cfg.run_id)));
    if let Some(path) = &cfg.baseline.constellation {
        if !path.exists() {
            return Err(Error::NotFound(format!("constellation {}", path.display())));
        }
        lab = lab.with_table(ConstellationTable::read_csv(path)?);
    }
    Ok(lab)
}

fn out_path(cfg: &ExperimentConfig, stem: &str, ext: &str) -> PathBuf {
    cfg.out_dir.join(format!("{}_{stem}.{ext}", cfg.run_id))
}

#[derive(Debug, Serialize, Deserialize)]
struct LossRow {
    iteration: usize,
    loss: f64,
}

fn initial_params(lab: &Lab, cfg: &ExperimentConfig) -> Result<Arc<Params32>> {
    match &cfg.checkpoints.eval {
        Some(path) if !path.exists() => Err(Error::NotFound(format!("checkpoint {}", path.display()))),
        Some(path) => Ok(Arc::new(ParamVector::load_json(path)?)),
        None => lab.pretrained(&cfg.link),
    }
}

/// Runs `cmd` with `cfg`, writing its CSV, SVG and checkpoint outputs under
/// `cfg.out_dir`. Errors that stop the whole command are returned; failures
/// of single points are collected in the outcome.
pub fn execute(cmd: Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    if let Some(k) = cmd.kind() {
        cfg.expect_kind(k)?;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let lab = make_lab(cfg)?;
    let mut out = Outcome::default();
    let stem = cmd.stem();
    let csv = out_path(cfg, stem, "csv");
    let svg = out_path(cfg, stem, "svg");
    match cmd {
        Command::Pretrain => {
            let p = pretrain_all::<f32>(&cfg.link, &cfg.train, &lab.baseline_table(cfg.link.m)?)?;
            let path = out_path(cfg, stem, "json");
            p.save_json(&path)?;
            out.files.push(path);
        }
        Command::Train => {
            let init = initial_params(&lab, cfg)?;
            let link = lab.link(&cfg.link)?.reframed(cfg.train.batch_symbols, cfg.train.guard_symbols)?;
            let trained = train_joint(&init, &cfg.train, &link, FreezeMask::none())?;
            let path = out_path(cfg, stem, "json");
            trained.params.save_json(&path)?;
            let rows: Vec<LossRow> =
                trained.losses.iter().enumerate().map(|(iteration, &loss)| LossRow { iteration, loss }).collect();
            let loss_csv = out_path(cfg, "train_loss", "csv");
            write_rows(&loss_csv, &rows)?;
            let back: Vec<LossRow> = read_rows(&loss_csv)?;
            let chart = Chart {
                title: "Training loss".into(),
                x_label: "iteration".into(),
                y_label: "cross-entropy".into(),
                log_y: true,
                series: vec![Series {
                    name: "loss".into(),
                    points: back.iter().map(|r| (r.iteration as f64, r.loss)).collect(),
                    dashed: false,
                    scatter: false,
                }],
            };
            let loss_svg = out_path(cfg, "train_loss", "svg");
            std::fs::write(&loss_svg, chart.to_svg())?;
            out.files.extend([path, loss_csv, loss_svg]);
        }
        Command::FreqResponse => {
            let (single, multi) = experiments::load_freq_checkpoints(cfg)?;
            let rows = experiments::freq_response(&cfg.link, &single, &multi, cfg.spectrum.n_fft, cfg.spectrum.floor_db)?;
            write_rows(&csv, &rows)?;
            let back: Vec<SpectrumRow> = read_rows(&csv)?;
            std::fs::write(&svg, spectrum_chart(&back).to_svg())?;
            out.files.extend([csv, svg]);
        }
        Command::BaselineConstellation => {
            let (table, sweep) = experiments::baseline_constellation(&lab, cfg)?;
            let points = out_path(cfg, "baseline_constellation_points", "csv");
            table.write_csv(&points)?;
            write_records(&csv, &sweep.records)?;
            let back = ConstellationTable::<f64>::read_csv(&points)?;
            let chart = Chart {
                title: format!("Learned {}-point constellation", back.len()),
                x_label: "in-phase".into(),
                y_label: "quadrature".into(),
                log_y: false,
                series: vec![Series {
                    name: "points".into(),
                    points: back.points().iter().map(|c| (c.re, c.im)).collect(),
                    dashed: false,
                    scatter: true,
                }],
            };
            std::fs::write(&svg, chart.to_svg())?;
            out.files.extend([points, csv, svg]);
            out.failures = sweep.failures;
        }
        Command::Eval | Command::VpSweep | Command::Guardband | Command::Ablation => {
            let sweep = match cmd {
                Command::Eval => experiments::single_eval(&lab, cfg)?,
                Command::VpSweep => experiments::vp_sweep(&lab, cfg)?,
                Command::Ablation => experiments::ablation(&lab, cfg)?,
                _ => {
                    let g = experiments::guardband_sweep(&lab, cfg)?;
                    let path = out_path(cfg, "guardband_reduction", "txt");
                    std::fs::write(&path, reduction_text(g.reduction))?;
                    out.files.push(path);
                    g.sweep
                }
            };
            write_records(&csv, &sweep.records)?;
            let back = read_records(&csv)?;
            let x_of: fn(&ResultRecord) -> f64 = if cmd == Command::VpSweep { |r| r.v_p } else { |r| r.eta };
            let x_label = if cmd == Command::VpSweep { "V_p / V_pi" } else { "guard band eta" };
            std::fs::write(&svg, ser_chart(cmd.stem(), x_label, &back, x_of).to_svg())?;
            out.files.extend([csv, svg]);
            out.failures = sweep.failures;
        }
    }
    Ok(out)
}

fn reduction_text(r: Option<experiments::Reduction>) -> String {
    match r {
        Some(r) => format!(
            "eta_sat = {}\ntarget_ser = {}\neta_ae = {}\nreduction = {}\n",
            r.eta_sat, r.target_ser, r.eta_ae, r.reduction
        ),
        None => "reduction = none\n".into(),
    }
}

/// SER per scheme against `x`, one series per scheme in first-seen order.
pub fn ser_chart(title: &str, x_label: &str, rows: &[ResultRecord], x_of: fn(&ResultRecord) -> f64) -> Chart {
    let mut order: Vec<String> = Vec::new();
    let mut by: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        if !order.contains(&r.scheme) {
            order.push(r.scheme.clone());
        }
        if let Some(s) = r.ser {
            by.entry(r.scheme.clone()).or_default().push((x_of(r), s));
        }
    }
    let series = order
        .into_iter()
        .map(|name| {
            let mut points = by.remove(&name).unwrap_or_default();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { dashed: name.starts_with("baseline"), name, points, scatter: false }
        })
        .collect();
    Chart { title: title.into(), x_label: x_label.into(), y_label: "SER".into(), log_y: true, series }
}

fn spectrum_chart(rows: &[SpectrumRow]) -> Chart {
    let mut series: Vec<Series> = Vec::new();
    for r in rows {
        match series.iter_mut().find(|s| s.name == r.scheme) {
            Some(s) => s.points.push((r.freq, r.db)),
            None => series.push(Series {
                name: r.scheme.clone(),
                points: vec![(r.freq, r.db)],
                dashed: r.scheme == "rrc",
                scatter: false,
            }),
        }
    }
    Chart {
        title: "Pulse-shaper magnitude response".into(),
        x_label: "f / f_b".into(),
        y_label: "dB".into(),
        log_y: false,
        series,
    }
}

/// Reads a config file, applying command-line overrides.
pub fn load_config(path: Option<&Path>, seed: Option<u64>, out: Option<&Path>, workers: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = out {
        cfg.out_dir = o.to_path_buf();
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}
