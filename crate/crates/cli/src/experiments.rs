//! Experiment drivers. Each returns its rows; writing files is left to
//! [`crate::run`].

use std::time::Instant;

use rayon::prelude::*;
use superchan::gradcore::{ParamVector, SegmentKind};
use superchan::link::LinkConfig;
use superchan::signal::{power_spectrum, rrc_taps, FirFilter};
use superchan::training::{ablation_stages, symbol_awgn_ser};
use superchan::tx::ConstellationTable;
use superchan::{Error, Params32, Result, Scalar};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::lab::Lab;
use crate::record::{ResultRecord, SpectrumRow};

/// Rows of a sweep plus the errors behind any failed rows.
#[derive(Debug, Default)]
pub struct Sweep {
    pub records: Vec<ResultRecord>,
    pub failures: Vec<Error>,
}

impl Sweep {
    fn push(&mut self, rec: ResultRecord, outcome: Result<()>) {
        if let Err(e) = outcome {
            self.records.push(rec.failed(&e));
            self.failures.push(e);
        } else {
            self.records.push(rec);
        }
    }

    fn extend(&mut self, other: Sweep) {
        self.records.extend(other.records);
        self.failures.extend(other.failures);
    }
}

/// Runs `f` on a fresh row, recording the elapsed time. A failure turns the
/// row into an error marker.
fn timed(mut rec: ResultRecord, f: impl FnOnce(&mut ResultRecord) -> Result<()>) -> (ResultRecord, Result<()>) {
    let t = Instant::now();
    let out = f(&mut rec);
    rec.seconds = t.elapsed().as_secs_f64();
    (rec, out)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
}

fn row(cfg: &ExperimentConfig, link: &LinkConfig, scheme: &str) -> ResultRecord {
    let kind = cfg.kind.map_or("single_eval", |k| k.name());
    ResultRecord {
        eta: link.channel.eta,
        rolloff: link.rolloff,
        v_p: link.channel.v_p,
        ..ResultRecord::new(&cfg.run_id, kind, scheme)
    }
}

fn tag(link: &LinkConfig) -> String {
    format!(
        "n{}_eta{}_r{}_vp{}",
        link.channel.n_channels, link.channel.eta, link.rolloff, link.channel.v_p
    )
}

fn ae_row(lab: &Lab, cfg: &ExperimentConfig, link: &LinkConfig, scheme: &str) -> (ResultRecord, Result<()>) {
    timed(row(cfg, link, scheme), |rec| {
        let p = lab.trained_ae(link)?;
        rec.checkpoint = lab.save_checkpoint(&format!("ae_{}", tag(link)), &p)?;
        *rec = rec.clone().with_count(lab.evaluate_params(link, &p)?);
        Ok(())
    })
}

/// Baseline with and without pre-distortion and the trained transceiver,
/// per drive level of a single channel.
pub fn vp_sweep(lab: &Lab, cfg: &ExperimentConfig) -> Result<Sweep> {
    if cfg.link.channel.n_channels != 1 {
        return Err(Error::InvalidArgument("vp_sweep needs a single-channel link".into()));
    }
    let points: Vec<Vec<(ResultRecord, Result<()>)>> = pool(cfg.workers)?.install(|| {
        cfg.grids
            .v_p
            .par_iter()
            .map(|&v_p| {
                let mut link = cfg.link.clone();
                link.channel.v_p = v_p;
                let base = timed(row(cfg, &link, "baseline"), |rec| {
                    let best = lab.optimize_baseline(&link, &cfg.grids.v_clip, &[v_p])?;
                    rec.v_clip = best.v_clip;
                    *rec = rec.clone().with_count(best.ser);
                    Ok(())
                });
                let raw = timed(row(cfg, &link, "baseline_no_dpd"), |rec| {
                    *rec = rec.clone().with_count(lab.evaluate_baseline(&link, None)?);
                    Ok(())
                });
                vec![base, raw, ae_row(lab, cfg, &link, "ae")]
            })
            .collect()
    });
    let mut out = Sweep::default();
    for (rec, res) in points.into_iter().flatten() {
        out.push(rec, res);
    }
    Ok(out)
}

/// Guard-band reduction read off a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reduction {
    /// Smallest guard band at which the baseline is within the saturation
    /// slack of its widest-guard SER.
    pub eta_sat: f64,
    /// Baseline SER at `eta_sat`.
    pub target_ser: f64,
    /// Guard band at which the trained transceiver first reaches
    /// `target_ser`, interpolated linearly in log SER.
    pub eta_ae: f64,
    /// `1 − eta_ae / eta_sat`.
    pub reduction: f64,
}

/// Relative slack defining baseline saturation.
pub const SATURATION_SLACK: f64 = 0.10;

/// Guard-band reduction from matching `(eta, baseline SER, AE SER)` points.
/// `None` when the baseline already saturates at the smallest guard band or
/// the trained transceiver never reaches the target.
pub fn reduction_metric(points: &[(f64, f64, f64)], slack: f64) -> Option<Reduction> {
    let mut p: Vec<(f64, f64, f64)> = points.iter().copied().filter(|q| q.1.is_finite() && q.2.is_finite()).collect();
    p.sort_by(|a, b| a.0.total_cmp(&b.0));
    let widest = p.last()?.1;
    let i_sat = p.iter().position(|q| q.1 <= (1.0 + slack) * widest)?;
    let (eta_sat, target_ser) = (p[i_sat].0, p[i_sat].1);
    if eta_sat <= 0.0 {
        return None;
    }
    let j = p.iter().position(|q| q.2 <= target_ser)?;
    let eta_ae = if j == 0 {
        p[0].0
    } else {
        let ln = |v: f64| v.max(1e-12).ln();
        let (a, b) = (ln(p[j - 1].2), ln(p[j].2));
        let t = if a > b { (a - ln(target_ser)) / (a - b) } else { 1.0 };
        p[j - 1].0 + t.clamp(0.0, 1.0) * (p[j].0 - p[j - 1].0)
    };
    Some(Reduction { eta_sat, target_ser, eta_ae, reduction: 1.0 - eta_ae / eta_sat })
}

#[derive(Debug, Default)]
pub struct GuardbandOutcome {
    pub sweep: Sweep,
    pub reduction: Option<Reduction>,
}

/// Trained transceiver and grid-optimised baseline per guard band, plus the
/// single-channel baseline as a floor.
pub fn guardband_sweep(lab: &Lab, cfg: &ExperimentConfig) -> Result<GuardbandOutcome> {
    if cfg.link.channel.n_channels < 3 {
        return Err(Error::InvalidArgument("guardband_sweep needs a superchannel of at least 3 channels".into()));
    }
    if cfg.grids.eta.is_empty() {
        return Err(Error::InvalidArgument("empty guard-band grid".into()));
    }
    let single = {
        let mut link = cfg.link.clone();
        link.channel.n_channels = 1;
        link.channel.eta = 0.0;
        lab.optimize_baseline(&link, &cfg.grids.v_clip, &cfg.grids.baseline_v_p)
    };
    let points: Vec<Vec<(ResultRecord, Result<()>)>> = pool(cfg.workers)?.install(|| {
        cfg.grids
            .eta
            .par_iter()
            .map(|&eta| {
                let mut link = cfg.link.clone();
                link.channel.eta = eta;
                link.channel.v_p = 1.0;
                let ae = ae_row(lab, cfg, &link, "ae");
                let base = timed(row(cfg, &link, "baseline"), |rec| {
                    let best = lab.optimize_baseline(&link, &cfg.grids.v_clip, &cfg.grids.baseline_v_p)?;
                    rec.v_clip = best.v_clip;
                    rec.v_p = best.v_p;
                    *rec = rec.clone().with_count(best.ser);
                    Ok(())
                });
                let floor = timed(row(cfg, &link, "baseline_single"), |rec| {
                    let best = single.as_ref().map_err(|e| Error::NumericFailure(e.to_string()))?;
                    rec.v_clip = best.v_clip;
                    rec.v_p = best.v_p;
                    *rec = rec.clone().with_count(best.ser);
                    Ok(())
                });
                vec![ae, base, floor]
            })
            .collect()
    });
    let mut sweep = Sweep::default();
    for (rec, res) in points.into_iter().flatten() {
        sweep.push(rec, res);
    }
    if let Err(e) = single {
        sweep.failures.push(e);
    }
    let reduction = reduction_metric(&guardband_points(&sweep.records), SATURATION_SLACK);
    Ok(GuardbandOutcome { sweep, reduction })
}

/// `(eta, baseline SER, AE SER)` triples of a guard-band sweep.
pub fn guardband_points(records: &[ResultRecord]) -> Vec<(f64, f64, f64)> {
    let ser_of = |scheme: &str, eta: f64| {
        records.iter().find(|r| r.scheme == scheme && r.eta == eta).and_then(|r| r.ser)
    };
    let mut etas: Vec<f64> = records.iter().map(|r| r.eta).collect();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    etas.into_iter()
        .filter_map(|eta| Some((eta, ser_of("baseline", eta)?, ser_of("ae", eta)?)))
        .collect()
}

/// SER after each cumulative unfreezing stage, per guard band. Stages
/// restart from the pre-trained transceiver.
pub fn ablation(lab: &Lab, cfg: &ExperimentConfig) -> Result<Sweep> {
    if cfg.grids.eta.is_empty() {
        return Err(Error::InvalidArgument("empty guard-band grid".into()));
    }
    let stages = ablation_stages(&lab.train.unfreeze_schedule);
    let jobs: Vec<(f64, String, superchan::gradcore::FreezeMask)> = cfg
        .grids
        .eta
        .iter()
        .flat_map(|&eta| stages.iter().map(move |(l, m)| (eta, l.clone(), *m)))
        .collect();
    let rows: Vec<(ResultRecord, Result<()>)> = pool(cfg.workers)?.install(|| {
        jobs.par_iter()
            .map(|(eta, label, mask)| {
                let mut link = cfg.link.clone();
                link.channel.eta = *eta;
                link.channel.v_p = 1.0;
                timed(row(cfg, &link, label), |rec| {
                    let p = if mask.all_frozen() { lab.pretrained(&link)? } else { lab.trained(&link, *mask)? };
                    *rec = rec.clone().with_count(lab.evaluate_params(&link, &p)?);
                    Ok(())
                })
            })
            .collect()
    });
    let mut out = Sweep::default();
    for (rec, res) in rows {
        out.push(rec, res);
    }
    Ok(out)
}

fn taps_of(p: &Params32) -> Vec<superchan::scalar::C<f64>> {
    p.segment(SegmentKind::Shaper)
        .chunks_exact(2)
        .map(|c| superchan::scalar::C::new(c[0].to_f64_lossy(), c[1].to_f64_lossy()))
        .collect()
}

/// Peak-normalised magnitude of a learned shaper at `freq` (units of f_b).
pub fn shaper_response_db(p: &Params32, os: usize, freq: f64, n_fft: usize) -> Result<f64> {
    let f = FirFilter::new(taps_of(p), os as u32)?;
    superchan::signal::response_db_at(&f, freq, n_fft)
}

/// Magnitude responses of the reference RRC and two learned shapers within
/// `±1.5 f_b`, floored at `floor_db`.
pub fn freq_response(link: &LinkConfig, single: &Params32, multi: &Params32, n_fft: usize, floor_db: f64) -> Result<Vec<SpectrumRow>> {
    let rrc = rrc_taps::<f64>(link.rolloff, link.span, link.os)?;
    let filters = [
        ("rrc", rrc),
        ("single_channel", FirFilter::new(taps_of(single), link.os as u32)?),
        ("superchannel", FirFilter::new(taps_of(multi), link.os as u32)?),
    ];
    let mut out = Vec::new();
    for (name, f) in filters {
        for (freq, db) in power_spectrum(&f, n_fft)? {
            if freq.abs() <= 1.5 {
                out.push(SpectrumRow { scheme: name.into(), freq, db: db.max(floor_db) });
            }
        }
    }
    Ok(out)
}

/// Loads the two checkpoints named in the config.
pub fn load_freq_checkpoints(cfg: &ExperimentConfig) -> Result<(Params32, Params32)> {
    let load = |p: &Option<std::path::PathBuf>, what: &str| -> Result<Params32> {
        let path = p.as_ref().ok_or_else(|| Error::NotFound(format!("checkpoints.{what} is not set")))?;
        if !path.exists() {
            return Err(Error::NotFound(format!("checkpoint {}", path.display())));
        }
        ParamVector::load_json(path)
    };
    Ok((load(&cfg.checkpoints.single, "single")?, load(&cfg.checkpoints.multi, "multi")?))
}

/// Learned baseline constellation and its AWGN SER next to square QAM.
pub fn baseline_constellation(lab: &Lab, cfg: &ExperimentConfig) -> Result<(ConstellationTable<f64>, Sweep)> {
    let snr = lab.baseline_snr_db;
    let (table, t) = {
        let t = Instant::now();
        (lab.baseline_table(cfg.link.m)?, t.elapsed().as_secs_f64())
    };
    let mut sweep = Sweep::default();
    let mk = |scheme: &str| ResultRecord { eta: 0.0, rolloff: 0.0, v_p: 0.0, ..ResultRecord::new(&cfg.run_id, ExperimentKind::BaselineConstellation.name(), scheme) };
    let ser = symbol_awgn_ser(&table, snr, 1_000_000, cfg.eval.seed)?;
    sweep.push(ResultRecord { seconds: t, ..mk("learned").with_count(ser) }, Ok(()));
    if let Ok(q) = ConstellationTable::qam(cfg.link.m) {
        let ser = symbol_awgn_ser(&q, snr, 1_000_000, cfg.eval.seed)?;
        sweep.push(mk("qam").with_count(ser), Ok(()));
    }
    Ok((table, sweep))
}

/// Baseline at the configured drive and clipping, and the checkpoint in
/// `checkpoints.eval` when set.
pub fn single_eval(lab: &Lab, cfg: &ExperimentConfig) -> Result<Sweep> {
    let link = &cfg.link;
    let mut out = Sweep::default();
    let (rec, res) = timed(row(cfg, link, "baseline"), |rec| {
        rec.v_clip = Some(cfg.baseline.v_clip);
        *rec = rec.clone().with_count(lab.evaluate_baseline(link, Some(cfg.baseline.v_clip))?);
        Ok(())
    });
    out.push(rec, res);
    if let Some(path) = &cfg.checkpoints.eval {
        let (rec, res) = timed(row(cfg, link, "ae"), |rec| {
            if !path.exists() {
                return Err(Error::NotFound(format!("checkpoint {}", path.display())));
            }
            let p: Params32 = ParamVector::load_json(path)?;
            rec.checkpoint = path.display().to_string();
            *rec = rec.clone().with_count(lab.evaluate_params(link, &p)?);
            Ok(())
        });
        out.push(rec, res);
    }
    Ok(out)
}

/// Merges the rows of several sweeps in order.
pub fn concat(parts: Vec<Sweep>) -> Sweep {
    let mut out = Sweep::default();
    for p in parts {
        out.extend(p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_interpolates_in_log_ser() {
        // baseline saturates at 0.2; AE crosses the target between 0.05 and 0.1
        let pts = [
            (0.0, 0.5, 0.2),
            (0.05, 0.3, 0.04),
            (0.1, 0.1, 0.01),
            (0.2, 0.021, 0.005),
            (0.3, 0.02, 0.005),
        ];
        let r = reduction_metric(&pts, 0.1).unwrap();
        assert_eq!(r.eta_sat, 0.2);
        assert_eq!(r.target_ser, 0.021);
        let t = (0.04f64.ln() - 0.021f64.ln()) / (0.04f64.ln() - 0.01f64.ln());
        assert!((r.eta_ae - (0.05 + t * 0.05)).abs() < 1e-12);
        assert!((r.reduction - (1.0 - r.eta_ae / 0.2)).abs() < 1e-12);
    }

    #[test]
    fn reduction_edge_cases() {
        // flat baseline: nothing to reduce
        assert!(reduction_metric(&[(0.0, 0.1, 0.05), (0.1, 0.1, 0.05)], 0.1).is_none());
        // AE never reaches the target
        assert!(reduction_metric(&[(0.0, 0.5, 0.6), (0.1, 0.2, 0.3), (0.2, 0.1, 0.2)], 0.1).is_none());
        // AE already there at the smallest guard band
        let r = reduction_metric(&[(0.0, 0.5, 0.01), (0.1, 0.1, 0.01), (0.2, 0.1, 0.01)], 0.1).unwrap();
        assert_eq!(r.eta_ae, 0.0);
        assert_eq!(r.reduction, 1.0);
        assert!(reduction_metric(&[], 0.1).is_none());
    }
}
