//! CSV rows written by the experiments.

use std::path::Path;

use serde::{Deserialize, Serialize};
use superchan::rx::SerCount;
use superchan::Result;

/// One evaluated operating point. Columns, in order: `run_id, experiment,
/// scheme, eta, rolloff, v_p, v_clip, ser, ci95, n_symbols, checkpoint,
/// seconds, error`. `v_clip` is empty for schemes without the arcsin
/// pre-distorter; `ser` and `ci95` are empty on failed points, which carry
/// the failure in `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub run_id: String,
    pub experiment: String,
    pub scheme: String,
    pub eta: f64,
    pub rolloff: f64,
    pub v_p: f64,
    pub v_clip: Option<f64>,
    pub ser: Option<f64>,
    pub ci95: Option<f64>,
    pub n_symbols: u64,
    pub checkpoint: String,
    pub seconds: f64,
    pub error: String,
}

impl ResultRecord {
    pub fn new(run_id: &str, experiment: &str, scheme: &str) -> Self {
        Self {
            run_id: run_id.into(),
            experiment: experiment.into(),
            scheme: scheme.into(),
            eta: 0.0,
            rolloff: 0.0,
            v_p: 1.0,
            v_clip: None,
            ser: None,
            ci95: None,
            n_symbols: 0,
            checkpoint: String::new(),
            seconds: 0.0,
            error: String::new(),
        }
    }

    pub fn with_count(mut self, c: SerCount) -> Self {
        self.ser = Some(c.ser());
        self.ci95 = Some(c.ci95());
        self.n_symbols = c.symbols;
        self
    }

    pub fn failed(mut self, err: &superchan::Error) -> Self {
        self.ser = None;
        self.ci95 = None;
        self.error = err.to_string();
        self
    }

    pub fn is_error(&self) -> bool {
        !self.error.is_empty()
    }

    /// The row with the wall-clock column cleared, for reproducibility
    /// comparisons.
    pub fn without_timing(&self) -> Self {
        Self { seconds: 0.0, ..self.clone() }
    }
}

pub fn write_records(path: &Path, records: &[ResultRecord]) -> Result<()> {
    write_rows(path, records)
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    read_rows(path)
}

/// One point of a filter magnitude response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub scheme: String,
    /// Frequency in units of the symbol rate.
    pub freq: f64,
    pub db: f64,
}

pub fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_with_empty_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let ok = ResultRecord { eta: 0.05, v_clip: Some(0.9), ..ResultRecord::new("a", "guardband_sweep", "baseline") }
            .with_count(SerCount { errors: 3, symbols: 300 });
        let bad = ResultRecord::new("a", "guardband_sweep", "ae")
            .failed(&superchan::Error::TrainingDiverged { iteration: 5, loss: f64::NAN });
        write_records(&path, &[ok.clone(), bad.clone()]).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back[0], ok);
        assert!(back[1].is_error());
        assert_eq!(back[1].ser, None);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with(
            "run_id,experiment,scheme,eta,rolloff,v_p,v_clip,ser,ci95,n_symbols,checkpoint,seconds,error"
        ));
    }
}
