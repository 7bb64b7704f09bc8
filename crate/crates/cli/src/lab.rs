//! Shared state of an experiment run: calibrated links, the baseline
//! constellation, and memoised pre-trained and trained transceivers.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use superchan::gradcore::{FreezeMask, ParamVector, SegmentKind};
use superchan::link::{EvalPolicy, Link, LinkConfig, Receiver, Transmitter};
use superchan::rx::SerCount;
use superchan::training::{pretrain_all, train_baseline_constellation, train_joint, TrainConfig};
use superchan::tx::ConstellationTable;
use superchan::{Link32, Params32, Result, Table64};

type Slot<V> = Arc<Mutex<Option<V>>>;

/// Memo table whose entries are computed at most once, without holding the
/// table lock while computing. Failures are not cached.
struct Memo<V> {
    slots: Mutex<HashMap<String, Slot<V>>>,
}

impl<V: Clone> Memo<V> {
    fn new() -> Self {
        Self { slots: Mutex::new(HashMap::new()) }
    }

    fn get_or_try(&self, key: String, make: impl FnOnce() -> Result<V>) -> Result<V> {
        let slot = self.slots.lock().expect("memo lock").entry(key).or_default().clone();
        let mut guard = slot.lock().expect("memo slot");
        if let Some(v) = guard.as_ref() {
            return Ok(v.clone());
        }
        let v = make()?;
        *guard = Some(v.clone());
        Ok(v)
    }
}

/// Best baseline operating point found by the grid search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselinePoint {
    pub v_clip: Option<f64>,
    pub v_p: f64,
    pub ser: SerCount,
}

pub struct Lab {
    pub train: TrainConfig,
    pub policy: EvalPolicy,
    /// SNR of the symbol-level training of the baseline constellation.
    pub baseline_snr_db: f64,
    /// Score baselines with the pre-trained demapper.
    pub network_demapper: bool,
    /// Trained transceivers are written here when set.
    pub checkpoint_dir: Option<PathBuf>,
    table: OnceLock<Table64>,
    links: Memo<Arc<Link32>>,
    pretrained: Memo<Arc<Params32>>,
    trained: Memo<Arc<Params32>>,
}

fn key_of(cfg: &LinkConfig) -> String {
    // Debug prints floats in shortest round-trip form, so equal keys mean
    // equal links
    format!("{cfg:?}")
}

impl Lab {
    pub fn new(train: TrainConfig, policy: EvalPolicy) -> Self {
        Self {
            train,
            policy,
            baseline_snr_db: 18.0,
            network_demapper: false,
            checkpoint_dir: None,
            table: OnceLock::new(),
            links: Memo::new(),
            pretrained: Memo::new(),
            trained: Memo::new(),
        }
    }

    /// Uses `table` as the baseline constellation instead of training one.
    pub fn with_table(self, table: Table64) -> Self {
        let _ = self.table.set(table);
        self
    }

    /// Baseline constellation, learned on AWGN at `baseline_snr_db` unless
    /// one was supplied.
    pub fn baseline_table(&self, m: usize) -> Result<Table64> {
        if let Some(t) = self.table.get() {
            if t.len() != m {
                return Err(superchan::Error::InvalidArgument(format!(
                    "baseline constellation has {} points, link needs {m}",
                    t.len()
                )));
            }
            return Ok(t.clone());
        }
        let t = train_baseline_constellation::<f32>(self.baseline_snr_db, m, &self.train)?;
        Ok(self.table.get_or_init(|| t).clone())
    }

    /// Calibrated link for `cfg`.
    pub fn link(&self, cfg: &LinkConfig) -> Result<Arc<Link32>> {
        // the noise does not depend on the drive level, so links differing
        // only in V_p share one calibration
        let reference = LinkConfig {
            channel: superchan::channel::ChannelConfig { v_p: 1.0, ..cfg.channel.clone() },
            ..cfg.clone()
        };
        let base = self.links.get_or_try(key_of(&reference), || Ok(Arc::new(Link::new(reference.clone())?)))?;
        if cfg.channel.v_p == 1.0 {
            return Ok(base);
        }
        self.links.get_or_try(key_of(cfg), || Ok(Arc::new(Link::with_noise(cfg.clone(), base.awgn)?)))
    }

    /// Pre-trained transceiver; depends only on the constellation, the
    /// shaping filter and the SNR, so it is shared across guard bands,
    /// channel counts and drive levels.
    pub fn pretrained(&self, cfg: &LinkConfig) -> Result<Arc<Params32>> {
        let key = format!(
            "m{} os{} r{:?} s{} snr{:?}",
            cfg.m, cfg.os, cfg.rolloff, cfg.span, cfg.channel.snr_db
        );
        self.pretrained.get_or_try(key, || {
            let table = self.baseline_table(cfg.m)?;
            Ok(Arc::new(pretrain_all::<f32>(cfg, &self.train, &table)?))
        })
    }

    /// Transceiver trained from the pre-trained start with `mask` applied.
    pub fn trained(&self, cfg: &LinkConfig, mask: FreezeMask) -> Result<Arc<Params32>> {
        let key = format!("{} {mask:?}", key_of(cfg));
        self.trained.get_or_try(key, || {
            let init = self.pretrained(cfg)?;
            let link = self.link(cfg)?.reframed(self.train.batch_symbols, self.train.guard_symbols)?;
            let out = train_joint(&init, &self.train, &link, mask)?;
            Ok(Arc::new(out.params))
        })
    }

    /// Fully trained transceiver.
    pub fn trained_ae(&self, cfg: &LinkConfig) -> Result<Arc<Params32>> {
        self.trained(cfg, FreezeMask::none())
    }

    /// Writes `params` under the checkpoint directory, returning the path.
    pub fn save_checkpoint(&self, name: &str, params: &Params32) -> Result<String> {
        match &self.checkpoint_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("{name}.json"));
                params.save_json(&path)?;
                Ok(path.display().to_string())
            }
            None => Ok(String::new()),
        }
    }

    pub fn evaluate(&self, cfg: &LinkConfig, tx: &Transmitter<f32>, rx: &Receiver<f32>) -> Result<SerCount> {
        self.link(cfg)?.evaluate(tx, rx, &self.policy)
    }

    pub fn evaluate_params(&self, cfg: &LinkConfig, p: &ParamVector<f32>) -> Result<SerCount> {
        self.evaluate(cfg, &Transmitter::from_params(p), &Receiver::from_params(p))
    }

    fn baseline_receiver(&self, cfg: &LinkConfig, table: &ConstellationTable<f32>) -> Result<Receiver<f32>> {
        if self.network_demapper {
            let p = self.pretrained(cfg)?;
            Ok(Receiver::Network(p.segment(SegmentKind::Demapper).to_vec()))
        } else {
            Ok(Receiver::MinDistance { table: table.points().to_vec() })
        }
    }

    /// Baseline SER at a fixed drive, with arcsin pre-distortion clipped at
    /// `v_clip` or without pre-distortion.
    pub fn evaluate_baseline(&self, cfg: &LinkConfig, v_clip: Option<f64>) -> Result<SerCount> {
        let table = self.baseline_table(cfg.m)?.cast::<f32>();
        let tx = Transmitter::baseline(cfg, &table, v_clip)?;
        self.evaluate(cfg, &tx, &self.baseline_receiver(cfg, &table)?)
    }

    /// Grid search of the baseline over clipping and drive levels. Ties keep
    /// the earlier grid point.
    pub fn optimize_baseline(&self, cfg: &LinkConfig, v_clips: &[f64], v_ps: &[f64]) -> Result<BaselinePoint> {
        let mut best: Option<BaselinePoint> = None;
        for &v_p in v_ps {
            let mut c = cfg.clone();
            c.channel.v_p = v_p;
            for &v_clip in v_clips {
                let ser = self.evaluate_baseline(&c, Some(v_clip))?;
                if best.is_none_or(|b| ser.ser() < b.ser.ser()) {
                    best = Some(BaselinePoint { v_clip: Some(v_clip), v_p, ser });
                }
            }
        }
        best.ok_or_else(|| superchan::Error::InvalidArgument("empty baseline grid".into()))
    }
}
