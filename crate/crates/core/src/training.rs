//! Losses, pre-training, joint optimisation and the ablation schedule.

use ndarray::{Array2, Axis};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gradcore::{adam_step, AdamConfig, AdamState, FreezeMask, Layout, ParamVector, SegmentKind};
use crate::link::{ae_layout, frame_rng, write_interleaved, EvalPolicy, Link, LinkConfig, Receiver, Transmitter};
use crate::rx::{decide, demapper_net, softmax_row, symbols_matrix, SerCount};
use crate::scalar::{czero, Scalar, C};
use crate::signal::rrc_taps;
use crate::tx::{PREDISTORTER_HIDDEN, arcsin_rail, lookup, predistorter_net, unit_power, unit_power_vjp, ConstellationTable};

const LOG_FLOOR: f64 = 1e-12;

/// Grid size of the pre-distorter regression.
pub const PREDISTORTER_GRID: usize = 10_000;
/// Largest tolerated deviation of the fitted pre-distorter on its grid.
pub const PREDISTORTER_TOLERANCE: f64 = 2e-2;
/// Required share of noiseless constellation points the pre-trained demapper
/// must label like the minimum-distance rule.
pub const DEMAPPER_AGREEMENT: f64 = 0.99;

const TAG_TRAIN: u64 = 0x7A1;
const TAG_PRETRAIN: u64 = 0x9E7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Payload symbols per channel and batch.
    pub batch_symbols: usize,
    /// Guard symbols at each end of a training frame.
    pub guard_symbols: usize,
    pub iterations: usize,
    /// Budget of the demapper pre-training and of the baseline
    /// constellation.
    pub pretrain_iterations: usize,
    /// Budget of the pre-distorter regression.
    pub predistorter_fit_iterations: usize,
    pub lr: f64,
    /// Fraction of training after which the learning rate is multiplied by
    /// `lr_drop_factor`.
    pub lr_drop_at: f64,
    pub lr_drop_factor: f64,
    pub seed: u64,
    /// Order in which blocks are made trainable in the ablation.
    pub unfreeze_schedule: Vec<SegmentKind>,
    /// Clipping level the pre-distorter is pre-trained towards.
    pub pretrain_v_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_symbols: 4096,
            guard_symbols: 64,
            iterations: 20_000,
            pretrain_iterations: 5_000,
            predistorter_fit_iterations: 10_000,
            lr: 1e-3,
            lr_drop_at: 0.8,
            lr_drop_factor: 0.1,
            seed: 1,
            unfreeze_schedule: vec![
                SegmentKind::Demapper,
                SegmentKind::Shaper,
                SegmentKind::Predistorter,
                SegmentKind::Mapper,
            ],
            pretrain_v_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_symbols < 256 {
            return Err(invalid("batch_symbols must be at least 256"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(invalid("learning rate must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.lr_drop_at) {
            return Err(invalid("lr_drop_at must lie in [0, 1]"));
        }
        for (i, k) in self.unfreeze_schedule.iter().enumerate() {
            if self.unfreeze_schedule[..i].contains(k) {
                return Err(invalid(format!("{k} appears twice in the unfreeze schedule")));
            }
        }
        if !(self.pretrain_v_clip > 0.0) {
            return Err(invalid("pretrain_v_clip must be positive"));
        }
        Ok(())
    }

    /// Learning rate at `iteration` of `total`.
    pub fn lr_at(&self, iteration: usize, total: usize) -> f64 {
        if (iteration as f64) < self.lr_drop_at * total as f64 {
            self.lr
        } else {
            self.lr * self.lr_drop_factor
        }
    }
}

/// Mean negative log-probability of the true messages, `log` clamped at
/// `1e-12`.
pub fn ce_loss<T: Scalar>(q: &Array2<T>, messages: &[usize]) -> Result<T> {
    if q.nrows() != messages.len() {
        return Err(invalid("probability rows and messages differ in number"));
    }
    if messages.iter().any(|&m| m >= q.ncols()) {
        return Err(invalid("message outside the probability vector"));
    }
    let floor = T::lit(LOG_FLOOR);
    let s: T = q.axis_iter(Axis(0)).zip(messages).map(|(r, &m)| r[m].max(floor).ln()).sum();
    Ok(-s / T::from_usize_lossy(messages.len().max(1)))
}

/// Softmax cross-entropy from logits; returns the loss and its gradient with
/// respect to the logits.
pub fn softmax_ce<T: Scalar>(logits: &Array2<T>, messages: &[usize]) -> Result<(T, Array2<T>)> {
    if logits.nrows() != messages.len() {
        return Err(invalid("logit rows and messages differ in number"));
    }
    let n = T::from_usize_lossy(messages.len().max(1));
    let log_floor = T::lit(LOG_FLOOR.ln());
    let mut d = logits.clone();
    let mut loss = T::zero();
    for (mut row, &m) in d.axis_iter_mut(Axis(0)).zip(messages) {
        if m >= row.len() {
            return Err(invalid("message outside the logit vector"));
        }
        let z = row[m];
        let (mx, log_s) = softmax_row(row.view_mut());
        let log_q = z - mx - log_s;
        if log_q > log_floor {
            loss -= log_q;
            row[m] -= T::one();
            row.mapv_inplace(|v| v / n);
        } else {
            // clamped: flat in every logit
            loss -= log_floor;
            row.fill(T::zero());
        }
    }
    Ok((loss / n, d))
}

fn rows_to_complex<T: Scalar>(d: &Array2<T>) -> Vec<C<T>> {
    d.rows().into_iter().map(|r| Complex::new(r[0], r[1])).collect()
}

fn adam_for<T: Scalar>(len: usize, lr: f64) -> AdamState<T> {
    AdamState::new(len, AdamConfig { lr, ..AdamConfig::default() })
}

fn check_finite(loss: f64, iteration: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingDiverged { iteration, loss })
    }
}

/// Fits the per-rail pre-distorter to `sign(u)·min(v_clip, (2/π)·asin|u|)`
/// on a uniform grid of [`PREDISTORTER_GRID`] points in `[-1, 1]`. Returns
/// the best parameters seen and their largest grid error.
pub fn fit_predistorter<T: Scalar>(v_clip: f64, iterations: usize, seed: u64) -> Result<(Vec<T>, f64)> {
    let net = predistorter_net();
    let n = PREDISTORTER_GRID;
    let grid: Vec<f64> = (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect();
    let target: Vec<T> = grid.iter().map(|&u| T::lit(arcsin_rail(u, v_clip))).collect();
    let input = Array2::from_shape_vec((n, 1), grid.iter().map(|&u| T::lit(u)).collect()).expect("grid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = Layout::packed(&[(SegmentKind::Predistorter, net.sizes.clone(), net.param_count())])?;
    let mut values: Vec<T> = net.init(&mut rng);
    // first-layer units with transitions spread towards the rails, where the
    // target steepens
    let h = PREDISTORTER_HIDDEN[0];
    let mut units: Vec<(f64, f64)> = vec![(2.0, -0.5), (2.0, 0.0), (2.0, 0.5), (1.0, 0.0)];
    for d in [0.3, 0.1, 0.03, 0.01, 0.003, 0.001] {
        units.push((2.0 / d, 1.0 - d));
        units.push((2.0 / d, d - 1.0));
    }
    for (j, (w, c)) in units.into_iter().enumerate().take(h) {
        values[j] = T::lit(w);
        values[h + j] = T::lit(-w * c);
    }
    let mut p = ParamVector { values, layout };
    let lr0 = 3e-2;
    let mut adam = adam_for::<T>(p.len(), lr0);
    let mut grad = vec![T::zero(); p.len()];
    let scale = T::lit(2.0 / n as f64);
    let worst_of = |out: &Array2<T>| {
        out.iter()
            .zip(&target)
            .map(|(&y, &t)| (y.max(-T::one()).min(T::one()) - t).abs().to_f64_lossy())
            .fold(0.0, f64::max)
    };
    let mut best = (f64::INFINITY, p.values.clone());
    for it in 0..iterations {
        let frac = it as f64 / iterations as f64;
        adam.config.lr = if frac < 0.5 {
            lr0
        } else if frac < 0.85 {
            lr0 / 10.0
        } else {
            lr0 / 100.0
        };
        let tape = net.forward(&p.values, input.clone());
        if frac >= 0.5 {
            let w = worst_of(tape.output());
            if w < best.0 {
                best = (w, p.values.clone());
            }
        }
        // regression on the unclamped output; overshoot past a rail endpoint
        // is free since the clamp removes it
        let d = Array2::from_shape_fn((n, 1), |(i, _)| {
            let (y, t) = (tape.output()[[i, 0]], target[i]);
            if t.abs() >= T::one() && y * t >= T::one() {
                T::zero()
            } else {
                (y - t) * scale
            }
        });
        grad.iter_mut().for_each(|g| *g = T::zero());
        net.backward(&p.values, &tape, d, &mut grad);
        adam_step(&mut p, &grad, &mut adam, FreezeMask::none())?;
    }
    let last = worst_of(&net.infer(&p.values, input));
    if last < best.0 {
        best = (last, p.values);
    }
    let (worst, values) = best;
    if !(worst < PREDISTORTER_TOLERANCE) {
        return Err(Error::PretrainFailure {
            block: "predistorter",
            reason: format!("max grid error {worst:.3e} after {iterations} iterations"),
        });
    }
    Ok((values, worst))
}

/// Symbol-level stand-in for the linearised link: unit-power symbols plus
/// complex Gaussian noise at `snr_db`, followed by power normalisation.
fn awgn_symbols<T: Scalar, R: Rng + ?Sized>(x: &[C<T>], sigma2: f64, rng: &mut R) -> Vec<C<T>> {
    let s = T::lit((sigma2 / 2.0).sqrt());
    x.iter()
        .map(|v| v + Complex::new(s * T::standard_normal(rng), s * T::standard_normal(rng)))
        .collect()
}

fn symbol_noise(snr_db: Option<f64>) -> f64 {
    snr_db.map_or(0.0, |s| 10f64.powf(-s / 10.0))
}

/// Share of noiseless constellation points (scaled as the receiver's power
/// normalisation would scale them at `snr_db`) the demapper labels correctly.
pub fn demapper_agreement<T: Scalar>(table: &[C<T>], params: &[T], snr_db: Option<f64>) -> f64 {
    let g = T::lit(1.0 / (1.0 + symbol_noise(snr_db)).sqrt());
    let pts: Vec<C<T>> = table.iter().map(|v| v * g).collect();
    let net = demapper_net(table.len());
    let d = decide(&net.infer(params, symbols_matrix(&pts)));
    d.iter().enumerate().filter(|(m, &k)| *m == k).count() as f64 / table.len() as f64
}

/// Trains the demapper on the symbol-level linearised link. Returns the
/// parameters and their agreement with minimum-distance decisions.
pub fn pretrain_demapper<T: Scalar>(
    table: &ConstellationTable<T>,
    snr_db: Option<f64>,
    cfg: &TrainConfig,
) -> Result<(Vec<T>, f64)> {
    let m = table.len();
    let net = demapper_net(m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD3);
    let layout = Layout::packed(&[(SegmentKind::Demapper, net.sizes.clone(), net.param_count())])?;
    let mut p = ParamVector { values: net.init(&mut rng), layout };
    let mut adam = adam_for::<T>(p.len(), cfg.lr);
    let mut grad = vec![T::zero(); p.len()];
    let sigma2 = symbol_noise(snr_db);
    let iters = cfg.pretrain_iterations;
    for it in 0..iters {
        adam.config.lr = cfg.lr_at(it, iters);
        let mut r = frame_rng(cfg.seed, TAG_PRETRAIN, it as u64);
        let msgs: Vec<usize> = (0..cfg.batch_symbols).map(|_| r.random_range(0..m)).collect();
        let y = awgn_symbols(&lookup(&msgs, table.points())?, sigma2, &mut r);
        let (yn, _) = unit_power(&y);
        let tape = net.forward(&p.values, symbols_matrix(&yn));
        let (loss, d) = softmax_ce(tape.output(), &msgs)?;
        check_finite(loss.to_f64_lossy(), it)?;
        grad.iter_mut().for_each(|g| *g = T::zero());
        net.backward(&p.values, &tape, d, &mut grad);
        adam_step(&mut p, &grad, &mut adam, FreezeMask::none())?;
    }
    let agree = demapper_agreement(table.points(), &p.values, snr_db);
    if agree < DEMAPPER_AGREEMENT {
        return Err(Error::PretrainFailure {
            block: "demapper",
            reason: format!("agreement {agree:.3} with minimum-distance decisions"),
        });
    }
    Ok((p.values, agree))
}

/// Initial transceiver that mimics the baseline: the constellation and the
/// RRC taps are copied, the pre-distorter is fitted to the arcsin rule and
/// the demapper is trained on the linearised link.
pub fn pretrain_all<T: Scalar>(
    link: &LinkConfig,
    cfg: &TrainConfig,
    baseline: &ConstellationTable<f64>,
) -> Result<ParamVector<T>> {
    link.validate()?;
    cfg.validate()?;
    if baseline.len() != link.m {
        return Err(invalid("baseline constellation size does not match the link"));
    }
    let mut p = ParamVector::zeros(ae_layout(link.m, link.shaper_taps()));
    let table: ConstellationTable<T> = baseline.cast();
    write_interleaved(p.segment_mut(SegmentKind::Mapper), table.points());
    let rrc = rrc_taps::<T>(link.rolloff, link.span, link.os)?;
    write_interleaved(p.segment_mut(SegmentKind::Shaper), &rrc.taps);
    let (pd, _) = fit_predistorter::<T>(cfg.pretrain_v_clip, cfg.predistorter_fit_iterations, cfg.seed ^ 0xF1)?;
    p.segment_mut(SegmentKind::Predistorter).copy_from_slice(&pd);
    let (dm, _) = pretrain_demapper(&table, link.channel.snr_db, cfg)?;
    p.segment_mut(SegmentKind::Demapper).copy_from_slice(&dm);
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ParamVector<T>,
    /// Loss of every iteration.
    pub losses: Vec<f64>,
    /// Whether the moving average over the final quarter did not rise.
    pub settled: bool,
}

/// Moving-average trend check over the final quarter of a loss trace: the
/// `window`-iteration average at the end must not exceed the one at 75% by
/// more than `slack` (relative).
pub fn trend_settled(losses: &[f64], window: usize, slack: f64) -> bool {
    let n = losses.len();
    let start = n * 3 / 4;
    if n < 2 || start < 1 {
        return true;
    }
    let w = window.min(start).max(1);
    let mean = |end: usize| losses[end - w..end].iter().sum::<f64>() / w as f64;
    mean(n) <= mean(start) * (1.0 + slack)
}

/// Joint Adam optimisation of the unfrozen segments on fresh batches.
/// `link` fixes the training frame geometry and the (calibrated) noise; the
/// batch stream follows the training seed and the channel seed.
pub fn train_joint<T: Scalar>(
    init: &ParamVector<T>,
    cfg: &TrainConfig,
    link: &Link<T>,
    frozen: FreezeMask,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut params = init.clone();
    let iters = cfg.iterations;
    let mut losses = Vec::with_capacity(iters);
    if frozen.all_frozen() {
        return Ok(TrainOutcome { params, losses, settled: true });
    }
    let tx_grad = [SegmentKind::Mapper, SegmentKind::Shaper, SegmentKind::Predistorter]
        .iter()
        .any(|&k| !frozen.is_frozen(k));
    let mut adam = adam_for::<T>(params.len(), cfg.lr);
    let mut grad = vec![T::zero(); params.len()];
    let stream = cfg.seed ^ TAG_TRAIN ^ link.cfg.channel.seed.rotate_left(29);
    for it in 0..iters {
        adam.config.lr = cfg.lr_at(it, iters);
        let batch = link.frame(stream, it as u64);
        let loss = link.loss_grad(&params, &batch, Some(&mut grad), tx_grad)?.to_f64_lossy();
        check_finite(loss, it)?;
        losses.push(loss);
        adam_step(&mut params, &grad, &mut adam, frozen)?;
    }
    let settled = trend_settled(&losses, 500, 0.02);
    Ok(TrainOutcome { params, losses, settled })
}

/// Stage labels and freeze masks of the cumulative unfreezing sequence:
/// `frozen`, then `+NNx` for each block of `schedule` in turn.
pub fn ablation_stages(schedule: &[SegmentKind]) -> Vec<(String, FreezeMask)> {
    let mut out = vec![("frozen".to_string(), FreezeMask::all())];
    for k in 1..=schedule.len() {
        out.push((format!("+{}", schedule[k - 1].label()), FreezeMask::training_only(&schedule[..k])));
    }
    out
}

#[derive(Debug, Clone)]
pub struct AblationStage<T> {
    pub label: String,
    pub ser: SerCount,
    pub params: ParamVector<T>,
}

/// Retrains from the pre-trained `init` for every stage of the schedule and
/// scores each stage on the same evaluation frames.
pub fn ablation_run<T: Scalar>(
    init: &ParamVector<T>,
    cfg: &TrainConfig,
    train_link: &Link<T>,
    eval_link: &Link<T>,
    policy: &EvalPolicy,
) -> Result<Vec<AblationStage<T>>> {
    ablation_stages(&cfg.unfreeze_schedule)
        .into_iter()
        .map(|(label, mask)| {
            let params = train_joint(init, cfg, train_link, mask)?.params;
            let ser = eval_link.evaluate(&Transmitter::from_params(&params), &Receiver::from_params(&params), policy)?;
            Ok(AblationStage { label, ser, params })
        })
        .collect()
}

/// Minimum-distance symbol errors of `table` on unit-power symbols with
/// complex Gaussian noise at `snr_db`.
pub fn symbol_awgn_ser(table: &ConstellationTable<f64>, snr_db: f64, symbols: usize, seed: u64) -> Result<SerCount> {
    let sigma2 = symbol_noise(Some(snr_db));
    let mut r = frame_rng(seed, TAG_PRETRAIN ^ 0x5E, 0);
    let msgs: Vec<usize> = (0..symbols).map(|_| r.random_range(0..table.len())).collect();
    let y = awgn_symbols(&lookup(&msgs, table.points())?, sigma2, &mut r);
    crate::rx::count_errors(&msgs, &crate::rx::demap_mindist(&y, table.points()))
}

/// Geometric constellation learned by a symbol-level autoencoder (mapper
/// table plus demapper) on AWGN at `snr_db`, starting from a sunflower
/// packing.
pub fn train_baseline_constellation<T: Scalar>(
    snr_db: f64,
    m: usize,
    cfg: &TrainConfig,
) -> Result<ConstellationTable<f64>> {
    if m < 2 {
        return Err(invalid("constellation size must be at least 2"));
    }
    cfg.validate()?;
    let net = demapper_net(m);
    let layout = Layout::packed(&[
        (SegmentKind::Mapper, vec![m, 2], 2 * m),
        (SegmentKind::Demapper, net.sizes.clone(), net.param_count()),
    ])?;
    let mut p = ParamVector::<T>::zeros(layout);
    let start = ConstellationTable::<T>::sunflower(m)?;
    write_interleaved(p.segment_mut(SegmentKind::Mapper), start.points());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xB5);
    let dm: Vec<T> = net.init(&mut rng);
    p.segment_mut(SegmentKind::Demapper).copy_from_slice(&dm);
    let s1 = p.layout.get(SegmentKind::Mapper).expect("mapper").clone();
    let s4 = p.layout.get(SegmentKind::Demapper).expect("demapper").clone();
    let mut adam = adam_for::<T>(p.len(), cfg.lr);
    let mut grad = vec![T::zero(); p.len()];
    let sigma2 = symbol_noise(Some(snr_db));
    let iters = cfg.pretrain_iterations;
    for it in 0..iters {
        adam.config.lr = cfg.lr_at(it, iters);
        let mut r = frame_rng(cfg.seed, TAG_PRETRAIN ^ 0xC0, it as u64);
        let msgs: Vec<usize> = (0..cfg.batch_symbols).map(|_| r.random_range(0..m)).collect();
        let raw: Vec<C<T>> = p.segment(SegmentKind::Mapper).chunks_exact(2).map(|c| Complex::new(c[0], c[1])).collect();
        let (table, rms) = unit_power(&raw);
        let y = awgn_symbols(&lookup(&msgs, &table)?, sigma2, &mut r);
        let tape = net.forward(p.segment(SegmentKind::Demapper), symbols_matrix(&y));
        let (loss, d) = softmax_ce(tape.output(), &msgs)?;
        check_finite(loss.to_f64_lossy(), it)?;
        grad.iter_mut().for_each(|g| *g = T::zero());
        let dy = net.backward(
            &p.values[s4.offset..s4.offset + s4.len],
            &tape,
            d,
            &mut grad[s4.offset..s4.offset + s4.len],
        );
        let mut table_bar = vec![czero(); m];
        for (&k, g) in msgs.iter().zip(rows_to_complex(&dy)) {
            table_bar[k] += g;
        }
        write_interleaved(&mut grad[s1.offset..s1.offset + s1.len], &unit_power_vjp(&raw, rms, &table_bar));
        adam_step(&mut p, &grad, &mut adam, FreezeMask::none())?;
    }
    let raw: Vec<C<f64>> = p
        .segment(SegmentKind::Mapper)
        .chunks_exact(2)
        .map(|c| Complex::new(c[0].to_f64_lossy(), c[1].to_f64_lossy()))
        .collect();
    ConstellationTable::normalized(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ce_loss_examples() {
        let u = Array2::from_elem((3, 64), 1.0 / 64.0);
        assert_abs_diff_eq!(ce_loss(&u, &[0, 5, 63]).unwrap(), 64f64.ln(), epsilon = 1e-12);
        assert!(ce_loss(&u, &[0]).is_err());
        let mut one_hot = Array2::zeros((2, 4));
        one_hot[[0, 1]] = 1.0;
        one_hot[[1, 3]] = 1.0;
        assert_eq!(ce_loss(&one_hot, &[1, 3]).unwrap(), 0.0);
        let mut q = Array2::from_elem((2, 4), 0.25);
        q[[0, 0]] = 0.5;
        q[[0, 1]] = 0.5 / 3.0;
        let oracle = -(0.5f64.ln() + 0.25f64.ln()) / 2.0;
        assert_abs_diff_eq!(ce_loss(&q, &[0, 2]).unwrap(), oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle, 1.0397, epsilon = 1e-4);
        let zero = Array2::<f64>::zeros((1, 4));
        assert_abs_diff_eq!(ce_loss(&zero, &[2]).unwrap(), -(1e-12f64).ln(), epsilon = 1e-9);
    }

    #[test]
    fn softmax_ce_matches_ce_loss_and_finite_differences() {
        let logits = Array2::from_shape_vec((2, 3), vec![0.3, -1.2, 2.0, 0.0, 0.5, -0.7]).unwrap();
        let msgs = [1, 2];
        let (loss, d) = softmax_ce(&logits, &msgs).unwrap();
        let mut q = logits.clone();
        crate::rx::softmax_rows(&mut q);
        assert_abs_diff_eq!(loss, ce_loss(&q, &msgs).unwrap(), epsilon = 1e-14);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut p = logits.clone();
                p[[i, j]] += h;
                let mut mn = logits.clone();
                mn[[i, j]] -= h;
                let fd = (softmax_ce(&p, &msgs).unwrap().0 - softmax_ce(&mn, &msgs).unwrap().0) / (2.0 * h);
                assert_abs_diff_eq!(d[[i, j]], fd, epsilon = 1e-8);
            }
        }
    }

    fn small_link(n_channels: usize) -> LinkConfig {
        let mut cfg = LinkConfig { m: 16, payload: 256, guard: 16, span: 8, ..LinkConfig::default() };
        cfg.channel.n_channels = n_channels;
        cfg.channel.eta = 0.1;
        cfg
    }

    fn quick() -> TrainConfig {
        TrainConfig { batch_symbols: 256, guard_symbols: 16, iterations: 12, ..TrainConfig::default() }
    }

    #[test]
    fn config_rejects_repeated_blocks_and_tiny_batches() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.unfreeze_schedule = vec![SegmentKind::Demapper, SegmentKind::Demapper];
        assert!(c.validate().is_err());
        let c = TrainConfig { batch_symbols: 100, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let parsed: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"lr": 0.1, "bogus": 1}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn learning_rate_drops_once() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0, 100), 1e-3);
        assert_eq!(c.lr_at(79, 100), 1e-3);
        assert_abs_diff_eq!(c.lr_at(80, 100), 1e-4, epsilon = 1e-18);
    }

    #[test]
    fn trend_check() {
        let falling: Vec<f64> = (0..4000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        assert!(trend_settled(&falling, 500, 0.0));
        let rising: Vec<f64> = (0..4000).map(|i| i as f64).collect();
        assert!(!trend_settled(&rising, 500, 0.02));
    }

    #[test]
    fn ablation_labels_follow_the_schedule() {
        let labels: Vec<String> = ablation_stages(&TrainConfig::default().unfreeze_schedule)
            .into_iter()
            .map(|(l, _)| l)
            .collect();
        assert_eq!(labels, ["frozen", "+NN4", "+NN2", "+NN3", "+NN1"]);
        let order = [SegmentKind::Mapper, SegmentKind::Demapper];
        let stages = ablation_stages(&order);
        assert_eq!(stages[1].0, "+NN1");
        assert!(!stages[1].1.is_frozen(SegmentKind::Mapper));
        assert!(stages[1].1.is_frozen(SegmentKind::Demapper));
        assert!(!stages[2].1.is_frozen(SegmentKind::Demapper));
        assert!(stages[2].1.is_frozen(SegmentKind::Shaper));
    }

    #[test]
    fn predistorter_fit_meets_its_tolerance() {
        let (p, worst) = fit_predistorter::<f32>(1.0, 10_000, 3).unwrap();
        assert!(worst < PREDISTORTER_TOLERANCE);
        let y = predistorter_net().infer(&p, Array2::from_elem((1, 1), 0.5f32));
        assert_abs_diff_eq!(y[[0, 0]], 1.0 / 3.0, epsilon = 2e-2f32);
        let short = fit_predistorter::<f32>(1.0, 10, 3);
        assert!(matches!(short, Err(Error::PretrainFailure { block: "predistorter", .. })));
    }

    #[test]
    fn demapper_pretraining_agrees_with_minimum_distance() {
        let table = ConstellationTable::<f32>::qam(16).unwrap();
        let cfg = TrainConfig { pretrain_iterations: 1500, batch_symbols: 1024, ..TrainConfig::default() };
        let (_, agree) = pretrain_demapper(&table, Some(18.0), &cfg).unwrap();
        assert!(agree >= DEMAPPER_AGREEMENT);
        let cfg = TrainConfig { pretrain_iterations: 0, ..cfg };
        let err = pretrain_demapper(&table, Some(18.0), &cfg).unwrap_err();
        assert!(matches!(err, Error::PretrainFailure { block: "demapper", .. }));
    }

    fn fake_init(cfg: &LinkConfig) -> ParamVector<f32> {
        crate::link::tests::random_params(cfg, 4).cast()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = small_link(1);
        let link = Link::<f32>::new(cfg.clone()).unwrap();
        let init = fake_init(&cfg);
        let tc = TrainConfig { lr: 0.0, ..quick() };
        let out = train_joint(&init, &tc, &link, FreezeMask::none()).unwrap();
        assert_eq!(out.params.values, init.values);
        assert_eq!(out.losses.len(), 12);
    }

    #[test]
    fn frozen_segments_are_bit_stable() {
        let cfg = small_link(3);
        let link = Link::<f32>::new(cfg.clone()).unwrap();
        let init = fake_init(&cfg);
        let mask = FreezeMask::training_only(&[SegmentKind::Demapper, SegmentKind::Shaper]);
        let out = train_joint(&init, &quick(), &link, mask).unwrap();
        for k in [SegmentKind::Mapper, SegmentKind::Predistorter] {
            assert_eq!(out.params.segment(k), init.segment(k));
        }
        for k in [SegmentKind::Demapper, SegmentKind::Shaper] {
            assert_ne!(out.params.segment(k), init.segment(k));
        }
        let all = train_joint(&init, &quick(), &link, FreezeMask::all()).unwrap();
        assert_eq!(all.params.values, init.values);
        assert!(all.losses.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small_link(3);
        let link = Link::<f32>::new(cfg.clone()).unwrap();
        let init = fake_init(&cfg);
        let a = train_joint(&init, &quick(), &link, FreezeMask::none()).unwrap();
        let b = train_joint(&init, &quick(), &link, FreezeMask::none()).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.params.values, b.params.values);
        let c = train_joint(&init, &TrainConfig { seed: 2, ..quick() }, &link, FreezeMask::none()).unwrap();
        assert_ne!(a.losses, c.losses);
    }

    #[test]
    fn training_lowers_the_loss() {
        let cfg = small_link(1);
        let link = Link::<f32>::new(cfg.clone()).unwrap();
        let init = fake_init(&cfg);
        let tc = TrainConfig { iterations: 300, lr: 3e-3, ..quick() };
        let out = train_joint(&init, &tc, &link, FreezeMask::none()).unwrap();
        let head: f64 = out.losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = out.losses[280..].iter().sum::<f64>() / 20.0;
        assert!(tail < 0.7 * head, "{head} -> {tail}");
    }

    #[test]
    fn binary_constellation_becomes_antipodal() {
        let tc = TrainConfig { pretrain_iterations: 1500, batch_symbols: 512, lr: 1e-2, ..TrainConfig::default() };
        let t = train_baseline_constellation::<f64>(3.0, 2, &tc).unwrap();
        assert_abs_diff_eq!(t.average_power(), 1.0, epsilon = 1e-9);
        let (a, b) = (t.points()[0], t.points()[1]);
        assert_abs_diff_eq!(a.norm(), 1.0, epsilon = 5e-2);
        assert_abs_diff_eq!(b.norm(), 1.0, epsilon = 5e-2);
        assert_abs_diff_eq!((a + b).norm(), 0.0, epsilon = 5e-2);
    }
}
