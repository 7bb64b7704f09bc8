//! The complete transceiver: transmitter, superchannel hardware and centre
//! channel receiver, for evaluation and for end-to-end differentiation.

use ndarray::Array2;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    channel_offsets, check_spectral_fit, demultiplex_vjp, iqm_rail, iqm_rail_slope, iqm_samples, Awgn, ChannelConfig,
};
use crate::error::{invalid, Result};
use crate::gradcore::{Layout, ParamVector, SegmentKind};
use crate::rx::{decide, demap_mindist, demapper_net, ls_gain, sample_indices, symbols_matrix, Adc, MatchedFilter, SerCount};
use crate::scalar::{czero, Scalar, C};
use crate::signal::{rrc_taps, shift_phasors};
use crate::training::softmax_ce;
use crate::tx::{
    find_peak, lookup, peak_normalize_vjp, predistort_nn_taped, predistort_nn_vjp, predistorter_net, shape_samples,
    pulse_shape_vjp, unit_power, unit_power_vjp, ConstellationTable, Predistortion,
};

/// Default frame geometry, shared by training batches and evaluation frames.
pub const DEFAULT_PAYLOAD: usize = 4096;
pub const DEFAULT_GUARD: usize = 64;
/// Symbols averaged to calibrate the noise power.
pub const CALIBRATION_SYMBOLS: usize = 1 << 21;
const CALIBRATION_SEED: u64 = 0xCA11_B8A7;

/// Everything that fixes the simulated link apart from the transceiver
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    pub channel: ChannelConfig,
    /// Constellation size.
    pub m: usize,
    /// Simulation samples per symbol.
    pub os: usize,
    /// Roll-off of the matched filter and of the reference RRC shaper.
    pub rolloff: f64,
    /// Filter span in symbols.
    pub span: usize,
    pub payload: usize,
    /// Discarded symbols at each frame end.
    pub guard: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            channel: ChannelConfig::default(),
            m: 64,
            os: 8,
            rolloff: 0.1,
            span: 32,
            payload: DEFAULT_PAYLOAD,
            guard: DEFAULT_GUARD,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        if self.m < 2 {
            return Err(invalid("constellation size must be at least 2"));
        }
        if self.os < 2 || self.os % 2 != 0 {
            return Err(invalid("oversampling must be even and at least 2"));
        }
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(invalid("roll-off must lie in (0, 1]"));
        }
        if self.span == 0 {
            return Err(invalid("filter span must be positive"));
        }
        if self.payload == 0 {
            return Err(invalid("payload must be positive"));
        }
        check_spectral_fit(self.channel.n_channels, self.channel.eta, self.os as f64)
    }

    pub fn frame_symbols(&self) -> usize {
        self.payload + 2 * self.guard
    }

    pub fn shaper_taps(&self) -> usize {
        self.span * self.os + 1
    }

    /// Same link with a different frame geometry.
    pub fn with_frame(&self, payload: usize, guard: usize) -> Self {
        Self { payload, guard, ..self.clone() }
    }

    /// Constellation used for noise calibration: square QAM when `m` is a
    /// perfect square, otherwise a sunflower packing.
    pub fn reference_table(&self) -> Result<ConstellationTable<f64>> {
        ConstellationTable::qam(self.m).or_else(|_| ConstellationTable::sunflower(self.m))
    }
}

/// Parameter layout of the trainable transceiver.
pub fn ae_layout(m: usize, shaper_taps: usize) -> Layout {
    let pd = predistorter_net();
    let dm = demapper_net(m);
    Layout::packed(&[
        (SegmentKind::Mapper, vec![m, 2], 2 * m),
        (SegmentKind::Shaper, vec![shaper_taps, 2], 2 * shaper_taps),
        (SegmentKind::Predistorter, pd.sizes.clone(), pd.param_count()),
        (SegmentKind::Demapper, dm.sizes.clone(), dm.param_count()),
    ])
    .expect("distinct segments")
}

pub(crate) fn as_complex<T: Scalar>(v: &[T]) -> Vec<C<T>> {
    v.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect()
}

pub(crate) fn write_interleaved<T: Scalar>(dst: &mut [T], v: &[C<T>]) {
    for (d, c) in dst.chunks_exact_mut(2).zip(v) {
        d[0] = c.re;
        d[1] = c.im;
    }
}

/// Transmitter description shared by all channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmitter<T> {
    /// Constellation before power normalisation.
    pub raw_table: Vec<C<T>>,
    pub taps: Vec<C<T>>,
    pub dpd: Predistortion<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Receiver<T> {
    /// Data-aided complex gain, then nearest point of the table.
    MinDistance { table: Vec<C<T>> },
    /// Power normalisation, then the softmax demapper.
    Network(Vec<T>),
}

impl<T: Scalar> Transmitter<T> {
    /// RRC shaping and arcsin pre-distortion around a fixed constellation.
    pub fn baseline(cfg: &LinkConfig, table: &ConstellationTable<T>, v_clip: Option<f64>) -> Result<Self> {
        let rrc = rrc_taps::<T>(cfg.rolloff, cfg.span, cfg.os)?;
        Ok(Self {
            raw_table: table.points().to_vec(),
            taps: rrc.taps,
            dpd: match v_clip {
                Some(v_clip) => Predistortion::Arcsin { v_clip },
                None => Predistortion::Bypass,
            },
        })
    }

    pub fn from_params(p: &ParamVector<T>) -> Self {
        Self {
            raw_table: as_complex(p.segment(SegmentKind::Mapper)),
            taps: as_complex(p.segment(SegmentKind::Shaper)),
            dpd: Predistortion::Network(p.segment(SegmentKind::Predistorter).to_vec()),
        }
    }
}

impl<T: Scalar> Receiver<T> {
    pub fn from_params(p: &ParamVector<T>) -> Self {
        Receiver::Network(p.segment(SegmentKind::Demapper).to_vec())
    }
}

/// Deterministic per-frame random streams.
pub fn frame_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17));
    r.set_stream(tag);
    r
}

const TAG_MESSAGES: u64 = 1;
const TAG_NOISE: u64 = 2;

/// Messages for every channel plus one noise realisation.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub messages: Vec<Vec<usize>>,
    pub noise: Vec<C<T>>,
}

/// Stopping rule for Monte-Carlo SER estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalPolicy {
    pub min_errors: u64,
    pub min_symbols: u64,
    pub max_frames: u64,
    pub seed: u64,
}

impl Default for EvalPolicy {
    fn default() -> Self {
        Self { min_errors: 400, min_symbols: 0, max_frames: 64, seed: 0xE7A1 }
    }
}

/// Calibrated link for one frame geometry.
#[derive(Debug, Clone)]
pub struct Link<T: Scalar> {
    pub cfg: LinkConfig,
    pub awgn: Awgn,
    adc: Adc<T>,
    mf: MatchedFilter<T>,
    phasors: Vec<Option<Vec<C<T>>>>,
    offsets: Vec<f64>,
}

struct Forward<T: Scalar> {
    raw: Vec<C<T>>,
    taps: Vec<C<T>>,
    rms: T,
    tapes: Vec<ChannelTape<T>>,
    z_len: usize,
    idx: Vec<usize>,
    y: Vec<C<T>>,
    y_rms: T,
    tape4: crate::nn::MlpTape<T>,
    loss: T,
    dlogits: Array2<T>,
}

struct ChannelTape<T: Scalar> {
    shaped: Vec<C<T>>,
    peak: crate::tx::PeakInfo<T>,
    dpd: crate::tx::PredistortTape<T>,
    drive: Vec<C<T>>,
    symbols: Vec<C<T>>,
}

impl<T: Scalar> Link<T> {
    /// Builds the link and calibrates the noise against the reference chain.
    pub fn new(cfg: LinkConfig) -> Result<Self> {
        cfg.validate()?;
        let p_ref = reference_power(&cfg)?;
        let awgn = Awgn::calibrated(p_ref, cfg.os as f64, cfg.channel.snr_db)?;
        Self::with_noise(cfg, awgn)
    }

    pub fn with_noise(cfg: LinkConfig, awgn: Awgn) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.frame_symbols() * cfg.os;
        let offsets = channel_offsets(cfg.channel.n_channels, cfg.channel.eta);
        let phasors = offsets
            .iter()
            .map(|&o| (o != 0.0).then(|| shift_phasors(n, o, cfg.os as f64)))
            .collect();
        Ok(Self {
            adc: Adc::new(n, cfg.os)?,
            mf: MatchedFilter::new(cfg.rolloff, cfg.span)?,
            phasors,
            offsets,
            awgn,
            cfg,
        })
    }

    /// Same calibrated noise, different frame geometry.
    pub fn reframed(&self, payload: usize, guard: usize) -> Result<Self> {
        Self::with_noise(self.cfg.with_frame(payload, guard), self.awgn)
    }

    pub fn n_samples(&self) -> usize {
        self.cfg.frame_symbols() * self.cfg.os
    }

    pub fn centre(&self) -> usize {
        self.cfg.channel.centre()
    }

    fn payload_range(&self) -> std::ops::Range<usize> {
        self.cfg.guard..self.cfg.guard + self.cfg.payload
    }

    pub fn draw_batch<R: Rng + ?Sized>(&self, msg_rng: &mut R, noise_rng: &mut R) -> Batch<T> {
        let n = self.cfg.frame_symbols();
        let messages = (0..self.cfg.channel.n_channels)
            .map(|_| (0..n).map(|_| msg_rng.random_range(0..self.cfg.m)).collect())
            .collect();
        let mut noise = vec![czero(); self.n_samples()];
        self.awgn.add(&mut noise, noise_rng);
        Batch { messages, noise }
    }

    /// Frame `index` of the stream identified by `seed`.
    pub fn frame(&self, seed: u64, index: u64) -> Batch<T> {
        self.draw_batch(&mut frame_rng(seed, TAG_MESSAGES, index), &mut frame_rng(seed, TAG_NOISE, index))
    }

    fn check_tx(&self, tx: &Transmitter<T>) -> Result<()> {
        if tx.raw_table.len() != self.cfg.m {
            return Err(invalid("constellation size does not match the link"));
        }
        if tx.taps.len() % 2 == 0 {
            return Err(invalid("pulse shaper needs an odd number of taps"));
        }
        Ok(())
    }

    /// Modulator output of one channel.
    pub fn transmit(&self, tx: &Transmitter<T>, table: &[C<T>], messages: &[usize]) -> Result<Vec<C<T>>> {
        let x = lookup(messages, table)?;
        let s = shape_samples(&x, &tx.taps, tx.taps.len() / 2, self.cfg.os);
        let peak = find_peak(&s);
        if !(peak.scale > T::zero()) {
            return Err(invalid("transmitted frame is all zero"));
        }
        let inv = T::one() / peak.scale;
        let normed: Vec<C<T>> = s.iter().map(|v| v * inv).collect();
        let v_p = T::lit(self.cfg.channel.v_p);
        Ok(tx
            .dpd
            .apply(&normed)
            .iter()
            .map(|v| Complex::new(iqm_rail(v.re * v_p), iqm_rail(v.im * v_p)))
            .collect())
    }

    fn combine(&self, outs: &[Vec<C<T>>], noise: &[C<T>]) -> Vec<C<T>> {
        let mut r = noise.to_vec();
        if r.is_empty() {
            r = vec![czero(); self.n_samples()];
        }
        for (o, ph) in outs.iter().zip(&self.phasors) {
            match ph {
                None => r.iter_mut().zip(o).for_each(|(a, b)| *a += b),
                Some(ph) => r.iter_mut().zip(o).zip(ph).for_each(|((a, b), p)| *a += b * p),
            }
        }
        r
    }

    /// Received centre-channel samples at the symbol instants (payload only).
    pub fn receive(&self, outs: &[Vec<C<T>>], noise: &[C<T>]) -> Result<Vec<C<T>>> {
        let r = self.combine(outs, noise);
        let z = self.mf.apply(&self.adc.apply(&r));
        Ok(sample_indices(z.len(), 0, self.cfg.guard)?.map(|i| z[i]).collect())
    }

    /// Runs one frame and returns the centre channel's payload samples.
    pub fn run_frame(&self, tx: &Transmitter<T>, batch: &Batch<T>) -> Result<Vec<C<T>>> {
        self.check_tx(tx)?;
        let (table, _) = unit_power(&tx.raw_table);
        let outs = batch
            .messages
            .iter()
            .map(|m| self.transmit(tx, &table, m))
            .collect::<Result<Vec<_>>>()?;
        self.receive(&outs, &batch.noise)
    }

    /// Decisions on the centre channel's payload.
    pub fn detect(&self, rx: &Receiver<T>, y: &[C<T>], sent: &[usize]) -> Result<Vec<usize>> {
        match rx {
            Receiver::MinDistance { table } => {
                let (t, _) = unit_power(table);
                let g = ls_gain(y, &lookup(sent, &t)?);
                if !(g.norm() > T::zero()) {
                    return Err(invalid("received signal carries no energy"));
                }
                let scaled: Vec<C<T>> = y.iter().map(|v| v / g).collect();
                Ok(demap_mindist(&scaled, &t))
            }
            Receiver::Network(p) => {
                let net = demapper_net(self.cfg.m);
                if p.len() != net.param_count() {
                    return Err(invalid("demapper parameter length mismatch"));
                }
                let (yn, _) = unit_power(y);
                Ok(decide(&net.infer(p, symbols_matrix(&yn))))
            }
        }
    }

    pub fn frame_errors(&self, tx: &Transmitter<T>, rx: &Receiver<T>, batch: &Batch<T>) -> Result<SerCount> {
        let y = self.run_frame(tx, batch)?;
        let sent = &batch.messages[self.centre()][self.payload_range()];
        crate::rx::count_errors(sent, &self.detect(rx, &y, sent)?)
    }

    /// Frames are drawn from `policy.seed` in order until the error and
    /// symbol targets are met or the frame cap is reached.
    pub fn evaluate(&self, tx: &Transmitter<T>, rx: &Receiver<T>, policy: &EvalPolicy) -> Result<SerCount> {
        let mut acc = SerCount::default();
        for f in 0..policy.max_frames.max(1) {
            acc = acc.merge(self.frame_errors(tx, rx, &self.frame(policy.seed, f))?);
            if acc.errors >= policy.min_errors && acc.symbols >= policy.min_symbols {
                break;
            }
        }
        Ok(acc)
    }

    fn forward(&self, params: &ParamVector<T>, batch: &Batch<T>) -> Result<Forward<T>> {
        let m = self.cfg.m;
        let os = self.cfg.os;
        let raw = as_complex(params.segment(SegmentKind::Mapper));
        let taps = as_complex(params.segment(SegmentKind::Shaper));
        let th3 = params.segment(SegmentKind::Predistorter);
        let th4 = params.segment(SegmentKind::Demapper);
        if raw.len() != m || taps.len() % 2 == 0 || th3.len() != predistorter_net().param_count() {
            return Err(invalid("parameter vector does not fit the link"));
        }
        let delay = taps.len() / 2;
        let (table, rms) = unit_power(&raw);
        let v_p = T::lit(self.cfg.channel.v_p);

        let mut tapes = Vec::with_capacity(batch.messages.len());
        let mut outs = Vec::with_capacity(batch.messages.len());
        for msgs in &batch.messages {
            let symbols = lookup(msgs, &table)?;
            let shaped = shape_samples(&symbols, &taps, delay, os);
            let peak = find_peak(&shaped);
            if !(peak.scale > T::zero()) {
                return Err(invalid("transmitted frame is all zero"));
            }
            let inv = T::one() / peak.scale;
            let normed: Vec<C<T>> = shaped.iter().map(|v| v * inv).collect();
            let (pd, dpd) = predistort_nn_taped(&normed, th3);
            let drive: Vec<C<T>> = pd.iter().map(|v| v * v_p).collect();
            outs.push(iqm_samples(&drive));
            tapes.push(ChannelTape { shaped, peak, dpd, drive, symbols });
        }
        let r = self.combine(&outs, &batch.noise);
        let y2 = self.adc.apply(&r);
        let z = self.mf.apply(&y2);
        let idx: Vec<usize> = sample_indices(z.len(), 0, self.cfg.guard)?.collect();
        let y: Vec<C<T>> = idx.iter().map(|&i| z[i]).collect();
        let (yn, y_rms) = unit_power(&y);
        let tape4 = demapper_net(m).forward(th4, symbols_matrix(&yn));
        let labels = &batch.messages[self.centre()][self.payload_range()];
        let (loss, dlogits) = softmax_ce(tape4.output(), labels)?;
        Ok(Forward { raw, taps, rms, tapes, z_len: z.len(), idx, y, y_rms, tape4, loss, dlogits })
    }

    /// Loss together with the branch taken at every non-smooth point of the
    /// chain: the peak sample of each channel, the pre-distorter clip and the
    /// demapper ReLUs. Two parameter vectors with equal patterns lie on the
    /// same smooth piece of the loss only if the pattern is constant between
    /// them, so equal patterns at both ends of a short segment are a
    /// necessary check, not a proof.
    pub fn loss_and_pattern(&self, params: &ParamVector<T>, batch: &Batch<T>) -> Result<(T, Vec<bool>)> {
        let f = self.forward(params, batch)?;
        let mut pattern = Vec::new();
        for t in &f.tapes {
            pattern.extend((0..usize::BITS).map(|b| (t.peak.index >> b) & 1 == 1));
            pattern.push(t.peak.quadrature);
            pattern.extend(t.dpd.mlp.output().iter().map(|y| y.abs() < T::one()));
        }
        let acts = &f.tape4.acts;
        for a in &acts[1..acts.len() - 1] {
            pattern.extend(a.iter().map(|&v| v > T::zero()));
        }
        Ok((f.loss, pattern))
    }

    /// Cross-entropy of the trainable transceiver on one batch. When `grad`
    /// is given, the full gradient is written to it. With `tx_grad` false only
    /// the demapper part of the gradient is computed.
    pub fn loss_grad(
        &self,
        params: &ParamVector<T>,
        batch: &Batch<T>,
        grad: Option<&mut [T]>,
        tx_grad: bool,
    ) -> Result<T> {
        let m = self.cfg.m;
        let os = self.cfg.os;
        let th3 = params.segment(SegmentKind::Predistorter);
        let th4 = params.segment(SegmentKind::Demapper);
        let v_p = T::lit(self.cfg.channel.v_p);
        let Forward { raw, taps, rms, tapes, z_len, idx, y, y_rms, tape4, loss, dlogits } = self.forward(params, batch)?;
        let delay = taps.len() / 2;
        let net = demapper_net(m);

        let Some(grad) = grad else { return Ok(loss) };
        if grad.len() != params.len() {
            return Err(invalid("gradient buffer length mismatch"));
        }
        grad.iter_mut().for_each(|g| *g = T::zero());
        let seg = |k: SegmentKind| params.layout.get(k).expect("segment").clone();
        let (s1, s2, s3, s4) = (
            seg(SegmentKind::Mapper),
            seg(SegmentKind::Shaper),
            seg(SegmentKind::Predistorter),
            seg(SegmentKind::Demapper),
        );
        let dyn_mat: Array2<T> = net.backward(th4, &tape4, dlogits, &mut grad[s4.offset..s4.offset + s4.len]);
        if !tx_grad {
            return Ok(loss);
        }
        let dyn_c: Vec<C<T>> = dyn_mat.rows().into_iter().map(|r| Complex::new(r[0], r[1])).collect();
        let dy = unit_power_vjp(&y, y_rms, &dyn_c);
        let mut dz = vec![czero(); z_len];
        for (&i, g) in idx.iter().zip(&dy) {
            dz[i] = *g;
        }
        let dr = self.adc.vjp(&self.mf.vjp(&dz));

        let mut table_bar = vec![czero(); m];
        let mut taps_bar = vec![czero(); taps.len()];
        for (c, (tape, msgs)) in tapes.iter().zip(&batch.messages).enumerate() {
            let d_out = demultiplex_vjp(&dr, self.offsets[c], os as f64);
            let d_pd: Vec<C<T>> = tape
                .drive
                .iter()
                .zip(&d_out)
                .map(|(e, g)| {
                    Complex::new(g.re * iqm_rail_slope(e.re) * v_p, g.im * iqm_rail_slope(e.im) * v_p)
                })
                .collect();
            let d_norm = predistort_nn_vjp(th3, &tape.dpd, &d_pd, &mut grad[s3.offset..s3.offset + s3.len]);
            let d_shaped = peak_normalize_vjp(&tape.shaped, tape.peak, &d_norm);
            let (d_sym, d_taps) = pulse_shape_vjp(&tape.symbols, &taps, delay, os, &d_shaped);
            taps_bar.iter_mut().zip(&d_taps).for_each(|(a, b)| *a += b);
            for (&msg, g) in msgs.iter().zip(&d_sym) {
                table_bar[msg] += g;
            }
        }
        write_interleaved(&mut grad[s2.offset..s2.offset + s2.len], &taps_bar);
        let d_raw = unit_power_vjp(&raw, rms, &table_bar);
        write_interleaved(&mut grad[s1.offset..s1.offset + s1.len], &d_raw);
        Ok(loss)
    }
}

/// Outcome of [`check_loss_gradient`] on one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentCheck {
    pub kind: SegmentKind,
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates drawn but skipped because a ±step move changed a branch
    /// of the chain (see [`Link::loss_and_pattern`]), where a central
    /// difference does not estimate the derivative.
    pub skipped: usize,
}

/// Finite-difference check of [`Link::loss_grad`] on `coords` random
/// coordinates of every segment, drawn without replacement until `coords` of
/// them lie on a smooth piece at both `θ ± step`. The relative error is
/// floored at `1e-6·max(1, |L|)`: below that a central difference of a loss
/// of size `|L|` is dominated by rounding (about `|L|·ε/step`).
pub fn check_loss_gradient<T: Scalar>(
    link: &Link<T>,
    params: &ParamVector<T>,
    batch: &Batch<T>,
    coords: usize,
    step: f64,
    seed: u64,
) -> Result<Vec<SegmentCheck>> {
    let mut grad = vec![T::zero(); params.len()];
    link.loss_grad(params, batch, Some(&mut grad), true)?;
    let (loss, base) = link.loss_and_pattern(params, batch)?;
    let floor = 1e-6 * loss.to_f64_lossy().abs().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = params.clone();
    let mut out = Vec::new();
    for seg in params.layout.segments() {
        let order = rand::seq::index::sample(&mut rng, seg.len, seg.len).into_vec();
        let mut c = SegmentCheck { kind: seg.kind, max_rel_error: 0.0, checked: 0, skipped: 0 };
        for k in order {
            if c.checked == coords {
                break;
            }
            let i = seg.offset + k;
            let v = params.values[i];
            p.values[i] = v + T::lit(step);
            let (lp, pp) = link.loss_and_pattern(&p, batch)?;
            p.values[i] = v - T::lit(step);
            let (lm, pm) = link.loss_and_pattern(&p, batch)?;
            p.values[i] = v;
            if pp != base || pm != base {
                c.skipped += 1;
                continue;
            }
            let fd = (lp.to_f64_lossy() - lm.to_f64_lossy()) / (2.0 * step);
            c.max_rel_error = c.max_rel_error.max(crate::gradcore::relative_error(grad[i].to_f64_lossy(), fd, floor));
            c.checked += 1;
        }
        out.push(c);
    }
    Ok(out)
}

/// Mean per-sample power of a single channel's modulator output with the
/// reference table, RRC shaping and the linearising arcsin pre-distortion at
/// unit drive, averaged over frames of the link's own geometry.
pub fn reference_power(cfg: &LinkConfig) -> Result<f64> {
    let cal = LinkConfig {
        channel: ChannelConfig { n_channels: 1, eta: 0.0, v_p: 1.0, snr_db: None, seed: 0 },
        ..cfg.clone()
    };
    let link = Link::<f64>::with_noise(cal.clone(), Awgn::NOISELESS)?;
    let table = cal.reference_table()?;
    let tx = Transmitter::baseline(&cal, &table, Some(1.0))?;
    let mut acc = 0.0;
    let mut count = 0usize;
    let frames = CALIBRATION_SYMBOLS.div_ceil(cal.frame_symbols()) as u64;
    for f in 0..frames {
        let b = link.frame(CALIBRATION_SEED, f);
        let out = link.transmit(&tx, table.points(), &b.messages[0])?;
        acc += out.iter().map(|v| v.norm_sqr()).sum::<f64>();
        count += out.len();
    }
    Ok(acc / count as f64)
}
