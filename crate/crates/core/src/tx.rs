//! Transmitter blocks: symbol mapping, FIR pulse shaping, per-frame peak
//! normalisation and pre-distortion (learned, arcsin-with-clipping, or none).
//!
//! Each differentiable block comes with its vector-Jacobian product. Complex
//! cotangents follow the convention `ḡ = ∂L/∂Re + j·∂L/∂Im`.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{Activation, MlpShape, MlpTape};
use crate::scalar::{czero, Scalar, C};
use crate::signal::{ComplexSignal, FirFilter};

/// Hidden widths of the per-rail pre-distorter network.
pub const PREDISTORTER_HIDDEN: [usize; 2] = [16, 16];

pub fn predistorter_net() -> MlpShape {
    MlpShape::new(vec![1, PREDISTORTER_HIDDEN[0], PREDISTORTER_HIDDEN[1], 1], Activation::Tanh)
}

/// `M` complex points with unit average power under a uniform prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationTable<T> {
    points: Vec<C<T>>,
}

impl<T: Scalar> ConstellationTable<T> {
    /// Scales `raw` to unit average power.
    pub fn normalized(raw: &[C<T>]) -> Result<Self> {
        if raw.len() < 2 {
            return Err(invalid("a constellation needs at least two points"));
        }
        let (points, rms) = unit_power(raw);
        if !(rms > T::zero()) || !rms.is_finite() {
            return Err(invalid("constellation has zero or non-finite power"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[C<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn average_power(&self) -> T {
        self.points.iter().map(|p| p.norm_sqr()).sum::<T>() / T::from_usize_lossy(self.len())
    }

    /// Smallest pairwise distance.
    pub fn min_distance(&self) -> T {
        let mut d = T::infinity();
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                d = d.min((a - b).norm());
            }
        }
        d
    }

    /// Square `M`-QAM (M a power of four) with Gray-free natural labelling.
    pub fn qam(m: usize) -> Result<Self> {
        let side = (m as f64).sqrt().round() as usize;
        if side * side != m || side < 2 {
            return Err(invalid(format!("{m}-QAM is not a square constellation")));
        }
        let raw: Vec<C<T>> = (0..m)
            .map(|k| {
                let (i, q) = (k % side, k / side);
                Complex::new(
                    T::lit(2.0 * i as f64 - (side - 1) as f64),
                    T::lit(2.0 * q as f64 - (side - 1) as f64),
                )
            })
            .collect();
        Self::normalized(&raw)
    }

    /// Golden-angle (sunflower) disc packing, a deterministic starting point
    /// for geometric shaping of any size.
    pub fn sunflower(m: usize) -> Result<Self> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let raw: Vec<C<T>> = (0..m)
            .map(|k| {
                let r = ((k as f64 + 0.5) / m as f64).sqrt();
                let a = golden * k as f64;
                Complex::new(T::lit(r * a.cos()), T::lit(r * a.sin()))
            })
            .collect();
        Self::normalized(&raw)
    }

    pub fn cast<U: Scalar>(&self) -> ConstellationTable<U> {
        ConstellationTable {
            points: self
                .points
                .iter()
                .map(|p| Complex::new(U::lit(p.re.to_f64_lossy()), U::lit(p.im.to_f64_lossy())))
                .collect(),
        }
    }

    /// Writes `message_index,i,q` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for (k, p) in self.points.iter().enumerate() {
            w.serialize(ConstellationRow {
                message_index: k,
                i: p.re.to_f64_lossy(),
                q: p.im.to_f64_lossy(),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `message_index,i,q` rows; indices must be `0..M` in any order.
    /// The points are re-normalised to unit average power.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows: Vec<ConstellationRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        rows.sort_by_key(|r| r.message_index);
        if rows.iter().enumerate().any(|(k, r)| r.message_index != k) {
            return Err(invalid("constellation CSV indices must cover 0..M exactly once"));
        }
        let raw: Vec<C<T>> = rows.iter().map(|r| Complex::new(T::lit(r.i), T::lit(r.q))).collect();
        Self::normalized(&raw)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ConstellationRow {
    message_index: usize,
    i: f64,
    q: f64,
}

/// Scales `v` to unit mean power; returns the scaled vector and the RMS used.
pub fn unit_power<T: Scalar>(v: &[C<T>]) -> (Vec<C<T>>, T) {
    let n = T::from_usize_lossy(v.len().max(1));
    let rms = (v.iter().map(|p| p.norm_sqr()).sum::<T>() / n).sqrt();
    (v.iter().map(|p| p / rms).collect(), rms)
}

/// VJP of [`unit_power`] given the input, its RMS and the output cotangent.
pub fn unit_power_vjp<T: Scalar>(v: &[C<T>], rms: T, upstream: &[C<T>]) -> Vec<C<T>> {
    let n = T::from_usize_lossy(v.len().max(1));
    let dot: T = v.iter().zip(upstream).map(|(a, g)| a.re * g.re + a.im * g.im).sum();
    let k = dot / (n * rms * rms * rms);
    v.iter().zip(upstream).map(|(a, g)| g / rms - a * k).collect()
}

/// Looks up normalised constellation points for 0-based messages.
pub fn map_messages<T: Scalar>(messages: &[usize], raw_points: &[C<T>]) -> Result<Vec<C<T>>> {
    let table = ConstellationTable::normalized(raw_points)?;
    lookup(messages, table.points())
}

pub(crate) fn lookup<T: Scalar>(messages: &[usize], points: &[C<T>]) -> Result<Vec<C<T>>> {
    messages
        .iter()
        .map(|&m| {
            points
                .get(m)
                .copied()
                .ok_or_else(|| invalid(format!("message {m} outside 0..{}", points.len())))
        })
        .collect()
}

/// VJP of [`map_messages`] with respect to the raw (unnormalised) points.
pub fn map_messages_vjp<T: Scalar>(messages: &[usize], raw_points: &[C<T>], upstream: &[C<T>]) -> Vec<C<T>> {
    let (_, rms) = unit_power(raw_points);
    let mut table_bar = vec![czero(); raw_points.len()];
    for (&m, g) in messages.iter().zip(upstream) {
        table_bar[m] += g;
    }
    unit_power_vjp(raw_points, rms, &table_bar)
}

/// `convolve(upsample(x, os), shaper)`, evaluated without materialising the
/// zero-stuffed sequence.
pub fn pulse_shape<T: Scalar>(x: &[C<T>], shaper: &FirFilter<T>, os: usize) -> Result<ComplexSignal<T>> {
    if os < 1 {
        return Err(invalid("oversampling must be at least 1"));
    }
    ComplexSignal::at_rate(shape_samples(x, &shaper.taps, shaper.delay, os), os as u32)
}

pub(crate) fn shape_samples<T: Scalar>(x: &[C<T>], taps: &[C<T>], delay: usize, os: usize) -> Vec<C<T>> {
    let n = x.len() * os;
    let mut out = vec![czero(); n];
    for (i, &sym) in x.iter().enumerate() {
        // taps[t] lands on sample i·os + t − delay
        let base = (i * os) as isize - delay as isize;
        let t_lo = (-base).max(0) as usize;
        let t_hi = ((n as isize - base).min(taps.len() as isize)).max(0) as usize;
        let start = (base + t_lo as isize) as usize;
        for (o, &h) in out[start..start + t_hi.saturating_sub(t_lo)].iter_mut().zip(&taps[t_lo..t_hi]) {
            *o += h * sym;
        }
    }
    out
}

/// VJP of the pulse shaper: `(symbol cotangent, tap cotangent)`.
pub fn pulse_shape_vjp<T: Scalar>(
    x: &[C<T>],
    taps: &[C<T>],
    delay: usize,
    os: usize,
    upstream: &[C<T>],
) -> (Vec<C<T>>, Vec<C<T>>) {
    let n = upstream.len();
    let mut x_bar = vec![czero(); x.len()];
    let mut h_bar = vec![czero(); taps.len()];
    for (i, &sym) in x.iter().enumerate() {
        let base = (i * os) as isize - delay as isize;
        let t_lo = (-base).max(0) as usize;
        let t_hi = ((n as isize - base).min(taps.len() as isize)).max(0) as usize;
        if t_hi <= t_lo {
            continue;
        }
        let start = (base + t_lo as isize) as usize;
        let g = &upstream[start..start + (t_hi - t_lo)];
        let mut acc = czero();
        let sym_c = sym.conj();
        for ((hb, &h), &gk) in h_bar[t_lo..t_hi].iter_mut().zip(&taps[t_lo..t_hi]).zip(g) {
            acc += h.conj() * gk;
            *hb += sym_c * gk;
        }
        x_bar[i] = acc;
    }
    (x_bar, h_bar)
}

/// Location and value of the largest rail magnitude in a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakInfo<T> {
    pub scale: T,
    pub index: usize,
    /// `false` for the in-phase rail, `true` for quadrature.
    pub quadrature: bool,
}

pub(crate) fn find_peak<T: Scalar>(s: &[C<T>]) -> PeakInfo<T> {
    let mut best = PeakInfo { scale: T::zero(), index: 0, quadrature: false };
    for (k, v) in s.iter().enumerate() {
        if v.re.abs() > best.scale {
            best = PeakInfo { scale: v.re.abs(), index: k, quadrature: false };
        }
        if v.im.abs() > best.scale {
            best = PeakInfo { scale: v.im.abs(), index: k, quadrature: true };
        }
    }
    best
}

/// Divides the frame by its largest rail magnitude, so every rail lies in
/// `[-1, 1]` and at least one reaches ±1.
pub fn peak_normalize<T: Scalar>(s: &ComplexSignal<T>) -> Result<(ComplexSignal<T>, T)> {
    let peak = find_peak(&s.samples);
    if !(peak.scale > T::zero()) {
        return Err(invalid("cannot peak-normalise an all-zero frame"));
    }
    let out = s.samples.iter().map(|v| v / peak.scale).collect();
    Ok((ComplexSignal::new(out, s.rate)?, peak.scale))
}

/// Exact VJP of peak normalisation, including the dependence of the scale on
/// the arg-max rail sample.
pub fn peak_normalize_vjp<T: Scalar>(s: &[C<T>], peak: PeakInfo<T>, upstream: &[C<T>]) -> Vec<C<T>> {
    let p = peak.scale;
    let dot: T = s.iter().zip(upstream).map(|(a, g)| a.re * g.re + a.im * g.im).sum();
    let mut out: Vec<C<T>> = upstream.iter().map(|g| g / p).collect();
    let v = s[peak.index];
    let rail = if peak.quadrature { v.im } else { v.re };
    let d = dot / (p * p) * rail.signum();
    if peak.quadrature {
        out[peak.index].im -= d;
    } else {
        out[peak.index].re -= d;
    }
    out
}

/// Recorded state of the learned pre-distorter for the backward pass.
#[derive(Debug, Clone)]
pub struct PredistortTape<T> {
    pub(crate) mlp: MlpTape<T>,
}

fn rails_matrix<T: Scalar>(s: &[C<T>]) -> Array2<T> {
    let flat: Vec<T> = s.iter().flat_map(|v| [v.re, v.im]).collect();
    Array2::from_shape_vec((flat.len(), 1), flat).expect("rail matrix shape")
}

fn clamp_unit<T: Scalar>(v: T) -> T {
    v.max(-T::one()).min(T::one())
}

fn rails_to_complex<T: Scalar>(out: &Array2<T>) -> Vec<C<T>> {
    out.as_slice()
        .expect("contiguous network output")
        .chunks_exact(2)
        .map(|p| Complex::new(clamp_unit(p[0]), clamp_unit(p[1])))
        .collect()
}

/// Applies the shared scalar network to each rail independently and hard-clips
/// the result to `[-1, 1]`.
pub fn predistort_nn<T: Scalar>(s: &ComplexSignal<T>, params: &[T]) -> Result<ComplexSignal<T>> {
    let net = predistorter_net();
    if params.len() != net.param_count() {
        return Err(invalid("pre-distorter parameter length mismatch"));
    }
    let out = net.infer(params, rails_matrix(&s.samples));
    ComplexSignal::new(rails_to_complex(&out), s.rate)
}

pub(crate) fn predistort_nn_taped<T: Scalar>(s: &[C<T>], params: &[T]) -> (Vec<C<T>>, PredistortTape<T>) {
    let mlp = predistorter_net().forward(params, rails_matrix(s));
    (rails_to_complex(mlp.output()), PredistortTape { mlp })
}

/// VJP of [`predistort_nn`]: `(input cotangent, parameter cotangent)`
/// (parameter cotangent accumulated into `param_bar`).
pub(crate) fn predistort_nn_vjp<T: Scalar>(
    params: &[T],
    tape: &PredistortTape<T>,
    upstream: &[C<T>],
    param_bar: &mut [T],
) -> Vec<C<T>> {
    let raw = tape.mlp.output().as_slice().expect("contiguous");
    let d: Vec<T> = upstream
        .iter()
        .flat_map(|g| [g.re, g.im])
        .zip(raw)
        .map(|(g, &y)| if y.abs() < T::one() { g } else { T::zero() })
        .collect();
    let d = Array2::from_shape_vec((d.len(), 1), d).expect("shape");
    let dx = predistorter_net().backward(params, &tape.mlp, d, param_bar);
    dx.as_slice()
        .expect("contiguous")
        .chunks_exact(2)
        .map(|p| Complex::new(p[0], p[1]))
        .collect()
}

/// `sign(u)·min(v_clip, (2/π)·asin|u|)` on one rail.
#[inline]
pub fn arcsin_rail<T: Scalar>(u: T, v_clip: T) -> T {
    let v = (T::lit(2.0) / T::PI() * u.abs().asin()).min(v_clip);
    v * u.signum()
}

/// Arcsin pre-distortion with magnitude clipping, applied per rail.
pub fn arcsin_dpd<T: Scalar>(s: &ComplexSignal<T>, v_clip: T) -> Result<ComplexSignal<T>> {
    if !(v_clip > T::zero()) {
        return Err(invalid("clipping level must be positive"));
    }
    if s.samples.iter().any(|v| v.re.abs() > T::one() || v.im.abs() > T::one()) {
        return Err(invalid("arcsin pre-distortion requires rails within [-1, 1]"));
    }
    let out = s
        .samples
        .iter()
        .map(|v| Complex::new(arcsin_rail(v.re, v_clip), arcsin_rail(v.im, v_clip)))
        .collect();
    ComplexSignal::new(out, s.rate)
}

/// Pre-distortion stage of a transmitter.
#[derive(Debug, Clone, PartialEq)]
pub enum Predistortion<T> {
    /// Drive the modulator with the normalised signal directly.
    Bypass,
    Arcsin { v_clip: f64 },
    /// Learned network parameters (layout of [`predistorter_net`]).
    Network(Vec<T>),
}

impl<T: Scalar> Predistortion<T> {
    pub fn apply(&self, s: &[C<T>]) -> Vec<C<T>> {
        match self {
            Predistortion::Bypass => s.to_vec(),
            Predistortion::Arcsin { v_clip } => {
                let vc = T::lit(*v_clip);
                s.iter()
                    .map(|v| Complex::new(arcsin_rail(v.re, vc), arcsin_rail(v.im, vc)))
                    .collect()
            }
            Predistortion::Network(p) => {
                rails_to_complex(&predistorter_net().infer(p, rails_matrix(s)))
            }
        }
    }
}
