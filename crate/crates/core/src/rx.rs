//! Receiver: brick-wall ADC to two samples per symbol, matched RRC filter,
//! symbol sampling, and the two demappers (softmax network and minimum
//! distance), plus SER bookkeeping.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{Activation, MlpShape};
use crate::scalar::{czero, Scalar, C};
use crate::signal::{convolve_same, convolve_same_adjoint, rrc_taps, Brickwall, ComplexSignal, FirFilter};

/// Hidden widths of the demapper network.
pub const DEMAPPER_HIDDEN: [usize; 2] = [64, 64];

pub fn demapper_net(m: usize) -> MlpShape {
    MlpShape::new(vec![2, DEMAPPER_HIDDEN[0], DEMAPPER_HIDDEN[1], m], Activation::Relu)
}

/// Brick-wall at `2 f_b` followed by decimation to two samples per symbol.
/// The output is scaled by `sqrt(factor)` so band-limited energy is kept.
#[derive(Debug, Clone)]
pub struct Adc<T: Scalar> {
    factor: usize,
    gain: T,
    filter: Brickwall<T>,
}

impl<T: Scalar> Adc<T> {
    /// ADC for frames of `len` samples at `os` samples per symbol.
    pub fn new(len: usize, os: usize) -> Result<Self> {
        if os < 2 || os % 2 != 0 {
            return Err(invalid(format!("ADC input rate {os} f_b is not a multiple of 2 f_b")));
        }
        if len % (os / 2) != 0 {
            return Err(invalid("frame length must be a whole number of output samples"));
        }
        let factor = os / 2;
        Ok(Self {
            factor,
            gain: T::from_usize_lossy(factor).sqrt(),
            filter: Brickwall::new(len, os as f64, 2.0)?,
        })
    }

    pub fn apply(&self, x: &[C<T>]) -> Vec<C<T>> {
        if self.factor == 1 {
            return self.filter.apply(x);
        }
        self.filter
            .apply(x)
            .iter()
            .step_by(self.factor)
            .map(|v| v * self.gain)
            .collect()
    }

    pub fn vjp(&self, upstream: &[C<T>]) -> Vec<C<T>> {
        let mut up = vec![czero(); upstream.len() * self.factor];
        for (k, g) in upstream.iter().enumerate() {
            up[k * self.factor] = g * self.gain;
        }
        self.filter.apply(&up)
    }
}

pub fn adc<T: Scalar>(x: &ComplexSignal<T>) -> Result<ComplexSignal<T>> {
    if *x.rate.denom() != 1 {
        return Err(invalid("ADC needs an integer input rate"));
    }
    let os = *x.rate.numer() as usize;
    let a = Adc::new(x.len(), os)?;
    ComplexSignal::at_rate(a.apply(&x.samples), 2)
}

/// Matched RRC filter at two samples per symbol.
#[derive(Debug, Clone)]
pub struct MatchedFilter<T> {
    pub filter: FirFilter<T>,
}

impl<T: Scalar> MatchedFilter<T> {
    pub fn new(rolloff: f64, span: usize) -> Result<Self> {
        Ok(Self { filter: rrc_taps(rolloff, span, 2)? })
    }

    pub fn apply(&self, y: &[C<T>]) -> Vec<C<T>> {
        convolve_same(y, &self.filter.taps, self.filter.delay)
    }

    pub fn vjp(&self, upstream: &[C<T>]) -> Vec<C<T>> {
        convolve_same_adjoint(upstream, &self.filter.taps, self.filter.delay)
    }
}

pub fn matched_filter<T: Scalar>(y: &ComplexSignal<T>, rolloff: f64, span: usize) -> Result<ComplexSignal<T>> {
    if y.rate_f64() != 2.0 {
        return Err(invalid("matched filter expects two samples per symbol"));
    }
    ComplexSignal::new(MatchedFilter::new(rolloff, span)?.apply(&y.samples), y.rate)
}

/// Picks `z[2k + total_delay]` for every payload symbol `k`, dropping `guard`
/// symbols at each end of the frame.
pub fn symbol_sample<T: Scalar>(z: &ComplexSignal<T>, total_delay: usize, guard: usize) -> Result<Vec<C<T>>> {
    if z.rate_f64() != 2.0 {
        return Err(invalid("symbol sampling expects two samples per symbol"));
    }
    let idx = sample_indices(z.len(), total_delay, guard)?;
    Ok(idx.map(|i| z.samples[i]).collect())
}

pub(crate) fn sample_indices(len: usize, total_delay: usize, guard: usize) -> Result<std::iter::StepBy<std::ops::Range<usize>>> {
    let n_sym = len / 2;
    if 2 * guard > n_sym {
        return Err(invalid("guard symbols exceed the frame"));
    }
    let (first, last) = (guard, n_sym - guard);
    if first < last && 2 * (last - 1) + total_delay >= len {
        return Err(invalid(format!("sampling delay {total_delay} falls outside the frame")));
    }
    Ok((2 * first + total_delay..2 * last + total_delay).step_by(2))
}

/// Complex gain `g` minimising `Σ|y − g·x|²`.
pub fn ls_gain<T: Scalar>(y: &[C<T>], x: &[C<T>]) -> C<T> {
    let num: C<T> = y.iter().zip(x).fold(czero(), |a, (yy, xx)| a + yy * xx.conj());
    let den: T = x.iter().map(|v| v.norm_sqr()).sum();
    num / den
}

pub fn demap_mindist<T: Scalar>(y: &[C<T>], table: &[C<T>]) -> Vec<usize> {
    y.iter()
        .map(|v| {
            let mut best = (0, T::infinity());
            for (m, p) in table.iter().enumerate() {
                let d = (v - p).norm_sqr();
                if d < best.1 {
                    best = (m, d);
                }
            }
            best.0
        })
        .collect()
}

pub(crate) fn symbols_matrix<T: Scalar>(y: &[C<T>]) -> Array2<T> {
    let flat: Vec<T> = y.iter().flat_map(|v| [v.re, v.im]).collect();
    Array2::from_shape_vec((y.len(), 2), flat).expect("symbol matrix shape")
}

/// Row-wise softmax in place.
pub fn softmax_rows<T: Scalar>(logits: &mut Array2<T>) {
    for row in logits.axis_iter_mut(Axis(0)) {
        softmax_row(row);
    }
}

/// In-place softmax of one row. Probabilities below `ε²` of the largest are
/// set to zero, which keeps subnormals out of later products. Returns the
/// row maximum and the log of the normaliser.
pub(crate) fn softmax_row<T: Scalar>(mut row: ndarray::ArrayViewMut1<'_, T>) -> (T, T) {
    let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let floor = (T::epsilon() * T::epsilon()).ln();
    row.mapv_inplace(|v| if v - mx < floor { T::zero() } else { (v - mx).exp() });
    let s = row.sum();
    row.mapv_inplace(|v| v / s);
    (mx, s.ln())
}

/// Demapper logits for each symbol.
pub fn demap_logits<T: Scalar>(y: &[C<T>], params: &[T], m: usize) -> Array2<T> {
    demapper_net(m).infer(params, symbols_matrix(y))
}

/// Probability vectors `q_k`, one row per symbol.
pub fn demap_nn<T: Scalar>(y: &[C<T>], params: &[T], m: usize) -> Result<Array2<T>> {
    if params.len() != demapper_net(m).param_count() {
        return Err(invalid("demapper parameter length mismatch"));
    }
    let mut q = demap_logits(y, params, m);
    softmax_rows(&mut q);
    Ok(q)
}

/// Row-wise arg-max, ties to the smallest index.
pub fn decide<T: Scalar>(scores: &Array2<T>) -> Vec<usize> {
    scores
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Symbol error counts; merging is exact, so accumulation order never
/// changes the result.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerCount {
    pub errors: u64,
    pub symbols: u64,
}

impl SerCount {
    pub fn merge(self, other: SerCount) -> SerCount {
        SerCount { errors: self.errors + other.errors, symbols: self.symbols + other.symbols }
    }

    pub fn ser(&self) -> f64 {
        if self.symbols == 0 {
            0.0
        } else {
            self.errors as f64 / self.symbols as f64
        }
    }

    /// Normal-approximation 95% half-width.
    pub fn ci95(&self) -> f64 {
        if self.symbols == 0 {
            return 0.0;
        }
        let p = self.ser();
        1.96 * (p * (1.0 - p) / self.symbols as f64).sqrt()
    }
}

pub fn count_errors(sent: &[usize], decided: &[usize]) -> Result<SerCount> {
    if sent.len() != decided.len() {
        return Err(invalid("transmitted and decided sequences differ in length"));
    }
    let errors = sent.iter().zip(decided).filter(|(a, b)| a != b).count() as u64;
    Ok(SerCount { errors, symbols: sent.len() as u64 })
}

/// `(ser, n_errors, ci95)`.
pub fn ser(sent: &[usize], decided: &[usize]) -> Result<(f64, u64, f64)> {
    if sent.is_empty() {
        return Err(invalid("SER of an empty sequence"));
    }
    let c = count_errors(sent, decided)?;
    Ok((c.ser(), c.errors, c.ci95()))
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Exact SER of square `M`-QAM with minimum-distance detection on AWGN at
/// the given symbol SNR `E_s/N_0`.
pub fn qam_ser_awgn(m: usize, snr_db: f64) -> Result<f64> {
    let l = (m as f64).sqrt().round();
    if (l * l) as usize != m || m < 4 {
        return Err(invalid(format!("{m}-QAM is not a square constellation")));
    }
    let es_n0 = 10f64.powf(snr_db / 10.0);
    let p = 2.0 * (1.0 - 1.0 / l) * q_function((3.0 * es_n0 / (m as f64 - 1.0)).sqrt());
    Ok(1.0 - (1.0 - p) * (1.0 - p))
}
