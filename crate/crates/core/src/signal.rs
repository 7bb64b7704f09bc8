//! Complex baseband DSP primitives: resampling, "same"-length FIR convolution,
//! root-raised-cosine design, brick-wall filtering, frequency shifting and
//! filter spectra.
//!
//! Rates are expressed in samples per symbol period, i.e. in units of the
//! symbol rate `f_b`. Frequencies are likewise in units of `f_b`.

use std::sync::Arc;

use num_complex::Complex;
use num_rational::Ratio;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};
use crate::scalar::{czero, Scalar, C};

/// A finite sequence of complex samples taken at `rate` samples per symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal<T> {
    pub samples: Vec<C<T>>,
    pub rate: Ratio<u32>,
}

impl<T: Scalar> ComplexSignal<T> {
    pub fn new(samples: Vec<C<T>>, rate: Ratio<u32>) -> Result<Self> {
        if *rate.numer() == 0 {
            return Err(invalid("signal rate must be positive"));
        }
        Ok(Self { samples, rate })
    }

    /// Signal at an integer number of samples per symbol.
    pub fn at_rate(samples: Vec<C<T>>, samples_per_symbol: u32) -> Result<Self> {
        Self::new(samples, Ratio::from_integer(samples_per_symbol))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rate_f64(&self) -> f64 {
        *self.rate.numer() as f64 / *self.rate.denom() as f64
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> T {
        energy(&self.samples)
    }
}

pub fn energy<T: Scalar>(x: &[C<T>]) -> T {
    x.iter().map(|s| s.norm_sqr()).sum()
}

/// FIR filter applied by "same"-length convolution centred on `delay`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter<T> {
    pub taps: Vec<C<T>>,
    /// Index of the nominal centre tap.
    pub delay: usize,
    /// Samples per symbol the filter was designed for.
    pub sps: u32,
}

impl<T: Scalar> FirFilter<T> {
    /// Odd-length filter centred on its middle tap.
    pub fn new(taps: Vec<C<T>>, sps: u32) -> Result<Self> {
        if taps.is_empty() || taps.len() % 2 == 0 {
            return Err(invalid(format!(
                "filter length must be odd, got {}",
                taps.len()
            )));
        }
        if sps == 0 {
            return Err(invalid("samples per symbol must be positive"));
        }
        let delay = taps.len() / 2;
        Ok(Self { taps, delay, sps })
    }

    pub fn from_real(taps: &[T], sps: u32) -> Result<Self> {
        Self::new(taps.iter().map(|&t| Complex::new(t, T::zero())).collect(), sps)
    }

    pub fn impulse(sps: u32) -> Self {
        Self {
            taps: vec![Complex::new(T::one(), T::zero())],
            delay: 0,
            sps,
        }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn energy(&self) -> T {
        energy(&self.taps)
    }

    pub fn cast<U: Scalar>(&self) -> FirFilter<U> {
        FirFilter {
            taps: self
                .taps
                .iter()
                .map(|t| Complex::new(U::lit(t.re.to_f64_lossy()), U::lit(t.im.to_f64_lossy())))
                .collect(),
            delay: self.delay,
            sps: self.sps,
        }
    }
}

/// Zero-insertion upsampling.
pub fn upsample<T: Scalar>(x: &ComplexSignal<T>, factor: usize) -> Result<ComplexSignal<T>> {
    if factor == 0 {
        return Err(invalid("upsampling factor must be at least 1"));
    }
    let mut out = vec![czero(); x.len() * factor];
    for (k, &s) in x.samples.iter().enumerate() {
        out[k * factor] = s;
    }
    ComplexSignal::new(out, x.rate * Ratio::from_integer(factor as u32))
}

/// Keeps every `factor`-th sample starting at `offset`.
pub fn downsample<T: Scalar>(
    x: &ComplexSignal<T>,
    factor: usize,
    offset: usize,
) -> Result<ComplexSignal<T>> {
    if factor == 0 {
        return Err(invalid("downsampling factor must be at least 1"));
    }
    if offset >= factor {
        return Err(invalid(format!(
            "offset {offset} out of range for factor {factor}"
        )));
    }
    let out = x.samples.iter().skip(offset).step_by(factor).copied().collect();
    ComplexSignal::new(out, x.rate / Ratio::from_integer(factor as u32))
}

/// `out[k] = Σ_n taps[n]·x[k + delay − n]`, zero outside the support of `x`.
pub fn convolve<T: Scalar>(x: &ComplexSignal<T>, f: &FirFilter<T>) -> Result<ComplexSignal<T>> {
    if x.is_empty() || f.is_empty() {
        return Err(invalid("convolution operands must be non-empty"));
    }
    ComplexSignal::new(convolve_same(&x.samples, &f.taps, f.delay), x.rate)
}

pub(crate) fn convolve_same<T: Scalar>(x: &[C<T>], taps: &[C<T>], delay: usize) -> Vec<C<T>> {
    let n = x.len();
    let l = taps.len() as isize;
    let d = delay as isize;
    let mut out = vec![czero(); n];
    for (k, o) in out.iter_mut().enumerate() {
        // taps index t satisfies 0 <= k + d - t < n
        let k = k as isize;
        let t_lo = (k + d - n as isize + 1).max(0);
        let t_hi = (k + d).min(l - 1);
        let mut acc = czero();
        for t in t_lo..=t_hi {
            acc += taps[t as usize] * x[(k + d - t) as usize];
        }
        *o = acc;
    }
    out
}

/// Vector-Jacobian product of [`convolve_same`] with respect to its input.
pub(crate) fn convolve_same_adjoint<T: Scalar>(
    upstream: &[C<T>],
    taps: &[C<T>],
    delay: usize,
) -> Vec<C<T>> {
    let n = upstream.len();
    let l = taps.len() as isize;
    let d = delay as isize;
    let mut out = vec![czero(); n];
    for (j, o) in out.iter_mut().enumerate() {
        // k = j - d + t, 0 <= k < n
        let j = j as isize;
        let t_lo = (d - j).max(0);
        let t_hi = (n as isize - 1 - j + d).min(l - 1);
        let mut acc = czero();
        for t in t_lo..=t_hi {
            acc += taps[t as usize].conj() * upstream[(j - d + t) as usize];
        }
        *o = acc;
    }
    out
}

/// Root-raised-cosine impulse response, unit energy, `span·sps + 1` taps.
pub fn rrc_taps<T: Scalar>(rolloff: f64, span_symbols: usize, sps: usize) -> Result<FirFilter<T>> {
    if !(0.0..=1.0).contains(&rolloff) {
        return Err(invalid(format!("roll-off {rolloff} outside [0, 1]")));
    }
    if span_symbols == 0 || sps == 0 || (span_symbols * sps) % 2 != 0 {
        return Err(invalid("span·samples_per_symbol must be positive and even"));
    }
    let n = span_symbols * sps + 1;
    let half = (n / 2) as f64;
    let taps: Vec<f64> = (0..n)
        .map(|i| rrc_sample((i as f64 - half) / sps as f64, rolloff))
        .collect();
    let norm = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    let taps: Vec<T> = taps.iter().map(|t| T::lit(t / norm)).collect();
    FirFilter::from_real(&taps, sps as u32)
}

/// Continuous RRC pulse at time `t` (in symbol periods), unnormalised.
fn rrc_sample(t: f64, beta: f64) -> f64 {
    use std::f64::consts::{FRAC_1_SQRT_2, PI};
    if t.abs() < 1e-12 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    if beta > 0.0 && (1.0 - (4.0 * beta * t).powi(2)).abs() < 1e-10 {
        let a = PI / (4.0 * beta);
        return beta * FRAC_1_SQRT_2 * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

/// Ideal low-pass filter realised by zeroing DFT bins with |f| > bandwidth/2.
///
/// Frames are zero-padded to the next power of two before transforming and
/// truncated back afterwards. The map is an orthogonal projection composed with
/// padding/truncation, hence self-adjoint.
#[derive(Clone)]
pub struct Brickwall<T: Scalar> {
    len: usize,
    fft_len: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    keep: Vec<bool>,
}

impl<T: Scalar> std::fmt::Debug for Brickwall<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Brickwall")
            .field("len", &self.len)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

impl<T: Scalar> Brickwall<T> {
    pub fn new(len: usize, rate: f64, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(invalid("brick-wall bandwidth must be positive"));
        }
        if bandwidth > rate + 1e-12 {
            return Err(invalid(format!(
                "brick-wall bandwidth {bandwidth} exceeds sample rate {rate}"
            )));
        }
        let fft_len = len.max(1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let edge = bandwidth / 2.0 * (1.0 + 1e-12);
        let keep = (0..fft_len)
            .map(|k| {
                let k = if k < fft_len / 2 { k as f64 } else { k as f64 - fft_len as f64 };
                (k / fft_len as f64 * rate).abs() <= edge
            })
            .collect();
        Ok(Self { len, fft_len, forward, inverse, keep })
    }

    pub fn apply(&self, x: &[C<T>]) -> Vec<C<T>> {
        assert_eq!(x.len(), self.len, "brick-wall frame length mismatch");
        let mut buf = vec![czero(); self.fft_len];
        buf[..x.len()].copy_from_slice(x);
        self.forward.process(&mut buf);
        let scale = T::one() / T::from_usize_lossy(self.fft_len);
        for (b, &keep) in buf.iter_mut().zip(&self.keep) {
            *b = if keep { *b * scale } else { czero() };
        }
        self.inverse.process(&mut buf);
        buf.truncate(self.len);
        buf
    }
}

/// Brick-wall low-pass of total two-sided `bandwidth` (units of `f_b`).
pub fn brickwall<T: Scalar>(x: &ComplexSignal<T>, bandwidth: f64) -> Result<ComplexSignal<T>> {
    let bw = Brickwall::new(x.len(), x.rate_f64(), bandwidth)?;
    ComplexSignal::new(bw.apply(&x.samples), x.rate)
}

/// Energy computed in the frequency domain, `Σ|X_k|²/N` over a power-of-two DFT.
pub fn spectral_energy<T: Scalar>(x: &[C<T>]) -> T {
    let n = x.len().max(1).next_power_of_two();
    let mut buf = vec![czero(); n];
    buf[..x.len()].copy_from_slice(x);
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    energy(&buf) / T::from_usize_lossy(n)
}

/// Unit-modulus phasors `exp(j·2π·df·k/rate)` for `k = 0..len`.
pub(crate) fn shift_phasors<T: Scalar>(len: usize, df: f64, rate: f64) -> Vec<C<T>> {
    let step = df / rate;
    (0..len)
        .map(|k| {
            let cycles = (step * k as f64).fract();
            let (s, c) = (2.0 * std::f64::consts::PI * cycles).sin_cos();
            Complex::new(T::lit(c), T::lit(s))
        })
        .collect()
}

/// Multiplies by `exp(j·2π·df·k/rate)`.
pub fn freq_shift<T: Scalar>(x: &ComplexSignal<T>, df: f64) -> ComplexSignal<T> {
    let ph = shift_phasors::<T>(x.len(), df, x.rate_f64());
    ComplexSignal {
        samples: x.samples.iter().zip(&ph).map(|(s, p)| s * p).collect(),
        rate: x.rate,
    }
}

/// Peak-normalised magnitude response in dB over `n_fft` bins, ordered from
/// `-sps/2` to `+sps/2` (frequencies in units of `f_b`).
pub fn power_spectrum<T: Scalar>(f: &FirFilter<T>, n_fft: usize) -> Result<Vec<(f64, f64)>> {
    if n_fft < f.len() || n_fft == 0 {
        return Err(invalid(format!(
            "n_fft {n_fft} shorter than filter length {}",
            f.len()
        )));
    }
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); n_fft];
    for (b, t) in buf.iter_mut().zip(&f.taps) {
        *b = Complex::new(t.re.to_f64_lossy(), t.im.to_f64_lossy());
    }
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    let mags: Vec<f64> = buf.iter().map(|c| c.norm()).collect();
    let peak = mags.iter().cloned().fold(0.0, f64::max);
    let sps = f.sps as f64;
    let half = n_fft / 2;
    Ok((0..n_fft)
        .map(|i| {
            // fftshift: start at the most negative frequency
            let k = (i + n_fft - half) % n_fft;
            let signed = if k >= n_fft - half { k as f64 - n_fft as f64 } else { k as f64 };
            let freq = signed / n_fft as f64 * sps;
            let db = if peak > 0.0 { 20.0 * (mags[k] / peak).log10() } else { f64::NEG_INFINITY };
            (freq, db)
        })
        .collect())
}

/// Magnitude response in dB (peak-normalised) at the bin of
/// [`power_spectrum`] nearest to `freq`.
pub fn response_db_at<T: Scalar>(f: &FirFilter<T>, freq: f64, n_fft: usize) -> Result<f64> {
    let spec = power_spectrum(f, n_fft)?;
    let (_, db) = spec
        .iter()
        .min_by(|a, b| (a.0 - freq).abs().total_cmp(&(b.0 - freq).abs()))
        .copied()
        .ok_or_else(|| invalid("empty spectrum"))?;
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C<f64> {
        Complex::new(re, im)
    }

    fn sig(v: Vec<C<f64>>, rate: u32) -> ComplexSignal<f64> {
        ComplexSignal::at_rate(v, rate).unwrap()
    }

    fn random_signal(n: usize, seed: u64) -> Vec<C<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn upsample_inserts_zeros() {
        let x = sig(vec![c(1.0, 2.0)], 1);
        let y = upsample(&x, 4).unwrap();
        assert_eq!(y.samples, vec![c(1.0, 2.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(y.rate, Ratio::from_integer(4));

        let x = sig(vec![c(1.0, 0.0), c(-1.0, 0.0)], 1);
        let y = upsample(&x, 2).unwrap();
        assert_eq!(y.samples, vec![c(1.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(upsample(&x, 1).unwrap(), x);
        assert!(upsample(&x, 0).is_err());
    }

    #[test]
    fn downsample_picks_phase() {
        let x = sig(vec![c(1.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0)], 2);
        assert_eq!(downsample(&x, 2, 0).unwrap().samples, vec![c(1.0, 0.0), c(-1.0, 0.0)]);
        assert_eq!(downsample(&x, 2, 1).unwrap().samples, vec![c(0.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(downsample(&x, 2, 0).unwrap().rate, Ratio::from_integer(1));
        assert!(downsample(&x, 2, 2).is_err());
    }

    #[test]
    fn convolve_examples() {
        let x = sig(vec![c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0)], 1);
        let id = FirFilter::from_real(&[1.0], 1).unwrap();
        assert_eq!(convolve(&x, &id).unwrap().samples, x.samples);

        let x = sig(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], 1);
        let f = FirFilter::from_real(&[0.5, 1.0, 0.5], 1).unwrap();
        assert_eq!(f.delay, 1);
        let y = convolve(&x, &f).unwrap();
        assert_eq!(y.samples, vec![c(1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn convolve_preserves_energy_of_white_input() {
        let x = sig(random_signal(1 << 16, 3), 1);
        let f = rrc_taps::<f64>(0.3, 16, 1).unwrap();
        let y = convolve(&x, &f).unwrap();
        let ratio = y.energy() / x.energy();
        assert!((ratio - 1.0).abs() < 0.02, "energy ratio {ratio}");
    }

    #[test]
    fn convolve_adjoint_matches_inner_product() {
        let x = random_signal(37, 1);
        let g = random_signal(37, 2);
        let taps = random_signal(9, 3);
        let y = convolve_same(&x, &taps, 4);
        let xt = convolve_same_adjoint(&g, &taps, 4);
        let lhs: C<f64> = y.iter().zip(&g).map(|(a, b)| a * b.conj()).sum();
        let rhs: C<f64> = x.iter().zip(&xt).map(|(a, b)| a * b.conj()).sum();
        assert_abs_diff_eq!(lhs.re, rhs.re, epsilon = 1e-12);
        assert_abs_diff_eq!(lhs.im, rhs.im, epsilon = 1e-12);
    }

    #[test]
    fn rrc_is_unit_energy_and_symmetric() {
        for &beta in &[0.0, 0.01, 0.1, 0.25, 0.5, 1.0] {
            let f = rrc_taps::<f64>(beta, 32, 8).unwrap();
            assert_eq!(f.len(), 257);
            assert_abs_diff_eq!(f.energy(), 1.0, epsilon = 1e-12);
            for i in 0..f.len() {
                assert_abs_diff_eq!(f.taps[i].re, f.taps[f.len() - 1 - i].re, epsilon = 1e-12);
                assert_eq!(f.taps[i].im, 0.0);
            }
        }
        assert!(rrc_taps::<f64>(1.5, 32, 8).is_err());
        assert!(rrc_taps::<f64>(-0.1, 32, 8).is_err());
    }

    #[test]
    fn rrc_singular_points_are_continuous() {
        // beta = 0.25 at 8 sps puts t = ±1/(4β) = ±1 symbol exactly on a tap
        let beta = 0.25;
        let at = rrc_sample(1.0, beta);
        let near = rrc_sample(1.0 + 1e-6, beta);
        assert!((at - near).abs() < 1e-5, "{at} vs {near}");
        let at0 = rrc_sample(0.0, beta);
        assert!((at0 - rrc_sample(1e-7, beta)).abs() < 1e-6);
    }

    #[test]
    fn rrc_zero_rolloff_is_sinc() {
        let f = rrc_taps::<f64>(0.0, 16, 4).unwrap();
        let centre = f.taps[f.delay].re;
        for (i, t) in f.taps.iter().enumerate() {
            let x = (i as f64 - f.delay as f64) / 4.0;
            let sinc = if x == 0.0 { 1.0 } else { (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x) };
            assert_abs_diff_eq!(t.re / centre, sinc, epsilon = 1e-12);
        }
    }

    fn symbol_spaced_isi(f: &FirFilter<f64>) -> f64 {
        let sps = f.sps as usize;
        let n = f.len();
        let mut rc = vec![0.0; 2 * n - 1];
        for i in 0..n {
            for j in 0..n {
                rc[i + j] += f.taps[i].re * f.taps[j].re;
            }
        }
        let centre = n - 1;
        assert_abs_diff_eq!(rc[centre], 1.0, epsilon = 1e-12);
        (1..=centre / sps)
            .map(|k| rc[centre + k * sps].abs().max(rc[centre - k * sps].abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn rrc_cascade_is_nyquist() {
        // Rectangular truncation leaves residual ISI that shrinks with span.
        let isi64 = symbol_spaced_isi(&rrc_taps(0.1, 64, 8).unwrap());
        assert!(isi64 < 1e-3, "span 64: {isi64}");
        let isi32 = symbol_spaced_isi(&rrc_taps(0.1, 32, 8).unwrap());
        assert!(isi32 < 4e-3, "span 32: {isi32}");
        let isi_narrow = symbol_spaced_isi(&rrc_taps(0.01, 64, 8).unwrap());
        assert!(isi_narrow < 2e-2, "beta 0.01: {isi_narrow}");
    }

    #[test]
    fn brickwall_passes_inband_and_blocks_outband() {
        let n = 1024;
        let rate = 4.0;
        let tone = |f: f64| -> Vec<C<f64>> {
            (0..n)
                .map(|k| {
                    let ph = 2.0 * std::f64::consts::PI * f * k as f64 / rate;
                    c(ph.cos(), ph.sin())
                })
                .collect()
        };
        let check = |x: &[C<f64>], bw: f64, expect_zero: bool| {
            let s = sig(x.to_vec(), 4);
            let y = brickwall(&s, bw).unwrap();
            let err: f64 = if expect_zero {
                y.samples.iter().map(|v| v.norm()).fold(0.0, f64::max)
            } else {
                y.samples.iter().zip(x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
            };
            assert!(err < 1e-9, "bw {bw}: err {err}");
        };
        check(&tone(0.3125), 2.0, false);
        check(&tone(0.75), 2.0, false);
        check(&tone(1.5), 1.0, true);
        check(&tone(1.5), 4.0, false);
        check(&vec![c(0.7, -0.2); n], 0.01, false);
        assert!(brickwall(&sig(tone(0.3), 4), 0.0).is_err());
    }

    #[test]
    fn brickwall_is_self_adjoint() {
        let x = random_signal(300, 4);
        let g = random_signal(300, 5);
        let bw = Brickwall::<f64>::new(300, 8.0, 2.0).unwrap();
        let lhs: C<f64> = bw.apply(&x).iter().zip(&g).map(|(a, b)| a * b.conj()).sum();
        let rhs: C<f64> = x.iter().zip(&bw.apply(&g)).map(|(a, b)| a * b.conj()).sum();
        assert_abs_diff_eq!(lhs.re, rhs.re, epsilon = 1e-10);
        assert_abs_diff_eq!(lhs.im, rhs.im, epsilon = 1e-10);
    }

    #[test]
    fn freq_shift_rotates() {
        let x = sig(random_signal(257, 6), 8);
        assert_eq!(freq_shift(&x, 0.0).samples, x.samples);
        let y = freq_shift(&x, 1.05);
        for (a, b) in x.samples.iter().zip(&y.samples) {
            assert_abs_diff_eq!(a.norm(), b.norm(), epsilon = 1e-12);
        }
        let back = freq_shift(&y, -1.05);
        for (a, b) in x.samples.iter().zip(&back.samples) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn power_spectrum_of_impulse_is_flat() {
        let f = FirFilter::<f64>::impulse(8);
        let spec = power_spectrum(&f, 64).unwrap();
        assert_eq!(spec.len(), 64);
        for (_, db) in &spec {
            assert_abs_diff_eq!(*db, 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(spec[0].0, -4.0, epsilon = 1e-12);
        assert!(power_spectrum(&rrc_taps::<f64>(0.1, 32, 8).unwrap(), 128).is_err());
    }

    #[test]
    fn rrc_spectrum_is_band_limited() {
        let f = rrc_taps::<f64>(0.1, 32, 8).unwrap();
        let spec = power_spectrum(&f, 8192).unwrap();
        let peak = spec.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(peak, 0.0);
        // the truncated pulse leaks a little across the nominal band edge
        let edge = response_db_at(&f, 0.55, 8192).unwrap();
        assert!(edge < -25.0, "RRC at 0.55 f_b: {edge} dB");
        let beyond = response_db_at(&f, 0.6, 8192).unwrap();
        assert!(beyond < -40.0, "RRC at 0.6 f_b: {beyond} dB");
        let inband = response_db_at(&f, 0.2, 8192).unwrap();
        assert!(inband > -0.5);
    }

    #[test]
    fn parseval_holds() {
        for &n in &[1usize, 17, 256, 1000] {
            let x = random_signal(n, n as u64);
            let t = energy(&x);
            let f = spectral_energy(&x);
            assert!((t - f).abs() <= 1e-9 * t, "n {n}: {t} vs {f}");
        }
    }
}
