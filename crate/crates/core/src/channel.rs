//! Back-to-back hardware model: linear PA, sinusoidal IQ modulator,
//! superchannel multiplexing and constant-power AWGN.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{Scalar, C};
use crate::signal::{shift_phasors, ComplexSignal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// Odd number of channels; index `(n-1)/2` is the centre channel.
    pub n_channels: usize,
    /// Guard band in units of the symbol rate.
    pub eta: f64,
    /// PA drive peak.
    pub v_p: f64,
    /// Per-channel SNR in dB; `None` disables noise.
    pub snr_db: Option<f64>,
    /// Mixed into the training batch stream.
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { n_channels: 3, eta: 0.05, v_p: 1.0, snr_db: Some(18.0), seed: 1 }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.n_channels % 2 == 0 {
            return Err(invalid("n_channels must be odd and positive"));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(invalid("eta must be a finite non-negative number"));
        }
        if !(self.v_p > 0.0) || !self.v_p.is_finite() {
            return Err(invalid("v_p must be positive"));
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return Err(invalid("snr_db must be finite (omit it for a noiseless link)"));
            }
        }
        Ok(())
    }

    pub fn centre(&self) -> usize {
        self.n_channels / 2
    }

    /// Carrier offsets in units of `f_b`, ordered by channel index.
    pub fn offsets(&self) -> Vec<f64> {
        channel_offsets(self.n_channels, self.eta)
    }
}

pub fn channel_offsets(n: usize, eta: f64) -> Vec<f64> {
    let c = (n / 2) as f64;
    (0..n).map(|i| (i as f64 - c) * (1.0 + eta)).collect()
}

/// Ideal DAC plus linear amplifier: `E_in = v_p·s̃`.
pub fn pa<T: Scalar>(s: &ComplexSignal<T>, v_p: T) -> ComplexSignal<T> {
    ComplexSignal { samples: s.samples.iter().map(|v| v * v_p).collect(), rate: s.rate }
}

#[inline]
pub fn iqm_rail<T: Scalar>(e: T) -> T {
    (e * T::FRAC_PI_2()).sin()
}

#[inline]
pub fn iqm_rail_slope<T: Scalar>(e: T) -> T {
    T::FRAC_PI_2() * (e * T::FRAC_PI_2()).cos()
}

/// `E_out = sin(π/2·E_in)` on each rail.
pub fn iqm<T: Scalar>(e: &ComplexSignal<T>) -> ComplexSignal<T> {
    ComplexSignal { samples: iqm_samples(&e.samples), rate: e.rate }
}

pub(crate) fn iqm_samples<T: Scalar>(e: &[C<T>]) -> Vec<C<T>> {
    e.iter().map(|v| Complex::new(iqm_rail(v.re), iqm_rail(v.im))).collect()
}

/// VJP of [`iqm`] at drive `e`.
pub fn iqm_vjp<T: Scalar>(e: &[C<T>], upstream: &[C<T>]) -> Vec<C<T>> {
    e.iter()
        .zip(upstream)
        .map(|(v, g)| Complex::new(g.re * iqm_rail_slope(v.re), g.im * iqm_rail_slope(v.im)))
        .collect()
}

/// Places channel `i` at `(i − centre)·(1+η)·f_b` and sums.
pub fn multiplex<T: Scalar>(channels: &[ComplexSignal<T>], eta: f64) -> Result<ComplexSignal<T>> {
    let first = channels.first().ok_or_else(|| invalid("no channels to multiplex"))?;
    if channels.iter().any(|c| c.rate != first.rate || c.len() != first.len()) {
        return Err(invalid("channels must share rate and length"));
    }
    check_spectral_fit(channels.len(), eta, first.rate_f64())?;
    let views: Vec<&[C<T>]> = channels.iter().map(|c| c.samples.as_slice()).collect();
    let offsets = channel_offsets(channels.len(), eta);
    ComplexSignal::new(multiplex_samples(&views, &offsets, first.rate_f64()), first.rate)
}

pub(crate) fn check_spectral_fit(n: usize, eta: f64, rate: f64) -> Result<()> {
    let need = n as f64 * (1.0 + eta) + 1.0;
    if n > 1 && rate < need {
        return Err(invalid(format!(
            "{n} channels at guard band {eta} need a sample rate of at least {need} f_b, got {rate}"
        )));
    }
    Ok(())
}

pub(crate) fn multiplex_samples<T: Scalar>(channels: &[&[C<T>]], offsets: &[f64], rate: f64) -> Vec<C<T>> {
    let n = channels[0].len();
    let mut out = vec![Complex::new(T::zero(), T::zero()); n];
    for (ch, &df) in channels.iter().zip(offsets) {
        if df == 0.0 {
            for (o, v) in out.iter_mut().zip(ch.iter()) {
                *o += v;
            }
        } else {
            let ph: Vec<C<T>> = shift_phasors(n, df, rate);
            for ((o, v), p) in out.iter_mut().zip(ch.iter()).zip(&ph) {
                *o += v * p;
            }
        }
    }
    out
}

/// Cotangent of one multiplexed channel given the cotangent of the sum.
pub(crate) fn demultiplex_vjp<T: Scalar>(upstream: &[C<T>], offset: f64, rate: f64) -> Vec<C<T>> {
    if offset == 0.0 {
        return upstream.to_vec();
    }
    let ph: Vec<C<T>> = shift_phasors(upstream.len(), offset, rate);
    upstream.iter().zip(&ph).map(|(g, p)| g * p.conj()).collect()
}

/// Constant-power additive white Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Awgn {
    /// Per-sample complex variance; zero disables the noise.
    pub sigma2: f64,
}

impl Awgn {
    pub const NOISELESS: Awgn = Awgn { sigma2: 0.0 };

    /// `σ² = P_ref·rate·10^(−snr/10)`: the reference power `p_ref` (mean
    /// per-sample power at `rate` samples per symbol) over noise in a band of
    /// one symbol rate.
    pub fn calibrated(p_ref: f64, rate: f64, snr_db: Option<f64>) -> Result<Self> {
        if !(p_ref > 0.0) || !(rate > 0.0) {
            return Err(invalid("noise calibration needs positive reference power and rate"));
        }
        Ok(match snr_db {
            None => Self::NOISELESS,
            Some(s) => Self { sigma2: p_ref * rate * 10f64.powf(-s / 10.0) },
        })
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma2 == 0.0
    }

    /// Adds noise in place, drawing from `rng`.
    pub fn add<T: Scalar, R: Rng + ?Sized>(&self, x: &mut [C<T>], rng: &mut R) {
        if self.is_noiseless() {
            return;
        }
        let s = T::lit((self.sigma2 / 2.0).sqrt());
        for v in x.iter_mut() {
            v.re += s * T::standard_normal(rng);
            v.im += s * T::standard_normal(rng);
        }
    }

    pub fn apply<T: Scalar, R: Rng + ?Sized>(&self, x: &ComplexSignal<T>, rng: &mut R) -> ComplexSignal<T> {
        let mut out = x.clone();
        self.add(&mut out.samples, rng);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{brickwall, energy, freq_shift};
    use crate::tx::{arcsin_dpd, arcsin_rail};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C<f64> {
        Complex::new(re, im)
    }

    fn noise_sig(n: usize, rate: u32, seed: u64) -> ComplexSignal<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = ComplexSignal::at_rate(vec![c(0.0, 0.0); n], rate).unwrap();
        Awgn { sigma2: 1.0 }.apply(&x, &mut rng)
    }

    #[test]
    fn pa_examples() {
        let s = ComplexSignal::at_rate(vec![c(1.0, -0.5), c(0.2, 0.0)], 8).unwrap();
        assert_eq!(pa(&s, 1.0), s);
        let d = pa(&s, 0.9);
        assert_abs_diff_eq!(d.samples[0].re, 0.9, epsilon = 1e-15);
        let twice = pa(&pa(&s, 2.0), 0.9);
        let other = pa(&s, 1.8);
        for (a, b) in twice.samples.iter().zip(&other.samples) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn iqm_examples() {
        assert_eq!(iqm_rail(1.0f64), 1.0);
        assert_eq!(iqm_rail(0.0f64), 0.0);
        assert_abs_diff_eq!(iqm_rail(2.0f64 / 3.0), 3f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(iqm_rail_slope(0.0f64), std::f64::consts::FRAC_PI_2, epsilon = 1e-15);
        let x = 0.3f64;
        let h = 1e-6;
        let fd = (iqm_rail(x + h) - iqm_rail(x - h)) / (2.0 * h);
        assert_abs_diff_eq!(fd, std::f64::consts::FRAC_PI_2 * (0.15 * std::f64::consts::PI).cos(), epsilon = 1e-6);
        assert_abs_diff_eq!(iqm_rail_slope(x), fd, epsilon = 1e-6);
    }

    #[test]
    fn arcsin_then_modulator_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<C<f64>> = (0..10_000)
            .map(|_| c(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)))
            .collect();
        let sig = ComplexSignal::at_rate(s.clone(), 8).unwrap();
        let out = iqm(&pa(&arcsin_dpd(&sig, 1.0).unwrap(), 1.0));
        let err = out.samples.iter().zip(&s).map(|(a, b)| (a.re - b.re).abs().max((a.im - b.im).abs())).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn multiplex_single_channel_is_identity() {
        let x = noise_sig(64, 8, 1);
        assert_eq!(multiplex(&[x.clone()], 0.3).unwrap(), x);
    }

    #[test]
    fn multiplex_rejects_spectral_overflow() {
        let x = noise_sig(64, 4, 1);
        assert!(multiplex(&[x.clone(), x.clone(), x.clone()], 0.05).is_err());
        let y = noise_sig(64, 8, 2);
        assert!(multiplex(&[y.clone(), y.clone(), y], 0.05).is_ok());
    }

    fn band_limited(n: usize, rate: u32, seed: u64) -> ComplexSignal<f64> {
        brickwall(&noise_sig(n, rate, seed), 1.0).unwrap()
    }

    #[test]
    fn well_separated_channels_are_orthogonal() {
        // two of three slots loaded, centre empty so the pair sits at ±(1+η)
        let n = 4096;
        let a = band_limited(n, 16, 4);
        let b = band_limited(n, 16, 5);
        let z = ComplexSignal::at_rate(vec![c(0.0, 0.0); n], 16).unwrap();
        let sum = multiplex(&[a.clone(), z, b.clone()], 2.0).unwrap();
        let expect = energy(&a.samples) + energy(&b.samples);
        assert!((energy(&sum.samples) - expect).abs() / expect < 1e-6);
    }

    #[test]
    fn centre_channel_is_recoverable_with_wide_guard() {
        let n = 4096;
        let eta = 1.0;
        let chans: Vec<_> = (0..3).map(|k| band_limited(n, 16, 10 + k)).collect();
        let sum = multiplex(&chans, eta).unwrap();
        let back = brickwall(&sum, 1.0 + eta).unwrap();
        let err: f64 = back.samples.iter().zip(&chans[1].samples).map(|(a, b)| (a - b).norm_sqr()).sum();
        let db = 10.0 * (err / energy(&chans[1].samples)).log10();
        assert!(db < -40.0, "{db}");
    }

    #[test]
    fn multiplex_vjp_is_adjoint() {
        let n = 256;
        let chans: Vec<_> = (0..3).map(|k| noise_sig(n, 8, 20 + k)).collect();
        let g = noise_sig(n, 8, 30);
        let sum = multiplex(&chans, 0.1).unwrap();
        let lhs: f64 = sum.samples.iter().zip(&g.samples).map(|(a, b)| (a.conj() * b).re).sum();
        let offs = channel_offsets(3, 0.1);
        let rhs: f64 = chans
            .iter()
            .zip(&offs)
            .map(|(ch, &o)| {
                let gb = demultiplex_vjp(&g.samples, o, 8.0);
                ch.samples.iter().zip(&gb).map(|(a, b)| (a.conj() * b).re).sum::<f64>()
            })
            .sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
        // shift convention agrees with freq_shift
        let direct = freq_shift(&chans[2], 1.1);
        let z = ComplexSignal::at_rate(vec![c(0.0, 0.0); n], 8).unwrap();
        let only_top = multiplex(&[z.clone(), z, chans[2].clone()], 0.1).unwrap();
        for (a, b) in direct.samples.iter().zip(&only_top.samples) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn noise_variance_and_determinism() {
        let awgn = Awgn::calibrated(0.125, 8.0, Some(18.0)).unwrap();
        let zero = ComplexSignal::<f64>::at_rate(vec![c(0.0, 0.0); 1_000_000], 8).unwrap();
        let a = awgn.apply(&zero, &mut ChaCha8Rng::seed_from_u64(9));
        let var = energy(&a.samples) / a.len() as f64;
        assert!((var / awgn.sigma2 - 1.0).abs() < 0.01, "{var}");
        let b = awgn.apply(&zero, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);

        let louder = Awgn::calibrated(0.125, 8.0, Some(18.0 + 10.0 * 2f64.log10())).unwrap();
        let l = louder.apply(&zero, &mut ChaCha8Rng::seed_from_u64(10));
        let ratio = var / (energy(&l.samples) / l.len() as f64);
        assert!((ratio - 2.0).abs() / 2.0 < 0.01, "{ratio}");

        let quiet = Awgn::calibrated(0.125, 8.0, None).unwrap();
        assert_eq!(quiet.apply(&zero, &mut ChaCha8Rng::seed_from_u64(1)), zero);
    }

    proptest! {
        #[test]
        fn iqm_is_odd_and_bounded(e in -5.0f64..5.0) {
            prop_assert_eq!(iqm_rail(-e), -iqm_rail(e));
            prop_assert!(iqm_rail(e).abs() <= 1.0);
        }

        #[test]
        fn arcsin_inverts_modulator(u in -1.0f64..=1.0, v_clip in 1.0f64..2.0) {
            prop_assert!((iqm_rail(arcsin_rail(u, v_clip)) - u).abs() < 1e-9);
        }

        #[test]
        fn multiplex_is_linear(a in -2.0f64..2.0, seed in 0u64..1000) {
            let x: Vec<_> = (0..3).map(|k| noise_sig(128, 8, seed * 7 + k)).collect();
            let y: Vec<_> = (0..3).map(|k| noise_sig(128, 8, seed * 7 + 3 + k)).collect();
            let comb: Vec<_> = x.iter().zip(&y).map(|(p, q)| {
                ComplexSignal::at_rate(p.samples.iter().zip(&q.samples).map(|(u, v)| u * a + v).collect(), 8).unwrap()
            }).collect();
            let lhs = multiplex(&comb, 0.2).unwrap();
            let mx = multiplex(&x, 0.2).unwrap();
            let my = multiplex(&y, 0.2).unwrap();
            for ((l, p), q) in lhs.samples.iter().zip(&mx.samples).zip(&my.samples) {
                prop_assert!((l - (p * a + q)).norm() < 1e-12);
            }
        }
    }
}
