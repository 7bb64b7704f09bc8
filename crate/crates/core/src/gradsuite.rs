//! Finite-difference checks of every differentiable block of the link and of
//! the composed training loss.

use ndarray::Array2;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{demultiplex_vjp, iqm_samples, iqm_vjp, multiplex_samples};
use crate::error::Result;
use crate::gradcore::{grad_check, DifferentiableBlock, GradCheckOptions, GradCheckReport};
use crate::link::{ae_layout, check_loss_gradient, write_interleaved, Link, LinkConfig};
use crate::nn::MlpShape;
use crate::rx::{demapper_net, Adc, MatchedFilter};
use crate::scalar::C;
use crate::signal::rrc_taps;
use crate::channel::ChannelConfig;
use crate::gradcore::{ParamVector, SegmentKind};
use crate::training::softmax_ce;
use crate::tx::{
    find_peak, map_messages, map_messages_vjp, peak_normalize_vjp, predistort_nn_taped, predistort_nn_vjp,
    predistorter_net, pulse_shape_vjp, shape_samples, unit_power, unit_power_vjp, ConstellationTable,
};

fn to_c(v: &[f64]) -> Vec<C<f64>> {
    v.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect()
}

fn to_r(v: &[C<f64>]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.re, p.im]).collect()
}

fn uniform(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

struct Mapper(Vec<usize>);
impl DifferentiableBlock<f64> for Mapper {
    fn name(&self) -> String {
        "mapper".into()
    }
    fn forward(&self, _: &[f64], p: &[f64]) -> Vec<f64> {
        to_r(&map_messages(&self.0, &to_c(p)).expect("messages in range"))
    }
    fn backward(&self, _: &[f64], p: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (vec![], to_r(&map_messages_vjp(&self.0, &to_c(p), &to_c(up))))
    }
}

struct UnitPower;
impl DifferentiableBlock<f64> for UnitPower {
    fn name(&self) -> String {
        "unit power (AGC)".into()
    }
    fn forward(&self, x: &[f64], _: &[f64]) -> Vec<f64> {
        to_r(&unit_power(&to_c(x)).0)
    }
    fn backward(&self, x: &[f64], _: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let v = to_c(x);
        let (_, rms) = unit_power(&v);
        (to_r(&unit_power_vjp(&v, rms, &to_c(up))), vec![])
    }
}

struct Shaper {
    os: usize,
}
impl DifferentiableBlock<f64> for Shaper {
    fn name(&self) -> String {
        "pulse shaper".into()
    }
    fn forward(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let taps = to_c(p);
        to_r(&shape_samples(&to_c(x), &taps, taps.len() / 2, self.os))
    }
    fn backward(&self, x: &[f64], p: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let taps = to_c(p);
        let (xb, hb) = pulse_shape_vjp(&to_c(x), &taps, taps.len() / 2, self.os, &to_c(up));
        (to_r(&xb), to_r(&hb))
    }
}

struct Peak;
impl DifferentiableBlock<f64> for Peak {
    fn name(&self) -> String {
        "peak normalise".into()
    }
    fn forward(&self, x: &[f64], _: &[f64]) -> Vec<f64> {
        let s = to_c(x);
        let p = find_peak(&s);
        to_r(&s.iter().map(|v| v / p.scale).collect::<Vec<_>>())
    }
    fn backward(&self, x: &[f64], _: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = to_c(x);
        (to_r(&peak_normalize_vjp(&s, find_peak(&s), &to_c(up))), vec![])
    }
}

struct Predistorter;
impl DifferentiableBlock<f64> for Predistorter {
    fn name(&self) -> String {
        "pre-distorter".into()
    }
    fn forward(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        to_r(&predistort_nn_taped(&to_c(x), p).0)
    }
    fn backward(&self, x: &[f64], p: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (_, tape) = predistort_nn_taped(&to_c(x), p);
        let mut pb = vec![0.0; p.len()];
        let xb = predistort_nn_vjp(p, &tape, &to_c(up), &mut pb);
        (to_r(&xb), pb)
    }
}

struct Iqm {
    v_p: f64,
}
impl DifferentiableBlock<f64> for Iqm {
    fn name(&self) -> String {
        "amplifier + IQ modulator".into()
    }
    fn forward(&self, x: &[f64], _: &[f64]) -> Vec<f64> {
        let e: Vec<C<f64>> = to_c(x).iter().map(|v| v * self.v_p).collect();
        to_r(&iqm_samples(&e))
    }
    fn backward(&self, x: &[f64], _: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let e: Vec<C<f64>> = to_c(x).iter().map(|v| v * self.v_p).collect();
        let g = iqm_vjp(&e, &to_c(up));
        (g.iter().flat_map(|v| [v.re * self.v_p, v.im * self.v_p]).collect(), vec![])
    }
}

/// Frequency multiplex of `n` equal-length channels, all differentiated.
struct Multiplex {
    offsets: Vec<f64>,
    rate: f64,
}
impl DifferentiableBlock<f64> for Multiplex {
    fn name(&self) -> String {
        "multiplexer".into()
    }
    fn forward(&self, x: &[f64], _: &[f64]) -> Vec<f64> {
        let all = to_c(x);
        let views: Vec<&[C<f64>]> = all.chunks(all.len() / self.offsets.len()).collect();
        to_r(&multiplex_samples(&views, &self.offsets, self.rate))
    }
    fn backward(&self, _: &[f64], _: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = to_c(up);
        let xb: Vec<C<f64>> = self.offsets.iter().flat_map(|&df| demultiplex_vjp(&g, df, self.rate)).collect();
        (to_r(&xb), vec![])
    }
}

struct AdcBlock(Adc<f64>);
impl DifferentiableBlock<f64> for AdcBlock {
    fn name(&self) -> String {
        "ADC".into()
    }
    fn forward(&self, x: &[f64], _: &[f64]) -> Vec<f64> {
        to_r(&self.0.apply(&to_c(x)))
    }
    fn backward(&self, _: &[f64], _: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (to_r(&self.0.vjp(&to_c(up))), vec![])
    }
}

struct Matched(MatchedFilter<f64>);
impl DifferentiableBlock<f64> for Matched {
    fn name(&self) -> String {
        "matched filter".into()
    }
    fn forward(&self, x: &[f64], _: &[f64]) -> Vec<f64> {
        to_r(&self.0.apply(&to_c(x)))
    }
    fn backward(&self, _: &[f64], _: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (to_r(&self.0.vjp(&to_c(up))), vec![])
    }
}

struct Demapper {
    shape: MlpShape,
    rows: usize,
}
impl DifferentiableBlock<f64> for Demapper {
    fn name(&self) -> String {
        "demapper".into()
    }
    fn forward(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((self.rows, 2), x.to_vec()).expect("two columns");
        self.shape.infer(p, x).into_iter().collect()
    }
    fn backward(&self, x: &[f64], p: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let x = Array2::from_shape_vec((self.rows, 2), x.to_vec()).expect("two columns");
        let tape = self.shape.forward(p, x);
        let d = Array2::from_shape_vec((self.rows, self.shape.output_dim()), up.to_vec()).expect("logit shape");
        let mut dp = vec![0.0; p.len()];
        let dx = self.shape.backward(p, &tape, d, &mut dp);
        (dx.into_iter().collect(), dp)
    }
}

struct SoftmaxCe {
    messages: Vec<usize>,
    m: usize,
}
impl DifferentiableBlock<f64> for SoftmaxCe {
    fn name(&self) -> String {
        "softmax cross-entropy".into()
    }
    fn forward(&self, x: &[f64], _: &[f64]) -> Vec<f64> {
        let z = Array2::from_shape_vec((self.messages.len(), self.m), x.to_vec()).expect("logit shape");
        vec![softmax_ce(&z, &self.messages).expect("valid messages").0]
    }
    fn backward(&self, x: &[f64], _: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let z = Array2::from_shape_vec((self.messages.len(), self.m), x.to_vec()).expect("logit shape");
        let (_, d) = softmax_ce(&z, &self.messages).expect("valid messages");
        (d.into_iter().map(|v| v * up[0]).collect(), vec![])
    }
}

/// Configuration of the composed-loss check: the full three-channel link at
/// 64 points with a short frame, which keeps the share of coordinates whose
/// ±1e-5 step flips a demapper ReLU small.
pub fn suite_link_config() -> LinkConfig {
    LinkConfig {
        channel: ChannelConfig { n_channels: 3, eta: 0.05, v_p: 1.0, snr_db: Some(18.0), seed: 3 },
        payload: 128,
        guard: 64,
        ..LinkConfig::default()
    }
}

/// Perturbed pre-trained-like transceiver parameters: sunflower points, RRC
/// taps, random networks. Keeps every block away from its kinks.
pub fn suite_params(cfg: &LinkConfig, seed: u64) -> Result<ParamVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamVector::zeros(ae_layout(cfg.m, cfg.shaper_taps()));
    let table = ConstellationTable::<f64>::sunflower(cfg.m)?;
    let raw: Vec<C<f64>> = table.points().iter().map(|v| v * 1.3 + Complex::new(0.05, -0.02)).collect();
    write_interleaved(p.segment_mut(SegmentKind::Mapper), &raw);
    let rrc = rrc_taps::<f64>(cfg.rolloff, cfg.span, cfg.os)?;
    let taps: Vec<C<f64>> = rrc
        .taps
        .iter()
        .map(|t| t + Complex::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01)))
        .collect();
    write_interleaved(p.segment_mut(SegmentKind::Shaper), &taps);
    let pd: Vec<f64> = predistorter_net().init(&mut rng);
    p.segment_mut(SegmentKind::Predistorter).copy_from_slice(&pd);
    let mut dm: Vec<f64> = demapper_net(cfg.m).init(&mut rng);
    dm.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    p.segment_mut(SegmentKind::Demapper).copy_from_slice(&dm);
    Ok(p)
}

/// Checks each block on random inputs and then the end-to-end loss on
/// `coords` coordinates of every parameter segment. Reports are named after
/// the block, or `loss/<segment>` for the composed loss.
pub fn gradient_suite(coords: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradCheckOptions { coords, seed, ..GradCheckOptions::default() };
    let mut out = Vec::new();

    let msgs: Vec<usize> = (0..300).map(|_| rng.random_range(0..64)).collect();
    let raw = uniform(128, -1.0, 1.0, &mut rng);
    out.push(grad_check(&Mapper(msgs), &[], &raw, opts)?);

    out.push(grad_check(&UnitPower, &uniform(120, -1.0, 1.0, &mut rng), &[], opts)?);

    let x = uniform(60, -1.0, 1.0, &mut rng);
    let taps = uniform(2 * 33, -0.3, 0.3, &mut rng);
    out.push(grad_check(&Shaper { os: 8 }, &x, &taps, opts)?);

    out.push(grad_check(&Peak, &uniform(200, -1.0, 1.0, &mut rng), &[], opts)?);

    let p: Vec<f64> = predistorter_net().init(&mut rng);
    out.push(grad_check(&Predistorter, &uniform(120, -0.95, 0.95, &mut rng), &p, opts)?);

    out.push(grad_check(&Iqm { v_p: 0.9 }, &uniform(120, -1.0, 1.0, &mut rng), &[], opts)?);

    let mux = Multiplex { offsets: vec![-1.05, 0.0, 1.05], rate: 8.0 };
    out.push(grad_check(&mux, &uniform(3 * 2 * 64, -1.0, 1.0, &mut rng), &[], opts)?);

    let adc = AdcBlock(Adc::new(128, 8)?);
    out.push(grad_check(&adc, &uniform(256, -1.0, 1.0, &mut rng), &[], opts)?);

    let mf = Matched(MatchedFilter::new(0.1, 8)?);
    out.push(grad_check(&mf, &uniform(160, -1.0, 1.0, &mut rng), &[], opts)?);

    let shape = demapper_net(64);
    let mut dp: Vec<f64> = shape.init(&mut rng);
    dp.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    let rows = 12;
    out.push(grad_check(&Demapper { shape, rows }, &uniform(2 * rows, -1.5, 1.5, &mut rng), &dp, opts)?);

    let messages: Vec<usize> = (0..10).map(|_| rng.random_range(0..64)).collect();
    let logits = uniform(10 * 64, -3.0, 3.0, &mut rng);
    out.push(grad_check(&SoftmaxCe { messages, m: 64 }, &logits, &[], opts)?);

    let cfg = suite_link_config();
    let link = Link::<f64>::new(cfg.clone())?;
    let params = suite_params(&cfg, seed)?;
    let batch = link.frame(seed, 0);
    for c in check_loss_gradient(&link, &params, &batch, coords, 1e-5, seed)? {
        out.push(GradCheckReport {
            block: format!("loss/{}", c.kind.name()),
            max_rel_error: c.max_rel_error,
            input_coords: 0,
            param_coords: c.checked,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_block_and_the_composed_loss_pass() {
        let reports = gradient_suite(50, 11).unwrap();
        assert_eq!(reports.len(), 11 + 4);
        for r in &reports {
            assert!(r.max_rel_error < 1e-4, "{r:?}");
            assert!(r.input_coords + r.param_coords >= 50, "{r:?}");
        }
    }
}
