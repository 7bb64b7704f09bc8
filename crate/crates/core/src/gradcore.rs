//! Parameter storage, the Adam optimizer, finite-difference gradient checking
//! and the JSON checkpoint format.

use std::fmt;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// The four trainable blocks of the transceiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// Symbol mapper (NN1).
    Mapper,
    /// FIR pulse shaper (NN2).
    Shaper,
    /// Per-rail pre-distorter (NN3).
    Predistorter,
    /// Softmax demapper (NN4).
    Demapper,
}

impl SegmentKind {
    pub const ALL: [SegmentKind; 4] = [
        SegmentKind::Mapper,
        SegmentKind::Shaper,
        SegmentKind::Predistorter,
        SegmentKind::Demapper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SegmentKind::Mapper => "mapper",
            SegmentKind::Shaper => "shaper",
            SegmentKind::Predistorter => "predistorter",
            SegmentKind::Demapper => "demapper",
        }
    }

    /// Short network label, `NN1`..`NN4`.
    pub fn label(self) -> &'static str {
        match self {
            SegmentKind::Mapper => "NN1",
            SegmentKind::Shaper => "NN2",
            SegmentKind::Predistorter => "NN3",
            SegmentKind::Demapper => "NN4",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s) || k.label().eq_ignore_ascii_case(s))
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub offset: usize,
    pub len: usize,
    /// `[M, 2]` for the mapper, `[taps, 2]` for the shaper and the layer
    /// widths for the networks.
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    /// Builds a layout by laying the given segments out back to back.
    pub fn packed(parts: &[(SegmentKind, Vec<usize>, usize)]) -> Result<Self> {
        let mut offset = 0;
        let mut segments = Vec::with_capacity(parts.len());
        for (kind, shape, len) in parts {
            if segments.iter().any(|s: &Segment| s.kind == *kind) {
                return Err(invalid(format!("duplicate segment {kind}")));
            }
            segments.push(Segment { kind: *kind, offset, len: *len, shape: shape.clone() });
            offset += len;
        }
        Ok(Self { segments })
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, kind: SegmentKind) -> Option<&Segment> {
        self.segments.iter().find(|s| s.kind == kind)
    }

    /// Segments must tile `0..total_len` without gaps or overlaps.
    pub fn validate(&self) -> Result<()> {
        let mut spans: Vec<(usize, usize)> =
            self.segments.iter().map(|s| (s.offset, s.offset + s.len)).collect();
        spans.sort_unstable();
        let mut cursor = 0;
        for (lo, hi) in spans {
            if lo != cursor {
                return Err(invalid("parameter segments overlap or leave gaps"));
            }
            cursor = hi;
        }
        Ok(())
    }
}

/// Flat real parameter vector partitioned into named segments. Complex
/// quantities are stored as interleaved `(re, im)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    pub values: Vec<T>,
    pub layout: Layout,
}

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(layout: Layout) -> Self {
        Self { values: vec![T::zero(); layout.total_len()], layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, kind: SegmentKind) -> &[T] {
        match self.layout.get(kind) {
            Some(s) => &self.values[s.offset..s.offset + s.len],
            None => &[],
        }
    }

    pub fn segment_mut(&mut self, kind: SegmentKind) -> &mut [T] {
        match self.layout.get(kind).cloned() {
            Some(s) => &mut self.values[s.offset..s.offset + s.len],
            None => &mut [],
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamVector<U> {
        ParamVector {
            values: self.values.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let doc = Checkpoint::from_params(self);
        std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        let doc: Checkpoint = serde_json::from_str(&text)?;
        doc.into_params()
    }
}

pub const CHECKPOINT_FORMAT: &str = "superchan.params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointSegment {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Portable on-disk representation of a [`ParamVector`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub segments: Vec<CheckpointSegment>,
}

impl Checkpoint {
    pub fn from_params<T: Scalar>(p: &ParamVector<T>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            segments: p
                .layout
                .segments()
                .iter()
                .map(|s| CheckpointSegment {
                    name: s.kind.name().into(),
                    shape: s.shape.clone(),
                    values: p.segment(s.kind).iter().map(|v| v.to_f64_lossy()).collect(),
                })
                .collect(),
        }
    }

    pub fn into_params<T: Scalar>(self) -> Result<ParamVector<T>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(invalid(format!("unknown checkpoint format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(invalid(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut parts = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            let kind = SegmentKind::from_name(&seg.name)
                .ok_or_else(|| invalid(format!("unknown segment {:?}", seg.name)))?;
            parts.push((kind, seg.shape.clone(), seg.values.len()));
        }
        let layout = Layout::packed(&parts)?;
        let values = self
            .segments
            .iter()
            .flat_map(|s| s.values.iter().map(|&v| T::lit(v)))
            .collect();
        Ok(ParamVector { values, layout })
    }
}

/// Per-segment freeze flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FreezeMask([bool; 4]);

impl FreezeMask {
    pub fn none() -> Self {
        Self([false; 4])
    }

    pub fn all() -> Self {
        Self([true; 4])
    }

    /// Everything frozen except `trainable`.
    pub fn training_only(trainable: &[SegmentKind]) -> Self {
        let mut m = Self::all();
        for &k in trainable {
            m.0[k.index()] = false;
        }
        m
    }

    pub fn freeze(mut self, kind: SegmentKind) -> Self {
        self.0[kind.index()] = true;
        self
    }

    pub fn unfreeze(mut self, kind: SegmentKind) -> Self {
        self.0[kind.index()] = false;
        self
    }

    pub fn is_frozen(&self, kind: SegmentKind) -> bool {
        self.0[kind.index()]
    }

    pub fn all_frozen(&self) -> bool {
        self.0.iter().all(|&f| f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self { step: 0, m: vec![T::zero(); len], v: vec![T::zero(); len], config }
    }
}

/// One bias-corrected Adam update. Frozen segments (values and moments) are
/// left untouched.
pub fn adam_step<T: Scalar>(
    params: &mut ParamVector<T>,
    grad: &[T],
    state: &mut AdamState<T>,
    frozen: FreezeMask,
) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(invalid(format!(
            "Adam shape mismatch: params {}, grad {}, state {}",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let cfg = state.config;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    let t = state.step as i32;
    let c1 = T::one() - T::lit(cfg.beta1.powi(t));
    let c2 = T::one() - T::lit(cfg.beta2.powi(t));
    for seg in params.layout.segments().to_vec() {
        if frozen.is_frozen(seg.kind) {
            continue;
        }
        for i in seg.offset..seg.offset + seg.len {
            let g = grad[i];
            let m = b1 * state.m[i] + (T::one() - b1) * g;
            let v = b2 * state.v[i] + (T::one() - b2) * g * g;
            state.m[i] = m;
            state.v[i] = v;
            let mhat = m / c1;
            let vhat = v / c2;
            params.values[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// A block with an exact vector-Jacobian product. Inputs, outputs and
/// parameters are flat real vectors (complex values interleaved).
pub trait DifferentiableBlock<T> {
    fn name(&self) -> String;

    fn forward(&self, input: &[T], params: &[T]) -> Vec<T>;

    /// Returns `(input cotangent, parameter cotangent)`.
    fn backward(&self, input: &[T], params: &[T], upstream: &[T]) -> (Vec<T>, Vec<T>);
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per group (inputs, parameters); all are checked when
    /// fewer exist.
    pub coords: usize,
    pub seed: u64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, coords: 50, seed: 0x5eed, floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub block: String,
    pub max_rel_error: f64,
    pub input_coords: usize,
    pub param_coords: usize,
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `block.backward` against central finite differences of the
/// scalar `⟨w, forward(x, θ)⟩` for a fixed random `w`.
pub fn grad_check<T: Scalar>(
    block: &dyn DifferentiableBlock<T>,
    input: &[T],
    params: &[T],
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let out = block.forward(input, params);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure(format!("{}: non-finite forward output", block.name())));
    }
    let w: Vec<T> = (0..out.len()).map(|_| T::standard_normal(&mut rng)).collect();
    // Differences are taken elementwise before contracting with `w`, which
    // keeps cancellation error proportional to the perturbed outputs only.
    let directional = |xp: &[T], pp: &[T], xm: &[T], pm: &[T]| -> Result<f64> {
        let yp = block.forward(xp, pp);
        let ym = block.forward(xm, pm);
        if yp.iter().chain(&ym).any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure(format!("{}: non-finite forward output", block.name())));
        }
        Ok(yp
            .iter()
            .zip(&ym)
            .zip(&w)
            .map(|((a, b), c)| ((*a - *b) * *c).to_f64_lossy())
            .sum())
    };
    let (gx, gp) = block.backward(input, params, &w);
    let h = T::lit(opts.step);
    let two_h = 2.0 * opts.step;
    let mut worst: f64 = 0.0;

    let pick = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        if n <= opts.coords {
            (0..n).collect()
        } else {
            let mut v = sample(rng, n, opts.coords).into_vec();
            v.sort_unstable();
            v
        }
    };

    let xi = pick(input.len(), &mut rng);
    let (mut xp, mut xm) = (input.to_vec(), input.to_vec());
    for &i in &xi {
        xp[i] = input[i] + h;
        xm[i] = input[i] - h;
        let fd = directional(&xp, params, &xm, params)? / two_h;
        xp[i] = input[i];
        xm[i] = input[i];
        worst = worst.max(relative_error(gx[i].to_f64_lossy(), fd, opts.floor));
    }

    let pi = pick(params.len(), &mut rng);
    let (mut pp, mut pm) = (params.to_vec(), params.to_vec());
    for &i in &pi {
        pp[i] = params[i] + h;
        pm[i] = params[i] - h;
        let fd = directional(input, &pp, input, &pm)? / two_h;
        pp[i] = params[i];
        pm[i] = params[i];
        worst = worst.max(relative_error(gp[i].to_f64_lossy(), fd, opts.floor));
    }

    Ok(GradCheckReport {
        block: block.name(),
        max_rel_error: worst,
        input_coords: xi.len(),
        param_coords: pi.len(),
    })
}

/// The identity map; useful as a sanity anchor for [`grad_check`].
pub struct Identity;

impl<T: Scalar> DifferentiableBlock<T> for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn forward(&self, input: &[T], _params: &[T]) -> Vec<T> {
        input.to_vec()
    }

    fn backward(&self, _input: &[T], params: &[T], upstream: &[T]) -> (Vec<T>, Vec<T>) {
        (upstream.to_vec(), vec![T::zero(); params.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_segment(len_a: usize, len_b: usize) -> ParamVector<f64> {
        let layout = Layout::packed(&[
            (SegmentKind::Mapper, vec![len_a], len_a),
            (SegmentKind::Demapper, vec![len_b], len_b),
        ])
        .unwrap();
        ParamVector::zeros(layout)
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = two_segment(1, 1);
        let mut s = AdamState::new(2, AdamConfig::default());
        adam_step(&mut p, &[1.0, 0.0], &mut s, FreezeMask::none()).unwrap();
        assert_abs_diff_eq!(p.values[0], -0.001, epsilon = 1e-9);
        assert_eq!(p.values[1], 0.0);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_zero_gradient_and_frozen() {
        let mut p = two_segment(3, 2);
        p.values = vec![0.1, -0.2, 0.3, 0.4, 0.5];
        let before = p.clone();
        let mut s = AdamState::new(5, AdamConfig::default());
        adam_step(&mut p, &[0.0; 5], &mut s, FreezeMask::none()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);

        adam_step(&mut p, &[1.0, 2.0, 3.0, 4.0, 5.0], &mut s, FreezeMask::all()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 2);

        let mask = FreezeMask::none().freeze(SegmentKind::Demapper);
        adam_step(&mut p, &[1.0; 5], &mut s, mask).unwrap();
        assert_eq!(&p.values[3..], &before.values[3..]);
        assert_ne!(&p.values[..3], &before.values[..3]);
    }

    #[test]
    fn adam_zero_lr_is_identity_and_shape_checked() {
        let mut p = two_segment(2, 2);
        p.values = vec![1.0, 2.0, 3.0, 4.0];
        let before = p.clone();
        let mut s = AdamState::new(4, AdamConfig { lr: 0.0, ..AdamConfig::default() });
        for _ in 0..10 {
            adam_step(&mut p, &[0.3, -0.1, 5.0, 2.0], &mut s, FreezeMask::none()).unwrap();
        }
        assert_eq!(p, before);
        assert!(adam_step(&mut p, &[0.0; 3], &mut s, FreezeMask::none()).is_err());
        assert!(s.v.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn layout_tiles_vector() {
        let p = two_segment(4, 6);
        p.layout.validate().unwrap();
        assert_eq!(p.layout.get(SegmentKind::Demapper).unwrap().offset, 4);
        assert!(Layout::packed(&[
            (SegmentKind::Mapper, vec![1], 1),
            (SegmentKind::Mapper, vec![1], 1)
        ])
        .is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = two_segment(3, 2);
        p.values = vec![0.125, -1.5e-7, 3.0, 1.0 / 3.0, -2.0];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        p.save_json(&path).unwrap();
        let q = ParamVector::<f64>::load_json(&path).unwrap();
        assert_eq!(p, q);
        assert!(matches!(
            ParamVector::<f64>::load_json(&dir.path().join("missing.json")),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn identity_block_checks_clean() {
        let x: Vec<f64> = (0..80).map(|i| (i as f64 * 0.37).sin()).collect();
        let r = grad_check(&Identity, &x, &[], GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
        assert_eq!(r.input_coords, 50);
    }

    struct Broken;
    impl DifferentiableBlock<f64> for Broken {
        fn name(&self) -> String {
            "broken".into()
        }
        fn forward(&self, input: &[f64], _: &[f64]) -> Vec<f64> {
            input.iter().map(|x| x * x).collect()
        }
        fn backward(&self, input: &[f64], _: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (input.iter().zip(up).map(|(x, u)| x * u).collect(), vec![])
        }
    }

    #[test]
    fn grad_check_flags_wrong_gradient() {
        let r = grad_check(&Broken, &[0.5, 1.0, -2.0], &[], GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error > 0.4);
    }

    struct Blowup;
    impl DifferentiableBlock<f64> for Blowup {
        fn name(&self) -> String {
            "blowup".into()
        }
        fn forward(&self, input: &[f64], _: &[f64]) -> Vec<f64> {
            input.iter().map(|x| 1.0 / x).collect()
        }
        fn backward(&self, input: &[f64], _: &[f64], _: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (vec![0.0; input.len()], vec![])
        }
    }

    #[test]
    fn grad_check_rejects_non_finite() {
        assert!(matches!(
            grad_check(&Blowup, &[0.0], &[], GradCheckOptions::default()),
            Err(Error::NumericFailure(_))
        ));
    }
}
