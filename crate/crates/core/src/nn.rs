//! Small fully connected networks over flat parameter slices.
//!
//! Layer `l` stores its weight matrix `W_l` (`out × in`, row-major) followed by
//! its bias `b_l`; the forward map is `a_{l+1} = σ(a_l·W_lᵀ + b_l)` with a
//! linear output layer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpShape {
    /// Widths from input to output, e.g. `[1, 16, 16, 1]`.
    pub sizes: Vec<usize>,
    pub hidden: Activation,
}

/// Activations recorded by [`MlpShape::forward`]; `acts[0]` is the input and
/// the last entry the (linear) output.
#[derive(Debug, Clone)]
pub struct MlpTape<T> {
    pub acts: Vec<Array2<T>>,
}

impl<T> MlpTape<T> {
    pub fn output(&self) -> &Array2<T> {
        self.acts.last().expect("tape has an output")
    }
}

impl MlpShape {
    pub fn new(sizes: Vec<usize>, hidden: Activation) -> Self {
        assert!(sizes.len() >= 2, "network needs an input and an output layer");
        Self { sizes, hidden }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.sizes[..=layer].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn weights<'a, T: Scalar>(&self, params: &'a [T], layer: usize) -> (ArrayView2<'a, T>, ArrayView1<'a, T>) {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        let w = ArrayView2::from_shape((o, i), &params[off..off + o * i]).unwrap();
        let b = ArrayView1::from(&params[off + o * i..off + o * i + o]);
        (w, b)
    }

    fn weights_mut<'a, T: Scalar>(
        &self,
        params: &'a mut [T],
        layer: usize,
    ) -> (ArrayViewMut2<'a, T>, ArrayViewMut1<'a, T>) {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        let (w, b) = params[off..off + o * i + o].split_at_mut(o * i);
        (ArrayViewMut2::from_shape((o, i), w).unwrap(), ArrayViewMut1::from(b))
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut p = vec![T::zero(); self.param_count()];
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (mut w, _) = self.weights_mut(&mut p, l);
            w.mapv_inplace(|_| T::lit(rng.random_range(-limit..limit)));
        }
        p
    }

    fn activate<T: Scalar>(&self, z: &mut Array2<T>) {
        match self.hidden {
            Activation::Tanh => z.mapv_inplace(|v| v.act_tanh()),
            Activation::Relu => z.mapv_inplace(|v| v.max(T::zero())),
        }
    }

    /// Forward pass over a batch (`rows × input_dim`), recording activations.
    pub fn forward<T: Scalar>(&self, params: &[T], input: Array2<T>) -> MlpTape<T> {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(input.ncols(), self.input_dim());
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input);
        for l in 0..self.n_layers() {
            let (w, b) = self.weights(params, l);
            let a = acts.last().unwrap();
            let mut z = Array2::from_shape_fn((a.nrows(), w.nrows()), |(_, j)| b[j]);
            general_mat_mul(T::one(), a, &w.t(), T::one(), &mut z);
            if l + 1 < self.n_layers() {
                self.activate(&mut z);
            }
            acts.push(z);
        }
        MlpTape { acts }
    }

    /// Forward pass without keeping intermediate activations.
    pub fn infer<T: Scalar>(&self, params: &[T], input: Array2<T>) -> Array2<T> {
        let mut a = input;
        for l in 0..self.n_layers() {
            let (w, b) = self.weights(params, l);
            let mut z = Array2::from_shape_fn((a.nrows(), w.nrows()), |(_, j)| b[j]);
            general_mat_mul(T::one(), &a, &w.t(), T::one(), &mut z);
            if l + 1 < self.n_layers() {
                self.activate(&mut z);
            }
            a = z;
        }
        a
    }

    /// Back-propagates `d_out` (same shape as the output). Parameter
    /// cotangents are accumulated into `d_params`; the input cotangent is
    /// returned.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        tape: &MlpTape<T>,
        d_out: Array2<T>,
        d_params: &mut [T],
    ) -> Array2<T> {
        debug_assert_eq!(d_params.len(), self.param_count());
        let mut dz = d_out;
        for l in (0..self.n_layers()).rev() {
            let a_in = &tape.acts[l];
            let (w, _) = self.weights(params, l);
            {
                let (mut dw, mut db) = self.weights_mut(d_params, l);
                general_mat_mul(T::one(), &dz.t(), a_in, T::one(), &mut dw);
                db += &dz.sum_axis(Axis(0));
            }
            let mut da = Array2::zeros((dz.nrows(), w.ncols()));
            general_mat_mul(T::one(), &dz, &w, T::zero(), &mut da);
            if l > 0 {
                match self.hidden {
                    Activation::Tanh => {
                        ndarray::Zip::from(&mut da).and(a_in).for_each(|d, &a| *d *= T::one() - a * a)
                    }
                    Activation::Relu => ndarray::Zip::from(&mut da).and(a_in).for_each(|d, &a| {
                        if a <= T::zero() {
                            *d = T::zero()
                        }
                    }),
                }
            }
            dz = da;
        }
        dz
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::{grad_check, DifferentiableBlock, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct MlpBlock {
        shape: MlpShape,
        rows: usize,
    }

    impl DifferentiableBlock<f64> for MlpBlock {
        fn name(&self) -> String {
            format!("mlp{:?}", self.shape.sizes)
        }
        fn forward(&self, input: &[f64], params: &[f64]) -> Vec<f64> {
            let x = Array2::from_shape_vec((self.rows, self.shape.input_dim()), input.to_vec()).unwrap();
            self.shape.infer(params, x).into_iter().collect()
        }
        fn backward(&self, input: &[f64], params: &[f64], up: &[f64]) -> (Vec<f64>, Vec<f64>) {
            let x = Array2::from_shape_vec((self.rows, self.shape.input_dim()), input.to_vec()).unwrap();
            let tape = self.shape.forward(params, x);
            let d = Array2::from_shape_vec((self.rows, self.shape.output_dim()), up.to_vec()).unwrap();
            let mut dp = vec![0.0; params.len()];
            let dx = self.shape.backward(params, &tape, d, &mut dp);
            (dx.into_iter().collect(), dp)
        }
    }

    #[test]
    fn param_count_matches_layout() {
        let s = MlpShape::new(vec![1, 16, 16, 1], Activation::Tanh);
        assert_eq!(s.param_count(), 16 + 16 + 256 + 16 + 16 + 1);
        let s = MlpShape::new(vec![2, 64, 64, 64], Activation::Relu);
        assert_eq!(s.param_count(), 2 * 64 + 64 + 64 * 64 + 64 + 64 * 64 + 64);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (sizes, act) in [
            (vec![1, 16, 16, 1], Activation::Tanh),
            (vec![2, 12, 12, 8], Activation::Relu),
        ] {
            let shape = MlpShape::new(sizes, act);
            let mut p: Vec<f64> = shape.init(&mut rng);
            for v in p.iter_mut() {
                *v += 0.1 * rng.random_range(-1.0..1.0);
            }
            let rows = 9;
            let x: Vec<f64> = (0..rows * shape.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let block = MlpBlock { shape, rows };
            let r = grad_check(&block, &x, &p, GradCheckOptions::default()).unwrap();
            assert!(r.max_rel_error < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn zero_bias_tanh_network_is_odd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = MlpShape::new(vec![1, 16, 16, 1], Activation::Tanh);
        let p: Vec<f64> = shape.init(&mut rng);
        let x = Array2::from_shape_vec((3, 1), vec![0.0, 0.4, -0.4]).unwrap();
        let y = shape.infer(&p, x);
        assert_eq!(y[[0, 0]], 0.0);
        assert!((y[[1, 0]] + y[[2, 0]]).abs() < 1e-15);
    }
}
