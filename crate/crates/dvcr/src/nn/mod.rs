//! A small self-attention encoder with hand-written backpropagation, plus
//! the Adam optimizer and a finite-difference gradient checker.
//!
//! Everything is f64 and single-threaded by design: the models here are tiny
//! (64-dim, 2 layers), and exact reproducibility across runs matters more
//! than throughput. Gradients reuse the weight structs themselves, so an
//! optimizer pairs weights and gradients by parameter name.

pub mod adam;
pub mod encoder;
pub mod gradcheck;

pub use adam::Adam;
pub use encoder::{Encoder, EncoderCache, LayerWeights};
pub use gradcheck::{finite_difference_check, CheckOutcome};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Uniform access to a model's named parameter tensors, in a stable order.
pub trait ParamSet {
    fn params(&self) -> Vec<(String, &Array2<f64>)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}

/// Gaussian-initialized matrix, std 0.02 — the shared init for all weight
/// matrices. Fill order is row-major, so layouts are seed-stable.
pub fn gaussian(rng: &mut impl Rng, shape: (usize, usize)) -> Array2<f64> {
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    Array2::from_shape_simple_fn(shape, || normal.sample(rng))
}

/// `into += from`, tensor by tensor. Panics if the two models disagree on
/// parameter names or shapes.
pub fn accumulate<M: ParamSet>(into: &mut M, from: &M) {
    let src = from.params();
    let dst = into.params_mut();
    assert_eq!(dst.len(), src.len(), "parameter lists differ in length");
    for ((dn, d), (sn, s)) in dst.into_iter().zip(src) {
        assert_eq!(dn, sn, "parameter order mismatch");
        assert_eq!(d.dim(), s.dim(), "shape mismatch for {dn}");
        *d += s;
    }
}

/// `model *= factor`, tensor by tensor (used to average accumulated grads).
pub fn scale<M: ParamSet>(model: &mut M, factor: f64) {
    for (_, p) in model.params_mut() {
        *p *= factor;
    }
}
