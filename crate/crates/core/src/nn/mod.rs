//! Hand-differentiated building blocks.
//!
//! Every layer exposes `forward` plus an explicit `backward` that returns the
//! input cotangent and, when given a gradient holder of the same type,
//! accumulates parameter gradients into it. Gradient holders are simply
//! zeroed copies of the model ([`Params::zeros_like`]).

pub mod ops;

mod adam;
mod dense;
mod lstm;

pub use adam::{Adam, AdamConfig};
pub use dense::{Conv2d, Conv3d, Dense};
pub use lstm::{LstmCache, LstmCell};

use ndarray::ArrayD;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Real;

/// Visitor over the named parameter arrays of a model.
///
/// Visit order is fixed by the model structure and is what checkpoints and
/// optimizer state rely on.
pub trait Params<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, a| n += a.len());
        n
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, a| a.fill(T::zero()));
        z
    }

    fn fill_zero(&mut self) {
        self.visit_mut("", &mut |_, a| a.fill(T::zero()));
    }

    /// `self += scale * other` over matching parameters.
    fn add_scaled(&mut self, other: &Self, scale: T) {
        let mut src = Vec::new();
        other.visit("", &mut |_, a| src.push(a));
        let mut i = 0;
        self.visit_mut("", &mut |_, a| {
            a.zip_mut_with(src[i], |x, &y| *x += scale * y);
            i += 1;
        });
    }

    /// Copies values from a model with a different scalar type.
    fn assign_from<U: Real, M: Params<U>>(&mut self, other: &M) {
        let mut src = Vec::new();
        other.visit("", &mut |_, a| src.push(a));
        let mut i = 0;
        self.visit_mut("", &mut |name, a| {
            assert_eq!(a.shape(), src[i].shape(), "parameter {name} shape");
            a.zip_mut_with(src[i], |x, &y| *x = T::c(y.value()));
            i += 1;
        });
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, a| ok &= a.iter().all(|v| v.is_finite()));
        ok
    }

    /// Flattened copy of all parameters in visit order.
    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit("", &mut |_, a| out.extend(a.iter().copied()));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn randn<T: Real, R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> ArrayD<T> {
    ArrayD::from_shape_simple_fn(shape.to_vec(), || {
        let v: f64 = StandardNormal.sample(rng);
        T::c(v * scale)
    })
}

pub(crate) fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> ArrayD<T> {
    ArrayD::from_shape_simple_fn(shape.to_vec(), || T::c(rng.random_range(-bound..bound)))
}

pub(crate) fn cast_array<T: Real, U: Real>(a: &ArrayD<T>) -> ArrayD<U> {
    a.mapv(|v| U::c(v.value()))
}

pub(crate) fn slice<T>(a: &ArrayD<T>) -> &[T] {
    a.as_slice().expect("parameters are stored contiguously")
}

pub(crate) fn slice_mut<T>(a: &mut ArrayD<T>) -> &mut [T] {
    a.as_slice_mut().expect("parameters are stored contiguously")
}
