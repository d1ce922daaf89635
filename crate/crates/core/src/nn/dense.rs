use ndarray::ArrayD;
use rand::Rng;

use super::ops::{self, Conv3dGeom};
use super::{cast_array, join, randn, slice, slice_mut, Params};
use crate::scalar::Real;

/// Fully connected layer with equalized learning rate.
///
/// Stored weights are drawn from N(0, 1/lr_mul) and scaled at runtime by
/// `lr_mul / sqrt(fan_in)`; bias is scaled by `lr_mul`.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub weight: ArrayD<T>,
    pub bias: ArrayD<T>,
    pub w_gain: f64,
    pub b_gain: f64,
}

impl<T: Real> Dense<T> {
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, lr_mul: f64, bias_init: f64, rng: &mut R) -> Self {
        Self {
            weight: randn(&[fan_out, fan_in], 1.0 / lr_mul, rng),
            bias: ArrayD::from_elem(vec![fan_out], T::c(bias_init / lr_mul)),
            w_gain: lr_mul / (fan_in as f64).sqrt(),
            b_gain: lr_mul,
        }
    }

    /// Plain affine map with all parameters zero and unit gains.
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: ArrayD::from_elem(vec![fan_out, fan_in], T::zero()),
            bias: ArrayD::from_elem(vec![fan_out], T::zero()),
            w_gain: 1.0,
            b_gain: 1.0,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            weight: cast_array(&self.weight),
            bias: cast_array(&self.bias),
            w_gain: self.w_gain,
            b_gain: self.b_gain,
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let (wg, bg) = (T::c(self.w_gain), T::c(self.b_gain));
        let n_in = self.fan_in();
        let w = slice(&self.weight);
        slice(&self.bias)
            .iter()
            .enumerate()
            .map(|(o, &b)| ops::dot(&w[o * n_in..(o + 1) * n_in], x) * wg + b * bg)
            .collect()
    }

    /// Returns dL/dx; accumulates parameter gradients into `grad`.
    pub fn backward(&self, x: &[T], dy: &[T], grad: Option<&mut Dense<T>>) -> Vec<T> {
        let (wg, bg) = (T::c(self.w_gain), T::c(self.b_gain));
        let n_in = self.fan_in();
        let w = slice(&self.weight);
        let mut dx = vec![T::zero(); n_in];
        for (o, &g) in dy.iter().enumerate() {
            let gs = g * wg;
            for (d, &wv) in dx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                *d += gs * wv;
            }
        }
        if let Some(gr) = grad {
            let gw = slice_mut(&mut gr.weight);
            for (o, &g) in dy.iter().enumerate() {
                let gs = g * wg;
                for (d, &xv) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                    *d += gs * xv;
                }
            }
            for (d, &g) in slice_mut(&mut gr.bias).iter_mut().zip(dy) {
                *d += g * bg;
            }
        }
        dx
    }
}

impl<T: Real> Params<T> for Dense<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Stride-1 "same" 2-D convolution with equalized learning rate.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: ArrayD<T>,
    pub bias: ArrayD<T>,
    pub k: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, rng: &mut R) -> Self {
        Self {
            weight: randn(&[cout, cin, k, k], 1.0, rng),
            bias: ArrayD::from_elem(vec![cout], T::zero()),
            k,
        }
    }

    pub fn cin(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn cout(&self) -> usize {
        self.weight.shape()[0]
    }

    fn gain(&self) -> T {
        T::c(1.0 / ((self.cin() * self.k * self.k) as f64).sqrt())
    }

    pub fn cast<U: Real>(&self) -> Conv2d<U> {
        Conv2d {
            weight: cast_array(&self.weight),
            bias: cast_array(&self.bias),
            k: self.k,
        }
    }

    fn scaled_weight(&self) -> Vec<T> {
        let g = self.gain();
        slice(&self.weight).iter().map(|&v| v * g).collect()
    }

    /// Pre-activation output `[cout, h, w]`.
    pub fn forward(&self, x: &[T], h: usize, w: usize) -> Vec<T> {
        let wt = self.scaled_weight();
        let mut y = ops::conv2d(x, self.cin(), h, w, &wt, self.cout(), self.k);
        let hw = h * w;
        for (co, &b) in slice(&self.bias).iter().enumerate() {
            for v in &mut y[co * hw..(co + 1) * hw] {
                *v += b;
            }
        }
        y
    }

    pub fn backward(&self, x: &[T], h: usize, w: usize, dy: &[T], grad: Option<&mut Conv2d<T>>) -> Vec<T> {
        let wt = self.scaled_weight();
        let mut dx = vec![T::zero(); x.len()];
        let hw = h * w;
        match grad {
            Some(gr) => {
                let mut dw = vec![T::zero(); wt.len()];
                ops::conv2d_backward(x, self.cin(), h, w, &wt, self.cout(), self.k, dy, Some(&mut dx), Some(&mut dw));
                let g = self.gain();
                for (d, v) in slice_mut(&mut gr.weight).iter_mut().zip(dw) {
                    *d += v * g;
                }
                for (co, d) in slice_mut(&mut gr.bias).iter_mut().enumerate() {
                    *d += dy[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
                }
            }
            None => {
                ops::conv2d_backward(x, self.cin(), h, w, &wt, self.cout(), self.k, dy, Some(&mut dx), None);
            }
        }
        dx
    }
}

impl<T: Real> Params<T> for Conv2d<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// 3×3×3 space-time convolution with equalized learning rate.
#[derive(Clone, Debug)]
pub struct Conv3d<T> {
    pub weight: ArrayD<T>,
    pub bias: ArrayD<T>,
    pub temporal_stride: usize,
    pub spatial_stride: usize,
}

impl<T: Real> Conv3d<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, temporal_stride: usize, spatial_stride: usize, rng: &mut R) -> Self {
        Self {
            weight: randn(&[cout, cin, 3, 3, 3], 1.0, rng),
            bias: ArrayD::from_elem(vec![cout], T::zero()),
            temporal_stride,
            spatial_stride,
        }
    }

    pub fn cast<U: Real>(&self) -> Conv3d<U> {
        Conv3d {
            weight: cast_array(&self.weight),
            bias: cast_array(&self.bias),
            temporal_stride: self.temporal_stride,
            spatial_stride: self.spatial_stride,
        }
    }

    pub fn geom(&self, t: usize, h: usize, w: usize) -> Conv3dGeom {
        Conv3dGeom {
            cin: self.weight.shape()[1],
            cout: self.weight.shape()[0],
            t,
            h,
            w,
            st: self.temporal_stride,
            ss: self.spatial_stride,
        }
    }

    fn scaled_weight(&self) -> Vec<T> {
        let g = T::c(1.0 / ((self.weight.shape()[1] * 27) as f64).sqrt());
        slice(&self.weight).iter().map(|&v| v * g).collect()
    }

    pub fn forward(&self, x: &[T], g: &Conv3dGeom) -> Vec<T> {
        let mut y = ops::conv3d(x, g, &self.scaled_weight());
        let (to, ho, wo) = g.out_dims();
        let vol = to * ho * wo;
        for (co, &b) in slice(&self.bias).iter().enumerate() {
            for v in &mut y[co * vol..(co + 1) * vol] {
                *v += b;
            }
        }
        y
    }

    pub fn backward(&self, x: &[T], g: &Conv3dGeom, dy: &[T], grad: Option<&mut Conv3d<T>>) -> Vec<T> {
        let wt = self.scaled_weight();
        let mut dx = vec![T::zero(); x.len()];
        match grad {
            Some(gr) => {
                let mut dw = vec![T::zero(); wt.len()];
                ops::conv3d_backward(x, g, &wt, dy, Some(&mut dx), Some(&mut dw));
                let gain = T::c(1.0 / ((g.cin * 27) as f64).sqrt());
                for (d, v) in slice_mut(&mut gr.weight).iter_mut().zip(dw) {
                    *d += v * gain;
                }
                let (to, ho, wo) = g.out_dims();
                let vol = to * ho * wo;
                for (co, d) in slice_mut(&mut gr.bias).iter_mut().enumerate() {
                    *d += dy[co * vol..(co + 1) * vol].iter().copied().sum::<T>();
                }
            }
            None => ops::conv3d_backward(x, g, &wt, dy, Some(&mut dx), None),
        }
        dx
    }
}

impl<T: Real> Params<T> for Conv3d<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer: Dense<f64> = Dense::new(5, 3, 0.5, 0.1, &mut rng);
        let x = vec![0.3, -0.2, 0.9, 0.1, -0.7];
        let dy = vec![1.0, -2.0, 0.5];
        let loss = |l: &Dense<f64>, x: &[f64]| -> f64 {
            l.forward(x).iter().zip(&dy).map(|(a, b)| a * b).sum()
        };
        let mut grad = layer.zeros_like();
        let dx = layer.backward(&x, &dy, Some(&mut grad));
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
        for idx in 0..15 {
            let mut lp = layer.clone();
            slice_mut(&mut lp.weight)[idx] += h;
            let mut lm = layer.clone();
            slice_mut(&mut lm.weight)[idx] -= h;
            let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * h);
            assert!((fd - slice(&grad.weight)[idx]).abs() < 1e-7);
        }
    }
}
