use ndarray::ArrayD;
use rand::Rng;

use super::{cast_array, join, ops, slice, slice_mut, uniform, Params};
use crate::scalar::{sigmoid, Real};

/// Single LSTM cell with gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct LstmCell<T> {
    pub w_ih: ArrayD<T>,
    pub w_hh: ArrayD<T>,
    pub bias: ArrayD<T>,
}

/// Activations kept for one step of backpropagation through time.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    x: Vec<T>,
    h: Vec<T>,
    c: Vec<T>,
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

impl<T: Real> LstmCell<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let b = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: uniform(&[4 * hidden, input], b, rng),
            w_hh: uniform(&[4 * hidden, hidden], b, rng),
            bias: uniform(&[4 * hidden], b, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn cast<U: Real>(&self) -> LstmCell<U> {
        LstmCell {
            w_ih: cast_array(&self.w_ih),
            w_hh: cast_array(&self.w_hh),
            bias: cast_array(&self.bias),
        }
    }

    /// One step; returns `(h', c', cache)`.
    pub fn step(&self, x: &[T], h: &[T], c: &[T]) -> (Vec<T>, Vec<T>, LstmCache<T>) {
        let nh = self.hidden();
        let ni = self.input();
        let (wi, wh, b) = (slice(&self.w_ih), slice(&self.w_hh), slice(&self.bias));
        let mut gates: Vec<T> = (0..4 * nh)
            .map(|r| ops::dot(&wi[r * ni..(r + 1) * ni], x) + ops::dot(&wh[r * nh..(r + 1) * nh], h) + b[r])
            .collect();
        for (r, g) in gates.iter_mut().enumerate() {
            *g = if r / nh == 2 { g.tanh() } else { sigmoid(*g) };
        }
        let mut c_new = vec![T::zero(); nh];
        let mut h_new = vec![T::zero(); nh];
        let mut tanh_c = vec![T::zero(); nh];
        for j in 0..nh {
            let (i, f, g, o) = (gates[j], gates[nh + j], gates[2 * nh + j], gates[3 * nh + j]);
            c_new[j] = f * c[j] + i * g;
            tanh_c[j] = c_new[j].tanh();
            h_new[j] = o * tanh_c[j];
        }
        let cache = LstmCache {
            x: x.to_vec(),
            h: h.to_vec(),
            c: c.to_vec(),
            gates,
            tanh_c,
        };
        (h_new, c_new, cache)
    }

    /// Backward through one step given cotangents of `(h', c')`.
    /// Returns `(dx, dh, dc)` for the step inputs.
    pub fn backward(
        &self,
        cache: &LstmCache<T>,
        dh_new: &[T],
        dc_new: &[T],
        grad: Option<&mut LstmCell<T>>,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let nh = self.hidden();
        let ni = self.input();
        let one = T::one();
        let g = &cache.gates;
        let mut dz = vec![T::zero(); 4 * nh];
        let mut dc = vec![T::zero(); nh];
        for j in 0..nh {
            let (i, f, gg, o) = (g[j], g[nh + j], g[2 * nh + j], g[3 * nh + j]);
            let tc = cache.tanh_c[j];
            let d_o = dh_new[j] * tc;
            let dct = dc_new[j] + dh_new[j] * o * (one - tc * tc);
            dz[j] = dct * gg * i * (one - i);
            dz[nh + j] = dct * cache.c[j] * f * (one - f);
            dz[2 * nh + j] = dct * i * (one - gg * gg);
            dz[3 * nh + j] = d_o * o * (one - o);
            dc[j] = dct * f;
        }
        let (wi, wh) = (slice(&self.w_ih), slice(&self.w_hh));
        let mut dx = vec![T::zero(); ni];
        let mut dh = vec![T::zero(); nh];
        for (r, &d) in dz.iter().enumerate() {
            for (o, &w) in dx.iter_mut().zip(&wi[r * ni..(r + 1) * ni]) {
                *o += d * w;
            }
            for (o, &w) in dh.iter_mut().zip(&wh[r * nh..(r + 1) * nh]) {
                *o += d * w;
            }
        }
        if let Some(gr) = grad {
            let gwi = slice_mut(&mut gr.w_ih);
            for (r, &d) in dz.iter().enumerate() {
                for (o, &xv) in gwi[r * ni..(r + 1) * ni].iter_mut().zip(&cache.x) {
                    *o += d * xv;
                }
            }
            let gwh = slice_mut(&mut gr.w_hh);
            for (r, &d) in dz.iter().enumerate() {
                for (o, &hv) in gwh[r * nh..(r + 1) * nh].iter_mut().zip(&cache.h) {
                    *o += d * hv;
                }
            }
            for (o, &d) in slice_mut(&mut gr.bias).iter_mut().zip(&dz) {
                *o += d;
            }
        }
        (dx, dh, dc)
    }
}

impl<T: Real> Params<T> for LstmCell<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<T>)) {
        f(join(prefix, "w_ih"), &self.w_ih);
        f(join(prefix, "w_hh"), &self.w_hh);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<T>)) {
        f(join(prefix, "w_ih"), &mut self.w_ih);
        f(join(prefix, "w_hh"), &mut self.w_hh);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cell: LstmCell<f64> = LstmCell::new(3, 4, &mut rng);
        let x = vec![0.5, -0.3, 0.8];
        let h = vec![0.1, -0.2, 0.3, 0.0];
        let c = vec![-0.4, 0.2, 0.6, 0.1];
        let wh = [0.7, -1.1, 0.4, 0.9];
        let wc = [0.2, 0.5, -0.3, 1.2];
        let loss = |cell: &LstmCell<f64>, x: &[f64], h: &[f64], c: &[f64]| {
            let (hn, cn, _) = cell.step(x, h, c);
            hn.iter().zip(&wh).map(|(a, b)| a * b).sum::<f64>() + cn.iter().zip(&wc).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, _, cache) = cell.step(&x, &h, &c);
        let mut grad = cell.zeros_like();
        let (dx, dh, dc) = cell.backward(&cache, &wh, &wc, Some(&mut grad));
        let eps = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * eps);
            assert!((fd - analytic).abs() < 1e-7, "{fd} vs {analytic}");
        };
        for i in 0..3 {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += eps;
            b[i] -= eps;
            check(dx[i], loss(&cell, &a, &h, &c), loss(&cell, &b, &h, &c));
        }
        for i in 0..4 {
            let (mut a, mut b) = (h.clone(), h.clone());
            a[i] += eps;
            b[i] -= eps;
            check(dh[i], loss(&cell, &x, &a, &c), loss(&cell, &x, &b, &c));
            let (mut a, mut b) = (c.clone(), c.clone());
            a[i] += eps;
            b[i] -= eps;
            check(dc[i], loss(&cell, &x, &h, &a), loss(&cell, &x, &h, &b));
        }
        for idx in [0usize, 7, 20, 47] {
            let (mut a, mut b) = (cell.clone(), cell.clone());
            slice_mut(&mut a.w_hh)[idx] += eps;
            slice_mut(&mut b.w_hh)[idx] -= eps;
            check(slice(&grad.w_hh)[idx], loss(&a, &x, &h, &c), loss(&b, &x, &h, &c));
        }
    }
}
