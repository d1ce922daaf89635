//! Raw tensor kernels on contiguous channel-major buffers.
//!
//! Images are `[c, h, w]`, volumes are `[c, t, h, w]`, convolution weights
//! are `[cout, cin, k..]`. Backward kernels *accumulate* into their output
//! buffers so callers can sum over a batch without extra copies.

use crate::scalar::Real;

#[inline]
fn span(len: usize, offset: isize) -> (usize, usize) {
    // Range of output indices `o` such that `o + offset` is inside [0, len).
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

/// Stride-1 "same" 2-D convolution with odd kernel `k`.
pub fn conv2d<T: Real>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    k: usize,
) -> Vec<T> {
    let hw = h * w;
    debug_assert_eq!(input.len(), cin * hw);
    debug_assert_eq!(weight.len(), cout * cin * k * k);
    let pad = (k / 2) as isize;
    let mut out = vec![T::zero(); cout * hw];
    for co in 0..cout {
        let orows = &mut out[co * hw..(co + 1) * hw];
        for ci in 0..cin {
            let plane = &input[ci * hw..(ci + 1) * hw];
            let wbase = (co * cin + ci) * k * k;
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = span(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = span(w, dx);
                    let wv = weight[wbase + ky * k + kx];
                    for y in y0..y1 {
                        let yi = (y as isize + dy) as usize;
                        let orow = &mut orows[y * w + x0..y * w + x1];
                        let xi0 = (x0 as isize + dx) as usize;
                        let irow = &plane[yi * w + xi0..yi * w + xi0 + (x1 - x0)];
                        for (o, &i) in orow.iter_mut().zip(irow) {
                            *o += wv * i;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of [`conv2d`]; accumulates into `dinput` and `dweight`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    k: usize,
    dout: &[T],
    mut dinput: Option<&mut [T]>,
    mut dweight: Option<&mut [T]>,
) {
    let hw = h * w;
    let pad = (k / 2) as isize;
    for co in 0..cout {
        let grows = &dout[co * hw..(co + 1) * hw];
        for ci in 0..cin {
            let plane = &input[ci * hw..(ci + 1) * hw];
            let wbase = (co * cin + ci) * k * k;
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = span(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = span(w, dx);
                    let n = x1 - x0;
                    let xi0 = (x0 as isize + dx) as usize;
                    let wv = weight[wbase + ky * k + kx];
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let yi = (y as isize + dy) as usize;
                        let grow = &grows[y * w + x0..y * w + x1];
                        if dweight.is_some() {
                            let irow = &plane[yi * w + xi0..yi * w + xi0 + n];
                            acc += dot(grow, irow);
                        }
                        if let Some(di) = dinput.as_deref_mut() {
                            let drow = &mut di[ci * hw + yi * w + xi0..ci * hw + yi * w + xi0 + n];
                            for (d, &g) in drow.iter_mut().zip(grow) {
                                *d += wv * g;
                            }
                        }
                    }
                    if let Some(dw) = dweight.as_deref_mut() {
                        dw[wbase + ky * k + kx] += acc;
                    }
                }
            }
        }
    }
}

/// Dot product with split accumulators so the compiler can vectorize it.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let mut acc = [T::zero(); 4];
    let chunks = n / 4;
    for c in 0..chunks {
        for j in 0..4 {
            acc[j] += a[c * 4 + j] * b[c * 4 + j];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Geometry of a padded 3×3×3 convolution with temporal/spatial strides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dGeom {
    pub cin: usize,
    pub cout: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub st: usize,
    pub ss: usize,
}

impl Conv3dGeom {
    pub const K: usize = 3;

    pub fn out_dims(&self) -> (usize, usize, usize) {
        (
            (self.t - 1) / self.st + 1,
            (self.h - 1) / self.ss + 1,
            (self.w - 1) / self.ss + 1,
        )
    }

    pub fn out_len(&self) -> usize {
        let (t, h, w) = self.out_dims();
        self.cout * t * h * w
    }
}

/// Strided 3×3×3 convolution with padding 1 on `[cin, t, h, w]`.
pub fn conv3d<T: Real>(input: &[T], g: &Conv3dGeom, weight: &[T]) -> Vec<T> {
    let (to, ho, wo) = g.out_dims();
    let k = Conv3dGeom::K;
    let vol = g.t * g.h * g.w;
    let ovol = to * ho * wo;
    let mut out = vec![T::zero(); g.cout * ovol];
    for co in 0..g.cout {
        for ci in 0..g.cin {
            let src = &input[ci * vol..(ci + 1) * vol];
            let wbase = (co * g.cin + ci) * k * k * k;
            for kt in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[wbase + (kt * k + ky) * k + kx];
                        for ot in 0..to {
                            let it = (ot * g.st + kt) as isize - 1;
                            if it < 0 || it >= g.t as isize {
                                continue;
                            }
                            for oy in 0..ho {
                                let iy = (oy * g.ss + ky) as isize - 1;
                                if iy < 0 || iy >= g.h as isize {
                                    continue;
                                }
                                let ibase = (it as usize * g.h + iy as usize) * g.w;
                                let obase = co * ovol + (ot * ho + oy) * wo;
                                for ox in 0..wo {
                                    let ix = (ox * g.ss + kx) as isize - 1;
                                    if ix < 0 || ix >= g.w as isize {
                                        continue;
                                    }
                                    out[obase + ox] += wv * src[ibase + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of [`conv3d`]; accumulates into `dinput` and `dweight`.
pub fn conv3d_backward<T: Real>(
    input: &[T],
    g: &Conv3dGeom,
    weight: &[T],
    dout: &[T],
    mut dinput: Option<&mut [T]>,
    mut dweight: Option<&mut [T]>,
) {
    let (to, ho, wo) = g.out_dims();
    let k = Conv3dGeom::K;
    let vol = g.t * g.h * g.w;
    let ovol = to * ho * wo;
    for co in 0..g.cout {
        for ci in 0..g.cin {
            let wbase = (co * g.cin + ci) * k * k * k;
            for kt in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = wbase + (kt * k + ky) * k + kx;
                        let wv = weight[widx];
                        let mut acc = T::zero();
                        for ot in 0..to {
                            let it = (ot * g.st + kt) as isize - 1;
                            if it < 0 || it >= g.t as isize {
                                continue;
                            }
                            for oy in 0..ho {
                                let iy = (oy * g.ss + ky) as isize - 1;
                                if iy < 0 || iy >= g.h as isize {
                                    continue;
                                }
                                let ibase = ci * vol + (it as usize * g.h + iy as usize) * g.w;
                                let obase = co * ovol + (ot * ho + oy) * wo;
                                for ox in 0..wo {
                                    let ix = (ox * g.ss + kx) as isize - 1;
                                    if ix < 0 || ix >= g.w as isize {
                                        continue;
                                    }
                                    let gv = dout[obase + ox];
                                    let ii = ibase + ix as usize;
                                    acc += gv * input[ii];
                                    if let Some(di) = dinput.as_deref_mut() {
                                        di[ii] += wv * gv;
                                    }
                                }
                            }
                        }
                        if let Some(dw) = dweight.as_deref_mut() {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// Nearest-neighbour 2× upsampling of `[c, h, w]`.
pub fn upsample2<T: Real>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            let src = &input[ch * h * w + (y / 2) * w..ch * h * w + (y / 2) * w + w];
            let dst = &mut out[ch * h2 * w2 + y * w2..ch * h2 * w2 + (y + 1) * w2];
            for x in 0..w2 {
                dst[x] = src[x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2×2 block. `dout` is `[c, 2h, 2w]`.
pub fn upsample2_backward<T: Real>(dout: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut din = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                din[ch * h * w + (y / 2) * w + x / 2] += dout[ch * h2 * w2 + y * w2 + x];
            }
        }
    }
    din
}

/// 2×2 average pooling of `[c, h, w]` (h, w even).
pub fn avgpool2<T: Real>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let quarter = T::c(0.25);
    let mut out = vec![T::zero(); c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let b = ch * h * w + 2 * y * w + 2 * x;
                out[ch * h2 * w2 + y * w2 + x] =
                    (input[b] + input[b + 1] + input[b + w] + input[b + w + 1]) * quarter;
            }
        }
    }
    out
}

/// Adjoint of [`avgpool2`]; `h`, `w` are the *input* sizes.
pub fn avgpool2_backward<T: Real>(dout: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let quarter = T::c(0.25);
    let mut din = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let g = dout[ch * h2 * w2 + y * w2 + x] * quarter;
                let b = ch * h * w + 2 * y * w + 2 * x;
                din[b] += g;
                din[b + 1] += g;
                din[b + w] += g;
                din[b + w + 1] += g;
            }
        }
    }
    din
}

/// Slope of the negative half of leaky ReLU.
pub const LEAK: f64 = 0.2;

/// Leaky ReLU scaled by √2 so activations keep unit variance.
#[inline]
pub fn lrelu<T: Real>(x: T) -> T {
    let gain = T::c(std::f64::consts::SQRT_2);
    if x > T::zero() {
        x * gain
    } else {
        x * gain * T::c(LEAK)
    }
}

/// Derivative of [`lrelu`] expressed through its *input*.
#[inline]
pub fn lrelu_grad<T: Real>(x: T) -> T {
    let gain = T::c(std::f64::consts::SQRT_2);
    if x > T::zero() {
        gain
    } else {
        gain * T::c(LEAK)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rnd(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    // Brute-force reference convolution written as the textbook definition.
    fn conv2d_ref(x: &[f64], cin: usize, h: usize, w: usize, wt: &[f64], cout: usize, k: usize) -> Vec<f64> {
        let p = (k / 2) as isize;
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut s = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (iy, ix) = (y + ky - p, xx + kx - p);
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    s += wt[((co * cin + ci) * k + ky as usize) * k + kx as usize]
                                        * x[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(co * h + y as usize) * w + xx as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &k in &[1usize, 3] {
            let (cin, cout, h, w) = (3, 4, 5, 6);
            let x = rnd(cin * h * w, &mut rng);
            let wt = rnd(cout * cin * k * k, &mut rng);
            let a = conv2d(&x, cin, h, w, &wt, cout, k);
            let b = conv2d_ref(&x, cin, h, w, &wt, cout, k);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_backward_is_adjoint() {
        // <conv(x), g> must equal <x, dx> and <w, dw> since conv is bilinear.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (cin, cout, h, w, k) = (2, 3, 4, 5, 3);
        let x = rnd(cin * h * w, &mut rng);
        let wt = rnd(cout * cin * k * k, &mut rng);
        let g = rnd(cout * h * w, &mut rng);
        let y = conv2d(&x, cin, h, w, &wt, cout, k);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; wt.len()];
        conv2d_backward(&x, cin, h, w, &wt, cout, k, &g, Some(&mut dx), Some(&mut dw));
        let via_x: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        let via_w: f64 = wt.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
    }

    #[test]
    fn conv3d_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Conv3dGeom { cin: 2, cout: 3, t: 5, h: 6, w: 6, st: 2, ss: 2 };
        let x = rnd(g.cin * g.t * g.h * g.w, &mut rng);
        let wt = rnd(g.cout * g.cin * 27, &mut rng);
        let y = conv3d(&x, &g, &wt);
        assert_eq!(y.len(), g.out_len());
        assert_eq!(g.out_dims(), (3, 3, 3));
        let gy = rnd(y.len(), &mut rng);
        let lhs: f64 = y.iter().zip(&gy).map(|(a, b)| a * b).sum();
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; wt.len()];
        conv3d_backward(&x, &g, &wt, &gy, Some(&mut dx), Some(&mut dw));
        let via_x: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        let via_w: f64 = wt.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
    }

    #[test]
    fn resampling_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (c, h, w) = (2, 3, 4);
        let x = rnd(c * h * w, &mut rng);
        let up = upsample2(&x, c, h, w);
        let g = rnd(up.len(), &mut rng);
        let lhs: f64 = up.iter().zip(&g).map(|(a, b)| a * b).sum();
        let back = upsample2_backward(&g, c, h, w);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let x = rnd(c * 4 * 6, &mut rng);
        let pooled = avgpool2(&x, c, 4, 6);
        let g = rnd(pooled.len(), &mut rng);
        let lhs: f64 = pooled.iter().zip(&g).map(|(a, b)| a * b).sum();
        let back = avgpool2_backward(&g, c, 4, 6);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
