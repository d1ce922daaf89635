//! Motion codes from the synthesis Jacobian.
//!
//! For each frame of the generated pair the latent Gram matrix `JᵀJ` is
//! averaged over anchor latents, split into low-rank plus sparse parts by
//! robust PCA, and diagonalized. Leading directions of one frame projected
//! onto the null space of the other frame's leading subspace edit the first
//! frame while leaving the second nearly unchanged: projected former-frame
//! directions become backward codes `Ω_b`, projected latter-frame directions
//! forward codes `Ω_f`.

use std::ops::Range;
use std::path::Path;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{read_artifact, write_artifact, NamedArrays};
use crate::error::{Error, Result};
use crate::pairgan::{sample_noise, PairGenerator};
use crate::scalar::{Dual, Real};

/// Which rows of the pair output a Jacobian covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Former,
    Latter,
    Both,
}

impl Frame {
    fn rows(self, d_x: usize) -> Range<usize> {
        match self {
            Frame::Former => 0..d_x,
            Frame::Latter => d_x..2 * d_x,
            Frame::Both => 0..2 * d_x,
        }
    }
}

fn frame_len<T: Real>(g: &PairGenerator<T>) -> usize {
    3 * g.resolution() * g.resolution()
}

fn check_finite(j: &DMatrix<f64>) -> Result<()> {
    let bad: Vec<(usize, usize)> = (0..j.ncols())
        .flat_map(|c| (0..j.nrows()).map(move |r| (r, c)))
        .filter(|&(r, c)| !j[(r, c)].is_finite())
        .take(8)
        .collect();
    if !bad.is_empty() {
        return Err(Error::Numerical(format!("non-finite Jacobian entries at (row, col) {bad:?}")));
    }
    Ok(())
}

/// Jacobian-vector product `J_ω n` over all `2·d_x` outputs, exact via one
/// dual-number pass.
pub fn jvp<T: Real>(g: &PairGenerator<T>, latent: &[T], direction: &[T]) -> Result<Vec<T>> {
    g.check_latent(latent)?;
    g.check_latent(direction)?;
    let dual = g.synthesis.cast::<Dual<T>>();
    let x: Vec<Dual<T>> = latent.iter().zip(direction).map(|(&v, &t)| Dual::new(v, t)).collect();
    Ok(dual.forward(&x).output().iter().map(|v| v.eps).collect())
}

/// Forward-mode Jacobian of any map written over dual numbers, one pass per
/// input coordinate.
pub fn forward_jacobian<T: Real>(f: impl Fn(&[Dual<T>]) -> Vec<Dual<T>>, x: &[T]) -> DMatrix<f64> {
    let mut cols = Vec::with_capacity(x.len());
    for col in 0..x.len() {
        let xd: Vec<Dual<T>> =
            x.iter().enumerate().map(|(i, &v)| Dual::new(v, if i == col { T::one() } else { T::zero() })).collect();
        cols.push(f(&xd).iter().map(|v| v.eps.value()).collect::<Vec<f64>>());
    }
    let rows = cols.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows, x.len(), |r, c| cols[c][r])
}

/// `∂G_S(ω)_i / ∂ω_j` for the rows of `frame`, one forward-mode pass per
/// latent coordinate. `Both` stacks former rows above latter rows.
pub fn jacobian<T: Real>(g: &PairGenerator<T>, latent: &[T], frame: Frame) -> Result<DMatrix<f64>> {
    g.check_latent(latent)?;
    let rows = frame.rows(frame_len(g));
    let dual = g.synthesis.cast::<Dual<T>>();
    let j = forward_jacobian(|x| dual.forward(x).output()[rows.clone()].to_vec(), latent);
    check_finite(&j)?;
    Ok(j)
}

/// The same Jacobian assembled row block by row block with reverse-mode
/// passes (one vector-Jacobian product per output row).
pub fn jacobian_reverse<T: Real>(
    g: &PairGenerator<T>,
    latent: &[T],
    frame: Frame,
    block_rows: usize,
) -> Result<DMatrix<f64>> {
    g.check_latent(latent)?;
    let rows = frame.rows(frame_len(g));
    let cache = g.synthesis.forward(latent);
    let n_out = cache.output().len();
    let mut j = DMatrix::zeros(rows.len(), latent.len());
    let block_rows = block_rows.max(1);
    let mut seed = vec![T::zero(); n_out];
    for start in (0..rows.len()).step_by(block_rows) {
        for r in start..(start + block_rows).min(rows.len()) {
            seed[rows.start + r] = T::one();
            let row = g.synthesis.backward(&cache, &seed, None);
            seed[rows.start + r] = T::zero();
            for (c, v) in row.iter().enumerate() {
                j[(r, c)] = v.value();
            }
        }
    }
    check_finite(&j)?;
    Ok(j)
}

/// `JᵀJ`, symmetrized so that it is exactly symmetric.
pub fn gram(j: &DMatrix<f64>) -> DMatrix<f64> {
    let m = j.transpose() * j;
    (&m + m.transpose()) * 0.5
}

/// `‖G_S(ω + αn) − G_S(ω) − α J_ω n‖₂`.
pub fn first_order_edit_error<T: Real>(g: &PairGenerator<T>, latent: &[T], direction: &[T], alpha: f64) -> Result<f64> {
    let a = T::c(alpha);
    let moved: Vec<T> = latent.iter().zip(direction).map(|(&w, &n)| w + a * n).collect();
    let y1 = g.synthesize_flat(&moved);
    let y0 = g.synthesize_flat(latent);
    let jn = jvp(g, latent, direction)?;
    Ok(y1
        .iter()
        .zip(&y0)
        .zip(&jn)
        .map(|((&p, &q), &t)| (p - q - a * t).value().powi(2))
        .sum::<f64>()
        .sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpcaConfig {
    /// Sparsity weight; `None` means `1/√d`.
    pub lambda: Option<f64>,
    /// Initial penalty; `None` means `1.25 / ‖M‖₂`.
    pub rho: Option<f64>,
    /// Penalty growth factor.
    pub rho_growth: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RpcaConfig {
    fn default() -> Self {
        Self { lambda: None, rho: None, rho_growth: 1.5, tol: 1e-6, max_iter: 1000 }
    }
}

#[derive(Clone, Debug)]
pub struct RpcaResult {
    pub low_rank: DMatrix<f64>,
    pub sparse: DMatrix<f64>,
    pub iterations: usize,
    /// Final `‖M − L − S‖_F / ‖M‖_F`.
    pub residual: f64,
    pub converged: bool,
    pub lambda: f64,
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Singular-value thresholding `U · shrink(Σ, t) · Vᵀ`.
fn svt(m: DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let s = svd.singular_values.map(|v| (v - t).max(0.0));
    let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > 0.0).collect();
    let mut out = DMatrix::zeros(u.nrows(), vt.ncols());
    for &i in &keep {
        out += u.column(i) * vt.row(i) * s[i];
    }
    out
}

/// Robust PCA `min ‖L‖_* + λ‖S‖₁ s.t. L + S = M` by the inexact augmented
/// Lagrangian (ADMM) iteration: SVT for `L`, soft thresholding for `S`, a
/// dual ascent step, and geometric penalty growth.
pub fn rpca_admm(m: &DMatrix<f64>, config: &RpcaConfig) -> Result<RpcaResult> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("rpca input has non-finite entries".into()));
    }
    let (r, c) = m.shape();
    let lambda = config.lambda.unwrap_or(1.0 / (r.max(c) as f64).sqrt());
    let norm_f = m.norm();
    if norm_f == 0.0 {
        return Ok(RpcaResult {
            low_rank: DMatrix::zeros(r, c),
            sparse: DMatrix::zeros(r, c),
            iterations: 1,
            residual: 0.0,
            converged: true,
            lambda,
        });
    }
    let norm2 = m.clone().svd(false, false).singular_values.max();
    let norm_inf = m.amax() / lambda;
    let mut y = m / norm2.max(norm_inf);
    let mut mu = config.rho.unwrap_or(1.25 / norm2);
    let mu_max = mu * 1e7;
    let mut l = DMatrix::zeros(r, c);
    let mut s = DMatrix::zeros(r, c);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        l = svt(m - &s + &y / mu, 1.0 / mu);
        s = (m - &l + &y / mu).map(|v| soft(v, lambda / mu));
        let z = m - &l - &s;
        residual = z.norm() / norm_f;
        y += &z * mu;
        mu = (mu * config.rho_growth).min(mu_max);
        if residual < config.tol {
            break;
        }
    }
    let converged = residual < config.tol;
    if !converged && residual > 10.0 * config.tol {
        warn!("rpca did not converge: residual {residual:.3e} after {iterations} iterations");
    }
    Ok(RpcaResult { low_rank: l, sparse: s, iterations, residual, converged, lambda })
}

/// Orthonormal basis of a symmetric PSD matrix with singular values in
/// descending order; each column's first nonzero entry is positive.
///
/// Singular values whose left and right vectors disagree in sign belong to
/// negative eigenvalues and are clipped to zero.
pub fn svd_basis(l: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let sym = (l + l.transpose()) * 0.5;
    let n = sym.nrows();
    let svd = sym.svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let vals: Vec<f64> = (0..n)
        .map(|i| {
            let s = svd.singular_values[i];
            if u.column(i).dot(&v.column(i)) < 0.0 {
                0.0
            } else {
                s
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let mut basis = DMatrix::zeros(n, n);
    let mut singvals = DVector::zeros(n);
    for (k, &i) in order.iter().enumerate() {
        let mut col = v.column(i).into_owned();
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                col = -col;
            }
        }
        basis.set_column(k, &col);
        singvals[k] = vals[i];
    }
    (basis, singvals)
}

/// Number of singular values above `tau · singvals[0]`.
pub fn effective_rank(singvals: &[f64], tau: f64) -> usize {
    match singvals.first() {
        Some(&top) if top > 0.0 => singvals.iter().filter(|&&s| s > tau * top).count(),
        _ => 0,
    }
}

/// Norm below which a projected direction is treated as zero.
pub const NULL_EPS: f64 = 1e-6;

/// `(I − V Vᵀ) v`, renormalized. Fails with
/// [`Error::NoSelectiveDirection`] when the projection vanishes.
pub fn project_to_null(v: &DVector<f64>, v_b1: &DMatrix<f64>) -> Result<DVector<f64>> {
    let p = v - v_b1 * (v_b1.transpose() * v);
    let norm = p.norm();
    if norm < NULL_EPS {
        return Err(Error::NoSelectiveDirection { norm });
    }
    Ok(p / norm)
}

/// Which leading singular vectors are candidates for projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidates {
    /// Only the first `r` (effective rank) columns.
    TopRank,
    /// Every column in singular-value order: the top `r` first, then the
    /// rest when fewer than `m` of those survive.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub m: usize,
    pub tau: f64,
    pub anchor_count: usize,
    pub anchor_seed: u64,
    pub rpca: RpcaConfig,
    pub candidates: Candidates,
    /// Edit strength for the selectivity diagnostic.
    pub diagnostic_alpha: f64,
    /// Held-out anchors for the selectivity diagnostic.
    pub diagnostic_anchors: usize,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            m: 30,
            tau: 1e-3,
            anchor_count: 8,
            anchor_seed: 0,
            rpca: RpcaConfig::default(),
            candidates: Candidates::All,
            diagnostic_alpha: 3.0,
            diagnostic_anchors: 16,
        }
    }
}

/// Backward and forward motion codes with their diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionBasis {
    /// `m × d_ω`, rows edit the former frame.
    pub omega_b: DMatrix<f64>,
    /// `m × d_ω`, rows edit the latter frame.
    pub omega_f: DMatrix<f64>,
    pub r_a: usize,
    pub r_b: usize,
    pub singvals_a: Vec<f64>,
    pub singvals_b: Vec<f64>,
    pub anchors: Vec<Vec<f64>>,
    /// Per backward code: mean ‖Δlatter‖ / mean ‖Δformer‖.
    pub selectivity_b: Vec<f64>,
    /// Per forward code: mean ‖Δformer‖ / mean ‖Δlatter‖.
    pub selectivity_f: Vec<f64>,
}

impl MotionBasis {
    pub fn m(&self) -> usize {
        self.omega_b.nrows()
    }

    pub fn dim(&self) -> usize {
        self.omega_b.ncols()
    }

    /// Basis with the same shape whose rows are independent random unit
    /// vectors (the random-code ablation).
    pub fn random_like(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            let mut m = DMatrix::zeros(self.m(), self.dim());
            for r in 0..self.m() {
                let v = DVector::from_vec(sample_noise::<f64, _>(self.dim(), &mut rng));
                m.set_row(r, &(&v / v.norm()).transpose());
            }
            m
        };
        let omega_b = draw();
        let omega_f = draw();
        Self { omega_b, omega_f, selectivity_b: vec![], selectivity_f: vec![], ..self.clone() }
    }
}

/// Latent Gram matrices of the former and latter frames averaged over
/// `anchors`.
pub fn frame_grams<T: Real>(g: &PairGenerator<T>, anchors: &[Vec<T>]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = g.config.d_w;
    let d_x = frame_len(g);
    let mut ga = DMatrix::zeros(d, d);
    let mut gb = DMatrix::zeros(d, d);
    for w in anchors {
        let j = jacobian(g, w, Frame::Both)?;
        ga += gram(&j.rows(0, d_x).into_owned());
        gb += gram(&j.rows(d_x, d_x).into_owned());
    }
    let n = anchors.len().max(1) as f64;
    Ok((ga / n, gb / n))
}

/// Projects candidate columns of `v_edit` off `v_keep` and orthogonalizes
/// the survivors, keeping at most `m`.
fn selective_codes(v_edit: &DMatrix<f64>, count: usize, v_keep: &DMatrix<f64>, m: usize) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(m);
    for i in 0..count {
        if out.len() == m {
            break;
        }
        let Ok(mut p) = project_to_null(&v_edit.column(i).into_owned(), v_keep) else {
            continue;
        };
        for q in &out {
            p -= q * q.dot(&p);
        }
        let n = p.norm();
        if n < NULL_EPS {
            continue;
        }
        out.push(p / n);
    }
    out
}

/// Mean pixel change of each frame when `direction` is applied at strength
/// `alpha` to every anchor: `(mean ‖Δformer‖, mean ‖Δlatter‖)`.
pub fn edit_effect<T: Real>(g: &PairGenerator<T>, anchors: &[Vec<T>], direction: &[f64], alpha: f64) -> (f64, f64) {
    let d_x = frame_len(g);
    let mut da = 0.0;
    let mut db = 0.0;
    for w in anchors {
        let moved: Vec<T> = w.iter().zip(direction).map(|(&v, &n)| v + T::c(alpha * n)).collect();
        let y0 = g.synthesize_flat(w);
        let y1 = g.synthesize_flat(&moved);
        let norm = |r: Range<usize>| r.map(|i| (y1[i] - y0[i]).value().powi(2)).sum::<f64>().sqrt();
        da += norm(0..d_x);
        db += norm(d_x..2 * d_x);
    }
    let n = anchors.len().max(1) as f64;
    (da / n, db / n)
}

pub fn sample_anchors<T: Real>(g: &PairGenerator<T>, count: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| g.sample_latent(&mut rng).values).collect()
}

/// Full pipeline: anchors, averaged Grams, RPCA, bases, ranks, null-space
/// projection, and selectivity on held-out anchors (seed `anchor_seed + 1`).
pub fn compute_motion_basis<T: Real>(g: &PairGenerator<T>, config: &MotionConfig) -> Result<MotionBasis> {
    if config.m == 0 || config.anchor_count == 0 {
        return Err(Error::Config("m and anchor_count must be positive".into()));
    }
    let anchors = sample_anchors(g, config.anchor_count, config.anchor_seed);
    let (gram_a, gram_b) = frame_grams(g, &anchors)?;
    let fa = rpca_admm(&gram_a, &config.rpca)?;
    let fb = rpca_admm(&gram_b, &config.rpca)?;
    info!(
        "rpca: former {} iters (residual {:.2e}), latter {} iters (residual {:.2e})",
        fa.iterations, fa.residual, fb.iterations, fb.residual
    );
    let (va, sa) = svd_basis(&fa.low_rank);
    let (vb, sb) = svd_basis(&fb.low_rank);
    let r_a = effective_rank(sa.as_slice(), config.tau);
    let r_b = effective_rank(sb.as_slice(), config.tau);
    info!("effective ranks: former {r_a}, latter {r_b}");
    let d = g.config.d_w;
    let count = |r: usize| match config.candidates {
        Candidates::TopRank => r,
        Candidates::All => d,
    };
    let va1 = va.columns(0, r_a).into_owned();
    let vb1 = vb.columns(0, r_b).into_owned();
    let backward = selective_codes(&va, count(r_a), &vb1, config.m);
    let forward = selective_codes(&vb, count(r_b), &va1, config.m);
    let survived = backward.len().min(forward.len());
    if survived < config.m {
        return Err(Error::InsufficientMotionCodes { needed: config.m, survived });
    }
    let stack = |codes: &[DVector<f64>]| DMatrix::from_fn(config.m, d, |r, c| codes[r][c]);
    let omega_b = stack(&backward);
    let omega_f = stack(&forward);

    let held_out = sample_anchors(g, config.diagnostic_anchors, config.anchor_seed.wrapping_add(1));
    let alpha = config.diagnostic_alpha;
    let selectivity = |codes: &DMatrix<f64>, edits_former: bool| -> Vec<f64> {
        (0..codes.nrows())
            .map(|r| {
                let dir: Vec<f64> = codes.row(r).iter().copied().collect();
                let (da, db) = edit_effect(g, &held_out, &dir, alpha);
                let (kept, edited) = if edits_former { (db, da) } else { (da, db) };
                if edited > 0.0 {
                    kept / edited
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    };
    let selectivity_b = selectivity(&omega_b, true);
    let selectivity_f = selectivity(&omega_f, false);
    Ok(MotionBasis {
        omega_b,
        omega_f,
        r_a,
        r_b,
        singvals_a: sa.iter().copied().collect(),
        singvals_b: sb.iter().copied().collect(),
        anchors: anchors.iter().map(|a| a.iter().map(|v| v.value()).collect()).collect(),
        selectivity_b,
        selectivity_f,
    })
}

/// `ω + α · direction`.
pub fn edit_latent<T: Real>(latent: &[T], direction: &[T], alpha: T) -> Vec<T> {
    latent.iter().zip(direction).map(|(&w, &n)| w + alpha * n).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisManifest {
    pub format_version: u32,
    pub m: usize,
    pub d_w: usize,
    pub r_a: usize,
    pub r_b: usize,
    pub tau: f64,
    pub lambda: Option<f64>,
    pub tol: f64,
    pub anchor_count: usize,
    pub anchor_seed: u64,
    pub candidates: Candidates,
    pub checkpoint_hash: String,
    /// Set for the random-code ablation.
    pub random_seed: Option<u64>,
}

pub fn save_basis(dir: &Path, name: &str, basis: &MotionBasis, manifest: &BasisManifest) -> Result<String> {
    let mut arrays = NamedArrays::default();
    let mat = |m: &DMatrix<f64>| {
        ndarray::Array2::from_shape_fn((m.nrows(), m.ncols()), |(r, c)| m[(r, c)]).into_dyn()
    };
    let vec = |v: &[f64]| ndarray::Array1::from_vec(v.to_vec()).into_dyn();
    arrays.push("omega_b", mat(&basis.omega_b));
    arrays.push("omega_f", mat(&basis.omega_f));
    arrays.push("singvals_a", vec(&basis.singvals_a));
    arrays.push("singvals_b", vec(&basis.singvals_b));
    arrays.push("selectivity_b", vec(&basis.selectivity_b));
    arrays.push("selectivity_f", vec(&basis.selectivity_f));
    let d = basis.dim();
    let anchors: Vec<f64> = basis.anchors.iter().flatten().copied().collect();
    arrays.push(
        "anchors",
        ndarray::Array2::from_shape_vec((basis.anchors.len(), d), anchors).expect("anchor size").into_dyn(),
    );
    write_artifact(dir, name, manifest, &arrays)
}

pub fn load_basis(dir: &Path, name: &str) -> Result<(MotionBasis, BasisManifest, String)> {
    let art = read_artifact::<BasisManifest>(dir, name)?;
    let mat = |name: &str| -> Result<DMatrix<f64>> {
        let a = art.arrays.require(name)?;
        if a.ndim() != 2 {
            return Err(Error::Format(format!("'{name}' must be a matrix")));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        Ok(DMatrix::from_fn(r, c, |i, j| a[[i, j]]))
    };
    let vec = |name: &str| -> Result<Vec<f64>> { Ok(art.arrays.require(name)?.iter().copied().collect()) };
    let omega_b = mat("omega_b")?;
    let omega_f = mat("omega_f")?;
    let m = &art.manifest;
    if omega_b.shape() != (m.m, m.d_w) || omega_f.shape() != (m.m, m.d_w) {
        return Err(Error::Format(format!("basis arrays do not match manifest m={} d_w={}", m.m, m.d_w)));
    }
    let anchors = mat("anchors")?;
    let basis = MotionBasis {
        omega_b,
        omega_f,
        r_a: m.r_a,
        r_b: m.r_b,
        singvals_a: vec("singvals_a")?,
        singvals_b: vec("singvals_b")?,
        anchors: anchors.row_iter().map(|r| r.iter().copied().collect()).collect(),
        selectivity_b: vec("selectivity_b")?,
        selectivity_f: vec("selectivity_f")?,
    };
    Ok((basis, art.manifest, art.hash))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_jacobian_is_exact() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 4.0, 3.0, 0.25]);
        let f = |x: &[Dual<f64>]| -> Vec<Dual<f64>> {
            (0..3).map(|r| (0..2).map(|c| x[c] * Dual::constant(a[(r, c)])).sum()).collect()
        };
        assert_eq!(forward_jacobian(f, &[0.3, -7.0]), a);
    }

    #[test]
    fn effective_rank_cases() {
        assert_eq!(effective_rank(&[10.0, 5.0, 1e-9], 1e-3), 2);
        assert_eq!(effective_rank(&[0.0, 0.0], 1e-3), 0);
        assert_eq!(effective_rank(&[2.0; 7], 1e-3), 7);
        assert_eq!(effective_rank(&[], 1e-3), 0);
    }

    #[test]
    fn svd_basis_simple_inputs() {
        let (v, s) = svd_basis(&DMatrix::identity(4, 4));
        assert!(s.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert!((v.transpose() * &v - DMatrix::identity(4, 4)).amax() < 1e-12);
        let (v, s) = svd_basis(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 0.0])));
        assert_eq!(s.as_slice(), &[4.0, 1.0, 0.0]);
        assert!((v.column(0) - DVector::from_vec(vec![0.0, 1.0, 0.0])).amax() < 1e-12);
        assert!((v.column(1) - DVector::from_vec(vec![1.0, 0.0, 0.0])).amax() < 1e-12);
        assert!((v.column(2) - DVector::from_vec(vec![0.0, 0.0, 1.0])).amax() < 1e-12);
        // A negative eigenvalue is clipped.
        let (_, s) = svd_basis(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -1e-9])));
        assert_eq!(s.as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn rpca_zero_matrix() {
        let r = rpca_admm(&DMatrix::zeros(5, 5), &RpcaConfig::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.low_rank.amax(), 0.0);
        assert_eq!(r.sparse.amax(), 0.0);
        let mut bad = DMatrix::zeros(2, 2);
        bad[(0, 0)] = f64::NAN;
        assert!(rpca_admm(&bad, &RpcaConfig::default()).is_err());
    }

    #[test]
    fn projection_fixed_point_and_annihilation() {
        let vb1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let v = DVector::from_vec(vec![0.0, 0.6, 0.8]);
        assert!((project_to_null(&v, &vb1).unwrap() - &v).amax() < 1e-15);
        let inside = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(matches!(project_to_null(&inside, &vb1), Err(Error::NoSelectiveDirection { .. })));
    }

    #[test]
    fn edit_latent_inverts() {
        let w: Vec<f64> = vec![0.5, -1.0, 2.0];
        let d = vec![0.0, 0.6, 0.8];
        assert_eq!(edit_latent(&w, &d, 0.0), w);
        let back = edit_latent(&edit_latent(&w, &d, 1.7), &d, -1.7);
        assert!(back.iter().zip(&w).all(|(a, b)| (a - b).abs() < 1e-15));
    }
}
