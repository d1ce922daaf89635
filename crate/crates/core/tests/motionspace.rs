use motionvid_core::motionspace::{
    compute_motion_basis, edit_effect, effective_rank, first_order_edit_error, frame_grams, gram, jacobian,
    jacobian_reverse, load_basis, project_to_null, rpca_admm, save_basis, svd_basis, BasisManifest, Candidates, Frame,
    MotionConfig, RpcaConfig,
};
use motionvid_core::pairgan::{GeneratorConfig, PairGenerator};
use motionvid_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn orthonormal(d: usize, r: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    gaussian(d, r, rng).qr().q()
}

fn small_generator(seed: u64) -> PairGenerator<f64> {
    let cfg = GeneratorConfig { d_z: 8, d_w: 8, mapping_layers: 2, mapping_lr_mul: 0.01, channels: vec![8, 8, 4] };
    PairGenerator::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Rank-5 PSD plus symmetric 1% sparse corruption of 10× the mean entry.
fn rpca_instance(seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = gaussian(d, 5, &mut rng);
    let l0 = &u * u.transpose();
    let mag = 10.0 * l0.iter().map(|v| v.abs()).sum::<f64>() / (d * d) as f64;
    let mut s0 = DMatrix::zeros(d, d);
    let target = (0.01 * (d * d) as f64).round() as usize;
    let mut placed = 0;
    while placed < target {
        let (i, j) = (rng.random_range(0..d), rng.random_range(0..d));
        if s0[(i, j)] != 0.0 {
            continue;
        }
        let v = if rng.random_bool(0.5) { mag } else { -mag };
        s0[(i, j)] = v;
        s0[(j, i)] = v;
        placed += if i == j { 1 } else { 2 };
    }
    (l0.clone() + s0, l0)
}

#[test]
fn rpca_recovers_planted_low_rank_part() {
    let cfg = RpcaConfig { lambda: Some(1.0 / 8.0), ..Default::default() };
    for seed in 0..20 {
        let (m, l0) = rpca_instance(seed);
        let r = rpca_admm(&m, &cfg).unwrap();
        assert!(r.converged && r.iterations <= 1000, "instance {seed}: {} iterations", r.iterations);
        let err = rel_frobenius(&r.low_rank, &l0);
        assert!(err < 1e-2, "instance {seed}: relative error {err}");
        let resid = (&m - &r.low_rank - &r.sparse).norm() / m.norm();
        assert!(resid < cfg.tol);
        let (_, s) = svd_basis(&r.low_rank);
        assert_eq!(effective_rank(s.as_slice(), 1e-3), 5);
    }
}

#[test]
fn rpca_on_low_rank_input_leaves_sparse_part_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u = gaussian(32, 3, &mut rng);
    let m = &u * u.transpose();
    let r = rpca_admm(&m, &RpcaConfig::default()).unwrap();
    assert!(rel_frobenius(&r.low_rank, &m) < 1e-3);
    assert!(r.sparse.norm() < 1e-3 * m.norm());
}

#[test]
fn svd_basis_agrees_with_symmetric_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let q = orthonormal(12, 12, &mut rng);
        let vals: Vec<f64> = (0..12).map(|i| 2f64.powi(-i)).collect();
        let m = &q * DMatrix::from_diagonal(&DVector::from_vec(vals.clone())) * q.transpose();
        let (v, s) = svd_basis(&m);
        for (a, b) in s.iter().zip(&vals) {
            assert!((a - b).abs() < 1e-10);
        }
        // Principal angles between leading subspaces are zero.
        for r in [1, 3, 6] {
            let p = v.columns(0, r) * v.columns(0, r).transpose();
            let p0 = q.columns(0, r) * q.columns(0, r).transpose();
            assert!((p - p0).norm() < 1e-8);
        }
        assert!((v.transpose() * &v - DMatrix::identity(12, 12)).norm() < 1e-10);
        for c in 0..12 {
            let first = v.column(c).iter().copied().find(|x| x.abs() > 1e-12).unwrap();
            assert!(first > 0.0);
        }
    }
}

#[test]
fn svd_basis_clips_negative_eigenvalues() {
    let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -2.0, 1.0]));
    let (_, s) = svd_basis(&m);
    assert_eq!(s.as_slice(), &[3.0, 1.0, 0.0]);
}

#[test]
fn jacobian_matches_finite_differences_at_five_anchors() {
    let g = small_generator(1);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let h = 1e-5;
    for _ in 0..5 {
        let w = g.sample_latent(&mut rng).values;
        let j = jacobian(&g, &w, Frame::Both).unwrap();
        let mut fd = DMatrix::zeros(j.nrows(), j.ncols());
        for c in 0..w.len() {
            let mut p = w.clone();
            p[c] += h;
            let mut q = w.clone();
            q[c] -= h;
            let (yp, yq) = (g.synthesize_flat(&p), g.synthesize_flat(&q));
            for r in 0..j.nrows() {
                fd[(r, c)] = (yp[r] - yq[r]) / (2.0 * h);
            }
        }
        let err = rel_frobenius(&j, &fd);
        assert!(err < 1e-3, "relative Frobenius error {err}");
    }
}

#[test]
fn forward_and_reverse_jacobians_agree() {
    let g = small_generator(2);
    let w = g.sample_latent(&mut ChaCha8Rng::seed_from_u64(3)).values;
    for frame in [Frame::Former, Frame::Latter, Frame::Both] {
        let a = jacobian(&g, &w, frame).unwrap();
        let b = jacobian_reverse(&g, &w, frame, 64).unwrap();
        assert_eq!(a.shape(), b.shape());
        assert!((a - b).abs().max() < 1e-10);
    }
    let both = jacobian(&g, &w, Frame::Both).unwrap();
    let former = jacobian(&g, &w, Frame::Former).unwrap();
    assert_eq!(both.rows(0, former.nrows()), former);
    assert!(jacobian(&g, &w[..3], Frame::Both).is_err());
}

#[test]
fn grams_are_symmetric_psd() {
    let g = small_generator(3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let anchors: Vec<Vec<f64>> = (0..3).map(|_| g.sample_latent(&mut rng).values).collect();
    let (ga, gb) = frame_grams(&g, &anchors).unwrap();
    for m in [&ga, &gb] {
        assert_eq!(m, &m.transpose());
        assert!(m.clone().symmetric_eigen().eigenvalues.min() > -1e-9 * m.norm());
    }
    let j = jacobian(&g, &anchors[0], Frame::Former).unwrap();
    let gm = gram(&j);
    assert!((gm - j.transpose() * &j).norm() < 1e-12 * j.norm().powi(2));
}

#[test]
fn first_order_error_shrinks_quadratically() {
    let g = small_generator(4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = g.sample_latent(&mut rng).values;
    let mut dir: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= n);
    let e1 = first_order_edit_error(&g, &w, &dir, 1e-2).unwrap();
    let e2 = first_order_edit_error(&g, &w, &dir, 5e-3).unwrap();
    assert!(e2 < 0.5 * e1 || e1 < 1e-12, "{e1} -> {e2}");
}

#[test]
fn projection_properties_on_a_hundred_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let d = rng.random_range(4..40);
        let r = rng.random_range(1..d);
        let vb1 = orthonormal(d, r, &mut rng);
        let v = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let p = project_to_null(&v, &vb1).unwrap();
        assert!((vb1.transpose() * &p).norm() < 1e-6);
        let pp = project_to_null(&p, &vb1).unwrap();
        assert!((&pp - &p).abs().max() < 1e-8);
        let inside = &vb1 * DVector::from_iterator(r, (0..r).map(|_| rng.sample::<f64, _>(StandardNormal)));
        assert!(matches!(project_to_null(&inside, &vb1), Err(Error::NoSelectiveDirection { .. })));
        let null = DMatrix::identity(d, d) - &vb1 * vb1.transpose();
        let fixed = (&null * &v).normalize();
        let q = project_to_null(&fixed, &vb1).unwrap();
        assert!((&q - &fixed).abs().max() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_orthogonal_unit_and_idempotent(seed in 0u64..100_000, d in 3usize..24, frac in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = ((d as f64 * frac) as usize).clamp(1, d - 1);
        let vb1 = orthonormal(d, r, &mut rng);
        let v = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let p = project_to_null(&v, &vb1).unwrap();
        prop_assert!((p.norm() - 1.0).abs() < 1e-12);
        prop_assert!((vb1.transpose() * &p).norm() < 1e-6);
        let pp = project_to_null(&p, &vb1).unwrap();
        prop_assert!((&pp - &p).abs().max() < 1e-8);
    }

    #[test]
    fn effective_rank_counts_values_above_threshold(vals in prop::collection::vec(0.0f64..10.0, 1..20), tau in 1e-4f64..0.5) {
        let mut s = vals.clone();
        s.sort_by(|a, b| b.total_cmp(a));
        let r = effective_rank(&s, tau);
        if s[0] == 0.0 {
            prop_assert_eq!(r, 0);
        } else {
            prop_assert_eq!(r, s.iter().filter(|&&v| v > tau * s[0]).count());
            prop_assert!(r >= 1);
        }
    }

    #[test]
    fn rpca_output_sums_back_to_input(seed in 0u64..10_000, d in 4usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(d, 2, &mut rng);
        let m = &a * a.transpose();
        let r = rpca_admm(&m, &RpcaConfig::default()).unwrap();
        prop_assert!(r.converged);
        prop_assert!((&m - &r.low_rank - &r.sparse).norm() / m.norm() < 1e-6);
    }
}

#[test]
fn motion_basis_codes_are_orthonormal() {
    let g = small_generator(5);
    let cfg = MotionConfig { m: 2, candidates: Candidates::All, diagnostic_anchors: 4, ..Default::default() };
    let basis = compute_motion_basis(&g, &cfg).unwrap();
    assert_eq!(basis.omega_b.shape(), (2, 8));
    assert_eq!(basis.selectivity_b.len(), 2);
    for codes in [&basis.omega_b, &basis.omega_f] {
        let gram = codes * codes.transpose();
        assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-10);
    }
    for r in 0..2 {
        let dir: Vec<f64> = basis.omega_b.row(r).iter().copied().collect();
        let (da, db) = edit_effect(&g, &[basis.anchors[0].clone()], &dir, 0.0);
        assert_eq!((da, db), (0.0, 0.0));
    }
    let strict = MotionConfig { m: 9, ..cfg };
    assert!(matches!(compute_motion_basis(&g, &strict), Err(Error::InsufficientMotionCodes { .. })));
}

#[test]
fn basis_archive_round_trip() {
    let g = small_generator(6);
    let cfg = MotionConfig { m: 2, candidates: Candidates::All, diagnostic_anchors: 2, ..Default::default() };
    let basis = compute_motion_basis(&g, &cfg).unwrap();
    let manifest = BasisManifest {
        format_version: 1,
        m: 2,
        d_w: 8,
        r_a: basis.r_a,
        r_b: basis.r_b,
        tau: cfg.tau,
        lambda: None,
        tol: cfg.rpca.tol,
        anchor_count: cfg.anchor_count,
        anchor_seed: cfg.anchor_seed,
        candidates: cfg.candidates,
        checkpoint_hash: "abc".into(),
        random_seed: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let hash = save_basis(dir.path(), "basis", &basis, &manifest).unwrap();
    let (back, m, h) = load_basis(dir.path(), "basis").unwrap();
    assert_eq!(back, basis);
    assert_eq!(m, manifest);
    assert_eq!(h, hash);
}
