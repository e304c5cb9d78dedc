use proptest::prelude::*;
use samlab_core::tensor::{
    gauss_fill, sym_eig, sym_eigvals, sym_eigvals_jacobi, top_eigs_lanczos, LanczosOptions, Mat, RngStream,
    SymTensor3, Vector,
};

fn random_sym(n: usize, seed: u64) -> Mat<f64> {
    let mut r = RngStream::new(seed, 77);
    let b = Mat::from_fn(n, n, |_, _| r.normal());
    b.add(&b.transpose()).unwrap().scaled(0.5)
}

fn random_tensor(d: usize, p: usize, seed: u64) -> SymTensor3<f64> {
    gauss_fill((d, p), 0.0, 1.0, &mut RngStream::new(seed, 1)).unwrap()
}

fn random_vec(n: usize, r: &mut RngStream) -> Vector<f64> {
    Vector::from_fn(n, |_| r.normal())
}

#[test]
fn contract_once_matches_triple_loop() {
    let q = random_tensor(3, 4, 5);
    let mut r = RngStream::new(5, 2);
    let u = random_vec(4, &mut r);
    let m = q.contract_once(&u).unwrap();
    for a in 0..3 {
        for j in 0..4 {
            let mut acc = 0.0;
            for i in 0..4 {
                acc += q.get(a, i, j) * u[i];
            }
            assert!((m[(a, j)] - acc).abs() <= 1e-14 * (1.0 + acc.abs()));
        }
    }
}

#[test]
fn contract_twice_matches_contract_once() {
    let q = random_tensor(5, 7, 6);
    let mut r = RngStream::new(6, 2);
    let (u, v) = (random_vec(7, &mut r), random_vec(7, &mut r));
    let w = q.contract_twice(&u, &v).unwrap();
    let m = q.contract_once(&u).unwrap();
    let alt = m.matvec(&v).unwrap();
    assert!(w.sub(&alt).unwrap().max_abs() < 1e-12);
    let swapped = q.contract_twice(&v, &u).unwrap();
    assert!(w.sub(&swapped).unwrap().max_abs() < 1e-12);
    assert_eq!(q.contract_twice(&Vector::zeros(7), &v).unwrap().max_abs(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contraction_is_bilinear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0, d in 1usize..6, p in 1usize..9) {
        let q = random_tensor(d, p, seed);
        let mut r = RngStream::new(seed, 3);
        let (u, w, v) = (random_vec(p, &mut r), random_vec(p, &mut r), random_vec(p, &mut r));
        let lhs = q.contract_twice(&u.scaled(a).add_scaled(b, &w).unwrap(), &v).unwrap();
        let rhs = q.contract_twice(&u, &v).unwrap().scaled(a)
            .add_scaled(b, &q.contract_twice(&w, &v).unwrap()).unwrap();
        let scale = 1.0 + lhs.max_abs().max(rhs.max_abs());
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-12 * scale);
    }
}

#[test]
fn eigensolver_residual_and_orthonormality() {
    let mut checked = 0;
    for seed in 0..110u64 {
        let n = 1 + (seed as usize * 7) % 50;
        let a = random_sym(n, seed);
        let norm = a.frobenius_norm();
        let e = sym_eig(&a).unwrap();
        for i in 0..n {
            let v = e.vector(i);
            let resid = a.matvec(&v).unwrap().add_scaled(-e.values[i], &v).unwrap().norm();
            assert!(resid <= 1e-8 * norm, "n={n} residual {resid}");
            if i > 0 {
                assert!(e.values[i - 1] >= e.values[i]);
            }
        }
        let gram = e.vectors.gram_cols();
        assert!(gram.sub(&Mat::identity(n)).unwrap().max_abs() < 1e-8);
        checked += 1;
    }
    assert!(checked >= 100);
}

#[test]
fn reconstruction_of_random_six_by_six() {
    let a = random_sym(6, 2024);
    let e = sym_eig(&a).unwrap();
    assert!(e.reconstruct().sub(&a).unwrap().max_abs() < 1e-8);
}

#[test]
fn householder_values_match_jacobi() {
    for seed in 0..40u64 {
        let n = 2 + (seed as usize * 5) % 60;
        let a = random_sym(n, seed + 500);
        let fast = sym_eigvals(&a).unwrap();
        let slow = sym_eigvals_jacobi(&a).unwrap();
        let scale = a.frobenius_norm();
        assert!(fast.sub(&slow).unwrap().max_abs() <= 1e-10 * scale, "n={n}");
    }
}

#[test]
fn eigenvalues_over_many_decades() {
    let mut r = RngStream::new(3, 3);
    let u: Vector<f64> = r.unit_vector(30);
    let mut a = Mat::outer(&u, &u).scaled(1e12);
    for i in 0..30 {
        a[(i, i)] += 1e-7 * (i as f64);
    }
    let v = sym_eigvals(&a).unwrap();
    assert!((v[0] - 1e12).abs() < 1e-2);
}

fn ntk_operator(j: &Mat<f64>) -> impl FnMut(&[f64], &mut [f64]) + '_ {
    move |u, out| {
        let g = j.t_matvec(u).unwrap();
        out.copy_from_slice(&j.matvec(&g).unwrap());
    }
}

#[test]
fn lanczos_matches_dense_on_ntk() {
    let mut r = RngStream::new(8, 8);
    let j = Mat::from_fn(20, 40, |_, _| r.normal());
    let dense = sym_eigvals(&j.gram_rows()).unwrap();
    let mut rng = RngStream::new(1, 1);
    let top = top_eigs_lanczos(20, ntk_operator(&j), 3, LanczosOptions::default(), &mut rng).unwrap();
    for i in 0..3 {
        assert!((top[i] - dense[i]).abs() <= 1e-6 * dense[i]);
    }
}

#[test]
fn lanczos_agrees_with_dense_up_to_two_hundred() {
    for (n, seed) in [(10usize, 1u64), (50, 2), (120, 3), (200, 4)] {
        let mut r = RngStream::new(seed, 8);
        let j = Mat::from_fn(n, 2 * n, |_, _| r.normal() / (n as f64).sqrt());
        let dense = sym_eigvals(&j.gram_rows()).unwrap();
        let mut rng = RngStream::new(seed, 2);
        let opts = LanczosOptions { tol: 1e-10, max_iter: None };
        let top = top_eigs_lanczos(n, ntk_operator(&j), 5, opts, &mut rng).unwrap();
        for i in 0..5 {
            assert!((top[i] - dense[i]).abs() <= 1e-8 * dense[0], "n={n} i={i}");
        }
    }
}

#[test]
fn lanczos_is_seed_deterministic() {
    let mut r = RngStream::new(9, 8);
    let j = Mat::from_fn(30, 10, |_, _| r.normal());
    let run = || {
        let mut rng = RngStream::new(5, 5);
        top_eigs_lanczos(30, ntk_operator(&j), 4, LanczosOptions::default(), &mut rng).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn gauss_fill_mean_within_clt_bound() {
    let n = 1_000_000;
    let v: Vector<f64> = gauss_fill(n, 0.5, 4.0, &mut RngStream::new(42, 0)).unwrap();
    let mean = v.iter().sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 5.0 * 2.0 / (n as f64).sqrt());
    let zero: Mat<f64> = gauss_fill((3, 4), 1.5, 0.0, &mut RngStream::new(1, 0)).unwrap();
    assert!(zero.as_slice().iter().all(|&x| x == 1.5));
}

#[test]
fn fills_are_reproducible() {
    let a: SymTensor3<f64> = gauss_fill((4, 6), 0.0, 1.0, &mut RngStream::new(7, 3)).unwrap();
    let b: SymTensor3<f64> = gauss_fill((4, 6), 0.0, 1.0, &mut RngStream::new(7, 3)).unwrap();
    assert_eq!(a.packed(), b.packed());
    assert_eq!(a.get(2, 1, 4), a.get(2, 4, 1));
}
