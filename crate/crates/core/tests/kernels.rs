//! Kernels, Gram matrices, MMD² estimators and InfoNCE.

use padrec::gradcheck::grad_check;
use padrec::kernels::{
    gram_matrix, infonce_value, kernel_eval, mmd2_biased, mmd2_biased_value, mmd2_unbiased_value, permutation_test,
    KernelSpec, MultiKernel,
};
use padrec::{ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(&[rows, cols], |_| Distribution::<f64>::sample(&StandardNormal, rng))
}

fn bank_specs() -> Vec<KernelSpec> {
    vec![
        KernelSpec::Gaussian { sigma: 0.5 },
        KernelSpec::Gaussian { sigma: 2.0 },
        KernelSpec::Laplacian { sigma: 1.0 },
        KernelSpec::Linear,
    ]
}

#[test]
fn kernel_hand_values() {
    let g = KernelSpec::Gaussian { sigma: 1.0 };
    assert_eq!(kernel_eval(&g, &[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
    let v = kernel_eval(&g, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
    assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    assert_eq!(
        kernel_eval(&KernelSpec::Linear, &[1.0, 2.0], &[3.0, 4.0]).unwrap(),
        11.0
    );
    let l = kernel_eval(&KernelSpec::Laplacian { sigma: 2.0 }, &[1.0, 0.0], &[0.0, 2.0]).unwrap();
    assert!((l - (-3.0f64 / 4.0).exp()).abs() < 1e-15);
    let c = kernel_eval(&KernelSpec::Cosine, &[1.0, 0.0], &[0.0, 5.0]).unwrap();
    assert!((c - 1.0).abs() < 1e-15);
}

#[test]
fn kernel_errors() {
    assert!(kernel_eval(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]).is_err());
    assert!(kernel_eval(&KernelSpec::Cosine, &[0.0, 0.0], &[1.0, 2.0]).is_err());
    assert!(kernel_eval(&KernelSpec::Gaussian { sigma: 0.0 }, &[1.0], &[1.0]).is_err());
    assert!(MultiKernel::new(vec![(1.0, KernelSpec::Cosine)]).is_err());
    assert!(MultiKernel::new(vec![(-1.0, KernelSpec::Linear)]).is_err());
    assert!(MultiKernel::new(vec![]).is_err());
}

#[test]
fn default_bank_shape() {
    let b = MultiKernel::default_gaussian_bank();
    assert_eq!(b.len(), 5);
    assert_eq!(b.beta_sum(), 5.0);
    let sigmas: Vec<f64> = b
        .entries()
        .iter()
        .map(|(_, s)| match s {
            KernelSpec::Gaussian { sigma } => *sigma,
            _ => panic!("non-gaussian in default bank"),
        })
        .collect();
    assert_eq!(sigmas, vec![0.125, 0.25, 0.5, 1.0, 2.0]);
}

#[test]
fn gram_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = normal(&mut rng, 5, 3);
    let lin = gram_matrix(&KernelSpec::Linear, &x, &x).unwrap();
    let gau = gram_matrix(&KernelSpec::Gaussian { sigma: 0.7 }, &x, &x).unwrap();
    for i in 0..5 {
        assert_eq!(gau.data()[i * 5 + i], 1.0);
        for j in 0..5 {
            assert_eq!(lin.data()[i * 5 + j], lin.data()[j * 5 + i]);
        }
    }
    let a = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.5, 2.0]).unwrap();
    let b = Tensor::matrix(2, 2, vec![0.0, 1.0, -1.0, 1.0]).unwrap();
    for spec in bank_specs().into_iter().chain([KernelSpec::Cosine]) {
        let g = gram_matrix(&spec, &a, &b).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(g.data()[i * 2 + j], kernel_eval(&spec, a.row(i), b.row(j)).unwrap());
            }
        }
    }
}

#[test]
fn mmd_small_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (x, y) = (normal(&mut rng, 4, 2), normal(&mut rng, 4, 2));
    let mk = MultiKernel::uniform(bank_specs(), 2.0).unwrap();
    let k = |a: &[f64], b: &[f64]| mk.eval(a, b).unwrap();
    let (mut v, mut u) = (0.0, 0.0);
    for i in 0..4 {
        for j in 0..4 {
            let h = k(x.row(i), x.row(j)) + k(y.row(i), y.row(j)) - k(x.row(i), y.row(j)) - k(x.row(j), y.row(i));
            v += h;
            if i != j {
                u += h;
            }
        }
    }
    assert!((mmd2_biased_value(&x, &y, &mk).unwrap() - v / 16.0).abs() < 1e-9);
    assert!((mmd2_unbiased_value(&x, &y, &mk).unwrap() - u / 12.0).abs() < 1e-9);
}

#[test]
fn unbiased_is_centred_under_the_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mk = MultiKernel::default_gaussian_bank();
    let vals: Vec<f64> = (0..1000)
        .map(|_| mmd2_unbiased_value(&normal(&mut rng, 10, 2), &normal(&mut rng, 10, 2), &mk).unwrap())
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean}, se {}", sd / n.sqrt());
    assert!(
        vals.iter().any(|&v| v < 0.0),
        "unbiased estimate should go negative sometimes"
    );
}

#[test]
fn mmd_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let x = store.add("x", normal(&mut rng, 8, 4)).unwrap();
    let y = store.add("y", normal(&mut rng, 8, 4)).unwrap();
    let mk = MultiKernel::new(vec![
        (1.0, KernelSpec::Gaussian { sigma: 1.0 }),
        (0.5, KernelSpec::Gaussian { sigma: 2.0 }),
        (0.5, KernelSpec::Laplacian { sigma: 1.5 }),
        (0.1, KernelSpec::Linear),
    ])
    .unwrap();
    let report = grad_check(&mut store, &[x, y], 1e-5, |s| {
        let mut tape = Tape::new();
        let (xv, yv) = (tape.param(s, x), tape.param(s, y));
        let l = mmd2_biased(&mut tape, xv, yv, &mk)?;
        Ok((tape, l))
    })
    .unwrap();
    assert!(report.passes(1e-4), "{}", report.max_rel_err());
}

#[test]
fn infonce_hand_and_limits() {
    let eye = Tensor::identity(2);
    let v = infonce_value(&eye, &eye, 1.0).unwrap();
    assert!((v - 2.0 * (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
    assert!((v - 0.6265).abs() < 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (normal(&mut rng, 6, 3), normal(&mut rng, 6, 3));
    let hot = infonce_value(&a, &b, 1e6).unwrap();
    assert!((hot - 6.0 * 6f64.ln()).abs() < 1e-3);
    // Same permutation on both sides.
    let perm = [3, 0, 5, 1, 4, 2];
    let permute = |t: &Tensor| Tensor::from_fn(&[6, 3], |k| t.data()[perm[k / 3] * 3 + k % 3]);
    let (p, q) = (
        infonce_value(&a, &b, 0.3).unwrap(),
        infonce_value(&permute(&a), &permute(&b), 0.3).unwrap(),
    );
    assert!((p - q).abs() < 1e-12);
    assert!(infonce_value(&a, &b, 0.0).is_err());
}

#[test]
fn permutation_test_detects_scale_change() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = normal(&mut rng, 100, 2);
    let y = Tensor::from_fn(&[100, 2], |_| {
        3.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)
    });
    let r = permutation_test(&x, &y, &MultiKernel::default_gaussian_bank(), 99, &mut rng).unwrap();
    assert!(r.p_value <= 0.02, "{}", r.p_value);
    assert_eq!(r.permutations, 99);
    let same = permutation_test(&x, &x, &MultiKernel::default_gaussian_bank(), 99, &mut rng).unwrap();
    assert!(same.p_value > 0.5);
}

fn sample(n: usize, d: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| Tensor::matrix(n, d, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mmd_symmetric_nonnegative_and_zero_on_self(x in sample(6, 3), y in sample(5, 3)) {
        let mk = MultiKernel::default_gaussian_bank();
        let a = mmd2_biased_value(&x, &y, &mk).unwrap();
        prop_assert_eq!(a.to_bits(), mmd2_biased_value(&y, &x, &mk).unwrap().to_bits());
        prop_assert!(a >= -1e-12);
        prop_assert!(mmd2_biased_value(&x, &x, &mk).unwrap().abs() <= 1e-9);
    }

    /// MMD² under Σβ_u k_u equals Σβ_u MMD²_u.
    #[test]
    fn multi_kernel_is_linear(x in sample(5, 2), y in sample(5, 2), betas in proptest::collection::vec(0.0f64..3.0, 4)) {
        let specs = bank_specs();
        let mk = MultiKernel::new(betas.iter().copied().zip(specs.iter().cloned()).collect()).unwrap();
        let parts: f64 = betas.iter().zip(&specs)
            .map(|(b, s)| b * mmd2_biased_value(&x, &y, &MultiKernel::single(*s).unwrap()).unwrap())
            .sum();
        let whole = mmd2_biased_value(&x, &y, &mk).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-9 * (1.0 + parts.abs()));
        let uparts: f64 = betas.iter().zip(&specs)
            .map(|(b, s)| b * mmd2_unbiased_value(&x, &y, &MultiKernel::single(*s).unwrap()).unwrap())
            .sum();
        prop_assert!((mmd2_unbiased_value(&x, &y, &mk).unwrap() - uparts).abs() <= 1e-9 * (1.0 + uparts.abs()));
    }

    /// Reordering the rows of X and of Y does not change the biased estimate.
    #[test]
    fn mmd_row_permutation_invariant(x in sample(5, 2), y in sample(4, 2), rot in 1usize..4) {
        let mk = MultiKernel::default_gaussian_bank();
        let roll = |t: &Tensor, r: usize| {
            let n = t.shape()[0];
            Tensor::from_fn(t.shape(), |k| t.data()[((k / 2 + r) % n) * 2 + k % 2])
        };
        let a = mmd2_biased_value(&x, &y, &mk).unwrap();
        let b = mmd2_biased_value(&roll(&x, rot), &roll(&y, rot + 1), &mk).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
