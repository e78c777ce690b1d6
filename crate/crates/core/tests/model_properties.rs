use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use ssm_spaces::io::{load_model, save_model};
use ssm_spaces::metrics::model_distance;
use ssm_spaces::model::{align_procrustes, build_pca, Coefficients, QPolicy, Shape, ShapeModel};

/// Model with orthonormal directions from a QR of `raw` and descending
/// eigenvalues.
fn model_from(raw: Vec<f64>, mean: Vec<f64>, mut lambdas: Vec<f64>, d: usize, n: usize) -> ShapeModel {
    let q = lambdas.len();
    let dirs = DMatrix::from_vec(d * n, q, raw).qr().q();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    ShapeModel::from_orthonormal(Shape::new(mean, d, n).unwrap(), dirs, DVector::from_vec(lambdas)).unwrap()
}

prop_compose! {
    fn arb_model()(d in 2usize..=3, n in 3usize..=12, q in 1usize..=5)
        (raw in prop::collection::vec(-1.0f64..1.0, d * n * q),
         mean in prop::collection::vec(-5.0f64..5.0, d * n),
         lambdas in prop::collection::vec(0.1f64..20.0, q),
         d in Just(d), n in Just(n)) -> ShapeModel {
        model_from(raw, mean, lambdas, d, n)
    }
}

prop_compose! {
    fn arb_model_and_alpha()(m in arb_model())
        (alpha in prop::collection::vec(-4.0f64..4.0, m.q()), m in Just(m)) -> (ShapeModel, Coefficients) {
        (m, Coefficients::from_slice(&alpha))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn project_inverts_synthesize((m, alpha) in arb_model_and_alpha()) {
        let back = m.project(&m.synthesize(&alpha).unwrap()).unwrap();
        let err = (back.values() - alpha.values()).norm();
        prop_assert!(err <= 1e-10 * alpha.norm().max(1.0), "err {err}");
    }

    #[test]
    fn projection_is_optimal_and_idempotent((m, beta) in arb_model_and_alpha(), seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = m.sample(&mut rng);
        let noise = DVector::from_fn(m.dim(), |i, _| ((i as f64) * 0.37).sin());
        let x = Shape::new(x.data() + noise, m.d(), m.n()).unwrap();
        let px = m.project_shape(&x).unwrap();
        let best = (px.data() - x.data()).norm();
        let other = (m.synthesize(&beta).unwrap().data() - x.data()).norm();
        prop_assert!(best <= other + 1e-9);
        let ppx = m.project_shape(&px).unwrap();
        prop_assert!((ppx.data() - px.data()).norm() <= 1e-10 * px.data().norm().max(1.0));
    }

    #[test]
    fn truncation_matches_padded_synthesis((m, alpha) in arb_model_and_alpha(), keep in 1usize..=5) {
        let keep = keep.min(m.q());
        let t = m.truncate(keep).unwrap();
        let mut padded = alpha.as_slice().to_vec();
        padded[keep..].iter_mut().for_each(|v| *v = 0.0);
        let a = t.synthesize(&Coefficients::from_slice(&alpha.as_slice()[..keep])).unwrap();
        let b = m.synthesize(&Coefficients::from_slice(&padded)).unwrap();
        prop_assert!((a.data() - b.data()).norm() <= 1e-10 * b.data().norm().max(1.0));
    }

    #[test]
    fn self_alignment_changes_nothing(m in arb_model()) {
        let a = align_procrustes(&m, &m).unwrap();
        prop_assert!((a.mean().data() - m.mean().data()).norm() <= 1e-10 * m.mean().data().norm().max(1.0));
        prop_assert!((a.basis() - m.basis()).norm() <= 1e-10 * m.basis().norm());
        prop_assert!((a.eigenvalues() - m.eigenvalues()).norm() <= 1e-10 * m.eigenvalues().norm());
    }

    #[test]
    fn pca_output_is_well_formed(m in arb_model(), seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<Shape> = (0..50).map(|_| m.sample(&mut rng)).collect();
        let pca = build_pca(&samples, QPolicy::ALL).unwrap();
        let ev = pca.eigenvalues();
        prop_assert!(ev.as_slice().windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(pca.q() <= m.q());
        let gram = pca.basis().transpose() * pca.basis();
        let expected = DMatrix::from_diagonal(ev);
        prop_assert!((gram - expected).abs().max() <= 1e-8 * ev[0]);
    }

    #[test]
    fn container_round_trip_is_exact(m in arb_model()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ssm");
        save_model(&path, &m).unwrap();
        prop_assert_eq!(load_model(&path).unwrap(), m);
    }
}

#[test]
fn pca_recovers_generating_subspace() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let raw: Vec<f64> = (0..30 * 4).map(|i| ((i * 7919 % 101) as f64 / 50.0) - 1.0).collect();
    let mean: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
    let m = model_from(raw, mean, vec![9.0, 4.0, 2.0, 1.0], 3, 10);
    let samples: Vec<Shape> = (0..10_000).map(|_| m.sample(&mut rng)).collect();
    let pca = build_pca(&samples, QPolicy::ALL).unwrap();
    assert!(model_distance(&pca, &m).unwrap() < 0.05);
}
