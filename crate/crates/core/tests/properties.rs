use core::f64::consts::PI;

use l2flow_core::flow::{energy_derivative, grad_energy, l2_inner, TangentField};
use l2flow_core::geometry::presets::{dumbbell, tube};
use l2flow_core::geometry::{energy, volume, CurvatureNorm, FiberSpec, WarpedMetric};
use l2flow_core::reduced_ode::{product_rhs, ProductState, RhsMode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn wavy_tube(n: usize, amp: f64, k: f64) -> WarpedMetric {
    tube(n, 4.0, 1.0, FiberSpec::round_sphere(), move |x| 1.0 + amp * (k * PI * x / 2.0).cos()).unwrap()
}

fn random_field(m: &WarpedMetric, rng: &mut ChaCha8Rng) -> TangentField {
    let n = m.len();
    let mut h = TangentField {
        dphi: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        dpsi: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    h.make_admissible(m);
    h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tube_scaling_laws(lambda in 0.2f64..5.0, amp in 0.0f64..0.3, k in 1u32..3) {
        // Three-manifold: F scales like 1/λ, volume like λ³.
        let m = wavy_tube(48, amp, k as f64);
        let (f0, f1) = (energy(&m).unwrap(), energy(&m.scaled(lambda)).unwrap());
        prop_assert!((lambda * f1 - f0).abs() <= 1e-10 * f0);
        let v = volume(&m.scaled(lambda));
        prop_assert!((v - lambda.powi(3) * volume(&m)).abs() <= 1e-10 * v);
    }

    #[test]
    fn dumbbell_scaling_law(lambda in 0.3f64..3.0, depth in 0.0f64..0.6) {
        let m = dumbbell(40, depth).unwrap();
        let (f0, f1) = (energy(&m).unwrap(), energy(&m.scaled(lambda)).unwrap());
        prop_assert!((lambda * f1 - f0).abs() <= 1e-10 * f0);
    }

    #[test]
    fn conformal_derivative(c in -2.0f64..2.0, depth in 0.0f64..0.5) {
        // Along g(1 + ct) the energy is F·(1 + ct)^(-1/2).
        let m = dumbbell(40, depth).unwrap();
        let f = energy(&m).unwrap();
        let d = energy_derivative(&m, &TangentField::conformal(&m, c), CurvatureNorm::Paper).unwrap();
        prop_assert!((d + 0.5 * c * f).abs() <= 1e-8 * f);
    }

    #[test]
    fn l2_inner_is_symmetric_and_positive(seed in 0u64..1000) {
        let m = wavy_tube(32, 0.2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, k) = (random_field(&m, &mut rng), random_field(&m, &mut rng));
        let hk = l2_inner(&h, &k, &m).unwrap();
        let kh = l2_inner(&k, &h, &m).unwrap();
        prop_assert!((hk - kh).abs() <= 1e-12 * hk.abs().max(1.0));
        prop_assert!(l2_inner(&h, &h, &m).unwrap() > 0.0);
        let hh = l2_inner(&h, &h, &m).unwrap();
        let kk = l2_inner(&k, &k, &m).unwrap();
        prop_assert!(hk * hk <= hh * kk * (1.0 + 1e-12));
    }

    #[test]
    fn s5_s1_modes_differ_by_two(a in 0.5f64..4.0, b in 0.5f64..4.0) {
        let s = ProductState::s5_s1(a, b).unwrap();
        let lit = product_rhs(&s, RhsMode::PaperLiteral).unwrap();
        let grad = product_rhs(&s, RhsMode::GradientDerived).unwrap();
        for (l, g) in lit.iter().zip(&grad) {
            prop_assert!((g - 2.0 * l).abs() <= 1e-12 * l.abs().max(1e-300));
        }
    }
}

#[test]
fn gradient_represents_the_derivative() {
    let m = dumbbell(48, 0.3).unwrap();
    let g = grad_energy(&m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let h = random_field(&m, &mut rng);
        let d = energy_derivative(&m, &h, CurvatureNorm::Paper).unwrap();
        let p = l2_inner(&g, &h, &m).unwrap();
        assert!((d - p).abs() <= 1e-8 * d.abs().max(1.0), "{d} vs {p}");
    }
}

#[test]
fn round_tube_is_flat_in_the_base() {
    let m = tube(32, 2.0, 1.0, FiberSpec::round_sphere(), |_| 1.5).unwrap();
    let g = grad_energy(&m).unwrap();
    // Translation invariance: the gradient is constant along the base.
    for i in 1..m.len() {
        assert!((g.dpsi[i] - g.dpsi[0]).abs() < 1e-10);
        assert!((g.dphi[i] - g.dphi[0]).abs() < 1e-10);
    }
}
