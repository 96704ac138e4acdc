mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bloch_hom::cell_operator::{FiberOperator, PeriodicCoefficients};
use bloch_hom::effective::{
    effective_symbol, effective_tensors, g1_tensor, g1_tensor_expanded, reduced_evolution,
    solve_cell_problems, EffectiveTensors, TensorRecord,
};
use bloch_hom::harness::{Pipeline, RunConfig};
use bloch_hom::lattice::{Lattice, PlaneWaveBasis};
use bloch_hom::linalg::{hermitian_eigenvalues, hermiticity_defect, CMatrix, CVector};
use bloch_hom::spectral::{band_structure, detect_threshold};
use bloch_hom::threshold::ReducedResolvent;
use bloch_hom::C;

use common::{fd_derivatives, loglog_slope, random_unitary};

fn pipeline(cfg: RunConfig) -> Pipeline<f64> {
    Pipeline::build(&cfg).unwrap()
}

/// Free operator on the unit square with a small basis.
fn free_2d(k0: [f64; 2]) -> Pipeline<f64> {
    let b = PlaneWaveBasis::new(&Lattice::cubic(2).unwrap(), 6.0 * PI).unwrap();
    let op = FiberOperator::new(PeriodicCoefficients::free(&b).unwrap(), b).unwrap();
    let tp = detect_threshold(&op, &k0, 1, None).unwrap();
    Pipeline::with_threshold(op, tp).unwrap()
}

fn mathieu_at(k0: f64) -> Pipeline<f64> {
    let cfg = RunConfig::mathieu(0.0);
    let op = bloch_hom::harness::build_operator::<f64>(&cfg).unwrap();
    let tp = detect_threshold(&op, &[k0], 1, None).unwrap();
    Pipeline::with_threshold(op, tp).unwrap()
}

fn max_abs(v: &[C<f64>]) -> f64 {
    v.iter().fold(0.0f64, |a, z| a.max(z.norm()))
}

#[test]
fn free_tensors_are_the_metric() {
    let pipe = pipeline(RunConfig::free(1, vec![0.0], 1));
    let t = &pipe.tensors;
    assert_eq!(t.n, 1);
    assert!(t.g1(0, 0, 0).norm() < 1e-12);
    assert!((t.g2(0, 0, 0, 0) - C::new(1.0, 0.0)).norm() < 1e-12);
    let pipe = free_2d([0.0, 0.0]);
    let t = &pipe.tensors;
    for r in 0..2 {
        assert!(t.g1(0, 0, r).norm() < 1e-12);
        for q in 0..2 {
            let want = if r == q { 1.0 } else { 0.0 };
            assert!((t.g2(0, 0, r, q) - C::new(want, 0.0)).norm() < 1e-12);
        }
    }
}

#[test]
fn dirac_slopes() {
    let pipe = pipeline(RunConfig::free(1, vec![PI], 1));
    let t = &pipe.tensors;
    assert_eq!(t.n, 2);
    assert!((t.g1(0, 0, 0) - C::new(2.0 * PI, 0.0)).norm() < 1e-10);
    assert!((t.g1(1, 1, 0) - C::new(-2.0 * PI, 0.0)).norm() < 1e-10);
    assert!(t.g1(0, 1, 0).norm() < 1e-10 && t.g1(1, 0, 0).norm() < 1e-10);
    let s = effective_symbol(t, &[0.1]).unwrap();
    let want = [PI * PI + 0.2 * PI + 0.01, PI * PI - 0.2 * PI + 0.01];
    for l in 0..2 {
        assert!((s[(l, l)].re - want[l]).abs() < 1e-10);
    }
    assert!(s[(0, 1)].norm() < 1e-10);
}

#[test]
fn band_edges_have_vanishing_slope() {
    for k0 in [0.0, PI] {
        let pipe = mathieu_at(k0);
        assert_eq!(pipe.tensors.n, 1);
        assert!(pipe.tensors.g1(0, 0, 0).norm() <= 1e-8);
    }
}

#[test]
fn slope_and_curvature_match_band_derivatives() {
    for k0 in [0.4, PI / 2.0, 2.5] {
        let pipe = mathieu_at(k0);
        let op = &pipe.operator;
        let e1 = |k: f64| band_structure(op, &[vec![k]], 1, false).unwrap().energies[0][0];
        let (grad, hess) = fd_derivatives(e1, k0, 2.5e-3);
        let g1 = pipe.tensors.g1(0, 0, 0);
        let g2 = pipe.tensors.g2(0, 0, 0, 0);
        assert!(g1.im.abs() < 1e-10 && g2.im.abs() < 1e-10);
        assert!(
            (g1.re - grad).abs() <= 1e-6 * grad.abs(),
            "k°={k0}: {} vs {grad}",
            g1.re
        );
        assert!(
            (2.0 * g2.re - hess).abs() <= 1e-6 * hess.abs(),
            "k°={k0}: {} vs {hess}",
            2.0 * g2.re
        );
    }
}

#[test]
fn slope_routes_agree() {
    for pipe in [
        mathieu_at(0.7),
        pipeline(RunConfig::free(1, vec![PI], 1)),
        free_2d([PI, 0.3]),
    ] {
        let (g1, _) = g1_tensor(&pipe.operator, &pipe.threshold).unwrap();
        let expanded = g1_tensor_expanded(&pipe.operator, &pipe.threshold).unwrap();
        let diff: Vec<C<f64>> = g1.iter().zip(&expanded).map(|(a, b)| a - b).collect();
        assert!(max_abs(&diff) <= 1e-10 * (1.0 + max_abs(&g1)));
        assert_eq!(g1, pipe.tensors.g1);
    }
}

#[test]
fn cell_problems() {
    for k0 in [0.0, PI] {
        let pipe = pipeline(RunConfig::free(1, vec![k0], 1));
        let cells = solve_cell_problems(&pipe.operator, &pipe.threshold, &pipe.resolvent).unwrap();
        let p = &pipe.threshold.cluster;
        for (rhs, sol) in cells.rhs.iter().zip(&cells.solutions) {
            if k0 == 0.0 {
                assert!(rhs.norm() < 1e-12);
            }
            assert!((rhs - p * p.ad_mul(rhs)).norm() < 1e-10 * (1.0 + rhs.norm()));
            assert!(sol.norm() < 1e-12);
        }
    }
    let pipe = mathieu_at(0.9);
    let tp = &pipe.threshold;
    let cells = solve_cell_problems(&pipe.operator, tp, &pipe.resolvent).unwrap();
    let centered = tp.expansion().centered();
    for ((rhs, sol), res) in cells.rhs.iter().zip(&cells.solutions).zip(&cells.residuals) {
        let projected = rhs - &tp.cluster * tp.cluster.ad_mul(rhs);
        assert!((centered * sol - projected).norm() <= 1e-10 * rhs.norm());
        assert!(*res <= 1e-10 * rhs.norm());
        assert!(tp.cluster.ad_mul(sol).norm() <= 1e-10);
        assert!(sol.norm() > 0.0);
    }
    let c = cells.corrector(0, &[0.2]);
    assert!((c - cells.solution(0, 0) * C::new(0.0, -0.2)).norm() < 1e-15);
}

#[test]
fn symbol_approximates_band_to_third_order() {
    for k0 in [0.0, PI, 1.1] {
        let pipe = mathieu_at(k0);
        let op = &pipe.operator;
        let kappa = pipe.threshold.kappa;
        let pts: Vec<(f64, f64)> = (0..6)
            .map(|i| {
                let dk = 0.2 * kappa / 2f64.powi(i);
                let exact = band_structure(op, &[vec![k0 + dk]], 1, false)
                    .unwrap()
                    .energies[0][0];
                let sym = effective_symbol(&pipe.tensors, &[dk]).unwrap()[(0, 0)].re;
                (dk, (sym - exact).abs())
            })
            .collect();
        let order = loglog_slope(&pts);
        assert!(order >= 2.9, "k°={k0}: order {order}, {pts:?}");
    }
}

#[test]
fn symbol_at_zero_is_threshold_energy() {
    for pipe in [mathieu_at(0.3), free_2d([PI, PI])] {
        let t = &pipe.tensors;
        let s = effective_symbol(t, &vec![0.0; t.d]).unwrap();
        let want = CMatrix::identity(t.n, t.n) * C::new(t.lambda0, 0.0);
        assert!((s - want).norm() < 1e-14);
    }
}

#[test]
fn multi_band_symbols_are_hermitian_and_compatible() {
    let pipe = free_2d([PI, PI]);
    let t = &pipe.tensors;
    assert_eq!(t.n, 4);
    for l in 0..t.n {
        for p in 0..t.n {
            for r in 0..t.d {
                assert!((t.g1(l, p, r).conj() - t.g1(p, l, r)).norm() < 1e-12);
            }
        }
    }
    assert!(t.quadratic_hermiticity_defect().unwrap() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let dk = [
            rng.gen_range(-1.0..1.0) * t.kappa,
            rng.gen_range(-1.0..1.0) * t.kappa,
        ];
        let s = effective_symbol(t, &dk).unwrap();
        assert!(hermiticity_defect(&s) <= 1e-10 * s.norm());
        let mut exact: Vec<f64> = [(0.0, 0.0), (-1.0, 0.0), (0.0, -1.0), (-1.0, -1.0)]
            .iter()
            .map(|(a, b)| (PI + dk[0] + 2.0 * PI * a).powi(2) + (PI + dk[1] + 2.0 * PI * b).powi(2))
            .collect();
        exact.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in hermitian_eigenvalues(&s).iter().zip(&exact) {
            assert!((a - b).abs() < 1e-10 * b);
        }
    }
}

#[test]
fn symbol_is_gauge_covariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for pipe in [
        pipeline(RunConfig::free(1, vec![PI], 1)),
        free_2d([PI, 0.0]),
    ] {
        let n = pipe.threshold.n();
        let d = pipe.tensors.d;
        for _ in 0..5 {
            let u = random_unitary(n, &mut rng);
            let rotated = pipe.threshold.with_gauge(&pipe.operator, &u).unwrap();
            let rr = ReducedResolvent::new(&rotated).unwrap();
            let t = effective_tensors(&pipe.operator, &rotated, &rr).unwrap();
            for _ in 0..5 {
                let dk: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
                let want = u.adjoint() * effective_symbol(&pipe.tensors, &dk).unwrap() * &u;
                let got = effective_symbol(&t, &dk).unwrap();
                assert!((got - want).norm() < 1e-10 * (1.0 + pipe.tensors.lambda0));
            }
        }
    }
}

#[test]
fn reduced_evolution_examples() {
    let pipe = pipeline(RunConfig::free(1, vec![PI], 1));
    let t = &pipe.tensors;
    let c = reduced_evolution(t, &[0.1], 1.0, 0).unwrap();
    let want = C::from_polar(1.0, -(PI * PI + 0.2 * PI + 0.01));
    assert!((c[0] - want).norm() < 1e-12);
    assert!(c[1].norm() < 1e-12);
    for j in 0..2 {
        let c = reduced_evolution(t, &[0.3], 0.0, j).unwrap();
        let mut e = CVector::zeros(2);
        e[j] = C::new(1.0, 0.0);
        assert!((c - e).norm() < 1e-15);
    }
    assert!(reduced_evolution(t, &[0.1], 1.0, 2).is_err());
    let pipe = mathieu_at(0.6);
    let t = &pipe.tensors;
    for (dk, tau) in [(0.05, 1.0), (-0.2, 7.5)] {
        let c = reduced_evolution(t, &[dk], tau, 0).unwrap();
        let phase = t.lambda0 + t.g1(0, 0, 0).re * dk + t.g2(0, 0, 0, 0).re * dk * dk;
        assert!((c[0] - C::from_polar(1.0, -tau * phase)).norm() < 1e-12);
    }
}

#[test]
fn tensor_record_round_trip() {
    let pipe = pipeline(RunConfig::free(1, vec![PI], 1));
    let rec = pipe.tensors.to_record(&pipe.operator);
    let json = serde_json::to_string(&rec).unwrap();
    let back: TensorRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(back, rec);
    let t = EffectiveTensors::<f64>::from_record(&back, &pipe.operator).unwrap();
    assert_eq!(t.g1, pipe.tensors.g1);
    assert_eq!(t.g2, pipe.tensors.g2);
    assert_eq!(t.cluster, pipe.tensors.cluster);
    assert_eq!(t.lambda0, pipe.tensors.lambda0);
    let other = free_2d([0.0, 0.0]);
    assert!(EffectiveTensors::<f64>::from_record(&rec, &other.operator).is_err());
    let mut broken = rec.clone();
    broken.g2.pop();
    assert!(EffectiveTensors::<f64>::from_record(&broken, &pipe.operator).is_err());
}

#[test]
fn quadrature_refinement_is_recorded() {
    let pipe = mathieu_at(0.0);
    let defect = pipe.tensors.provenance.refinement_defect.unwrap();
    assert!(defect < 1e-9, "{defect}");
    assert_eq!(pipe.tensors.provenance.basis_size, pipe.operator.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reduced_evolution_is_unitary(
        dk in -1.0f64..1.0,
        tau in -200.0f64..200.0,
        j in 0usize..2,
    ) {
        let pipe = pipeline(RunConfig::free(1, vec![PI], 1));
        let c = reduced_evolution(&pipe.tensors, &[dk * pipe.tensors.kappa], tau, j).unwrap();
        prop_assert!((c.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symbol_is_hermitian(dk in prop::collection::vec(-1.0f64..1.0, 2)) {
        let pipe = free_2d([PI, 0.0]);
        let s = effective_symbol(&pipe.tensors, &dk).unwrap();
        prop_assert!(hermiticity_defect(&s) <= 1e-12 * s.norm());
    }
}
