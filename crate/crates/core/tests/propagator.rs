use std::f64::consts::PI;

use proptest::prelude::*;

use bloch_hom::harness::{Pipeline, RunConfig};
use bloch_hom::propagator::{
    assemble_error, effective_norm, error_bound, exact_norm, make_packet, propagate_effective,
    propagate_exact, reconstruct, FiberField, PacketSpec, WavePacket,
};
use bloch_hom::C;

fn pipeline(cfg: &RunConfig) -> Pipeline<f64> {
    Pipeline::build(cfg).unwrap()
}

fn gaussian(nodes: usize) -> PacketSpec {
    PacketSpec::Gaussian {
        width: 1.0,
        radius: 6.0,
        nodes,
    }
}

fn single_mode(xi: f64, a: f64) -> PacketSpec {
    PacketSpec::Modes {
        modes: vec![(vec![xi], [a, 0.0])],
        weight: 0.25,
    }
}

/// Composite Simpson rule on `[0, r]`.
fn simpson(f: impl Fn(f64) -> f64, r: f64, n: usize) -> f64 {
    let h = r / n as f64;
    let inner: f64 = (1..n)
        .map(|i| f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(0.0) + inner + f(r)) * h / 3.0
}

#[test]
fn single_mode_packet_norms() {
    let p = make_packet::<f64>(&single_mode(1.5, 2.0), 1, 0).unwrap();
    assert_eq!(p.len(), 1);
    assert!((p.l2 - 2.0 * 0.5).abs() < 1e-15);
    assert!((p.h3 - p.l2 * (1.0 + 1.5f64 * 1.5).powf(1.5)).abs() < 1e-13);
    assert!((p.radius - 1.5).abs() < 1e-15);
}

#[test]
fn degenerate_packets_are_rejected() {
    let zero = PacketSpec::Modes {
        modes: vec![(vec![0.0], [0.0, 0.0]), (vec![1.0], [0.0, 0.0])],
        weight: 1.0,
    };
    assert!(make_packet::<f64>(&zero, 1, 0).is_err());
    assert!(make_packet::<f64>(&single_mode(0.0, 1.0), 2, 0).is_err());
    let bad_weight = PacketSpec::Modes {
        modes: vec![(vec![0.0], [1.0, 0.0])],
        weight: 0.0,
    };
    assert!(make_packet::<f64>(&bad_weight, 1, 0).is_err());
    assert!(make_packet::<f64>(
        &PacketSpec::Gaussian {
            width: 0.0,
            radius: 1.0,
            nodes: 8
        },
        1,
        0
    )
    .is_err());
    assert!(make_packet::<f64>(&gaussian(8), 4, 0).is_err());
}

#[test]
fn gaussian_norms_match_refined_quadrature() {
    let p1 = make_packet::<f64>(&gaussian(64), 1, 0).unwrap();
    let l2 = 2.0 * simpson(|r| (-2.0 * r * r).exp(), 6.0, 20_000);
    let h3 = 2.0
        * simpson(
            |r| (1.0 + r * r).powi(3) * (-2.0 * r * r).exp(),
            6.0,
            20_000,
        );
    assert!((p1.l2 - l2.sqrt()).abs() < 1e-8 * l2.sqrt());
    assert!((p1.h3 - h3.sqrt()).abs() < 1e-8 * h3.sqrt());
    assert!(p1.amplitudes.iter().all(|a| a.im == 0.0 && a.re > 0.0));
    let p2 = make_packet::<f64>(&gaussian(64), 2, 0).unwrap();
    let h3 = simpson(
        |r| 2.0 * PI * r * (1.0 + r * r).powi(3) * (-2.0 * r * r).exp(),
        6.0,
        20_000,
    );
    assert!((p2.h3 - h3.sqrt()).abs() < 1e-8 * h3.sqrt());
    assert!(p2
        .xi
        .iter()
        .all(|x| x[0] * x[0] + x[1] * x[1] <= 36.0 + 1e-9));
}

#[test]
fn zero_time_is_identity() {
    let cfg = RunConfig::mathieu(0.0);
    let pipe = pipeline(&cfg);
    let tp = &pipe.threshold;
    let packet = pipe.packet(&cfg).unwrap();
    let u = propagate_exact(tp, &packet, 0.05, 0.0).unwrap();
    let v = propagate_effective(&pipe.tensors, &packet, 0.05, 0.0).unwrap();
    let s = tp.varsigma(0);
    for (x, c) in u.vectors.iter().zip(&v.coefficients) {
        assert!((x - &s).norm() < 1e-12);
        assert!((c[0] - C::new(1.0, 0.0)).norm() < 1e-15);
    }
    assert!((exact_norm(tp, &packet, &u) - packet.l2).abs() < 1e-12);
    assert!(assemble_error(tp, &packet, &u, &v).unwrap() < 1e-12);
}

#[test]
fn free_phases_are_closed_form() {
    let cfg = RunConfig::free(1, vec![0.0], 1);
    let pipe = pipeline(&cfg);
    let tp = &pipe.threshold;
    let packet = pipe.packet(&cfg).unwrap();
    for (eps, tau) in [(0.1, 1.0), (0.0125, 3.0)] {
        let u = propagate_exact(tp, &packet, eps, tau).unwrap();
        let v = propagate_effective(&pipe.tensors, &packet, eps, tau).unwrap();
        for ((xi, x), c) in packet.xi.iter().zip(&u.vectors).zip(&v.coefficients) {
            let phase = C::from_polar(1.0, -tau * xi[0] * xi[0]);
            assert!((x - tp.varsigma(0) * phase).norm() < 1e-12);
            assert!((c[0] - phase).norm() < 1e-12);
        }
    }
}

/// Past `τ/ε = 200` the ulp-level difference between the two slope
/// computations, multiplied by the phase rate, exceeds `1e-12`; the
/// tolerance then grows in proportion to `τ/ε`.
#[test]
fn free_errors_vanish() {
    for k0 in [0.0, PI] {
        let cfg = RunConfig::free(1, vec![k0], 1);
        let pipe = pipeline(&cfg);
        let packet = pipe.packet(&cfg).unwrap();
        for eps in [0.1, 0.05, 0.025, 0.0125] {
            for tau in [0.5, 1.0, 10.0, 100.0] {
                let u = propagate_exact(&pipe.threshold, &packet, eps, tau).unwrap();
                let v = propagate_effective(&pipe.tensors, &packet, eps, tau).unwrap();
                let err = assemble_error(&pipe.threshold, &packet, &u, &v).unwrap();
                let tol = 1e-12 * (tau / (200.0 * eps)).max(1.0);
                assert!(err < tol, "k°={k0} ε={eps} τ={tau}: {err}");
            }
        }
    }
}

#[test]
fn self_difference_is_zero() {
    let cfg = RunConfig::mathieu(0.0);
    let pipe = pipeline(&cfg);
    let tp = &pipe.threshold;
    let packet = pipe.packet(&cfg).unwrap();
    let v = propagate_effective(&pipe.tensors, &packet, 0.05, 2.0).unwrap();
    let u = FiberField {
        epsilon: v.epsilon,
        tau: v.tau,
        vectors: v.coefficients.iter().map(|c| &tp.cluster * c).collect(),
    };
    assert_eq!(assemble_error(tp, &packet, &u, &v).unwrap(), 0.0);
}

#[test]
fn threshold_mode_is_stationary() {
    let cfg = RunConfig::mathieu(0.0);
    let pipe = pipeline(&cfg);
    let tp = &pipe.threshold;
    let packet = make_packet::<f64>(&single_mode(0.0, 1.0), 1, 0).unwrap();
    for tau in [0.0, 1.0, 100.0] {
        let u = propagate_exact(tp, &packet, 0.05, tau).unwrap();
        let v = propagate_effective(&pipe.tensors, &packet, 0.05, tau).unwrap();
        assert!(
            assemble_error(tp, &packet, &u, &v).unwrap() < 1e-9,
            "τ={tau}"
        );
    }
}

#[test]
fn mathieu_error_within_explicit_bound() {
    let cfg = RunConfig::mathieu(0.0);
    let pipe = pipeline(&cfg);
    let tp = &pipe.threshold;
    let packet = pipe.packet(&cfg).unwrap();
    for eps in [0.1, 0.05, 0.025, 0.0125] {
        for tau in [0.0, 1.0] {
            let u = propagate_exact(tp, &packet, eps, tau).unwrap();
            let v = propagate_effective(&pipe.tensors, &packet, eps, tau).unwrap();
            let err = assemble_error(tp, &packet, &u, &v).unwrap();
            let b = error_bound(tp, &pipe.ledger, &packet, eps, tau);
            assert!(err <= b.total, "ε={eps} τ={tau}: {err} > {}", b.total);
            assert!((b.outer + b.inner - b.total).abs() <= 1e-15 * b.total);
            if tau > 0.0 {
                assert!(err > 0.0);
            }
        }
    }
}

#[test]
fn mismatched_fields_are_rejected() {
    let cfg = RunConfig::mathieu(0.0);
    let pipe = pipeline(&cfg);
    let tp = &pipe.threshold;
    let packet = pipe.packet(&cfg).unwrap();
    let small = make_packet::<f64>(&single_mode(0.5, 1.0), 1, 0).unwrap();
    let u = propagate_exact(tp, &packet, 0.1, 1.0).unwrap();
    let v = propagate_effective(&pipe.tensors, &packet, 0.05, 1.0).unwrap();
    let w = propagate_effective(&pipe.tensors, &small, 0.1, 1.0).unwrap();
    assert!(assemble_error(tp, &packet, &u, &v).is_err());
    assert!(assemble_error(tp, &packet, &u, &w).is_err());
    assert!(propagate_exact(tp, &packet, 0.0, 1.0).is_err());
    assert!(propagate_effective(&pipe.tensors, &packet, -0.1, 1.0).is_err());
    let wrong_j = WavePacket {
        j: 1,
        ..packet.clone()
    };
    assert!(propagate_exact(tp, &wrong_j, 0.1, 1.0).is_err());
    let flat = make_packet::<f64>(&gaussian(8), 2, 0).unwrap();
    assert!(propagate_exact(tp, &flat, 0.1, 1.0).is_err());
}

#[test]
fn free_reconstruction_is_a_plane_wave() {
    let cfg = RunConfig::free(1, vec![0.0], 1);
    let pipe = pipeline(&cfg);
    let tp = &pipe.threshold;
    let packet = make_packet::<f64>(&single_mode(0.7, 1.0), 1, 0).unwrap();
    let (eps, tau) = (0.1, 2.0);
    let u = propagate_exact(tp, &packet, eps, tau).unwrap();
    let v = propagate_effective(&pipe.tensors, &packet, eps, tau).unwrap();
    let xs: Vec<Vec<f64>> = (0..7).map(|i| vec![-1.0 + 0.3 * i as f64]).collect();
    let vals = reconstruct(pipe.operator.basis(), tp, &packet, &u, &v, &xs).unwrap();
    for (x, (a, b)) in xs.iter().zip(&vals) {
        let want = C::from_polar(0.25 / (2.0 * PI).sqrt(), 0.7 * x[0] - tau * 0.49);
        assert!((a - want).norm() < 1e-12 && (b - want).norm() < 1e-12);
    }
    assert!(reconstruct(
        pipe.operator.basis(),
        tp,
        &packet,
        &u,
        &v,
        &[vec![0.0, 0.0]]
    )
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn propagators_conserve_norm(
        eps in 0.01f64..0.2,
        tau in -100.0f64..100.0,
        edge in any::<bool>(),
    ) {
        let cfg = if edge { RunConfig::free(1, vec![PI], 1) } else { RunConfig::mathieu(0.0) };
        let pipe = pipeline(&cfg);
        let tp = &pipe.threshold;
        let packet = make_packet::<f64>(&gaussian(24), 1, 0).unwrap();
        let u = propagate_exact(tp, &packet, eps, tau).unwrap();
        let v = propagate_effective(&pipe.tensors, &packet, eps, tau).unwrap();
        prop_assert!((exact_norm(tp, &packet, &u) - packet.l2).abs() < 1e-12);
        prop_assert!((effective_norm(tp, &packet, &v) - packet.l2).abs() < 1e-12);
        for (x, c) in u.vectors.iter().zip(&v.coefficients) {
            prop_assert!((x.norm() - 1.0).abs() < 1e-12);
            prop_assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }
}
