use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bloch_hom::harness::output::{num, write_convergence, write_verify};
use bloch_hom::harness::{
    fit_slope, k_from_fractional, run_convergence, selftest, symmetry_path, threshold_record,
    verify_sweep, FitStatus, Pipeline, RunConfig, Stage,
};
use bloch_hom::lattice::Lattice;

#[test]
fn exact_power_laws_fit_exactly() {
    let eps = [0.1, 0.05, 0.025, 0.0125];
    for (p, c) in [(1.0, 3.0), (2.0, 0.7)] {
        let pairs: Vec<(f64, f64)> = eps.iter().map(|&e: &f64| (e, c * e.powf(p))).collect();
        let (s, r) = fit_slope(&pairs).unwrap();
        assert!((s - p).abs() < 1e-12, "{s}");
        assert!(r < 1e-12);
    }
}

#[test]
fn noisy_first_order_data_fits_near_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pairs: Vec<(f64, f64)> = (0..8)
        .map(|i| {
            let e = 0.2 / 2f64.powi(i);
            (e, 2.0 * e * (1.0 + rng.gen_range(-0.05..0.05)))
        })
        .collect();
    let (s, r) = fit_slope(&pairs).unwrap();
    assert!((s - 1.0).abs() < 0.1, "{s}");
    assert!(r > 0.0);
}

#[test]
fn degenerate_fits_are_rejected() {
    assert!(fit_slope(&[(0.1, 1.0), (0.05, 0.5)]).is_err());
    assert!(fit_slope(&[(0.1, 1.0), (0.05, 0.0), (0.02, 0.1)]).is_err());
    assert!(fit_slope(&[(0.1, 1.0), (0.1, 0.5), (0.1, 0.1)]).is_err());
}

#[test]
fn configs_round_trip_and_validate() {
    for cfg in [RunConfig::free(2, vec![PI, 0.0], 1), RunConfig::mathieu(PI)] {
        cfg.validate_convergence().unwrap();
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back.to_json(), cfg.to_json());
    }
    let mut empty = RunConfig::free(1, vec![0.0], 1);
    empty.epsilons.clear();
    assert!(empty.validate().is_ok());
    assert!(empty.validate_convergence().is_err());
    let err = run_convergence::<f64>(&empty).unwrap_err();
    assert_eq!(err.stage, Stage::Config);

    let mut rising = RunConfig::free(1, vec![0.0], 1);
    rising.epsilons = vec![0.1, 0.2, 0.05];
    assert!(rising.validate_convergence().is_err());
    let mut band0 = RunConfig::free(1, vec![0.0], 1);
    band0.threshold.band = 0;
    assert!(band0.validate().is_err());
    let mut both = RunConfig::mathieu(0.0);
    both.weight = both.potential.clone();
    assert!(both.validate().is_err());
    let mut wrong_k = RunConfig::free(2, vec![0.0], 1);
    wrong_k.threshold.k0 = vec![0.0];
    assert!(wrong_k.validate().is_err());
    assert!(RunConfig::from_json("{\"lattice\": 3}").is_err());
}

#[test]
fn free_band_edge_study_sits_at_the_noise_floor() {
    let cfg = RunConfig::free(1, vec![0.0], 1);
    let report = run_convergence::<f64>(&cfg).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert!(
        report.rows.iter().all(|r| r.error <= 1e-10),
        "{:?}",
        report.rows
    );
    assert_eq!(report.fits.len(), 1);
    assert_eq!(report.fits[0].status, FitStatus::NoiseFloor);
    assert!(report.fits[0].slope.is_none());
    assert!(report.all_bounds_hold);
    assert_eq!(report.threshold.n, 1);
    assert!(report.ledger.c1 > 0.0);
    assert!(report
        .rows
        .iter()
        .all(|r| r.certified == (r.epsilon * report.packet.radius <= report.threshold.kappa)));
}

#[test]
fn mathieu_reports_are_byte_identical() {
    let mut cfg = RunConfig::mathieu(0.0);
    cfg.taus = vec![0.0, 1.0];
    let a = run_convergence::<f64>(&cfg).unwrap();
    let b = run_convergence::<f64>(&cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    write_convergence(&mut ca, &a).unwrap();
    write_convergence(&mut cb, &b).unwrap();
    assert_eq!(ca, cb);
    for f in &a.fits {
        if f.tau > 0.0 {
            assert_eq!(f.status, FitStatus::Fitted);
            assert!(f.slope.unwrap() > 0.5);
        }
    }
    for r in &a.rows {
        assert!(
            r.exact_norm > 0.0 && (r.exact_norm - r.effective_norm).abs() <= 1e-8 * r.exact_norm
        );
        assert!(r.bound >= r.bound_outer && r.bound >= r.bound_inner);
    }
}

#[test]
fn selftest_passes() {
    let checks = selftest().unwrap();
    assert!(!checks.is_empty());
    for c in &checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

#[test]
fn verify_sweep_rows_respect_the_bound() {
    let pipe = Pipeline::<f64>::build(&RunConfig::mathieu(PI)).unwrap();
    let rows = verify_sweep(&pipe, &[0.3, 0.1, 0.03], &[1.0, 10.0]).unwrap();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert!(r.lhs <= r.rhs, "{r:?}");
        assert_eq!(r.margin, r.rhs - r.lhs);
    }
    let mut out = Vec::new();
    write_verify(&mut out, &rows).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("dk,tau,lhs,rhs,margin"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn threshold_record_matches_pipeline() {
    let pipe = Pipeline::<f64>::build(&RunConfig::free(1, vec![PI], 1)).unwrap();
    let rec = threshold_record(&pipe.operator, &pipe.threshold);
    assert_eq!(rec.n, 2);
    assert_eq!(rec.lambda0, pipe.threshold.lambda0);
    assert_eq!(rec.basis.coefficients.len(), 2);
    assert_eq!(rec.basis.indices.len(), pipe.operator.len());
    let json = serde_json::to_string(&rec).unwrap();
    assert_eq!(
        serde_json::from_str::<bloch_hom::harness::ThresholdRecord>(&json).unwrap(),
        rec
    );
}

#[test]
fn fractional_coordinates_and_paths() {
    let lat = Lattice::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.5]]).unwrap();
    let k = k_from_fractional(&lat, &[0.5, 0.25]);
    assert!(
        (k[0] - PI / 2.0).abs() < 1e-14 && (k[1] - PI).abs() < 1e-14,
        "{k:?}"
    );
    assert_eq!(symmetry_path(1), vec![vec![-0.5], vec![0.5]]);
    assert_eq!(symmetry_path(2).len(), 4);
    let p3 = symmetry_path(3);
    assert_eq!(p3.first(), p3.last());
    assert!(p3.contains(&vec![0.5, 0.5, 0.5]));
}

#[test]
fn numbers_carry_seventeen_digits() {
    let x = 0.1f64 + 0.2;
    let s = num(x);
    assert_eq!(s.parse::<f64>().unwrap(), x);
    assert!(!s.contains(' '));
    assert_eq!(num(-1.0).parse::<f64>().unwrap(), -1.0);
}
