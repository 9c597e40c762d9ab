mod common;

use common::{diag_model, sample};
use nalgebra::{DMatrix, DVector};
use wsign_core::asymptotics::{
    eigen_asymptotic_report, evec_are_adcm, evec_are_wscm, if_adcm_eigenvector_numeric, if_sample_cov_eigenvector,
    if_scm_eigenvector, if_tyler_eigenvector, if_wscm_eigenvector, wscm_eigenvalues, EigenEstimator, NumericIfConfig,
    NumericIfEngine,
};
use wsign_core::scatter::wscm;
use wsign_core::{Family, WeightKind, WeightSpec};

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

#[test]
fn wscm_if_vanishes_at_center_and_axes() {
    let m = diag_model(Family::Normal, &[3.0, 2.0, 1.0]);
    for kind in WeightKind::DEPTHS {
        let spec = WeightSpec::for_model(kind, &m);
        let at_center = if_wscm_eigenvector(&v(&[0.0, 0.0, 0.0]), 0, &m, &spec, 50_000, 1).unwrap();
        assert_eq!(at_center.norm(), 0.0);
        let on_axis = if_wscm_eigenvector(&v(&[0.0, 2.5, 0.0]), 1, &m, &spec, 50_000, 1).unwrap();
        assert!(on_axis.norm() < 1e-14, "{kind:?}");
    }
}

#[test]
fn wscm_if_matches_contamination() {
    let m = diag_model(Family::Normal, &[2.0, 1.0]);
    let x0 = v(&[1.0, 1.0]);
    let spec = WeightSpec::for_model(WeightKind::Pd, &m);
    let exact = if_wscm_eigenvector(&x0, 0, &m, &spec, 1_000_000, 2).unwrap();
    let cfg = NumericIfConfig {
        eps: 1e-4,
        mc: 1_000_000,
        seed: 3,
        batches: 10,
    };
    let num = NumericIfEngine::new(EigenEstimator::Wscm(WeightKind::Pd), &m, 1.0, cfg)
        .unwrap()
        .eval(&x0, 0)
        .unwrap();
    let rel = (num.norm - exact.norm()).abs() / exact.norm();
    assert!(rel < 0.02, "exact {} numeric {} +- {}", exact.norm(), num.norm, num.std_error);
}

#[test]
fn tyler_if_examples() {
    let m = diag_model(Family::StudentT(5), &[3.0, 2.0, 1.0]);
    assert!(if_tyler_eigenvector(&v(&[4.0, 0.0, 0.0]), 0, &m).unwrap().norm() < 1e-14);
    let x0 = v(&[0.7, -1.2, 0.4]);
    let base = if_tyler_eigenvector(&x0, 0, &m).unwrap();
    for c in [1e-3, 0.5, 7.0, 1e4] {
        let scaled = if_tyler_eigenvector(&(&x0 * c), 0, &m).unwrap();
        assert!((scaled - &base).amax() < 1e-12 * base.amax(), "c = {c}");
    }
}

#[test]
fn scm_eigenvalues_are_one_over_p_for_identity() {
    let m = diag_model(Family::Normal, &[1.0; 3]);
    let lt = wscm_eigenvalues(&m, &WeightSpec::unit(3), 200_000, 4).unwrap();
    let total: f64 = lt.iter().map(|e| e.value).sum();
    assert!((total - 1.0).abs() < 1e-12);
    for e in &lt {
        assert!((e.value - 1.0 / 3.0).abs() < 4.0 * e.std_error, "{e:?}");
    }
    // equal eigenvalues make the eigenvector IF undefined
    assert!(if_scm_eigenvector(&v(&[1.0, 1.0, 0.0]), 0, &m, 10_000, 4).is_err());
}

#[test]
fn adcm_if_zero_at_center() {
    let m = diag_model(Family::Normal, &[2.0, 1.0]);
    for kind in WeightKind::DEPTHS {
        let spec = WeightSpec::for_model(kind, &m);
        let r = if_adcm_eigenvector_numeric(&v(&[0.0, 0.0]), 0, &m, &spec, 1e-4, 100_000, 5).unwrap();
        assert!(r.norm <= 3.0 * r.std_error, "{kind:?}: {} vs se {}", r.norm, r.std_error);
    }
}

#[test]
fn adcm_if_bounded_and_covariance_unbounded() {
    let m = diag_model(Family::Normal, &[2.0, 1.0]);
    let dir = v(&[1.0, 1.0]).normalize();
    let mags = [1.0, 10.0, 100.0, 1000.0];
    for kind in WeightKind::DEPTHS {
        let cfg = NumericIfConfig {
            eps: 1e-4,
            mc: 100_000,
            seed: 6,
            batches: 10,
        };
        let engine = NumericIfEngine::new(EigenEstimator::Adcm(kind), &m, 1.0, cfg).unwrap();
        let norms: Vec<f64> = mags.iter().map(|&r| engine.eval(&(&dir * r), 0).unwrap().norm).collect();
        let (a, b) = (norms[2], norms[3]);
        assert!(a.max(b) / a.min(b) < 1.2, "{kind:?}: {norms:?}");
    }
    let cov: Vec<f64> = mags
        .iter()
        .map(|&r| if_sample_cov_eigenvector(&(&dir * r), 0, &m).unwrap().norm())
        .collect();
    for w in cov.windows(2) {
        assert!(w[1] >= 10.0 * w[0], "{cov:?}");
    }
}

#[test]
fn report_vanishing_moments() {
    let m = diag_model(Family::Normal, &[4.0, 3.0, 2.0, 1.0]);
    let r = eigen_asymptotic_report(&m, &WeightSpec::for_model(WeightKind::Pd, &m), 200_000, 7).unwrap();
    assert!(!r.vanishing_moments.is_empty());
    for (idx, e) in &r.vanishing_moments {
        assert!(e.value.abs() < 3.0 * e.std_error, "{idx:?}: {e:?}");
    }
    assert_eq!(r.mc_samples, 200_000);
}

#[test]
fn unit_report_structure() {
    let m = diag_model(Family::StudentT(6), &[3.0, 2.0, 1.0]);
    let r = eigen_asymptotic_report(&m, &WeightSpec::unit(3), 100_000, 8).unwrap();
    assert!((&r.eval_cov - r.eval_cov.transpose()).amax() < 1e-14);
    for i in 0..3 {
        let b = &r.evec_var_blocks[i][i];
        assert!(b.iter().all(|x| x.is_finite()));
        assert!(b.symmetric_eigenvalues().min() > -1e-12);
        for j in 0..3 {
            let t = &r.evec_var_blocks[i][j] - r.evec_var_blocks[j][i].transpose();
            assert!(t.amax() < 1e-14);
        }
    }
}

/// Replication oracle of the eigenvector CLT: the spread of `sqrt(n) g_1`
/// over repeated samples against the report diagonal.
#[test]
fn report_matches_replications() {
    let m = diag_model(Family::Normal, &[4.0, 3.0, 2.0, 1.0]);
    let spec = WeightSpec::for_model(WeightKind::Mhd, &m);
    let r = eigen_asymptotic_report(&m, &spec, 400_000, 9).unwrap();
    let (reps, n) = (500, 2000);
    let mut draws = DMatrix::<f64>::zeros(reps, 4);
    for k in 0..reps {
        let d = sample(&m, n, 5000 + k as u64);
        let mut g = wscm(&d, &spec, m.mu()).unwrap().eigvec(0);
        if g[0] < 0.0 {
            g = -g;
        }
        draws.set_row(k, &(g.transpose() * (n as f64).sqrt()));
    }
    for c in 1..4 {
        let col = draws.column(c);
        let mean = col.mean();
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let want = r.evec_var_blocks[0][0][(c, c)];
        assert!((var / want - 1.0).abs() < 0.2, "entry {c}: replicated {var} vs limit {want}");
    }
}

#[test]
fn wscm_are_examples() {
    let normal = diag_model(Family::Normal, &[4.0, 3.0, 2.0, 1.0]);
    let a = evec_are_wscm(&normal, &WeightSpec::for_model(WeightKind::Pd, &normal), 0, 200_000, 10).unwrap();
    assert!(a.normal_theory.value < 1.0, "{a:?}");
    assert_eq!(a.kurtosis, 0.0);
    let b = evec_are_wscm(&normal, &WeightSpec::for_model(WeightKind::Pd, &normal), 0, 200_000, 10).unwrap();
    assert_eq!(a.normal_theory.value / b.normal_theory.value, 1.0);

    let t5 = diag_model(Family::StudentT(5), &[4.0, 3.0, 2.0, 1.0]);
    let t = evec_are_wscm(&t5, &WeightSpec::for_model(WeightKind::Pd, &t5), 0, 200_000, 11).unwrap();
    assert!(t.kurtosis_adjusted.value > 1.0, "{t:?}");
}

#[test]
fn adcm_are_normal_hsd() {
    let m = diag_model(Family::Normal, &[2.0, 1.0]);
    let a = evec_are_adcm(&m, &WeightSpec::for_model(WeightKind::Hsd, &m), 1_000_000, 12).unwrap();
    assert!((a.normal_theory.value - 0.68).abs() < 0.08, "{a:?}");
    assert!(a.normal_theory.std_error > 0.0);
}

#[test]
fn are_is_deterministic() {
    let m = diag_model(Family::StudentT(10), &[2.0, 1.0]);
    let spec = WeightSpec::for_model(WeightKind::Pd, &m);
    assert_eq!(
        evec_are_adcm(&m, &spec, 50_000, 3).unwrap(),
        evec_are_adcm(&m, &spec, 50_000, 3).unwrap()
    );
    assert_eq!(
        evec_are_wscm(&m, &spec, 1, 50_000, 3).unwrap(),
        evec_are_wscm(&m, &spec, 1, 50_000, 3).unwrap()
    );
}
