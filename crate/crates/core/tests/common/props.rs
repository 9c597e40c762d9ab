//! Property checks shared by the proptest suite and the acceptance runner.
//! None of them depend on Monte-Carlo integration.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::seq::SliceRandom;
use wsign_core::depth_weights::{spatial_sign, WeightFunction, WeightKind, WeightSpec};
use wsign_core::elliptical::rng_for;
use wsign_core::fdata::{outlier_report, project_curves, robust_fpca_kind, CurveSet, SdDegrees};
use wsign_core::location::solve_weighted_median;
use wsign_core::scatter::{scm, tyler, wscm};
use wsign_core::{DataMatrix, Family};

use super::{clean_curves, diag_model, random_orthogonal, sample};

type Check = Result<(), TestCaseError>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

pub fn vec_strategy(p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, p)
}

pub fn kind_strategy() -> impl Strategy<Value = WeightKind> {
    prop::sample::select(vec![WeightKind::Hsd, WeightKind::Mhd, WeightKind::Pd])
}

pub fn family_strategy() -> impl Strategy<Value = Family> {
    prop::sample::select(vec![Family::Normal, Family::StudentT(5), Family::StudentT(10)])
}

/// `|S(x; mu)| = 1` away from the center and `0` at it.
pub fn sign_norm(x: &[f64], mu: &[f64]) -> Check {
    let x = DVector::from_column_slice(x);
    let mu = DVector::from_column_slice(mu);
    let s = spatial_sign(&x, &mu);
    let want = if (&x - &mu).norm() > 0.0 { 1.0 } else { 0.0 };
    ensure((s.norm() - want).abs() < 1e-12, || format!("|S| = {} for x = {x:?}", s.norm()))?;
    let at_center = spatial_sign(&mu, &mu);
    ensure(at_center.norm() == 0.0, || "sign at the center is not zero".into())
}

/// Population weights lie in `[0, sup W]` and do not decrease outward.
pub fn weight_bounded_monotone(kind: WeightKind, family: Family, p: usize, radii: &mut [f64]) -> Check {
    let diag: Vec<f64> = (0..p).map(|i| (p - i) as f64).collect();
    let model = diag_model(family, &diag);
    let wf = WeightFunction::population(&WeightSpec::for_model(kind, &model), &model)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    radii.sort_by(f64::total_cmp);
    let ub = wf.upper_bound();
    let vals: Vec<f64> = radii.iter().map(|&r| wf.profile(r)).collect();
    for (r, v) in radii.iter().zip(&vals) {
        ensure(*v >= 0.0 && *v <= ub * (1.0 + 1e-12), || format!("W({r}) = {v} outside [0, {ub}]"))?;
    }
    for k in 1..vals.len() {
        ensure(vals[k] >= vals[k - 1] - 1e-12, || {
            format!("W decreases between r = {} and {}", radii[k - 1], radii[k])
        })?;
    }
    Ok(())
}

fn nonsingular(p: usize, seed: u64) -> DMatrix<f64> {
    let q1 = random_orthogonal(p, seed);
    let q2 = random_orthogonal(p, seed ^ 0x5555);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(p, (0..p).map(|i| 0.3 + 1.7 * i as f64)));
    q1 * d * q2
}

/// Empirical weights are unchanged when data and standardization move
/// together under `x -> A x + b`.
pub fn weight_affine_invariance(kind: WeightKind, family: Family, p: usize, n: usize, seed: u64) -> Check {
    let diag: Vec<f64> = (0..p).map(|i| 1.0 + i as f64).collect();
    let data = sample(&diag_model(family, &diag), n, seed);
    let err = |e: wsign_core::Error| TestCaseError::fail(e.to_string());
    let spec = WeightSpec::pilot(&data, kind).map_err(err)?;
    let a = nonsingular(p, seed);
    let b = DVector::from_iterator(p, (0..p).map(|i| 3.0 * i as f64 - 2.0));
    let moved = data.affine(&a, &b).map_err(err)?;
    let spec_moved = spec.transformed(&a, &b).map_err(err)?;
    let w = WeightFunction::empirical(&spec, &data).map_err(err)?.eval_all(&data);
    let w2 = WeightFunction::empirical(&spec_moved, &moved).map_err(err)?.eval_all(&moved);
    for (i, (u, v)) in w.iter().zip(&w2).enumerate() {
        ensure((u - v).abs() <= 1e-8 * u.abs().max(1.0), || format!("weight {i}: {u} vs {v}"))?;
    }
    Ok(())
}

/// The weighted spatial median moves with orthogonal maps and shifts.
pub fn location_orthogonal_equivariance(p: usize, n: usize, seed: u64) -> Check {
    let diag: Vec<f64> = (0..p).map(|i| 1.0 + i as f64).collect();
    let data = sample(&diag_model(Family::StudentT(5), &diag), n, seed);
    let w: Vec<f64> = (0..n).map(|i| 0.5 + ((i * 7919) % 13) as f64 / 13.0).collect();
    let q = random_orthogonal(p, seed);
    let b = DVector::from_iterator(p, (0..p).map(|i| 10.0 - i as f64));
    let moved = data.affine(&q, &b).unwrap();
    let m1 = solve_weighted_median(data.values(), &w, 1e-12, 5000).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let m2 = solve_weighted_median(moved.values(), &w, 1e-12, 5000).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let want = &q * &m1.point + &b;
    let scale = data.values().amax().max(1.0);
    ensure((&m2.point - &want).amax() <= 1e-7 * scale, || {
        format!("median {:?} vs rotated {:?}", m2.point, want)
    })
}

/// Sign, weighted sign and Tyler scatter rotate as `Q S Q^T`.
pub fn scatter_orthogonal_equivariance(kind: WeightKind, p: usize, n: usize, seed: u64) -> Check {
    let err = |e: wsign_core::Error| TestCaseError::fail(e.to_string());
    let diag: Vec<f64> = (0..p).map(|i| (p - i) as f64 + 0.5).collect();
    let data = sample(&diag_model(Family::StudentT(6), &diag), n, seed);
    let q = random_orthogonal(p, seed.wrapping_add(1));
    let b = DVector::from_iterator(p, (0..p).map(|i| i as f64 - 1.5));
    let moved: DataMatrix = data.affine(&q, &b).map_err(err)?;
    let mu = DVector::from_iterator(p, (0..p).map(|j| data.values().column(j).mean()));
    let mu2 = &q * &mu + &b;
    let spec = WeightSpec::pilot(&data, kind).map_err(err)?;
    let spec2 = spec.transformed(&q, &b).map_err(err)?;
    let pairs = [
        (scm(&data, &mu).map_err(err)?.matrix, scm(&moved, &mu2).map_err(err)?.matrix, 1e-10),
        (
            wscm(&data, &spec, &mu).map_err(err)?.matrix,
            wscm(&moved, &spec2, &mu2).map_err(err)?.matrix,
            1e-8,
        ),
        (
            tyler(&data, &mu, 1e-12, 5000).map_err(err)?.matrix,
            tyler(&moved, &mu2, 1e-12, 5000).map_err(err)?.matrix,
            1e-8,
        ),
    ];
    for (k, (a, b, tol)) in pairs.iter().enumerate() {
        let want = &q * a * q.transpose();
        ensure((b - &want).amax() <= tol * want.amax(), || {
            format!("estimator {k}: rotated fit differs by {}", (b - &want).amax())
        })?;
    }
    Ok(())
}

/// Reordering curves reorders the flags and nothing else.
pub fn flags_permutation_equivariance(seed: u64, perm_seed: u64) -> Check {
    let err = |e: wsign_core::Error| TestCaseError::fail(e.to_string());
    let (t, mut values) = clean_curves(30, 40, seed);
    // two loud curves so that something is flagged
    for l in 0..40 {
        values[(3, l)] *= 6.0;
        values[(17, l)] += (12.0 * t[l]).sin();
    }
    let report = |v: &DMatrix<f64>| -> Result<Vec<(usize, bool, bool)>, TestCaseError> {
        let curves = CurveSet::new(t.clone(), v.clone()).map_err(err)?;
        let proj = project_curves(&curves, 10).map_err(err)?;
        let fit = robust_fpca_kind(&proj, 1, WeightKind::Pd, 5).map_err(err)?;
        let r = outlier_report(&proj, &fit, SdDegrees::Two).map_err(err)?;
        Ok(r.flagged.iter().map(|f| (f.index, f.by_od, f.by_sd)).collect())
    };
    let base = report(&values)?;
    let mut perm: Vec<usize> = (0..values.nrows()).collect();
    perm.shuffle(&mut rng_for(perm_seed, 0));
    let permuted = DMatrix::from_fn(values.nrows(), values.ncols(), |i, l| values[(perm[i], l)]);
    let mut mapped: Vec<(usize, bool, bool)> = report(&permuted)?
        .into_iter()
        .map(|(i, a, b)| (perm[i], a, b))
        .collect();
    mapped.sort();
    ensure(mapped == base, || format!("flags {base:?} became {mapped:?} after reordering"))
}
