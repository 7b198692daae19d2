//! Error-feedback gain synthesis with probabilistic validation.
//!
//! The gain is obtained from the discrete algebraic Riccati equation on the
//! center of the model set, then certified by checking Schur stability of
//! `A + B K` on a scenario batch of i.i.d. members whose size follows the
//! sample-complexity bound `N_k ≥ (5/ε)(ln(4/δ) + d ln(40/ε))` with
//! `d = 4 n log₂(2e (2n)² (2n+1))`. On a failed certificate the state
//! penalty is doubled and synthesis retried.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::datagen::derive_rng;
use crate::error::{Error, Result};
use crate::zonoset::MatrixZonotope;
use rand::Rng;

/// Scenario count required for accuracy `epsilon` and confidence `delta`
/// on a platoon of `n` vehicles.
pub fn required_sample_count(epsilon: f64, delta: f64, n: usize) -> Result<usize> {
    if !(0.0..1.0).contains(&epsilon)
        || !(0.0..1.0).contains(&delta)
        || epsilon == 0.0
        || delta == 0.0
        || n == 0
    {
        return Err(Error::InvalidParameter(format!(
            "epsilon and delta must lie in (0,1) and n ≥ 1; got ε={epsilon}, δ={delta}, n={n}"
        )));
    }
    let two_n = (2 * n) as f64;
    let d = 4.0 * n as f64 * (2.0 * std::f64::consts::E * two_n * two_n * (two_n + 1.0)).log2();
    let bound = 5.0 / epsilon * ((4.0 / delta).ln() + d * (40.0 / epsilon).ln());
    Ok(bound.ceil() as usize)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            context: "spectral_radius",
            expected: "square matrix".into(),
            got: format!("{:?}", m.shape()),
        });
    }
    Ok(m
        .complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max))
}

/// Riccati value iteration for the regulator gain; returns `K` in the
/// `u = K x` convention, so the closed loop is `A + B K`.
pub fn dare_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: f64,
) -> Result<DMatrix<f64>> {
    let dim = a.nrows();
    if !a.is_square() || b.nrows() != dim || b.ncols() != 1 || q.shape() != (dim, dim) {
        return Err(Error::DimensionMismatch {
            context: "dare_gain",
            expected: format!("A {dim}×{dim}, B {dim}×1, Q {dim}×{dim}"),
            got: format!("A {:?}, B {:?}, Q {:?}", a.shape(), b.shape(), q.shape()),
        });
    }
    let a_t = a.transpose();
    let b_t = b.transpose();
    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..200_000 {
        let btpb = r + (&b_t * &p * b)[(0, 0)];
        if btpb <= 0.0 || !btpb.is_finite() {
            return Err(Error::NotStabilizable("Riccati iteration lost definiteness".into()));
        }
        let btpa = &b_t * &p * a;
        let next = &a_t * &p * a - (&a_t * &p * b) * &btpa / btpb + q;
        let diff = (&next - &p).amax();
        p = next;
        if p.amax() > 1e14 {
            return Err(Error::NotStabilizable(
                "Riccati iteration diverged; center pair has an unstabilizable mode".into(),
            ));
        }
        if diff < 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotStabilizable("Riccati iteration did not converge".into()));
    }
    let btpb = r + (&b_t * &p * b)[(0, 0)];
    let k = -(&b_t * &p * a) / btpb;
    Ok(k)
}

/// Outcome of one scenario validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub failures: usize,
    pub worst_spectral_radius: f64,
    pub margin: f64,
    pub passed: bool,
}

/// Check `ρ(A + B K) ≤ 1 − margin` on `n_k` members of `m_ab` drawn i.i.d.
/// with uniform generator coefficients. Sampling is chunked, each chunk on
/// its own seed stream, so the verdict is deterministic in `seed` and
/// independent of thread scheduling.
pub fn validate_gain(
    k_gain: &DMatrix<f64>,
    m_ab: &MatrixZonotope,
    n_k: usize,
    margin: f64,
    seed: u64,
) -> Result<ValidationReport> {
    let (dim, cols) = m_ab.shape();
    if cols != dim + 1 || k_gain.shape() != (1, dim) {
        return Err(Error::DimensionMismatch {
            context: "validate_gain",
            expected: format!("[A B] {dim}×{}, K 1×{dim}", dim + 1),
            got: format!("{:?} and {:?}", m_ab.shape(), k_gain.shape()),
        });
    }
    // fold the gain into the sampled map: members of M_AB·[I; K] are exactly
    // the closed-loop matrices A + B K
    let mut ik = DMatrix::zeros(dim + 1, dim);
    ik.view_mut((0, 0), (dim, dim))
        .copy_from(&DMatrix::identity(dim, dim));
    ik.row_mut(dim).copy_from(k_gain);
    let closed = m_ab.right_multiply(&ik)?;
    let flat = closed.flatten();
    let gamma = flat.num_generators();

    const CHUNK: usize = 512;
    let chunks = n_k.div_ceil(CHUNK);
    let (failures, worst) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = derive_rng(seed, 0x4741_0000 + c as u64);
            let count = CHUNK.min(n_k - c * CHUNK);
            let betas =
                DMatrix::from_fn(gamma, count, |_, _| rng.gen::<f64>().mul_add(2.0, -1.0));
            let members = flat.member_batch(&betas);
            let mut worst = 0.0_f64;
            let mut failures = 0usize;
            for col in 0..count {
                let m = flat.unflatten(members.column(col).as_slice());
                let rho = spectral_radius(&m).expect("square by construction");
                if rho > 1.0 - margin {
                    failures += 1;
                }
                worst = worst.max(rho);
            }
            (failures, worst)
        })
        .reduce(|| (0, 0.0), |a, b| (a.0 + b.0, a.1.max(b.1)));

    Ok(ValidationReport {
        samples: n_k,
        failures,
        worst_spectral_radius: worst,
        margin,
        passed: failures == 0,
    })
}

/// Synthesized gain together with its validation evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainResult {
    /// Row gain, `u_e = K x_e`.
    pub k: Vec<f64>,
    pub samples_checked: usize,
    pub worst_spectral_radius: f64,
    pub margin: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub retunes: usize,
}

impl GainResult {
    pub fn k_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, self.k.len(), &self.k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(std::fs::File::create(path)?, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
    }
}

/// Synthesize and certify an error-feedback gain for the model set.
///
/// `q_diag` and `r_weight` are the regulator penalties on the center pair;
/// on a failed certificate the state penalty doubles, up to `retune_budget`
/// retries.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_gain(
    m_ab: &MatrixZonotope,
    q_diag: &DVector<f64>,
    r_weight: f64,
    epsilon: f64,
    delta: f64,
    margin: f64,
    seed: u64,
    retune_budget: usize,
) -> Result<GainResult> {
    let (dim, _) = m_ab.shape();
    if dim % 2 != 0 || q_diag.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "synthesize_gain",
            expected: format!("even state dimension with Q diag of length {dim}"),
            got: format!("{}", q_diag.len()),
        });
    }
    let n = dim / 2;
    let n_k = required_sample_count(epsilon, delta, n)?;
    let a_c = m_ab.center().columns(0, dim).into_owned();
    let b_c = m_ab.center().columns(dim, 1).into_owned();

    let mut scale = 1.0;
    let mut last = None;
    for retune in 0..=retune_budget {
        let q = DMatrix::from_diagonal(&(q_diag * scale));
        let k = dare_gain(&a_c, &b_c, &q, r_weight)?;
        let report = validate_gain(&k, m_ab, n_k, margin, seed.wrapping_add(retune as u64))?;
        if report.passed {
            return Ok(GainResult {
                k: k.row(0).iter().copied().collect(),
                samples_checked: report.samples,
                worst_spectral_radius: report.worst_spectral_radius,
                margin,
                epsilon,
                delta,
                seed,
                retunes: retune,
            });
        }
        last = Some(report);
        scale *= 2.0;
    }
    Err(Error::GainValidationFailed {
        worst_radius: last.map_or(f64::NAN, |r| r.worst_spectral_radius),
        retries: retune_budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::SmallRng;
    use rand::SeedableRng;

    #[test]
    fn sample_count_matches_bound() {
        // frozen from an independent evaluation of the bound
        assert_eq!(required_sample_count(0.01, 0.001, 3).unwrap(), 522_690);
        assert_eq!(required_sample_count(0.2, 0.1, 3).unwrap(), 16_655);
        assert_eq!(required_sample_count(0.05, 0.01, 2).unwrap(), 47_470);
        // monotone: looser accuracy or confidence needs fewer samples
        assert!(
            required_sample_count(0.02, 0.001, 3).unwrap()
                < required_sample_count(0.01, 0.001, 3).unwrap()
        );
        assert!(
            required_sample_count(0.01, 0.01, 3).unwrap()
                < required_sample_count(0.01, 0.001, 3).unwrap()
        );
        assert!(required_sample_count(1.0, 0.5, 3).is_err());
        assert!(required_sample_count(0.5, 0.0, 3).is_err());
    }

    #[test]
    fn spectral_radius_cases() {
        assert_relative_eq!(spectral_radius(&DMatrix::identity(4, 4)).unwrap(), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.5, -0.9]));
        assert_relative_eq!(spectral_radius(&d).unwrap(), 0.9);
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());

        // similarity transform preserves the spectrum
        let mut rng = SmallRng::seed_from_u64(3);
        let eigs = DVector::from_fn(6, |i, _| 0.3 + 0.1 * i as f64);
        let t = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let t_inv = t.clone().try_inverse().unwrap();
        let m = &t * DMatrix::from_diagonal(&eigs) * &t_inv;
        assert_relative_eq!(spectral_radius(&m).unwrap(), 0.8, epsilon = 1e-9);
    }

    #[test]
    fn dare_stabilizes_double_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
        let q = DMatrix::identity(2, 2);
        let k = dare_gain(&a, &b, &q, 0.1).unwrap();
        let closed = &a + &b * &k;
        assert!(spectral_radius(&closed).unwrap() < 1.0);
    }

    #[test]
    fn dare_rejects_unstabilizable_pair() {
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 0.5]));
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]); // unstable mode untouched
        let q = DMatrix::identity(2, 2);
        assert!(matches!(
            dare_gain(&a, &b, &q, 0.1),
            Err(Error::NotStabilizable(_))
        ));
    }

    #[test]
    fn validate_gain_verdicts() {
        let stable = MatrixZonotope::exact(DMatrix::from_row_slice(
            2,
            3,
            &[0.5, 0.1, 0.0, 0.0, 0.4, 1.0],
        ));
        let k0 = DMatrix::zeros(1, 2);
        let report = validate_gain(&k0, &stable, 100, 1e-6, 1).unwrap();
        assert!(report.passed);
        assert!(report.worst_spectral_radius < 1.0);

        let unstable = MatrixZonotope::exact(DMatrix::from_row_slice(
            2,
            3,
            &[1.2, 0.0, 0.0, 0.0, 0.4, 1.0],
        ));
        let report = validate_gain(&k0, &unstable, 100, 1e-6, 1).unwrap();
        assert!(!report.passed);
        assert!(report.worst_spectral_radius > 1.0);
    }

    #[test]
    fn synthesize_on_point_set() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let mut center = DMatrix::zeros(2, 3);
        center.view_mut((0, 0), (2, 2)).copy_from(&a);
        center[(1, 2)] = 0.1;
        let m_ab = MatrixZonotope::exact(center);
        let q = DVector::from_element(2, 1.0);
        let result = synthesize_gain(&m_ab, &q, 0.1, 0.2, 0.1, 1e-6, 9, 2).unwrap();
        assert!(result.worst_spectral_radius < 1.0 - 1e-6);
        assert_eq!(result.retunes, 0);
        assert!(result.samples_checked >= required_sample_count(0.2, 0.1, 1).unwrap());

        // verdict is stable across validation seeds
        let k = result.k_matrix();
        for seed in [5u64, 99] {
            let r = validate_gain(&k, &m_ab, 1000, 1e-6, seed).unwrap();
            assert!(r.passed);
        }
    }

    #[test]
    fn synthesize_fails_on_uncontrollable_spread() {
        // center is stable but the set contains pairs whose unstable mode the
        // input cannot reach: every candidate gain must fail validation
        let center = DMatrix::from_row_slice(2, 3, &[0.5, 0.0, 1.0, 0.0, 0.5, 0.0]);
        let spread = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let m_ab = MatrixZonotope::new(center, vec![spread]).unwrap();
        let q = DVector::from_element(2, 1.0);
        let out = synthesize_gain(&m_ab, &q, 0.1, 0.2, 0.1, 1e-6, 4, 3);
        match out {
            Err(Error::GainValidationFailed { worst_radius, retries }) => {
                assert!(worst_radius > 1.0);
                assert_eq!(retries, 3);
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn gain_result_roundtrip() {
        let result = GainResult {
            k: vec![0.1, -0.2, 0.3],
            samples_checked: 10,
            worst_spectral_radius: 0.9,
            margin: 1e-6,
            epsilon: 0.1,
            delta: 0.1,
            seed: 7,
            retunes: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gain.json");
        result.save(&path).unwrap();
        assert_eq!(GainResult::load(&path).unwrap(), result);
    }
}
