//! Dense convex quadratic programming for the predictive controllers:
//!
//! ```text
//!   minimize  ½ zᵀ diag(p) z + qᵀ z
//!   subject to  A z = b,   lb ≤ z ≤ ub
//! ```
//!
//! with strictly positive `p`. Solved by a primal-dual active-set method on
//! the bound constraints: each candidate set pins variables at their bounds,
//! the resulting equality-constrained problem is reduced through the
//! diagonal Hessian to a dense symmetric Schur system, and bounds are
//! activated/released from the primal and dual violations until the KKT
//! conditions hold. The Schur matrix depends only on the active set, never
//! on `q` or `b`, so factorizations are cached across the receding-horizon
//! solves where only the measurement side changes.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::collections::HashSet;

use crate::error::{Error, Result};

/// Which bound a pinned variable sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Lower,
    Upper,
}

/// Sorted list of (variable, side) pairs pinned at bounds.
pub type ActiveSet = Vec<(usize, Side)>;

/// Problem data with immutable structure.
#[derive(Debug, Clone)]
pub struct BoxQp {
    pub p_diag: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

/// Primal/dual solution with its verified optimality residual.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    /// Signed bound multipliers, zero on inactive variables
    /// (≤ 0 at lower bounds, ≥ 0 at upper bounds).
    pub mu_bounds: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

struct CachedFactor {
    active: ActiveSet,
    chol: Cholesky<f64, Dyn>,
}

/// Reusable solver state for one problem structure.
pub struct QpWorkspace {
    qp: BoxQp,
    /// Aᵀ, kept to avoid re-transposing on every solve.
    a_t: DMatrix<f64>,
    /// A·P⁻¹ (columns of A scaled by 1/pᵢ).
    a_pinv: DMatrix<f64>,
    /// A·P⁻¹·Aᵀ, the Schur block shared by every active set.
    base_schur: DMatrix<f64>,
    factors: Vec<CachedFactor>,
    warm: ActiveSet,
}

const MAX_CACHED: usize = 8;
const MAX_ITER: usize = 300;
const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-10;

impl QpWorkspace {
    pub fn new(qp: BoxQp) -> Result<Self> {
        let (m, n) = qp.a_eq.shape();
        if qp.p_diag.len() != n || qp.lb.len() != n || qp.ub.len() != n {
            return Err(Error::DimensionMismatch {
                context: "QpWorkspace::new",
                expected: format!("{n} variables"),
                got: format!(
                    "p {}, lb {}, ub {}",
                    qp.p_diag.len(),
                    qp.lb.len(),
                    qp.ub.len()
                ),
            });
        }
        if qp.p_diag.iter().any(|&p| p <= 0.0) {
            return Err(Error::InvalidParameter(
                "QP Hessian diagonal must be strictly positive".into(),
            ));
        }
        if qp.lb.iter().zip(qp.ub.iter()).any(|(l, u)| l > u) {
            return Err(Error::QpFailure("empty box constraint".into()));
        }
        let a_t = qp.a_eq.transpose();
        let mut a_pinv = qp.a_eq.clone();
        for (i, mut col) in a_pinv.column_iter_mut().enumerate() {
            col /= qp.p_diag[i];
        }
        let base_schur = &a_pinv * &a_t;
        let _ = m;
        Ok(Self {
            qp,
            a_t,
            a_pinv,
            base_schur,
            factors: Vec::new(),
            warm: Vec::new(),
        })
    }

    pub fn problem(&self) -> &BoxQp {
        &self.qp
    }

    fn factorize(&mut self, active: &ActiveSet) -> Result<usize> {
        if let Some(pos) = self.factors.iter().position(|f| &f.active == active) {
            return Ok(pos);
        }
        let m = self.qp.a_eq.nrows();
        let w = active.len();
        let mut s = DMatrix::zeros(m + w, m + w);
        s.view_mut((0, 0), (m, m)).copy_from(&self.base_schur);
        for (j, &(i, _)) in active.iter().enumerate() {
            s.view_mut((0, m + j), (m, 1)).copy_from(&self.a_pinv.column(i));
            s.view_mut((m + j, 0), (1, m))
                .copy_from(&self.a_pinv.column(i).transpose());
            s[(m + j, m + j)] = 1.0 / self.qp.p_diag[i];
        }
        let chol = Cholesky::new(s).ok_or_else(|| {
            Error::QpFailure(
                "KKT system singular: equality constraints conflict with active bounds".into(),
            )
        })?;
        // a numerically successful factorization of a singular system shows
        // up as a collapsed pivot
        let diag = chol.l_dirty().diagonal();
        if diag.min() <= 1e-10 * diag.max() {
            return Err(Error::QpFailure(
                "KKT system numerically singular under the current active set".into(),
            ));
        }
        if self.factors.len() == MAX_CACHED {
            self.factors.remove(1.min(self.factors.len() - 1));
        }
        self.factors.push(CachedFactor {
            active: active.clone(),
            chol,
        });
        Ok(self.factors.len() - 1)
    }

    fn bound_value(&self, i: usize, side: Side) -> f64 {
        match side {
            Side::Lower => self.qp.lb[i],
            Side::Upper => self.qp.ub[i],
        }
    }

    /// Solve for the current right-hand sides. `q` is the linear cost term
    /// and `b` the equality value; both may change freely between calls.
    pub fn solve(&mut self, q: &DVector<f64>, b: &DVector<f64>) -> Result<QpSolution> {
        let (m, n) = self.qp.a_eq.shape();
        if q.len() != n || b.len() != m {
            return Err(Error::DimensionMismatch {
                context: "QpWorkspace::solve",
                expected: format!("q {n}, b {m}"),
                got: format!("q {}, b {}", q.len(), b.len()),
            });
        }
        let a_pinv_q = &self.a_pinv * q;

        let mut active = self.warm.clone();
        active.retain(|&(i, _)| i < n);
        let mut seen: HashSet<ActiveSet> = HashSet::new();
        let mut single_change_mode = false;
        let mut iterations = 0;

        loop {
            iterations += 1;
            if iterations > MAX_ITER {
                return Err(Error::QpFailure(format!(
                    "active-set iteration budget exhausted after {MAX_ITER} rounds"
                )));
            }
            let factor_idx = match self.factorize(&active) {
                Ok(idx) => idx,
                Err(err) => {
                    // a warm-started set can be inconsistent with new data;
                    // restart cold once before giving up
                    if !active.is_empty() && !seen.contains(&Vec::new()) {
                        active.clear();
                        continue;
                    }
                    return Err(err);
                }
            };

            let w = active.len();
            let mut rhs = DVector::zeros(m + w);
            for r in 0..m {
                rhs[r] = -b[r] - a_pinv_q[r];
            }
            for (j, &(i, side)) in active.iter().enumerate() {
                rhs[m + j] = -self.bound_value(i, side) - q[i] / self.qp.p_diag[i];
            }
            let multipliers = self.factors[factor_idx].chol.solve(&rhs);
            let lambda = multipliers.rows(0, m).into_owned();
            let mu_active = multipliers.rows(m, w).into_owned();

            // z = -P⁻¹ (q + Aᵀλ + Eᵀμ)
            let mut z = -(q + &self.a_t * &lambda);
            for (j, &(i, _)) in active.iter().enumerate() {
                z[i] -= mu_active[j];
            }
            for i in 0..n {
                z[i] /= self.qp.p_diag[i];
            }

            // dual releases: wrong multiplier sign on an active bound
            let mut releases: Vec<(usize, f64)> = Vec::new();
            for (j, &(i, side)) in active.iter().enumerate() {
                let violation = match side {
                    Side::Lower => mu_active[j],
                    Side::Upper => -mu_active[j],
                };
                if violation > DUAL_TOL {
                    releases.push((i, violation));
                }
            }
            // primal activations: bound violations on free variables
            let mut activations: Vec<(usize, Side, f64)> = Vec::new();
            for i in 0..n {
                if active.iter().any(|&(j, _)| j == i) {
                    continue;
                }
                if z[i] < self.qp.lb[i] - PRIMAL_TOL {
                    activations.push((i, Side::Lower, self.qp.lb[i] - z[i]));
                } else if z[i] > self.qp.ub[i] + PRIMAL_TOL {
                    activations.push((i, Side::Upper, z[i] - self.qp.ub[i]));
                }
            }

            if releases.is_empty() && activations.is_empty() {
                let solution = self.finish(q, b, z, lambda, active.clone(), mu_active, iterations);
                if solution.kkt_residual > 1e-6 {
                    return Err(Error::QpFailure(format!(
                        "stationary point violates optimality: KKT residual {:.3e} \
                         (problem infeasible or ill-conditioned)",
                        solution.kkt_residual
                    )));
                }
                self.warm = active;
                return Ok(solution);
            }

            if single_change_mode {
                // conservative fallback: one change per round, worst first
                let best_release = releases.iter().cloned().max_by(|a, b| {
                    a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0))
                });
                let best_activation = activations.iter().cloned().max_by(|a, b| {
                    a.2.partial_cmp(&b.2).unwrap().then(b.0.cmp(&a.0))
                });
                match (best_release, best_activation) {
                    (Some((i, rv)), Some((ai, side, av))) => {
                        if rv >= av {
                            active.retain(|&(j, _)| j != i);
                        } else {
                            active.push((ai, side));
                        }
                    }
                    (Some((i, _)), None) => active.retain(|&(j, _)| j != i),
                    (None, Some((ai, side, _))) => active.push((ai, side)),
                    (None, None) => unreachable!(),
                }
            } else {
                for (i, _) in &releases {
                    active.retain(|&(j, _)| j != *i);
                }
                for (i, side, _) in &activations {
                    active.push((*i, *side));
                }
            }
            active.sort_by_key(|&(i, _)| i);
            if !seen.insert(active.clone()) {
                single_change_mode = true;
            }
        }
    }

    fn finish(
        &self,
        q: &DVector<f64>,
        b: &DVector<f64>,
        z: DVector<f64>,
        lambda: DVector<f64>,
        active: ActiveSet,
        mu_active: DVector<f64>,
        iterations: usize,
    ) -> QpSolution {
        let n = z.len();
        let mut mu = DVector::zeros(n);
        for (j, &(i, _)) in active.iter().enumerate() {
            mu[i] = mu_active[j];
        }

        let stationarity = {
            let mut r = DVector::zeros(n);
            for i in 0..n {
                r[i] = self.qp.p_diag[i] * z[i] + q[i] + mu[i];
            }
            r += &self.a_t * &lambda;
            r.amax()
        };
        let primal_eq = (&self.qp.a_eq * &z - b).amax();
        let mut bound_violation = 0.0_f64;
        let mut complementarity = 0.0_f64;
        for i in 0..n {
            if self.qp.lb[i].is_finite() {
                bound_violation = bound_violation.max(self.qp.lb[i] - z[i]);
            }
            if self.qp.ub[i].is_finite() {
                bound_violation = bound_violation.max(z[i] - self.qp.ub[i]);
            }
            if mu[i] != 0.0 {
                let dist = (z[i] - self.qp.lb[i]).abs().min((z[i] - self.qp.ub[i]).abs());
                complementarity = complementarity.max(mu[i].abs() * dist);
            }
        }
        let kkt_residual = stationarity
            .max(primal_eq)
            .max(bound_violation)
            .max(complementarity);

        let objective = 0.5
            * z.iter()
                .enumerate()
                .map(|(i, &v)| self.qp.p_diag[i] * v * v)
                .sum::<f64>()
            + q.dot(&z);

        QpSolution {
            z,
            lambda_eq: lambda,
            mu_bounds: mu,
            objective,
            kkt_residual,
            iterations,
        }
    }
}
