//! Data-driven system-set estimation and error-system reachability.
//!
//! From one noisy excitation experiment, [`estimate_system_set`] produces a
//! matrix zonotope containing every `[A B H]` consistent with the data and
//! the assumed noise bound. [`error_reach_tube`] then propagates the error
//! dynamics `x_e(k+1) = A x_e + B (K x_e) + H ε + w` through the model set
//! to over-approximate where the true state can drift from the nominal one.

use nalgebra::{DMatrix, DVector};
use std::io::Write;
use std::path::Path;

use crate::datagen::{rank_tolerance, DataArchive};
use crate::error::{Error, Result};
use crate::zonoset::{MatrixZonotope, Zonotope};

/// Bounding zonotopes for process noise (per state channel) and the head
/// vehicle's velocity disturbance.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub z_w: Zonotope,
    pub z_eps: Zonotope,
}

impl NoiseSpec {
    pub fn new(z_w: Zonotope, z_eps: Zonotope) -> Result<Self> {
        if z_eps.dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "NoiseSpec z_eps",
                expected: "1".into(),
                got: z_eps.dim().to_string(),
            });
        }
        for (name, z) in [("z_w", &z_w), ("z_eps", &z_eps)] {
            if !z.contains(&DVector::zeros(z.dim()))? {
                return Err(Error::InvalidParameter(format!(
                    "{name} must contain the origin"
                )));
            }
        }
        Ok(Self { z_w, z_eps })
    }

    /// Symmetric uniform bounds: `|w| ≤ w_bound` per channel, `|ε| ≤ eps_bound`.
    pub fn uniform(n: usize, w_bound: f64, eps_bound: f64) -> Result<Self> {
        Self::new(
            Zonotope::axis_box(DVector::zeros(2 * n), &DVector::from_element(2 * n, w_bound)),
            Zonotope::interval(eps_bound),
        )
    }
}

/// Rank evidence recorded with every estimated system set.
#[derive(Debug, Clone, PartialEq)]
pub struct RankCertificate {
    pub rank: usize,
    pub required: usize,
    pub tolerance: f64,
}

/// Matrix-zonotope over-approximation of the system models consistent with
/// the archive, in both `[A B H]` and `[A B]` form.
#[derive(Debug, Clone)]
pub struct SystemSet {
    pub m_abh: MatrixZonotope,
    pub m_ab: MatrixZonotope,
    pub rank_certificate: RankCertificate,
}

/// Matrix zonotope of all length-`T` noise sequences with columns in `z_w`:
/// the center tiles the noise center, and each (generator, column) pair
/// contributes one single-column generator matrix.
pub fn build_noise_matrix_zonotope(z_w: &Zonotope, t: usize) -> MatrixZonotope {
    let dim = z_w.dim();
    let mut center = DMatrix::zeros(dim, t);
    for mut col in center.column_iter_mut() {
        col.copy_from(z_w.center());
    }
    let mut generators = Vec::with_capacity(t * z_w.num_generators());
    for j in 0..t {
        for l in 0..z_w.num_generators() {
            let mut g = DMatrix::zeros(dim, t);
            g.column_mut(j).copy_from(&z_w.generators().column(l));
            generators.push(g);
        }
    }
    MatrixZonotope::new(center, generators).expect("shapes consistent by construction")
}

/// Identify rows of `d` that are linearly dependent on earlier rows, by
/// modified Gram–Schmidt with the given tolerance.
fn dependent_rows(d: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for i in 0..d.nrows() {
        let mut row: DVector<f64> = d.row(i).transpose();
        for b in &basis {
            let proj = row.dot(b);
            row -= b * proj;
        }
        let norm = row.norm();
        if norm <= tol.max(f64::EPSILON) {
            dependent.push(i);
        } else {
            basis.push(row / norm);
        }
    }
    dependent
}

/// Estimate the set of all `[A B H]` consistent with the archive under the
/// assumed noise bound: `M_ABH = (X₊ − M_w) · [X₋; U₋; E₋]†`.
///
/// The noise matrix zonotope is never materialized: each of its generators
/// has a single nonzero column, so its image under the pseudoinverse is the
/// rank-one outer product of that column with the matching pseudoinverse row.
pub fn estimate_system_set(archive: &DataArchive, noise: &NoiseSpec) -> Result<SystemSet> {
    let n = archive.header.n;
    let dim = 2 * n;
    if noise.z_w.dim() != dim {
        return Err(Error::DimensionMismatch {
            context: "estimate_system_set z_w",
            expected: dim.to_string(),
            got: noise.z_w.dim().to_string(),
        });
    }
    let t = archive.t();
    let required = dim + 2;

    let mut regressor = DMatrix::zeros(required, t);
    regressor.rows_mut(0, dim).copy_from(&archive.x_minus());
    regressor.rows_mut(dim, 1).copy_from(&archive.u_minus());
    regressor.rows_mut(dim + 1, 1).copy_from(&archive.e_minus());

    let tol = rank_tolerance(&regressor);
    let svd = regressor.clone().svd(true, true);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < required {
        return Err(Error::RankDeficient {
            rank,
            required,
            dependent: dependent_rows(&regressor, tol),
        });
    }
    let pinv = svd
        .pseudo_inverse(tol)
        .map_err(|e| Error::InvalidParameter(format!("pseudoinverse failed: {e}")))?;

    let x_plus = archive.x_plus();
    let noise_center_tiled = {
        let mut c = DMatrix::zeros(dim, t);
        for mut col in c.column_iter_mut() {
            col.copy_from(noise.z_w.center());
        }
        c
    };
    let center = (&x_plus - noise_center_tiled) * &pinv;

    let gamma_w = noise.z_w.num_generators();
    let mut generators = Vec::with_capacity(t * gamma_w);
    for j in 0..t {
        let row = pinv.row(j);
        for l in 0..gamma_w {
            let g = noise.z_w.generators().column(l);
            generators.push(-DMatrix::from_fn(dim, required, |r, c| g[r] * row[c]));
        }
    }
    let m_abh = MatrixZonotope::new(center, generators)?;

    let mut selector = DMatrix::zeros(required, required - 1);
    for i in 0..required - 1 {
        selector[(i, i)] = 1.0;
    }
    let m_ab = m_abh.right_multiply(&selector)?;

    Ok(SystemSet {
        m_abh,
        m_ab,
        rank_certificate: RankCertificate {
            rank,
            required,
            tolerance: tol,
        },
    })
}

/// Over-approximated reachable sets of the error system, one per predicted
/// step, together with their images under the error feedback gain.
#[derive(Debug, Clone)]
pub struct ReachTube {
    /// `R̂ᵉ` at steps k+1 … k+N.
    pub sets: Vec<Zonotope>,
    /// `K·R̂ᵉ` at the same steps (scalar input sets).
    pub input_images: Vec<Zonotope>,
}

impl ReachTube {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Interval hulls per step, written as CSV rows
    /// `step, lower_1, upper_1, …, lower_d, upper_d`.
    pub fn export_hulls_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let d = self.sets.first().map_or(0, Zonotope::dim);
        write!(out, "step")?;
        for j in 1..=d {
            write!(out, ",lower_{j},upper_{j}")?;
        }
        writeln!(out)?;
        for (i, set) in self.sets.iter().enumerate() {
            let hull = set.interval_hull();
            write!(out, "{}", i + 1)?;
            for j in 0..d {
                write!(out, ",{},{}", hull.lower[j], hull.upper[j])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// N-step reachability recursion of the closed error loop
/// `R̂ᵉ_{+1} = M_ABH (R̂ᵉ × K R̂ᵉ × Z_ε) + Z_w`, with order reduction after
/// every step to keep the generator count at `reduction_budget`.
pub fn error_reach_tube(
    sys: &SystemSet,
    k_gain: &DMatrix<f64>,
    noise: &NoiseSpec,
    r0: &Zonotope,
    horizon: usize,
    reduction_budget: usize,
) -> Result<ReachTube> {
    let (dim, in_cols) = sys.m_abh.shape();
    if k_gain.shape() != (1, dim) {
        return Err(Error::DimensionMismatch {
            context: "error_reach_tube gain",
            expected: format!("(1, {dim})"),
            got: format!("{:?}", k_gain.shape()),
        });
    }
    if r0.dim() != dim || noise.z_w.dim() != dim || in_cols != dim + 2 {
        return Err(Error::DimensionMismatch {
            context: "error_reach_tube dimensions",
            expected: format!("state {dim}, model cols {}", dim + 2),
            got: format!("r0 {}, z_w {}, cols {in_cols}", r0.dim(), noise.z_w.dim()),
        });
    }

    let mut sets = Vec::with_capacity(horizon);
    let mut input_images = Vec::with_capacity(horizon);
    let mut current = r0.clone();
    for _ in 0..horizon {
        let input_set = current.linear_map(k_gain)?;
        let stacked = current
            .cartesian_product(&input_set)
            .cartesian_product(&noise.z_eps);
        let propagated = sys.m_abh.apply(&stacked)?;
        let next = propagated
            .minkowski_sum(&noise.z_w)?
            .reduce_order(reduction_budget)?;
        input_images.push(next.linear_map(k_gain)?);
        sets.push(next.clone());
        current = next;
    }
    Ok(ReachTube { sets, input_images })
}
