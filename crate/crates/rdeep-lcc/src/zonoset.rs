//! Zonotope and matrix-zonotope set algebra.
//!
//! A zonotope is `{ c + Σ βᵢ gᵢ : |βᵢ| ≤ 1 }` with center `c` and generator
//! columns `gᵢ`; a matrix zonotope is the same construction over matrices.
//! These carry the noise bounds, the set of data-consistent system models,
//! and the reachable sets of the error dynamics. All operations here are
//! sound over-approximations: the pointwise image of any members of the
//! operands is a member of the result.
//!
//! Values are immutable after construction and all operations are pure, so
//! everything in this module is safe to share across threads.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Axis-aligned box, used for interval hulls and tightened constraint sets.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl IntervalBox {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "IntervalBox::new",
                expected: lower.len().to_string(),
                got: upper.len().to_string(),
            });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::InvalidParameter(
                "box lower bound exceeds upper bound".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `[-radii, radii]`.
    pub fn symmetric(radii: &DVector<f64>) -> Self {
        Self {
            lower: -radii,
            upper: radii.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn radius(&self) -> DVector<f64> {
        (&self.upper - &self.lower) * 0.5
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.iter()
            .enumerate()
            .all(|(j, &v)| v >= self.lower[j] - tol && v <= self.upper[j] + tol)
    }

    /// True when `other` lies inside `self` (up to `tol`).
    pub fn encloses(&self, other: &IntervalBox, tol: f64) -> bool {
        self.lower
            .iter()
            .zip(other.lower.iter())
            .all(|(s, o)| *s <= *o + tol)
            && self
                .upper
                .iter()
                .zip(other.upper.iter())
                .all(|(s, o)| *s >= *o - tol)
    }

    /// Shrink each side by `margin` (Minkowski difference against a box of
    /// those radii). Fails if some coordinate becomes empty.
    pub fn shrink(&self, margin: &DVector<f64>) -> Result<Self> {
        let lower = &self.lower + margin;
        let upper = &self.upper - margin;
        if let Some(coord) = (0..self.dim()).find(|&j| lower[j] > upper[j]) {
            return Err(Error::TubeExceedsConstraints { step: 0, coord });
        }
        Ok(Self { lower, upper })
    }
}

/// Zonotope `⟨c, G⟩ = { c + Gβ : ‖β‖∞ ≤ 1 }`. Zero generator columns are
/// legal and represent points.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    center: DVector<f64>,
    generators: DMatrix<f64>,
}

impl Zonotope {
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self> {
        if generators.nrows() != center.len() {
            return Err(Error::DimensionMismatch {
                context: "Zonotope::new",
                expected: center.len().to_string(),
                got: generators.nrows().to_string(),
            });
        }
        Ok(Self { center, generators })
    }

    /// Degenerate zonotope representing a single point.
    pub fn point(center: DVector<f64>) -> Self {
        let d = center.len();
        Self {
            center,
            generators: DMatrix::zeros(d, 0),
        }
    }

    /// Origin-centered axis-aligned box; zero radii contribute no generator.
    pub fn axis_box(center: DVector<f64>, radii: &DVector<f64>) -> Self {
        let d = center.len();
        let cols: Vec<usize> = (0..d).filter(|&j| radii[j] != 0.0).collect();
        let mut generators = DMatrix::zeros(d, cols.len());
        for (k, &j) in cols.iter().enumerate() {
            generators[(j, k)] = radii[j];
        }
        Self { center, generators }
    }

    /// Symmetric scalar interval `[-r, r]` as a 1-D zonotope.
    pub fn interval(r: f64) -> Self {
        Self::axis_box(DVector::zeros(1), &DVector::from_element(1, r))
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }

    /// Point `c + Gβ` for an explicit coefficient vector.
    pub fn member(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        if beta.len() != self.num_generators() {
            return Err(Error::DimensionMismatch {
                context: "Zonotope::member",
                expected: self.num_generators().to_string(),
                got: beta.len().to_string(),
            });
        }
        Ok(&self.center + &self.generators * beta)
    }

    /// Random member with β drawn i.i.d. uniform on [-1, 1].
    pub fn sample_member<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let beta =
            DVector::from_fn(self.num_generators(), |_, _| rng.gen_range(-1.0_f64..=1.0_f64));
        &self.center + &self.generators * beta
    }

    /// Linear map `LZ = ⟨Lc, LG⟩`.
    pub fn linear_map(&self, l: &DMatrix<f64>) -> Result<Zonotope> {
        if l.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "Zonotope::linear_map",
                expected: self.dim().to_string(),
                got: l.ncols().to_string(),
            });
        }
        Ok(Zonotope {
            center: l * &self.center,
            generators: l * &self.generators,
        })
    }

    /// Minkowski sum `⟨c₁+c₂, [G₁ G₂]⟩`.
    pub fn minkowski_sum(&self, other: &Zonotope) -> Result<Zonotope> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                context: "Zonotope::minkowski_sum",
                expected: self.dim().to_string(),
                got: other.dim().to_string(),
            });
        }
        let mut generators = DMatrix::zeros(self.dim(), self.num_generators() + other.num_generators());
        generators
            .columns_mut(0, self.num_generators())
            .copy_from(&self.generators);
        generators
            .columns_mut(self.num_generators(), other.num_generators())
            .copy_from(&other.generators);
        Ok(Zonotope {
            center: &self.center + &other.center,
            generators,
        })
    }

    /// Cartesian product with block-diagonal generator stacking.
    pub fn cartesian_product(&self, other: &Zonotope) -> Zonotope {
        let (d1, d2) = (self.dim(), other.dim());
        let (g1, g2) = (self.num_generators(), other.num_generators());
        let mut center = DVector::zeros(d1 + d2);
        center.rows_mut(0, d1).copy_from(&self.center);
        center.rows_mut(d1, d2).copy_from(&other.center);
        let mut generators = DMatrix::zeros(d1 + d2, g1 + g2);
        generators
            .view_mut((0, 0), (d1, g1))
            .copy_from(&self.generators);
        generators
            .view_mut((d1, g1), (d2, g2))
            .copy_from(&other.generators);
        Zonotope { center, generators }
    }

    /// Tight axis-aligned interval hull: `cⱼ ± Σᵢ |Gⱼᵢ|`.
    pub fn interval_hull(&self) -> IntervalBox {
        let radius = self.radius();
        IntervalBox {
            lower: &self.center - &radius,
            upper: &self.center + &radius,
        }
    }

    /// Per-coordinate hull radius `Σᵢ |Gⱼᵢ|`.
    pub fn radius(&self) -> DVector<f64> {
        let mut r = DVector::zeros(self.dim());
        for col in self.generators.column_iter() {
            for (j, v) in col.iter().enumerate() {
                r[j] += v.abs();
            }
        }
        r
    }

    /// Sound order reduction: keeps the largest-‖·‖₁ generators and merges
    /// the rest into an axis-aligned box. The result contains `self`.
    pub fn reduce_order(&self, max_generators: usize) -> Result<Zonotope> {
        let d = self.dim();
        if max_generators < d {
            return Err(Error::InvalidParameter(format!(
                "reduction budget {max_generators} below dimension {d}"
            )));
        }
        let gamma = self.num_generators();
        if gamma <= max_generators {
            return Ok(self.clone());
        }
        let keep = max_generators - d;
        let mut order: Vec<usize> = (0..gamma).collect();
        order.sort_by(|&a, &b| {
            let na: f64 = self.generators.column(a).iter().map(|v| v.abs()).sum();
            let nb: f64 = self.generators.column(b).iter().map(|v| v.abs()).sum();
            nb.partial_cmp(&na).unwrap()
        });
        let mut merged_radius = DVector::zeros(d);
        for &i in &order[keep..] {
            for (j, v) in self.generators.column(i).iter().enumerate() {
                merged_radius[j] += v.abs();
            }
        }
        let box_cols: Vec<usize> = (0..d).filter(|&j| merged_radius[j] != 0.0).collect();
        let mut generators = DMatrix::zeros(d, keep + box_cols.len());
        for (k, &i) in order[..keep].iter().enumerate() {
            generators.column_mut(k).copy_from(&self.generators.column(i));
        }
        for (k, &j) in box_cols.iter().enumerate() {
            generators[(j, keep + k)] = merged_radius[j];
        }
        Ok(Zonotope {
            center: self.center.clone(),
            generators,
        })
    }

    /// Membership test, decided by bounded-variable least squares on
    /// `Gβ = x − c`, `‖β‖∞ ≤ 1`; true iff the best residual is within `tol`.
    pub fn contains_with_tol(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "Zonotope::contains",
                expected: self.dim().to_string(),
                got: x.len().to_string(),
            });
        }
        let r = x - &self.center;
        if self.num_generators() == 0 {
            return Ok(r.amax() <= tol);
        }
        let residual = bvls_residual(&self.generators, &r);
        Ok(residual <= tol)
    }

    /// Membership with the default 1e-9 residual tolerance.
    pub fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        self.contains_with_tol(x, 1e-9)
    }
}

/// Best ∞-norm equality residual of `Gβ = r` over the box `‖β‖∞ ≤ 1`,
/// computed with a Stark–Parker style bounded-variable least squares.
fn bvls_residual(g: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let gamma = g.ncols();
    let mut beta = DVector::zeros(gamma);
    // state: 0 free, -1 at lower bound, +1 at upper bound
    let mut state = vec![0i8; gamma];
    let svd_eps = 1e-12;
    let grad_tol = 1e-11 * (1.0 + g.transpose().abs().sum() + r.amax());
    let max_iter = 10 * gamma + 100;

    for _ in 0..max_iter {
        let free: Vec<usize> = (0..gamma).filter(|&i| state[i] == 0).collect();
        if !free.is_empty() {
            // residual target with bound-pinned columns subtracted
            let mut rhs = r.clone();
            for i in 0..gamma {
                if state[i] != 0 {
                    rhs -= g.column(i) * beta[i];
                }
            }
            let gf = g.select_columns(free.iter());
            let svd = gf.svd(true, true);
            let sol = svd.solve(&rhs, svd_eps).expect("svd solve");
            // walk from the current feasible point toward the LS solution,
            // pinning the first coordinates that hit a bound
            let mut alpha = 1.0_f64;
            for (k, &i) in free.iter().enumerate() {
                let d = sol[k] - beta[i];
                if d > 0.0 && beta[i] + d > 1.0 {
                    alpha = alpha.min((1.0 - beta[i]) / d);
                } else if d < 0.0 && beta[i] + d < -1.0 {
                    alpha = alpha.min((-1.0 - beta[i]) / d);
                }
            }
            let mut pinned = false;
            for (k, &i) in free.iter().enumerate() {
                let d = sol[k] - beta[i];
                beta[i] += alpha * d;
                if alpha < 1.0 {
                    if beta[i] >= 1.0 - 1e-14 && d > 0.0 {
                        beta[i] = 1.0;
                        state[i] = 1;
                        pinned = true;
                    } else if beta[i] <= -1.0 + 1e-14 && d < 0.0 {
                        beta[i] = -1.0;
                        state[i] = -1;
                        pinned = true;
                    }
                }
            }
            if pinned {
                continue;
            }
        }
        // KKT check on pinned coordinates: release the worst violator
        let w = g.transpose() * (g * &beta - r);
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..gamma {
            let v = match state[i] {
                -1 => (-w[i]).max(0.0), // want w ≥ 0 at lower bound
                1 => w[i].max(0.0),     // want w ≤ 0 at upper bound
                _ => 0.0,
            };
            if v > grad_tol && worst.map_or(true, |(_, wv)| v > wv) {
                worst = Some((i, v));
            }
        }
        match worst {
            Some((i, _)) => state[i] = 0,
            None => break,
        }
    }
    (g * &beta - r).amax()
}

/// Matrix zonotope `⟨C, {Gᵢ}⟩ = { C + Σ βᵢ Gᵢ : |βᵢ| ≤ 1 }`.
#[derive(Debug, Clone)]
pub struct MatrixZonotope {
    center: DMatrix<f64>,
    generators: Vec<DMatrix<f64>>,
}

impl MatrixZonotope {
    pub fn new(center: DMatrix<f64>, generators: Vec<DMatrix<f64>>) -> Result<Self> {
        let shape = center.shape();
        if let Some(g) = generators.iter().find(|g| g.shape() != shape) {
            return Err(Error::DimensionMismatch {
                context: "MatrixZonotope::new",
                expected: format!("{shape:?}"),
                got: format!("{:?}", g.shape()),
            });
        }
        Ok(Self { center, generators })
    }

    /// Matrix zonotope containing exactly one matrix.
    pub fn exact(center: DMatrix<f64>) -> Self {
        Self {
            center,
            generators: Vec::new(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.center.shape()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn center(&self) -> &DMatrix<f64> {
        &self.center
    }

    pub fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }

    /// Matrix `C + Σ βᵢ Gᵢ` for an explicit coefficient vector.
    pub fn member(&self, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
        if beta.len() != self.num_generators() {
            return Err(Error::DimensionMismatch {
                context: "MatrixZonotope::member",
                expected: self.num_generators().to_string(),
                got: beta.len().to_string(),
            });
        }
        let mut m = self.center.clone();
        for (i, g) in self.generators.iter().enumerate() {
            m += g * beta[i];
        }
        Ok(m)
    }

    /// Random member with β drawn i.i.d. uniform on [-1, 1].
    pub fn sample_member<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let beta =
            DVector::from_fn(self.num_generators(), |_, _| rng.gen_range(-1.0_f64..=1.0_f64));
        self.member(&beta).expect("beta length by construction")
    }

    /// Right multiplication `⟨C·R, {Gᵢ·R}⟩`.
    pub fn right_multiply(&self, r: &DMatrix<f64>) -> Result<MatrixZonotope> {
        if r.nrows() != self.shape().1 {
            return Err(Error::DimensionMismatch {
                context: "MatrixZonotope::right_multiply",
                expected: self.shape().1.to_string(),
                got: r.nrows().to_string(),
            });
        }
        Ok(MatrixZonotope {
            center: &self.center * r,
            generators: self.generators.iter().map(|g| g * r).collect(),
        })
    }

    /// Over-approximating product of a matrix zonotope with a zonotope:
    /// center `C·c` and generators `[C·G, {Gᵢ·c}, {Gᵢ·gⱼ}]`. Every `X·z`
    /// with `X` a member of `self` and `z` a member of `z` is contained.
    pub fn apply(&self, z: &Zonotope) -> Result<Zonotope> {
        let (rows, cols) = self.shape();
        if cols != z.dim() {
            return Err(Error::DimensionMismatch {
                context: "MatrixZonotope::apply",
                expected: cols.to_string(),
                got: z.dim().to_string(),
            });
        }
        let gamma_m = self.num_generators();
        let gamma_z = z.num_generators();
        let total = gamma_z + gamma_m + gamma_m * gamma_z;
        let mut generators = DMatrix::zeros(rows, total);
        generators
            .columns_mut(0, gamma_z)
            .copy_from(&(&self.center * z.generators()));
        for (i, g) in self.generators.iter().enumerate() {
            generators
                .column_mut(gamma_z + i)
                .copy_from(&(g * z.center()));
        }
        let mut offset = gamma_z + gamma_m;
        for g in &self.generators {
            let block = g * z.generators();
            generators.columns_mut(offset, gamma_z).copy_from(&block);
            offset += gamma_z;
        }
        Ok(Zonotope {
            center: &self.center * z.center(),
            generators,
        })
    }

    /// Entrywise interval-hull membership: `|X − C| ≤ Σᵢ |Gᵢ|` per entry.
    /// A necessary condition for set membership, and the check used when
    /// verifying that data-generating matrices live inside estimated sets.
    pub fn entrywise_hull_contains(&self, x: &DMatrix<f64>, tol: f64) -> bool {
        if x.shape() != self.shape() {
            return false;
        }
        let mut radius = DMatrix::zeros(self.shape().0, self.shape().1);
        for g in &self.generators {
            radius += g.abs();
        }
        let dev = (x - &self.center).abs();
        dev.iter().zip(radius.iter()).all(|(d, r)| *d <= *r + tol)
    }

    /// Flattened copy for high-volume sampling: column-major vectorized
    /// center and one column per generator.
    pub fn flatten(&self) -> FlatMatrixZonotope {
        let (rows, cols) = self.shape();
        let center = DVector::from_column_slice(self.center.as_slice());
        let mut gen_mat = DMatrix::zeros(rows * cols, self.num_generators());
        for (i, g) in self.generators.iter().enumerate() {
            gen_mat.column_mut(i).copy_from_slice(g.as_slice());
        }
        FlatMatrixZonotope {
            rows,
            cols,
            center,
            gen_mat,
        }
    }
}

/// Vectorized form of a matrix zonotope, suitable for drawing members in
/// large batches through one matrix product per batch.
#[derive(Debug, Clone)]
pub struct FlatMatrixZonotope {
    rows: usize,
    cols: usize,
    center: DVector<f64>,
    gen_mat: DMatrix<f64>,
}

impl FlatMatrixZonotope {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn num_generators(&self) -> usize {
        self.gen_mat.ncols()
    }

    /// Vectorized members for a batch of coefficient columns (each entry in
    /// [-1, 1]); column k of the result is `vec(C + Σ βᵢₖ Gᵢ)`.
    pub fn member_batch(&self, betas: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.gen_mat * betas;
        for mut col in out.column_iter_mut() {
            col += &self.center;
        }
        out
    }

    /// Reassemble one flattened member column into matrix form.
    pub fn unflatten(&self, column: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rows, self.cols, column)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    fn random_zonotope(rng: &mut SmallRng, dim: usize, gens: usize) -> Zonotope {
        let center = DVector::from_fn(dim, |_, _| rng.gen_range(-5.0..5.0));
        let generators = DMatrix::from_fn(dim, gens, |_, _| rng.gen_range(-2.0..2.0));
        Zonotope::new(center, generators).unwrap()
    }

    fn random_matrix_zonotope(
        rng: &mut SmallRng,
        rows: usize,
        cols: usize,
        gens: usize,
    ) -> MatrixZonotope {
        let center = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..2.0));
        let generators = (0..gens)
            .map(|_| DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        MatrixZonotope::new(center, generators).unwrap()
    }

    #[test]
    fn linear_map_identity_and_zero() {
        let mut rng = SmallRng::seed_from_u64(1);
        let z = random_zonotope(&mut rng, 3, 4);
        let id = DMatrix::identity(3, 3);
        let mapped = z.linear_map(&id).unwrap();
        assert_eq!(mapped, z);

        let zero = DMatrix::zeros(3, 3);
        let collapsed = z.linear_map(&zero).unwrap();
        assert_eq!(collapsed.center(), &DVector::zeros(3));
        assert_eq!(collapsed.radius(), DVector::zeros(3));
    }

    #[test]
    fn linear_map_containment() {
        let l = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let z = Zonotope::new(
            DVector::from_row_slice(&[1.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        let mapped = z.linear_map(&l).unwrap();
        assert_eq!(mapped.center(), &DVector::from_row_slice(&[2.0, 1.0]));
        assert_eq!(
            mapped.generators(),
            &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0])
        );
        let mut rng = SmallRng::seed_from_u64(2);
        for _ in 0..100 {
            let p = z.sample_member(&mut rng);
            assert!(mapped.contains(&(&l * p)).unwrap());
        }
    }

    #[test]
    fn minkowski_sum_neutral_and_interval() {
        let mut rng = SmallRng::seed_from_u64(3);
        let z = random_zonotope(&mut rng, 2, 3);
        let origin = Zonotope::point(DVector::zeros(2));
        let sum = z.minkowski_sum(&origin).unwrap();
        assert_eq!(sum, z);

        let a = Zonotope::interval(1.0);
        let b = Zonotope::interval(1.0);
        let hull = a.minkowski_sum(&b).unwrap().interval_hull();
        assert_relative_eq!(hull.lower[0], -2.0);
        assert_relative_eq!(hull.upper[0], 2.0);
    }

    #[test]
    fn minkowski_sum_containment() {
        let mut rng = SmallRng::seed_from_u64(4);
        let z1 = random_zonotope(&mut rng, 3, 4);
        let z2 = random_zonotope(&mut rng, 3, 2);
        let sum = z1.minkowski_sum(&z2).unwrap();
        for _ in 0..100 {
            let p = z1.sample_member(&mut rng) + z2.sample_member(&mut rng);
            assert!(sum.contains(&p).unwrap());
        }
    }

    #[test]
    fn cartesian_product_shapes() {
        let p1 = Zonotope::point(DVector::from_row_slice(&[1.0]));
        let p2 = Zonotope::point(DVector::from_row_slice(&[2.0, 3.0]));
        let stacked = p1.cartesian_product(&p2);
        assert_eq!(stacked.center(), &DVector::from_row_slice(&[1.0, 2.0, 3.0]));
        assert_eq!(stacked.num_generators(), 0);

        let a = Zonotope::interval(1.0);
        let b = Zonotope::interval(2.0);
        let prod = a.cartesian_product(&b);
        assert_eq!(
            prod.generators(),
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0])
        );
        let mut rng = SmallRng::seed_from_u64(5);
        let z1 = random_zonotope(&mut rng, 2, 3);
        let z2 = random_zonotope(&mut rng, 3, 5);
        assert_eq!(z1.cartesian_product(&z2).num_generators(), 8);
    }

    #[test]
    fn matzono_apply_degenerate_cases() {
        let mut rng = SmallRng::seed_from_u64(6);
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let m = MatrixZonotope::exact(a.clone());
        let z = random_zonotope(&mut rng, 2, 3);
        let applied = m.apply(&z).unwrap();
        let mapped = z.linear_map(&a).unwrap();
        assert_relative_eq!(applied.center(), mapped.center(), epsilon = 1e-12);
        assert_relative_eq!(
            applied.interval_hull().upper,
            mapped.interval_hull().upper,
            epsilon = 1e-12
        );

        let m2 = random_matrix_zonotope(&mut rng, 2, 2, 3);
        let c = DVector::from_row_slice(&[0.5, -0.25]);
        let image = m2.apply(&Zonotope::point(c.clone())).unwrap();
        assert_relative_eq!(image.center(), &(m2.center() * &c), epsilon = 1e-12);
        assert_eq!(image.num_generators(), 3);
        for (i, g) in m2.generators().iter().enumerate() {
            assert_relative_eq!(
                DVector::from(image.generators().column(i + 0)),
                g * &c,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn matzono_apply_containment() {
        let mut rng = SmallRng::seed_from_u64(7);
        let m = random_matrix_zonotope(&mut rng, 2, 2, 2);
        let z = random_zonotope(&mut rng, 2, 2);
        let image = m.apply(&z).unwrap();
        for _ in 0..500 {
            let x = m.sample_member(&mut rng);
            let p = z.sample_member(&mut rng);
            assert!(image.contains(&(x * p)).unwrap());
        }
    }

    #[test]
    fn interval_hull_cases() {
        let p = Zonotope::point(DVector::from_row_slice(&[1.0, -2.0]));
        let hull = p.interval_hull();
        assert_eq!(hull.lower, hull.upper);

        let z = Zonotope::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
        )
        .unwrap();
        let hull = z.interval_hull();
        assert_eq!(hull.lower, DVector::from_row_slice(&[-1.0, -2.0]));
        assert_eq!(hull.upper, DVector::from_row_slice(&[1.0, 2.0]));

        let mut rng = SmallRng::seed_from_u64(8);
        let z = random_zonotope(&mut rng, 3, 6);
        let hull = z.interval_hull();
        for _ in 0..200 {
            assert!(hull.contains(&z.sample_member(&mut rng), 1e-12));
        }
    }

    #[test]
    fn reduce_order_soundness() {
        let mut rng = SmallRng::seed_from_u64(9);
        let z = random_zonotope(&mut rng, 2, 3);
        let same = z.reduce_order(5).unwrap();
        assert_eq!(same, z);

        let z = random_zonotope(&mut rng, 2, 10);
        let reduced = z.reduce_order(4).unwrap();
        assert!(reduced.num_generators() <= 4);
        assert!(reduced
            .interval_hull()
            .encloses(&z.interval_hull(), 1e-12));
        for _ in 0..200 {
            assert!(reduced.contains(&z.sample_member(&mut rng)).unwrap());
        }

        assert!(z.reduce_order(1).is_err());
    }

    #[test]
    fn contains_witness_and_rejection() {
        let mut rng = SmallRng::seed_from_u64(10);
        let z = random_zonotope(&mut rng, 3, 5);
        assert!(z.contains(z.center()).unwrap());

        let unit = Zonotope::interval(1.0);
        assert!(!unit.contains(&DVector::from_row_slice(&[2.0])).unwrap());

        for _ in 0..50 {
            let beta = DVector::from_fn(5, |_, _| rng.gen_range(-1.0_f64..=1.0_f64));
            let x = z.member(&beta).unwrap();
            assert!(z.contains(&x).unwrap());
        }
        // points just outside the hull along a generator direction
        let far = z.center() + z.radius() * 1.5;
        assert!(!z.contains(&far).unwrap());
    }

    #[test]
    fn sample_member_statistics() {
        let m = MatrixZonotope::new(
            DMatrix::zeros(1, 1),
            vec![DMatrix::from_element(1, 1, 1.0)],
        )
        .unwrap();
        assert_eq!(
            MatrixZonotope::exact(DMatrix::from_element(1, 1, 3.0))
                .sample_member(&mut SmallRng::seed_from_u64(0)),
            DMatrix::from_element(1, 1, 3.0)
        );
        assert_eq!(
            m.member(&DVector::zeros(1)).unwrap(),
            DMatrix::zeros(1, 1)
        );
        let mut rng = SmallRng::seed_from_u64(11);
        let mut mean = 0.0;
        for _ in 0..10_000 {
            let s = m.sample_member(&mut rng)[(0, 0)];
            assert!((-1.0..=1.0).contains(&s));
            mean += s;
        }
        mean /= 10_000.0;
        assert!(mean.abs() < 0.05, "empirical mean {mean}");
    }

    #[test]
    fn right_multiply_cases() {
        let mut rng = SmallRng::seed_from_u64(12);
        let m = random_matrix_zonotope(&mut rng, 2, 3, 2);
        let id = DMatrix::identity(3, 3);
        let same = m.right_multiply(&id).unwrap();
        assert_eq!(same.center(), m.center());

        let mut selector = DMatrix::zeros(3, 2);
        selector[(0, 0)] = 1.0;
        selector[(1, 1)] = 1.0;
        let sel = m.right_multiply(&selector).unwrap();
        assert_eq!(sel.center(), &m.center().columns(0, 2).into_owned());

        for _ in 0..100 {
            let beta = DVector::from_fn(2, |_, _| rng.gen_range(-1.0_f64..=1.0_f64));
            let x = m.member(&beta).unwrap();
            let y = sel.member(&beta).unwrap();
            assert_relative_eq!(x * &selector, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn flatten_matches_member() {
        let mut rng = SmallRng::seed_from_u64(13);
        let m = random_matrix_zonotope(&mut rng, 3, 2, 4);
        let flat = m.flatten();
        let betas = DMatrix::from_fn(4, 5, |_, _| rng.gen_range(-1.0_f64..=1.0_f64));
        let batch = flat.member_batch(&betas);
        for k in 0..5 {
            let direct = m.member(&DVector::from(betas.column(k))).unwrap();
            let reassembled = flat.unflatten(batch.column(k).as_slice());
            assert_relative_eq!(direct, reassembled, epsilon = 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn minkowski_commutes_on_hulls(seed in 0u64..5000) {
            let mut rng = SmallRng::seed_from_u64(seed);
            let dim = rng.gen_range(1..4);
            let g1 = rng.gen_range(0..5);
            let z1 = random_zonotope(&mut rng, dim, g1);
            let g2 = rng.gen_range(0..5);
            let z2 = random_zonotope(&mut rng, dim, g2);
            let h12 = z1.minkowski_sum(&z2).unwrap().interval_hull();
            let h21 = z2.minkowski_sum(&z1).unwrap().interval_hull();
            prop_assert!(h12.encloses(&h21, 1e-12) && h21.encloses(&h12, 1e-12));
        }

        #[test]
        fn linear_map_hull_within_abs_bound(seed in 0u64..5000) {
            let mut rng = SmallRng::seed_from_u64(seed);
            let dim = rng.gen_range(1..4);
            let rows = rng.gen_range(1..4);
            let gz = rng.gen_range(0..5);
            let z = random_zonotope(&mut rng, dim, gz);
            let l = DMatrix::from_fn(rows, dim, |_, _| rng.gen_range(-2.0..2.0));
            let hull = z.linear_map(&l).unwrap().interval_hull();
            let bound = l.abs() * z.radius();
            let center = &l * z.center();
            for j in 0..rows {
                prop_assert!(hull.upper[j] <= center[j] + bound[j] + 1e-9);
                prop_assert!(hull.lower[j] >= center[j] - bound[j] - 1e-9);
            }
        }

        #[test]
        fn reduction_never_shrinks(seed in 0u64..5000) {
            let mut rng = SmallRng::seed_from_u64(seed);
            let dim = rng.gen_range(1..4);
            let gz = rng.gen_range(0..9);
            let z = random_zonotope(&mut rng, dim, gz);
            let budget = rng.gen_range(dim..dim + 6);
            let reduced = z.reduce_order(budget).unwrap();
            for _ in 0..20 {
                let x = z.sample_member(&mut rng);
                prop_assert!(reduced.contains(&x).unwrap());
            }
        }
    }
}
