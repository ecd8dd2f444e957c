//! Linear solves, error norms, condition numbers and divergence diagnostics.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;
use thiserror::Error;

use crate::assembly::{AssembledSystem, AssemblyError, BoundaryEntry, Discretization, ExactSolution, ReducedSystem};
use crate::geometry::{BcMode, BoundaryTag, CellQuadrature, Point};

/// Relative residual above which a solve is flagged.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
/// Systems up to this size use a dense singular value decomposition.
pub const DENSE_CONDITION_LIMIT: usize = 1500;
/// Relative singular value below which a direction counts as null.
const NULL_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("the system matrix is singular: {0}")]
    SingularSystem(String),
    #[error("found {found} near-null singular values in a stabilized system, expected {expected}")]
    NullSpaceDetection { found: usize, expected: usize },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSolution {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    pub multiplier: Option<f64>,
    /// `‖Ax - b‖ / ‖b‖` on the reduced system.
    pub residual: f64,
    /// Set when the residual exceeds [`RESIDUAL_TOLERANCE`].
    pub flagged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn to_col(v: &[f64]) -> Col<f64> {
    Col::from_fn(v.len(), |i| v[i])
}

fn matvec(a: &SparseColMat<usize, f64>, x: &[f64]) -> Vec<f64> {
    let y = a * to_col(x);
    (0..y.nrows()).map(|i| y[i]).collect()
}

fn matvec_transpose(a: &SparseColMat<usize, f64>, x: &[f64]) -> Vec<f64> {
    let y = a.as_ref().transpose() * to_col(x);
    (0..y.nrows()).map(|i| y[i]).collect()
}

/// Sparse LU of a reduced system.
///
/// The mean-value multiplier couples to every cell, and one dense row makes
/// the column elimination tree of the LU analysis dense. With a multiplier
/// the border is split off: `K + α e eᵀ` is factored, `e` being the constant
/// pressure mode of the first cell (it removes the constant-pressure
/// kernel of `K`), the border is handled by a Schur complement and the shift
/// is undone by a rank-one correction.
struct SystemFactor {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    border: Option<Border>,
}

struct Border {
    /// Last column and last row of the matrix without the corner.
    col: Vec<f64>,
    row: Vec<f64>,
    corner: f64,
    shift: f64,
    pivot: usize,
    /// `K̃⁻¹ col`.
    w: Vec<f64>,
    /// `M̃⁻¹ e` and the rank-one denominator.
    u: Vec<f64>,
    denom: f64,
}

impl SystemFactor {
    fn new(reduced: &ReducedSystem) -> Result<Self, AnalysisError> {
        let a = &reduced.matrix;
        let singular = |e: faer::sparse::linalg::LuError| AnalysisError::SingularSystem(format!("{e:?}"));
        if !reduced.has_multiplier {
            return Ok(Self {
                lu: a.sp_lu().map_err(singular)?,
                border: None,
            });
        }
        let n = a.nrows() - 1;
        let pivot = n - reduced.num_pressure;
        let mut col = vec![0.0; n];
        let mut row = vec![0.0; n];
        let mut corner = 0.0;
        let mut t = Vec::with_capacity(a.compute_nnz());
        for j in 0..=n {
            let range = a.symbolic().col_range(j);
            for (&i, &v) in a.symbolic().row_idx()[range.clone()].iter().zip(&a.val()[range]) {
                match (i == n, j == n) {
                    (false, false) => t.push(Triplet::new(i, j, v)),
                    (false, true) => col[i] += v,
                    (true, false) => row[j] += v,
                    (true, true) => corner += v,
                }
            }
        }
        let shift = col.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        t.push(Triplet::new(pivot, pivot, shift));
        let k = SparseColMat::try_new_from_triplets(n, n, &t).expect("valid triplets");
        let lu = k.sp_lu().map_err(singular)?;
        let mut border = Border {
            w: lu_apply(&lu, &col),
            col,
            row,
            corner,
            shift,
            pivot,
            u: Vec::new(),
            denom: 1.0,
        };
        let mut e = vec![0.0; n + 1];
        e[pivot] = 1.0;
        border.u = border.shifted_solve(&lu, &e);
        border.denom = 1.0 - shift * border.u[pivot];
        Ok(Self {
            lu,
            border: Some(border),
        })
    }

    fn solve(&self, r: &[f64]) -> Vec<f64> {
        match &self.border {
            None => lu_apply(&self.lu, r),
            Some(b) => {
                let mut y = b.shifted_solve(&self.lu, r);
                let c = b.shift * y[b.pivot] / b.denom;
                for (yi, ui) in y.iter_mut().zip(&b.u) {
                    *yi += c * ui;
                }
                y
            }
        }
    }
}

impl Border {
    /// Solve with the bordered matrix built on the shifted block.
    fn shifted_solve(&self, lu: &faer::sparse::linalg::solvers::Lu<usize, f64>, r: &[f64]) -> Vec<f64> {
        let n = self.col.len();
        let mut x = lu_apply(lu, &r[..n]);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let lambda = (dot(&self.row, &x) - r[n]) / (dot(&self.row, &self.w) - self.corner);
        for (xi, wi) in x.iter_mut().zip(&self.w) {
            *xi -= lambda * wi;
        }
        x.push(lambda);
        x
    }
}

fn lu_apply(lu: &faer::sparse::linalg::solvers::Lu<usize, f64>, r: &[f64]) -> Vec<f64> {
    let mut m = Mat::<f64>::from_fn(r.len(), 1, |i, _| r[i]);
    lu.solve_in_place(m.as_mut());
    (0..r.len()).map(|i| m[(i, 0)]).collect()
}

/// Sparse LU solve with a few steps of iterative refinement.
pub fn solve(system: &AssembledSystem) -> Result<MixedSolution, AnalysisError> {
    let reduced = system.reduce();
    let a = &reduced.matrix;
    let b = &reduced.rhs;
    let factor = SystemFactor::new(&reduced)?;
    let lu_solve = |r: &[f64]| factor.solve(r);
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut x = lu_solve(b);
    let residual_of = |x: &[f64]| -> Vec<f64> { matvec(a, x).iter().zip(b).map(|(ax, bi)| bi - ax).collect() };
    let mut r = residual_of(&x);
    let mut res = norm(&r) / bnorm;
    for _ in 0..3 {
        if !res.is_finite() || res < 1e-15 {
            break;
        }
        let dx = lu_solve(&r);
        let candidate: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
        let rc = residual_of(&candidate);
        let rn = norm(&rc) / bnorm;
        if !(rn < res) {
            break;
        }
        x = candidate;
        r = rc;
        res = rn;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::SingularSystem("non-finite solution".into()));
    }
    if b.iter().all(|&v| v == 0.0) {
        res = norm(&r);
    }
    let full = system.expand(&reduced, &x);
    let nv = system.num_velocity;
    let np = system.num_pressure;
    Ok(MixedSolution {
        velocity: full[..nv].to_vec(),
        pressure: full[nv..nv + np].to_vec(),
        multiplier: system.has_multiplier.then(|| full[nv + np]),
        residual: res,
        flagged: !(res <= RESIDUAL_TOLERANCE),
    })
}

/// Errors in the norms of the method.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NormReport {
    pub vel_l2: f64,
    pub pres_l2: f64,
    pub pres_h1_broken: f64,
    pub vel_energy: f64,
    pub pres_energy: f64,
    pub triple: f64,
    pub div_l2: f64,
    pub div_linf: f64,
}

/// Integration rules used for error measurement.
pub struct ErrorRules {
    pub volume: Vec<Option<CellQuadrature>>,
    pub boundary: Vec<BoundaryEntry>,
    pub degree: usize,
}

impl ErrorRules {
    /// Rules of exactness `2k + 4`.
    pub fn new(disc: &Discretization) -> Result<Self, AnalysisError> {
        let degree = 2 * disc.k() + 4;
        let (volume, boundary) = disc.rules(degree)?;
        Ok(Self {
            volume,
            boundary,
            degree,
        })
    }

    fn volume_points(&self, c: usize) -> &[(Point, f64)] {
        &self.volume[c].as_ref().expect("active cell").volume
    }
}

/// Mean of the exact pressure over Ω.
pub fn exact_pressure_mean(disc: &Discretization, rules: &ErrorRules, exact: &dyn ExactSolution) -> f64 {
    let mut integral = 0.0;
    let mut area = 0.0;
    for &c in &disc.cls.active_cells {
        for &(x, w) in rules.volume_points(c) {
            integral += w * exact.pressure(x);
            area += w;
        }
    }
    integral / area
}

/// Error norms of `(u_h, p_h)` against an exact solution. Under pure Neumann
/// conditions the exact pressure is shifted to zero mean.
pub fn compute_norms(
    disc: &Discretization,
    rules: &ErrorRules,
    sol: &MixedSolution,
    exact: &dyn ExactSolution,
) -> NormReport {
    let hd = &disc.handler;
    let h = disc.h();
    let shift = if disc.domain.bc == BcMode::PureNeumann {
        exact_pressure_mean(disc, rules, exact)
    } else {
        0.0
    };
    let p_ex = |x: Point| exact.pressure(x) - shift;
    let mut vel_l2 = 0.0;
    let mut pres_l2 = 0.0;
    let mut pres_h1 = 0.0;
    let mut div_l2 = 0.0;
    let mut div_linf = 0.0f64;
    for &c in &disc.cls.active_cells {
        for &(x, w) in rules.volume_points(c) {
            let u = exact.velocity(x);
            let uh = hd.velocity_at(&sol.velocity, c, x);
            vel_l2 += w * ((u[0] - uh[0]).powi(2) + (u[1] - uh[1]).powi(2));
            pres_l2 += w * (p_ex(x) - hd.pressure_at(&sol.pressure, c, x)).powi(2);
            let gp = exact.pressure_gradient(x);
            let gh = hd.pressure_gradient_at(&sol.pressure, c, x);
            pres_h1 += w * ((gp[0] - gh[0]).powi(2) + (gp[1] - gh[1]).powi(2));
            let de = hd.divergence_at(&sol.velocity, c, x) - exact.divergence(x);
            div_l2 += w * de * de;
            div_linf = div_linf.max(de.abs());
        }
    }

    // full active cells for the mesh-dependent norms
    let full_rule = crate::quadrature::tensor_rule(&crate::quadrature::GaussRule::with_exactness(rules.degree));
    let mut vel_full = 0.0;
    let mut grad_full = 0.0;
    for &c in &disc.cls.active_cells {
        let r = disc.mesh.cell_rect(c);
        for &(xh, w) in &full_rule {
            let x = crate::spaces::to_physical(&r, xh);
            let w = w * r.area();
            let u = exact.velocity(x);
            let uh = hd.velocity_at(&sol.velocity, c, x);
            vel_full += w * ((u[0] - uh[0]).powi(2) + (u[1] - uh[1]).powi(2));
            let gp = exact.pressure_gradient(x);
            let gh = hd.pressure_gradient_at(&sol.pressure, c, x);
            grad_full += w * ((gp[0] - gh[0]).powi(2) + (gp[1] - gh[1]).powi(2));
        }
    }
    let mut flux = 0.0;
    let mut dirichlet = 0.0;
    for b in rules.boundary.iter().filter(|b| b.fitted_facet.is_none()) {
        let x = b.point.point;
        match b.point.tag {
            BoundaryTag::Neumann => {
                let u = exact.velocity(x);
                let uh = hd.velocity_at(&sol.velocity, b.cell, x);
                let n = b.point.normal;
                flux += b.point.weight * ((u[0] - uh[0]) * n[0] + (u[1] - uh[1]) * n[1]).powi(2);
            }
            BoundaryTag::Dirichlet => {
                dirichlet += b.point.weight * (p_ex(x) - hd.pressure_at(&sol.pressure, b.cell, x)).powi(2);
            }
        }
    }
    // pressure jumps on interior facets, clipped to Ω
    let facet_rule = crate::quadrature::GaussRule::with_exactness(rules.degree);
    let mut jumps = 0.0;
    for &f in &disc.cls.active_facets {
        let facet = disc.mesh.facet(f);
        let (Some(m), Some(p)) = (facet.minus, facet.plus) else {
            continue;
        };
        if !(disc.cls.is_active(m) && disc.cls.is_active(p)) {
            continue;
        }
        let len = facet.length();
        for (t0, t1) in disc.domain.clip_segment(facet.a, facet.b) {
            for (s, w) in facet_rule.iter() {
                let t = t0 + s * (t1 - t0);
                let x = [
                    facet.a[0] + t * (facet.b[0] - facet.a[0]),
                    facet.a[1] + t * (facet.b[1] - facet.a[1]),
                ];
                let jump = hd.pressure_at(&sol.pressure, p, x) - hd.pressure_at(&sol.pressure, m, x);
                jumps += w * (t1 - t0) * len * jump * jump;
            }
        }
    }
    let vel_energy = (vel_full + flux / h).sqrt();
    let pres_energy = (grad_full + jumps / h + dirichlet / h).sqrt();
    NormReport {
        vel_l2: vel_l2.sqrt(),
        pres_l2: pres_l2.sqrt(),
        pres_h1_broken: pres_h1.sqrt(),
        vel_energy,
        pres_energy,
        triple: (vel_energy * vel_energy + pres_energy * pres_energy).sqrt(),
        div_l2: div_l2.sqrt(),
        div_linf,
    }
}

/// `div u_h - g` over Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub div_l2: f64,
    pub div_linf: f64,
    /// `(cell, is_cut, max |div u_h - g| over K ∩ Ω)` per active cell.
    pub per_cell: Vec<(usize, bool, f64)>,
}

impl DivergenceReport {
    /// Cell where the largest value is attained.
    pub fn argmax(&self) -> Option<(usize, bool, f64)> {
        self.per_cell.iter().copied().max_by(|a, b| a.2.total_cmp(&b.2))
    }
}

pub fn divergence_report(
    disc: &Discretization,
    rules: &ErrorRules,
    velocity: &[f64],
    g: &dyn Fn(Point) -> f64,
) -> DivergenceReport {
    let hd = &disc.handler;
    let mut l2 = 0.0;
    let mut per_cell = Vec::with_capacity(disc.cls.active_cells.len());
    for &c in &disc.cls.active_cells {
        let mut max = 0.0f64;
        for &(x, w) in rules.volume_points(c) {
            let d = hd.divergence_at(velocity, c, x) - g(x);
            l2 += w * d * d;
            max = max.max(d.abs());
        }
        per_cell.push((c, disc.cls.is_cut(c), max));
    }
    DivergenceReport {
        div_l2: l2.sqrt(),
        div_linf: per_cell.iter().fold(0.0, |m, e| m.max(e.2)),
        per_cell,
    }
}

/// Which operator the condition number refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditionMode {
    /// The block system without the mean-value multiplier. Under pure Neumann
    /// conditions the constant-pressure null direction is excluded.
    Full,
    /// The bordered system including the multiplier row and column.
    WithMultiplier,
    /// The velocity block `a_h + j_h`.
    VelocityBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionMethod {
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionEstimate {
    pub kappa: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub method: ConditionMethod,
}

/// Spectral condition number `σ_max / σ_min⁺` of the reduced system.
pub fn condition_number(system: &ReducedSystem, mode: ConditionMode) -> Result<ConditionEstimate, AnalysisError> {
    condition_number_with_limit(system, mode, DENSE_CONDITION_LIMIT)
}

pub fn condition_number_with_limit(
    system: &ReducedSystem,
    mode: ConditionMode,
    dense_limit: usize,
) -> Result<ConditionEstimate, AnalysisError> {
    let nv = system.num_velocity;
    let np = system.num_pressure;
    let (size, null) = match mode {
        ConditionMode::Full => (nv + np, system.has_multiplier),
        ConditionMode::WithMultiplier => (system.matrix.nrows(), false),
        ConditionMode::VelocityBlock => (nv, false),
    };
    let a = leading_block(&system.matrix, size);
    // constant pressure: coefficient of the constant mode is one in every cell
    let z: Option<Vec<f64>> = null.then(|| {
        let mut z = vec![0.0; size];
        let per_cell = system.pressure_block_size;
        for c in 0..np / per_cell {
            z[nv + c * per_cell] = 1.0;
        }
        let n = norm(&z);
        z.iter().map(|v| v / n).collect()
    });
    let expected_null = usize::from(z.is_some());
    if size <= dense_limit {
        let mut dense = Mat::<f64>::zeros(size, size);
        for j in 0..size {
            let range = a.symbolic().col_range(j);
            for (&i, &v) in a.symbolic().row_idx()[range.clone()].iter().zip(&a.val()[range]) {
                dense[(i, j)] += v;
            }
        }
        let sv = dense
            .singular_values()
            .map_err(|e| AnalysisError::SingularSystem(format!("{e:?}")))?;
        let mut sv: Vec<f64> = sv.into_iter().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let sigma_max = sv[0];
        let near_null = sv.iter().filter(|&&s| s < NULL_THRESHOLD * sigma_max).count();
        if system.stabilized && near_null > expected_null {
            return Err(AnalysisError::NullSpaceDetection {
                found: near_null,
                expected: expected_null,
            });
        }
        let sigma_min = sv[sv.len() - 1 - expected_null];
        return Ok(ConditionEstimate {
            kappa: sigma_max / sigma_min,
            sigma_max,
            sigma_min,
            method: ConditionMethod::Dense,
        });
    }

    let symmetric = system.symmetric || mode == ConditionMode::VelocityBlock;
    let (sigma_max, sigma_min) = if symmetric {
        let max = lanczos_extreme(size, |x| matvec(&a, x), z.as_deref());
        let inverse = BorderedInverse::new(&a, z.as_deref())?;
        let inv_max = lanczos_extreme(size, |x| inverse.apply(x, false), z.as_deref());
        (max, 1.0 / inv_max)
    } else {
        let max = lanczos_extreme(size, |x| matvec_transpose(&a, &matvec(&a, x)), z.as_deref());
        let inverse = BorderedInverse::new(&a, z.as_deref())?;
        let inv_max = lanczos_extreme(size, |x| inverse.apply(&inverse.apply(x, true), false), z.as_deref());
        (max.sqrt(), 1.0 / inv_max.sqrt())
    };
    let kappa = sigma_max / sigma_min;
    Ok(ConditionEstimate {
        kappa: if kappa.is_finite() { kappa } else { f64::INFINITY },
        sigma_max,
        sigma_min,
        method: ConditionMethod::Lanczos,
    })
}

fn leading_block(a: &SparseColMat<usize, f64>, size: usize) -> SparseColMat<usize, f64> {
    if size == a.nrows() {
        return a.clone();
    }
    let mut t = Vec::new();
    for j in 0..size {
        let range = a.symbolic().col_range(j);
        for (&i, &v) in a.symbolic().row_idx()[range.clone()].iter().zip(&a.val()[range]) {
            if i < size {
                t.push(Triplet::new(i, j, v));
            }
        }
    }
    SparseColMat::try_new_from_triplets(size, size, &t).expect("valid triplets")
}

/// Solves with `A`, or with `[[A, z], [zᵀ, 0]]` restricted to `z⊥` when `A`
/// has the known null vector `z`.
struct BorderedInverse {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
    bordered: bool,
}

impl BorderedInverse {
    fn new(a: &SparseColMat<usize, f64>, z: Option<&[f64]>) -> Result<Self, AnalysisError> {
        let n = a.nrows();
        let matrix = match z {
            None => a.clone(),
            Some(z) => {
                let mut t = Vec::new();
                for j in 0..n {
                    let range = a.symbolic().col_range(j);
                    for (&i, &v) in a.symbolic().row_idx()[range.clone()].iter().zip(&a.val()[range]) {
                        t.push(Triplet::new(i, j, v));
                    }
                }
                for (i, &v) in z.iter().enumerate() {
                    if v != 0.0 {
                        t.push(Triplet::new(i, n, v));
                        t.push(Triplet::new(n, i, v));
                    }
                }
                SparseColMat::try_new_from_triplets(n + 1, n + 1, &t).expect("valid triplets")
            }
        };
        let lu = matrix
            .sp_lu()
            .map_err(|e| AnalysisError::SingularSystem(format!("{e:?}")))?;
        Ok(Self {
            lu,
            n,
            bordered: z.is_some(),
        })
    }

    fn apply(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        let m = self.n + usize::from(self.bordered);
        let mut b = Mat::<f64>::from_fn(m, 1, |i, _| if i < self.n { x[i] } else { 0.0 });
        if transpose {
            self.lu.solve_transpose_in_place(b.as_mut());
        } else {
            self.lu.solve_in_place(b.as_mut());
        }
        (0..self.n).map(|i| b[(i, 0)]).collect()
    }
}

/// Largest modulus eigenvalue of a symmetric operator by Lanczos with full
/// reorthogonalization, optionally restricted to `z⊥`.
fn lanczos_extreme<F: FnMut(&[f64]) -> Vec<f64>>(n: usize, mut op: F, z: Option<&[f64]>) -> f64 {
    const MAX_STEPS: usize = 300;
    const TOL: f64 = 1e-9;
    let project = |v: &mut Vec<f64>| {
        if let Some(z) = z {
            let d: f64 = v.iter().zip(z).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(z) {
                *a -= d * b;
            }
        }
    };
    // deterministic, non-degenerate start vector
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919 + 13) % 101) as f64 / 101.0).collect();
    project(&mut v);
    let nv = norm(&v);
    v.iter_mut().for_each(|a| *a /= nv);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut estimate = 0.0f64;
    let steps = MAX_STEPS.min(n);
    for j in 0..steps {
        let mut w = op(&basis[j]);
        if w.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        project(&mut w);
        let a: f64 = w.iter().zip(&basis[j]).map(|(x, y)| x * y).sum();
        alpha.push(a);
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = w.iter().zip(q).map(|(x, y)| x * y).sum();
                for (x, y) in w.iter_mut().zip(q) {
                    *x -= d * y;
                }
            }
        }
        let b = norm(&w);
        let m = alpha.len();
        if m % 5 == 0 || b == 0.0 || j + 1 == steps {
            let t = Mat::<f64>::from_fn(m, m, |r, c| {
                if r == c {
                    alpha[r]
                } else if r == c + 1 {
                    beta[c]
                } else if c == r + 1 {
                    beta[r]
                } else {
                    0.0
                }
            });
            let Ok(eig) = t.self_adjoint_eigen(Side::Lower) else {
                estimate = alpha.iter().fold(estimate, |m, a| m.max(a.abs()));
                break;
            };
            let s = eig.S();
            let u = eig.U();
            let (idx, theta) = (0..m)
                .map(|i| (i, s[i]))
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .expect("non-empty");
            estimate = theta.abs();
            let residual = b * u[(m - 1, idx)].abs();
            if residual <= TOL * estimate {
                break;
            }
        }
        if b <= 1e-300 {
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    estimate
}
