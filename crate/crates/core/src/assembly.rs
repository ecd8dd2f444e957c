//! Assembly of the stabilized saddle-point system and its variants.
//!
//! Unknowns are ordered velocity, pressure, then (pure Neumann only) one
//! Lagrange multiplier enforcing a zero pressure mean.

use std::io::Write;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use thiserror::Error;

use crate::geometry::{interior_quadrature, BcMode, BoundaryPoint, BoundaryTag, CellClass, CellQuadrature, Domain, Point, Rect};
use crate::mesh::{build_mesh, build_patches, classify_mesh, BackgroundMesh, MeshClassification, MeshError, Patch};
use crate::polynomial::{orthonormal_legendre, Poly1};
use crate::quadrature::{tensor_rule, GaussRule};
use crate::spaces::{to_physical, DofHandler};

/// Largest accepted condition number of a patch Gram matrix.
pub const MAX_PATCH_GRAM_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("Gram matrix of patch {patch} has condition number {condition:e}")]
    IllConditionedPatchGram { patch: usize, condition: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

impl From<crate::geometry::GeometryError> for AssemblyError {
    fn from(e: crate::geometry::GeometryError) -> Self {
        AssemblyError::Mesh(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stabilization {
    None,
    JumpGhostPenalty,
    ProjectionGhostPenalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Velocity,
    Pressure,
}

/// Power of `h` used by the ghost penalties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PenaltyScaling {
    Mixed,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormulationConfig {
    pub bc_mode: BcMode,
    pub stabilization: Stabilization,
    pub symmetric: bool,
    /// Nitsche weight is `nitsche_scale / h`.
    pub nitsche_scale: f64,
    pub degree: usize,
    /// Impose Neumann data strongly on box facets of uncut cells.
    pub strong_fitted_neumann: bool,
}

impl FormulationConfig {
    pub fn new(degree: usize, bc_mode: BcMode, stabilization: Stabilization) -> Self {
        Self {
            bc_mode,
            stabilization,
            symmetric: true,
            nitsche_scale: 1.0,
            degree,
            strong_fitted_neumann: false,
        }
    }

    pub fn scaling(&self) -> PenaltyScaling {
        match self.bc_mode {
            BcMode::PureDirichlet => PenaltyScaling::Dirichlet,
            _ => PenaltyScaling::Mixed,
        }
    }

    /// Sign of the pressure penalty in the second block row.
    fn pressure_penalty_sign(&self) -> f64 {
        if self.symmetric && self.bc_mode != BcMode::PureDirichlet {
            -1.0
        } else {
            1.0
        }
    }
}

type ScalarFn = Box<dyn Fn(Point) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// Data of the Darcy problem `u - ∇p = f`, `div u = g`.
pub struct ProblemData {
    pub f: VectorFn,
    pub g: ScalarFn,
    /// Neumann datum `u_N(x, n)`.
    pub u_n: Box<dyn Fn(Point, Point) -> f64 + Send + Sync>,
    pub p_d: ScalarFn,
}

/// Closed-form solution of the Darcy problem with `κ = I`.
pub trait ExactSolution: Send + Sync {
    fn velocity(&self, x: Point) -> [f64; 2];
    fn pressure(&self, x: Point) -> f64;
    fn pressure_gradient(&self, x: Point) -> [f64; 2];
    fn divergence(&self, x: Point) -> f64;
}

impl ProblemData {
    /// Data `f = u - ∇p`, `g = div u`, `u_N = u·n`, `p_D = p` of an exact solution.
    pub fn from_exact(exact: std::sync::Arc<dyn ExactSolution>) -> Self {
        let (e1, e2, e3, e4) = (exact.clone(), exact.clone(), exact.clone(), exact);
        Self {
            f: Box::new(move |x| {
                let u = e1.velocity(x);
                let gp = e1.pressure_gradient(x);
                [u[0] - gp[0], u[1] - gp[1]]
            }),
            g: Box::new(move |x| e2.divergence(x)),
            u_n: Box::new(move |x, n| dot(e3.velocity(x), n)),
            p_d: Box::new(move |x| e4.pressure(x)),
        }
    }

    pub fn zero() -> Self {
        Self {
            f: Box::new(|_| [0.0, 0.0]),
            g: Box::new(|_| 0.0),
            u_n: Box::new(|_, _| 0.0),
            p_d: Box::new(|_| 0.0),
        }
    }
}

/// Boundary quadrature point together with its owning cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEntry {
    pub cell: usize,
    pub point: BoundaryPoint,
    /// Box facet of an uncut cell the point lies on.
    pub fitted_facet: Option<usize>,
}

/// Mesh artifacts shared by every assembly routine.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub domain: Domain,
    pub mesh: BackgroundMesh,
    pub cls: MeshClassification,
    pub patches: Vec<Patch>,
    pub handler: DofHandler,
    /// Volume rules on `K ∩ Ω` per background cell.
    pub volume: Vec<Option<CellQuadrature>>,
    /// Every boundary quadrature point of `Γ`.
    pub boundary: Vec<BoundaryEntry>,
}

impl Discretization {
    pub fn new(domain: &Domain, nx: usize, k: usize) -> Result<Self, AssemblyError> {
        let mesh = build_mesh(domain.bounding_box, nx, nx);
        let cls = classify_mesh(&mesh, domain)?;
        let patches = build_patches(&mesh, &cls)?;
        let handler = DofHandler::new(&mesh, &cls, k);
        let (volume, boundary) = build_rules(domain, &mesh, &cls, 2 * k + 2)?;
        Ok(Self {
            domain: *domain,
            mesh,
            cls,
            patches,
            handler,
            volume,
            boundary,
        })
    }

    pub fn k(&self) -> usize {
        self.handler.k
    }

    pub fn h(&self) -> f64 {
        self.mesh.h()
    }

    /// Rules of higher exactness, used for error norms.
    pub fn rules(&self, degree: usize) -> Result<(Vec<Option<CellQuadrature>>, Vec<BoundaryEntry>), AssemblyError> {
        build_rules(&self.domain, &self.mesh, &self.cls, degree)
    }

    /// Boundary points where the condition is imposed weakly.
    pub fn weak_boundary(&self, config: &FormulationConfig) -> impl Iterator<Item = &BoundaryEntry> + '_ {
        let strong = config.strong_fitted_neumann;
        self.boundary
            .iter()
            .filter(move |b| !(strong && b.fitted_facet.is_some() && b.point.tag == BoundaryTag::Neumann))
    }
}

/// Volume rules for active cells and boundary points of `Γ`.
///
/// Uncut cells get a tensor rule of the given exactness. On cut cells the
/// exactness is raised to `2·degree - 2`, the total degree of products of
/// two `Q_{k+1,k}` functions. Boundary points include the cut pieces, box
/// facets of uncut cells, and the parts of facets towards dropped sliver
/// cells that lie in Ω.
fn build_rules(
    domain: &Domain,
    mesh: &BackgroundMesh,
    cls: &MeshClassification,
    degree: usize,
) -> Result<(Vec<Option<CellQuadrature>>, Vec<BoundaryEntry>), AssemblyError> {
    let mut volume = vec![None; mesh.num_cells()];
    let mut boundary = Vec::new();
    let cut_degree = (2 * degree).saturating_sub(2).max(degree);
    let facet_rule = GaussRule::with_exactness(degree + 1);
    for &c in &cls.active_cells {
        let rect = mesh.cell_rect(c);
        let quad = if cls.is_cut(c) {
            domain.cut_quadrature(&rect, cut_degree)?
        } else {
            interior_quadrature(&rect, degree)
        };
        for p in &quad.boundary {
            boundary.push(BoundaryEntry {
                cell: c,
                point: *p,
                fitted_facet: None,
            });
        }
        volume[c] = Some(CellQuadrature {
            volume: quad.volume,
            boundary: Vec::new(),
        });
        for f in mesh.cell_facets(c) {
            let facet = mesh.facet(f);
            let sign = if facet.minus == Some(c) { 1.0 } else { -1.0 };
            let mut normal = [0.0; 2];
            normal[facet.axis] = sign;
            let other = if facet.minus == Some(c) { facet.plus } else { facet.minus };
            let pieces = match other {
                None if cls.cell_class[c] == CellClass::Interior => vec![(0.0, 1.0)],
                Some(o) if !cls.is_active(o) => domain.clip_segment(facet.a, facet.b),
                _ => Vec::new(),
            };
            let len = facet.length();
            for (t0, t1) in pieces {
                for (s, w) in facet_rule.iter() {
                    let t = t0 + s * (t1 - t0);
                    let x = [
                        facet.a[0] + t * (facet.b[0] - facet.a[0]),
                        facet.a[1] + t * (facet.b[1] - facet.a[1]),
                    ];
                    boundary.push(BoundaryEntry {
                        cell: c,
                        point: BoundaryPoint {
                            point: x,
                            weight: w * (t1 - t0) * len,
                            normal,
                            tag: domain.boundary_tag(x),
                        },
                        fitted_facet: other.is_none().then_some(f),
                    });
                }
            }
        }
    }
    Ok((volume, boundary))
}

/// Sparse matrix under construction; duplicate entries are summed.
#[derive(Debug, Clone, Default)]
pub struct TripletMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<Triplet<usize, usize, f64>>,
}

impl TripletMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            self.entries.push(Triplet::new(r, c, v));
        }
    }

    /// Adds a dense row-major block.
    pub fn add_block(&mut self, rows: &[usize], cols: &[usize], block: &[f64]) {
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                self.push(r, c, block[i * cols.len() + j]);
            }
        }
    }

    pub fn to_sparse(&self) -> SparseColMat<usize, f64> {
        SparseColMat::try_new_from_triplets(self.rows, self.cols, &self.entries).expect("valid triplets")
    }

    /// Dense copy, for small matrices and tests.
    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.rows, self.cols);
        for t in &self.entries {
            m[(t.row, t.col)] += t.val;
        }
        m
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|t| x[t.row] * t.val * x[t.col]).sum()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        for t in &self.entries {
            y[t.row] += t.val * x[t.col];
        }
        y
    }
}

/// `∫_Ω w·v + γ ∫_{Γ_N} (w·n)(v·n)` over the weak Neumann boundary.
pub fn assemble_a(disc: &Discretization, config: &FormulationConfig) -> TripletMatrix {
    let hd = &disc.handler;
    let n = hd.num_velocity();
    let mut out = TripletMatrix::new(n, n);
    let gamma = config.nitsche_scale / disc.h();
    for &c in &disc.cls.active_cells {
        let dofs = hd.cell_velocity_dofs(c);
        let m = dofs.len();
        let mut local = vec![0.0; m * m];
        for &(x, w) in &disc.volume[c].as_ref().expect("active cell").volume {
            let phi = hd.velocity_basis(c, x);
            for i in 0..m {
                for j in 0..m {
                    local[i * m + j] += w * (phi[i][0] * phi[j][0] + phi[i][1] * phi[j][1]);
                }
            }
        }
        out.add_block(&dofs, &dofs, &local);
    }
    for b in disc.weak_boundary(config).filter(|b| b.point.tag == BoundaryTag::Neumann) {
        let dofs = hd.cell_velocity_dofs(b.cell);
        let flux = normal_flux(&hd.velocity_basis(b.cell, b.point.point), b.point.normal);
        let m = dofs.len();
        let mut local = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                local[i * m + j] = gamma * b.point.weight * flux[i] * flux[j];
            }
        }
        out.add_block(&dofs, &dofs, &local);
    }
    out
}

fn normal_flux(phi: &[[f64; 2]], n: Point) -> Vec<f64> {
    phi.iter().map(|v| v[0] * n[0] + v[1] * n[1]).collect()
}

/// `b_0(v, q) = ∫_Ω q div v`, rows pressure, columns velocity.
pub fn assemble_b0(disc: &Discretization) -> TripletMatrix {
    let hd = &disc.handler;
    let mut out = TripletMatrix::new(hd.num_pressure(), hd.num_velocity());
    for &c in &disc.cls.active_cells {
        let vd = hd.cell_velocity_dofs(c);
        let pd: Vec<usize> = hd.cell_pressure_dofs(c).collect();
        let mut local = vec![0.0; pd.len() * vd.len()];
        for &(x, w) in &disc.volume[c].as_ref().expect("active cell").volume {
            let div = hd.velocity_divergence(c, x);
            let q = hd.pressure_basis(c, x);
            for (i, qi) in q.iter().enumerate() {
                for (j, dj) in div.iter().enumerate() {
                    local[i * vd.len() + j] += w * qi * dj;
                }
            }
        }
        out.add_block(&pd, &vd, &local);
    }
    out
}

/// `b_1(v, q) = ∫_Ω q div v - ∫_{Γ_N} q v·n` over the weak Neumann boundary.
pub fn assemble_b1(disc: &Discretization, config: &FormulationConfig) -> TripletMatrix {
    let hd = &disc.handler;
    let mut out = assemble_b0(disc);
    for b in disc.weak_boundary(config).filter(|b| b.point.tag == BoundaryTag::Neumann) {
        let vd = hd.cell_velocity_dofs(b.cell);
        let pd: Vec<usize> = hd.cell_pressure_dofs(b.cell).collect();
        let flux = normal_flux(&hd.velocity_basis(b.cell, b.point.point), b.point.normal);
        let q = hd.pressure_basis(b.cell, b.point.point);
        let mut local = vec![0.0; pd.len() * vd.len()];
        for (i, qi) in q.iter().enumerate() {
            for (j, fj) in flux.iter().enumerate() {
                local[i * vd.len() + j] = -b.point.weight * qi * fj;
            }
        }
        out.add_block(&pd, &vd, &local);
    }
    out
}

/// `Σ_{f ∈ F_h^Γ} Σ_{j ≤ k} w_j ∫_f [∂_n^j u][∂_n^j v]` over full facets.
pub fn assemble_jump_ghost(disc: &Discretization, which: Field, scaling: PenaltyScaling) -> TripletMatrix {
    let hd = &disc.handler;
    let k = hd.k;
    let h = disc.h();
    let n = match which {
        Field::Velocity => hd.num_velocity(),
        Field::Pressure => hd.num_pressure(),
    };
    let mut out = TripletMatrix::new(n, n);
    let rule = GaussRule::with_exactness(2 * k + 2);
    for &f in &disc.cls.ghost_facets {
        let facet = disc.mesh.facet(f);
        let (minus, plus) = (facet.minus.expect("interior facet"), facet.plus.expect("interior facet"));
        let (dm, dp): (Vec<usize>, Vec<usize>) = match which {
            Field::Velocity => (hd.cell_velocity_dofs(minus), hd.cell_velocity_dofs(plus)),
            Field::Pressure => (hd.cell_pressure_dofs(minus).collect(), hd.cell_pressure_dofs(plus).collect()),
        };
        let dofs: Vec<usize> = dm.iter().chain(&dp).copied().collect();
        let m = dofs.len();
        let mut local = vec![0.0; m * m];
        let len = facet.length();
        for j in 0..=k {
            let power = match (which, scaling) {
                (Field::Pressure, PenaltyScaling::Mixed) => 2 * j as i32 - 1,
                _ => 2 * j as i32 + 1,
            };
            let weight = h.powi(power);
            for (s, w) in rule.iter() {
                let x = [
                    facet.a[0] + s * (facet.b[0] - facet.a[0]),
                    facet.a[1] + s * (facet.b[1] - facet.a[1]),
                ];
                // jump [v] = v⁺ - v⁻, one row per vector component
                let jumps: Vec<Vec<f64>> = match which {
                    Field::Velocity => {
                        let vm = hd.velocity_normal_derivative(minus, x, facet.axis, j);
                        let vp = hd.velocity_normal_derivative(plus, x, facet.axis, j);
                        (0..2)
                            .map(|d| vm.iter().map(|v| -v[d]).chain(vp.iter().map(|v| v[d])).collect())
                            .collect()
                    }
                    Field::Pressure => {
                        let qm = hd.pressure_normal_derivative(minus, x, facet.axis, j);
                        let qp = hd.pressure_normal_derivative(plus, x, facet.axis, j);
                        vec![qm.iter().map(|v| -v).chain(qp).collect()]
                    }
                };
                let scale = weight * w * len;
                for jump in &jumps {
                    for a in 0..m {
                        if jump[a] == 0.0 {
                            continue;
                        }
                        for b in 0..m {
                            local[a * m + b] += scale * jump[a] * jump[b];
                        }
                    }
                }
            }
        }
        out.add_block(&dofs, &dofs, &local);
    }
    out
}

/// Polynomial space on a patch frame: `Q_{k+1,k} × Q_{k,k+1}` or `Q_k`,
/// orthonormal Legendre factors in frame coordinates.
struct PatchSpace {
    frame: Rect,
    legendre: Vec<Poly1>,
    terms: Vec<(usize, usize, usize)>,
    vector: bool,
}

impl PatchSpace {
    fn new(frame: Rect, k: usize, which: Field) -> Self {
        let mut terms = Vec::new();
        match which {
            Field::Velocity => {
                for (comp, (nx, ny)) in [(0, (k + 1, k)), (1, (k, k + 1))] {
                    for b in 0..=ny {
                        for a in 0..=nx {
                            terms.push((comp, a, b));
                        }
                    }
                }
            }
            Field::Pressure => {
                for b in 0..=k {
                    for a in 0..=k {
                        terms.push((0, a, b));
                    }
                }
            }
        }
        Self {
            frame,
            legendre: orthonormal_legendre(k + 1),
            terms,
            vector: which == Field::Velocity,
        }
    }

    /// Values as vectors (the second entry is unused for scalar spaces).
    fn eval(&self, x: Point) -> Vec<[f64; 2]> {
        let xi = (x[0] - self.frame.min[0]) / self.frame.width();
        let eta = (x[1] - self.frame.min[1]) / self.frame.height();
        self.terms
            .iter()
            .map(|&(comp, a, b)| {
                let v = self.legendre[a].eval(xi) * self.legendre[b].eval(eta);
                let mut out = [0.0; 2];
                out[if self.vector { comp } else { 0 }] = v;
                out
            })
            .collect()
    }
}

/// `Σ_ℓ w ∫_{P_ℓ} (u - π_ℓ u)·v` over full patch cells, `π_ℓ` the `L²(P_ℓ)`
/// projection onto patch polynomials.
pub fn assemble_projection_ghost(
    disc: &Discretization,
    which: Field,
    scaling: PenaltyScaling,
) -> Result<TripletMatrix, AssemblyError> {
    let hd = &disc.handler;
    let k = hd.k;
    let h = disc.h();
    let n = match which {
        Field::Velocity => hd.num_velocity(),
        Field::Pressure => hd.num_pressure(),
    };
    let weight = match (which, scaling) {
        (Field::Pressure, PenaltyScaling::Mixed) => h.powi(-2),
        _ => 1.0,
    };
    let mut out = TripletMatrix::new(n, n);
    let rule = tensor_rule(&GaussRule::new(k + 3));
    for (p, patch) in disc.patches.iter().enumerate() {
        let space = PatchSpace::new(patch.frame, k, which);
        let mut dofs: Vec<usize> = Vec::new();
        for &c in &patch.cells {
            match which {
                Field::Velocity => dofs.extend(hd.cell_velocity_dofs(c)),
                Field::Pressure => dofs.extend(hd.cell_pressure_dofs(c)),
            }
        }
        dofs.sort_unstable();
        dofs.dedup();
        let m = dofs.len();
        let np = space.terms.len();
        let mut mass = Mat::<f64>::zeros(m, m);
        let mut cross = Mat::<f64>::zeros(m, np);
        let mut gram = Mat::<f64>::zeros(np, np);
        for &c in &patch.cells {
            let rect = hd.cell_rect(c);
            let local: Vec<usize> = match which {
                Field::Velocity => hd.cell_velocity_dofs(c),
                Field::Pressure => hd.cell_pressure_dofs(c).collect(),
            }
            .iter()
            .map(|d| dofs.binary_search(d).expect("patch dof"))
            .collect();
            for &(xh, w) in &rule {
                let x = to_physical(&rect, xh);
                let w = w * rect.area();
                let phi: Vec<[f64; 2]> = match which {
                    Field::Velocity => hd.velocity_basis(c, x),
                    Field::Pressure => hd.pressure_basis(c, x).into_iter().map(|v| [v, 0.0]).collect(),
                };
                let pi = space.eval(x);
                for (a, &la) in local.iter().enumerate() {
                    for (b, &lb) in local.iter().enumerate() {
                        mass[(la, lb)] += w * dot(phi[a], phi[b]);
                    }
                    for (t, pt) in pi.iter().enumerate() {
                        cross[(la, t)] += w * dot(phi[a], *pt);
                    }
                }
                for (s, ps) in pi.iter().enumerate() {
                    for (t, pt) in pi.iter().enumerate() {
                        gram[(s, t)] += w * dot(*ps, *pt);
                    }
                }
            }
        }
        let eig = gram.self_adjoint_eigenvalues(faer::Side::Lower).expect("symmetric eigensolver");
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if condition > MAX_PATCH_GRAM_CONDITION {
            return Err(AssemblyError::IllConditionedPatchGram { patch: p, condition });
        }
        let correction = &cross * gram.llt(faer::Side::Lower).expect("Gram matrix is positive definite").solve(cross.transpose());
        let local: Vec<f64> = (0..m)
            .flat_map(|i| {
                let (mass, correction) = (&mass, &correction);
                (0..m).map(move |j| weight * (mass[(i, j)] - correction[(i, j)]))
            })
            .collect();
        out.add_block(&dofs, &dofs, &local);
    }
    Ok(out)
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Ghost penalty of the configured type for one field.
pub fn assemble_ghost(disc: &Discretization, config: &FormulationConfig, which: Field) -> Result<TripletMatrix, AssemblyError> {
    let hd = &disc.handler;
    let n = match which {
        Field::Velocity => hd.num_velocity(),
        Field::Pressure => hd.num_pressure(),
    };
    match config.stabilization {
        Stabilization::None => Ok(TripletMatrix::new(n, n)),
        Stabilization::JumpGhostPenalty => Ok(assemble_jump_ghost(disc, which, config.scaling())),
        Stabilization::ProjectionGhostPenalty => assemble_projection_ghost(disc, which, config.scaling()),
    }
}

/// Velocity and pressure load vectors.
pub fn assemble_rhs(disc: &Discretization, data: &ProblemData, config: &FormulationConfig) -> (Vec<f64>, Vec<f64>) {
    let hd = &disc.handler;
    let mut fv = vec![0.0; hd.num_velocity()];
    let mut fp = vec![0.0; hd.num_pressure()];
    let gamma = config.nitsche_scale / disc.h();
    for &c in &disc.cls.active_cells {
        let vd = hd.cell_velocity_dofs(c);
        let pd = hd.cell_pressure_dofs(c);
        for &(x, w) in &disc.volume[c].as_ref().expect("active cell").volume {
            let f = (data.f)(x);
            for (d, phi) in vd.iter().zip(hd.velocity_basis(c, x)) {
                fv[*d] += w * dot(f, phi);
            }
            let g = (data.g)(x);
            for (d, q) in pd.clone().zip(hd.pressure_basis(c, x)) {
                fp[d] += w * g * q;
            }
        }
    }
    let boundary_mass_term = config.symmetric && config.bc_mode != BcMode::PureDirichlet;
    for b in disc.weak_boundary(config) {
        let bp = &b.point;
        let vd = hd.cell_velocity_dofs(b.cell);
        let flux = normal_flux(&hd.velocity_basis(b.cell, bp.point), bp.normal);
        match bp.tag {
            BoundaryTag::Dirichlet => {
                let pd = (data.p_d)(bp.point);
                for (d, fl) in vd.iter().zip(&flux) {
                    fv[*d] += bp.weight * pd * fl;
                }
            }
            BoundaryTag::Neumann => {
                let un = (data.u_n)(bp.point, bp.normal);
                for (d, fl) in vd.iter().zip(&flux) {
                    fv[*d] += gamma * bp.weight * un * fl;
                }
                if boundary_mass_term {
                    for (d, q) in hd.cell_pressure_dofs(b.cell).zip(hd.pressure_basis(b.cell, bp.point)) {
                        fp[d] -= bp.weight * un * q;
                    }
                }
            }
        }
    }
    (fv, fp)
}

/// Values of the velocity dofs on strongly imposed Neumann facets.
pub fn strong_constraints(disc: &Discretization, data: &ProblemData, config: &FormulationConfig) -> Vec<(usize, f64)> {
    if !config.strong_fitted_neumann {
        return Vec::new();
    }
    let hd = &disc.handler;
    let k = hd.k;
    let legendre = orthonormal_legendre(k);
    let rule = GaussRule::new(k + 4);
    let mut out = Vec::new();
    for &f in &disc.cls.fitted_boundary_facets {
        let facet = disc.mesh.facet(f);
        if disc.domain.boundary_tag(facet.midpoint()) != BoundaryTag::Neumann {
            continue;
        }
        // outward normal relative to the global facet orientation
        let sign = if facet.plus.is_none() { 1.0 } else { -1.0 };
        let mut normal = [0.0; 2];
        normal[facet.axis] = sign;
        let dofs = hd.facet_dofs(f).expect("active facet");
        for (j, d) in dofs.enumerate() {
            let value: f64 = rule
                .iter()
                .map(|(s, w)| {
                    let x = [
                        facet.a[0] + s * (facet.b[0] - facet.a[0]),
                        facet.a[1] + s * (facet.b[1] - facet.a[1]),
                    ];
                    w * sign * (data.u_n)(x, normal) * legendre[j].eval(s)
                })
                .sum();
            out.push((d, value));
        }
    }
    out
}

/// Pressure mass functional `q ↦ ∫_Ω q`.
pub fn pressure_mean_row(disc: &Discretization) -> Vec<f64> {
    let hd = &disc.handler;
    let mut out = vec![0.0; hd.num_pressure()];
    for &c in &disc.cls.active_cells {
        for &(x, w) in &disc.volume[c].as_ref().expect("active cell").volume {
            for (d, q) in hd.cell_pressure_dofs(c).zip(hd.pressure_basis(c, x)) {
                out[d] += w * q;
            }
        }
    }
    out
}

/// The assembled linear system.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub matrix: TripletMatrix,
    pub rhs: Vec<f64>,
    pub num_velocity: usize,
    pub num_pressure: usize,
    /// Pressure unknowns per cell.
    pub pressure_block_size: usize,
    pub has_multiplier: bool,
    pub symmetric: bool,
    pub stabilized: bool,
    /// Strongly imposed velocity dofs and their values.
    pub constrained: Vec<(usize, f64)>,
}

/// System restricted to the unconstrained unknowns.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub matrix: SparseColMat<usize, f64>,
    pub rhs: Vec<f64>,
    /// Full index of each reduced unknown.
    pub free: Vec<usize>,
    pub num_velocity: usize,
    pub num_pressure: usize,
    /// Pressure unknowns per cell.
    pub pressure_block_size: usize,
    pub has_multiplier: bool,
    pub symmetric: bool,
    pub stabilized: bool,
}

impl AssembledSystem {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn reduce(&self) -> ReducedSystem {
        let n = self.dim();
        let mut fixed = vec![None; n];
        for &(d, v) in &self.constrained {
            fixed[d] = Some(v);
        }
        let mut map = vec![usize::MAX; n];
        let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
        for (r, &i) in free.iter().enumerate() {
            map[i] = r;
        }
        let mut rhs: Vec<f64> = free.iter().map(|&i| self.rhs[i]).collect();
        let mut entries = Vec::with_capacity(self.matrix.entries.len());
        for t in &self.matrix.entries {
            if fixed[t.row].is_some() {
                continue;
            }
            match fixed[t.col] {
                Some(v) => rhs[map[t.row]] -= t.val * v,
                None => entries.push(Triplet::new(map[t.row], map[t.col], t.val)),
            }
        }
        let m = free.len();
        let nv_free = free.iter().filter(|&&i| i < self.num_velocity).count();
        ReducedSystem {
            matrix: SparseColMat::try_new_from_triplets(m, m, &entries).expect("valid triplets"),
            rhs,
            free,
            num_velocity: nv_free,
            num_pressure: self.num_pressure,
            pressure_block_size: self.pressure_block_size,
            has_multiplier: self.has_multiplier,
            symmetric: self.symmetric,
            stabilized: self.stabilized,
        }
    }

    /// Full vector from a reduced solution.
    pub fn expand(&self, reduced: &ReducedSystem, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for &(d, v) in &self.constrained {
            out[d] = v;
        }
        for (r, &i) in reduced.free.iter().enumerate() {
            out[i] = x[r];
        }
        out
    }

    /// Writes `row col value` lines, one per stored entry, sorted.
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let sparse = self.matrix.to_sparse();
        writeln!(out, "% {} {} {}", self.dim(), self.dim(), sparse.compute_nnz())?;
        let sym = sparse.symbolic();
        let mut rows: Vec<(usize, usize, f64)> = Vec::with_capacity(sparse.compute_nnz());
        for j in 0..self.dim() {
            let range = sym.col_range(j);
            for (&i, &v) in sym.row_idx()[range.clone()].iter().zip(&sparse.val()[range]) {
                rows.push((i, j, v));
            }
        }
        rows.sort_by_key(|&(i, j, _)| (i, j));
        for (i, j, v) in rows {
            writeln!(out, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }
}

/// Assembles the full block system for `config`.
pub fn assemble_system(disc: &Discretization, config: &FormulationConfig, data: &ProblemData) -> Result<AssembledSystem, AssemblyError> {
    let hd = &disc.handler;
    let nv = hd.num_velocity();
    let np = hd.num_pressure();
    let has_multiplier = config.bc_mode == BcMode::PureNeumann;
    let n = nv + np + usize::from(has_multiplier);
    let mut m = TripletMatrix::new(n, n);

    let a = assemble_a(disc, config);
    let jv = assemble_ghost(disc, config, Field::Velocity)?;
    let jp = assemble_ghost(disc, config, Field::Pressure)?;
    let b1 = assemble_b1(disc, config);
    let row2 = if config.symmetric { b1.clone() } else { assemble_b0(disc) };
    let sigma = config.pressure_penalty_sign();

    m.entries.extend(a.entries.iter().chain(&jv.entries).copied());
    for t in &b1.entries {
        m.push(t.col, nv + t.row, t.val);
    }
    for t in &row2.entries {
        m.push(nv + t.row, t.col, t.val);
    }
    for t in &jp.entries {
        m.push(nv + t.row, nv + t.col, sigma * t.val);
    }
    if has_multiplier {
        for (i, v) in pressure_mean_row(disc).into_iter().enumerate() {
            m.push(nv + i, nv + np, v);
            m.push(nv + np, nv + i, v);
        }
    }

    let (fv, fp) = assemble_rhs(disc, data, config);
    let mut rhs = fv;
    rhs.extend(fp);
    if has_multiplier {
        rhs.push(0.0);
    }
    Ok(AssembledSystem {
        matrix: m,
        rhs,
        num_velocity: nv,
        num_pressure: np,
        has_multiplier,
        symmetric: config.symmetric,
        stabilized: config.stabilization != Stabilization::None,
        pressure_block_size: crate::spaces::q_dimension(disc.k()),
        constrained: strong_constraints(disc, data, config),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::{interpolate_velocity, project_pressure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(k: usize, bc: BcMode, stab: Stabilization) -> FormulationConfig {
        FormulationConfig::new(k, bc, stab)
    }

    #[test]
    fn rt0_mass_matrix_on_unit_cell() {
        let d = Domain::full_box(Rect::unit()).with_bc(BcMode::PureDirichlet);
        let disc = Discretization::new(&d, 1, 0).unwrap();
        let a = assemble_a(&disc, &config(0, BcMode::PureDirichlet, Stabilization::None)).to_dense();
        // basis: (1-x, 0), (x, 0), (0, 1-y), (0, y)
        let expect = [
            [1.0 / 3.0, 1.0 / 6.0, 0.0, 0.0],
            [1.0 / 6.0, 1.0 / 3.0, 0.0, 0.0],
            [0.0, 0.0, 1.0 / 3.0, 1.0 / 6.0],
            [0.0, 0.0, 1.0 / 6.0, 1.0 / 3.0],
        ];
        let dofs = disc.handler.cell_velocity_dofs(0);
        for i in 0..4 {
            for j in 0..4 {
                assert!((a[(dofs[i], dofs[j])] - expect[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn b_block_on_two_by_two_box() {
        let d = Domain::full_box(Rect::unit()).with_bc(BcMode::PureDirichlet);
        let disc = Discretization::new(&d, 2, 0).unwrap();
        let b = assemble_b0(&disc).to_dense();
        // div of (x̂, 0) is 1/h, times the pressure basis 1 and cell area h²: ±h
        let h = 0.5;
        for c in 0..4 {
            let vd = disc.handler.cell_velocity_dofs(c);
            let row = disc.handler.cell_pressure_dofs(c).start;
            for (local, sign) in [(0, -1.0), (1, 1.0), (2, -1.0), (3, 1.0)] {
                assert!((b[(row, vd[local])] - sign * h).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constant_pressure_row_vanishes_under_pure_neumann() {
        for d in [
            Domain::full_box(Rect::unit()),
            Domain::cut_circle([0.5, 0.5], 0.45),
            Domain::cut_pentagon(1e-9),
        ] {
            for k in 0..3 {
                let disc = Discretization::new(&d, 8, k).unwrap();
                let b = assemble_b1(&disc, &config(k, BcMode::PureNeumann, Stabilization::None));
                let ones = project_pressure(|_| 1.0, &disc.handler);
                let mut row = vec![0.0; disc.handler.num_velocity()];
                for t in &b.entries {
                    row[t.col] += ones[t.row] * t.val;
                }
                let max = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(max < 1e-12, "{:?} k={k}: {max}", d.kind);
            }
        }
    }

    #[test]
    fn jump_penalty_hand_values() {
        let d = Domain::full_box(Rect::unit());
        let mut disc = Discretization::new(&d, 2, 0).unwrap();
        let h = 0.5;
        disc.cls.ghost_facets = vec![1]; // between cells 0 and 1
        let jp = assemble_jump_ghost(&disc, Field::Pressure, PenaltyScaling::Mixed);
        let mut p = vec![0.0; 4];
        p[0] = 1.0;
        assert!((jp.quadratic_form(&p) - 1.0).abs() < 1e-14);
        let jp = assemble_jump_ghost(&disc, Field::Pressure, PenaltyScaling::Dirichlet);
        assert!((jp.quadratic_form(&p) - h * h).abs() < 1e-14);
        // unit jump of the normal flux across the facet
        let jv = assemble_jump_ghost(&disc, Field::Velocity, PenaltyScaling::Mixed);
        let mut v = vec![0.0; disc.handler.num_velocity()];
        let left_cell_left_facet = disc.handler.cell_velocity_dofs(0)[0];
        v[left_cell_left_facet] = 1.0;
        // (1 - x̂, 0) on cell 0 has value 0 on the shared facet, its x̂-derivative is not penalized for k = 0
        assert!(jv.quadratic_form(&v).abs() < 1e-14);
        let bottom = disc.handler.cell_velocity_dofs(0)[2];
        v = vec![0.0; v.len()];
        v[bottom] = 1.0;
        // (0, 1 - ŷ) on cell 0 only: jump of the tangential component, ∫ (1-ŷ)² = h/3
        assert!((jv.quadratic_form(&v) - h * h / 3.0).abs() < 1e-14);
    }

    #[test]
    fn projection_penalty_two_cell_patch() {
        let d = Domain::full_box(Rect::unit());
        let mut disc = Discretization::new(&d, 2, 0).unwrap();
        let h = 0.5;
        disc.patches = vec![Patch {
            cells: vec![0, 1],
            anchor: 0,
            frame: Rect::new([0.0, 0.0], [1.0, 0.5]),
            internal_facets: vec![1],
        }];
        let s = assemble_projection_ghost(&disc, Field::Pressure, PenaltyScaling::Mixed).unwrap();
        let mut p = vec![0.0; 4];
        p[0] = 1.0;
        assert!((s.quadratic_form(&p) - 0.5).abs() < 1e-13);
        let s = assemble_projection_ghost(&disc, Field::Pressure, PenaltyScaling::Dirichlet).unwrap();
        assert!((s.quadratic_form(&p) - 0.5 * h * h).abs() < 1e-13);
    }

    #[test]
    fn penalties_vanish_on_global_polynomials_and_are_psd() {
        let d = Domain::cut_circle([0.5, 0.5], 0.45);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..3 {
            let disc = Discretization::new(&d, 8, k).unwrap();
            let kf = if k == 0 { 0.0 } else { 1.0 };
            let u = interpolate_velocity(|p| [kf * p[0] * p[1] + 1.0 + 2.0 * p[0], 2.0 - p[1]], &disc.handler);
            let p = project_pressure(|x| 1.0 + kf * (x[0] - 2.0 * x[1]), &disc.handler);
            for which in [Field::Velocity, Field::Pressure] {
                let x = if which == Field::Velocity { &u } else { &p };
                let jump = assemble_jump_ghost(&disc, which, PenaltyScaling::Mixed);
                let proj = assemble_projection_ghost(&disc, which, PenaltyScaling::Mixed).unwrap();
                assert!(jump.quadratic_form(x).abs() < 1e-12);
                assert!(proj.quadratic_form(x).abs() < 1e-12);
                for _ in 0..20 {
                    let r: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                    assert!(jump.quadratic_form(&r) >= -1e-12);
                    assert!(proj.quadratic_form(&r) >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn symmetric_configs_give_symmetric_matrices() {
        let d = Domain::cut_circle([0.5, 0.5], 0.45);
        for (bc, stab) in [
            (BcMode::PureNeumann, Stabilization::ProjectionGhostPenalty),
            (BcMode::PureDirichlet, Stabilization::JumpGhostPenalty),
            (BcMode::MixedNeumannDirichlet, Stabilization::JumpGhostPenalty),
        ] {
            let disc = Discretization::new(&d.with_bc(bc), 8, 1).unwrap();
            let sys = assemble_system(&disc, &config(1, bc, stab), &ProblemData::zero()).unwrap();
            let m = sys.matrix.to_dense();
            let mut max = 0.0f64;
            let mut asym = 0.0f64;
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    max = max.max(m[(i, j)].abs());
                    asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
                }
            }
            assert!(asym / max < 1e-12);
            assert!(sys.rhs.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn full_box_system_size_and_stabilization_invariance() {
        let d = Domain::full_box(Rect::unit());
        let disc = Discretization::new(&d, 2, 0).unwrap();
        let a = assemble_system(&disc, &config(0, BcMode::PureNeumann, Stabilization::None), &ProblemData::zero()).unwrap();
        let b = assemble_system(&disc, &config(0, BcMode::PureNeumann, Stabilization::JumpGhostPenalty), &ProblemData::zero()).unwrap();
        assert_eq!(a.dim(), 17);
        assert_eq!(a.matrix.to_dense(), b.matrix.to_dense());
    }

    #[test]
    fn sliver_rows_without_stabilization() {
        let eps = 1e-7;
        let d = Domain::cut_rectangle(eps).with_bc(BcMode::PureDirichlet);
        let disc = Discretization::new(&d, 4, 0).unwrap();
        let a = assemble_a(&disc, &config(0, BcMode::PureDirichlet, Stabilization::None)).to_dense();
        // top facets of the cut row sit above y = 0.75 + ε
        for c in 12..16 {
            let top = disc.handler.cell_velocity_dofs(c)[3];
            assert!(a[(top, top)] <= eps * 0.25 + 1e-20);
        }
    }

    #[test]
    fn rhs_mass_identity() {
        let d = Domain::full_box(Rect::unit()).with_bc(BcMode::PureDirichlet);
        let disc = Discretization::new(&d, 3, 0).unwrap();
        let cfg = config(0, BcMode::PureDirichlet, Stabilization::None);
        let data = ProblemData {
            f: Box::new(|_| [1.0, 0.0]),
            ..ProblemData::zero()
        };
        let (fv, _) = assemble_rhs(&disc, &data, &cfg);
        let coeff = interpolate_velocity(|_| [1.0, 0.0], &disc.handler);
        let mass = assemble_a(&disc, &cfg);
        let expect = mass.apply(&coeff);
        for (a, b) in fv.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
