//! Raviart–Thomas velocity and discontinuous `Q_k` pressure spaces on the
//! active cells of a Cartesian mesh.
//!
//! Velocity basis functions are the reference fields composed with the inverse
//! cell map, `φ_i(x) = φ̂_i(F_K⁻¹ x)`. This is `h` times the Piola image, which
//! keeps the facet fluxes continuous while giving every basis function unit
//! amplitude. Facet moments are taken against the global `+x` / `+y` normal, so
//! the two cells sharing a facet see the same functional.

use faer::prelude::*;

use crate::geometry::{Point, Rect};
use crate::mesh::{BackgroundMesh, MeshClassification};
use crate::polynomial::{orthonormal_legendre, Poly1};
use crate::quadrature::{tensor_rule, GaussRule};

pub fn rt_dimension(k: usize) -> usize {
    2 * (k + 1) * (k + 2)
}

pub fn q_dimension(k: usize) -> usize {
    (k + 1) * (k + 1)
}

/// Contravariant Piola map `|det DF|⁻¹ DF v̂` of the affine map onto `cell`.
pub fn piola_push(cell: &Rect, v: [f64; 2]) -> [f64; 2] {
    let (hx, hy) = (cell.width(), cell.height());
    [v[0] * hx / (hx * hy), v[1] * hy / (hx * hy)]
}

/// Reference map `x̂ ↦ x` of a cell.
pub fn to_physical(cell: &Rect, xh: Point) -> Point {
    [cell.min[0] + xh[0] * cell.width(), cell.min[1] + xh[1] * cell.height()]
}

pub fn to_reference(cell: &Rect, x: Point) -> Point {
    [(x[0] - cell.min[0]) / cell.width(), (x[1] - cell.min[1]) / cell.height()]
}

/// Which component a reference RT shape function lives in and its tensor factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RtShape {
    component: usize,
    /// Index into the dual family `a` (normal direction).
    normal: usize,
    /// Legendre index in the tangential direction.
    tangential: usize,
}

/// `RT_k` on the unit square.
///
/// Local order: `k+1` moments on each of the left, right, bottom and top
/// facets, then `k(k+1)` interior moments of the x component, then the same
/// for the y component.
#[derive(Debug, Clone)]
pub struct ReferenceBasisRT {
    pub k: usize,
    legendre: Vec<Poly1>,
    /// Degree `k+1` polynomials dual to `a(0)`, `a(1)`, `∫ a ℓ_i` for `i < k`.
    dual: Vec<Poly1>,
    shapes: Vec<RtShape>,
}

impl ReferenceBasisRT {
    pub fn new(k: usize) -> Self {
        let legendre = orthonormal_legendre(k + 1);
        let n = k + 2;
        // columns: monomials t^m; rows: functionals
        let rule = GaussRule::new(k + 2);
        let mut v = faer::Mat::<f64>::zeros(n, n);
        for m in 0..n {
            v[(0, m)] = if m == 0 { 1.0 } else { 0.0 };
            v[(1, m)] = 1.0;
            for i in 0..k {
                v[(2 + i, m)] = rule
                    .iter()
                    .map(|(t, w)| w * t.powi(m as i32) * legendre[i].eval(t))
                    .sum();
            }
        }
        let inv = v.partial_piv_lu().solve(faer::Mat::<f64>::identity(n, n));
        let dual = (0..n)
            .map(|col| Poly1::new((0..n).map(|m| inv[(m, col)]).collect()))
            .collect();

        let mut shapes = Vec::with_capacity(rt_dimension(k));
        for (component, normal) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            for tangential in 0..=k {
                shapes.push(RtShape {
                    component,
                    normal,
                    tangential,
                });
            }
        }
        for component in 0..2 {
            for i in 0..k {
                for tangential in 0..=k {
                    shapes.push(RtShape {
                        component,
                        normal: 2 + i,
                        tangential,
                    });
                }
            }
        }
        Self {
            k,
            legendre,
            dual,
            shapes,
        }
    }

    pub fn dim(&self) -> usize {
        self.shapes.len()
    }

    /// Local indices of the dofs on facet `side` (0 left, 1 right, 2 bottom, 3 top).
    pub fn facet_dofs(&self, side: usize) -> std::ops::Range<usize> {
        side * (self.k + 1)..(side + 1) * (self.k + 1)
    }

    /// Mixed partial derivative `∂x̂^dx ∂ŷ^dy` of every shape function.
    pub fn eval_derivative(&self, xh: Point, dx: usize, dy: usize) -> Vec<[f64; 2]> {
        self.shapes
            .iter()
            .map(|s| {
                let (along_n, along_t) = if s.component == 0 {
                    ((xh[0], dx), (xh[1], dy))
                } else {
                    ((xh[1], dy), (xh[0], dx))
                };
                let value = self.dual[s.normal].eval_derivative(along_n.0, along_n.1)
                    * self.legendre[s.tangential].eval_derivative(along_t.0, along_t.1);
                let mut out = [0.0; 2];
                out[s.component] = value;
                out
            })
            .collect()
    }

    pub fn eval(&self, xh: Point) -> Vec<[f64; 2]> {
        self.eval_derivative(xh, 0, 0)
    }

    /// Reference divergence of every shape function.
    pub fn divergence(&self, xh: Point) -> Vec<f64> {
        let dx = self.eval_derivative(xh, 1, 0);
        let dy = self.eval_derivative(xh, 0, 1);
        dx.iter().zip(&dy).map(|(a, b)| a[0] + b[1]).collect()
    }

    /// Reference degrees of freedom of a field on the unit square, computed
    /// with `n` Gauss points per direction.
    pub fn dofs_of<F: Fn(Point) -> [f64; 2]>(&self, v: F, n: usize) -> Vec<f64> {
        let k = self.k;
        let rule = GaussRule::new(n);
        let mut out = Vec::with_capacity(self.dim());
        let facets: [(usize, Box<dyn Fn(f64) -> Point>); 4] = [
            (0, Box::new(|s| [0.0, s])),
            (0, Box::new(|s| [1.0, s])),
            (1, Box::new(|s| [s, 0.0])),
            (1, Box::new(|s| [s, 1.0])),
        ];
        for (component, at) in &facets {
            for j in 0..=k {
                out.push(rule.iter().map(|(s, w)| w * v(at(s))[*component] * self.legendre[j].eval(s)).sum());
            }
        }
        let tensor = tensor_rule(&rule);
        for component in 0..2 {
            for i in 0..k {
                for j in 0..=k {
                    out.push(
                        tensor
                            .iter()
                            .map(|&(p, w)| {
                                let (n_coord, t_coord) = if component == 0 { (p[0], p[1]) } else { (p[1], p[0]) };
                                w * v(p)[component] * self.legendre[i].eval(n_coord) * self.legendre[j].eval(t_coord)
                            })
                            .sum(),
                    );
                }
            }
        }
        out
    }
}

/// Tensor Legendre basis of `Q_k` on the unit square, orthonormal in `L²`.
/// Local index `j (k+1) + i` for `ℓ_i(x̂) ℓ_j(ŷ)`.
#[derive(Debug, Clone)]
pub struct ReferenceBasisQ {
    pub k: usize,
    legendre: Vec<Poly1>,
}

impl ReferenceBasisQ {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            legendre: orthonormal_legendre(k),
        }
    }

    pub fn dim(&self) -> usize {
        q_dimension(self.k)
    }

    pub fn eval_derivative(&self, xh: Point, dx: usize, dy: usize) -> Vec<f64> {
        let n = self.k + 1;
        let lx: Vec<f64> = self.legendre.iter().map(|l| l.eval_derivative(xh[0], dx)).collect();
        let ly: Vec<f64> = self.legendre.iter().map(|l| l.eval_derivative(xh[1], dy)).collect();
        (0..n * n).map(|m| lx[m % n] * ly[m / n]).collect()
    }

    pub fn eval(&self, xh: Point) -> Vec<f64> {
        self.eval_derivative(xh, 0, 0)
    }

    /// Reference gradients.
    pub fn gradient(&self, xh: Point) -> Vec<[f64; 2]> {
        let gx = self.eval_derivative(xh, 1, 0);
        let gy = self.eval_derivative(xh, 0, 1);
        gx.into_iter().zip(gy).map(|(a, b)| [a, b]).collect()
    }
}

/// Global numbering of velocity and pressure unknowns on the active mesh.
#[derive(Debug, Clone)]
pub struct DofHandler {
    pub k: usize,
    pub mesh: BackgroundMesh,
    pub rt: ReferenceBasisRT,
    pub q: ReferenceBasisQ,
    facet_start: Vec<Option<usize>>,
    cell_active: Vec<Option<usize>>,
    interior_start: usize,
    num_velocity: usize,
    num_pressure: usize,
}

impl DofHandler {
    pub fn new(mesh: &BackgroundMesh, cls: &MeshClassification, k: usize) -> Self {
        let per_facet = k + 1;
        let mut facet_start = vec![None; mesh.facets().len()];
        for (n, &f) in cls.active_facets.iter().enumerate() {
            facet_start[f] = Some(n * per_facet);
        }
        let interior_start = cls.active_facets.len() * per_facet;
        let mut cell_active = vec![None; mesh.num_cells()];
        for (n, &c) in cls.active_cells.iter().enumerate() {
            cell_active[c] = Some(n);
        }
        let per_cell = 2 * k * (k + 1);
        let num_velocity = interior_start + cls.active_cells.len() * per_cell;
        let num_pressure = cls.active_cells.len() * q_dimension(k);
        Self {
            k,
            mesh: mesh.clone(),
            rt: ReferenceBasisRT::new(k),
            q: ReferenceBasisQ::new(k),
            facet_start,
            cell_active,
            interior_start,
            num_velocity,
            num_pressure,
        }
    }

    pub fn num_velocity(&self) -> usize {
        self.num_velocity
    }

    pub fn num_pressure(&self) -> usize {
        self.num_pressure
    }

    pub fn is_active(&self, c: usize) -> bool {
        self.cell_active[c].is_some()
    }

    /// Global velocity dofs of an active cell in reference-local order.
    pub fn cell_velocity_dofs(&self, c: usize) -> Vec<usize> {
        let k = self.k;
        let n = self.cell_active[c].expect("inactive cell has no dofs");
        let mut out = Vec::with_capacity(rt_dimension(k));
        for f in self.mesh.cell_facets(c) {
            let start = self.facet_start[f].expect("facet of an active cell is active");
            out.extend(start..start + k + 1);
        }
        let per_cell = 2 * k * (k + 1);
        let start = self.interior_start + n * per_cell;
        out.extend(start..start + per_cell);
        out
    }

    /// Global velocity dofs of a facet.
    pub fn facet_dofs(&self, f: usize) -> Option<std::ops::Range<usize>> {
        self.facet_start[f].map(|s| s..s + self.k + 1)
    }

    /// Pressure dofs of an active cell, numbered within the pressure block.
    pub fn cell_pressure_dofs(&self, c: usize) -> std::ops::Range<usize> {
        let n = self.cell_active[c].expect("inactive cell has no dofs");
        let d = q_dimension(self.k);
        n * d..(n + 1) * d
    }

    pub fn cell_rect(&self, c: usize) -> Rect {
        self.mesh.cell_rect(c)
    }

    /// Physical values of the cell's velocity basis at a physical point.
    pub fn velocity_basis(&self, c: usize, x: Point) -> Vec<[f64; 2]> {
        self.rt.eval(to_reference(&self.cell_rect(c), x))
    }

    /// Physical divergence of the cell's velocity basis.
    pub fn velocity_divergence(&self, c: usize, x: Point) -> Vec<f64> {
        let r = self.cell_rect(c);
        let xh = to_reference(&r, x);
        let dx = self.rt.eval_derivative(xh, 1, 0);
        let dy = self.rt.eval_derivative(xh, 0, 1);
        dx.iter()
            .zip(&dy)
            .map(|(a, b)| a[0] / r.width() + b[1] / r.height())
            .collect()
    }

    /// Physical `order`-th derivative along `axis` of the velocity basis.
    pub fn velocity_normal_derivative(&self, c: usize, x: Point, axis: usize, order: usize) -> Vec<[f64; 2]> {
        let r = self.cell_rect(c);
        let xh = to_reference(&r, x);
        let (dx, dy, h) = if axis == 0 {
            (order, 0, r.width())
        } else {
            (0, order, r.height())
        };
        let scale = h.powi(-(order as i32));
        self.rt
            .eval_derivative(xh, dx, dy)
            .into_iter()
            .map(|v| [v[0] * scale, v[1] * scale])
            .collect()
    }

    pub fn pressure_basis(&self, c: usize, x: Point) -> Vec<f64> {
        self.q.eval(to_reference(&self.cell_rect(c), x))
    }

    pub fn pressure_gradient(&self, c: usize, x: Point) -> Vec<[f64; 2]> {
        let r = self.cell_rect(c);
        self.q
            .gradient(to_reference(&r, x))
            .into_iter()
            .map(|g| [g[0] / r.width(), g[1] / r.height()])
            .collect()
    }

    pub fn pressure_normal_derivative(&self, c: usize, x: Point, axis: usize, order: usize) -> Vec<f64> {
        let r = self.cell_rect(c);
        let xh = to_reference(&r, x);
        let (dx, dy, h) = if axis == 0 {
            (order, 0, r.width())
        } else {
            (0, order, r.height())
        };
        let scale = h.powi(-(order as i32));
        self.q.eval_derivative(xh, dx, dy).into_iter().map(|v| v * scale).collect()
    }

    pub fn velocity_at(&self, coeffs: &[f64], c: usize, x: Point) -> [f64; 2] {
        let dofs = self.cell_velocity_dofs(c);
        self.velocity_basis(c, x)
            .iter()
            .zip(&dofs)
            .fold([0.0; 2], |acc, (phi, &d)| [acc[0] + coeffs[d] * phi[0], acc[1] + coeffs[d] * phi[1]])
    }

    pub fn divergence_at(&self, coeffs: &[f64], c: usize, x: Point) -> f64 {
        let dofs = self.cell_velocity_dofs(c);
        self.velocity_divergence(c, x).iter().zip(&dofs).map(|(d, &i)| coeffs[i] * d).sum()
    }

    /// `coeffs` is the pressure block.
    pub fn pressure_at(&self, coeffs: &[f64], c: usize, x: Point) -> f64 {
        let dofs = self.cell_pressure_dofs(c);
        self.pressure_basis(c, x).iter().zip(dofs).map(|(v, i)| coeffs[i] * v).sum()
    }

    pub fn pressure_gradient_at(&self, coeffs: &[f64], c: usize, x: Point) -> [f64; 2] {
        let dofs = self.cell_pressure_dofs(c);
        self.pressure_gradient(c, x)
            .iter()
            .zip(dofs)
            .fold([0.0; 2], |acc, (g, i)| [acc[0] + coeffs[i] * g[0], acc[1] + coeffs[i] * g[1]])
    }

    fn active_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.mesh.num_cells()).filter(|&c| self.is_active(c))
    }

    fn moment_points(&self) -> usize {
        self.k + 4
    }
}

/// Canonical interpolant `r_h v` of a field defined on the whole box.
pub fn interpolate_velocity<F: Fn(Point) -> [f64; 2]>(v: F, handler: &DofHandler) -> Vec<f64> {
    let mut out = vec![0.0; handler.num_velocity()];
    let n = handler.moment_points();
    for c in handler.active_cells() {
        let r = handler.cell_rect(c);
        let dofs = handler.rt.dofs_of(|xh| v(to_physical(&r, xh)), n);
        // shared facet dofs are written twice with the same value
        for (d, value) in handler.cell_velocity_dofs(c).into_iter().zip(dofs) {
            out[d] = value;
        }
    }
    out
}

/// Cellwise `L²` projection `Π_h q` onto `Q_k`.
pub fn project_pressure<F: Fn(Point) -> f64>(q: F, handler: &DofHandler) -> Vec<f64> {
    let mut out = vec![0.0; handler.num_pressure()];
    let rule = tensor_rule(&GaussRule::new(handler.moment_points()));
    for c in handler.active_cells() {
        let r = handler.cell_rect(c);
        let dofs = handler.cell_pressure_dofs(c);
        for &(xh, w) in &rule {
            let value = q(to_physical(&r, xh));
            for (d, b) in dofs.clone().zip(handler.q.eval(xh)) {
                out[d] += w * value * b;
            }
        }
    }
    out
}

/// Coefficients of `div u_h` in the pressure basis, cell by cell.
pub fn divergence_of(velocity: &[f64], handler: &DofHandler) -> Vec<f64> {
    let mut out = vec![0.0; handler.num_pressure()];
    let rule = tensor_rule(&GaussRule::new(handler.k + 1));
    for c in handler.active_cells() {
        let r = handler.cell_rect(c);
        let dofs = handler.cell_pressure_dofs(c);
        for &(xh, w) in &rule {
            let div = handler.divergence_at(velocity, c, to_physical(&r, xh));
            for (d, b) in dofs.clone().zip(handler.q.eval(xh)) {
                out[d] += w * div * b;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use crate::mesh::{build_mesh, classify_mesh};
    use proptest::prelude::*;

    fn handler(domain: &Domain, n: usize, k: usize) -> DofHandler {
        let mesh = build_mesh(domain.bounding_box, n, n);
        let cls = classify_mesh(&mesh, domain).unwrap();
        DofHandler::new(&mesh, &cls, k)
    }

    #[test]
    fn dimensions() {
        assert_eq!(rt_dimension(0), 4);
        assert_eq!(rt_dimension(1), 12);
        assert_eq!(rt_dimension(2), 24);
        for k in 0..4 {
            assert_eq!(ReferenceBasisRT::new(k).dim(), rt_dimension(k));
        }
    }

    #[test]
    fn rt_unisolvence() {
        for k in 0..4 {
            let rt = ReferenceBasisRT::new(k);
            for i in 0..rt.dim() {
                let dofs = rt.dofs_of(|p| rt.eval(p)[i], k + 3);
                for (j, v) in dofs.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-12, "k={k} shape {i} dof {j}: {v}");
                }
            }
        }
    }

    #[test]
    fn q_basis_is_orthonormal() {
        for k in 0..4 {
            let q = ReferenceBasisQ::new(k);
            let rule = tensor_rule(&GaussRule::new(k + 2));
            let n = q.dim();
            let mut gram = vec![0.0; n * n];
            for &(p, w) in &rule {
                let v = q.eval(p);
                for i in 0..n {
                    for j in 0..n {
                        gram[i * n + j] += w * v[i] * v[j];
                    }
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[i * n + j] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn piola_examples() {
        let cell = Rect::new([0.0, 0.0], [0.5, 0.5]);
        assert_eq!(piola_push(&cell, [1.0, 0.0]), [2.0, 0.0]);
        assert_eq!(piola_push(&Rect::unit(), [0.3, -0.7]), [0.3, -0.7]);
    }

    #[test]
    fn piola_preserves_facet_moments() {
        // bottom facet of a cell of size h: ∫_f P(v̂)·n q ds = ∫_f̂ v̂·n̂ q̂ dŝ
        let h = 0.25;
        let cell = Rect::new([0.5, 0.25], [0.5 + h, 0.25 + h]);
        let rt = ReferenceBasisRT::new(1);
        let leg = orthonormal_legendre(1);
        let coeffs = [0.3, -1.2, 0.7, 2.1, -0.4, 0.9, 1.3, -0.8, 0.2, 0.6, -1.7, 0.45];
        let field = |xh: Point| {
            rt.eval(xh)
                .iter()
                .zip(coeffs)
                .fold([0.0; 2], |a, (v, c)| [a[0] + c * v[0], a[1] + c * v[1]])
        };
        let rule = GaussRule::new(4);
        for q in &leg {
            let reference: f64 = rule.iter().map(|(s, w)| w * field([s, 0.0])[1] * q.eval(s)).sum();
            let physical: f64 = rule
                .iter()
                .map(|(s, w)| w * h * piola_push(&cell, field([s, 0.0]))[1] * q.eval(s))
                .sum();
            assert!((reference - physical).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_reproduces_rt_fields() {
        let d = Domain::cut_circle([0.5, 0.5], 0.45);
        let hd = handler(&d, 8, 0);
        let u = interpolate_velocity(|_| [1.0, 0.0], &hd);
        let hd1 = handler(&d, 8, 1);
        let w = interpolate_velocity(|p| [p[1], p[0]], &hd1);
        for &c in &[27usize, 9, 36] {
            let r = hd.cell_rect(c);
            for xh in [[0.1, 0.7], [0.55, 0.2], [0.9, 0.95]] {
                let x = to_physical(&r, xh);
                let v = hd.velocity_at(&u, c, x);
                assert!((v[0] - 1.0).abs() < 1e-13 && v[1].abs() < 1e-13);
                let v = hd1.velocity_at(&w, c, x);
                assert!((v[0] - x[1]).abs() < 1e-13 && (v[1] - x[0]).abs() < 1e-13);
            }
        }
        // y x is divergence free
        assert!(divergence_of(&w, &hd1).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn interpolation_error_is_first_order_for_rt0() {
        let d = Domain::full_box(Rect::unit());
        let field = |p: Point| [p[0].sin() * p[1], -p[0].cos() * p[0]];
        let err = |n: usize| {
            let hd = handler(&d, n, 0);
            let u = interpolate_velocity(field, &hd);
            let rule = tensor_rule(&GaussRule::new(5));
            let mut e = 0.0;
            for c in 0..hd.mesh.num_cells() {
                let r = hd.cell_rect(c);
                for &(xh, w) in &rule {
                    let x = to_physical(&r, xh);
                    let v = hd.velocity_at(&u, c, x);
                    let ex = field(x);
                    e += w * r.area() * ((v[0] - ex[0]).powi(2) + (v[1] - ex[1]).powi(2));
                }
            }
            e.sqrt()
        };
        let ratio = err(8) / err(16);
        assert!((1.8..2.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn projection_examples() {
        let d = Domain::full_box(Rect::unit());
        let hd = handler(&d, 4, 0);
        let one = project_pressure(|_| 1.0, &hd);
        assert!(one.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let p = project_pressure(|x| x[0].powi(3) * x[1], &hd);
        // cell [0.25,0.5]x[0,0.25]: average of x^3 y
        let avg = ((0.5f64.powi(4) - 0.25f64.powi(4)) / 4.0 / 0.25) * (0.25 * 0.25 / 2.0 / 0.25);
        assert!((p[hd.cell_pressure_dofs(1).start] - avg).abs() < 1e-14);

        let hd3 = handler(&d, 4, 3);
        let p3 = project_pressure(|x| x[0].powi(3) * x[1], &hd3);
        for c in 0..16 {
            let r = hd3.cell_rect(c);
            let x = to_physical(&r, [0.31, 0.77]);
            assert!((hd3.pressure_at(&p3, c, x) - x[0].powi(3) * x[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_of_interpolant_of_position() {
        let d = Domain::cut_pentagon(1e-9);
        for k in 1..3 {
            let hd = handler(&d, 8, k);
            let u = interpolate_velocity(|p| p, &hd);
            let div = divergence_of(&u, &hd);
            let two = project_pressure(|_| 2.0, &hd);
            for (a, b) in div.iter().zip(&two) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn commuting_diagram_on_quadratic_field() {
        let d = Domain::cut_circle([0.5, 0.5], 0.45);
        for k in 0..3 {
            let hd = handler(&d, 8, k);
            let lhs = divergence_of(&interpolate_velocity(|p| [p[0] * p[0], p[0] * p[1]], &hd), &hd);
            let rhs = project_pressure(|p| 3.0 * p[0], &hd);
            for (a, b) in lhs.iter().zip(&rhs) {
                assert!((a - b).abs() < 1e-12, "k={k}");
            }
        }
    }

    #[test]
    fn divergence_is_onto() {
        // every pressure basis function is the divergence of some velocity on a 2x2 mesh
        let d = Domain::full_box(Rect::unit());
        for k in 0..3 {
            let hd = handler(&d, 2, k);
            let nv = hd.num_velocity();
            let np = hd.num_pressure();
            let mut dmat = faer::Mat::<f64>::zeros(np, nv);
            for j in 0..nv {
                let mut e = vec![0.0; nv];
                e[j] = 1.0;
                for (i, v) in divergence_of(&e, &hd).into_iter().enumerate() {
                    dmat[(i, j)] = v;
                }
            }
            // rank check through the Gram matrix D Dᵀ
            let gram = &dmat * dmat.transpose();
            let eig = gram.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
            let max = eig.iter().cloned().fold(0.0, f64::max);
            assert!(eig.iter().all(|&e| e > 1e-10 * max), "k={k}");
        }
    }

    proptest! {
        #[test]
        fn normal_component_is_continuous(seed in proptest::collection::vec(-1.0f64..1.0, 60), s in 0.0f64..1.0) {
            let d = Domain::cut_circle([0.5, 0.5], 0.45);
            let hd = handler(&d, 4, 2);
            let coeffs: Vec<f64> = (0..hd.num_velocity()).map(|i| seed[i % seed.len()] * (1.0 + i as f64).sqrt()).collect();
            for facet in hd.mesh.facets() {
                if let (Some(a), Some(b)) = (facet.minus, facet.plus) {
                    if !(hd.is_active(a) && hd.is_active(b)) {
                        continue;
                    }
                    let x = [facet.a[0] + s * (facet.b[0] - facet.a[0]), facet.a[1] + s * (facet.b[1] - facet.a[1])];
                    let ua = hd.velocity_at(&coeffs, a, x)[facet.axis];
                    let ub = hd.velocity_at(&coeffs, b, x)[facet.axis];
                    prop_assert!((ua - ub).abs() < 1e-12 * (1.0 + ua.abs()));
                }
            }
        }
    }
}
