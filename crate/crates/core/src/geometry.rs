//! Implicit description of the physical domain inside the fictitious box and
//! quadrature on cut cells.
//!
//! Each benchmark domain is `Ω = box ∩ {cutter < 0}` where the cutter is a
//! single exact primitive (half-plane, disk or disk complement). The level set
//! is `max(cutter, box signed distance)`, so it is exact to machine precision
//! and classification uses exact predicates rather than sampling.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use thiserror::Error;

use crate::quadrature::{tensor_rule, GaussRule};

pub type Point = [f64; 2];

/// Volume fraction below which a cut cell is considered empty.
pub const SLIVER_THRESHOLD: f64 = 1e-14;

/// Extra Gauss points used along exact circular arcs, where the integrand is
/// not polynomial in the angle.
const ARC_EXTRA_POINTS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("cannot certify the class of cell {cell:?}: {reason}")]
    AmbiguousCut { cell: Rect, reason: &'static str },
    #[error("cut cell {cell:?} keeps a volume fraction of {fraction:e}, below the sliver threshold")]
    DegenerateCut { cell: Rect, fraction: f64 },
    #[error("boundary crosses the edges of cell {cell:?} {crossings} times; at most two are supported")]
    ReparameterizationFailure { cell: Rect, crossings: usize },
}

/// Axis-aligned rectangle `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn unit() -> Self {
        Self::new([0.0, 0.0], [1.0, 1.0])
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Corners in counter-clockwise order starting at `min`.
    pub fn corners(&self) -> [Point; 4] {
        [
            self.min,
            [self.max[0], self.min[1]],
            self.max,
            [self.min[0], self.max[1]],
        ]
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    /// Signed distance, negative inside.
    fn signed_distance(&self, p: Point) -> f64 {
        let dx = (self.min[0] - p[0]).max(p[0] - self.max[0]);
        let dy = (self.min[1] - p[1]).max(p[1] - self.max[1]);
        if dx <= 0.0 && dy <= 0.0 {
            dx.max(dy)
        } else {
            dx.max(0.0).hypot(dy.max(0.0))
        }
    }

    fn nearest_distance(&self, p: Point) -> f64 {
        let dx = (self.min[0] - p[0]).max(p[0] - self.max[0]).max(0.0);
        let dy = (self.min[1] - p[1]).max(p[1] - self.max[1]).max(0.0);
        dx.hypot(dy)
    }

    fn farthest_distance(&self, p: Point) -> f64 {
        let dx = (p[0] - self.min[0]).abs().max((p[0] - self.max[0]).abs());
        let dy = (p[1] - self.min[1]).abs().max((p[1] - self.max[1]).abs());
        dx.hypot(dy)
    }
}

/// The benchmark geometries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainKind {
    /// `Ω = Ω_T`, no cut.
    FullBox,
    /// `(0,1) × (0, 0.75 + ε)`.
    CutRectangle { eps: f64 },
    /// The unit square minus the triangle `(0, 0.25+ε), (0, 1), (0.75-ε, 1)`.
    CutPentagon { eps: f64 },
    /// Disk `B_r(center)`.
    CutCircle { center: Point, radius: f64 },
    /// `(0,2)² \ B_r(center)`.
    SquareWithCircularCut { center: Point, radius: f64 },
}

/// Which boundary condition is imposed where.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BcMode {
    /// Dirichlet on the sides `x = x_max` and `y = y_max` of the box, Neumann elsewhere.
    MixedNeumannDirichlet,
    PureNeumann,
    PureDirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Neumann,
    Dirichlet,
}

/// How curved pieces of the boundary are integrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArcRule {
    /// Trigonometric parameterization of the arc, Gauss rule in the angle.
    Exact,
    /// Lagrange interpolation of the arc by a polynomial curve of the given order.
    Polynomial { order: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cutter {
    None,
    /// `n·x - offset`, `n` unit.
    HalfPlane { normal: Point, offset: f64 },
    /// `|x - c| - r`.
    Disk { center: Point, radius: f64 },
    /// `r - |x - c|`.
    Hole { center: Point, radius: f64 },
}

impl Cutter {
    fn eval(&self, p: Point) -> f64 {
        match *self {
            Cutter::None => f64::NEG_INFINITY,
            Cutter::HalfPlane { normal, offset } => normal[0] * p[0] + normal[1] * p[1] - offset,
            Cutter::Disk { center, radius } => (p[0] - center[0]).hypot(p[1] - center[1]) - radius,
            Cutter::Hole { center, radius } => radius - (p[0] - center[0]).hypot(p[1] - center[1]),
        }
    }

    fn inside(&self, p: Point) -> bool {
        self.eval(p) < 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub kind: DomainKind,
    pub bounding_box: Rect,
    pub bc: BcMode,
    pub arc_rule: ArcRule,
    cutter: Cutter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellClass {
    Interior,
    Cut,
    Exterior,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub point: Point,
    pub weight: f64,
    /// Unit normal pointing out of Ω.
    pub normal: Point,
    pub tag: BoundaryTag,
}

/// Quadrature on `K ∩ Ω` and on `Γ ∩ K`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellQuadrature {
    pub volume: Vec<(Point, f64)>,
    pub boundary: Vec<BoundaryPoint>,
}

impl CellQuadrature {
    pub fn volume_measure(&self) -> f64 {
        self.volume.iter().map(|(_, w)| w).sum()
    }

    pub fn boundary_measure(&self) -> f64 {
        self.boundary.iter().map(|b| b.weight).sum()
    }
}

impl Domain {
    fn with(kind: DomainKind, bounding_box: Rect, cutter: Cutter) -> Self {
        Self {
            kind,
            bounding_box,
            bc: BcMode::PureNeumann,
            arc_rule: ArcRule::Exact,
            cutter,
        }
    }

    pub fn full_box(bounding_box: Rect) -> Self {
        Self::with(DomainKind::FullBox, bounding_box, Cutter::None)
    }

    pub fn cut_rectangle(eps: f64) -> Self {
        Self::with(
            DomainKind::CutRectangle { eps },
            Rect::unit(),
            Cutter::HalfPlane {
                normal: [0.0, 1.0],
                offset: 0.75 + eps,
            },
        )
    }

    /// Inside the unit box the removed triangle is cut off by the single line
    /// `y = x + 0.25 + ε`; its other two sides lie on the box boundary.
    pub fn cut_pentagon(eps: f64) -> Self {
        Self::with(
            DomainKind::CutPentagon { eps },
            Rect::unit(),
            Cutter::HalfPlane {
                normal: [-FRAC_1_SQRT_2, FRAC_1_SQRT_2],
                offset: (0.25 + eps) * FRAC_1_SQRT_2,
            },
        )
    }

    pub fn cut_circle(center: Point, radius: f64) -> Self {
        Self::with(
            DomainKind::CutCircle { center, radius },
            Rect::unit(),
            Cutter::Disk { center, radius },
        )
    }

    pub fn square_with_circular_cut(center: Point, radius: f64) -> Self {
        Self::with(
            DomainKind::SquareWithCircularCut { center, radius },
            Rect::new([0.0, 0.0], [2.0, 2.0]),
            Cutter::Hole { center, radius },
        )
    }

    pub fn with_bc(mut self, bc: BcMode) -> Self {
        self.bc = bc;
        self
    }

    pub fn with_arc_rule(mut self, arc_rule: ArcRule) -> Self {
        self.arc_rule = arc_rule;
        self
    }

    /// Exact measure of Ω.
    pub fn area(&self) -> f64 {
        match self.kind {
            DomainKind::FullBox => self.bounding_box.area(),
            DomainKind::CutRectangle { eps } => 0.75 + eps,
            DomainKind::CutPentagon { eps } => {
                let leg = 0.75 - eps;
                1.0 - 0.5 * leg * leg
            }
            DomainKind::CutCircle { radius, .. } => PI * radius * radius,
            DomainKind::SquareWithCircularCut { radius, .. } => {
                // quarter disk removed at the box corner
                self.bounding_box.area() - 0.25 * PI * radius * radius
            }
        }
    }

    /// Level set φ: negative in Ω, positive outside, zero on Γ.
    pub fn eval_level_set(&self, p: Point) -> f64 {
        self.cutter.eval(p).max(self.bounding_box.signed_distance(p))
    }

    pub fn boundary_tag(&self, p: Point) -> BoundaryTag {
        match self.bc {
            BcMode::PureNeumann => BoundaryTag::Neumann,
            BcMode::PureDirichlet => BoundaryTag::Dirichlet,
            BcMode::MixedNeumannDirichlet => {
                let b = &self.bounding_box;
                let tol = 1e-12 * b.width().max(b.height());
                if (p[0] - b.max[0]).abs() <= tol || (p[1] - b.max[1]).abs() <= tol {
                    BoundaryTag::Dirichlet
                } else {
                    BoundaryTag::Neumann
                }
            }
        }
    }

    /// Exact classification of a cell of the background mesh.
    ///
    /// Slivers are reported as `Cut`; [`cut_quadrature`](Self::cut_quadrature)
    /// rejects them with [`GeometryError::DegenerateCut`].
    pub fn classify_cell(&self, cell: &Rect) -> Result<CellClass, GeometryError> {
        let class = match self.cutter {
            Cutter::None => CellClass::Interior,
            Cutter::HalfPlane { .. } => {
                let values = cell.corners().map(|c| self.cutter.eval(c));
                if values.iter().all(|&v| v <= 0.0) {
                    CellClass::Interior
                } else if values.iter().all(|&v| v >= 0.0) {
                    CellClass::Exterior
                } else {
                    CellClass::Cut
                }
            }
            Cutter::Disk { center, radius } => {
                if cell.farthest_distance(center) <= radius {
                    CellClass::Interior
                } else if cell.nearest_distance(center) >= radius {
                    CellClass::Exterior
                } else {
                    CellClass::Cut
                }
            }
            Cutter::Hole { center, radius } => {
                if cell.nearest_distance(center) >= radius {
                    CellClass::Interior
                } else if cell.farthest_distance(center) <= radius {
                    CellClass::Exterior
                } else {
                    CellClass::Cut
                }
            }
        };
        if !cell.corners().iter().all(|&c| self.bounding_box.contains(c)) {
            return Err(GeometryError::AmbiguousCut {
                cell: *cell,
                reason: "cell leaves the bounding box",
            });
        }
        Ok(class)
    }

    /// Quadrature on `K ∩ Ω` exact for total degree `degree` (up to the arc
    /// treatment), plus a rule on `Γ ∩ K` for cut cells.
    pub fn cut_quadrature(&self, cell: &Rect, degree: usize) -> Result<CellQuadrature, GeometryError> {
        match self.classify_cell(cell)? {
            CellClass::Interior => Ok(interior_quadrature(cell, degree)),
            CellClass::Exterior => Err(GeometryError::DegenerateCut {
                cell: *cell,
                fraction: 0.0,
            }),
            CellClass::Cut => {
                let region = self.cut_region(cell)?;
                let quad = region.quadrature(self, degree);
                let fraction = quad.volume_measure() / cell.area();
                if fraction < SLIVER_THRESHOLD {
                    return Err(GeometryError::DegenerateCut { cell: *cell, fraction });
                }
                Ok(quad)
            }
        }
    }

    /// Sub-intervals `[t0, t1] ⊂ [0, 1]` of the segment `a + t (b - a)` lying in Ω.
    pub fn clip_segment(&self, a: Point, b: Point) -> Vec<(f64, f64)> {
        let mut ts: Vec<f64> = self.crossings(a, b).into_iter().map(|(t, _)| t).collect();
        ts.insert(0, 0.0);
        ts.push(1.0);
        ts.windows(2)
            .filter(|w| w[1] > w[0])
            .filter(|w| {
                let tm = 0.5 * (w[0] + w[1]);
                self.cutter.inside(lerp(a, b, tm))
            })
            .map(|w| (w[0], w[1]))
            .collect()
    }

    /// Parameters in `(0, 1)` where the segment `a → b` crosses the cutter,
    /// with `true` when the crossing enters Ω.
    fn crossings(&self, a: Point, b: Point) -> Vec<(f64, bool)> {
        match self.cutter {
            Cutter::None => Vec::new(),
            Cutter::HalfPlane { .. } => {
                let fa = self.cutter.eval(a);
                let fb = self.cutter.eval(b);
                if (fa < 0.0) == (fb < 0.0) {
                    return Vec::new();
                }
                let t = fa / (fa - fb);
                if t > 0.0 && t < 1.0 {
                    vec![(t, fa >= 0.0)]
                } else {
                    Vec::new()
                }
            }
            Cutter::Disk { center, radius } | Cutter::Hole { center, radius } => {
                let d = [b[0] - a[0], b[1] - a[1]];
                let f = [a[0] - center[0], a[1] - center[1]];
                let qa = d[0] * d[0] + d[1] * d[1];
                let qb = 2.0 * (f[0] * d[0] + f[1] * d[1]);
                let qc = f[0] * f[0] + f[1] * f[1] - radius * radius;
                let disc = qb * qb - 4.0 * qa * qc;
                if disc <= 0.0 {
                    return Vec::new();
                }
                let sq = disc.sqrt();
                // numerically stable root pair
                let q = -0.5 * (qb + qb.signum() * sq);
                let (mut t1, mut t2) = if q != 0.0 { (q / qa, qc / q) } else { (0.0, 0.0) };
                if t1 > t2 {
                    std::mem::swap(&mut t1, &mut t2);
                }
                let disk = matches!(self.cutter, Cutter::Disk { .. });
                // at t1 the distance to the center decreases through r
                [(t1, disk), (t2, !disk)]
                    .into_iter()
                    .filter(|&(t, _)| t > 0.0 && t < 1.0)
                    .collect()
            }
        }
    }

    fn cut_region(&self, cell: &Rect) -> Result<CutRegion, GeometryError> {
        let corners = cell.corners();
        // events along the counter-clockwise perimeter: (perimeter parameter, point, entering)
        let mut events: Vec<(f64, Point, bool)> = Vec::new();
        for i in 0..4 {
            let a = corners[i];
            let b = corners[(i + 1) % 4];
            for (t, entering) in self.crossings(a, b) {
                events.push((i as f64 + t, lerp(a, b, t), entering));
            }
        }
        let on_box = |p: Point, q: Point| self.on_box_boundary(p, q);

        let edges = match events.len() {
            0 => {
                if let Cutter::Disk { center, radius } = self.cutter {
                    if cell.contains(center) && cell.nearest_distance_to_boundary(center) >= radius {
                        let arcs = (0..4)
                            .map(|i| {
                                let t0 = 0.5 * PI * i as f64;
                                Edge::Arc {
                                    center,
                                    radius,
                                    theta0: t0,
                                    theta1: t0 + 0.5 * PI,
                                }
                            })
                            .collect();
                        return Ok(CutRegion {
                            edges: arcs,
                            star: center,
                        });
                    }
                }
                if corners.iter().all(|&c| !self.cutter.inside(c)) {
                    return Err(GeometryError::DegenerateCut {
                        cell: *cell,
                        fraction: 0.0,
                    });
                }
                return Err(GeometryError::ReparameterizationFailure {
                    cell: *cell,
                    crossings: 0,
                });
            }
            2 => {
                let (entry, exit) = if events[0].2 {
                    (events[0], events[1])
                } else {
                    (events[1], events[0])
                };
                if entry.2 == exit.2 {
                    return Err(GeometryError::AmbiguousCut {
                        cell: *cell,
                        reason: "crossings do not alternate",
                    });
                }
                let mut edges = Vec::new();
                // walk the perimeter from the entry to the exit
                let mut s = entry.0;
                let mut p = entry.1;
                let end = if exit.0 > entry.0 { exit.0 } else { exit.0 + 4.0 };
                loop {
                    let next_corner = s.floor() + 1.0;
                    if next_corner >= end {
                        let q = exit.1;
                        push_segment(&mut edges, p, q, on_box(p, q));
                        break;
                    }
                    let q = corners[(next_corner as usize) % 4];
                    push_segment(&mut edges, p, q, on_box(p, q));
                    p = q;
                    s = next_corner;
                }
                edges.push(self.boundary_piece(exit.1, entry.1));
                edges
            }
            n if n % 2 == 1 => {
                return Err(GeometryError::AmbiguousCut {
                    cell: *cell,
                    reason: "odd number of boundary crossings",
                })
            }
            n => {
                return Err(GeometryError::ReparameterizationFailure {
                    cell: *cell,
                    crossings: n,
                })
            }
        };

        // star point: the loop vertex deepest inside Ω
        let star = edges
            .iter()
            .map(|e| e.start())
            .min_by(|a, b| self.cutter.eval(*a).total_cmp(&self.cutter.eval(*b)))
            .expect("non-empty loop");
        let edges = match self.arc_rule {
            ArcRule::Exact => edges,
            ArcRule::Polynomial { order } => edges.into_iter().map(|e| e.polynomial(order)).collect(),
        };
        Ok(CutRegion { edges, star })
    }

    /// Piece of `Γ` from the exit point to the entry point, oriented with Ω on the left.
    fn boundary_piece(&self, from: Point, to: Point) -> Edge {
        match self.cutter {
            Cutter::HalfPlane { .. } | Cutter::None => Edge::Segment {
                a: from,
                b: to,
                on_boundary: true,
            },
            Cutter::Disk { center, radius } => {
                let t0 = angle(center, from);
                let mut t1 = angle(center, to);
                if t1 <= t0 {
                    t1 += 2.0 * PI;
                }
                Edge::Arc {
                    center,
                    radius,
                    theta0: t0,
                    theta1: t1,
                }
            }
            Cutter::Hole { center, radius } => {
                let t0 = angle(center, from);
                let mut t1 = angle(center, to);
                if t1 >= t0 {
                    t1 -= 2.0 * PI;
                }
                Edge::Arc {
                    center,
                    radius,
                    theta0: t0,
                    theta1: t1,
                }
            }
        }
    }

    fn on_box_boundary(&self, p: Point, q: Point) -> bool {
        let b = &self.bounding_box;
        let tol = 1e-12 * b.width().max(b.height());
        (0..2).any(|d| {
            ((p[d] - b.min[d]).abs() <= tol && (q[d] - b.min[d]).abs() <= tol)
                || ((p[d] - b.max[d]).abs() <= tol && (q[d] - b.max[d]).abs() <= tol)
        })
    }
}

impl Rect {
    fn nearest_distance_to_boundary(&self, p: Point) -> f64 {
        (p[0] - self.min[0])
            .min(self.max[0] - p[0])
            .min(p[1] - self.min[1])
            .min(self.max[1] - p[1])
    }
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

fn angle(center: Point, p: Point) -> f64 {
    (p[1] - center[1]).atan2(p[0] - center[0])
}

fn push_segment(edges: &mut Vec<Edge>, a: Point, b: Point, on_boundary: bool) {
    if a != b {
        edges.push(Edge::Segment { a, b, on_boundary });
    }
}

/// Tensor Gauss rule on an uncut cell.
pub fn interior_quadrature(cell: &Rect, degree: usize) -> CellQuadrature {
    let rule = GaussRule::with_exactness(degree);
    let jac = cell.area();
    let volume = tensor_rule(&rule)
        .into_iter()
        .map(|([u, v], w)| {
            (
                [cell.min[0] + u * cell.width(), cell.min[1] + v * cell.height()],
                w * jac,
            )
        })
        .collect();
    CellQuadrature {
        volume,
        boundary: Vec::new(),
    }
}

/// Piece of the boundary of `K ∩ Ω`.
#[derive(Debug, Clone, PartialEq)]
enum Edge {
    Segment { a: Point, b: Point, on_boundary: bool },
    Arc { center: Point, radius: f64, theta0: f64, theta1: f64 },
    Curve { curve: LagrangeCurve },
}

impl Edge {
    fn start(&self) -> Point {
        self.eval(0.0).0
    }

    fn on_boundary(&self) -> bool {
        match self {
            Edge::Segment { on_boundary, .. } => *on_boundary,
            Edge::Arc { .. } | Edge::Curve { .. } => true,
        }
    }

    /// Position and tangent at `t ∈ [0, 1]`.
    fn eval(&self, t: f64) -> (Point, Point) {
        match self {
            Edge::Segment { a, b, .. } => (lerp(*a, *b, t), [b[0] - a[0], b[1] - a[1]]),
            Edge::Arc {
                center,
                radius,
                theta0,
                theta1,
            } => {
                let span = theta1 - theta0;
                let th = theta0 + t * span;
                let (s, c) = th.sin_cos();
                (
                    [center[0] + radius * c, center[1] + radius * s],
                    [-radius * s * span, radius * c * span],
                )
            }
            Edge::Curve { curve } => curve.eval(t),
        }
    }

    fn polynomial(self, order: usize) -> Edge {
        match self {
            Edge::Arc { .. } => {
                let nodes: Vec<f64> = (0..=order).map(|i| i as f64 / order as f64).collect();
                let values = nodes.iter().map(|&t| self.eval(t).0).collect();
                Edge::Curve {
                    curve: LagrangeCurve { nodes, values },
                }
            }
            other => other,
        }
    }

    /// Gauss points along the edge parameter needed for a degree-`degree`
    /// integrand in physical coordinates.
    fn rule(&self, degree: usize) -> GaussRule {
        match self {
            Edge::Segment { .. } => GaussRule::with_exactness(degree + 1),
            Edge::Arc { .. } => GaussRule::with_exactness(degree + 1 + 2 * ARC_EXTRA_POINTS),
            Edge::Curve { curve } => {
                let q = curve.nodes.len() - 1;
                GaussRule::with_exactness((degree + 2) * q)
            }
        }
    }
}

/// Polynomial curve through equispaced interpolation nodes.
#[derive(Debug, Clone, PartialEq)]
struct LagrangeCurve {
    nodes: Vec<f64>,
    values: Vec<Point>,
}

impl LagrangeCurve {
    fn eval(&self, t: f64) -> (Point, Point) {
        let n = self.nodes.len();
        let mut p = [0.0; 2];
        let mut dp = [0.0; 2];
        for i in 0..n {
            let mut li = 1.0;
            let mut dli = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let denom = self.nodes[i] - self.nodes[j];
                // product rule: d(li * (t - x_j)/denom)
                dli = (dli * (t - self.nodes[j]) + li) / denom;
                li *= (t - self.nodes[j]) / denom;
            }
            for d in 0..2 {
                p[d] += li * self.values[i][d];
                dp[d] += dli * self.values[i][d];
            }
        }
        (p, dp)
    }
}

/// `K ∩ Ω` as a closed counter-clockwise loop, star-shaped about `star`.
#[derive(Debug, Clone)]
struct CutRegion {
    edges: Vec<Edge>,
    star: Point,
}

impl CutRegion {
    fn quadrature(&self, domain: &Domain, degree: usize) -> CellQuadrature {
        let radial = GaussRule::with_exactness(degree + 1);
        let mut volume = Vec::new();
        let mut boundary = Vec::new();
        let f = self.star;
        for edge in &self.edges {
            let rule = edge.rule(degree);
            let skip_volume = matches!(edge, Edge::Segment { a, b, .. } if *a == f || *b == f);
            for (t, wt) in rule.iter() {
                let (g, dg) = edge.eval(t);
                if !skip_volume {
                    let cross = (g[0] - f[0]) * dg[1] - (g[1] - f[1]) * dg[0];
                    if cross != 0.0 {
                        for (s, ws) in radial.iter() {
                            let p = [f[0] + s * (g[0] - f[0]), f[1] + s * (g[1] - f[1])];
                            volume.push((p, wt * ws * s * cross));
                        }
                    }
                }
                if edge.on_boundary() {
                    let len = dg[0].hypot(dg[1]);
                    if len > 0.0 {
                        boundary.push(BoundaryPoint {
                            point: g,
                            weight: wt * len,
                            normal: [dg[1] / len, -dg[0] / len],
                            tag: domain.boundary_tag(g),
                        });
                    }
                }
            }
        }
        CellQuadrature { volume, boundary }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(x0: f64, y0: f64, h: f64) -> Rect {
        Rect::new([x0, y0], [x0 + h, y0 + h])
    }

    #[test]
    fn level_set_examples() {
        let circle = Domain::cut_circle([0.5, 0.5], 0.45);
        assert!((circle.eval_level_set([0.5, 0.5]) + 0.45).abs() < 1e-15);
        let rect = Domain::cut_rectangle(1e-7);
        assert_eq!(rect.eval_level_set([0.3, 0.75 + 1e-7]), 0.0);
        let pent = Domain::cut_pentagon(1e-9);
        assert!(pent.eval_level_set([0.0, 1.0]) > 0.0);
        assert!(pent.eval_level_set([0.5, 0.5]) < 0.0);
    }

    #[test]
    fn rectangle_classification_on_four_by_four() {
        let d = Domain::cut_rectangle(1e-7);
        let mut counts = [0; 3];
        for j in 0..4 {
            for i in 0..4 {
                let c = cell(i as f64 * 0.25, j as f64 * 0.25, 0.25);
                match d.classify_cell(&c).unwrap() {
                    CellClass::Interior => counts[0] += 1,
                    CellClass::Cut => {
                        assert_eq!(j, 3);
                        counts[1] += 1
                    }
                    CellClass::Exterior => counts[2] += 1,
                }
            }
        }
        assert_eq!(counts, [12, 4, 0]);
    }

    #[test]
    fn full_box_and_single_circle_cell() {
        let d = Domain::full_box(Rect::unit());
        assert_eq!(d.classify_cell(&cell(0.5, 0.5, 0.5)).unwrap(), CellClass::Interior);
        let c = Domain::cut_circle([0.5, 0.5], 0.45);
        assert_eq!(c.classify_cell(&Rect::unit()).unwrap(), CellClass::Cut);
        let q = c.cut_quadrature(&Rect::unit(), 4).unwrap();
        assert!((q.volume_measure() - PI * 0.45 * 0.45).abs() < 1e-13);
        assert!((q.boundary_measure() - 2.0 * PI * 0.45).abs() < 1e-13);
    }

    #[test]
    fn rectangle_sliver_cell_measures() {
        let eps = 1e-7;
        let d = Domain::cut_rectangle(eps);
        let q = d.cut_quadrature(&cell(0.0, 0.75, 0.25), 4).unwrap();
        let height = (0.75 + eps) - 0.75;
        assert!((q.volume_measure() - 0.25 * height).abs() < 1e-12 * 0.25 * eps);
        // the horizontal cut line plus the piece of the box side x = 0
        let cut_line: f64 = q
            .boundary
            .iter()
            .filter(|b| b.normal[1] > 0.5)
            .map(|b| b.weight)
            .sum();
        assert!((cut_line - 0.25).abs() < 1e-15);
        assert!((q.boundary_measure() - (0.25 + height)).abs() < 1e-15);
    }

    #[test]
    fn interior_cell_rule() {
        let d = Domain::cut_rectangle(1e-7);
        let q = d.cut_quadrature(&cell(0.25, 0.25, 0.25), 4).unwrap();
        assert!((q.volume_measure() - 0.0625).abs() < 1e-15);
        assert!(q.boundary.is_empty());
    }

    #[test]
    fn pentagon_corner_sliver_is_degenerate() {
        let h = 1.0 / 16.0;
        let d = Domain::cut_pentagon(1e-9);
        // cell just above the diagonal cell containing (0, 0.25)
        let c = cell(0.0, 0.25 + h, h);
        assert_eq!(d.classify_cell(&c).unwrap(), CellClass::Cut);
        assert!(matches!(
            d.cut_quadrature(&c, 2),
            Err(GeometryError::DegenerateCut { .. })
        ));
        let diag = cell(0.0, 0.25, h);
        let q = d.cut_quadrature(&diag, 2).unwrap();
        let exact = h * h - 0.5 * (h - 1e-9) * (h - 1e-9);
        assert!((q.volume_measure() - exact).abs() < 1e-14 * h * h);
    }

    #[test]
    fn clip_segment_against_circle() {
        let d = Domain::cut_circle([0.5, 0.5], 0.25);
        let iv = d.clip_segment([0.0, 0.5], [1.0, 0.5]);
        assert_eq!(iv.len(), 1);
        assert!((iv[0].0 - 0.25).abs() < 1e-15 && (iv[0].1 - 0.75).abs() < 1e-15);
        let rect = Domain::cut_rectangle(0.01);
        assert_eq!(rect.clip_segment([0.0, 0.0], [0.0, 0.5]), vec![(0.0, 1.0)]);
        assert!(rect.clip_segment([0.0, 0.9], [1.0, 0.9]).is_empty());
    }

    #[test]
    fn mixed_tags_on_plate() {
        let d = Domain::square_with_circular_cut([0.0, 0.0], 0.52).with_bc(BcMode::MixedNeumannDirichlet);
        assert_eq!(d.boundary_tag([2.0, 0.3]), BoundaryTag::Dirichlet);
        assert_eq!(d.boundary_tag([0.3, 2.0]), BoundaryTag::Dirichlet);
        assert_eq!(d.boundary_tag([0.0, 1.0]), BoundaryTag::Neumann);
        assert_eq!(d.boundary_tag([0.3, 0.42]), BoundaryTag::Neumann);
    }
}
