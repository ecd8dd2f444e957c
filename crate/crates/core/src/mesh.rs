//! Cartesian background mesh, cell classification, ghost facets and patches.

use std::collections::VecDeque;
use std::io::Write;

use thiserror::Error;

use crate::geometry::{BoundaryTag, CellClass, CellQuadrature, Domain, GeometryError, Point, Rect};

/// Largest admissible number of facet crossings from a cut cell to the interior region.
pub const MAX_ASSUMPTION1_STEPS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("cut cell {cell} violates the mesh assumptions: {reason}")]
    AssumptionViolation { cell: usize, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Uniform grid over the fictitious box.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundMesh {
    pub bounding_box: Rect,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    facets: Vec<Facet>,
}

/// Facet with normal along `axis`; `minus` is the cell on the left (or below).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Facet {
    pub axis: usize,
    pub minus: Option<usize>,
    pub plus: Option<usize>,
    pub a: Point,
    pub b: Point,
}

impl Facet {
    pub fn is_interior(&self) -> bool {
        self.minus.is_some() && self.plus.is_some()
    }

    pub fn normal(&self) -> Point {
        if self.axis == 0 {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        }
    }

    pub fn length(&self) -> f64 {
        (self.b[0] - self.a[0]).hypot(self.b[1] - self.a[1])
    }

    pub fn midpoint(&self) -> Point {
        [0.5 * (self.a[0] + self.b[0]), 0.5 * (self.a[1] + self.b[1])]
    }
}

pub fn build_mesh(bounding_box: Rect, nx: usize, ny: usize) -> BackgroundMesh {
    assert!(nx >= 1 && ny >= 1, "mesh needs at least one cell per axis");
    let hx = bounding_box.width() / nx as f64;
    let hy = bounding_box.height() / ny as f64;
    let x = |i: usize| bounding_box.min[0] + i as f64 * hx;
    let y = |j: usize| bounding_box.min[1] + j as f64 * hy;
    let mut facets = Vec::with_capacity((nx + 1) * ny + nx * (ny + 1));
    for j in 0..ny {
        for i in 0..=nx {
            facets.push(Facet {
                axis: 0,
                minus: (i > 0).then(|| j * nx + i - 1),
                plus: (i < nx).then(|| j * nx + i),
                a: [x(i), y(j)],
                b: [x(i), y(j + 1)],
            });
        }
    }
    for j in 0..=ny {
        for i in 0..nx {
            facets.push(Facet {
                axis: 1,
                minus: (j > 0).then(|| (j - 1) * nx + i),
                plus: (j < ny).then(|| j * nx + i),
                a: [x(i), y(j)],
                b: [x(i + 1), y(j)],
            });
        }
    }
    BackgroundMesh {
        bounding_box,
        nx,
        ny,
        hx,
        hy,
        facets,
    }
}

impl BackgroundMesh {
    /// Mesh size `max(hx, hy)`.
    pub fn h(&self) -> f64 {
        self.hx.max(self.hy)
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    pub fn cell_rect(&self, c: usize) -> Rect {
        let (i, j) = self.cell_ij(c);
        let min = [
            self.bounding_box.min[0] + i as f64 * self.hx,
            self.bounding_box.min[1] + j as f64 * self.hy,
        ];
        Rect::new(min, [min[0] + self.hx, min[1] + self.hy])
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn facet(&self, f: usize) -> &Facet {
        &self.facets[f]
    }

    /// Facets of a cell in the order left, right, bottom, top.
    pub fn cell_facets(&self, c: usize) -> [usize; 4] {
        let (i, j) = self.cell_ij(c);
        let nv = (self.nx + 1) * self.ny;
        [
            j * (self.nx + 1) + i,
            j * (self.nx + 1) + i + 1,
            nv + j * self.nx + i,
            nv + (j + 1) * self.nx + i,
        ]
    }

    pub fn num_interior_facets(&self) -> usize {
        self.facets.iter().filter(|f| f.is_interior()).count()
    }

    /// Facet neighbours of a cell.
    pub fn neighbours(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        self.cell_facets(c).into_iter().filter_map(move |f| {
            let facet = &self.facets[f];
            match (facet.minus, facet.plus) {
                (Some(a), Some(b)) => Some(if a == c { b } else { a }),
                _ => None,
            }
        })
    }
}

/// Cells and facets sorted by their role relative to the cut boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshClassification {
    /// Per background cell; slivers are reported as `Exterior`.
    pub cell_class: Vec<CellClass>,
    pub interior_cells: Vec<usize>,
    pub cut_cells: Vec<usize>,
    /// Cut cells meeting the Neumann part of the boundary.
    pub cut_neumann: Vec<usize>,
    /// Cut cells meeting the Dirichlet part of the boundary.
    pub cut_dirichlet: Vec<usize>,
    pub active_cells: Vec<usize>,
    /// Interior facets with at least one cut neighbour.
    pub ghost_facets: Vec<usize>,
    /// Interior facets between two interior cells.
    pub interior_facets_inner: Vec<usize>,
    /// Facets touching at least one active cell.
    pub active_facets: Vec<usize>,
    /// Facets on the box boundary whose cell is interior; they are part of Γ.
    pub fitted_boundary_facets: Vec<usize>,
    /// Largest number of facet crossings from a cut cell to an interior cell.
    pub assumption1_steps: usize,
}

impl MeshClassification {
    pub fn is_active(&self, c: usize) -> bool {
        self.cell_class[c] != CellClass::Exterior
    }

    pub fn is_cut(&self, c: usize) -> bool {
        self.cell_class[c] == CellClass::Cut
    }

    /// Cut quadrature for every active cell, indexed by background cell.
    pub fn quadratures(
        &self,
        mesh: &BackgroundMesh,
        domain: &Domain,
        degree: usize,
    ) -> Result<Vec<Option<CellQuadrature>>, GeometryError> {
        let mut out = vec![None; mesh.num_cells()];
        for &c in &self.active_cells {
            out[c] = Some(domain.cut_quadrature(&mesh.cell_rect(c), degree)?);
        }
        Ok(out)
    }
}

pub fn classify_mesh(mesh: &BackgroundMesh, domain: &Domain) -> Result<MeshClassification, MeshError> {
    let n = mesh.num_cells();
    let mut cell_class = Vec::with_capacity(n);
    let mut cut_neumann = Vec::new();
    let mut cut_dirichlet = Vec::new();
    for c in 0..n {
        let rect = mesh.cell_rect(c);
        let class = match domain.classify_cell(&rect)? {
            CellClass::Cut => match domain.cut_quadrature(&rect, 1) {
                Ok(q) => {
                    if q.boundary.iter().any(|b| b.tag == BoundaryTag::Neumann) {
                        cut_neumann.push(c);
                    }
                    if q.boundary.iter().any(|b| b.tag == BoundaryTag::Dirichlet) {
                        cut_dirichlet.push(c);
                    }
                    CellClass::Cut
                }
                Err(GeometryError::DegenerateCut { .. }) => CellClass::Exterior,
                Err(e) => return Err(e.into()),
            },
            other => other,
        };
        cell_class.push(class);
    }
    let pick = |k: CellClass| (0..n).filter(|&c| cell_class[c] == k).collect::<Vec<_>>();
    let interior_cells = pick(CellClass::Interior);
    let cut_cells = pick(CellClass::Cut);
    let active_cells: Vec<usize> = (0..n).filter(|&c| cell_class[c] != CellClass::Exterior).collect();

    let mut ghost_facets = Vec::new();
    let mut interior_facets_inner = Vec::new();
    let mut active_facets = Vec::new();
    let mut fitted_boundary_facets = Vec::new();
    for (f, facet) in mesh.facets().iter().enumerate() {
        let class = |c: Option<usize>| c.map(|c| cell_class[c]);
        let (m, p) = (class(facet.minus), class(facet.plus));
        let active = |k: Option<CellClass>| matches!(k, Some(CellClass::Interior | CellClass::Cut));
        if active(m) || active(p) {
            active_facets.push(f);
        }
        if facet.is_interior() {
            if m == Some(CellClass::Cut) || p == Some(CellClass::Cut) {
                // both neighbours are active: a cut cell next to an exterior one
                // shares no ghost facet with it
                if active(m) && active(p) {
                    ghost_facets.push(f);
                }
            } else if m == Some(CellClass::Interior) && p == Some(CellClass::Interior) {
                interior_facets_inner.push(f);
            }
        } else if m == Some(CellClass::Interior) || p == Some(CellClass::Interior) {
            fitted_boundary_facets.push(f);
        }
    }

    // Assumption 1: breadth-first distance from the interior region
    let mut dist = vec![usize::MAX; n];
    let mut queue: VecDeque<usize> = interior_cells.iter().copied().collect();
    for &c in &interior_cells {
        dist[c] = 0;
    }
    while let Some(c) = queue.pop_front() {
        for nb in mesh.neighbours(c) {
            if cell_class[nb] != CellClass::Exterior && dist[nb] == usize::MAX {
                dist[nb] = dist[c] + 1;
                queue.push_back(nb);
            }
        }
    }
    let mut assumption1_steps = 0;
    for &c in &cut_cells {
        if dist[c] > MAX_ASSUMPTION1_STEPS {
            return Err(MeshError::AssumptionViolation {
                cell: c,
                reason: format!("no interior cell within {MAX_ASSUMPTION1_STEPS} facet crossings"),
            });
        }
        assumption1_steps = assumption1_steps.max(dist[c]);
    }

    Ok(MeshClassification {
        cell_class,
        interior_cells,
        cut_cells,
        cut_neumann,
        cut_dirichlet,
        active_cells,
        ghost_facets,
        interior_facets_inner,
        active_facets,
        fitted_boundary_facets,
        assumption1_steps,
    })
}

/// Group of cells around one interior anchor covering some cut cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Sorted cell indices, anchor included.
    pub cells: Vec<usize>,
    pub anchor: usize,
    /// Bounding box of the patch, the frame for patch polynomials.
    pub frame: Rect,
    /// Facets shared by two cells of the patch.
    pub internal_facets: Vec<usize>,
}

/// Greedy aggregation of cut cells around nearby interior cells.
///
/// Cut cells are scanned in index order. Each one is attached to the closest
/// interior cell of its 3×3 block (facet neighbours first, then lowest index);
/// cut cells sharing an anchor form one patch. A cut cell whose only interior
/// neighbours are diagonal joins the patch of a facet-adjacent cut cell whose
/// anchor also lies in its 3×3 block, so patches stay facet-connected.
pub fn build_patches(mesh: &BackgroundMesh, cls: &MeshClassification) -> Result<Vec<Patch>, MeshError> {
    let mut anchor_of: Vec<Option<usize>> = vec![None; mesh.num_cells()];
    let mut pending = Vec::new();
    for &c in &cls.cut_cells {
        let facet_anchor = mesh
            .neighbours(c)
            .filter(|&nb| cls.cell_class[nb] == CellClass::Interior)
            .min();
        match facet_anchor {
            Some(a) => anchor_of[c] = Some(a),
            None => pending.push(c),
        }
    }
    // cells reachable only diagonally, resolved in sweeps until stable
    loop {
        let before = pending.len();
        pending.retain(|&c| {
            let joined = mesh
                .neighbours(c)
                .filter_map(|nb| anchor_of[nb].filter(|_| cls.is_cut(nb)))
                .filter(|&a| in_block(mesh, c, a))
                .min();
            match joined {
                Some(a) => {
                    anchor_of[c] = Some(a);
                    false
                }
                None => true,
            }
        });
        if pending.is_empty() || pending.len() == before {
            break;
        }
    }
    if let Some(&c) = pending.first() {
        let has_block_anchor = block(mesh, c).any(|nb| cls.cell_class[nb] == CellClass::Interior);
        let reason = if has_block_anchor {
            "interior cells of its 3x3 block are reachable only across a corner"
        } else {
            "no interior cell in its 3x3 block"
        };
        return Err(MeshError::AssumptionViolation {
            cell: c,
            reason: reason.to_string(),
        });
    }

    let mut anchors: Vec<usize> = cls.cut_cells.iter().filter_map(|&c| anchor_of[c]).collect();
    anchors.sort_unstable();
    anchors.dedup();
    let patches = anchors
        .into_iter()
        .map(|anchor| {
            let mut cells: Vec<usize> = cls
                .cut_cells
                .iter()
                .copied()
                .filter(|&c| anchor_of[c] == Some(anchor))
                .collect();
            cells.push(anchor);
            cells.sort_unstable();
            let mut frame = mesh.cell_rect(anchor);
            for &c in &cells {
                let r = mesh.cell_rect(c);
                frame.min = [frame.min[0].min(r.min[0]), frame.min[1].min(r.min[1])];
                frame.max = [frame.max[0].max(r.max[0]), frame.max[1].max(r.max[1])];
            }
            let mut internal_facets: Vec<usize> = cells
                .iter()
                .flat_map(|&c| mesh.cell_facets(c))
                .filter(|&f| {
                    let facet = mesh.facet(f);
                    match (facet.minus, facet.plus) {
                        (Some(a), Some(b)) => cells.binary_search(&a).is_ok() && cells.binary_search(&b).is_ok(),
                        _ => false,
                    }
                })
                .collect();
            internal_facets.sort_unstable();
            internal_facets.dedup();
            Patch {
                cells,
                anchor,
                frame,
                internal_facets,
            }
        })
        .collect();
    Ok(patches)
}

fn block(mesh: &BackgroundMesh, c: usize) -> impl Iterator<Item = usize> + '_ {
    let (i, j) = mesh.cell_ij(c);
    let (i, j) = (i as isize, j as isize);
    (-1..=1).flat_map(move |dj| (-1..=1).map(move |di| (i + di, j + dj))).filter_map(move |(a, b)| {
        (a >= 0 && b >= 0 && (a as usize) < mesh.nx && (b as usize) < mesh.ny)
            .then(|| mesh.cell_index(a as usize, b as usize))
    })
}

fn in_block(mesh: &BackgroundMesh, c: usize, other: usize) -> bool {
    let (i, j) = mesh.cell_ij(c);
    let (a, b) = mesh.cell_ij(other);
    i.abs_diff(a) <= 1 && j.abs_diff(b) <= 1
}

/// Writes `cell,i,j,class,patch` rows; `patch` is empty for cells outside every patch.
pub fn write_classification_csv<W: Write>(
    out: W,
    mesh: &BackgroundMesh,
    cls: &MeshClassification,
    patches: &[Patch],
) -> csv::Result<()> {
    let mut patch_of = vec![None; mesh.num_cells()];
    for (p, patch) in patches.iter().enumerate() {
        for &c in &patch.cells {
            patch_of[c] = Some(p);
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell", "i", "j", "class", "patch"])?;
    for c in 0..mesh.num_cells() {
        let (i, j) = mesh.cell_ij(c);
        let class = match cls.cell_class[c] {
            CellClass::Interior => "interior",
            CellClass::Cut => "cut",
            CellClass::Exterior => "exterior",
        };
        let patch = patch_of[c].map(|p: usize| p.to_string()).unwrap_or_default();
        w.write_record([c.to_string(), i.to_string(), j.to_string(), class.to_string(), patch])?;
    }
    w.flush()?;
    Ok(())
}
