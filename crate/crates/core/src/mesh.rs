//! Simplicial meshes of flat 1D and 2D domains with tagged boundary facets.
//!
//! A mesh is immutable once built. Generators ([`interval_mesh`],
//! [`rectangle_mesh`]) always produce valid meshes; arbitrary meshes can be
//! loaded from the plain-text `robinmesh` format and checked with
//! [`Mesh::validate`].

use std::collections::HashMap;
use std::fmt;
use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

/// Barycentric tolerance used by point location.
pub const LOCATE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Vertex {
    pub coords: Vec<f64>,
}

/// A segment (m = 1) or triangle (m = 2), counter-clockwise for triangles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub vertices: Vec<usize>,
}

/// A boundary point (m = 1) or boundary edge (m = 2) and the cell it bounds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryFacet {
    pub vertices: Vec<usize>,
    pub parent: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<Vertex>,
    cells: Vec<Cell>,
    boundary: Vec<BoundaryFacet>,
    boundary_vertex_flags: Vec<bool>,
}

/// An invariant violation reported by [`Mesh::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Defect {
    UnsupportedDimension(usize),
    NonFiniteCoordinate { vertex: usize },
    WrongCoordinateCount { vertex: usize, found: usize },
    WrongCellArity { cell: usize, found: usize },
    CellIndexOutOfRange { cell: usize, index: usize },
    RepeatedCellVertex { cell: usize },
    NonPositiveMeasure { cell: usize, measure: f64 },
    WrongFacetArity { facet: usize, found: usize },
    FacetIndexOutOfRange { facet: usize, index: usize },
    ParentOutOfRange { facet: usize, parent: usize },
    FacetNotFaceOfParent { facet: usize },
    DuplicateFacet { facet: usize, first: usize },
    InteriorFacet { facet: usize, cells: usize },
    UnlistedBoundaryFacet { vertices: Vec<usize> },
    OpenBoundary { vertex: usize, edges: usize },
    BoundaryPointCount { found: usize },
    NonPositiveVolume { volume: f64 },
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Defect::*;
        match self {
            UnsupportedDimension(m) => write!(f, "unsupported dimension {m}"),
            NonFiniteCoordinate { vertex } => write!(f, "non-finite coordinate at vertex {vertex}"),
            WrongCoordinateCount { vertex, found } => {
                write!(f, "vertex {vertex} has {found} coordinates")
            }
            WrongCellArity { cell, found } => write!(f, "cell {cell} has {found} vertices"),
            CellIndexOutOfRange { cell, index } => {
                write!(f, "cell {cell} references vertex {index} out of range")
            }
            RepeatedCellVertex { cell } => write!(f, "cell {cell} repeats a vertex"),
            NonPositiveMeasure { cell, measure } => {
                write!(f, "non-positive measure {measure:e} in cell {cell}")
            }
            WrongFacetArity { facet, found } => write!(f, "facet {facet} has {found} vertices"),
            FacetIndexOutOfRange { facet, index } => {
                write!(f, "facet {facet} references vertex {index} out of range")
            }
            ParentOutOfRange { facet, parent } => {
                write!(f, "facet {facet} names parent cell {parent} out of range")
            }
            FacetNotFaceOfParent { facet } => {
                write!(f, "facet {facet} is not a face of its parent cell")
            }
            DuplicateFacet { facet, first } => {
                write!(f, "duplicate facet {facet} (first listed as {first})")
            }
            InteriorFacet { facet, cells } => {
                write!(f, "facet {facet} is shared by {cells} cells")
            }
            UnlistedBoundaryFacet { vertices } => {
                write!(f, "free face {vertices:?} is missing from the boundary list")
            }
            OpenBoundary { vertex, edges } => {
                write!(f, "boundary not closed: vertex {vertex} touches {edges} boundary edges")
            }
            BoundaryPointCount { found } => {
                write!(f, "boundary not closed: {found} boundary points (expected 2)")
            }
            NonPositiveVolume { volume } => write!(f, "non-positive total volume {volume:e}"),
        }
    }
}

/// Location of a point inside a mesh: containing cell and P1 weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PointLocation {
    pub cell: usize,
    pub weights: Vec<(usize, f64)>,
}

impl PointLocation {
    /// Interpolates a nodal vector at the located point.
    pub fn interpolate(&self, values: &[f64]) -> f64 {
        self.weights.iter().map(|&(v, w)| w * values[v]).sum()
    }
}

/// Uniform mesh of `[0, L]` with `n` segments.
pub fn interval_mesh(length: f64, n: usize) -> Result<Mesh> {
    if !(length > 0.0) || !length.is_finite() {
        return Err(invalid(format!("interval length must be positive, got {length}")));
    }
    if n < 2 {
        return Err(invalid(format!("interval mesh needs at least 2 cells, got {n}")));
    }
    let vertices = (0..=n)
        .map(|i| Vertex {
            coords: vec![length * i as f64 / n as f64],
        })
        .collect();
    let cells = (0..n)
        .map(|i| Cell {
            vertices: vec![i, i + 1],
        })
        .collect();
    let boundary = vec![
        BoundaryFacet {
            vertices: vec![0],
            parent: 0,
        },
        BoundaryFacet {
            vertices: vec![n],
            parent: n - 1,
        },
    ];
    Ok(Mesh::from_parts(1, vertices, cells, boundary))
}

/// Structured triangulation of `[0, lx] × [0, ly]`.
///
/// Each grid square is split along its lower-left to upper-right diagonal.
/// Vertices are numbered row by row (`i + j·(nx+1)`), boundary edges are
/// listed counter-clockwise starting at the origin.
pub fn rectangle_mesh(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Mesh> {
    if !(lx > 0.0 && ly > 0.0) || !lx.is_finite() || !ly.is_finite() {
        return Err(invalid(format!("rectangle sides must be positive, got {lx} x {ly}")));
    }
    if nx == 0 || ny == 0 {
        return Err(invalid(format!(
            "rectangle subdivisions must be positive, got {nx} x {ny}"
        )));
    }
    let id = |i: usize, j: usize| i + j * (nx + 1);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Vertex {
                coords: vec![lx * i as f64 / nx as f64, ly * j as f64 / ny as f64],
            });
        }
    }
    // square (i, j) owns cells 2(i + j·nx) (lower) and 2(i + j·nx) + 1 (upper)
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            cells.push(Cell {
                vertices: vec![v00, v10, v11],
            });
            cells.push(Cell {
                vertices: vec![v00, v11, v01],
            });
        }
    }
    let lower = |i: usize, j: usize| 2 * (i + j * nx);
    let mut boundary = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary.push(BoundaryFacet {
            vertices: vec![id(i, 0), id(i + 1, 0)],
            parent: lower(i, 0),
        });
    }
    for j in 0..ny {
        boundary.push(BoundaryFacet {
            vertices: vec![id(nx, j), id(nx, j + 1)],
            parent: lower(nx - 1, j),
        });
    }
    for i in (0..nx).rev() {
        boundary.push(BoundaryFacet {
            vertices: vec![id(i + 1, ny), id(i, ny)],
            parent: lower(i, ny - 1) + 1,
        });
    }
    for j in (0..ny).rev() {
        boundary.push(BoundaryFacet {
            vertices: vec![id(0, j + 1), id(0, j)],
            parent: lower(0, j) + 1,
        });
    }
    Ok(Mesh::from_parts(2, vertices, cells, boundary))
}

impl Mesh {
    /// Builds a mesh from raw parts without validating it.
    pub fn from_parts(dim: usize, vertices: Vec<Vertex>, cells: Vec<Cell>, boundary: Vec<BoundaryFacet>) -> Mesh {
        let mut boundary_vertex_flags = vec![false; vertices.len()];
        for facet in &boundary {
            for &v in &facet.vertices {
                if let Some(flag) = boundary_vertex_flags.get_mut(v) {
                    *flag = true;
                }
            }
        }
        Mesh {
            dim,
            vertices,
            cells,
            boundary,
            boundary_vertex_flags,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn boundary(&self) -> &[BoundaryFacet] {
        &self.boundary
    }

    pub fn boundary_vertex_flags(&self) -> &[bool] {
        &self.boundary_vertex_flags
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn coords(&self, v: usize) -> &[f64] {
        &self.vertices[v].coords
    }

    /// Signed measure of a cell under its stored orientation.
    pub fn cell_measure(&self, c: usize) -> f64 {
        let vs = &self.cells[c].vertices;
        match self.dim {
            1 => self.coords(vs[1])[0] - self.coords(vs[0])[0],
            _ => {
                let (a, b, c) = (self.coords(vs[0]), self.coords(vs[1]), self.coords(vs[2]));
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
            }
        }
    }

    /// Measure of a boundary facet; each endpoint of a 1D mesh counts 1.
    pub fn facet_measure(&self, f: usize) -> f64 {
        let vs = &self.boundary[f].vertices;
        match self.dim {
            1 => 1.0,
            _ => {
                let (a, b) = (self.coords(vs[0]), self.coords(vs[1]));
                (b[0] - a[0]).hypot(b[1] - a[1])
            }
        }
    }

    /// `(volume, boundary measure)`.
    pub fn measures(&self) -> (f64, f64) {
        let volume = (0..self.cells.len()).map(|c| self.cell_measure(c)).sum();
        let boundary = (0..self.boundary.len()).map(|f| self.facet_measure(f)).sum();
        (volume, boundary)
    }

    /// Reports every invariant violation; an empty list means the mesh is valid.
    pub fn validate(&self) -> Vec<Defect> {
        let mut defects = Vec::new();
        let m = self.dim;
        if m != 1 && m != 2 {
            return vec![Defect::UnsupportedDimension(m)];
        }
        let nv = self.vertices.len();
        for (v, vertex) in self.vertices.iter().enumerate() {
            if vertex.coords.len() != m {
                defects.push(Defect::WrongCoordinateCount {
                    vertex: v,
                    found: vertex.coords.len(),
                });
            } else if vertex.coords.iter().any(|x| !x.is_finite()) {
                defects.push(Defect::NonFiniteCoordinate { vertex: v });
            }
        }
        if !defects.is_empty() {
            return defects;
        }

        let mut cells_ok = true;
        for (c, cell) in self.cells.iter().enumerate() {
            if cell.vertices.len() != m + 1 {
                defects.push(Defect::WrongCellArity {
                    cell: c,
                    found: cell.vertices.len(),
                });
                cells_ok = false;
                continue;
            }
            if let Some(&index) = cell.vertices.iter().find(|&&i| i >= nv) {
                defects.push(Defect::CellIndexOutOfRange { cell: c, index });
                cells_ok = false;
                continue;
            }
            let mut sorted = cell.vertices.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                defects.push(Defect::RepeatedCellVertex { cell: c });
                cells_ok = false;
                continue;
            }
            let measure = self.cell_measure(c);
            if !(measure > 0.0) {
                defects.push(Defect::NonPositiveMeasure { cell: c, measure });
            }
        }

        // face incidence over well-formed cells
        let mut incidence: HashMap<Vec<usize>, usize> = HashMap::new();
        if cells_ok {
            for cell in &self.cells {
                for face in faces(&cell.vertices) {
                    *incidence.entry(face).or_insert(0) += 1;
                }
            }
        }

        let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
        for (f, facet) in self.boundary.iter().enumerate() {
            if facet.vertices.len() != m {
                defects.push(Defect::WrongFacetArity {
                    facet: f,
                    found: facet.vertices.len(),
                });
                continue;
            }
            if let Some(&index) = facet.vertices.iter().find(|&&i| i >= nv) {
                defects.push(Defect::FacetIndexOutOfRange { facet: f, index });
                continue;
            }
            if facet.parent >= self.cells.len() {
                defects.push(Defect::ParentOutOfRange {
                    facet: f,
                    parent: facet.parent,
                });
                continue;
            }
            let key = sorted_key(&facet.vertices);
            if let Some(&first) = seen.get(&key) {
                defects.push(Defect::DuplicateFacet { facet: f, first });
                continue;
            }
            seen.insert(key.clone(), f);
            let parent = &self.cells[facet.parent].vertices;
            if !facet.vertices.iter().all(|v| parent.contains(v)) {
                defects.push(Defect::FacetNotFaceOfParent { facet: f });
                continue;
            }
            if cells_ok {
                let count = incidence.get(&key).copied().unwrap_or(0);
                if count != 1 {
                    defects.push(Defect::InteriorFacet { facet: f, cells: count });
                }
            }
        }

        if cells_ok {
            let mut free: Vec<&Vec<usize>> = incidence
                .iter()
                .filter(|(face, &count)| count == 1 && !seen.contains_key(*face))
                .map(|(face, _)| face)
                .collect();
            free.sort();
            for face in free {
                defects.push(Defect::UnlistedBoundaryFacet { vertices: face.clone() });
            }
        }

        match m {
            1 => {
                if self.boundary.len() != 2 {
                    defects.push(Defect::BoundaryPointCount {
                        found: self.boundary.len(),
                    });
                }
            }
            _ => {
                let mut touches = vec![0usize; nv];
                for facet in &self.boundary {
                    for &v in facet.vertices.iter().filter(|&&v| v < nv) {
                        touches[v] += 1;
                    }
                }
                for (v, &count) in touches.iter().enumerate() {
                    if count != 0 && count != 2 {
                        defects.push(Defect::OpenBoundary {
                            vertex: v,
                            edges: count,
                        });
                    }
                }
            }
        }

        if cells_ok {
            let (volume, _) = self.measures();
            if !(volume > 0.0) {
                defects.push(Defect::NonPositiveVolume { volume });
            }
        }
        defects
    }

    /// Fails with the list of defects if the mesh is invalid.
    pub fn ensure_valid(&self) -> Result<()> {
        let defects = self.validate();
        if defects.is_empty() {
            Ok(())
        } else {
            let list: Vec<String> = defects.iter().map(|d| d.to_string()).collect();
            Err(invalid(format!("invalid mesh: {}", list.join("; "))))
        }
    }

    /// Stable identity derived from the serialized mesh.
    pub fn hash_id(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Finds the lowest-index cell containing `point` and its P1 weights.
    pub fn locate(&self, point: &[f64]) -> Option<PointLocation> {
        if point.len() != self.dim {
            return None;
        }
        for (c, cell) in self.cells.iter().enumerate() {
            let bary = self.barycentric(c, point);
            if bary.iter().all(|&w| w >= -LOCATE_TOL) {
                return Some(PointLocation {
                    cell: c,
                    weights: cell.vertices.iter().copied().zip(bary).collect(),
                });
            }
        }
        None
    }

    fn barycentric(&self, c: usize, p: &[f64]) -> Vec<f64> {
        let vs = &self.cells[c].vertices;
        match self.dim {
            1 => {
                let (a, b) = (self.coords(vs[0])[0], self.coords(vs[1])[0]);
                let s = (p[0] - a) / (b - a);
                vec![1.0 - s, s]
            }
            _ => {
                let (a, b, q) = (self.coords(vs[0]), self.coords(vs[1]), self.coords(vs[2]));
                let det = (b[0] - a[0]) * (q[1] - a[1]) - (q[0] - a[0]) * (b[1] - a[1]);
                let l1 = ((p[0] - a[0]) * (q[1] - a[1]) - (q[0] - a[0]) * (p[1] - a[1])) / det;
                let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
                vec![1.0 - l1 - l2, l1, l2]
            }
        }
    }

    /// Serializes to the `robinmesh 1` text format.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "robinmesh 1");
        let _ = writeln!(s, "dim {}", self.dim);
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        for v in &self.vertices {
            let line: Vec<String> = v.coords.iter().map(|x| format!("{x:.16e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        let _ = writeln!(s, "cells {}", self.cells.len());
        for c in &self.cells {
            let line: Vec<String> = c.vertices.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        let _ = writeln!(s, "boundary {}", self.boundary.len());
        for f in &self.boundary {
            let line: Vec<String> = f.vertices.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(s, "{} {}", line.join(" "), f.parent);
        }
        s
    }

    /// Parses the `robinmesh 1` text format without validating invariants.
    pub fn parse(text: &str) -> Result<Mesh> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let last_line = text.lines().count().max(1);

        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(last_line, format!("unexpected end of file: missing {what}")))
        };

        let (ln, header) = next("header")?;
        if header.split_whitespace().collect::<Vec<_>>() != ["robinmesh", "1"] {
            return Err(Error::parse(ln, format!("expected `robinmesh 1`, found `{header}`")));
        }
        let dim = section_count(next("dim line")?, "dim")?;
        if dim != 1 && dim != 2 {
            return Err(Error::parse(ln + 1, format!("unsupported dimension {dim}")));
        }

        let nv = section_count(next("vertices section")?, "vertices")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = next("vertex line")?;
            let coords = parse_fields::<f64>(ln, l, dim, "coordinate")?;
            vertices.push(Vertex { coords });
        }

        let nc = section_count(next("cells section")?, "cells")?;
        let mut cells = Vec::with_capacity(nc);
        for _ in 0..nc {
            let (ln, l) = next("cell line")?;
            cells.push(Cell {
                vertices: parse_fields::<usize>(ln, l, dim + 1, "vertex index")?,
            });
        }

        let nf = section_count(next("boundary section")?, "boundary")?;
        let mut boundary = Vec::with_capacity(nf);
        for _ in 0..nf {
            let (ln, l) = next("boundary line")?;
            let mut ids = parse_fields::<usize>(ln, l, dim + 1, "index")?;
            let parent = ids.pop().expect("arity checked");
            boundary.push(BoundaryFacet { vertices: ids, parent });
        }
        if let Some((ln, l)) = lines.next() {
            return Err(Error::parse(ln, format!("trailing content `{l}`")));
        }
        Ok(Mesh::from_parts(dim, vertices, cells, boundary))
    }
}

/// Writes a mesh to `path` in the `robinmesh 1` format.
pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(mesh.to_text().as_bytes())?;
    Ok(())
}

/// Reads and validates a mesh file.
pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let text = crate::error::read_text(path)?;
    let mesh = Mesh::parse(&text).map_err(|e| e.with_path(path))?;
    mesh.ensure_valid()?;
    Ok(mesh)
}

fn sorted_key(ids: &[usize]) -> Vec<usize> {
    let mut key = ids.to_vec();
    key.sort_unstable();
    key
}

/// Sorted faces (vertex subsets of size m) of a simplex.
fn faces(vertices: &[usize]) -> Vec<Vec<usize>> {
    (0..vertices.len())
        .map(|skip| {
            let face: Vec<usize> = vertices
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, &v)| v)
                .collect();
            sorted_key(&face)
        })
        .collect()
}

fn section_count((ln, line): (usize, &str), keyword: &str) -> Result<usize> {
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(n), None) if k == keyword => n
            .parse()
            .map_err(|_| Error::parse(ln, format!("invalid {keyword} count `{n}`"))),
        _ => Err(Error::parse(
            ln,
            format!("expected `{keyword} <count>`, found `{line}`"),
        )),
    }
}

fn parse_fields<T: std::str::FromStr>(ln: usize, line: &str, count: usize, what: &str) -> Result<Vec<T>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != count {
        return Err(Error::parse(
            ln,
            format!("expected {count} fields, found {}", fields.len()),
        ));
    }
    fields
        .iter()
        .map(|f| f.parse().map_err(|_| Error::parse(ln, format!("invalid {what} `{f}`"))))
        .collect()
}
