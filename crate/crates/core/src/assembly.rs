//! P1 finite-element assembly of the Robin quadratic form.
//!
//! `K` carries `∫ ∇u·∇v`, `M` carries `∫ uv` (consistent, not lumped) and
//! `B` carries `∫_{∂M} uv dS`. In 1D each endpoint is an atom of unit
//! boundary measure. The Robin operator is `A = K + αB`.

use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::mesh::Mesh;

/// Symmetric sparse matrix in CSR form with both triangles stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SymSparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymSparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed in
    /// input order, so the result is independent of anything but that order.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= dim || c >= dim) {
            return Err(invalid(format!("entry ({r}, {c}) outside a {dim}x{dim} matrix")));
        }
        // stable: equal (row, col) keep their input order
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SymSparseMatrix {
            dim,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "dimension mismatch in matrix-vector product");
        (0..self.dim)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        (0..self.dim)
            .map(|i| {
                let (cols, vals) = self.row(i);
                let row: f64 = cols.iter().zip(vals).map(|(&j, &v)| v * y[j]).sum();
                x[i] * row
            })
            .sum()
    }

    pub fn quadratic(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    /// `self + s·other` over the union of both sparsity patterns.
    pub fn add_scaled(&self, other: &SymSparseMatrix, s: f64) -> Result<SymSparseMatrix> {
        if self.dim != other.dim {
            return Err(invalid(format!("dimension mismatch: {} vs {}", self.dim, other.dim)));
        }
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            triplets.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, v)));
            let (cols, vals) = other.row(i);
            triplets.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, s * v)));
        }
        SymSparseMatrix::from_triplets(self.dim, triplets)
    }

    pub fn scaled(&self, s: f64) -> SymSparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |Aᵢⱼ − Aⱼᵢ|` over stored entries (missing mirrors count as zero).
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// First column index with a stored entry in each row (the row envelope).
    pub(crate) fn row_starts(&self) -> Vec<usize> {
        (0..self.dim)
            .map(|i| self.row(i).0.first().copied().unwrap_or(i).min(i))
            .collect()
    }

    /// Text triplet export: header `symsparse dim nnz`, then `row col value`.
    pub fn to_triplet_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "symsparse {} {}", self.dim, self.nnz());
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let _ = writeln!(s, "{i} {j} {v:.16e}");
            }
        }
        s
    }

    pub fn from_triplet_text(text: &str) -> Result<SymSparseMatrix> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (ln, header) = lines.next().ok_or_else(|| Error::parse(1, "empty matrix file"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (dim, nnz) = match parts.as_slice() {
            ["symsparse", d, n] => (
                d.parse::<usize>().map_err(|_| Error::parse(ln, "invalid dim"))?,
                n.parse::<usize>().map_err(|_| Error::parse(ln, "invalid nnz"))?,
            ),
            _ => return Err(Error::parse(ln, "expected `symsparse dim nnz`")),
        };
        let mut triplets = Vec::with_capacity(nnz);
        for (ln, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::parse(ln, "expected `row col value`"));
            }
            let r = parts[0].parse().map_err(|_| Error::parse(ln, "invalid row"))?;
            let c = parts[1].parse().map_err(|_| Error::parse(ln, "invalid col"))?;
            let v = parts[2].parse().map_err(|_| Error::parse(ln, "invalid value"))?;
            triplets.push((r, c, v));
        }
        if triplets.len() != nnz {
            return Err(Error::parse(
                0,
                format!("expected {nnz} entries, found {}", triplets.len()),
            ));
        }
        SymSparseMatrix::from_triplets(dim, triplets)
    }
}

/// The discrete Robin form: stiffness, mass, boundary mass and `α`.
#[derive(Clone, Debug)]
pub struct RobinForm {
    pub stiffness: SymSparseMatrix,
    pub mass: SymSparseMatrix,
    pub boundary: SymSparseMatrix,
    pub alpha: f64,
    /// Identity of the mesh the matrices were assembled on (empty if unknown).
    pub mesh_ref: String,
}

impl RobinForm {
    /// Assembles all three matrices for `mesh`.
    pub fn assemble(mesh: &Mesh, alpha: f64) -> Result<RobinForm> {
        if !alpha.is_finite() {
            return Err(invalid(format!("Robin parameter must be finite, got {alpha}")));
        }
        Ok(RobinForm {
            stiffness: stiffness(mesh)?,
            mass: mass(mesh)?,
            boundary: boundary_mass(mesh)?,
            alpha,
            mesh_ref: mesh.hash_id(),
        })
    }

    pub fn from_parts(
        stiffness: SymSparseMatrix,
        mass: SymSparseMatrix,
        boundary: SymSparseMatrix,
        alpha: f64,
    ) -> Result<RobinForm> {
        let n = stiffness.dim();
        if mass.dim() != n || boundary.dim() != n {
            return Err(invalid(format!(
                "dimension mismatch: K {n}, M {}, B {}",
                mass.dim(),
                boundary.dim()
            )));
        }
        Ok(RobinForm {
            stiffness,
            mass,
            boundary,
            alpha,
            mesh_ref: String::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.stiffness.dim()
    }

    pub fn with_alpha(&self, alpha: f64) -> RobinForm {
        RobinForm { alpha, ..self.clone() }
    }

    /// `A = K + αB`.
    pub fn robin_matrix(&self) -> Result<SymSparseMatrix> {
        robin_matrix(self)
    }

    pub fn rayleigh(&self, u: &[f64]) -> Result<f64> {
        rayleigh(u, self)
    }
}

fn check_cell(mesh: &Mesh, c: usize) -> Result<f64> {
    let measure = mesh.cell_measure(c);
    if !(measure > 0.0) || !measure.is_finite() {
        return Err(Error::Assembly(format!("degenerate cell {c} with measure {measure:e}")));
    }
    Ok(measure)
}

/// Gradient coefficients of the three P1 hat functions on a triangle,
/// unscaled: `∇φᵢ = (b[i], c[i]) / (2·area)`.
fn triangle_gradients(mesh: &Mesh, c: usize) -> ([f64; 3], [f64; 3]) {
    let vs = &mesh.cells()[c].vertices;
    let p: Vec<&[f64]> = vs.iter().map(|&v| mesh.coords(v)).collect();
    let mut b = [0.0; 3];
    let mut cc = [0.0; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        b[i] = p[j][1] - p[k][1];
        cc[i] = p[k][0] - p[j][0];
    }
    (b, cc)
}

/// Stiffness matrix `Kᵢⱼ = ∫ ∇φᵢ·∇φⱼ`.
pub fn stiffness(mesh: &Mesh) -> Result<SymSparseMatrix> {
    let mut triplets = Vec::with_capacity(mesh.cells().len() * (mesh.dim() + 1).pow(2));
    for (c, cell) in mesh.cells().iter().enumerate() {
        let measure = check_cell(mesh, c)?;
        let vs = &cell.vertices;
        match mesh.dim() {
            1 => {
                let k = 1.0 / measure;
                for (a, &i) in vs.iter().enumerate() {
                    for (b, &j) in vs.iter().enumerate() {
                        triplets.push((i, j, if a == b { k } else { -k }));
                    }
                }
            }
            _ => {
                let (b, cc) = triangle_gradients(mesh, c);
                let scale = 1.0 / (4.0 * measure);
                for a in 0..3 {
                    for d in 0..3 {
                        triplets.push((vs[a], vs[d], scale * (b[a] * b[d] + cc[a] * cc[d])));
                    }
                }
            }
        }
    }
    SymSparseMatrix::from_triplets(mesh.num_vertices(), triplets)
}

/// Consistent mass matrix `Mᵢⱼ = ∫ φᵢφⱼ`.
pub fn mass(mesh: &Mesh) -> Result<SymSparseMatrix> {
    let mut triplets = Vec::with_capacity(mesh.cells().len() * (mesh.dim() + 1).pow(2));
    for (c, cell) in mesh.cells().iter().enumerate() {
        let measure = check_cell(mesh, c)?;
        // h/6 [[2,1],[1,2]] in 1D, area/12 [[2,1,1],...] in 2D
        let denom = match mesh.dim() {
            1 => 6.0,
            _ => 12.0,
        };
        for (a, &i) in cell.vertices.iter().enumerate() {
            for (b, &j) in cell.vertices.iter().enumerate() {
                let w = if a == b { 2.0 } else { 1.0 };
                triplets.push((i, j, w * measure / denom));
            }
        }
    }
    SymSparseMatrix::from_triplets(mesh.num_vertices(), triplets)
}

/// Boundary mass `Bᵢⱼ = ∫_{∂M} φᵢφⱼ dS`.
pub fn boundary_mass(mesh: &Mesh) -> Result<SymSparseMatrix> {
    if mesh.boundary().is_empty() {
        return Err(Error::Assembly("mesh has no boundary facets".into()));
    }
    let mut triplets = Vec::with_capacity(mesh.boundary().len() * mesh.dim().pow(2));
    for (f, facet) in mesh.boundary().iter().enumerate() {
        match mesh.dim() {
            1 => triplets.push((facet.vertices[0], facet.vertices[0], 1.0)),
            _ => {
                let h = mesh.facet_measure(f);
                if !(h > 0.0) {
                    return Err(Error::Assembly(format!("degenerate boundary edge {f}")));
                }
                let (i, j) = (facet.vertices[0], facet.vertices[1]);
                triplets.push((i, i, h / 3.0));
                triplets.push((i, j, h / 6.0));
                triplets.push((j, i, h / 6.0));
                triplets.push((j, j, h / 3.0));
            }
        }
    }
    SymSparseMatrix::from_triplets(mesh.num_vertices(), triplets)
}

/// `A = K + αB`; indefinite for `α < 0`, which is expected.
pub fn robin_matrix(form: &RobinForm) -> Result<SymSparseMatrix> {
    if form.alpha == 0.0 {
        if form.stiffness.dim() != form.boundary.dim() {
            return Err(invalid("dimension mismatch between K and B"));
        }
        return Ok(form.stiffness.clone());
    }
    form.stiffness.add_scaled(&form.boundary, form.alpha)
}

/// Rayleigh quotient `(uᵀKu + α uᵀBu) / uᵀMu`.
pub fn rayleigh(u: &[f64], form: &RobinForm) -> Result<f64> {
    if u.len() != form.dim() {
        return Err(invalid(format!("vector of length {} for dim {}", u.len(), form.dim())));
    }
    let denom = form.mass.quadratic(u);
    if !(denom > 0.0) {
        return Err(invalid("Rayleigh quotient of the zero vector"));
    }
    Ok((form.stiffness.quadratic(u) + form.alpha * form.boundary.quadratic(u)) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{interval_mesh, rectangle_mesh};

    fn dense(a: &SymSparseMatrix) -> Vec<Vec<f64>> {
        (0..a.dim())
            .map(|i| (0..a.dim()).map(|j| a.get(i, j)).collect())
            .collect()
    }

    #[test]
    fn interval_stiffness_closed_form() {
        let k = stiffness(&interval_mesh(1.0, 2).unwrap()).unwrap();
        let expected = [[2.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 2.0]];
        for (row, exp) in dense(&k).iter().zip(expected) {
            for (v, e) in row.iter().zip(exp) {
                assert!((v - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn interval_mass_closed_form() {
        let m = mass(&interval_mesh(1.0, 2).unwrap()).unwrap();
        let s = 0.5 / 6.0;
        let expected = [[2.0 * s, s, 0.0], [s, 4.0 * s, s], [0.0, s, 2.0 * s]];
        for (row, exp) in dense(&m).iter().zip(expected) {
            for (v, e) in row.iter().zip(exp) {
                assert!((v - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constants_in_stiffness_kernel() {
        for mesh in [interval_mesh(2.5, 17).unwrap(), rectangle_mesh(2.0, 3.0, 5, 7).unwrap()] {
            let k = stiffness(&mesh).unwrap();
            let ones = vec![1.0; mesh.num_vertices()];
            assert!(k.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn mass_partition_of_unity() {
        let mesh = rectangle_mesh(2.0, 3.0, 4, 6).unwrap();
        let m = mass(&mesh).unwrap();
        let ones = vec![1.0; mesh.num_vertices()];
        assert!((m.quadratic(&ones) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn element_mass_positive_definite() {
        // eigenvalues of [[2,1,1],[1,2,1],[1,1,2]] are 4, 1, 1; of [[2,1],[1,2]] are 3, 1
        let mesh = rectangle_mesh(1.0, 1.0, 1, 1).unwrap();
        let m = mass(&mesh).unwrap();
        for x in [[1.0, -1.0, 0.0, 0.0], [0.0, 1.0, 0.0, -1.0], [1.0, 1.0, 1.0, 1.0]] {
            assert!(m.quadratic(&x) > 0.0);
        }
    }

    #[test]
    fn interval_boundary_atoms() {
        let mesh = interval_mesh(1.0, 4).unwrap();
        let b = boundary_mass(&mesh).unwrap();
        assert_eq!(b.nnz(), 2);
        assert_eq!(b.get(0, 0), 1.0);
        assert_eq!(b.get(4, 4), 1.0);
    }

    #[test]
    fn square_boundary_mass() {
        let mesh = rectangle_mesh(1.0, 1.0, 2, 2).unwrap();
        let b = boundary_mass(&mesh).unwrap();
        let ones = vec![1.0; mesh.num_vertices()];
        assert!((b.quadratic(&ones) - 4.0).abs() < 1e-12);
        // center vertex is interior
        let (cols, _) = b.row(4);
        assert!(cols.is_empty());
        for (v, &flag) in mesh.boundary_vertex_flags().iter().enumerate() {
            assert_eq!(!b.row(v).0.is_empty(), flag);
        }
    }

    #[test]
    fn empty_boundary_is_an_error() {
        let mesh = interval_mesh(1.0, 3).unwrap();
        let closed = Mesh::from_parts(1, mesh.vertices().to_vec(), mesh.cells().to_vec(), vec![]);
        assert!(matches!(boundary_mass(&closed), Err(Error::Assembly(_))));
    }

    #[test]
    fn degenerate_cell_is_an_error() {
        let mesh = interval_mesh(1.0, 3).unwrap();
        let mut vertices = mesh.vertices().to_vec();
        vertices[1].coords[0] = 0.0;
        let broken = Mesh::from_parts(1, vertices, mesh.cells().to_vec(), mesh.boundary().to_vec());
        assert!(matches!(stiffness(&broken), Err(Error::Assembly(_))));
        assert!(matches!(mass(&broken), Err(Error::Assembly(_))));
    }

    #[test]
    fn robin_matrix_cases() {
        let mesh = interval_mesh(1.0, 10).unwrap();
        let form = RobinForm::assemble(&mesh, 0.0).unwrap();
        assert_eq!(form.robin_matrix().unwrap(), form.stiffness);
        let a = form.with_alpha(-1.0).robin_matrix().unwrap();
        let ones = vec![1.0; mesh.num_vertices()];
        assert!((a.quadratic(&ones) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn robin_matrix_dimension_mismatch() {
        let small = RobinForm::assemble(&interval_mesh(1.0, 3).unwrap(), 1.0).unwrap();
        let big = RobinForm::assemble(&interval_mesh(1.0, 4).unwrap(), 1.0).unwrap();
        assert!(RobinForm::from_parts(small.stiffness.clone(), big.mass, small.boundary.clone(), 1.0).is_err());
        let bad = RobinForm {
            boundary: big.boundary,
            ..small
        };
        assert!(robin_matrix(&bad).is_err());
    }

    #[test]
    fn rayleigh_of_constants() {
        let mesh = rectangle_mesh(2.0, 1.0, 4, 3).unwrap();
        let ones = vec![1.0; mesh.num_vertices()];
        let form = RobinForm::assemble(&mesh, 0.0).unwrap();
        assert!(form.rayleigh(&ones).unwrap().abs() < 1e-12);
        let form = form.with_alpha(-0.5);
        // α |∂M| / vol(M) = -0.5 * 6 / 2
        assert!((form.rayleigh(&ones).unwrap() + 1.5).abs() < 1e-12);
        assert!(form.rayleigh(&vec![0.0; mesh.num_vertices()]).is_err());
    }

    #[test]
    fn triplet_text_round_trip() {
        let k = stiffness(&rectangle_mesh(1.0, 1.0, 3, 2).unwrap()).unwrap();
        let text = k.to_triplet_text();
        assert!(text.starts_with(&format!("symsparse {} {}", k.dim(), k.nnz())));
        assert_eq!(SymSparseMatrix::from_triplet_text(&text).unwrap(), k);
    }
}
