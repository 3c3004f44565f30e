use crate::error::{Error, Result};

/// Uniform Cartesian mesh of segments (1D) or quadrilaterals (2D).
///
/// Vertices and cells are numbered lexicographically, first axis fastest.
/// Quadrilateral vertices are listed counterclockwise starting from the
/// lower-left corner.
#[derive(Clone, Debug, PartialEq)]
pub struct CartesianMesh {
    dim: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    cells: [usize; 2],
    cell_vertices: Vec<usize>,
}

impl CartesianMesh {
    pub fn new(domain: &[(f64, f64)], cells: &[usize]) -> Result<Self> {
        let dim = domain.len();
        if !(dim == 1 || dim == 2) || cells.len() != dim {
            return Err(Error::Argument(format!(
                "Cartesian meshes are 1D or 2D with one cell count per axis (got {} bounds, {} counts)",
                domain.len(),
                cells.len()
            )));
        }
        if cells.iter().any(|&c| c == 0) {
            return Err(Error::Argument("every axis needs at least one cell".into()));
        }
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        let mut n = [1; 2];
        for d in 0..dim {
            let (a, b) = domain[d];
            if !(a < b) {
                return Err(Error::Argument(format!("empty domain along axis {d}")));
            }
            lo[d] = a;
            hi[d] = b;
            n[d] = cells[d];
        }
        let cell_vertices = if dim == 1 {
            (0..n[0]).flat_map(|i| [i, i + 1]).collect()
        } else {
            let vx = n[0] + 1;
            (0..n[1])
                .flat_map(|j| {
                    (0..n[0]).flat_map(move |i| {
                        let v = i + vx * j;
                        [v, v + 1, v + 1 + vx, v + vx]
                    })
                })
                .collect()
        };
        Ok(Self {
            dim,
            lo,
            hi,
            cells: n,
            cell_vertices,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn domain(&self) -> Vec<(f64, f64)> {
        (0..self.dim).map(|d| (self.lo[d], self.hi[d])).collect()
    }

    pub fn ncells(&self) -> usize {
        self.cells[..self.dim].iter().product()
    }

    pub fn nvertices(&self) -> usize {
        self.cells[..self.dim].iter().map(|c| c + 1).product()
    }

    pub fn nodes_per_cell(&self) -> usize {
        1 << self.dim
    }

    pub fn cell_vertices(&self, cell: usize) -> &[usize] {
        let npc = self.nodes_per_cell();
        &self.cell_vertices[cell * npc..(cell + 1) * npc]
    }

    /// Cell edge lengths (uniform over the mesh); unused axes are 1.
    pub fn cell_size(&self) -> [f64; 2] {
        let mut h = [1.0; 2];
        for d in 0..self.dim {
            h[d] = (self.hi[d] - self.lo[d]) / self.cells[d] as f64;
        }
        h
    }

    /// Lower-left corner of a cell.
    pub fn cell_origin(&self, cell: usize) -> [f64; 2] {
        let h = self.cell_size();
        let i = cell % self.cells[0];
        let j = cell / self.cells[0];
        let mut x = [0.0; 2];
        x[0] = self.lo[0] + i as f64 * h[0];
        if self.dim == 2 {
            x[1] = self.lo[1] + j as f64 * h[1];
        }
        x
    }

    fn vertex_index(&self, v: usize) -> [usize; 2] {
        let vx = self.cells[0] + 1;
        [v % vx, v / vx]
    }

    pub fn vertex_coord(&self, v: usize) -> [f64; 2] {
        let h = self.cell_size();
        let ij = self.vertex_index(v);
        let mut x = [0.0; 2];
        for d in 0..self.dim {
            x[d] = if ij[d] == self.cells[d] {
                self.hi[d]
            } else {
                self.lo[d] + ij[d] as f64 * h[d]
            };
        }
        x
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        let ij = self.vertex_index(v);
        (0..self.dim).any(|d| ij[d] == 0 || ij[d] == self.cells[d])
    }
}
