use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use crate::error::Result;
use crate::fe::mesh::CartesianMesh;
use crate::linalg::SparsityPattern;

/// Marker for local entries that touch a constrained dof.
pub const NO_SLOT: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirichletTag {
    None,
    Boundary,
}

/// Role of a mesh vertex in the free/constrained partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DofKind {
    Free(usize),
    Dirichlet(usize),
}

/// Free-by-free sparsity plus, per cell, the nonzero slot of every local pair.
#[derive(Debug)]
pub struct AssemblyMaps {
    pub pattern: Arc<SparsityPattern>,
    /// `ncells * npc * npc` entries, local pair `(a, b)` at `a + npc * b`.
    pub cell_slots: Vec<usize>,
}

/// Lowest-order Lagrange space on a Cartesian mesh with eliminated Dirichlet dofs.
///
/// Dofs coincide with mesh vertices. Free dofs are numbered in vertex order.
#[derive(Debug)]
pub struct FESpaceDef {
    mesh: CartesianMesh,
    tag: DirichletTag,
    kinds: Vec<DofKind>,
    free_dofs: Vec<usize>,
    dirichlet_dofs: Vec<usize>,
    maps: OnceLock<Arc<AssemblyMaps>>,
    pattern_builds: AtomicUsize,
}

impl FESpaceDef {
    pub fn new(mesh: CartesianMesh, tag: DirichletTag) -> Self {
        let mut kinds = Vec::with_capacity(mesh.nvertices());
        let mut free_dofs = Vec::new();
        let mut dirichlet_dofs = Vec::new();
        for v in 0..mesh.nvertices() {
            if tag == DirichletTag::Boundary && mesh.is_boundary_vertex(v) {
                kinds.push(DofKind::Dirichlet(dirichlet_dofs.len()));
                dirichlet_dofs.push(v);
            } else {
                kinds.push(DofKind::Free(free_dofs.len()));
                free_dofs.push(v);
            }
        }
        Self {
            mesh,
            tag,
            kinds,
            free_dofs,
            dirichlet_dofs,
            maps: OnceLock::new(),
            pattern_builds: AtomicUsize::new(0),
        }
    }

    pub fn mesh(&self) -> &CartesianMesh {
        &self.mesh
    }

    pub fn dirichlet_tag(&self) -> DirichletTag {
        self.tag
    }

    pub fn ndofs(&self) -> usize {
        self.kinds.len()
    }

    pub fn nfree(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    pub fn dirichlet_dofs(&self) -> &[usize] {
        &self.dirichlet_dofs
    }

    pub fn dof_kind(&self, dof: usize) -> DofKind {
        self.kinds[dof]
    }

    /// Free index of a dof, if it is free.
    pub fn free_index(&self, dof: usize) -> Option<usize> {
        match self.kinds[dof] {
            DofKind::Free(i) => Some(i),
            DofKind::Dirichlet(_) => None,
        }
    }

    pub fn ncells(&self) -> usize {
        self.mesh.ncells()
    }

    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        self.mesh.cell_vertices(cell)
    }

    /// Cells incident to each dof.
    pub fn dof_cells(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.ndofs()];
        for c in 0..self.ncells() {
            for &d in self.cell_dofs(c) {
                out[d].push(c);
            }
        }
        out
    }

    /// Cached sparsity and slot maps; built on first use.
    pub fn assembly_maps(&self) -> &Arc<AssemblyMaps> {
        self.maps.get_or_init(|| {
            self.pattern_builds.fetch_add(1, Ordering::Relaxed);
            Arc::new(self.build_maps())
        })
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.assembly_maps().pattern
    }

    /// How many times the sparsity pattern has been computed.
    pub fn pattern_builds(&self) -> usize {
        self.pattern_builds.load(Ordering::Relaxed)
    }

    fn build_maps(&self) -> AssemblyMaps {
        let n = self.nfree();
        let mut columns = vec![Vec::new(); n];
        for c in 0..self.ncells() {
            let dofs = self.cell_dofs(c);
            for &db in dofs {
                if let Some(col) = self.free_index(db) {
                    columns[col].extend(dofs.iter().filter_map(|&da| self.free_index(da)));
                }
            }
        }
        let pattern = SparsityPattern::from_columns(n, columns).expect("valid pattern");
        let npc = self.mesh.nodes_per_cell();
        let mut cell_slots = Vec::with_capacity(self.ncells() * npc * npc);
        for c in 0..self.ncells() {
            let dofs = self.cell_dofs(c);
            for b in 0..npc {
                for a in 0..npc {
                    let slot = match (self.free_index(dofs[a]), self.free_index(dofs[b])) {
                        (Some(r), Some(col)) => pattern.slot(r, col).expect("pattern covers cell"),
                        _ => NO_SLOT,
                    };
                    cell_slots.push(slot);
                }
            }
        }
        AssemblyMaps {
            pattern: Arc::new(pattern),
            cell_slots,
        }
    }
}

/// Builds the mesh and its space; boundary vertices are constrained iff `tag` is `Boundary`.
pub fn build_mesh_and_space(
    domain: &[(f64, f64)],
    cells: &[usize],
    tag: DirichletTag,
) -> Result<(CartesianMesh, Arc<FESpaceDef>)> {
    let mesh = CartesianMesh::new(domain, cells)?;
    let space = Arc::new(FESpaceDef::new(mesh.clone(), tag));
    Ok((mesh, space))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_tagging() {
        let (_, s) = build_mesh_and_space(&[(0.0, 1.0), (0.0, 1.0)], &[2, 2], DirichletTag::Boundary).unwrap();
        assert_eq!(s.nfree(), 1);
        assert_eq!(s.free_dofs(), &[4]);
        assert_eq!(s.dirichlet_dofs().len(), 8);
        let (_, s) = build_mesh_and_space(&[(0.0, 2.0), (0.0, 2.0)], &[2, 2], DirichletTag::None).unwrap();
        assert_eq!(s.free_dofs(), &(0..9).collect::<Vec<_>>()[..]);
        assert!(s.dirichlet_dofs().is_empty());
    }

    #[test]
    fn free_dofs_and_dirichlet_partition() {
        let (_, s) = build_mesh_and_space(&[(0.0, 1.0), (0.0, 3.0)], &[3, 4], DirichletTag::Boundary).unwrap();
        let mut all: Vec<usize> = s.free_dofs().iter().chain(s.dirichlet_dofs()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..s.ndofs()).collect::<Vec<_>>());
        for c in 0..s.ncells() {
            assert!(s.cell_dofs(c).iter().all(|&d| d < s.ndofs()));
        }
    }

    #[test]
    fn pattern_is_cached() {
        let (_, s) = build_mesh_and_space(&[(0.0, 1.0), (0.0, 1.0)], &[3, 3], DirichletTag::None).unwrap();
        assert_eq!(s.pattern_builds(), 0);
        let nnz = s.pattern().nnz();
        let _ = s.pattern();
        assert_eq!(s.pattern_builds(), 1);
        // each vertex couples with its 3x3 neighbourhood: (2+3+3+2)^2
        assert_eq!(nnz, 100);
    }
}
