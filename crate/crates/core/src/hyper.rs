//! DEIM/MDEIM hyper-reduction: interpolation indices, reduced integration
//! domains, precomputed Galerkin cores and online coefficients.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::assembly::{scatter_nnz, BatchedSparseCSC, SampledEntry};
use crate::error::{Error, Result};
use crate::fe::space::FESpaceDef;
use crate::linalg::SparsityPattern;
use crate::reduction::{pod, strb_plain, Projection, TransientProjection};
use crate::snapshots::{Axis, RealizationEcho, SnapshotTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HrKind {
    Vector,
    Matrix,
}

/// Nonzero (or dof) basis of a hyper-reduction.
#[derive(Clone, Debug, PartialEq)]
pub enum HrBasis {
    Steady(DMatrix<f64>),
    SpaceTime { spatial: DMatrix<f64>, temporal: DMatrix<f64> },
}

/// Trial or test basis a hyper-reduction is projected onto.
#[derive(Clone, Copy, Debug)]
pub enum BasisRef<'a> {
    Steady(&'a Projection),
    SpaceTime(&'a TransientProjection),
}

impl BasisRef<'_> {
    fn spatial(&self) -> &DMatrix<f64> {
        match self {
            BasisRef::Steady(p) => p.basis(),
            BasisRef::SpaceTime(p) => p.spatial().basis(),
        }
    }

    fn temporal(&self) -> Option<&DMatrix<f64>> {
        match self {
            BasisRef::Steady(_) => None,
            BasisRef::SpaceTime(p) => Some(p.temporal().basis()),
        }
    }

    /// Total reduced dimension.
    pub fn rank(&self) -> usize {
        self.spatial().ncols() * self.temporal().map_or(1, |t| t.ncols())
    }
}

/// Affine approximation `J ≈ Σ_k c_k(μ) Φ_z[:, k]` with its Galerkin cores.
#[derive(Clone, Debug)]
pub struct HyperReduction {
    pub(crate) kind: HrKind,
    pub(crate) basis: HrBasis,
    /// Interpolation indices into the (flattened) snapshot rows.
    pub(crate) indices: Vec<usize>,
    /// Free-index row/column and reduced-time position of every index.
    pub(crate) entries: Vec<SampledEntry>,
    pub(crate) reduced_cells: Vec<usize>,
    /// Snapshot time indices touched by the interpolation (space-time only).
    pub(crate) reduced_times: Vec<usize>,
    /// Matrix kind: spatial cores (n_test × n_trial). Vector kind: one reduced vector per term.
    pub(crate) cores: Vec<DMatrix<f64>>,
    /// Space-time matrix kind: temporal weights.
    pub(crate) weights: Vec<DMatrix<f64>>,
    pub(crate) interp: DMatrix<f64>,
    pub(crate) lu: LU<f64, Dyn, Dyn>,
}

impl PartialEq for HyperReduction {
    fn eq(&self, o: &Self) -> bool {
        self.kind == o.kind
            && self.basis == o.basis
            && self.indices == o.indices
            && self.entries == o.entries
            && self.reduced_cells == o.reduced_cells
            && self.reduced_times == o.reduced_times
            && self.cores == o.cores
            && self.weights == o.weights
            && self.interp == o.interp
    }
}

impl HyperReduction {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        kind: HrKind,
        basis: HrBasis,
        indices: Vec<usize>,
        entries: Vec<SampledEntry>,
        reduced_cells: Vec<usize>,
        reduced_times: Vec<usize>,
        cores: Vec<DMatrix<f64>>,
        weights: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let interp = match &basis {
            HrBasis::Steady(phi) => phi.select_rows(&indices),
            HrBasis::SpaceTime { spatial, temporal } => {
                let nz = spatial.nrows();
                DMatrix::from_fn(indices.len(), spatial.ncols() * temporal.ncols(), |r, k| {
                    let (s, n) = (indices[r] % nz, indices[r] / nz);
                    let (i1, i2) = (k % spatial.ncols(), k / spatial.ncols());
                    temporal[(n, i2)] * spatial[(s, i1)]
                })
            }
        };
        if !interp.is_square() {
            return Err(Error::Shape(format!(
                "{} interpolation indices for {} basis vectors",
                interp.nrows(),
                interp.ncols()
            )));
        }
        let lu = interp.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::RankDeficient { column: indices.len() });
        }
        Ok(Self {
            kind,
            basis,
            indices,
            entries,
            reduced_cells,
            reduced_times,
            cores,
            weights,
            interp,
            lu,
        })
    }

    pub fn kind(&self) -> HrKind {
        self.kind
    }

    pub fn basis(&self) -> &HrBasis {
        &self.basis
    }

    pub fn is_space_time(&self) -> bool {
        matches!(self.basis, HrBasis::SpaceTime { .. })
    }

    /// Number of affine terms.
    pub fn nterms(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn entries(&self) -> &[SampledEntry] {
        &self.entries
    }

    pub fn reduced_cells(&self) -> &[usize] {
        &self.reduced_cells
    }

    pub fn reduced_times(&self) -> &[usize] {
        &self.reduced_times
    }

    pub fn cores(&self) -> &[DMatrix<f64>] {
        &self.cores
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    /// `Φ_z[G, :]`.
    pub fn interpolation_matrix(&self) -> &DMatrix<f64> {
        &self.interp
    }

    /// Full nonzero/dof representation `Φ_z ĉ` (space-time: flattened, slot fastest).
    pub fn expand(&self, c: &[f64]) -> Vec<f64> {
        let c = DVector::from_column_slice(c);
        match &self.basis {
            HrBasis::Steady(phi) => (phi * c).as_slice().to_vec(),
            HrBasis::SpaceTime { spatial, temporal } => {
                crate::linalg::kron_apply(temporal, spatial, c.as_slice())
            }
        }
    }
}

fn argmax_abs(v: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, -1.0);
    for (i, x) in v.enumerate() {
        if x.abs() > best.1 {
            best = (i, x.abs());
        }
    }
    best
}

/// Greedy DEIM indices (0-based): each column picks the row where its
/// interpolation residual on the previous columns is largest; ties go to the
/// smallest row.
pub fn deim_indices(phi: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (nz, n) = phi.shape();
    if n > nz {
        return Err(Error::RankDeficient { column: nz });
    }
    let mut g: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let col = phi.column(i);
        let scale = col.amax();
        let (j, best) = if i == 0 {
            argmax_abs(col.iter().copied())
        } else {
            let a = phi.view((0, 0), (nz, i)).select_rows(&g);
            let b = DVector::from_iterator(i, g.iter().map(|&r| phi[(r, i)]));
            let c = a.lu().solve(&b).ok_or(Error::RankDeficient { column: i })?;
            let r = col - phi.columns(0, i) * c;
            argmax_abs(r.iter().copied())
        };
        if !(best > 1e-13 * scale) || g.contains(&j) {
            return Err(Error::RankDeficient { column: i });
        }
        g.push(j);
    }
    Ok(g)
}

/// Cells whose integration contributes to the given slots.
///
/// Matrix kind: a slot is a nonzero of `pattern`; a cell is kept iff it
/// contains both its row and column dof. Vector kind: a slot is a free index;
/// a cell is kept iff it contains that dof.
pub fn reduced_domain(
    kind: HrKind,
    slots: &[usize],
    pattern: Option<&SparsityPattern>,
    space: &FESpaceDef,
) -> Result<Vec<usize>> {
    let entries = slot_entries(kind, slots, pattern, space)?;
    let dof_cells = space.dof_cells();
    let free = space.free_dofs();
    let mut cells = Vec::new();
    for e in &entries {
        let rd = free[e.row];
        for &c in &dof_cells[rd] {
            let ok = match e.col {
                Some(col) => space.cell_dofs(c).contains(&free[col]),
                None => true,
            };
            if ok {
                cells.push(c);
            }
        }
    }
    cells.sort_unstable();
    cells.dedup();
    Ok(cells)
}

fn slot_entries(
    kind: HrKind,
    slots: &[usize],
    pattern: Option<&SparsityPattern>,
    space: &FESpaceDef,
) -> Result<Vec<SampledEntry>> {
    slots
        .iter()
        .map(|&s| match kind {
            HrKind::Matrix => {
                let p = pattern.ok_or_else(|| Error::Argument("matrix slots need a pattern".into()))?;
                let (row, col) = p
                    .entry(s)
                    .ok_or_else(|| Error::Argument(format!("slot {s} out of range ({} nonzeros)", p.nnz())))?;
                Ok(SampledEntry { row, col: Some(col), member: 0 })
            }
            HrKind::Vector => {
                if s >= space.nfree() {
                    return Err(Error::Argument(format!("dof slot {s} out of range ({} free dofs)", space.nfree())));
                }
                Ok(SampledEntry { row: s, col: None, member: 0 })
            }
        })
        .collect()
}

/// Stacks nonzero values of Jacobian batches into an `(nnz, N_mu)` tensor,
/// checking that every batch shares one pattern.
pub fn nonzero_snapshots(batches: &[&BatchedSparseCSC]) -> Result<(SnapshotTensor, Arc<SparsityPattern>)> {
    let first = batches
        .first()
        .ok_or_else(|| Error::Degenerate("no Jacobian snapshots".into()))?;
    let pattern = first.pattern().clone();
    let mut data = Vec::new();
    let mut count = 0;
    for b in batches {
        if b.pattern() != &pattern && **b.pattern() != *pattern {
            return Err(Error::Sparsity("Jacobian snapshots do not share a sparsity pattern".into()));
        }
        data.extend_from_slice(b.values());
        count += b.nparams();
    }
    let t = SnapshotTensor::new(
        vec![(Axis::SpaceNnz, pattern.nnz()), (Axis::Param, count)],
        data,
        RealizationEcho::default(),
    )?;
    Ok((t, pattern))
}

fn check_axes(s: &SnapshotTensor, space_time: bool, kind: HrKind) -> Result<()> {
    let want_space = match kind {
        HrKind::Matrix => Axis::SpaceNnz,
        HrKind::Vector => Axis::Space,
    };
    let labels = s.labels();
    let ok = if space_time {
        labels == [want_space, Axis::Time, Axis::Param]
    } else {
        labels == [want_space, Axis::Param]
    };
    if !ok {
        return Err(Error::Shape(format!(
            "{kind:?} hyper-reduction of a {} tensor with axes {labels:?}",
            if space_time { "space-time" } else { "steady" }
        )));
    }
    Ok(())
}

struct Selected {
    basis: HrBasis,
    indices: Vec<usize>,
    slots: Vec<usize>,
    steps: Vec<usize>,
}

fn select(snaps: &SnapshotTensor, space_time: bool, tol: f64) -> Result<Selected> {
    let dims = snaps.dims();
    if space_time {
        let tp = strb_plain(snaps, tol)?;
        let (s, t) = (tp.spatial().basis().clone(), tp.temporal().basis().clone());
        let indices = deim_indices(&tp.kron_basis())?;
        let nz = dims[0];
        Ok(Selected {
            slots: indices.iter().map(|g| g % nz).collect(),
            steps: indices.iter().map(|g| g / nz).collect(),
            basis: HrBasis::SpaceTime { spatial: s, temporal: t },
            indices,
        })
    } else {
        let m = DMatrix::from_column_slice(dims[0], dims[1], snaps.data());
        let phi = pod(&m, tol, None)?.basis().clone();
        let indices = deim_indices(&phi)?;
        Ok(Selected {
            slots: indices.clone(),
            steps: vec![0; indices.len()],
            basis: HrBasis::Steady(phi),
            indices,
        })
    }
}

fn finish(
    kind: HrKind,
    sel: Selected,
    pattern: Option<&SparsityPattern>,
    space: &FESpaceDef,
    cores: Vec<DMatrix<f64>>,
    weights: Vec<DMatrix<f64>>,
) -> Result<HyperReduction> {
    let space_time = matches!(sel.basis, HrBasis::SpaceTime { .. });
    let mut reduced_times: Vec<usize> = if space_time { sel.steps.clone() } else { Vec::new() };
    reduced_times.sort_unstable();
    reduced_times.dedup();
    let mut entries = slot_entries(kind, &sel.slots, pattern, space)?;
    if space_time {
        for (e, n) in entries.iter_mut().zip(&sel.steps) {
            e.member = reduced_times.binary_search(n).expect("step is selected");
        }
    }
    let reduced_cells = reduced_domain(kind, &sel.slots, pattern, space)?;
    HyperReduction::from_parts(
        kind,
        sel.basis,
        sel.indices,
        entries,
        reduced_cells,
        reduced_times,
        cores,
        weights,
    )
}

/// DEIM for residual-like snapshots: `(space, param)` (steady) or
/// `(space, time, param)` (space-time). Cores are `Ψᵀ Φ_r[:, k]`.
pub fn hyperreduce_vector(snaps: &SnapshotTensor, test: BasisRef<'_>, tol: f64, space: &FESpaceDef) -> Result<HyperReduction> {
    let space_time = matches!(test, BasisRef::SpaceTime(_));
    check_axes(snaps, space_time, HrKind::Vector)?;
    let sel = select(snaps, space_time, tol)?;
    let psi1 = test.spatial();
    let cores = match (&sel.basis, test.temporal()) {
        (HrBasis::Steady(phi), _) => (0..phi.ncols())
            .map(|k| psi1.transpose() * phi.column(k))
            .map(|v| DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
            .collect(),
        (HrBasis::SpaceTime { spatial, temporal }, Some(psi2)) => {
            let sp = psi1.transpose() * spatial;
            let tm = psi2.transpose() * temporal;
            let (m1, m2) = (spatial.ncols(), temporal.ncols());
            let mut cores = Vec::with_capacity(m1 * m2);
            for i2 in 0..m2 {
                for i1 in 0..m1 {
                    let k = crate::linalg::kron(&tm.columns(i2, 1).into_owned(), &sp.columns(i1, 1).into_owned());
                    cores.push(k);
                }
            }
            cores
        }
        _ => unreachable!("basis structure follows the test basis"),
    };
    finish(HrKind::Vector, sel, None, space, cores, Vec::new())
}

/// MDEIM for Jacobian nonzero snapshots: `(space_nnz, param)` or
/// `(space_nnz, time, param)`. Spatial cores are `Ψ₁ᵀ scatter(Φ_z[:, i]) Φ₁`,
/// temporal weights `Ψ₂ᵀ diag(Φ_z2[:, i₂]) Φ₂`.
pub fn hyperreduce_matrix(
    snaps: &SnapshotTensor,
    pattern: &Arc<SparsityPattern>,
    trial: BasisRef<'_>,
    test: BasisRef<'_>,
    tol: f64,
    space: &FESpaceDef,
) -> Result<HyperReduction> {
    let space_time = matches!(test, BasisRef::SpaceTime(_));
    if space_time != matches!(trial, BasisRef::SpaceTime(_)) {
        return Err(Error::Argument("trial and test bases must both be steady or both space-time".into()));
    }
    check_axes(snaps, space_time, HrKind::Matrix)?;
    if snaps.dims()[0] != pattern.nnz() {
        return Err(Error::Sparsity(format!(
            "snapshots of length {} for a pattern with {} nonzeros",
            snaps.dims()[0],
            pattern.nnz()
        )));
    }
    let sel = select(snaps, space_time, tol)?;
    let (phi1, psi1) = (trial.spatial(), test.spatial());
    let spatial = match &sel.basis {
        HrBasis::Steady(phi) => phi,
        HrBasis::SpaceTime { spatial, .. } => spatial,
    };
    let cores = (0..spatial.ncols())
        .map(|i| {
            let z = spatial.column(i);
            let a = scatter_nnz(pattern, z.as_slice())?;
            Ok(psi1.transpose() * a.mul_dense(phi1))
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = match (&sel.basis, trial.temporal(), test.temporal()) {
        (HrBasis::SpaceTime { temporal, .. }, Some(phi2), Some(psi2)) => (0..temporal.ncols())
            .map(|i2| {
                let d = DMatrix::from_diagonal(&temporal.column(i2).into_owned());
                psi2.transpose() * d * phi2
            })
            .collect(),
        _ => Vec::new(),
    };
    finish(HrKind::Matrix, sel, Some(pattern), space, cores, weights)
}

/// Solves `Φ_z[G, :] ĉ = sampled` with the offline LU factors.
pub fn online_coefficients(hr: &HyperReduction, sampled: &[f64]) -> Result<Vec<f64>> {
    if sampled.len() != hr.nterms() {
        return Err(Error::Shape(format!(
            "{} sampled values for {} interpolation indices",
            sampled.len(),
            hr.nterms()
        )));
    }
    let mut b = DVector::from_column_slice(sampled);
    if !hr.lu.solve_mut(&mut b) {
        return Err(Error::LinearSolve("singular interpolation matrix".into()));
    }
    Ok(b.as_slice().to_vec())
}

/// Shape of the reduced term: `(rows, cols)`.
pub fn reduced_shape(hr: &HyperReduction) -> (usize, usize) {
    let c = &hr.cores[0];
    match (hr.kind, hr.weights.first()) {
        (HrKind::Matrix, Some(w)) => (c.nrows() * w.nrows(), c.ncols() * w.ncols()),
        _ => c.shape(),
    }
}

/// `Σ ĉ_k core_k` (space-time matrix kind: `Σ ĉ_{i₁,i₂} Kron(W_{i₂}, C_{i₁})`).
pub fn online_reduced_term(hr: &HyperReduction, c: &[f64]) -> Result<DMatrix<f64>> {
    let (r, k) = reduced_shape(hr);
    let mut out = DMatrix::zeros(r, k);
    add_reduced_term(hr, c, 1.0, &mut out)?;
    Ok(out)
}

/// Adds `scale · Σ ĉ_k core_k` to `out` without forming Kronecker products.
pub fn add_reduced_term(hr: &HyperReduction, c: &[f64], scale: f64, out: &mut DMatrix<f64>) -> Result<()> {
    if c.len() != hr.nterms() {
        return Err(Error::Shape(format!("{} coefficients for {} terms", c.len(), hr.nterms())));
    }
    if out.shape() != reduced_shape(hr) {
        return Err(Error::Shape(format!(
            "reduced term of shape {:?} added to {:?}",
            reduced_shape(hr),
            out.shape()
        )));
    }
    match (hr.kind, hr.weights.is_empty()) {
        (HrKind::Matrix, false) => {
            let m1 = hr.cores.len();
            let (cr, cc) = hr.cores[0].shape();
            for (k, &ck) in c.iter().enumerate() {
                let (core, w) = (&hr.cores[k % m1], &hr.weights[k / m1]);
                for jb in 0..w.ncols() {
                    for ja in 0..w.nrows() {
                        let f = scale * ck * w[(ja, jb)];
                        if f == 0.0 {
                            continue;
                        }
                        for b in 0..cc {
                            let col = jb * cc + b;
                            for a in 0..cr {
                                out[(ja * cr + a, col)] += f * core[(a, b)];
                            }
                        }
                    }
                }
            }
        }
        _ => {
            for (core, &ck) in hr.cores.iter().zip(c) {
                let f = scale * ck;
                out.iter_mut().zip(core.iter()).for_each(|(o, v)| *o += f * v);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::{build_mesh_and_space, DirichletTag};
    use crate::linalg::CscMatrix;

    #[test]
    fn deim_identity() {
        assert_eq!(deim_indices(&DMatrix::identity(3, 3)).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn deim_hand_example() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        assert_eq!(deim_indices(&phi).unwrap(), vec![0, 1]);
    }

    #[test]
    fn deim_rank_deficient() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, 1.0, 0.2, 0.4]);
        assert!(matches!(deim_indices(&phi), Err(Error::RankDeficient { column: 1 })));
    }

    #[test]
    fn deim_ties_pick_smallest_index() {
        let phi = DMatrix::from_row_slice(3, 1, &[-1.0, 1.0, 1.0]);
        assert_eq!(deim_indices(&phi).unwrap(), vec![0]);
    }

    #[test]
    fn reduced_domain_2d_and_1d() {
        let (_, s) = build_mesh_and_space(&[(0.0, 1.0), (0.0, 1.0)], &[2, 2], DirichletTag::None).unwrap();
        let p = s.pattern().clone();
        let centre = p.slot(4, 4).unwrap();
        assert_eq!(reduced_domain(HrKind::Matrix, &[centre], Some(&p), &s).unwrap(), vec![0, 1, 2, 3]);
        let corner = p.slot(0, 0).unwrap();
        assert_eq!(reduced_domain(HrKind::Matrix, &[corner], Some(&p), &s).unwrap(), vec![0]);
        assert!(reduced_domain(HrKind::Matrix, &[], Some(&p), &s).unwrap().is_empty());
        let all: Vec<usize> = (0..p.nnz()).collect();
        assert_eq!(reduced_domain(HrKind::Matrix, &all, Some(&p), &s).unwrap(), vec![0, 1, 2, 3]);
        assert!(reduced_domain(HrKind::Matrix, &[p.nnz()], Some(&p), &s).is_err());

        let (_, s1) = build_mesh_and_space(&[(0.0, 1.0)], &[4], DirichletTag::None).unwrap();
        let p1 = s1.pattern().clone();
        let off = p1.slot(2, 3).unwrap();
        assert_eq!(reduced_domain(HrKind::Matrix, &[off], Some(&p1), &s1).unwrap(), vec![2]);
        assert_eq!(reduced_domain(HrKind::Vector, &[2], None, &s1).unwrap(), vec![1, 2]);
    }

    fn steady_vec_snaps(cols: &[Vec<f64>]) -> SnapshotTensor {
        let n = cols[0].len();
        SnapshotTensor::steady(n, cols.len(), cols.concat(), RealizationEcho::default()).unwrap()
    }

    #[test]
    fn one_term_vector_coefficients() {
        let (_, s) = build_mesh_and_space(&[(0.0, 1.0)], &[3], DirichletTag::Boundary).unwrap();
        let z = vec![3.0, 4.0];
        let snaps = steady_vec_snaps(&[z.iter().map(|v| 2.0 * v).collect()]);
        let psi = Projection::from_basis(DMatrix::identity(2, 2), None, 1e-12);
        let hr = hyperreduce_vector(&snaps, BasisRef::Steady(&psi), 1e-12, &s).unwrap();
        assert_eq!(hr.nterms(), 1);
        for mu in [0.5, -2.0, 7.0] {
            let sampled: Vec<f64> = hr.indices().iter().map(|&g| mu * z[g]).collect();
            let c = online_coefficients(&hr, &sampled).unwrap();
            assert!((c[0] - mu * 5.0).abs() < 1e-12);
            let full = hr.expand(&c);
            assert!((full[0] - mu * 3.0).abs() < 1e-12 && (full[1] - mu * 4.0).abs() < 1e-12);
        }
        let e = online_coefficients(&hr, &[hr.interpolation_matrix()[(0, 0)]]).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn reduced_term_linearity() {
        let (_, s) = build_mesh_and_space(&[(0.0, 1.0)], &[4], DirichletTag::Boundary).unwrap();
        let snaps = steady_vec_snaps(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 1.0], vec![1.0, 1.0, 3.0]]);
        let psi = Projection::from_basis(DMatrix::identity(3, 3), None, 1e-12);
        let hr = hyperreduce_vector(&snaps, BasisRef::Steady(&psi), 1e-12, &s).unwrap();
        assert_eq!(hr.nterms(), 2);
        assert_eq!(online_reduced_term(&hr, &[1.0, 0.0]).unwrap(), hr.cores()[0]);
        let t = online_reduced_term(&hr, &[2.0, -0.5]).unwrap();
        let expect = &hr.cores()[0] * 2.0 - &hr.cores()[1] * 0.5;
        assert!((t - expect).amax() < 1e-15);
        assert!(online_reduced_term(&hr, &[1.0]).is_err());
    }

    #[test]
    fn pattern_mismatch_is_rejected() {
        let a = Arc::new(SparsityPattern::from_columns(2, vec![vec![0], vec![1]]).unwrap());
        let b = Arc::new(SparsityPattern::from_columns(2, vec![vec![0, 1], vec![1]]).unwrap());
        let ba = BatchedSparseCSC::zeros(a, 1);
        let bb = BatchedSparseCSC::zeros(b, 1);
        assert!(matches!(nonzero_snapshots(&[&ba, &bb]), Err(Error::Sparsity(_))));
        let cm = CscMatrix::identity(2);
        assert_eq!(cm.pattern().nnz(), 2);
    }

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        move || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    #[test]
    fn affine_matrix_is_exact() {
        let (_, s) = build_mesh_and_space(&[(0.0, 1.0)], &[6], DirichletTag::Boundary).unwrap();
        let pattern = s.pattern().clone();
        let nnz = pattern.nnz();
        let mut rnd = lcg(3);
        let k1: Vec<f64> = (0..nnz).map(|_| rnd()).collect();
        let k2: Vec<f64> = (0..nnz).map(|_| rnd()).collect();
        let a = |mu: [f64; 2]| -> Vec<f64> { k1.iter().zip(&k2).map(|(x, y)| mu[0] * x + mu[1] * y).collect() };
        let train = [[1.0, 0.3], [0.2, 2.0], [1.5, 1.5]];
        let data: Vec<f64> = train.iter().flat_map(|&m| a(m)).collect();
        let snaps = SnapshotTensor::new(vec![(Axis::SpaceNnz, nnz), (Axis::Param, 3)], data, RealizationEcho::default()).unwrap();
        let n = s.nfree();
        let q = DMatrix::from_fn(n, 3, |_, _| rnd()).qr().q();
        let phi = Projection::from_basis(q.clone(), None, 1e-12);
        let hr = hyperreduce_matrix(&snaps, &pattern, BasisRef::Steady(&phi), BasisRef::Steady(&phi), 1e-12, &s).unwrap();
        assert_eq!(hr.nterms(), 2);
        for mu in [[0.7, -0.4], [3.0, 0.01]] {
            let full = a(mu);
            let sampled: Vec<f64> = hr.indices().iter().map(|&g| full[g]).collect();
            let c = online_coefficients(&hr, &sampled).unwrap();
            assert!((DVector::from_vec(hr.expand(&c)) - DVector::from_vec(full.clone())).amax() < 1e-10);
            let m = scatter_nnz(&pattern, &full).unwrap();
            let expect = q.transpose() * m.mul_dense(&q);
            let got = online_reduced_term(&hr, &c).unwrap();
            assert!((got - expect).amax() < 1e-10);
        }
    }

    proptest::proptest! {
        #[test]
        fn span_is_reproduced(seed in 0u64..500, k in 1usize..4) {
            let (_, s) = build_mesh_and_space(&[(0.0, 1.0)], &[12], DirichletTag::Boundary).unwrap();
            let n = s.nfree();
            let mut rnd = lcg(seed);
            let base = DMatrix::from_fn(n, k, |_, _| rnd());
            let coef = DMatrix::from_fn(k, k + 2, |_, _| rnd());
            let m = &base * coef;
            let snaps = steady_vec_snaps(&(0..m.ncols()).map(|j| m.column(j).iter().copied().collect()).collect::<Vec<_>>());
            let psi = Projection::from_basis(DMatrix::identity(n, n), None, 1e-12);
            let hr = hyperreduce_vector(&snaps, BasisRef::Steady(&psi), 1e-12, &s).unwrap();
            proptest::prop_assert_eq!(hr.nterms(), k);
            let held = &base * DVector::from_fn(k, |_, _| rnd());
            let sampled: Vec<f64> = hr.indices().iter().map(|&g| held[g]).collect();
            let c = online_coefficients(&hr, &sampled).unwrap();
            let err = (DVector::from_vec(hr.expand(&c)) - &held).amax();
            proptest::prop_assert!(err < 1e-9 * held.amax().max(1.0));
        }
    }
}
