//! Batched assembly of parametric residuals and Jacobians.
//!
//! All batch members share one sparsity pattern; values of one member are
//! stored consecutively. [`assemble_batched`] visits every cell once and
//! scatters all members, [`assemble_naive_reference`] loops over members
//! outside the cell loop and rebuilds everything per member.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::alloc::measure;
use crate::error::{Error, Result};
use crate::fe::kernel::{CellEvaluator, CellField, Form, ParamPoints, Term, WeakFormKernel};
use crate::fe::space::{FESpaceDef, NO_SLOT};
use crate::fe::{build_mesh_and_space, param_fn, DirichletTag};
use crate::linalg::{CscMatrix, SparsityPattern};
use crate::param_space::{sample_realization, ParamSpace, Sampling};

/// Sparse matrices sharing one pattern; `values` is `nnz × P`, member-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchedSparseCSC {
    pattern: Arc<SparsityPattern>,
    nparams: usize,
    values: Vec<f64>,
}

impl BatchedSparseCSC {
    pub fn zeros(pattern: Arc<SparsityPattern>, nparams: usize) -> Self {
        let values = vec![0.0; pattern.nnz() * nparams];
        Self {
            pattern,
            nparams,
            values,
        }
    }

    pub fn from_parts(pattern: Arc<SparsityPattern>, nparams: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() * nparams {
            return Err(Error::Shape(format!(
                "{} values for {} nonzeros x {nparams} members",
                values.len(),
                pattern.nnz()
            )));
        }
        Ok(Self {
            pattern,
            nparams,
            values,
        })
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn nparams(&self) -> usize {
        self.nparams
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Nonzero values of member `j`.
    pub fn param_values(&self, j: usize) -> &[f64] {
        let nnz = self.nnz();
        &self.values[j * nnz..(j + 1) * nnz]
    }

    /// Member `j` as a standalone matrix.
    pub fn matrix(&self, j: usize) -> CscMatrix {
        CscMatrix::new(self.pattern.clone(), self.param_values(j).to_vec()).expect("consistent length")
    }
}

/// Vectors of equal length; column `j` belongs to member `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchedVector {
    len: usize,
    nparams: usize,
    values: Vec<f64>,
}

impl BatchedVector {
    pub fn zeros(len: usize, nparams: usize) -> Self {
        Self {
            len,
            nparams,
            values: vec![0.0; len * nparams],
        }
    }

    pub fn from_parts(len: usize, nparams: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != len * nparams {
            return Err(Error::Shape(format!(
                "{} values for length {len} x {nparams} members",
                values.len()
            )));
        }
        Ok(Self { len, nparams, values })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn nparams(&self) -> usize {
        self.nparams
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.len..(j + 1) * self.len]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.len..(j + 1) * self.len]
    }
}

/// Output of an assembly: matrix forms give sparse matrices, vector forms vectors.
#[derive(Clone, Debug, PartialEq)]
pub enum Assembled {
    Matrix(BatchedSparseCSC),
    Vector(BatchedVector),
}

impl Assembled {
    pub fn into_matrix(self) -> Result<BatchedSparseCSC> {
        match self {
            Assembled::Matrix(m) => Ok(m),
            Assembled::Vector(_) => Err(Error::Shape("expected a matrix assembly".into())),
        }
    }

    pub fn into_vector(self) -> Result<BatchedVector> {
        match self {
            Assembled::Vector(v) => Ok(v),
            Assembled::Matrix(_) => Err(Error::Shape("expected a vector assembly".into())),
        }
    }

    /// Raw values, member-major.
    pub fn values(&self) -> &[f64] {
        match self {
            Assembled::Matrix(m) => m.values(),
            Assembled::Vector(v) => v.values(),
        }
    }
}

fn check_cells(space: &FESpaceDef, cells: Option<&[usize]>) -> Result<()> {
    if let Some(&c) = cells.and_then(|cs| cs.iter().find(|&&c| c >= space.ncells())) {
        return Err(Error::Assembly(format!(
            "cell {c} out of range ({} cells)",
            space.ncells()
        )));
    }
    Ok(())
}

/// Batched assembly into preallocated storage (zeroed first).
pub fn assemble_matrix_into(
    ev: &mut CellEvaluator<'_>,
    space: &FESpaceDef,
    cells: Option<&[usize]>,
    out: &mut BatchedSparseCSC,
) -> Result<()> {
    check_cells(space, cells)?;
    let maps = space.assembly_maps();
    let nnz = out.nnz();
    let npc = space.mesh().nodes_per_cell();
    let nn = npc * npc;
    let p = out.nparams;
    out.values.iter_mut().for_each(|v| *v = 0.0);
    let mut visit = |cell: usize| -> Result<()> {
        let block = ev.fetch(cell)?;
        let slots = &maps.cell_slots[cell * nn..(cell + 1) * nn];
        for m in 0..p {
            let local = block.member(m);
            let vals = &mut out.values[m * nnz..(m + 1) * nnz];
            for (&s, &v) in slots.iter().zip(local) {
                if s != NO_SLOT {
                    vals[s] += v;
                }
            }
        }
        Ok(())
    };
    match cells {
        Some(cs) => cs.iter().try_for_each(|&c| visit(c)),
        None => (0..space.ncells()).try_for_each(visit),
    }
}

/// Batched vector assembly into preallocated storage (zeroed first).
pub fn assemble_vector_into(
    ev: &mut CellEvaluator<'_>,
    space: &FESpaceDef,
    cells: Option<&[usize]>,
    out: &mut BatchedVector,
) -> Result<()> {
    check_cells(space, cells)?;
    let len = out.len;
    let p = out.nparams;
    out.values.iter_mut().for_each(|v| *v = 0.0);
    let mut visit = |cell: usize| -> Result<()> {
        let block = ev.fetch(cell)?;
        let dofs = space.cell_dofs(cell);
        for m in 0..p {
            let local = block.member(m);
            let vals = &mut out.values[m * len..(m + 1) * len];
            for (&d, &v) in dofs.iter().zip(local) {
                if let Some(i) = space.free_index(d) {
                    vals[i] += v;
                }
            }
        }
        Ok(())
    };
    match cells {
        Some(cs) => cs.iter().try_for_each(|&c| visit(c)),
        None => (0..space.ncells()).try_for_each(visit),
    }
}

/// Assembles `form` for every member of `points` in one pass over the cells.
///
/// With a cell subset only those cells contribute; every other entry is zero.
/// Rows and columns of constrained dofs are dropped.
pub fn assemble_batched(
    form: &Form<'_>,
    points: &ParamPoints,
    space: &FESpaceDef,
    cells: Option<&[usize]>,
) -> Result<Assembled> {
    let mut ev = CellEvaluator::new(space, points, form)?;
    if form.is_matrix() {
        let mut out = BatchedSparseCSC::zeros(space.pattern().clone(), points.len());
        assemble_matrix_into(&mut ev, space, cells, &mut out)?;
        Ok(Assembled::Matrix(out))
    } else {
        let mut out = BatchedVector::zeros(space.nfree(), points.len());
        assemble_vector_into(&mut ev, space, cells, &mut out)?;
        Ok(Assembled::Vector(out))
    }
}

/// Single-kernel shorthand for [`assemble_batched`].
pub fn assemble_kernel(
    kernel: &WeakFormKernel,
    points: &ParamPoints,
    space: &FESpaceDef,
) -> Result<Assembled> {
    let form = if kernel.kind() == crate::fe::KernelKind::Load {
        Form::vector(kernel)
    } else {
        Form::matrix(kernel)
    };
    assemble_batched(&form, points, space, None)
}

struct MemberField<'a> {
    inner: &'a dyn CellField,
    member: usize,
}

impl CellField for MemberField<'_> {
    fn gather(&self, _member: usize, cell: usize, dofs: &[usize], out: &mut [f64]) {
        self.inner.gather(self.member, cell, dofs, out);
    }
}

/// One member's global structure, built from scratch.
enum NaiveOut {
    Matrix(SparsityPattern, Vec<f64>),
    Vector(Vec<f64>),
}

fn naive_member(form: &Form<'_>, points: &ParamPoints, space: &FESpaceDef, m: usize) -> Result<NaiveOut> {
    let fields: Vec<Option<MemberField<'_>>> = form
        .terms()
        .iter()
        .map(|t| t.field.map(|inner| MemberField { inner, member: m }))
        .collect();
    let terms: Vec<Term<'_>> = form
        .terms()
        .iter()
        .zip(&fields)
        .map(|(t, f)| Term {
            kernel: t.kernel,
            scale: t.scale,
            field: f.as_ref().map(|f| f as &dyn CellField),
        })
        .collect();
    let single = points.member(m);
    let member_form = if form.is_matrix() {
        Form::Matrix(terms)
    } else {
        Form::Vector(terms)
    };
    let mut ev = CellEvaluator::new(space, &single, &member_form)?;
    let npc = space.mesh().nodes_per_cell();
    if form.is_matrix() {
        let pattern = SparsityPattern::clone(space.pattern());
        let mut vals = vec![0.0; pattern.nnz()];
        for cell in 0..space.ncells() {
            let block = ev.fetch(cell)?;
            let dofs = space.cell_dofs(cell);
            for b in 0..npc {
                let Some(col) = space.free_index(dofs[b]) else { continue };
                for a in 0..npc {
                    let Some(row) = space.free_index(dofs[a]) else { continue };
                    let slot = pattern
                        .slot(row, col)
                        .ok_or_else(|| Error::Assembly(format!("pair ({row}, {col}) not in pattern")))?;
                    vals[slot] += block.get(0, a, b);
                }
            }
        }
        Ok(NaiveOut::Matrix(pattern, vals))
    } else {
        let mut vals = vec![0.0; space.nfree()];
        for cell in 0..space.ncells() {
            let block = ev.fetch(cell)?;
            for (a, &d) in space.cell_dofs(cell).iter().enumerate() {
                if let Some(i) = space.free_index(d) {
                    vals[i] += block.get(0, a, 0);
                }
            }
        }
        Ok(NaiveOut::Vector(vals))
    }
}

/// Reference assembly looping over members outside the cell loop; every
/// member gets its own evaluator, caches and global structure.
pub fn assemble_naive_reference(form: &Form<'_>, points: &ParamPoints, space: &FESpaceDef) -> Result<Assembled> {
    let p = points.len();
    let members = (0..p)
        .map(|m| naive_member(form, points, space, m))
        .collect::<Result<Vec<_>>>()?;
    if form.is_matrix() {
        let pattern = space.pattern().clone();
        let mut values = Vec::with_capacity(pattern.nnz() * p);
        for out in members {
            if let NaiveOut::Matrix(pat, v) = out {
                if pat != *pattern {
                    return Err(Error::Sparsity("member assembled with a different pattern".into()));
                }
                values.extend_from_slice(&v);
            }
        }
        Ok(Assembled::Matrix(BatchedSparseCSC::from_parts(pattern, p, values)?))
    } else {
        let mut values = Vec::with_capacity(space.nfree() * p);
        for out in members {
            if let NaiveOut::Vector(v) = out {
                values.extend_from_slice(&v);
            }
        }
        Ok(Assembled::Vector(BatchedVector::from_parts(space.nfree(), p, values)?))
    }
}

/// Sparse matrix with the given pattern and nonzero values.
pub fn scatter_nnz(pattern: &Arc<SparsityPattern>, z: &[f64]) -> Result<CscMatrix> {
    if z.len() != pattern.nnz() {
        return Err(Error::Argument(format!(
            "{} values for a pattern with {} nonzeros",
            z.len(),
            pattern.nnz()
        )));
    }
    CscMatrix::new(pattern.clone(), z.to_vec())
}

/// A sampled entry of an assembled structure: a vector row or a matrix `(row, col)`,
/// evaluated for batch member `member`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledEntry {
    pub row: usize,
    pub col: Option<usize>,
    pub member: usize,
}

/// Cell-wise recipe computing selected entries of an assembly.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    nout: usize,
    /// `(cell, member, first, last)` groups into `local`/`out`.
    groups: Vec<(usize, usize, usize, usize)>,
    local: Vec<usize>,
    out: Vec<usize>,
}

impl SamplePlan {
    /// Entries refer to free indices. A cell contributes to an entry iff it
    /// contains the row dof (and the column dof, for matrices).
    pub fn new(space: &FESpaceDef, entries: &[SampledEntry]) -> Result<Self> {
        let npc = space.mesh().nodes_per_cell();
        let free = space.free_dofs();
        let dof_cells = space.dof_cells();
        let mut items: Vec<(usize, usize, usize, usize)> = Vec::new();
        for (k, e) in entries.iter().enumerate() {
            let row_dof = *free
                .get(e.row)
                .ok_or_else(|| Error::Assembly(format!("free index {} out of range", e.row)))?;
            let col_dof = match e.col {
                Some(c) => Some(
                    *free
                        .get(c)
                        .ok_or_else(|| Error::Assembly(format!("free index {c} out of range")))?,
                ),
                None => None,
            };
            for &cell in &dof_cells[row_dof] {
                let dofs = space.cell_dofs(cell);
                let a = dofs.iter().position(|&d| d == row_dof).expect("incident cell");
                let local = match col_dof {
                    Some(cd) => match dofs.iter().position(|&d| d == cd) {
                        Some(b) => a + npc * b,
                        None => continue,
                    },
                    None => a,
                };
                items.push((cell, e.member, k, local));
            }
        }
        items.sort_unstable();
        let mut groups = Vec::new();
        let mut local = Vec::with_capacity(items.len());
        let mut out = Vec::with_capacity(items.len());
        for (i, &(cell, member, k, l)) in items.iter().enumerate() {
            if groups.last().is_none_or(|g: &(usize, usize, usize, usize)| (g.0, g.1) != (cell, member)) {
                groups.push((cell, member, i, i));
            }
            groups.last_mut().expect("group").3 = i + 1;
            local.push(l);
            out.push(k);
        }
        Ok(Self {
            nout: entries.len(),
            groups,
            local,
            out,
        })
    }

    /// Distinct cells visited, ascending.
    pub fn cells(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.groups.iter().map(|g| g.0).collect();
        c.dedup();
        c
    }

    pub fn nout(&self) -> usize {
        self.nout
    }
}

/// Evaluates the entries of `plan` into `out` (overwritten).
pub fn assemble_sampled(ev: &mut CellEvaluator<'_>, plan: &SamplePlan, out: &mut [f64]) -> Result<()> {
    if out.len() != plan.nout {
        return Err(Error::Shape(format!(
            "output of length {} for {} sampled entries",
            out.len(),
            plan.nout
        )));
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    for &(cell, member, lo, hi) in &plan.groups {
        let local = ev.fetch_member(cell, member)?;
        for i in lo..hi {
            out[plan.out[i]] += local[plan.local[i]];
        }
    }
    Ok(())
}

/// One row of the assembly benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub size: usize,
    pub nparams: usize,
    pub path: String,
    pub wall_ns: u64,
    pub alloc_bytes: u64,
}

pub const BENCH_HEADER: &str = "size,P,path,wall_ns,alloc_bytes";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.size, self.nparams, self.path, self.wall_ns, self.alloc_bytes
        )
    }
}

/// Jacobian and residual assembly timings on `size × size` unit-square meshes.
///
/// Paths: `batched` and `naive` include allocation of the global structures;
/// `batched_exclusive` and `naive_exclusive` assemble into preallocated
/// storage. Wall time is the minimum over repetitions, allocations the mean.
pub fn bench_assembly(sizes: &[usize], params: &[usize], reps: usize) -> Result<Vec<BenchRow>> {
    if sizes.is_empty() || params.is_empty() {
        return Err(Error::Argument("benchmark needs at least one size and one P".into()));
    }
    let reps = reps.max(1);
    let pspace = ParamSpace::new(vec![(1.0, 5.0), (1.0, 5.0)])?;
    let nu = WeakFormKernel::stiffness(param_fn(|mu, _, x| mu[0] + mu[1] * x[0]));
    let f = WeakFormKernel::load(param_fn(|mu, _, x| mu[0] * x[1] + 1.0));
    let jac = Form::matrix(&nu);
    let res = Form::vector(&f);
    let mut rows = Vec::new();
    for &size in sizes {
        let (_, space) = build_mesh_and_space(&[(0.0, 1.0), (0.0, 1.0)], &[size, size], DirichletTag::Boundary)?;
        let _ = space.pattern();
        for &p in params {
            let r = sample_realization(&pspace, p, Sampling::Halton, 0)?;
            let points = ParamPoints::steady(&r);
            let mut record = |path: &str, run: &mut dyn FnMut() -> Result<()>| -> Result<()> {
                let mut best = u64::MAX;
                let mut bytes = 0u64;
                for _ in 0..reps {
                    let (res, ns, b) = measure(&mut *run);
                    res?;
                    best = best.min(ns);
                    bytes += b;
                }
                rows.push(BenchRow {
                    size,
                    nparams: p,
                    path: path.into(),
                    wall_ns: best,
                    alloc_bytes: bytes / reps as u64,
                });
                Ok(())
            };
            record("batched", &mut || {
                assemble_batched(&jac, &points, &space, None)?;
                assemble_batched(&res, &points, &space, None)?;
                Ok(())
            })?;
            record("naive", &mut || {
                assemble_naive_reference(&jac, &points, &space)?;
                assemble_naive_reference(&res, &points, &space)?;
                Ok(())
            })?;
            let mut jout = BatchedSparseCSC::zeros(space.pattern().clone(), p);
            let mut rout = BatchedVector::zeros(space.nfree(), p);
            record("batched_exclusive", &mut || {
                let mut ev = CellEvaluator::new(&space, &points, &jac)?;
                assemble_matrix_into(&mut ev, &space, None, &mut jout)?;
                let mut ev = CellEvaluator::new(&space, &points, &res)?;
                assemble_vector_into(&mut ev, &space, None, &mut rout)
            })?;
            let mut jouts: Vec<BatchedSparseCSC> =
                (0..p).map(|_| BatchedSparseCSC::zeros(space.pattern().clone(), 1)).collect();
            let mut routs: Vec<BatchedVector> = (0..p).map(|_| BatchedVector::zeros(space.nfree(), 1)).collect();
            record("naive_exclusive", &mut || {
                for m in 0..p {
                    let single = points.member(m);
                    let mut ev = CellEvaluator::new(&space, &single, &jac)?;
                    naive_matrix_into(&mut ev, &space, &mut jouts[m])?;
                    let mut ev = CellEvaluator::new(&space, &single, &res)?;
                    assemble_vector_into(&mut ev, &space, None, &mut routs[m])?;
                }
                Ok(())
            })?;
        }
    }
    Ok(rows)
}

fn naive_matrix_into(ev: &mut CellEvaluator<'_>, space: &FESpaceDef, out: &mut BatchedSparseCSC) -> Result<()> {
    let npc = space.mesh().nodes_per_cell();
    out.values.iter_mut().for_each(|v| *v = 0.0);
    let pattern = out.pattern.clone();
    for cell in 0..space.ncells() {
        let block = ev.fetch(cell)?;
        let dofs = space.cell_dofs(cell);
        for b in 0..npc {
            let Some(col) = space.free_index(dofs[b]) else { continue };
            for a in 0..npc {
                let Some(row) = space.free_index(dofs[a]) else { continue };
                let slot = pattern
                    .slot(row, col)
                    .ok_or_else(|| Error::Assembly(format!("pair ({row}, {col}) not in pattern")))?;
                out.values[slot] += block.get(0, a, b);
            }
        }
    }
    Ok(())
}

/// Renders benchmark rows as CSV with [`BENCH_HEADER`].
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}
