//! Parametric weak-form kernels and their lazy cell-wise evaluation.
//!
//! A [`CellEvaluator`] owns every cache it needs. Fetching a cell evaluates
//! the elemental matrices (or vectors) of all batch members into a single
//! reusable [`ParamBlock`]; cell geometry and quadrature-point operators are
//! computed once per cell and shared by all members.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fe::space::FESpaceDef;
use crate::param_space::Realization;

/// Parametric scalar function `(mu, t, x) -> value`.
pub type ParamFn = Arc<dyn Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync>;

pub fn param_fn<F>(f: F) -> ParamFn
where
    F: Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync + 'static,
{
    Arc::new(f)
}

pub fn constant_fn(value: f64) -> ParamFn {
    Arc::new(move |_, _, _| value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    /// `∫ c ∇u·∇v`
    Stiffness,
    /// `∫ c u v`
    Mass,
    /// `∫ c v`
    Load,
    /// `∫ c u³ v`, with tangent `∫ 3 c u² δu v`
    NonlinearReaction,
}

#[derive(Clone)]
pub struct WeakFormKernel {
    kind: KernelKind,
    coefficient: ParamFn,
    quad_order: usize,
}

impl fmt::Debug for WeakFormKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeakFormKernel")
            .field("kind", &self.kind)
            .field("quad_order", &self.quad_order)
            .finish_non_exhaustive()
    }
}

impl WeakFormKernel {
    /// Kernel with the default quadrature order 2 (exact for Q1 mass and stiffness).
    pub fn new(kind: KernelKind, coefficient: ParamFn) -> Self {
        Self {
            kind,
            coefficient,
            quad_order: 2,
        }
    }

    pub fn stiffness(coefficient: ParamFn) -> Self {
        Self::new(KernelKind::Stiffness, coefficient)
    }

    pub fn mass(coefficient: ParamFn) -> Self {
        Self::new(KernelKind::Mass, coefficient)
    }

    pub fn load(coefficient: ParamFn) -> Self {
        Self::new(KernelKind::Load, coefficient)
    }

    /// Reaction `c u³`; integrated with order 4 so the cubic term is exact on Q1.
    pub fn reaction(coefficient: ParamFn) -> Self {
        Self {
            kind: KernelKind::NonlinearReaction,
            coefficient,
            quad_order: 4,
        }
    }

    pub fn with_quad_order(mut self, order: usize) -> Result<Self> {
        if !(2..=7).contains(&order) {
            return Err(Error::Argument(format!(
                "quadrature order {order} outside supported range 2..=7"
            )));
        }
        self.quad_order = order;
        Ok(self)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn coefficient(&self) -> &ParamFn {
        &self.coefficient
    }
}

/// Evaluation points of a batch: one `(mu, t)` pair per member.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamPoints {
    pdim: usize,
    mus: Vec<f64>,
    times: Vec<f64>,
}

impl ParamPoints {
    pub fn new(pdim: usize, mus: Vec<f64>, times: Vec<f64>) -> Result<Self> {
        if mus.len() != pdim * times.len() {
            return Err(Error::Shape(format!(
                "{} parameter values for {} members of dimension {pdim}",
                mus.len(),
                times.len()
            )));
        }
        Ok(Self { pdim, mus, times })
    }

    pub fn single(mu: &[f64], t: f64) -> Self {
        Self {
            pdim: mu.len(),
            mus: mu.to_vec(),
            times: vec![t],
        }
    }

    /// One member per parameter, all at time `t`.
    pub fn at_time(r: &Realization, t: f64) -> Self {
        let pdim = r.params().first().map_or(0, Vec::len);
        Self {
            pdim,
            mus: r.params().iter().flatten().copied().collect(),
            times: vec![t; r.nparams()],
        }
    }

    /// Steady batch (t = 0).
    pub fn steady(r: &Realization) -> Self {
        Self::at_time(r, 0.0)
    }

    /// `(mu, t)` batch over the selected grid indices, time index fastest.
    pub fn transient(r: &Realization, steps: &[usize]) -> Result<Self> {
        let times = r
            .times()
            .ok_or_else(|| Error::Argument("transient batch from a steady realization".into()))?;
        if let Some(&s) = steps.iter().find(|&&s| s >= times.len()) {
            return Err(Error::Argument(format!("time index {s} outside the grid")));
        }
        let pdim = r.params().first().map_or(0, Vec::len);
        let mut mus = Vec::with_capacity(pdim * steps.len() * r.nparams());
        let mut ts = Vec::with_capacity(steps.len() * r.nparams());
        for mu in r.params() {
            for &s in steps {
                mus.extend_from_slice(mu);
                ts.push(times[s]);
            }
        }
        Ok(Self {
            pdim,
            mus,
            times: ts,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn mu(&self, m: usize) -> &[f64] {
        &self.mus[m * self.pdim..(m + 1) * self.pdim]
    }

    pub fn t(&self, m: usize) -> f64 {
        self.times[m]
    }

    pub fn member(&self, m: usize) -> ParamPoints {
        Self::single(self.mu(m), self.t(m))
    }
}

/// Source of per-cell nodal values for state-dependent terms.
pub trait CellField: Sync {
    /// Writes the values at `dofs` (the dofs of `cell`) for batch member `member`.
    fn gather(&self, member: usize, cell: usize, dofs: &[usize], out: &mut [f64]);
}

/// Nodal values over all dofs (free and constrained), one row per member.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalField {
    ndofs: usize,
    values: Vec<f64>,
}

impl NodalField {
    pub fn new(ndofs: usize, values: Vec<f64>) -> Result<Self> {
        if ndofs == 0 || values.len() % ndofs != 0 {
            return Err(Error::Shape(format!(
                "{} nodal values for {ndofs} dofs",
                values.len()
            )));
        }
        Ok(Self { ndofs, values })
    }

    /// Scatters free values (`nfree` per member) and Dirichlet values (`ndir` per member).
    pub fn from_parts(space: &FESpaceDef, free: &[f64], dirichlet: &[f64], members: usize) -> Self {
        let (nf, nd, n) = (space.nfree(), space.dirichlet_dofs().len(), space.ndofs());
        let mut values = vec![0.0; n * members];
        for m in 0..members {
            let row = &mut values[m * n..(m + 1) * n];
            for (i, &d) in space.free_dofs().iter().enumerate() {
                row[d] = free[m * nf + i];
            }
            for (k, &d) in space.dirichlet_dofs().iter().enumerate() {
                row[d] = dirichlet[m * nd + k];
            }
        }
        Self { ndofs: n, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn member(&self, m: usize) -> &[f64] {
        &self.values[m * self.ndofs..(m + 1) * self.ndofs]
    }

    pub fn nmembers(&self) -> usize {
        self.values.len() / self.ndofs
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &NodalField, b: f64) -> NodalField {
        NodalField {
            ndofs: self.ndofs,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }
}

impl CellField for NodalField {
    fn gather(&self, member: usize, _cell: usize, dofs: &[usize], out: &mut [f64]) {
        let row = &self.values[member * self.ndofs..(member + 1) * self.ndofs];
        for (o, &d) in out.iter_mut().zip(dofs) {
            *o = row[d];
        }
    }
}

/// One contribution to an elemental quantity.
#[derive(Clone, Copy)]
pub struct Term<'a> {
    pub kernel: &'a WeakFormKernel,
    pub scale: f64,
    pub field: Option<&'a dyn CellField>,
}

impl<'a> Term<'a> {
    pub fn new(kernel: &'a WeakFormKernel) -> Self {
        Self {
            kernel,
            scale: 1.0,
            field: None,
        }
    }

    pub fn scaled(kernel: &'a WeakFormKernel, scale: f64) -> Self {
        Self {
            kernel,
            scale,
            field: None,
        }
    }

    pub fn with_field(mut self, field: &'a dyn CellField) -> Self {
        self.field = Some(field);
        self
    }
}

/// A sum of terms producing either elemental matrices or elemental vectors.
///
/// Matrix forms: stiffness/mass are bilinear, a reaction term gives its
/// tangent at the attached field. Vector forms: loads are integrated directly,
/// stiffness/mass act on the attached field, reaction terms give `c u³`.
#[derive(Clone)]
pub enum Form<'a> {
    Matrix(Vec<Term<'a>>),
    Vector(Vec<Term<'a>>),
}

impl<'a> Form<'a> {
    pub fn matrix(kernel: &'a WeakFormKernel) -> Self {
        Form::Matrix(vec![Term::new(kernel)])
    }

    pub fn vector(kernel: &'a WeakFormKernel) -> Self {
        Form::Vector(vec![Term::new(kernel)])
    }

    pub fn is_matrix(&self) -> bool {
        matches!(self, Form::Matrix(_))
    }

    pub fn terms(&self) -> &[Term<'a>] {
        match self {
            Form::Matrix(t) | Form::Vector(t) => t,
        }
    }

    fn validate(&self) -> Result<()> {
        for t in self.terms() {
            let kind = t.kernel.kind;
            let ok = match (self.is_matrix(), kind) {
                (true, KernelKind::Load) => false,
                (true, KernelKind::NonlinearReaction) => t.field.is_some(),
                (true, _) => true,
                (false, KernelKind::Load) => true,
                (false, _) => t.field.is_some(),
            };
            if !ok {
                return Err(Error::Argument(format!(
                    "{kind:?} term is not valid in a {} form{}",
                    if self.is_matrix() { "matrix" } else { "vector" },
                    if kind == KernelKind::Load { "" } else { " without a field" }
                )));
            }
        }
        Ok(())
    }
}

/// Gauss-Legendre rule on `[0, 1]`.
fn gauss_unit(npts: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w): (&[f64], &[f64]) = match npts {
        1 => (&[0.0], &[2.0]),
        2 => {
            const A: f64 = 0.577_350_269_189_625_8;
            (&[-A, A], &[1.0, 1.0])
        }
        3 => {
            const A: f64 = 0.774_596_669_241_483_4;
            (&[-A, 0.0, A], &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        _ => {
            const A: f64 = 0.861_136_311_594_052_6;
            const B: f64 = 0.339_981_043_584_856_3;
            const WA: f64 = 0.347_854_845_137_453_9;
            const WB: f64 = 0.652_145_154_862_546_1;
            (&[-A, -B, B, A], &[WA, WB, WB, WA])
        }
    };
    (
        x.iter().map(|v| 0.5 * (v + 1.0)).collect(),
        w.iter().map(|v| 0.5 * v).collect(),
    )
}

/// Q1/P1 shape functions tabulated at a tensor-product Gauss rule.
#[derive(Clone, Debug)]
pub struct ReferenceElement {
    pub dim: usize,
    pub npc: usize,
    pub nq: usize,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub shape: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
}

impl ReferenceElement {
    pub fn new(dim: usize, quad_order: usize) -> Self {
        let k = quad_order / 2 + 1;
        let (x1, w1) = gauss_unit(k);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        if dim == 1 {
            for i in 0..k {
                points.push([x1[i], 0.0]);
                weights.push(w1[i]);
            }
        } else {
            for j in 0..k {
                for i in 0..k {
                    points.push([x1[i], x1[j]]);
                    weights.push(w1[i] * w1[j]);
                }
            }
        }
        let npc = 1 << dim;
        let nq = points.len();
        let mut shape = Vec::with_capacity(nq * npc);
        let mut grad = Vec::with_capacity(nq * npc);
        for p in &points {
            let (x, y) = (p[0], p[1]);
            if dim == 1 {
                shape.extend([1.0 - x, x]);
                grad.extend([[-1.0, 0.0], [1.0, 0.0]]);
            } else {
                shape.extend([(1.0 - x) * (1.0 - y), x * (1.0 - y), x * y, (1.0 - x) * y]);
                grad.extend([
                    [-(1.0 - y), -(1.0 - x)],
                    [1.0 - y, -x],
                    [y, x],
                    [-y, 1.0 - x],
                ]);
            }
        }
        Self {
            dim,
            npc,
            nq,
            points,
            weights,
            shape,
            grad,
        }
    }
}

/// Elemental matrices or vectors of all batch members for one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    rows: usize,
    cols: usize,
    members: usize,
    data: Vec<f64>,
}

impl ParamBlock {
    pub fn zeros(rows: usize, cols: usize, members: usize) -> Self {
        Self {
            rows,
            cols,
            members,
            data: vec![0.0; rows * cols * members],
        }
    }

    pub fn nmembers(&self) -> usize {
        self.members
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Column-major elemental array of member `m`.
    pub fn member(&self, m: usize) -> &[f64] {
        let len = self.rows * self.cols;
        &self.data[m * len..(m + 1) * len]
    }

    pub fn get(&self, m: usize, a: usize, b: usize) -> f64 {
        self.member(m)[a + self.rows * b]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

struct TermCache<'a> {
    term: Term<'a>,
    reference: ReferenceElement,
    xq: Vec<f64>,
    jxw: Vec<f64>,
    qop: Vec<f64>,
    coef: Vec<f64>,
    local: Vec<f64>,
}

/// Lazy cell-wise evaluation of a form over a parameter batch.
pub struct CellEvaluator<'a> {
    space: &'a FESpaceDef,
    points: &'a ParamPoints,
    matrix: bool,
    terms: Vec<TermCache<'a>>,
    block: ParamBlock,
}

impl<'a> CellEvaluator<'a> {
    pub fn new(space: &'a FESpaceDef, points: &'a ParamPoints, form: &Form<'a>) -> Result<Self> {
        form.validate()?;
        let dim = space.mesh().dim();
        let npc = space.mesh().nodes_per_cell();
        let matrix = form.is_matrix();
        let terms = form
            .terms()
            .iter()
            .map(|&term| {
                let reference = ReferenceElement::new(dim, term.kernel.quad_order);
                let nq = reference.nq;
                let qlen = if needs_pair_op(matrix, term.kernel.kind) {
                    nq * npc * npc
                } else {
                    nq * npc
                };
                TermCache {
                    term,
                    reference,
                    xq: vec![0.0; nq * dim],
                    jxw: vec![0.0; nq],
                    qop: vec![0.0; qlen],
                    coef: vec![0.0; nq * points.len()],
                    local: vec![0.0; npc],
                }
            })
            .collect();
        Ok(Self {
            space,
            points,
            matrix,
            terms,
            block: ParamBlock::zeros(npc, if matrix { npc } else { 1 }, points.len()),
        })
    }

    pub fn ncells(&self) -> usize {
        self.space.ncells()
    }

    pub fn nmembers(&self) -> usize {
        self.points.len()
    }

    /// Evaluates cell `cell` for every member into the internal block.
    pub fn fetch(&mut self, cell: usize) -> Result<&ParamBlock> {
        self.eval(cell, 0, self.points.len())?;
        Ok(&self.block)
    }

    /// Evaluates only member `m` of cell `cell`; returns its column-major elemental array.
    pub fn fetch_member(&mut self, cell: usize, m: usize) -> Result<&[f64]> {
        self.eval(cell, m, m + 1)?;
        Ok(self.block.member(m))
    }

    fn eval(&mut self, cell: usize, lo: usize, hi: usize) -> Result<()> {
        let mesh = self.space.mesh();
        let dim = mesh.dim();
        let npc = mesh.nodes_per_cell();
        let h = mesh.cell_size();
        let origin = mesh.cell_origin(cell);
        let det = if dim == 1 { h[0] } else { h[0] * h[1] };
        let dofs = self.space.cell_dofs(cell);
        let len = self.block.rows * self.block.cols;
        self.block.data[lo * len..hi * len].iter_mut().for_each(|v| *v = 0.0);

        for tc in &mut self.terms {
            let re = &tc.reference;
            let nq = re.nq;
            for q in 0..nq {
                for d in 0..dim {
                    tc.xq[q * dim + d] = origin[d] + re.points[q][d] * h[d];
                }
                tc.jxw[q] = re.weights[q] * det;
            }
            let kind = tc.term.kernel.kind;
            fill_qop(self.matrix, kind, re, &tc.jxw, h, dim, &mut tc.qop);

            let f = &tc.term.kernel.coefficient;
            for m in lo..hi {
                let mu = self.points.mu(m);
                let t = self.points.t(m);
                for q in 0..nq {
                    let c = f(mu, t, &tc.xq[q * dim..(q + 1) * dim]);
                    if !c.is_finite() {
                        return Err(Error::Evaluation {
                            cell,
                            param: m,
                            msg: format!("{kind:?} coefficient is not finite ({c})"),
                        });
                    }
                    tc.coef[m * nq + q] = tc.term.scale * c;
                }
            }

            for m in lo..hi {
                let out = &mut self.block.data[m * len..(m + 1) * len];
                let coef = &tc.coef[m * nq..(m + 1) * nq];
                if let Some(field) = tc.term.field {
                    field.gather(m, cell, dofs, &mut tc.local);
                }
                accumulate(self.matrix, kind, re, &tc.qop, &tc.jxw, coef, &tc.local, npc, out);
            }
        }
        Ok(())
    }
}

fn needs_pair_op(matrix: bool, kind: KernelKind) -> bool {
    match kind {
        KernelKind::Load => false,
        KernelKind::NonlinearReaction => matrix,
        KernelKind::Stiffness | KernelKind::Mass => true,
    }
}

fn fill_qop(
    matrix: bool,
    kind: KernelKind,
    re: &ReferenceElement,
    jxw: &[f64],
    h: [f64; 2],
    dim: usize,
    qop: &mut [f64],
) {
    let npc = re.npc;
    let pair = needs_pair_op(matrix, kind);
    for q in 0..re.nq {
        let w = jxw[q];
        let sh = &re.shape[q * npc..(q + 1) * npc];
        if !pair {
            for a in 0..npc {
                qop[q * npc + a] = w * sh[a];
            }
            continue;
        }
        let gr = &re.grad[q * npc..(q + 1) * npc];
        let base = q * npc * npc;
        for b in 0..npc {
            for a in 0..npc {
                qop[base + a + npc * b] = match kind {
                    KernelKind::Stiffness => {
                        let mut s = gr[a][0] * gr[b][0] / (h[0] * h[0]);
                        if dim == 2 {
                            s += gr[a][1] * gr[b][1] / (h[1] * h[1]);
                        }
                        w * s
                    }
                    _ => w * sh[a] * sh[b],
                };
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate(
    matrix: bool,
    kind: KernelKind,
    re: &ReferenceElement,
    qop: &[f64],
    jxw: &[f64],
    coef: &[f64],
    local: &[f64],
    npc: usize,
    out: &mut [f64],
) {
    let nq = re.nq;
    let nn = npc * npc;
    match (matrix, kind) {
        (true, KernelKind::NonlinearReaction) => {
            for q in 0..nq {
                let u = dot(&re.shape[q * npc..(q + 1) * npc], local);
                let c = 3.0 * coef[q] * u * u;
                for (o, g) in out.iter_mut().zip(&qop[q * nn..(q + 1) * nn]) {
                    *o += c * g;
                }
            }
        }
        (true, _) => {
            for q in 0..nq {
                let c = coef[q];
                for (o, g) in out.iter_mut().zip(&qop[q * nn..(q + 1) * nn]) {
                    *o += c * g;
                }
            }
        }
        (false, KernelKind::Load) => {
            for q in 0..nq {
                let c = coef[q];
                for (o, g) in out.iter_mut().zip(&qop[q * npc..(q + 1) * npc]) {
                    *o += c * g;
                }
            }
        }
        (false, KernelKind::NonlinearReaction) => {
            for q in 0..nq {
                let sh = &re.shape[q * npc..(q + 1) * npc];
                let u = dot(sh, local);
                let c = coef[q] * u * u * u * jxw[q];
                for (o, s) in out.iter_mut().zip(sh) {
                    *o += c * s;
                }
            }
        }
        (false, _) => {
            for q in 0..nq {
                let c = coef[q];
                let g = &qop[q * nn..(q + 1) * nn];
                for b in 0..npc {
                    let cu = c * local[b];
                    if cu != 0.0 {
                        for a in 0..npc {
                            out[a] += cu * g[a + npc * b];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lazy per-cell evaluation of a single kernel (matrix output for bilinear and
/// reaction kernels, vector output for loads).
pub fn elemental_eval<'a>(
    kernel: &'a WeakFormKernel,
    points: &'a ParamPoints,
    space: &'a FESpaceDef,
    field: Option<&'a dyn CellField>,
) -> Result<CellEvaluator<'a>> {
    let mut term = Term::new(kernel);
    term.field = field;
    let form = if kernel.kind == KernelKind::Load {
        Form::Vector(vec![term])
    } else {
        Form::Matrix(vec![term])
    };
    CellEvaluator::new(space, points, &form)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::space::{build_mesh_and_space, DirichletTag};

    fn unit_cell() -> Arc<FESpaceDef> {
        build_mesh_and_space(&[(0.0, 1.0), (0.0, 1.0)], &[1, 1], DirichletTag::None)
            .unwrap()
            .1
    }

    #[test]
    fn q1_stiffness_on_unit_square() {
        let space = unit_cell();
        let k = WeakFormKernel::stiffness(constant_fn(1.0));
        let pts = ParamPoints::single(&[1.0], 0.0);
        let mut ev = elemental_eval(&k, &pts, &space, None).unwrap();
        let b = ev.fetch(0).unwrap();
        // counterclockwise: neighbours differ by 1 mod 4, opposite by 2
        for a in 0..4 {
            for c in 0..4 {
                let expect = match (a as i32 - c as i32).rem_euclid(4) {
                    0 => 2.0 / 3.0,
                    2 => -1.0 / 3.0,
                    _ => -1.0 / 6.0,
                };
                assert!((b.get(0, a, c) - expect).abs() < 1e-15, "({a},{c})");
            }
        }
    }

    #[test]
    fn q1_mass_on_unit_square() {
        let space = unit_cell();
        let k = WeakFormKernel::mass(constant_fn(1.0));
        let pts = ParamPoints::single(&[1.0], 0.0);
        let mut ev = elemental_eval(&k, &pts, &space, None).unwrap();
        let b = ev.fetch(0).unwrap();
        let expect = [
            [4.0, 2.0, 1.0, 2.0],
            [2.0, 4.0, 2.0, 1.0],
            [1.0, 2.0, 4.0, 2.0],
            [2.0, 1.0, 2.0, 4.0],
        ];
        for a in 0..4 {
            for c in 0..4 {
                assert!((b.get(0, a, c) - expect[a][c] / 36.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn p1_stiffness_1d() {
        let h = 0.25;
        let space = build_mesh_and_space(&[(0.0, 1.0)], &[4], DirichletTag::None).unwrap().1;
        let k = WeakFormKernel::stiffness(constant_fn(1.0));
        let pts = ParamPoints::single(&[0.0], 0.0);
        let mut ev = elemental_eval(&k, &pts, &space, None).unwrap();
        let b = ev.fetch(2).unwrap();
        assert!((b.get(0, 0, 0) - 1.0 / h).abs() < 1e-13);
        assert!((b.get(0, 0, 1) + 1.0 / h).abs() < 1e-13);
        assert!((b.get(0, 1, 1) - 1.0 / h).abs() < 1e-13);
    }

    #[test]
    fn batch_members_follow_their_parameters() {
        let space = unit_cell();
        let k = WeakFormKernel::stiffness(param_fn(|mu, _, _| mu[0]));
        let pts = ParamPoints::new(1, vec![1.0, 2.0, 3.0], vec![0.0; 3]).unwrap();
        let mut ev = elemental_eval(&k, &pts, &space, None).unwrap();
        let b = ev.fetch(0).unwrap();
        for m in 0..3 {
            assert!((b.get(m, 0, 0) - (m as f64 + 1.0) * 2.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn evaluation_error_names_cell_and_param() {
        let space = build_mesh_and_space(&[(0.0, 1.0), (0.0, 1.0)], &[2, 2], DirichletTag::None)
            .unwrap()
            .1;
        let k = WeakFormKernel::load(param_fn(|mu, _, x| if x[0] > 0.5 && mu[0] > 1.5 { f64::NAN } else { 1.0 }));
        let pts = ParamPoints::new(1, vec![1.0, 2.0], vec![0.0; 2]).unwrap();
        let mut ev = elemental_eval(&k, &pts, &space, None).unwrap();
        ev.fetch(0).unwrap();
        match ev.fetch(1) {
            Err(Error::Evaluation { cell: 1, param: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn action_matches_matrix_times_field() {
        let space = build_mesh_and_space(&[(0.0, 2.0), (0.0, 1.0)], &[2, 1], DirichletTag::None)
            .unwrap()
            .1;
        let k = WeakFormKernel::stiffness(param_fn(|mu, _, x| mu[0] + x[0]));
        let pts = ParamPoints::single(&[0.5], 0.0);
        let field = NodalField::new(6, vec![0.3, -1.0, 2.0, 0.7, 0.1, -0.4]).unwrap();
        let mut mat = elemental_eval(&k, &pts, &space, None).unwrap();
        let km = mat.fetch(1).unwrap().clone();
        let form = Form::Vector(vec![Term::new(&k).with_field(&field)]);
        let mut vec_ev = CellEvaluator::new(&space, &pts, &form).unwrap();
        let v = vec_ev.fetch(1).unwrap();
        let dofs = space.cell_dofs(1);
        for a in 0..4 {
            let expect: f64 = (0..4).map(|b| km.get(0, a, b) * field.member(0)[dofs[b]]).sum();
            assert!((v.get(0, a, 0) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn invalid_forms_are_rejected() {
        let space = unit_cell();
        let pts = ParamPoints::single(&[1.0], 0.0);
        let load = WeakFormKernel::load(constant_fn(1.0));
        let react = WeakFormKernel::reaction(constant_fn(1.0));
        assert!(CellEvaluator::new(&space, &pts, &Form::matrix(&load)).is_err());
        assert!(CellEvaluator::new(&space, &pts, &Form::matrix(&react)).is_err());
        assert!(CellEvaluator::new(&space, &pts, &Form::vector(&react)).is_err());
        assert!(WeakFormKernel::load(constant_fn(1.0)).with_quad_order(1).is_err());
    }
}
