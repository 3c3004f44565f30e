//! Truncated POD, norm-weighted POD, the two-stage space-time reduction and a
//! randomized range finder.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{kron, kron_apply, normalize_column_signs, solve_upper, upper_cholesky, CscMatrix};
use crate::snapshots::{mode2_matrix, mode_reshape, Axis, SnapshotTensor};

/// A reduced basis `Φ` (N × n), X-orthonormal for its norm matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    basis: DMatrix<f64>,
    norm: Option<CscMatrix>,
    singular_values: Vec<f64>,
    tol: f64,
}

impl Projection {
    /// Wraps a given basis without checks.
    pub fn from_basis(basis: DMatrix<f64>, norm: Option<CscMatrix>, tol: f64) -> Self {
        Self {
            basis,
            norm,
            singular_values: Vec::new(),
            tol,
        }
    }

    pub(crate) fn from_parts(basis: DMatrix<f64>, norm: Option<CscMatrix>, singular_values: Vec<f64>, tol: f64) -> Self {
        Self {
            basis,
            norm,
            singular_values,
            tol,
        }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `None` stands for the identity.
    pub fn norm_matrix(&self) -> Option<&CscMatrix> {
        self.norm.as_ref()
    }

    /// All singular values of the (rescaled) snapshot matrix, descending.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn full_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// `ΦᵀXΦ`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.basis.transpose() * apply_norm(self.norm.as_ref(), &self.basis)
    }
}

/// `X M` (or `M` for the identity).
pub fn apply_norm(x: Option<&CscMatrix>, m: &DMatrix<f64>) -> DMatrix<f64> {
    match x {
        Some(x) => x.mul_dense(m),
        None => m.clone(),
    }
}

/// Smallest `k ≥ 1` with `sqrt(Σ_{i>k} σ_i²) ≤ tol · sqrt(Σ σ_i²)`.
pub fn truncation_rank(sv: &[f64], tol: f64) -> usize {
    let mut tails = vec![0.0; sv.len() + 1];
    for k in (0..sv.len()).rev() {
        tails[k] = tails[k + 1] + sv[k] * sv[k];
    }
    let bound = tol * tol * tails[0];
    (1..=sv.len()).find(|&k| tails[k] <= bound).unwrap_or(sv.len().max(1))
}

/// Thin SVD with singular values sorted descending; returns `(U, σ)`.
fn sorted_svd(m: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let a = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = a
        .thin_svd()
        .map_err(|e| Error::Degenerate(format!("SVD did not converge: {e:?}")))?;
    let (u, s) = (svd.U(), svd.S().column_vector());
    let mut order: Vec<usize> = (0..s.nrows()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    Ok((u_sorted, order.iter().map(|&i| s[i]).collect()))
}

fn check_input(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Argument(format!("tol = {tol} outside (0, 1)")));
    }
    if m.is_empty() || m.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("snapshot matrix is zero".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("snapshot matrix has non-finite entries".into()));
    }
    Ok(())
}

struct WeightedPod {
    proj: Projection,
    h: Option<DMatrix<f64>>,
    rescaled: DMatrix<f64>,
}

fn weighted_pod(m: &DMatrix<f64>, tol: f64, x: Option<&CscMatrix>) -> Result<WeightedPod> {
    check_input(m, tol)?;
    let h = match x {
        Some(x) => {
            if x.nrows() != m.nrows() {
                return Err(Error::Shape(format!(
                    "norm matrix of size {} for snapshots of length {}",
                    x.nrows(),
                    m.nrows()
                )));
            }
            Some(upper_cholesky(&x.to_dense())?)
        }
        None => None,
    };
    let hm = match &h {
        Some(h) => h * m,
        None => m.clone(),
    };
    let (u, sv) = sorted_svd(hm)?;
    let n = truncation_rank(&sv, tol);
    let mut rescaled = u.columns(0, n).into_owned();
    let mut basis = match &h {
        Some(h) => solve_upper(h, &rescaled)?,
        None => rescaled.clone(),
    };
    let before = basis.clone();
    normalize_column_signs(&mut basis);
    for j in 0..n {
        if basis.column(j) != before.column(j) {
            rescaled.column_mut(j).neg_mut();
        }
    }
    Ok(WeightedPod {
        proj: Projection {
            basis,
            norm: x.cloned(),
            singular_values: sv,
            tol,
        },
        h,
        rescaled,
    })
}

/// Tolerance-truncated POD of the columns of `m`, X-orthonormal when `x` is given.
pub fn pod(m: &DMatrix<f64>, tol: f64, x: Option<&CscMatrix>) -> Result<Projection> {
    Ok(weighted_pod(m, tol, x)?.proj)
}

/// Spatial basis `Φ₁` (X-orthonormal) and temporal basis `Φ₂` (orthonormal).
#[derive(Clone, Debug, PartialEq)]
pub struct TransientProjection {
    spatial: Projection,
    temporal: Projection,
}

/// Intermediate quantities of [`strb`].
#[derive(Clone, Debug)]
pub struct StrbStages {
    /// Upper Cholesky factor `H` of `X` (`None` for the identity).
    pub h: Option<DMatrix<f64>>,
    /// Left singular vectors of `H U₁` kept in the first stage.
    pub rescaled_spatial: DMatrix<f64>,
    /// `Φ₁ᵀ X U₁`, `n₁ × (N_t·N_mu)`, time fastest.
    pub contracted: DMatrix<f64>,
}

impl TransientProjection {
    pub fn new(spatial: Projection, temporal: Projection) -> Self {
        Self { spatial, temporal }
    }

    pub fn spatial(&self) -> &Projection {
        &self.spatial
    }

    pub fn temporal(&self) -> &Projection {
        &self.temporal
    }

    pub fn ranks(&self) -> (usize, usize) {
        (self.spatial.rank(), self.temporal.rank())
    }

    pub fn rank(&self) -> usize {
        self.spatial.rank() * self.temporal.rank()
    }

    pub fn nsteps(&self) -> usize {
        self.temporal.full_dim()
    }

    /// Explicit `Kron(Φ₂, Φ₁)`, `N·N_t × n₁·n₂`.
    pub fn kron_basis(&self) -> DMatrix<f64> {
        kron(self.temporal.basis(), self.spatial.basis())
    }
}

/// Two-stage space-time reduction of a `(space, time, param)` tensor.
pub fn strb(u: &SnapshotTensor, x: Option<&CscMatrix>, tol: f64) -> Result<TransientProjection> {
    Ok(strb_detailed(u, x, tol)?.0)
}

/// [`strb`] also returning the intermediate stage quantities.
pub fn strb_detailed(u: &SnapshotTensor, x: Option<&CscMatrix>, tol: f64) -> Result<(TransientProjection, StrbStages)> {
    let u1 = mode_reshape(u, 1)?;
    let dims = u.dims();
    let (nt, np) = (dims[1], dims[2]);
    let stage1 = weighted_pod(&u1, tol, x)?;
    let phi1 = stage1.proj.basis();
    let contracted = phi1.transpose() * apply_norm(x, &u1);
    let n1 = phi1.ncols();
    let u2 = mode2_matrix(n1, nt, np, contracted.as_slice());
    let temporal = pod(&u2, tol, None)?;
    Ok((
        TransientProjection::new(stage1.proj, temporal),
        StrbStages {
            h: stage1.h,
            rescaled_spatial: stage1.rescaled,
            contracted,
        },
    ))
}

/// Two-stage POD with `X = I` of an arbitrary-label three-axis tensor
/// (used for nonzero and residual trajectories).
pub fn strb_plain(u: &SnapshotTensor, tol: f64) -> Result<TransientProjection> {
    let labels = u.labels();
    let relabeled = if labels[0] == Axis::Space {
        strb(u, None, tol)?
    } else {
        let t = u.clone().relabel(&[Axis::Space, Axis::Time, Axis::Param])?;
        strb(&t, None, tol)?
    };
    Ok(relabeled)
}

/// Orthonormal `Q` (`m × (rank + oversample)`) approximately spanning the range of `m`.
pub fn randomized_range(m: &DMatrix<f64>, rank: usize, oversample: usize, seed: u64) -> Result<DMatrix<f64>> {
    let k = rank + oversample;
    if rank == 0 || k > m.nrows().min(m.ncols()) {
        return Err(Error::Argument(format!(
            "rank {rank} + oversample {oversample} exceeds min dimension {}",
            m.nrows().min(m.ncols())
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(m.ncols(), k, |_, _| StandardNormal.sample(&mut rng));
    let y = m * omega;
    Ok(y.qr().q())
}

/// Reduced bases that map full vectors to coordinates and back.
pub trait ReducedBasis {
    /// Number of reduced coordinates.
    fn rank(&self) -> usize;
    /// Expected full vector length.
    fn full_len(&self) -> usize;
    /// Galerkin coordinates `ΦᵀXw` (space-time: `Kron(Φ₂,Φ₁)ᵀ(I ⊗ X)w`).
    fn coords(&self, w: &[f64]) -> Result<Vec<f64>>;
    /// `Φ c`, applied factor-wise for space-time bases.
    fn expand(&self, c: &[f64]) -> Result<Vec<f64>>;
}

fn check_len(got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what} of length {got}, expected {want}")));
    }
    Ok(())
}

impl ReducedBasis for Projection {
    fn rank(&self) -> usize {
        self.basis.ncols()
    }

    fn full_len(&self) -> usize {
        self.basis.nrows()
    }

    fn coords(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(w.len(), self.full_len(), "vector")?;
        let xw = match &self.norm {
            Some(x) => x.mul_vec(w),
            None => w.to_vec(),
        };
        Ok((self.basis.transpose() * nalgebra::DVector::from_vec(xw)).as_slice().to_vec())
    }

    fn expand(&self, c: &[f64]) -> Result<Vec<f64>> {
        check_len(c.len(), self.rank(), "coordinates")?;
        Ok((&self.basis * nalgebra::DVector::from_column_slice(c)).as_slice().to_vec())
    }
}

impl ReducedBasis for TransientProjection {
    fn rank(&self) -> usize {
        TransientProjection::rank(self)
    }

    fn full_len(&self) -> usize {
        self.spatial.full_dim() * self.temporal.full_dim()
    }

    fn coords(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(w.len(), self.full_len(), "vector")?;
        let (n, nt) = (self.spatial.full_dim(), self.temporal.full_dim());
        let wm = DMatrix::from_column_slice(n, nt, w);
        let xw = apply_norm(self.spatial.norm.as_ref(), &wm);
        let c = self.spatial.basis.transpose() * xw * self.temporal.basis();
        Ok(c.as_slice().to_vec())
    }

    fn expand(&self, c: &[f64]) -> Result<Vec<f64>> {
        check_len(c.len(), self.rank(), "coordinates")?;
        Ok(kron_apply(self.temporal.basis(), self.spatial.basis(), c))
    }
}

/// Reduced coordinates of `w` in `proj`.
pub fn galerkin_coords<B: ReducedBasis + ?Sized>(proj: &B, w: &[f64]) -> Result<Vec<f64>> {
    proj.coords(w)
}
