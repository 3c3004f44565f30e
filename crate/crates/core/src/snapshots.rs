//! Snapshot tensors, the mode reshapes of the space-time reduction and the
//! `RBSN` binary format.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::alloc::RunStats;
use crate::error::{Error, Result};
use crate::fe::problem::ProblemDef;
use crate::fe::solver::{fom_solve_steady, fom_solve_transient, SolverOptions};
use crate::param_space::{Realization, Sampling};

pub const RBSN_MAGIC: &[u8; 4] = b"RBSN";
pub const RBSN_VERSION: u32 = 1;
const NO_STRATEGY: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Space,
    SpaceNnz,
    Time,
    Param,
    Reduced,
}

impl Axis {
    pub fn code(self) -> u8 {
        match self {
            Axis::Space => 0,
            Axis::SpaceNnz => 1,
            Axis::Time => 2,
            Axis::Param => 3,
            Axis::Reduced => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        [Axis::Space, Axis::SpaceNnz, Axis::Time, Axis::Param, Axis::Reduced]
            .get(code as usize)
            .copied()
    }

    fn is_spatial(self) -> bool {
        matches!(self, Axis::Space | Axis::SpaceNnz)
    }
}

/// Provenance of the parameters a tensor was computed at.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RealizationEcho {
    pub strategy: Option<Sampling>,
    pub seed: u64,
    pub bounds: Vec<(f64, f64)>,
}

impl From<&Realization> for RealizationEcho {
    fn from(r: &Realization) -> Self {
        Self {
            strategy: Some(r.strategy()),
            seed: r.seed(),
            bounds: r.bounds().to_vec(),
        }
    }
}

/// Dense labelled tensor; the first axis varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotTensor {
    axes: Vec<(Axis, usize)>,
    data: Vec<f64>,
    echo: RealizationEcho,
}

impl SnapshotTensor {
    pub fn new(axes: Vec<(Axis, usize)>, data: Vec<f64>, echo: RealizationEcho) -> Result<Self> {
        if axes.is_empty() || axes.len() > 3 {
            return Err(Error::Shape(format!("{} axes (1 to 3 supported)", axes.len())));
        }
        let len: usize = axes.iter().map(|a| a.1).product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "{} values for dims {:?}",
                data.len(),
                axes.iter().map(|a| a.1).collect::<Vec<_>>()
            )));
        }
        Ok(Self { axes, data, echo })
    }

    /// `(N, N_mu)` tensor over free dofs.
    pub fn steady(n: usize, nparams: usize, data: Vec<f64>, echo: RealizationEcho) -> Result<Self> {
        Self::new(vec![(Axis::Space, n), (Axis::Param, nparams)], data, echo)
    }

    /// `(N, N_t, N_mu)` tensor over free dofs.
    pub fn transient(n: usize, nt: usize, nparams: usize, data: Vec<f64>, echo: RealizationEcho) -> Result<Self> {
        Self::new(
            vec![(Axis::Space, n), (Axis::Time, nt), (Axis::Param, nparams)],
            data,
            echo,
        )
    }

    pub fn axes(&self) -> &[(Axis, usize)] {
        &self.axes
    }

    pub fn labels(&self) -> Vec<Axis> {
        self.axes.iter().map(|a| a.0).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.1).collect()
    }

    pub fn extent(&self, axis: Axis) -> Option<usize> {
        self.axes.iter().find(|a| a.0 == axis).map(|a| a.1)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn echo(&self) -> &RealizationEcho {
        &self.echo
    }

    pub fn nparams(&self) -> usize {
        self.extent(Axis::Param).unwrap_or(1)
    }

    pub fn is_transient(&self) -> bool {
        self.extent(Axis::Time).is_some()
    }

    /// Contiguous block of parameter `j` (all leading axes).
    pub fn param_block(&self, j: usize) -> &[f64] {
        let len = self.data.len() / self.nparams().max(1);
        &self.data[j * len..(j + 1) * len]
    }

    /// Relabels the axes, keeping extents.
    pub fn relabel(mut self, labels: &[Axis]) -> Result<Self> {
        if labels.len() != self.axes.len() {
            return Err(Error::Shape("label count differs from axis count".into()));
        }
        for (a, &l) in self.axes.iter_mut().zip(labels) {
            a.0 = l;
        }
        Ok(self)
    }

    /// Keeps the first `n` parameters.
    pub fn truncate_params(&self, n: usize) -> Result<Self> {
        let np = self.nparams();
        if n > np || self.axes.last().map(|a| a.0) != Some(Axis::Param) {
            return Err(Error::Shape(format!("cannot keep {n} of {np} parameters")));
        }
        let len = self.data.len() / np.max(1);
        let mut axes = self.axes.clone();
        axes.last_mut().expect("param axis").1 = n;
        Self::new(axes, self.data[..len * n].to_vec(), self.echo.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(path.to_path_buf()))
            }
            Err(e) => return Err(e.into()),
        };
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = self.echo.bounds.len();
        let mut out = Vec::with_capacity(64 + 16 * p + 8 * self.data.len());
        out.extend_from_slice(RBSN_MAGIC);
        out.extend_from_slice(&RBSN_VERSION.to_le_bytes());
        out.push(self.axes.len() as u8);
        for &(axis, extent) in &self.axes {
            out.push(axis.code());
            out.extend_from_slice(&(extent as u64).to_le_bytes());
        }
        let code = self.echo.strategy.map_or(NO_STRATEGY, Sampling::code);
        out.extend_from_slice(&code.to_le_bytes());
        out.extend_from_slice(&self.echo.seed.to_le_bytes());
        out.extend_from_slice(&(p as u32).to_le_bytes());
        for &(lo, hi) in &self.echo.bounds {
            out.extend_from_slice(&lo.to_le_bytes());
            out.extend_from_slice(&hi.to_le_bytes());
        }
        encode_f64s(&self.data, &mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != RBSN_MAGIC {
            return Err(Error::Format("not an RBSN file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != RBSN_VERSION {
            return Err(Error::Format(format!("unsupported RBSN version {version}")));
        }
        let naxes = r.u8()? as usize;
        let mut axes = Vec::with_capacity(naxes);
        for _ in 0..naxes {
            let code = r.u8()?;
            let axis = Axis::from_code(code).ok_or_else(|| Error::Format(format!("unknown axis code {code}")))?;
            axes.push((axis, r.u64()? as usize));
        }
        let code = r.u32()?;
        let strategy = if code == NO_STRATEGY {
            None
        } else {
            Some(Sampling::from_code(code).ok_or_else(|| Error::Format(format!("unknown strategy code {code}")))?)
        };
        let seed = r.u64()?;
        let p = r.u32()? as usize;
        let mut bounds = Vec::with_capacity(p);
        for _ in 0..p {
            bounds.push((r.f64()?, r.f64()?));
        }
        let len = axes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.1))
            .ok_or_else(|| Error::Corrupt("axis extents overflow".into()))?;
        let data = r.f64s(len)?;
        if !r.is_empty() {
            return Err(Error::Corrupt(format!("{} trailing bytes", r.remaining())));
        }
        Self::new(axes, data, RealizationEcho { strategy, seed, bounds })
            .map_err(|e| Error::Corrupt(e.to_string()))
    }
}

pub(crate) fn encode_f64s(values: &[f64], out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Bounds-checked little-endian reader; running out of bytes is corruption.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.remaining() == 0
    }
}

/// Mode-1 (`N × N_t·N_mu`, time fastest) or mode-2 (`N_t × n_1·N_mu`, reduced
/// index fastest) unfolding of a three-axis tensor.
pub fn mode_reshape(s: &SnapshotTensor, mode: u8) -> Result<DMatrix<f64>> {
    let labels = s.labels();
    let d = s.dims();
    match mode {
        1 => {
            if labels.len() != 3 || !labels[0].is_spatial() || labels[1] != Axis::Time || labels[2] != Axis::Param {
                return Err(Error::Shape(format!("mode-1 reshape needs (space, time, param) axes, got {labels:?}")));
            }
            Ok(DMatrix::from_column_slice(d[0], d[1] * d[2], &s.data))
        }
        2 => {
            if labels != [Axis::Reduced, Axis::Time, Axis::Param] {
                return Err(Error::Shape(format!("mode-2 reshape needs (reduced, time, param) axes, got {labels:?}")));
            }
            Ok(mode2_matrix(d[0], d[1], d[2], &s.data))
        }
        _ => Err(Error::Argument(format!("mode must be 1 or 2, got {mode}"))),
    }
}

/// Mode-2 unfolding of an `n1 × nt × np` array: entry `(j, i + n1·k) = U[i, j, k]`.
pub fn mode2_matrix(n1: usize, nt: usize, np: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(nt, n1 * np, |j, c| {
        let (i, k) = (c % n1, c / n1);
        data[i + n1 * (j + nt * k)]
    })
}

/// Inverse of [`mode_reshape`]: folds a matrix back into a tensor with the given axes.
pub fn mode_fold(m: &DMatrix<f64>, mode: u8, axes: Vec<(Axis, usize)>, echo: RealizationEcho) -> Result<SnapshotTensor> {
    if axes.len() != 3 {
        return Err(Error::Shape("folding needs three axes".into()));
    }
    let (n, nt, np) = (axes[0].1, axes[1].1, axes[2].1);
    let data = match mode {
        1 if m.shape() == (n, nt * np) => m.as_slice().to_vec(),
        2 if m.shape() == (nt, n * np) => {
            let mut data = vec![0.0; n * nt * np];
            for k in 0..np {
                for j in 0..nt {
                    for i in 0..n {
                        data[i + n * (j + nt * k)] = m[(j, i + n * k)];
                    }
                }
            }
            data
        }
        1 | 2 => return Err(Error::Shape(format!("matrix of shape {:?} does not fold into {axes:?}", m.shape()))),
        _ => return Err(Error::Argument(format!("mode must be 1 or 2, got {mode}"))),
    };
    SnapshotTensor::new(axes, data, echo)
}

/// Full-order solutions at every parameter of `r`: `(N, N_mu)` for steady
/// problems, `(N, N_t, N_mu)` for transient ones.
pub fn collect_snapshots(problem: &ProblemDef, r: &Realization, opts: &SolverOptions) -> Result<(SnapshotTensor, RunStats)> {
    if problem.is_transient() {
        fom_solve_transient(problem, r, opts)
    } else {
        let (sol, stats) = fom_solve_steady(problem, r, opts)?;
        let n = sol.len();
        let p = sol.nparams();
        Ok((SnapshotTensor::steady(n, p, sol.into_values(), r.into())?, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> SnapshotTensor {
        let mut data = Vec::new();
        for k in 0..2 {
            for j in 0..2 {
                for i in 0..2 {
                    data.push((i + 10 * j + 100 * k) as f64);
                }
            }
        }
        SnapshotTensor::transient(2, 2, 2, data, RealizationEcho::default()).unwrap()
    }

    #[test]
    fn mode1_columns_time_fastest() {
        let m = mode_reshape(&cube(), 1).unwrap();
        assert_eq!(m.shape(), (2, 4));
        let firsts: Vec<f64> = (0..4).map(|c| m[(0, c)]).collect();
        assert_eq!(firsts, vec![0.0, 10.0, 100.0, 110.0]);
    }

    #[test]
    fn mode2_rows_reduced_fastest() {
        let t = cube().relabel(&[Axis::Reduced, Axis::Time, Axis::Param]).unwrap();
        let m = mode_reshape(&t, 2).unwrap();
        assert_eq!(m.shape(), (2, 4));
        let row1: Vec<f64> = (0..4).map(|c| m[(1, c)]).collect();
        assert_eq!(row1, vec![10.0, 11.0, 110.0, 111.0]);
        assert!(mode_reshape(&cube(), 2).is_err());
        assert!(mode_reshape(&t, 1).is_err());
    }

    #[test]
    fn fold_inverts_reshape() {
        let t = cube();
        let m = mode_reshape(&t, 1).unwrap();
        assert_eq!(mode_fold(&m, 1, t.axes().to_vec(), t.echo().clone()).unwrap(), t);
        let r = t.clone().relabel(&[Axis::Reduced, Axis::Time, Axis::Param]).unwrap();
        let m2 = mode_reshape(&r, 2).unwrap();
        assert_eq!(mode_fold(&m2, 2, r.axes().to_vec(), r.echo().clone()).unwrap(), r);
    }

    #[test]
    fn permuted_labels_are_rejected() {
        let t = cube().relabel(&[Axis::Time, Axis::Space, Axis::Param]).unwrap();
        assert!(matches!(mode_reshape(&t, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn rbsn_round_trip() {
        let mut t = cube();
        t.echo = RealizationEcho {
            strategy: Some(Sampling::Halton),
            seed: 42,
            bounds: vec![(1.0, 5.0), (1.0, 5.0)],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.rbsn");
        t.save(&path).unwrap();
        let back = SnapshotTensor::load(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_bytes(), t.to_bytes());
    }

    #[test]
    fn rbsn_errors() {
        let bytes = cube().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(SnapshotTensor::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(SnapshotTensor::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(
            SnapshotTensor::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Corrupt(_))
        ));
        assert!(matches!(
            SnapshotTensor::load(Path::new("/nonexistent/file.rbsn")),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn empty_tensor_is_header_only() {
        let t = SnapshotTensor::steady(5, 0, vec![], RealizationEcho::default()).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 4 + 4 + 1 + 2 * 9 + 4 + 8 + 4);
        assert_eq!(SnapshotTensor::from_bytes(&bytes).unwrap(), t);
    }
}
