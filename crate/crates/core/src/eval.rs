//! Relative errors and online speedups of a reduced model against the full model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::alloc::RunStats;
use crate::error::{Error, Result};
use crate::linalg::CscMatrix;
use crate::snapshots::SnapshotTensor;

fn norm(x: Option<&CscMatrix>, v: &[f64]) -> f64 {
    match x {
        Some(x) => x.quad_form(v).max(0.0).sqrt(),
        None => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
    }
}

/// Mean relative error and its per-parameter breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mean: f64,
    pub per_param: Vec<f64>,
}

/// Relative `X`-norm error of `rom` against `fom`.
///
/// Steady tensors give `‖u_h − u_n‖_X / ‖u_h‖_X` per parameter. Transient
/// tensors give, per parameter, the left-rectangle time integral of the
/// per-step ratio divided by the interval length, i.e. the mean ratio over
/// the steps of a uniform grid. Both are then averaged over parameters.
pub fn error_measure(fom: &SnapshotTensor, rom: &SnapshotTensor, x: Option<&CscMatrix>) -> Result<ErrorReport> {
    if fom.dims() != rom.dims() || fom.is_transient() != rom.is_transient() {
        return Err(Error::Shape(format!(
            "FOM tensor {:?} and ROM tensor {:?} differ",
            fom.dims(),
            rom.dims()
        )));
    }
    let n = fom.dims()[0];
    if let Some(x) = x {
        if x.nrows() != n {
            return Err(Error::Shape(format!("norm matrix of size {} for fields of length {n}", x.nrows())));
        }
    }
    let nt = if fom.is_transient() { fom.dims()[1] } else { 1 };
    let mut per_param = Vec::with_capacity(fom.nparams());
    let mut diff = vec![0.0; n];
    for j in 0..fom.nparams() {
        let (a, b) = (fom.param_block(j), rom.param_block(j));
        let mut acc = 0.0;
        for k in 0..nt {
            let (ua, ub) = (&a[k * n..(k + 1) * n], &b[k * n..(k + 1) * n]);
            let den = norm(x, ua);
            if !(den > 0.0) {
                return Err(Error::Degenerate(format!("FOM snapshot of parameter {j}, step {k} has zero norm")));
            }
            diff.iter_mut().zip(ua.iter().zip(ub)).for_each(|(d, (p, q))| *d = p - q);
            acc += norm(x, &diff) / den;
        }
        per_param.push(acc / nt as f64);
    }
    let mean = per_param.iter().sum::<f64>() / per_param.len().max(1) as f64;
    Ok(ErrorReport { mean, per_param })
}

/// Accuracy and online cost of a reduced model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub error: f64,
    pub speedup_time: f64,
    pub speedup_memory: f64,
    pub per_param_errors: Vec<f64>,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offline_wall_ns: Option<u64>,
}

impl PerfReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,value\n");
        s.push_str(&format!("error,{:e}\n", self.error));
        s.push_str(&format!("speedup_time,{}\n", self.speedup_time));
        s.push_str(&format!("speedup_memory,{}\n", self.speedup_memory));
        for (j, e) in self.per_param_errors.iter().enumerate() {
            s.push_str(&format!("per_param_errors.{j},{e:e}\n"));
        }
        if let Some(w) = self.offline_wall_ns {
            s.push_str(&format!("offline_wall_ns,{w}\n"));
        }
        s
    }
}

fn check_stats(s: &RunStats, what: &str) -> Result<()> {
    if s.nparams == 0 || s.wall_ns == 0 {
        return Err(Error::Argument(format!("{what} statistics are missing")));
    }
    Ok(())
}

/// Ratios of mean per-parameter FOM cost to mean per-parameter online cost,
/// plus the error of the reconstructed ROM fields.
pub fn eval_performance(
    fom_stats: &RunStats,
    fom: &SnapshotTensor,
    rom_stats: &RunStats,
    rom: &SnapshotTensor,
    x: Option<&CscMatrix>,
    config: serde_json::Value,
) -> Result<PerfReport> {
    check_stats(fom_stats, "FOM")?;
    check_stats(rom_stats, "ROM")?;
    let err = error_measure(fom, rom, x)?;
    let mem = if rom_stats.alloc_bytes == 0 {
        f64::INFINITY
    } else {
        fom_stats.mean_alloc_bytes() / rom_stats.mean_alloc_bytes()
    };
    Ok(PerfReport {
        error: err.mean,
        speedup_time: fom_stats.mean_wall_ns() / rom_stats.mean_wall_ns(),
        speedup_memory: mem,
        per_param_errors: err.per_param,
        config,
        offline_wall_ns: None,
    })
}

/// `‖Φ₁ᵀ X Φ₁ − I‖_max`.
pub fn orthonormality_defect(basis: &DMatrix<f64>, x: Option<&CscMatrix>) -> f64 {
    let xb = match x {
        Some(x) => x.mul_dense(basis),
        None => basis.clone(),
    };
    (basis.transpose() * xb - DMatrix::identity(basis.ncols(), basis.ncols())).amax()
}
