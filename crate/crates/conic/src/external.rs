//! Adapter for solvers running in a separate process.
//!
//! The child reads a problem in the dense JSON schema on stdin and writes an
//! [`ExternalReply`] on stdout. Multipliers follow the max-form convention of
//! [`certify`]: `sum lam_i A_i + sum w_k A_k - C` should be PSD. The reply is
//! never trusted as is; residuals and the bound are recomputed locally.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ConicError, Result};
use crate::problem::SdpProblem;
use crate::solution::{certify, SdpSolution, SolveStatus};
use crate::ConicSolver;

/// Bundled reference back end (cvxpy + Clarabel).
pub const CVXPY_ADAPTER: &str = include_str!("../scripts/cvxpy_adapter.py");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalReply {
    pub status: SolveStatus,
    #[serde(default)]
    pub iterations: usize,
    pub x_psd: Vec<Vec<f64>>,
    pub x_lin: Vec<f64>,
    pub dual_eq: Vec<f64>,
    pub dual_ineq: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CommandSolver {
    pub program: PathBuf,
    pub args: Vec<String>,
    label: String,
}

impl CommandSolver {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        let program = program.into();
        let label = format!("external:{}", program.display());
        Self { program, args, label }
    }

    /// The bundled cvxpy script run by `python`.
    pub fn cvxpy(python: impl Into<PathBuf>) -> Self {
        let mut s = Self::new(python, vec!["-c".into(), CVXPY_ADAPTER.into()]);
        s.label = "external:cvxpy".into();
        s
    }

    /// Returns the cvxpy back end if `python3` with cvxpy is available.
    pub fn detect_cvxpy() -> Option<Self> {
        let ok = Command::new("python3")
            .args(["-c", "import cvxpy, clarabel"])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false);
        ok.then(|| Self::cvxpy("python3"))
    }
}

impl ConicSolver for CommandSolver {
    fn name(&self) -> &str {
        &self.label
    }

    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution> {
        problem.validate()?;
        let input = problem.to_json()?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        child
            .stdin
            .take()
            .ok_or_else(|| ConicError::External("no stdin handle".into()))?
            .write_all(input.as_bytes())?;
        let out = child.wait_with_output()?;
        if !out.status.success() {
            return Err(ConicError::External(format!(
                "{} exited with {}: {}",
                self.label,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let reply: ExternalReply = serde_json::from_slice(&out.stdout)?;
        let n = problem.psd_dim;
        if reply.x_psd.len() != n || reply.x_psd.iter().any(|r| r.len() != n) {
            return Err(ConicError::External("reply has wrong PSD shape".into()));
        }
        let x = DMatrix::from_fn(n, n, |i, j| reply.x_psd[i][j]);
        certify(
            problem,
            &x,
            &reply.x_lin,
            &reply.dual_eq,
            &reply.dual_ineq,
            reply.status,
            reply.iterations,
        )
    }
}
