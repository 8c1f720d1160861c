//! Generalized Lyapunov functions, their derivatives along flows, and the
//! finite-time decrease condition `V̇ ≤ -c V^β`.

use serde::Serialize;
use thiserror::Error;

use crate::expr::{parse, EvalError, Expr, ParseError};
use crate::model::{norm, HybridSystemDef, HybridTrajectory, VectorMap};

#[derive(Debug, Clone, Error)]
pub enum LyapunovError {
    #[error("matrix must be {n}x{n}")]
    Shape { n: usize },
    #[error("matrix entries must be finite")]
    NonFiniteMatrix,
    #[error("V{}: {source}", .index + 1)]
    Parse {
        index: usize,
        #[source]
        source: ParseError,
    },
    #[error("expected {expected} Lyapunov functions (one per mode), got {got}")]
    Count { expected: usize, got: usize },
    #[error("V{} has dimension {got}, expected {expected}", .index + 1)]
    Dimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("V{}({x:?}) = {value} is not positive", .index + 1)]
    NotPositiveDefinite {
        index: usize,
        x: Vec<f64>,
        value: f64,
    },
    #[error("V{}: {source}", .index + 1)]
    Eval {
        index: usize,
        #[source]
        source: EvalError,
    },
    #[error("invalid constants: need c > 0 and 0 < beta < 1 (got c = {c}, beta = {beta})")]
    Constants { c: f64, beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LyapunovFn {
    /// `x'Px` with `P` stored symmetrized, row-major.
    Quadratic { n: usize, p: Vec<f64> },
    Expr { n: usize, expr: Expr },
}

impl LyapunovFn {
    pub fn quadratic(rows: &[Vec<f64>]) -> Result<Self, LyapunovError> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(LyapunovError::Shape { n: n.max(1) });
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LyapunovError::NonFiniteMatrix);
        }
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                p[i * n + j] = 0.5 * (rows[i][j] + rows[j][i]);
            }
        }
        Ok(LyapunovFn::Quadratic { n, p })
    }

    pub fn expression(src: &str, n: usize) -> Result<Self, ParseError> {
        Ok(LyapunovFn::Expr {
            n,
            expr: parse(src, n)?,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            LyapunovFn::Quadratic { n, .. } | LyapunovFn::Expr { n, .. } => *n,
        }
    }

    /// Rows of the symmetrized matrix, for quadratic forms.
    pub fn matrix(&self) -> Option<Vec<Vec<f64>>> {
        match self {
            LyapunovFn::Quadratic { n, p } => Some(p.chunks(*n).map(<[f64]>::to_vec).collect()),
            LyapunovFn::Expr { .. } => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        match self {
            LyapunovFn::Quadratic { n, p } => Ok(quad(*n, p, x, x)),
            LyapunovFn::Expr { expr, .. } => expr.eval(x),
        }
    }

    /// Upper-right derivative of `V` at `x` in the direction `fx`.
    pub fn derivative(&self, x: &[f64], fx: &[f64]) -> Result<f64, EvalError> {
        match self {
            LyapunovFn::Quadratic { n, p } => Ok(2.0 * quad(*n, p, x, fx)),
            LyapunovFn::Expr { expr, .. } => Ok(expr.eval_directional(x, fx)?.1),
        }
    }

    /// `∇V(x)·fx` with a central-difference gradient.
    pub fn derivative_numeric(&self, x: &[f64], fx: &[f64], h: f64) -> Result<f64, EvalError> {
        let grad = match self {
            LyapunovFn::Quadratic { .. } => {
                let mut probe = x.to_vec();
                let mut g = Vec::with_capacity(x.len());
                for k in 0..x.len() {
                    probe[k] = x[k] + h;
                    let up = self.eval(&probe)?;
                    probe[k] = x[k] - h;
                    let down = self.eval(&probe)?;
                    probe[k] = x[k];
                    g.push((up - down) / (2.0 * h));
                }
                g
            }
            LyapunovFn::Expr { expr, .. } => expr.grad_numeric(x, h)?,
        };
        Ok(grad.iter().zip(fx).map(|(g, f)| g * f).sum())
    }
}

fn quad(n: usize, p: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        let row = &p[i * n..(i + 1) * n];
        let py: f64 = row.iter().zip(y).map(|(a, b)| a * b).sum();
        s += x[i] * py;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct FtsConstants {
    pub c: f64,
    pub beta: f64,
}

impl FtsConstants {
    pub fn new(c: f64, beta: f64) -> Result<Self, LyapunovError> {
        if c > 0.0 && c.is_finite() && beta > 0.0 && beta < 1.0 {
            Ok(FtsConstants { c, beta })
        } else {
            Err(LyapunovError::Constants { c, beta })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSet {
    functions: Vec<LyapunovFn>,
    fts_constants: Option<FtsConstants>,
}

impl LyapunovSet {
    /// Checks `V_i(0) = 0` and positivity on a sample grid around the origin.
    pub fn new(
        n: usize,
        functions: Vec<LyapunovFn>,
        fts_constants: Option<FtsConstants>,
    ) -> Result<Self, LyapunovError> {
        for (index, v) in functions.iter().enumerate() {
            if v.dim() != n {
                return Err(LyapunovError::Dimension {
                    index,
                    expected: n,
                    got: v.dim(),
                });
            }
            let zero = vec![0.0; n];
            let v0 = v
                .eval(&zero)
                .map_err(|source| LyapunovError::Eval { index, source })?;
            if v0.abs() > 1e-12 {
                return Err(LyapunovError::NotPositiveDefinite {
                    index,
                    x: zero,
                    value: v0,
                });
            }
            for x in probe_points(n) {
                let value = v
                    .eval(&x)
                    .map_err(|source| LyapunovError::Eval { index, source })?;
                if !(value > 0.0) {
                    return Err(LyapunovError::NotPositiveDefinite { index, x, value });
                }
            }
        }
        Ok(LyapunovSet {
            functions,
            fts_constants,
        })
    }

    pub fn functions(&self) -> &[LyapunovFn] {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn fts_constants(&self) -> Option<FtsConstants> {
        self.fts_constants
    }

    pub fn with_fts_constants(mut self, c: Option<FtsConstants>) -> Self {
        self.fts_constants = c;
        self
    }

    /// Errors unless there is one function per flow mode of `def`.
    pub fn check_against(&self, def: &HybridSystemDef) -> Result<(), LyapunovError> {
        if self.len() != def.num_modes() {
            return Err(LyapunovError::Count {
                expected: def.num_modes(),
                got: self.len(),
            });
        }
        Ok(())
    }
}

/// Coordinate directions, their pairwise sums and differences, at three scales.
fn probe_points(n: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        dirs.push(e.clone());
        e[i] = -1.0;
        dirs.push(e);
        for j in i + 1..n {
            for s in [1.0, -1.0] {
                let mut d = vec![0.0; n];
                d[i] = 1.0;
                d[j] = s;
                dirs.push(d);
            }
        }
    }
    let mut out = Vec::new();
    for r in [1e-2, 1.0, 10.0] {
        for d in &dirs {
            out.push(d.iter().map(|v| v * r).collect());
        }
    }
    out
}

pub fn eval_v(set: &LyapunovSet, mode: usize, x: &[f64]) -> Result<f64, EvalError> {
    set.functions[mode].eval(x)
}

/// `V̇_i(x)` along the flow `f`.
pub fn vdot_along(
    set: &LyapunovSet,
    mode: usize,
    f: &VectorMap,
    x: &[f64],
) -> Result<f64, LyapunovError> {
    let fx = f
        .eval(x)
        .map_err(|source| LyapunovError::Eval { index: mode, source })?;
    let d = set.functions[mode]
        .derivative(x, &fx)
        .map_err(|source| LyapunovError::Eval { index: mode, source })?;
    if d.is_finite() {
        Ok(d)
    } else {
        Err(LyapunovError::Eval {
            index: mode,
            source: EvalError {
                kind: crate::expr::EvalErrorKind::NonFinite,
                subexpr: "derivative".into(),
            },
        })
    }
}

/// Flow samples of `mode`: every stored sample on a segment of that mode
/// except segment end points, the two samples of each jump, and states
/// within `origin_tol` of the origin.
pub fn flow_samples<'a>(
    traj: &'a HybridTrajectory,
    mode: usize,
    origin_tol: f64,
) -> impl Iterator<Item = (f64, &'a [f64])> + 'a {
    traj.segments
        .iter()
        .filter(move |s| s.mode == mode)
        .flat_map(move |s| {
            let last = s.len().saturating_sub(1);
            (0..last).filter_map(move |k| {
                let t = s.time(k);
                let at_jump = s.time(k + 1) == t || (k > 0 && s.time(k - 1) == t);
                let x = s.state(k);
                (!at_jump && norm(x) > origin_tol).then_some((t, x))
            })
        })
}

/// `(V, V̇)` over the flow samples of `mode`.
pub fn decrease_samples(
    def: &HybridSystemDef,
    traj: &HybridTrajectory,
    set: &LyapunovSet,
    mode: usize,
    origin_tol: f64,
) -> Result<Vec<(f64, f64)>, LyapunovError> {
    let f = &def.flows()[mode];
    flow_samples(traj, mode, origin_tol)
        .map(|(_, x)| {
            let v = eval_v(set, mode, x)
                .map_err(|source| LyapunovError::Eval { index: mode, source })?;
            Ok((v, vdot_along(set, mode, f, x)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowDecreaseReport {
    pub mode: usize,
    pub c: f64,
    pub beta: f64,
    pub samples: usize,
    /// No flow samples of the mode: the check passes vacuously.
    pub no_data: bool,
    pub pass: bool,
    /// Largest `V̇ + c V^β`.
    pub worst_residual: f64,
    pub worst_t: Option<f64>,
    pub worst_x: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub fn check_flow_decrease(
    def: &HybridSystemDef,
    traj: &HybridTrajectory,
    set: &LyapunovSet,
    mode: usize,
    c: f64,
    beta: f64,
    tol: f64,
    origin_tol: f64,
) -> Result<FlowDecreaseReport, LyapunovError> {
    let f = &def.flows()[mode];
    let mut report = FlowDecreaseReport {
        mode,
        c,
        beta,
        samples: 0,
        no_data: true,
        pass: true,
        worst_residual: f64::NEG_INFINITY,
        worst_t: None,
        worst_x: None,
    };
    for (t, x) in flow_samples(traj, mode, origin_tol) {
        let v = eval_v(set, mode, x).map_err(|source| LyapunovError::Eval { index: mode, source })?;
        let r = vdot_along(set, mode, f, x)? + c * v.max(0.0).powf(beta);
        report.samples += 1;
        if r > report.worst_residual {
            report.worst_residual = r;
            report.worst_t = Some(t);
            report.worst_x = Some(x.to_vec());
        }
    }
    report.no_data = report.samples == 0;
    if report.no_data {
        report.worst_residual = 0.0;
    }
    report.pass = report.worst_residual <= tol;
    Ok(report)
}

pub fn default_beta_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

/// Below this `c(β)` is treated as zero.
pub const C_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaFit {
    pub beta: f64,
    /// `inf -V̇ / V^β` over all samples.
    pub c: f64,
    /// The same infimum over the upper half (geometrically) of the sampled V range.
    pub c_upper: f64,
    /// False when `c` keeps shrinking toward the origin, i.e. the infimum is
    /// set by the smallest sampled values rather than by the dynamics.
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FtsEstimate {
    pub samples: usize,
    pub no_data: bool,
    pub fits: Vec<BetaFit>,
    pub best: Option<FtsConstants>,
}

/// Fits `(c, β)` in `V̇ ≤ -c V^β` to `(V, V̇)` samples. The chosen `β`
/// maximizes `c(β)(1 - β)` among resolved fits with `c > C_THRESHOLD`.
pub fn estimate_fts_constants(samples: &[(f64, f64)], beta_grid: &[f64]) -> FtsEstimate {
    let samples: Vec<(f64, f64)> = samples.iter().copied().filter(|(v, _)| *v > 0.0).collect();
    let mut est = FtsEstimate {
        samples: samples.len(),
        no_data: samples.is_empty(),
        fits: Vec::new(),
        best: None,
    };
    if samples.is_empty() {
        return est;
    }
    let vmin = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let vmax = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let wide = vmax / vmin >= 10.0;
    let v_mid = (vmin * vmax).sqrt();
    let mut best_score = 0.0;
    for &beta in beta_grid {
        let mut c = f64::INFINITY;
        let mut c_upper = f64::INFINITY;
        for &(v, vdot) in &samples {
            let ratio = -vdot / v.powf(beta);
            c = c.min(ratio);
            if v >= v_mid {
                c_upper = c_upper.min(ratio);
            }
        }
        let resolved = !wide || c >= 0.95 * c_upper;
        est.fits.push(BetaFit {
            beta,
            c,
            c_upper,
            resolved,
        });
        let score = c * (1.0 - beta);
        if resolved && c > C_THRESHOLD && score > best_score {
            best_score = score;
            est.best = Some(FtsConstants { c, beta });
        }
    }
    est
}
