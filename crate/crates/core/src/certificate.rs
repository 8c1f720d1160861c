//! Numerical evidence for finite-time stability from multiple Lyapunov
//! functions: cumulative condition sums, class-GK envelopes across initial
//! conditions, the activation budget of the finite-time-stable mode, and
//! the resulting verdicts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::EvalError;
use crate::integrator::settling_time;
use crate::lyapunov::{
    check_flow_decrease, decrease_samples, estimate_fts_constants, eval_v, FlowDecreaseReport,
    FtsConstants, FtsEstimate, LyapunovError, LyapunovSet,
};
use crate::model::{
    check_min_dwell, segment_intervals, FlowSegment, HybridSystemDef, HybridTrajectory,
    TruncationReason,
};
use crate::sweep::SweepRun;

#[derive(Debug, Clone, Error)]
pub enum CertError {
    #[error("{0}")]
    Lyapunov(#[from] LyapunovError),
    #[error("V{}: {source}", .mode + 1)]
    Eval {
        mode: usize,
        #[source]
        source: EvalError,
    },
    #[error("need samples at {need} or more distinct radii, got {got}")]
    TooFewRadii { need: usize, got: usize },
    #[error("empty sweep")]
    EmptySweep,
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("sequence entries must be finite and non-negative (index {0})")]
    NegativeInput(usize),
    #[error("power r must lie in (0, 1], got {0}")]
    Power(f64),
    #[error("invalid constants: need c > 0 and 0 < beta < 1 (got c = {c}, beta = {beta})")]
    Constants { c: f64, beta: f64 },
}

fn v_at(set: &LyapunovSet, mode: usize, x: &[f64]) -> Result<f64, CertError> {
    eval_v(set, mode, x).map_err(|source| CertError::Eval { mode, source })
}

/// Terms of one cumulative sum with their running partial sums.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialSums {
    pub terms: Vec<f64>,
    pub partial: Vec<f64>,
}

impl PartialSums {
    fn push(&mut self, term: f64) {
        let last = self.partial.last().copied().unwrap_or(0.0);
        self.terms.push(term);
        self.partial.push(last + term);
    }

    pub fn total(&self) -> f64 {
        self.partial.last().copied().unwrap_or(0.0)
    }

    /// Largest partial sum, counting the empty sum as 0.
    pub fn max_partial(&self) -> f64 {
        self.partial.iter().copied().fold(0.0, f64::max)
    }

    pub fn abs_total(&self) -> f64 {
        self.terms.iter().map(|t| t.abs()).sum()
    }
}

/// Value of `V_F` at the ends of one activation window of a mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    pub v_start: f64,
    pub v_end: f64,
}

impl Window {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSums {
    /// Switch terms `V_{i^{k+1}}(x(t_{k+1})) - V_{i^k}(x(t_{k+1}))`.
    pub s1: PartialSums,
    /// Flow increments of the active function over each jump-free piece.
    pub s2: PartialSums,
    /// Per mode, jump terms `V_i(x⁺) - V_i(x⁻)` for jumps while `i` is active.
    pub s3: Vec<PartialSums>,
    /// Per mode, `|V_i(start of window k+1) - V_i(end of window k)|` over
    /// the jump-free windows of consecutive activations.
    pub s5: Vec<PartialSums>,
    /// As `s5`, over whole activation intervals.
    pub s5_full: Vec<PartialSums>,
    /// `V_{i^p}(x(t_p)) - V_{i^0}(x(t_0))` evaluated directly.
    pub telescoping_lhs: f64,
    /// `|lhs - (s1 + s2 + Σ s3)|` relative to the size of the terms.
    pub telescoping_residual: f64,
}

impl ConditionSums {
    pub fn s3_max_partial(&self) -> f64 {
        self.s3.iter().map(PartialSums::max_partial).fold(0.0, f64::max)
    }
}

/// Index of the first (`after = false`) or last (`after = true`) sample of
/// `seg` at time `t`; falls back to the nearest sample.
fn sample_index(seg: &FlowSegment, t: f64, after: bool) -> usize {
    let (mut lo, mut hi) = (0, seg.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        let go_right = if after { seg.time(mid) <= t } else { seg.time(mid) < t };
        if go_right {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    if after {
        lo.saturating_sub(1)
    } else {
        lo.min(seg.len() - 1)
    }
}

/// Jump-free windows (`bar = true`) or full activations of `mode`, with
/// `V_mode` at their ends.
pub fn mode_windows(
    traj: &HybridTrajectory,
    set: &LyapunovSet,
    mode: usize,
    bar: bool,
) -> Result<Vec<Window>, CertError> {
    let Ok(iv) = segment_intervals(traj, mode) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(iv.activations.len());
    for (k, &seg_idx) in iv.segment.iter().enumerate() {
        let seg = &traj.segments[seg_idx];
        let (start, end, xs, xe) = if bar {
            let w = iv.jump_free[k];
            (
                w.start,
                w.end,
                seg.state(sample_index(seg, w.start, true)),
                seg.state(sample_index(seg, w.end, false)),
            )
        } else {
            (seg.t_start, seg.t_end, seg.first_state(), seg.last_state())
        };
        out.push(Window {
            start,
            end,
            v_start: v_at(set, mode, xs)?,
            v_end: v_at(set, mode, xe)?,
        });
    }
    Ok(out)
}

fn gap_sums(windows: &[Window]) -> PartialSums {
    let mut s = PartialSums::default();
    for w in windows.windows(2) {
        s.push((w[1].v_start - w[0].v_end).abs());
    }
    s
}

pub fn condition_sums(
    traj: &HybridTrajectory,
    set: &LyapunovSet,
) -> Result<ConditionSums, CertError> {
    let modes = traj.num_modes;
    let mut sums = ConditionSums {
        s1: PartialSums::default(),
        s2: PartialSums::default(),
        s3: vec![PartialSums::default(); modes],
        s5: Vec::with_capacity(modes),
        s5_full: Vec::with_capacity(modes),
        telescoping_lhs: 0.0,
        telescoping_residual: 0.0,
    };
    for w in traj.segments.windows(2) {
        let x = w[0].last_state();
        sums.s1
            .push(v_at(set, w[1].mode, x)? - v_at(set, w[0].mode, x)?);
    }
    for seg in &traj.segments {
        let mut piece_start = 0;
        let n = seg.len();
        for k in 0..n {
            let jump_next = k + 1 < n && seg.time(k + 1) == seg.time(k);
            if jump_next || k + 1 == n {
                if k > piece_start {
                    sums.s2.push(
                        v_at(set, seg.mode, seg.state(k))?
                            - v_at(set, seg.mode, seg.state(piece_start))?,
                    );
                }
                piece_start = k + 1;
            }
        }
    }
    for j in &traj.jump_events {
        let m = j.active_mode;
        sums.s3[m].push(v_at(set, m, &j.x_after)? - v_at(set, m, &j.x_before)?);
    }
    for m in 0..modes {
        sums.s5.push(gap_sums(&mode_windows(traj, set, m, true)?));
        sums.s5_full.push(gap_sums(&mode_windows(traj, set, m, false)?));
    }
    if let (Some(first), Some(last)) = (traj.segments.first(), traj.segments.last()) {
        let lhs = v_at(set, last.mode, last.last_state())? - v_at(set, first.mode, first.first_state())?;
        let rhs = sums.s1.total() + sums.s2.total() + sums.s3.iter().map(PartialSums::total).sum::<f64>();
        let scale = lhs
            .abs()
            .max(sums.s1.abs_total() + sums.s2.abs_total())
            .max(sums.s3.iter().map(PartialSums::abs_total).sum::<f64>())
            .max(f64::MIN_POSITIVE);
        sums.telescoping_lhs = lhs;
        sums.telescoping_residual = (lhs - rhs).abs() / scale;
    }
    Ok(sums)
}

/// Least non-decreasing majorant of `(radius, value)` samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GkEnvelope {
    pub samples: Vec<(f64, f64)>,
    /// Distinct radii, ascending, with the envelope value at each.
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub origin_value: f64,
}

impl GkEnvelope {
    pub fn max_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn at(&self, radius: f64) -> Option<f64> {
        self.radii
            .iter()
            .position(|r| *r == radius)
            .map(|k| self.values[k])
    }

    /// `origin_value <= tol · (largest value) + 1e-9`.
    pub fn passes(&self, tol: f64) -> bool {
        self.origin_value <= tol * self.max_value() + 1e-9
    }
}

pub const MIN_RADII: usize = 3;

/// Groups samples by radius (worst value per radius), clamps negative
/// values to 0 and takes the running maximum over increasing radius.
pub fn fit_gk_envelope(samples: &[(f64, f64)]) -> Result<GkEnvelope, CertError> {
    let mut sorted: Vec<(f64, f64)> = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut radii: Vec<f64> = Vec::new();
    let mut worst: Vec<f64> = Vec::new();
    for &(r, v) in &sorted {
        let v = v.max(0.0);
        if radii.last() == Some(&r) {
            let last = worst.last_mut().expect("parallel vectors");
            *last = last.max(v);
        } else {
            radii.push(r);
            worst.push(v);
        }
    }
    if radii.len() < MIN_RADII {
        return Err(CertError::TooFewRadii {
            need: MIN_RADII,
            got: radii.len(),
        });
    }
    let mut values = Vec::with_capacity(worst.len());
    let mut acc = 0.0f64;
    for v in worst {
        acc = acc.max(v);
        values.push(acc);
    }
    Ok(GkEnvelope {
        samples: samples.to_vec(),
        origin_value: values[0],
        radii,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `(rhs - lhs) / max(1, |lhs|, |rhs|)`.
    pub slack: f64,
}

impl Inequality {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        Inequality {
            name: name.to_string(),
            lhs,
            rhs,
            slack: (rhs - lhs) / 1f64.max(lhs.abs()).max(rhs.abs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Report {
    pub r: f64,
    /// Number of pairs with `a_k >= b_k`.
    pub m: usize,
    pub inequalities: Vec<Inequality>,
    pub min_slack: f64,
}

impl Lemma1Report {
    pub fn holds(&self, tol: f64) -> bool {
        self.min_slack >= -tol
    }
}

/// One randomized input for [`lemma1_oracle`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Case {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub r: f64,
}

/// Seeded cases: lengths 1 to 50, entries in `[0, 10]`, `r` in
/// `{0.1, 0.2, …, 0.9}`. With `adversarial`, each `b_k` sits within a
/// relative `1e-6` of `a_k`, which drives the slacks toward 0.
pub fn lemma1_cases(count: usize, seed: u64, adversarial: bool) -> Vec<Lemma1Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let len = rng.gen_range(1..=50);
            let r = rng.gen_range(1..=9) as f64 / 10.0;
            let a: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..=10.0)).collect();
            let b = a
                .iter()
                .map(|&ak| {
                    if adversarial {
                        let eps: f64 = rng.gen_range(-1e-6..=1e-6);
                        (ak * (1.0 + eps)).max(0.0)
                    } else {
                        rng.gen_range(0.0..=10.0)
                    }
                })
                .collect();
            Lemma1Case { a, b, r }
        })
        .collect()
}

/// Checks the power-sum inequalities behind the sub-additivity bound
/// `Σ(a_k^r - b_k^r) <= m^{1-r} (Σ|a_k - b_k|)^r` step by step.
/// `bound` defaults to `Σ|a_k - b_k|`.
pub fn lemma1_oracle(
    a: &[f64],
    b: &[f64],
    r: f64,
    bound: Option<f64>,
) -> Result<Lemma1Report, CertError> {
    if a.len() != b.len() {
        return Err(CertError::LengthMismatch(a.len(), b.len()));
    }
    if let Some(k) = a
        .iter()
        .chain(b)
        .position(|v| !(v.is_finite() && *v >= 0.0))
    {
        return Err(CertError::NegativeInput(k % a.len().max(1)));
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(CertError::Power(r));
    }
    let z: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    let big_m = z.len() as f64;
    let sum_z: f64 = z.iter().sum();
    let sum_zr: f64 = z.iter().map(|v| v.powf(r)).sum();
    let mut ineq = vec![
        Inequality::new("(sum z)^r <= sum z^r", sum_z.powf(r), sum_zr),
        Inequality::new(
            "sum z^r <= M^(1-r) (sum z)^r",
            sum_zr,
            big_m.powf(1.0 - r) * sum_z.powf(r),
        ),
    ];

    let ge: Vec<usize> = (0..a.len()).filter(|&k| a[k] >= b[k]).collect();
    let m = ge.len();
    let pair_name = "a^r - b^r <= (a - b)^r (tightest pair)";
    let worst_pair = ge
        .iter()
        .map(|&k| Inequality::new(pair_name, a[k].powf(r) - b[k].powf(r), (a[k] - b[k]).powf(r)))
        .min_by(|p, q| p.slack.total_cmp(&q.slack))
        .unwrap_or_else(|| Inequality::new(pair_name, 0.0, 0.0));
    ineq.push(worst_pair);

    let all: f64 = a.iter().zip(b).map(|(x, y)| x.powf(r) - y.powf(r)).sum();
    let on_i1: f64 = ge.iter().map(|&k| a[k].powf(r) - b[k].powf(r)).sum();
    let pow_i1: f64 = ge.iter().map(|&k| (a[k] - b[k]).powf(r)).sum();
    let mf = (m as f64).powf(1.0 - r);
    let mf = if m == 0 && r == 1.0 { 1.0 } else { mf };
    let lin_i1: f64 = ge.iter().map(|&k| a[k] - b[k]).sum();
    let bound = bound.unwrap_or(sum_z);
    ineq.push(Inequality::new("sum (a^r - b^r) <= sum_I1 (a^r - b^r)", all, on_i1));
    ineq.push(Inequality::new("sum_I1 (a^r - b^r) <= sum_I1 (a - b)^r", on_i1, pow_i1));
    ineq.push(Inequality::new(
        "sum_I1 (a - b)^r <= m^(1-r) (sum_I1 (a - b))^r",
        pow_i1,
        mf * lin_i1.powf(r),
    ));
    ineq.push(Inequality::new(
        "m^(1-r) (sum_I1 (a - b))^r <= m^(1-r) (sum |a - b|)^r",
        mf * lin_i1.powf(r),
        mf * sum_z.powf(r),
    ));
    ineq.push(Inequality::new(
        "m^(1-r) (sum |a - b|)^r <= m^(1-r) bound^r",
        mf * sum_z.powf(r),
        mf * bound.max(0.0).powf(r),
    ));
    let min_slack = ineq.iter().map(|q| q.slack).fold(f64::INFINITY, f64::min);
    Ok(Lemma1Report {
        r,
        m,
        inequalities: ineq,
        min_slack,
    })
}

/// How a run relates to the activation budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetStatus {
    /// Converged within the budget.
    Sufficient,
    /// Did not converge and the budget was not used up.
    Insufficient,
    /// Used more activation time than the budget allows without reaching
    /// the origin first.
    Contradicted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub c: f64,
    pub beta: f64,
    pub windows: usize,
    /// Jump-free activation time after which `V_F` must vanish (seconds).
    pub budget: f64,
    /// Jump-free activation time of mode F actually observed (seconds).
    pub achieved: f64,
    /// Upper bound on `V_F` at the end of the last window.
    pub predicted_vf_end: f64,
    pub observed_vf_end: f64,
}

/// Budget from jump-free windows of the FTS mode:
/// `(V₁^{1-β} + Σ max(0, V_start,k+1^{1-β} - V_end,k^{1-β})) / (c(1-β))`.
pub fn activation_budget(windows: &[Window], c: f64, beta: f64) -> Result<BudgetReport, CertError> {
    if !(c > 0.0 && c.is_finite() && beta > 0.0 && beta < 1.0) {
        return Err(CertError::Constants { c, beta });
    }
    let q = 1.0 - beta;
    let rate = c * q;
    let p = |v: f64| v.max(0.0).powf(q);
    let mut numer = windows.first().map_or(0.0, |w| p(w.v_start));
    for w in windows.windows(2) {
        numer += (p(w[1].v_start) - p(w[0].v_end)).max(0.0);
    }
    let (predicted, observed) = match windows.last() {
        Some(w) => ((p(w.v_start) - rate * w.len()).max(0.0).powf(1.0 / q), w.v_end),
        None => (0.0, 0.0),
    };
    Ok(BudgetReport {
        c,
        beta,
        windows: windows.len(),
        budget: numer / rate,
        achieved: windows.iter().map(Window::len).sum(),
        predicted_vf_end: predicted,
        observed_vf_end: observed,
    })
}

pub fn activation_budget_for(
    traj: &HybridTrajectory,
    set: &LyapunovSet,
    mode: usize,
    c: f64,
    beta: f64,
) -> Result<BudgetReport, CertError> {
    activation_budget(&mode_windows(traj, set, mode, true)?, c, beta)
}

pub fn budget_status(report: &BudgetReport, converged: bool, tol: f64) -> BudgetStatus {
    if report.achieved > report.budget * (1.0 + tol) + 1e-12 {
        BudgetStatus::Contradicted
    } else if converged {
        BudgetStatus::Sufficient
    } else {
        BudgetStatus::Insufficient
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "FTS-evidence")]
    FtsEvidence,
    #[serde(rename = "inconclusive")]
    Inconclusive,
    #[serde(rename = "violated")]
    Violated,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::FtsEvidence => "FTS-evidence",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Violated => "violated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evidence {
    pub radius: f64,
    pub x0: Vec<f64>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionBlock {
    pub name: String,
    pub status: Status,
    pub pass: bool,
    pub worst_residual: Option<f64>,
    pub note: String,
    pub evidence: Vec<Evidence>,
}

impl ConditionBlock {
    fn new(name: &str, status: Status, worst_residual: Option<f64>, note: String) -> Self {
        ConditionBlock {
            name: name.to_string(),
            status,
            pass: status == Status::Pass,
            worst_residual,
            note,
            evidence: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedEnvelope {
    pub name: String,
    pub envelope: GkEnvelope,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub radius: f64,
    pub x0: Vec<f64>,
    pub error: Option<String>,
    pub reason: Option<TruncationReason>,
    pub t_final: Option<f64>,
    pub settling_time: Option<f64>,
    pub s1_max: Option<f64>,
    pub s2_max: Option<f64>,
    pub s3_max: Option<f64>,
    pub s5_max: Option<f64>,
    pub s5_full_max: Option<f64>,
    pub telescoping_residual: Option<f64>,
    pub dwell_ok: Option<bool>,
    pub budget: Option<BudgetReport>,
    pub budget_status: Option<BudgetStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub theorem: String,
    pub verdict: Verdict,
    pub fts_mode: usize,
    pub conditions: Vec<ConditionBlock>,
    pub fts_constants: Option<FtsConstants>,
    pub constants_estimated: bool,
    pub fts_estimate: Option<FtsEstimate>,
    pub per_mode_constants: Vec<Option<FtsConstants>>,
    pub envelopes: Vec<NamedEnvelope>,
    /// Largest radius up to which every run settled.
    pub settled_radius: Option<f64>,
    pub runs: Vec<RunSummary>,
    pub notes: Vec<String>,
}

impl CertificateReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionBlock> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    /// Minimum jump-free activation of the FTS mode, `t_d`.
    pub t_d: f64,
    /// Envelope origin value allowed, relative to its largest value.
    pub gk_origin_tol: f64,
    /// Tolerance on `V̇ + c V^β`.
    pub decrease_tol: f64,
    /// Relative slack on the activation budget.
    pub budget_tol: f64,
    pub telescoping_tol: f64,
    /// States this close to the origin count as arrived.
    pub origin_tol: f64,
    pub beta_grid: Vec<f64>,
}

impl CertifyOptions {
    pub fn for_system(def: &HybridSystemDef, origin_tol: f64) -> Self {
        CertifyOptions {
            t_d: def.policy().dwell_min,
            gk_origin_tol: 1e-2,
            decrease_tol: 1e-9,
            budget_tol: 0.05,
            telescoping_tol: 1e-6,
            origin_tol,
            beta_grid: crate::lyapunov::default_beta_grid(),
        }
    }
}

struct Analyzed<'a> {
    run: &'a SweepRun,
    traj: Option<&'a HybridTrajectory>,
    sums: Option<ConditionSums>,
    summary: RunSummary,
}

fn analyze<'a>(
    runs: &'a [SweepRun],
    set: &LyapunovSet,
    fts_mode: usize,
    opts: &CertifyOptions,
) -> Result<Vec<Analyzed<'a>>, CertError> {
    runs.iter()
        .map(|run| {
            let mut summary = RunSummary {
                radius: run.radius,
                x0: run.x0.clone(),
                error: None,
                reason: None,
                t_final: None,
                settling_time: None,
                s1_max: None,
                s2_max: None,
                s3_max: None,
                s5_max: None,
                s5_full_max: None,
                telescoping_residual: None,
                dwell_ok: None,
                budget: None,
                budget_status: None,
            };
            let (traj, sums) = match &run.result {
                Err(e) => {
                    summary.error = Some(e.to_string());
                    (None, None)
                }
                Ok(traj) => {
                    let sums = condition_sums(traj, set)?;
                    summary.reason = Some(traj.reason);
                    summary.t_final = Some(traj.t_final);
                    summary.settling_time = settling_time(traj, opts.origin_tol);
                    summary.s1_max = Some(sums.s1.max_partial());
                    summary.s2_max = Some(sums.s2.max_partial());
                    summary.s3_max = Some(sums.s3_max_partial());
                    summary.s5_max = Some(sums.s5[fts_mode].max_partial());
                    summary.s5_full_max = Some(sums.s5_full[fts_mode].max_partial());
                    summary.telescoping_residual = Some(sums.telescoping_residual);
                    summary.dwell_ok = Some(check_min_dwell(traj, fts_mode, opts.t_d));
                    (Some(traj), Some(sums))
                }
            };
            Ok(Analyzed {
                run,
                traj,
                sums,
                summary,
            })
        })
        .collect()
}

fn envelope_block(
    name: &str,
    analyzed: &[Analyzed<'_>],
    value: impl Fn(&ConditionSums) -> f64,
    tol: f64,
    envelopes: &mut Vec<NamedEnvelope>,
) -> ConditionBlock {
    let samples: Vec<(f64, f64)> = analyzed
        .iter()
        .filter_map(|a| a.sums.as_ref().map(|s| (a.run.radius, value(s))))
        .filter(|(r, _)| *r > 0.0)
        .collect();
    let evidence = analyzed
        .iter()
        .map(|a| Evidence {
            radius: a.run.radius,
            x0: a.run.x0.clone(),
            value: a.sums.as_ref().map(&value),
        })
        .collect();
    let mut block = match fit_gk_envelope(&samples) {
        Err(e) => ConditionBlock::new(name, Status::Inconclusive, None, e.to_string()),
        Ok(env) => {
            let residual = env.origin_value - (tol * env.max_value() + 1e-9);
            let status = if env.passes(tol) { Status::Pass } else { Status::Fail };
            let note = format!(
                "envelope {:.3e} at r = {} vs {:.3e} at r = {}",
                env.origin_value,
                env.radii[0],
                env.max_value(),
                env.radii[env.radii.len() - 1]
            );
            envelopes.push(NamedEnvelope {
                name: name.to_string(),
                envelope: env,
            });
            ConditionBlock::new(name, status, Some(residual), note)
        }
    };
    block.evidence = evidence;
    block
}

fn settling_block(analyzed: &[Analyzed<'_>]) -> ConditionBlock {
    let mut diverged = 0;
    let mut unsettled = 0;
    let mut worst: Option<f64> = None;
    for a in analyzed {
        match (&a.summary.error, a.summary.settling_time, a.summary.reason) {
            (Some(_), _, _) | (None, None, Some(TruncationReason::Diverged)) => diverged += 1,
            (None, Some(t), _) => worst = Some(worst.map_or(t, |w: f64| w.max(t))),
            _ => unsettled += 1,
        }
    }
    let status = if diverged > 0 {
        Status::Fail
    } else if unsettled > 0 || analyzed.is_empty() {
        Status::Inconclusive
    } else {
        Status::Pass
    };
    let mut b = ConditionBlock::new(
        "finite settling",
        status,
        worst,
        format!(
            "{} runs: {} settled, {} not settled within the horizon, {} diverged or failed",
            analyzed.len(),
            analyzed.len() - diverged - unsettled,
            unsettled,
            diverged
        ),
    );
    b.evidence = analyzed
        .iter()
        .map(|a| Evidence {
            radius: a.run.radius,
            x0: a.run.x0.clone(),
            value: a.summary.settling_time,
        })
        .collect();
    b
}

fn telescoping_block(analyzed: &[Analyzed<'_>], tol: f64) -> ConditionBlock {
    let worst = analyzed
        .iter()
        .filter_map(|a| a.summary.telescoping_residual)
        .fold(0.0, f64::max);
    let status = if worst <= tol { Status::Pass } else { Status::Fail };
    ConditionBlock::new(
        "telescoping",
        status,
        Some(worst),
        "V at the end minus V at the start equals the switch, flow and jump sums".into(),
    )
}

fn settled_radius(analyzed: &[Analyzed<'_>]) -> Option<f64> {
    let mut radii: Vec<f64> = analyzed.iter().map(|a| a.run.radius).collect();
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let mut best = None;
    for r in radii {
        if analyzed
            .iter()
            .filter(|a| a.run.radius == r)
            .all(|a| a.summary.settling_time.is_some())
        {
            best = Some(r);
        } else {
            break;
        }
    }
    best
}

fn verdict_of(blocks: &[ConditionBlock]) -> Verdict {
    if blocks.iter().any(|b| b.status == Status::Fail) {
        Verdict::Violated
    } else if blocks.iter().any(|b| b.status == Status::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::FtsEvidence
    }
}

fn pooled_estimate(
    def: &HybridSystemDef,
    set: &LyapunovSet,
    analyzed: &[Analyzed<'_>],
    mode: usize,
    opts: &CertifyOptions,
) -> Result<FtsEstimate, CertError> {
    let mut samples = Vec::new();
    for a in analyzed {
        if let Some(traj) = a.traj {
            samples.extend(decrease_samples(def, traj, set, mode, opts.origin_tol)?);
        }
    }
    Ok(estimate_fts_constants(&samples, &opts.beta_grid))
}

fn decrease_block(
    name: &str,
    def: &HybridSystemDef,
    set: &LyapunovSet,
    analyzed: &[Analyzed<'_>],
    mode: usize,
    constants: Option<FtsConstants>,
    missing: Status,
    opts: &CertifyOptions,
) -> Result<ConditionBlock, CertError> {
    let Some(k) = constants else {
        return Ok(ConditionBlock::new(
            name,
            missing,
            None,
            format!(
                "no (c, beta) with c > {:e} bounds the decrease of V{} on the sampled flow",
                crate::lyapunov::C_THRESHOLD,
                mode + 1
            ),
        ));
    };
    let mut reports: Vec<(f64, Vec<f64>, FlowDecreaseReport)> = Vec::new();
    for a in analyzed {
        if let Some(traj) = a.traj {
            let r = check_flow_decrease(
                def,
                traj,
                set,
                mode,
                k.c,
                k.beta,
                opts.decrease_tol,
                opts.origin_tol,
            )?;
            reports.push((a.run.radius, a.run.x0.clone(), r));
        }
    }
    let with_data: Vec<_> = reports.iter().filter(|r| !r.2.no_data).collect();
    let worst = with_data
        .iter()
        .map(|r| r.2.worst_residual)
        .fold(f64::NEG_INFINITY, f64::max);
    let (status, worst) = if with_data.is_empty() {
        (Status::Inconclusive, None)
    } else if with_data.iter().all(|r| r.2.pass) {
        (Status::Pass, Some(worst))
    } else {
        (Status::Fail, Some(worst))
    };
    let mut b = ConditionBlock::new(
        name,
        status,
        worst,
        format!(
            "V{}' + c V{}^beta <= {:e} with c = {}, beta = {}{}",
            mode + 1,
            mode + 1,
            opts.decrease_tol,
            k.c,
            k.beta,
            if with_data.is_empty() { " (no data)" } else { "" }
        ),
    );
    b.evidence = reports
        .iter()
        .map(|(radius, x0, r)| Evidence {
            radius: *radius,
            x0: x0.clone(),
            value: (!r.no_data).then_some(r.worst_residual),
        })
        .collect();
    Ok(b)
}

/// Evidence for the main multiple-Lyapunov-function theorem over a sweep:
/// envelopes for the switch, flow, jump and switched-off sums, the decrease
/// of `V_F`, the activation budget, the dwell assumption and settling.
pub fn theorem2_verdict(
    def: &HybridSystemDef,
    set: &LyapunovSet,
    runs: &[SweepRun],
    opts: &CertifyOptions,
) -> Result<CertificateReport, CertError> {
    if runs.is_empty() {
        return Err(CertError::EmptySweep);
    }
    set.check_against(def)?;
    let f = def.policy().fts_mode;
    let mut analyzed = analyze(runs, set, f, opts)?;
    let mut envelopes = Vec::new();
    let mut notes = vec![
        "verdicts are numerical evidence over a finite sweep, not proofs".to_string(),
        "jump sums use the per-mode jump terms directly; no mode-count factor is applied".to_string(),
    ];
    let tol = opts.gk_origin_tol;
    let mut blocks = vec![
        envelope_block("(i) switch sum", &analyzed, |s| s.s1.max_partial(), tol, &mut envelopes),
        envelope_block("(ii) flow sum", &analyzed, |s| s.s2.max_partial(), tol, &mut envelopes),
        envelope_block("(iii) jump sum", &analyzed, ConditionSums::s3_max_partial, tol, &mut envelopes),
    ];

    let (constants, estimate, estimated) = match set.fts_constants() {
        Some(k) => (Some(k), None, false),
        None => {
            let est = pooled_estimate(def, set, &analyzed, f, opts)?;
            (est.best, Some(est), true)
        }
    };
    blocks.push(decrease_block(
        "(iv) flow decrease",
        def,
        set,
        &analyzed,
        f,
        constants,
        Status::Inconclusive,
        opts,
    )?);
    blocks.push(envelope_block(
        "(v) switched-off sum",
        &analyzed,
        |s| s.s5[f].max_partial(),
        tol,
        &mut envelopes,
    ));
    let full = envelope_block(
        "(v) switched-off sum, full activations",
        &analyzed,
        |s| s.s5_full[f].max_partial(),
        tol,
        &mut envelopes,
    );
    notes.push(format!(
        "switched-off sum over whole activations (reported only): {:?}",
        full.status
    ));

    // (vi): activation budget
    let budget_block = match constants {
        None => ConditionBlock::new(
            "(vi) activation budget",
            Status::Inconclusive,
            None,
            "no decrease constants for the finite-time-stable mode".into(),
        ),
        Some(k) => {
            let mut worst_excess: Option<f64> = None;
            let mut counts = [0usize; 3];
            let mut evidence = Vec::new();
            for a in analyzed.iter_mut() {
                let Some(traj) = a.traj else { continue };
                let rep = activation_budget_for(traj, set, f, k.c, k.beta)?;
                let converged = traj.reason == TruncationReason::Converged;
                let st = budget_status(&rep, converged, opts.budget_tol);
                counts[st as usize] += 1;
                let excess = rep.achieved - rep.budget;
                worst_excess = Some(worst_excess.map_or(excess, |w| w.max(excess)));
                evidence.push(Evidence {
                    radius: a.run.radius,
                    x0: a.run.x0.clone(),
                    value: Some(rep.budget),
                });
                a.summary.budget = Some(rep);
                a.summary.budget_status = Some(st);
            }
            let status = if counts[BudgetStatus::Contradicted as usize] > 0 {
                Status::Fail
            } else if counts[BudgetStatus::Insufficient as usize] > 0 || evidence.is_empty() {
                Status::Inconclusive
            } else {
                Status::Pass
            };
            let mut b = ConditionBlock::new(
                "(vi) activation budget",
                status,
                worst_excess,
                format!(
                    "{} runs converged within budget, {} ran out of horizon before the budget, {} overran it",
                    counts[0], counts[1], counts[2]
                ),
            );
            b.evidence = evidence;
            b
        }
    };
    blocks.push(budget_block);

    let dwell_fail = analyzed.iter().filter(|a| a.summary.dwell_ok == Some(false)).count();
    blocks.push(ConditionBlock::new(
        "dwell",
        if dwell_fail == 0 { Status::Pass } else { Status::Fail },
        None,
        format!(
            "jump-free activations of mode {} last at least t_d = {} ({} runs fail)",
            f + 1,
            opts.t_d,
            dwell_fail
        ),
    ));
    blocks.push(settling_block(&analyzed));
    blocks.push(telescoping_block(&analyzed, opts.telescoping_tol));

    if runs.iter().all(|r| r.radius == 0.0) {
        notes.push("degenerate sweep: only the origin was sampled".into());
    }
    Ok(CertificateReport {
        theorem: "theorem2".into(),
        verdict: verdict_of(&blocks),
        fts_mode: f,
        conditions: blocks,
        fts_constants: constants,
        constants_estimated: estimated,
        fts_estimate: estimate,
        per_mode_constants: Vec::new(),
        envelopes,
        settled_radius: settled_radius(&analyzed),
        runs: analyzed.into_iter().map(|a| a.summary).collect(),
        notes,
    })
}

/// Evidence for the all-modes-finite-time-stable variant: switch and jump
/// envelopes, a per-mode switched-off envelope, and a decrease bound for
/// every mode.
pub fn theorem3_verdict(
    def: &HybridSystemDef,
    set: &LyapunovSet,
    runs: &[SweepRun],
    opts: &CertifyOptions,
) -> Result<CertificateReport, CertError> {
    if runs.is_empty() {
        return Err(CertError::EmptySweep);
    }
    set.check_against(def)?;
    let f = def.policy().fts_mode;
    let analyzed = analyze(runs, set, f, opts)?;
    let tol = opts.gk_origin_tol;
    let mut envelopes = Vec::new();
    let mut blocks = vec![
        envelope_block("(i) switch sum", &analyzed, |s| s.s1.max_partial(), tol, &mut envelopes),
        envelope_block("(iii) jump sum", &analyzed, ConditionSums::s3_max_partial, tol, &mut envelopes),
    ];
    let mut per_mode = Vec::with_capacity(def.num_modes());
    for m in 0..def.num_modes() {
        let est = pooled_estimate(def, set, &analyzed, m, opts)?;
        let k = if m == f { set.fts_constants().or(est.best) } else { est.best };
        per_mode.push(k);
        blocks.push(decrease_block(
            &format!("flow decrease, mode {}", m + 1),
            def,
            set,
            &analyzed,
            m,
            k,
            Status::Fail,
            opts,
        )?);
        blocks.push(envelope_block(
            &format!("switched-off sum, mode {}", m + 1),
            &analyzed,
            |s| s.s5[m].max_partial(),
            tol,
            &mut envelopes,
        ));
    }
    blocks.push(settling_block(&analyzed));
    blocks.push(telescoping_block(&analyzed, opts.telescoping_tol));
    Ok(CertificateReport {
        theorem: "theorem3".into(),
        verdict: verdict_of(&blocks),
        fts_mode: f,
        conditions: blocks,
        fts_constants: per_mode[f],
        constants_estimated: set.fts_constants().is_none(),
        fts_estimate: None,
        per_mode_constants: per_mode,
        envelopes,
        settled_radius: settled_radius(&analyzed),
        runs: analyzed.into_iter().map(|a| a.summary).collect(),
        notes: vec!["verdicts are numerical evidence over a finite sweep, not proofs".into()],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certification {
    pub verdict: Verdict,
    /// Which report decided the verdict.
    pub decided_by: String,
    pub theorem3: CertificateReport,
    pub theorem2: Option<CertificateReport>,
}

impl Certification {
    pub fn deciding(&self) -> &CertificateReport {
        self.theorem2.as_ref().unwrap_or(&self.theorem3)
    }
}

/// Tries the every-mode-stable check first and falls back to the
/// single-stable-mode check when it does not give evidence.
pub fn certify(
    def: &HybridSystemDef,
    set: &LyapunovSet,
    runs: &[SweepRun],
    opts: &CertifyOptions,
) -> Result<Certification, CertError> {
    let t3 = theorem3_verdict(def, set, runs, opts)?;
    if t3.verdict == Verdict::FtsEvidence {
        return Ok(Certification {
            verdict: t3.verdict,
            decided_by: t3.theorem.clone(),
            theorem3: t3,
            theorem2: None,
        });
    }
    let t2 = theorem2_verdict(def, set, runs, opts)?;
    Ok(Certification {
        verdict: t2.verdict,
        decided_by: t2.theorem.clone(),
        theorem3: t3,
        theorem2: Some(t2),
    })
}
