//! Hybrid system definitions, switching policies and the trajectory data
//! model with its activation-interval bookkeeping.
//!
//! Mode and jump indices are zero-based in this API. File formats, CSV
//! output and reports print them one-based.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, EvalError, Expr, ParseError};

/// Equilibrium residual accepted by [`validate_system`].
pub const EQUILIBRIUM_TOL: f64 = 1e-12;

/// Two event instants closer than this are treated as simultaneous.
pub const EVENT_EPS: f64 = 1e-12;

/// Slack used when comparing interval lengths against a dwell time.
pub const DWELL_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("state dimension must be at least 1")]
    ZeroDimension,
    #[error("a hybrid system needs at least one flow")]
    NoFlows,
    #[error("{what} has {found} components, expected {expected}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("{what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: ParseError,
    },
    #[error("invalid switching policy: {0}")]
    Policy(String),
    #[error("mode index {index} out of range ({count} modes)")]
    ModeOutOfRange { index: usize, count: usize },
}

/// A map ℝⁿ → ℝⁿ given component-wise by expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorMap {
    components: Vec<Expr>,
}

impl VectorMap {
    pub fn new(components: Vec<Expr>) -> Self {
        VectorMap { components }
    }

    pub fn parse<S: AsRef<str>>(sources: &[S], dim: usize) -> Result<Self, ParseError> {
        let components = sources
            .iter()
            .map(|s| expr::parse(s.as_ref(), dim))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VectorMap { components })
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x)?;
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.components.len()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }
}

/// The set `{x : h(x) >= 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Guard {
    pub expr: Expr,
}

impl Guard {
    pub fn parse(src: &str, dim: usize) -> Result<Self, ParseError> {
        Ok(Guard {
            expr: expr::parse(src, dim)?,
        })
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool, EvalError> {
        Ok(self.expr.eval(x)? >= 0.0)
    }
}

/// Which flow is active when, and for how long.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeSchedule {
    /// `(mode, duration)` pairs repeated forever.
    Cyclic(Vec<(usize, f64)>),
    /// `(mode, duration)` pairs played once.
    Finite(Vec<(usize, f64)>),
    /// Uniform random choice among `modes` (never repeating the current
    /// mode when there is a choice); `dwell[k]` is the duration of `modes[k]`.
    Random {
        modes: Vec<usize>,
        dwell: Vec<f64>,
        seed: u64,
    },
    /// `(mode, duration)` pairs played once, after which `hold` is
    /// re-activated every `dwell` seconds (or stays active for good when
    /// `dwell` is `None`).
    ThenHold {
        prefix: Vec<(usize, f64)>,
        hold: usize,
        dwell: Option<f64>,
    },
}

impl ModeSchedule {
    /// Activations `(t_start, mode, t_end)` starting at `t0`, in order.
    pub fn activations(&self, t0: f64) -> Activations<'_> {
        let rng = match self {
            ModeSchedule::Random { seed, .. } => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        let prefix = match self {
            ModeSchedule::Cyclic(seq)
            | ModeSchedule::Finite(seq)
            | ModeSchedule::ThenHold { prefix: seq, .. } => {
                let mut acc = 0.0;
                let mut p = Vec::with_capacity(seq.len() + 1);
                p.push(0.0);
                for (_, d) in seq {
                    acc += d;
                    p.push(acc);
                }
                p
            }
            ModeSchedule::Random { .. } => Vec::new(),
        };
        Activations {
            schedule: self,
            t0,
            prefix,
            index: 0,
            rng,
            last_mode: None,
            t_random: t0,
        }
    }

    /// Modes named by the schedule, in schedule order.
    pub fn modes(&self) -> Vec<usize> {
        match self {
            ModeSchedule::Cyclic(seq) | ModeSchedule::Finite(seq) => {
                seq.iter().map(|(m, _)| *m).collect()
            }
            ModeSchedule::Random { modes, .. } => modes.clone(),
            ModeSchedule::ThenHold { prefix, hold, .. } => {
                prefix.iter().map(|(m, _)| *m).chain([*hold]).collect()
            }
        }
    }

    /// Finite activation durations named by the schedule.
    pub fn durations(&self) -> Vec<f64> {
        match self {
            ModeSchedule::Cyclic(seq) | ModeSchedule::Finite(seq) => {
                seq.iter().map(|(_, d)| *d).collect()
            }
            ModeSchedule::ThenHold { prefix, dwell, .. } => {
                prefix.iter().map(|(_, d)| *d).chain(*dwell).collect()
            }
            ModeSchedule::Random { dwell, .. } => dwell.clone(),
        }
    }

    /// Replace every dwell duration by `dwell`.
    pub fn with_uniform_dwell(&self, dwell: f64) -> ModeSchedule {
        match self {
            ModeSchedule::Cyclic(seq) => {
                ModeSchedule::Cyclic(seq.iter().map(|(m, _)| (*m, dwell)).collect())
            }
            ModeSchedule::Finite(seq) => {
                ModeSchedule::Finite(seq.iter().map(|(m, _)| (*m, dwell)).collect())
            }
            ModeSchedule::Random { modes, seed, .. } => ModeSchedule::Random {
                modes: modes.clone(),
                dwell: vec![dwell; modes.len()],
                seed: *seed,
            },
            ModeSchedule::ThenHold { prefix, hold, dwell: d } => ModeSchedule::ThenHold {
                prefix: prefix.iter().map(|(m, _)| (*m, dwell)).collect(),
                hold: *hold,
                dwell: d.map(|_| dwell),
            },
        }
    }
}

/// Iterator over scheduled activations; see [`ModeSchedule::activations`].
pub struct Activations<'a> {
    schedule: &'a ModeSchedule,
    t0: f64,
    prefix: Vec<f64>,
    index: usize,
    rng: Option<ChaCha8Rng>,
    last_mode: Option<usize>,
    t_random: f64,
}

impl Iterator for Activations<'_> {
    type Item = (f64, usize, f64);

    fn next(&mut self) -> Option<Self::Item> {
        match self.schedule {
            ModeSchedule::Cyclic(seq) => {
                if seq.is_empty() {
                    return None;
                }
                let len = seq.len();
                let cycle = (self.index / len) as f64;
                let j = self.index % len;
                let period = self.prefix[len];
                let start = self.t0 + cycle * period + self.prefix[j];
                let end = if j + 1 == len {
                    self.t0 + (cycle + 1.0) * period
                } else {
                    self.t0 + cycle * period + self.prefix[j + 1]
                };
                self.index += 1;
                Some((start, seq[j].0, end))
            }
            ModeSchedule::Finite(seq) => {
                let j = self.index;
                let item = seq.get(j)?;
                self.index += 1;
                Some((self.t0 + self.prefix[j], item.0, self.t0 + self.prefix[j + 1]))
            }
            ModeSchedule::ThenHold { prefix, hold, dwell } => {
                let j = self.index;
                self.index += 1;
                if let Some(item) = prefix.get(j) {
                    return Some((self.t0 + self.prefix[j], item.0, self.t0 + self.prefix[j + 1]));
                }
                let base = self.t0 + self.prefix[prefix.len()];
                let k = (j - prefix.len()) as f64;
                match dwell {
                    Some(d) => Some((base + k * d, *hold, base + (k + 1.0) * d)),
                    None if k == 0.0 => Some((base, *hold, f64::INFINITY)),
                    None => None,
                }
            }
            ModeSchedule::Random { modes, dwell, .. } => {
                if modes.is_empty() {
                    return None;
                }
                let rng = self.rng.as_mut()?;
                let single = modes.iter().all(|m| *m == modes[0]);
                let k = loop {
                    let k = rng.gen_range(0..modes.len());
                    if single || Some(modes[k]) != self.last_mode {
                        break k;
                    }
                };
                self.last_mode = Some(modes[k]);
                let start = self.t_random;
                self.t_random += dwell[k];
                Some((start, modes[k], self.t_random))
            }
        }
    }
}

/// When jump maps fire.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpSchedule {
    None,
    /// Jump map `jump` fires at `t0 + k·period`, `k = 1, 2, …`.
    Periodic { period: f64, jump: usize },
    /// Explicit `(instant, jump map)` pairs, strictly increasing in time.
    Instants(Vec<(f64, usize)>),
    /// Jump map `jump` fires whenever the state enters the jump guard set D.
    StateTriggered { jump: usize },
}

impl JumpSchedule {
    /// The `k`-th scheduled jump (zero-based), if any.
    pub(crate) fn scheduled(&self, t0: f64, k: usize) -> Option<(f64, usize)> {
        match self {
            JumpSchedule::Periodic { period, jump } => Some((t0 + (k + 1) as f64 * period, *jump)),
            JumpSchedule::Instants(list) => list.get(k).copied(),
            JumpSchedule::None | JumpSchedule::StateTriggered { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingPolicy {
    pub mode_schedule: ModeSchedule,
    pub jump_schedule: JumpSchedule,
    /// Minimum jump-free activation length of the FTS mode, `t_d`.
    pub dwell_min: f64,
    /// The finite-time-stable mode `F`.
    pub fts_mode: usize,
}

/// A hybrid system: flows on C, jumps on D, and the policy that drives them.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridSystemDef {
    n: usize,
    flows: Vec<VectorMap>,
    jumps: Vec<VectorMap>,
    flow_guard: Option<Guard>,
    jump_guard: Option<Guard>,
    policy: SwitchingPolicy,
}

impl HybridSystemDef {
    /// Checks structural invariants (dimensions, indices, policy shape).
    /// The equilibrium condition is reported by [`validate_system`].
    pub fn new(
        n: usize,
        flows: Vec<VectorMap>,
        jumps: Vec<VectorMap>,
        flow_guard: Option<Guard>,
        jump_guard: Option<Guard>,
        policy: SwitchingPolicy,
    ) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::ZeroDimension);
        }
        if flows.is_empty() {
            return Err(ModelError::NoFlows);
        }
        let check = |what: String, m: &VectorMap| {
            if m.dim() != n {
                return Err(ModelError::Dimension {
                    what,
                    expected: n,
                    found: m.dim(),
                });
            }
            if let Some(v) = m.components().iter().filter_map(Expr::max_var).max() {
                if v >= n {
                    return Err(ModelError::Dimension {
                        what,
                        expected: n,
                        found: v + 1,
                    });
                }
            }
            Ok(())
        };
        for (i, f) in flows.iter().enumerate() {
            check(format!("flow f{}", i + 1), f)?;
        }
        for (j, g) in jumps.iter().enumerate() {
            check(format!("jump g{}", j + 1), g)?;
        }
        for (name, guard) in [("flow guard", &flow_guard), ("jump guard", &jump_guard)] {
            if let Some(v) = guard.as_ref().and_then(|g| g.expr.max_var()) {
                if v >= n {
                    return Err(ModelError::Dimension {
                        what: name.into(),
                        expected: n,
                        found: v + 1,
                    });
                }
            }
        }
        check_policy(&policy, flows.len(), jumps.len(), jump_guard.is_some())?;
        Ok(HybridSystemDef {
            n,
            flows,
            jumps,
            flow_guard,
            jump_guard,
            policy,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn flows(&self) -> &[VectorMap] {
        &self.flows
    }

    pub fn jumps(&self) -> &[VectorMap] {
        &self.jumps
    }

    pub fn flow_guard(&self) -> Option<&Guard> {
        self.flow_guard.as_ref()
    }

    pub fn jump_guard(&self) -> Option<&Guard> {
        self.jump_guard.as_ref()
    }

    pub fn policy(&self) -> &SwitchingPolicy {
        &self.policy
    }

    pub fn num_modes(&self) -> usize {
        self.flows.len()
    }

    /// Same system under a different policy.
    pub fn with_policy(&self, policy: SwitchingPolicy) -> Result<Self, ModelError> {
        HybridSystemDef::new(
            self.n,
            self.flows.clone(),
            self.jumps.clone(),
            self.flow_guard.clone(),
            self.jump_guard.clone(),
            policy,
        )
    }
}

fn check_policy(
    policy: &SwitchingPolicy,
    num_flows: usize,
    num_jumps: usize,
    has_jump_guard: bool,
) -> Result<(), ModelError> {
    let bad = |m: String| Err(ModelError::Policy(m));
    let modes = policy.mode_schedule.modes();
    let durations = policy.mode_schedule.durations();
    if modes.is_empty() {
        return bad("mode schedule is empty".into());
    }
    if let ModeSchedule::Random { modes, dwell, .. } = &policy.mode_schedule {
        if modes.len() != dwell.len() {
            return bad("random schedule needs one dwell duration per mode".into());
        }
    }
    if let Some(&m) = modes.iter().find(|&&m| m >= num_flows) {
        return Err(ModelError::ModeOutOfRange {
            index: m,
            count: num_flows,
        });
    }
    if durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return bad("dwell durations must be positive".into());
    }
    if !(policy.dwell_min.is_finite() && policy.dwell_min > 0.0) {
        return bad("t_d must be positive".into());
    }
    if policy.fts_mode >= num_flows {
        return Err(ModelError::ModeOutOfRange {
            index: policy.fts_mode,
            count: num_flows,
        });
    }
    let check_jump = |j: usize| {
        if j >= num_jumps {
            Err(ModelError::Policy(format!(
                "jump map g{} does not exist ({num_jumps} jump maps)",
                j + 1
            )))
        } else {
            Ok(())
        }
    };
    match &policy.jump_schedule {
        JumpSchedule::None => {}
        JumpSchedule::Periodic { period, jump } => {
            if !(period.is_finite() && *period > 0.0) {
                return bad("jump period must be positive".into());
            }
            check_jump(*jump)?;
        }
        JumpSchedule::Instants(list) => {
            for w in list.windows(2) {
                if !(w[1].0 > w[0].0) {
                    return bad("scheduled jump instants must be strictly increasing".into());
                }
            }
            for (t, j) in list {
                if !t.is_finite() {
                    return bad("jump instants must be finite".into());
                }
                check_jump(*j)?;
            }
        }
        JumpSchedule::StateTriggered { jump } => {
            check_jump(*jump)?;
            if !has_jump_guard {
                return bad("state-triggered jumps need a jump guard".into());
            }
        }
    }
    Ok(())
}

/// A failed invariant reported by [`validate_system`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    /// `‖f_i(0)‖ > 0`; `index` is zero-based.
    FlowNotZeroAtOrigin { index: usize, residual: f64 },
    JumpNotZeroAtOrigin { index: usize, residual: f64 },
    FlowEvalFailed { index: usize, message: String },
    JumpEvalFailed { index: usize, message: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FlowNotZeroAtOrigin { index, residual } => write!(
                f,
                "flow f{}: f(0) = {residual} ≠ 0 (origin is not an equilibrium)",
                index + 1
            ),
            Violation::JumpNotZeroAtOrigin { index, residual } => write!(
                f,
                "jump g{}: g(0) = {residual} ≠ 0 (origin is not an equilibrium)",
                index + 1
            ),
            Violation::FlowEvalFailed { index, message } => {
                write!(f, "flow f{}: cannot evaluate at 0: {message}", index + 1)
            }
            Violation::JumpEvalFailed { index, message } => {
                write!(f, "jump g{}: cannot evaluate at 0: {message}", index + 1)
            }
        }
    }
}

/// Checks that the origin is an equilibrium of every flow and jump map.
pub fn validate_system(def: &HybridSystemDef) -> Vec<Violation> {
    let zero = vec![0.0; def.dim()];
    let mut out = Vec::new();
    for (index, f) in def.flows().iter().enumerate() {
        match f.eval(&zero) {
            Ok(v) => {
                let residual = norm(&v);
                if residual > EQUILIBRIUM_TOL {
                    out.push(Violation::FlowNotZeroAtOrigin { index, residual });
                }
            }
            Err(e) => out.push(Violation::FlowEvalFailed {
                index,
                message: e.to_string(),
            }),
        }
    }
    for (index, g) in def.jumps().iter().enumerate() {
        match g.eval(&zero) {
            Ok(v) => {
                let residual = norm(&v);
                if residual > EQUILIBRIUM_TOL {
                    out.push(Violation::JumpNotZeroAtOrigin { index, residual });
                }
            }
            Err(e) => out.push(Violation::JumpEvalFailed {
                index,
                message: e.to_string(),
            }),
        }
    }
    out
}

/// Euclidean norm; rescales when the plain sum of squares overflows or
/// underflows.
pub fn norm(x: &[f64]) -> f64 {
    let plain = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if plain.is_finite() && (plain > 0.0 || x.iter().all(|v| *v == 0.0)) {
        return plain;
    }
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !m.is_finite() || m == 0.0 {
        return m;
    }
    m * x.iter().map(|v| (v / m) * (v / m)).sum::<f64>().sqrt()
}

/// Why a simulation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationReason {
    Horizon,
    Converged,
    Diverged,
    LeftFlowSet,
}

impl fmt::Display for TruncationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TruncationReason::Horizon => "horizon",
            TruncationReason::Converged => "converged",
            TruncationReason::Diverged => "diverged",
            TruncationReason::LeftFlowSet => "left_flow_set",
        })
    }
}

/// One activation of a flow over `[t_start, t_end)`.
///
/// Samples are stored flat (`states[k*n..(k+1)*n]` belongs to `times[k]`).
/// The first sample is at `t_start`, the last at `t_end` (the left limit).
/// A jump inside the segment appears as two samples with the same time:
/// the state before, then the state after.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSegment {
    pub mode: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// False when the segment was cut short by the horizon or a truncation
    /// rather than ending at a scheduled switch.
    pub complete: bool,
    n: usize,
    times: Vec<f64>,
    states: Vec<f64>,
}

impl FlowSegment {
    pub fn new(mode: usize, t_start: f64, n: usize) -> Self {
        FlowSegment {
            mode,
            t_start,
            t_end: t_start,
            complete: false,
            n,
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.n);
        self.times.push(t);
        self.states.extend_from_slice(x);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.times
            .iter()
            .copied()
            .zip(self.states.chunks_exact(self.n.max(1)))
    }

    pub fn first_state(&self) -> &[f64] {
        self.state(0)
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpEvent {
    pub t: f64,
    pub jump_index: usize,
    pub x_before: Vec<f64>,
    pub x_after: Vec<f64>,
    pub active_mode: usize,
    /// Index of the segment the jump belongs to.
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridTrajectory {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub num_modes: usize,
    pub segments: Vec<FlowSegment>,
    pub jump_events: Vec<JumpEvent>,
    pub reason: TruncationReason,
    /// Time at which the simulation stopped.
    pub t_final: f64,
}

impl HybridTrajectory {
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn final_state(&self) -> &[f64] {
        self.segments
            .last()
            .map_or(self.x0.as_slice(), |s| s.last_state())
    }

    /// Every stored sample, in time order, with its segment's mode.
    pub fn samples(&self) -> impl Iterator<Item = (usize, f64, &[f64])> + '_ {
        self.segments
            .iter()
            .flat_map(|s| s.samples().map(move |(t, x)| (s.mode, t, x)))
    }

    /// Activation boundaries crossed; re-activating the same mode counts.
    pub fn switch_count(&self) -> usize {
        self.segments.len().saturating_sub(1)
    }
}

/// Half-open time interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Interval { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Activation bookkeeping for one mode: the intervals `T_{i_k}`, the jump
/// instants `J_i` falling inside them, and the longest jump-free
/// sub-interval of each activation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeIntervals {
    pub mode: usize,
    pub activations: Vec<Interval>,
    /// Jump instants per activation.
    pub jumps: Vec<Vec<f64>>,
    pub jump_free: Vec<Interval>,
    /// Whether each activation ended at a scheduled switch.
    pub complete: Vec<bool>,
    /// Segment index of each activation.
    pub segment: Vec<usize>,
}

impl ModeIntervals {
    /// `J_i` as a flat ordered list.
    pub fn jump_set(&self) -> Vec<f64> {
        self.jumps.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("mode index {index} out of range ({count} modes)")]
pub struct ModeRangeError {
    pub index: usize,
    pub count: usize,
}

/// Longest connected sub-interval of `interval` whose interior contains
/// none of `jumps`. Ties go to the earliest start.
pub fn longest_jump_free(interval: Interval, jumps: &[f64]) -> Interval {
    let mut cuts: Vec<f64> = jumps
        .iter()
        .copied()
        .filter(|t| *t > interval.start && *t < interval.end)
        .collect();
    cuts.sort_by(f64::total_cmp);
    let mut best = Interval::new(interval.start, interval.start);
    let mut left = interval.start;
    for right in cuts.into_iter().chain(std::iter::once(interval.end)) {
        let candidate = Interval::new(left, right);
        if candidate.len() > best.len() + EVENT_EPS {
            best = candidate;
        }
        left = right;
    }
    best
}

/// Activation intervals, jump sets and jump-free windows of `mode`.
pub fn segment_intervals(
    traj: &HybridTrajectory,
    mode: usize,
) -> Result<ModeIntervals, ModeRangeError> {
    if mode >= traj.num_modes {
        return Err(ModeRangeError {
            index: mode,
            count: traj.num_modes,
        });
    }
    let mut out = ModeIntervals {
        mode,
        activations: Vec::new(),
        jumps: Vec::new(),
        jump_free: Vec::new(),
        complete: Vec::new(),
        segment: Vec::new(),
    };
    for (k, seg) in traj.segments.iter().enumerate() {
        if seg.mode != mode {
            continue;
        }
        let interval = Interval::new(seg.t_start, seg.t_end);
        let jumps: Vec<f64> = traj
            .jump_events
            .iter()
            .filter(|j| j.segment == k)
            .map(|j| j.t)
            .collect();
        out.jump_free.push(longest_jump_free(interval, &jumps));
        out.activations.push(interval);
        out.jumps.push(jumps);
        out.complete.push(seg.complete);
        out.segment.push(k);
    }
    Ok(out)
}

/// True iff every length is at least `t_d` (up to [`DWELL_EPS`]).
pub fn min_dwell_holds(lengths: &[f64], t_d: f64) -> bool {
    lengths.iter().all(|l| *l >= t_d - DWELL_EPS)
}

/// Minimum dwell condition on the jump-free windows of `mode`. A final
/// activation cut short by the end of the simulation is not judged.
pub fn check_min_dwell(traj: &HybridTrajectory, mode: usize, t_d: f64) -> bool {
    let Ok(iv) = segment_intervals(traj, mode) else {
        return false;
    };
    let lengths: Vec<f64> = iv
        .jump_free
        .iter()
        .zip(&iv.complete)
        .filter(|(_, complete)| **complete)
        .map(|(w, _)| w.len())
        .collect();
    min_dwell_holds(&lengths, t_d)
}

/// Average-dwell-time jump counting: `N([t1, t2]) <= n0 + delta (t2 - t1)`
/// over every window spanned by two jump instants.
pub fn adt_holds(jump_times: &[f64], n0: usize, delta: f64) -> bool {
    let mut times = jump_times.to_vec();
    times.sort_by(f64::total_cmp);
    for a in 0..times.len() {
        for b in a..times.len() {
            let count = (b - a + 1) as f64;
            if count > n0 as f64 + delta * (times[b] - times[a]) + DWELL_EPS {
                return false;
            }
        }
    }
    true
}

pub fn adt_count_check(traj: &HybridTrajectory, n0: usize, delta: f64) -> bool {
    let times: Vec<f64> = traj.jump_events.iter().map(|j| j.t).collect();
    adt_holds(&times, n0, delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flows(srcs: &[&[&str]], n: usize) -> Vec<VectorMap> {
        srcs.iter().map(|s| VectorMap::parse(s, n).unwrap()).collect()
    }

    fn policy(seq: Vec<(usize, f64)>) -> SwitchingPolicy {
        SwitchingPolicy {
            mode_schedule: ModeSchedule::Cyclic(seq),
            jump_schedule: JumpSchedule::None,
            dwell_min: 0.1,
            fts_mode: 0,
        }
    }

    #[test]
    fn validate_reports_nonzero_flow() {
        let def = HybridSystemDef::new(
            1,
            flows(&[&["-x1"], &["x1 + 1"]], 1),
            flows(&[&["-1.1*x1"]], 1),
            None,
            None,
            policy(vec![(0, 1.0), (1, 1.0)]),
        )
        .unwrap();
        let v = validate_system(&def);
        assert_eq!(
            v,
            vec![Violation::FlowNotZeroAtOrigin {
                index: 1,
                residual: 1.0
            }]
        );
        assert!(v[0].to_string().contains("f(0) = 1 ≠ 0"));
    }

    #[test]
    fn sign_flipping_jump_is_an_equilibrium_map() {
        let def = HybridSystemDef::new(
            2,
            flows(&[&["-x1", "-x2"]], 2),
            flows(&[&["-1.1*x1", "-1.1*x2"]], 2),
            None,
            None,
            policy(vec![(0, 1.0)]),
        )
        .unwrap();
        assert!(validate_system(&def).is_empty());
    }

    #[test]
    fn structural_errors() {
        let err = HybridSystemDef::new(
            2,
            flows(&[&["-x1"]], 2),
            vec![],
            None,
            None,
            policy(vec![(0, 1.0)]),
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Dimension { .. }));
        let err = HybridSystemDef::new(
            1,
            flows(&[&["-x1"]], 1),
            vec![],
            None,
            None,
            policy(vec![(2, 1.0)]),
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::ModeOutOfRange { index: 2, .. }));
        let mut p = policy(vec![(0, 1.0)]);
        p.jump_schedule = JumpSchedule::Instants(vec![(0.5, 0), (0.5, 0)]);
        let err = HybridSystemDef::new(
            1,
            flows(&[&["-x1"]], 1),
            flows(&[&["x1"]], 1),
            None,
            None,
            p,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Policy(_)));
        let err = HybridSystemDef::new(
            1,
            flows(&[&["-x1"]], 1),
            vec![],
            None,
            None,
            policy(vec![(0, 0.0)]),
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Policy(_)));
    }

    #[test]
    fn jump_free_window_examples() {
        let unit = Interval::new(0.0, 1.0);
        assert_eq!(
            longest_jump_free(unit, &[0.2, 0.4, 0.75]),
            Interval::new(0.4, 0.75)
        );
        assert_eq!(longest_jump_free(unit, &[]), unit);
        assert_eq!(longest_jump_free(unit, &[0.5]), Interval::new(0.0, 0.5));
        // jumps on the boundary do not split the interval
        assert_eq!(longest_jump_free(unit, &[0.0]), unit);
    }

    #[test]
    fn dwell_examples() {
        assert!(min_dwell_holds(&[0.1, 0.1, 0.12], 0.1));
        assert!(!min_dwell_holds(&[0.09], 0.1));
        assert!(min_dwell_holds(&[], 0.1));
        // floating-point window lengths such as 0.9 - 0.8
        assert!(min_dwell_holds(&[0.9 - 0.8], 0.1));
    }

    #[test]
    fn adt_examples() {
        let jumps: Vec<f64> = (1..=10).map(|k| 0.1 * k as f64).collect();
        assert!(adt_holds(&jumps, 1, 10.0));
        assert!(!adt_holds(&jumps, 1, 0.0));
        assert!(adt_holds(&[], 1, 0.0));
    }

    #[test]
    fn cyclic_schedule_has_no_drift() {
        let s = ModeSchedule::Cyclic(vec![(0, 0.2), (1, 0.2), (2, 0.2), (3, 0.2), (4, 0.2)]);
        let acts: Vec<_> = s.activations(0.0).take(101).collect();
        let (start, mode, end) = acts[100];
        assert_eq!(mode, 0);
        assert!((start - 20.0).abs() < 1e-12);
        assert!((end - 20.2).abs() < 1e-12);
        for w in acts.windows(2) {
            assert_eq!(w[0].2, w[1].0);
        }
    }

    #[test]
    fn random_schedule_is_seeded_and_never_repeats() {
        let s = ModeSchedule::Random {
            modes: vec![0, 1, 2],
            dwell: vec![0.1, 0.2, 0.3],
            seed: 7,
        };
        let a: Vec<_> = s.activations(0.0).take(50).collect();
        let b: Vec<_> = s.activations(0.0).take(50).collect();
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert_ne!(w[0].1, w[1].1);
            assert_eq!(w[0].2, w[1].0);
        }
    }

    #[test]
    fn finite_schedule_ends() {
        let s = ModeSchedule::Finite(vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(s.activations(1.0).count(), 2);
    }

    #[test]
    fn norm_survives_extreme_magnitudes() {
        assert!((norm(&[3e200, 4e200]) / 5e200 - 1.0).abs() < 1e-15);
        assert!((norm(&[3e-200, 4e-200]) / 5e-200 - 1.0).abs() < 1e-15);
        assert_eq!(norm(&[0.0, 0.0]), 0.0);
        assert!(norm(&[f64::NAN, 1.0]).is_nan());
    }

    #[test]
    fn hold_schedule_keeps_last_mode() {
        let s = ModeSchedule::ThenHold {
            prefix: vec![(0, 0.2), (1, 0.2)],
            hold: 2,
            dwell: None,
        };
        let acts: Vec<_> = s.activations(0.0).collect();
        assert_eq!(acts.len(), 3);
        assert_eq!(acts[2].0, 0.4);
        assert_eq!(acts[2].1, 2);
        assert!(acts[2].2.is_infinite());

        let s = ModeSchedule::ThenHold {
            prefix: vec![(0, 0.25)],
            hold: 1,
            dwell: Some(0.5),
        };
        let acts: Vec<_> = s.activations(1.0).take(4).collect();
        assert_eq!(acts[1], (1.25, 1, 1.75));
        assert_eq!(acts[3], (2.25, 1, 2.75));
    }
}
