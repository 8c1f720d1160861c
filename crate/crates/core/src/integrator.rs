//! Event-driven fixed-step integration of hybrid systems.
//!
//! Inside a segment the active flow is advanced with classical RK4 at a
//! fixed step. Steps are shortened so that scheduled switches and jumps
//! fall exactly on step boundaries. State-triggered jumps (entry into the
//! jump guard D) and exits from the flow set C are located by bisection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::model::{
    norm, validate_system, FlowSegment, HybridSystemDef, HybridTrajectory, JumpEvent,
    JumpSchedule, TruncationReason, VectorMap, Violation, EVENT_EPS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationConfig {
    pub t0: f64,
    /// Base step (seconds).
    pub dt: f64,
    /// Horizon (seconds).
    pub t_end: f64,
    /// Bisection tolerance for guard crossings (seconds).
    pub guard_tol: f64,
    /// Norm below which the state is declared to have reached the origin.
    pub origin_tol: f64,
    /// Norm above which the trajectory is declared divergent.
    pub max_norm: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            t0: 0.0,
            dt: 1e-4,
            t_end: 20.0,
            guard_tol: 1e-9,
            origin_tol: 1e-9,
            max_norm: 1e9,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<(), IntegrationError> {
        let bad = |m: &str| Err(IntegrationError::InvalidConfig(m.to_string()));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.guard_tol > 0.0 && self.guard_tol <= self.dt) {
            return bad("guard_tol must be positive and at most dt");
        }
        if !(self.origin_tol > 0.0) {
            return bad("origin_tol must be positive");
        }
        if !(self.max_norm > 0.0) {
            return bad("max_norm must be positive");
        }
        if !(self.t0.is_finite() && self.t_end.is_finite() && self.t_end > self.t0) {
            return bad("t_end must be finite and after t0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error)]
pub enum IntegrationError {
    #[error("system violates its assumptions: {}", join(.0))]
    InvalidSystem(Vec<Violation>),
    #[error("invalid integration config: {0}")]
    InvalidConfig(String),
    #[error("invalid initial state: {0}")]
    InitialState(String),
    #[error("non-finite state at t = {t} in mode {}: {message}", .mode + 1)]
    NonFinite {
        t: f64,
        mode: usize,
        message: String,
    },
    #[error("mode schedule exhausted at t = {t}, before the horizon")]
    ScheduleExhausted { t: f64 },
    #[error("guard predicate does not change over the bracket")]
    NoSignChange,
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Scratch space for RK4 stages.
struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Rk4 {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    fn step(&mut self, f: &VectorMap, x: &[f64], h: f64, out: &mut [f64]) -> Result<(), EvalError> {
        let n = x.len();
        f.eval_into(x, &mut self.k1)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        f.eval_into(&self.tmp, &mut self.k2)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        f.eval_into(&self.tmp, &mut self.k3)?;
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        f.eval_into(&self.tmp, &mut self.k4)?;
        for i in 0..n {
            out[i] = x[i] + h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

/// One classical RK4 step of size `h`.
pub fn rk4_step(f: &VectorMap, x: &[f64], h: f64) -> Result<Vec<f64>, EvalError> {
    let mut out = vec![0.0; x.len()];
    Rk4::new(x.len()).step(f, x, h, &mut out)?;
    Ok(out)
}

/// Bisection on integration sub-steps for the instant at which `pred`
/// changes value between `(t_lo, x_lo)` and `(t_hi, x_hi)`. Returns the
/// upper end of the final bracket (width ≤ `guard_tol`) and its state.
pub fn locate_guard_crossing<P>(
    f: &VectorMap,
    pred: P,
    t_lo: f64,
    t_hi: f64,
    x_lo: &[f64],
    x_hi: &[f64],
    guard_tol: f64,
) -> Result<(f64, Vec<f64>), IntegrationError>
where
    P: Fn(&[f64]) -> Result<bool, EvalError>,
{
    let eval_err = |t: f64, e: EvalError| IntegrationError::NonFinite {
        t,
        mode: 0,
        message: e.to_string(),
    };
    let p_lo = pred(x_lo).map_err(|e| eval_err(t_lo, e))?;
    let p_hi = pred(x_hi).map_err(|e| eval_err(t_hi, e))?;
    if p_lo == p_hi {
        return Err(IntegrationError::NoSignChange);
    }
    let mut rk = Rk4::new(x_lo.len());
    let (mut a, mut xa) = (t_lo, x_lo.to_vec());
    let (mut b, mut xb) = (t_hi, x_hi.to_vec());
    let mut xm = vec![0.0; x_lo.len()];
    while b - a > guard_tol {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        rk.step(f, &xa, m - a, &mut xm).map_err(|e| eval_err(m, e))?;
        if pred(&xm).map_err(|e| eval_err(m, e))? == p_lo {
            a = m;
            xa.copy_from_slice(&xm);
        } else {
            b = m;
            xb.copy_from_slice(&xm);
        }
    }
    Ok((b, xb))
}

/// Point of the chord `[a, b]` closest to the origin, as `(s, distance)`
/// with the point at `a + s (b - a)`.
fn chord_closest(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut ab = 0.0;
    let mut dd = 0.0;
    for (ai, bi) in a.iter().zip(b) {
        let d = bi - ai;
        ab += ai * d;
        dd += d * d;
    }
    let s = if dd > 0.0 { (-ab / dd).clamp(0.0, 1.0) } else { 1.0 };
    let dist = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| {
            let p = ai + s * (bi - ai);
            p * p
        })
        .sum::<f64>()
        .sqrt();
    (s, dist)
}

struct Run<'a> {
    def: &'a HybridSystemDef,
    cfg: &'a IntegrationConfig,
    traj: HybridTrajectory,
    x: Vec<f64>,
    t: f64,
    jump_cursor: usize,
    next_jump: Option<(f64, usize)>,
}

enum Stop {
    Continue,
    Done(TruncationReason),
}

impl Run<'_> {
    fn advance_jump_cursor(&mut self) {
        self.jump_cursor += 1;
        self.next_jump = self
            .def
            .policy()
            .jump_schedule
            .scheduled(self.cfg.t0, self.jump_cursor);
    }

    fn apply_jump(&mut self, seg: &mut FlowSegment, jump: usize) -> Result<Stop, IntegrationError> {
        let g = &self.def.jumps()[jump];
        let after = g.eval(&self.x).map_err(|e| IntegrationError::NonFinite {
            t: self.t,
            mode: seg.mode,
            message: e.to_string(),
        })?;
        self.traj.jump_events.push(JumpEvent {
            t: self.t,
            jump_index: jump,
            x_before: self.x.clone(),
            x_after: after.clone(),
            active_mode: seg.mode,
            segment: self.traj.segments.len(),
        });
        self.x = after;
        seg.push(self.t, &self.x);
        Ok(self.norm_stop())
    }

    fn norm_stop(&self) -> Stop {
        let r = norm(&self.x);
        if r <= self.cfg.origin_tol {
            Stop::Done(TruncationReason::Converged)
        } else if r >= self.cfg.max_norm {
            Stop::Done(TruncationReason::Diverged)
        } else {
            Stop::Continue
        }
    }
}

/// Simulates `def` from `x0` over `[cfg.t0, cfg.t_end)`.
pub fn simulate(
    def: &HybridSystemDef,
    x0: &[f64],
    cfg: &IntegrationConfig,
) -> Result<HybridTrajectory, IntegrationError> {
    let violations = validate_system(def);
    if !violations.is_empty() {
        return Err(IntegrationError::InvalidSystem(violations));
    }
    cfg.validate()?;
    let n = def.dim();
    if x0.len() != n {
        return Err(IntegrationError::InitialState(format!(
            "expected {n} components, got {}",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(IntegrationError::InitialState("x0 must be finite".into()));
    }

    let policy = def.policy();
    let mut run = Run {
        def,
        cfg,
        traj: HybridTrajectory {
            t0: cfg.t0,
            x0: x0.to_vec(),
            num_modes: def.num_modes(),
            segments: Vec::new(),
            jump_events: Vec::new(),
            reason: TruncationReason::Horizon,
            t_final: cfg.t0,
        },
        x: x0.to_vec(),
        t: cfg.t0,
        jump_cursor: 0,
        next_jump: policy.jump_schedule.scheduled(cfg.t0, 0),
    };
    // scheduled instants before t0 never fire
    while matches!(run.next_jump, Some((tj, _)) if tj < cfg.t0 - EVENT_EPS) {
        run.advance_jump_cursor();
    }
    if norm(x0) <= cfg.origin_tol {
        run.traj.reason = TruncationReason::Converged;
        return Ok(run.traj);
    }

    let triggered_jump = match policy.jump_schedule {
        JumpSchedule::StateTriggered { jump } => Some(jump),
        _ => None,
    };
    let jump_guard = def.jump_guard();
    let flow_guard = def.flow_guard();
    let eval_err = |t: f64, mode: usize, e: EvalError| IntegrationError::NonFinite {
        t,
        mode,
        message: e.to_string(),
    };

    let mut rk = Rk4::new(n);
    let mut x_new = vec![0.0; n];
    let mut pred = vec![0.0; n];
    let mut activations = policy.mode_schedule.activations(cfg.t0);

    loop {
        let Some((_, mode, switch_at)) = activations.next() else {
            return Err(IntegrationError::ScheduleExhausted { t: run.t });
        };
        let flow = &def.flows()[mode];
        let seg_end = switch_at.min(cfg.t_end);
        let mut seg = FlowSegment::new(mode, run.t, n);
        seg.push(run.t, &run.x);

        let mut stop = Stop::Continue;
        // a jump coinciding with the switch fires after it
        while let Some((tj, j)) = run.next_jump {
            if tj > run.t + EVENT_EPS || tj >= cfg.t_end - EVENT_EPS {
                break;
            }
            run.advance_jump_cursor();
            stop = run.apply_jump(&mut seg, j)?;
            if matches!(stop, Stop::Done(_)) {
                break;
            }
        }
        let mut in_d = match (triggered_jump, jump_guard) {
            (Some(_), Some(d)) => d.contains(&run.x).map_err(|e| eval_err(run.t, mode, e))?,
            _ => false,
        };

        while matches!(stop, Stop::Continue) && run.t < seg_end - EVENT_EPS {
            let jump_target = run
                .next_jump
                .filter(|(tj, _)| *tj < switch_at - EVENT_EPS && *tj < cfg.t_end - EVENT_EPS);
            let target = jump_target.map_or(seg_end, |(tj, _)| tj);
            let remaining = target - run.t;
            let landing = remaining <= cfg.dt * (1.0 + 1e-9);
            let h = if landing { remaining } else { cfg.dt };
            rk.step(flow, &run.x, h, &mut x_new)
                .map_err(|e| eval_err(run.t, mode, e))?;
            if x_new.iter().any(|v| !v.is_finite()) {
                return Err(IntegrationError::NonFinite {
                    t: run.t + h,
                    mode,
                    message: "state left the floating-point range".into(),
                });
            }
            let mut t_new = if landing { target } else { run.t + h };
            let mut fire_scheduled = landing && jump_target.is_some();
            let mut fire_triggered = None;

            if let Some(c) = flow_guard {
                let inside = |x: &[f64]| c.contains(x);
                let was_in = inside(&run.x).map_err(|e| eval_err(run.t, mode, e))?;
                let now_in = inside(&x_new).map_err(|e| eval_err(t_new, mode, e))?;
                if was_in && !now_in {
                    let (tc, xc) = locate_guard_crossing(
                        flow, inside, run.t, t_new, &run.x, &x_new, cfg.guard_tol,
                    )?;
                    seg.push(tc, &xc);
                    run.t = tc;
                    run.x = xc;
                    stop = Stop::Done(TruncationReason::LeftFlowSet);
                    break;
                }
            }
            if let (Some(j), Some(d)) = (triggered_jump, jump_guard) {
                let now_in = d.contains(&x_new).map_err(|e| eval_err(t_new, mode, e))?;
                if !in_d && now_in {
                    let (tc, xc) = locate_guard_crossing(
                        flow,
                        |x: &[f64]| d.contains(x),
                        run.t,
                        t_new,
                        &run.x,
                        &x_new,
                        cfg.guard_tol,
                    )?;
                    t_new = tc;
                    x_new.copy_from_slice(&xc);
                    fire_scheduled = false;
                    fire_triggered = Some(j);
                }
                in_d = now_in;
            }

            // Arrival at the origin inside the step: either the RK4 chord or
            // the Euler predictor passes within origin_tol. The predictor
            // catches non-Lipschitz flows whose RK4 map chatters at a small
            // nonzero state.
            let h_eff = t_new - run.t;
            for i in 0..n {
                pred[i] = run.x[i] + h_eff * rk.k1[i];
            }
            let (s, dist) = chord_closest(&run.x, &x_new);
            let (sp, dist_p) = chord_closest(&run.x, &pred);
            let hit = if dist <= cfg.origin_tol {
                Some((s, &x_new))
            } else if dist_p <= cfg.origin_tol {
                Some((sp, &pred))
            } else {
                None
            };
            if let Some((s, end)) = hit {
                run.t += s * h_eff;
                for (xi, ei) in run.x.iter_mut().zip(end.iter()) {
                    *xi += s * (ei - *xi);
                }
                seg.push(run.t, &run.x);
                stop = Stop::Done(TruncationReason::Converged);
                break;
            }
            run.t = t_new;
            run.x.copy_from_slice(&x_new);
            seg.push(run.t, &run.x);
            stop = run.norm_stop();
            if matches!(stop, Stop::Done(_)) {
                break;
            }
            if fire_scheduled {
                let (_, j) = jump_target.expect("landing on a scheduled jump");
                run.advance_jump_cursor();
                stop = run.apply_jump(&mut seg, j)?;
            } else if let Some(j) = fire_triggered {
                stop = run.apply_jump(&mut seg, j)?;
                if let Some(d) = jump_guard {
                    in_d = d.contains(&run.x).map_err(|e| eval_err(run.t, mode, e))?;
                }
            }
        }

        seg.t_end = run.t;
        seg.complete = matches!(stop, Stop::Continue) && switch_at <= cfg.t_end + EVENT_EPS;
        if seg.t_end - seg.t_start > 0.0 || run.traj.segments.is_empty() {
            run.traj.segments.push(seg);
        }
        if let Stop::Done(reason) = stop {
            run.traj.reason = reason;
            break;
        }
        if run.t >= cfg.t_end - EVENT_EPS {
            run.traj.reason = TruncationReason::Horizon;
            break;
        }
    }
    run.traj.t_final = run.t;
    Ok(run.traj)
}

/// First time after which every remaining sample has `‖x‖ <= tol`.
pub fn settling_time(traj: &HybridTrajectory, tol: f64) -> Option<f64> {
    let mut candidate = if norm(&traj.x0) <= tol {
        Some(traj.t0)
    } else {
        None
    };
    for (_, t, x) in traj.samples() {
        if norm(x) > tol {
            candidate = None;
        } else if candidate.is_none() {
            candidate = Some(t);
        }
    }
    candidate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Guard, ModeSchedule, SwitchingPolicy};

    fn single_flow(srcs: &[&str], jumps: JumpSchedule, g: Option<&[&str]>) -> HybridSystemDef {
        let n = srcs.len();
        HybridSystemDef::new(
            n,
            vec![VectorMap::parse(srcs, n).unwrap()],
            g.map(|g| vec![VectorMap::parse(g, n).unwrap()])
                .unwrap_or_default(),
            None,
            None,
            SwitchingPolicy {
                mode_schedule: ModeSchedule::Cyclic(vec![(0, 1.0)]),
                jump_schedule: jumps,
                dwell_min: 0.1,
                fts_mode: 0,
            },
        )
        .unwrap()
    }

    #[test]
    fn origin_is_converged_at_start() {
        let def = single_flow(&["-x1", "-x2"], JumpSchedule::None, None);
        let traj = simulate(&def, &[0.0, 0.0], &IntegrationConfig::default()).unwrap();
        assert_eq!(traj.reason, TruncationReason::Converged);
        assert!(traj.segments.is_empty());
        assert_eq!(traj.t_final, 0.0);
        assert_eq!(settling_time(&traj, 1e-9), Some(0.0));
    }

    #[test]
    fn linear_crossing_is_bracketed() {
        let f = VectorMap::parse(&["1"], 1).unwrap();
        let g = Guard::parse("x1 - 1", 1).unwrap();
        let (t, x) =
            locate_guard_crossing(&f, |x: &[f64]| g.contains(x), 0.9, 1.1, &[0.9], &[1.1], 1e-9)
                .unwrap();
        assert!((t - 1.0).abs() <= 1e-9, "{t}");
        assert!((x[0] - 1.0).abs() <= 1e-9);

        let f = VectorMap::parse(&["-1"], 1).unwrap();
        let g = Guard::parse("-x1", 1).unwrap(); // x1 <= 0
        let (t, _) =
            locate_guard_crossing(&f, |x: &[f64]| g.contains(x), 0.0, 0.1, &[0.05], &[-0.05], 1e-9)
                .unwrap();
        assert!((t - 0.05).abs() <= 1e-9, "{t}");
    }

    #[test]
    fn constant_predicate_is_rejected() {
        let f = VectorMap::parse(&["1"], 1).unwrap();
        let err = locate_guard_crossing(&f, |_: &[f64]| Ok(true), 0.0, 1.0, &[0.0], &[1.0], 1e-9)
            .unwrap_err();
        assert!(matches!(err, IntegrationError::NoSignChange));
    }

    #[test]
    fn scheduled_jumps_are_applied_exactly() {
        let def = single_flow(
            &["0"],
            JumpSchedule::Periodic {
                period: 0.25,
                jump: 0,
            },
            Some(&["-2*x1"]),
        );
        let cfg = IntegrationConfig {
            t_end: 1.0,
            dt: 0.01,
            ..Default::default()
        };
        let traj = simulate(&def, &[1.0], &cfg).unwrap();
        let times: Vec<f64> = traj.jump_events.iter().map(|j| j.t).collect();
        assert_eq!(times, vec![0.25, 0.5, 0.75]);
        assert_eq!(traj.final_state(), &[-8.0]);
        for j in &traj.jump_events {
            assert_eq!(j.x_after[0], -2.0 * j.x_before[0]);
        }
    }

    #[test]
    fn state_triggered_jump_fires_on_entry() {
        // x decays as e^{-t}; entering x1 <= 0.5 at t = ln 2 halves the state once
        let n = 1;
        let def = HybridSystemDef::new(
            n,
            vec![VectorMap::parse(&["-x1"], n).unwrap()],
            vec![VectorMap::parse(&["0.5*x1"], n).unwrap()],
            None,
            Some(Guard::parse("0.5 - x1", n).unwrap()),
            SwitchingPolicy {
                mode_schedule: ModeSchedule::Cyclic(vec![(0, 1.0)]),
                jump_schedule: JumpSchedule::StateTriggered { jump: 0 },
                dwell_min: 0.1,
                fts_mode: 0,
            },
        )
        .unwrap();
        let cfg = IntegrationConfig {
            t_end: 2.0,
            dt: 1e-3,
            ..Default::default()
        };
        let traj = simulate(&def, &[1.0], &cfg).unwrap();
        assert_eq!(traj.jump_events.len(), 1);
        let j = &traj.jump_events[0];
        assert!((j.t - 2f64.ln()).abs() < 1e-8, "{}", j.t);
        assert!((j.x_before[0] - 0.5).abs() < 1e-8);
        assert!((j.x_after[0] - 0.25).abs() < 1e-8);
        let expect = 0.25 * (-(2.0 - 2f64.ln())).exp();
        assert!((traj.final_state()[0] - expect).abs() < 1e-8);
    }

    #[test]
    fn unknown_config_rejected() {
        let def = single_flow(&["-x1"], JumpSchedule::None, None);
        let cfg = IntegrationConfig {
            dt: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            simulate(&def, &[1.0], &cfg),
            Err(IntegrationError::InvalidConfig(_))
        ));
        assert!(matches!(
            simulate(&def, &[1.0, 2.0], &IntegrationConfig::default()),
            Err(IntegrationError::InitialState(_))
        ));
    }

    #[test]
    fn finite_schedule_exhausts() {
        let n = 1;
        let def = HybridSystemDef::new(
            n,
            vec![VectorMap::parse(&["-x1"], n).unwrap()],
            vec![],
            None,
            None,
            SwitchingPolicy {
                mode_schedule: ModeSchedule::Finite(vec![(0, 0.5)]),
                jump_schedule: JumpSchedule::None,
                dwell_min: 0.1,
                fts_mode: 0,
            },
        )
        .unwrap();
        let err = simulate(&def, &[1.0], &IntegrationConfig::default()).unwrap_err();
        assert!(matches!(err, IntegrationError::ScheduleExhausted { t } if (t - 0.5).abs() < 1e-12));
    }

    #[test]
    fn scalar_signed_sqrt_settles_at_one_second() {
        let def = single_flow(&["-2*sign(x1)*abs(x1)^0.5"], JumpSchedule::None, None);
        let traj = simulate(&def, &[1.0], &IntegrationConfig::default()).unwrap();
        assert_eq!(traj.reason, TruncationReason::Converged);
        let ts = settling_time(&traj, 1e-9).unwrap();
        assert!((ts - 1.0).abs() < 0.01, "{ts}");
    }

    #[test]
    fn unstable_mode_never_settles() {
        let def = single_flow(
            &["0.01*x1^2 + 0.01*x1*x2", "-0.01*x1^3 + x2^2"],
            JumpSchedule::None,
            None,
        );
        let cfg = IntegrationConfig {
            t_end: 10.0,
            ..Default::default()
        };
        let traj = simulate(&def, &[0.5, 0.5], &cfg).unwrap();
        assert_eq!(settling_time(&traj, 1e-4), None);
    }

    #[test]
    fn periodic_jumps_flip_and_scale() {
        let e = crate::registry::paper_example();
        let cfg = IntegrationConfig {
            t_end: 2.0,
            ..Default::default()
        };
        let traj = simulate(&e.def, &[1.0, 0.5], &cfg).unwrap();
        assert_eq!(traj.jump_events.len(), 19);
        for (k, j) in traj.jump_events.iter().enumerate() {
            assert!((j.t - 0.1 * (k + 1) as f64).abs() <= 1e-9, "{}", j.t);
            for i in 0..2 {
                assert_eq!(j.x_after[i], -1.1 * j.x_before[i]);
            }
        }
        for (k, seg) in traj.segments.iter().enumerate() {
            assert!((seg.t_start - 0.2 * k as f64).abs() <= 1e-9);
        }
    }

    fn spiral_exact(t: f64, x0: [f64; 2]) -> [f64; 2] {
        let (s, c) = t.sin_cos();
        let d = (-t).exp();
        [d * (c * x0[0] - s * x0[1]), d * (s * x0[0] + c * x0[1])]
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let def = single_flow(&["-x1 - x2", "x1 - x2"], JumpSchedule::None, None);
        let exact = spiral_exact(1.0, [1.0, 1.0]);
        let err = |dt: f64| {
            let cfg = IntegrationConfig {
                dt,
                t_end: 1.0,
                ..Default::default()
            };
            let x = simulate(&def, &[1.0, 1.0], &cfg).unwrap().final_state().to_vec();
            norm(&[x[0] - exact[0], x[1] - exact[1]])
        };
        let ratio = err(0.02) / err(0.01);
        assert!((8.0..=24.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn stable_spiral_norm_decreases() {
        let def = single_flow(&["-x1 - x2", "x1 - x2"], JumpSchedule::None, None);
        let cfg = IntegrationConfig {
            t_end: 5.0,
            ..Default::default()
        };
        let traj = simulate(&def, &[1.0, -2.0], &cfg).unwrap();
        let norms: Vec<f64> = traj.samples().map(|(_, _, x)| norm(x)).collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0]));
        assert!(norms.last().unwrap() < &(0.01 * norms[0]));
    }

    #[test]
    fn runs_are_deterministic() {
        let e = crate::registry::paper_example();
        let cfg = IntegrationConfig {
            t_end: 3.0,
            ..Default::default()
        };
        let a = simulate(&e.def, &[0.3, -0.7], &cfg).unwrap();
        let b = simulate(&e.def, &[0.3, -0.7], &cfg).unwrap();
        assert_eq!(a, b);
    }
}
