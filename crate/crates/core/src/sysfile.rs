//! JSON system-definition files.
//!
//! Modes and jump maps are numbered from 1 in files and from 0 in code.
//! Expressions use the syntax accepted by [`crate::expr::parse`].
//!
//! ```json
//! {
//!   "name": "spiral",
//!   "dim": 2,
//!   "flows": [["-x1 - x2", "x1 - x2"]],
//!   "jumps": [],
//!   "policy": {
//!     "mode_schedule": { "kind": "then_hold", "prefix": [], "hold": 1 },
//!     "jump_schedule": { "kind": "none" },
//!     "t_d": 0.1,
//!     "fts_mode": 1
//!   },
//!   "lyapunov": [{ "quadratic": [[1, 0], [0, 1]] }]
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::ParseError;
use crate::integrator::IntegrationConfig;
use crate::lyapunov::{FtsConstants, LyapunovError, LyapunovFn, LyapunovSet};
use crate::model::{
    Guard, HybridSystemDef, JumpSchedule, ModeSchedule, ModelError, SwitchingPolicy, VectorMap,
};
use crate::registry::ExampleEntry;

#[derive(Debug, Error)]
pub enum SysFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed system file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: ParseError,
    },
    #[error("{what}: indices start at 1")]
    ZeroIndex { what: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub dim: usize,
    pub flows: Vec<Vec<String>>,
    #[serde(default)]
    pub jumps: Vec<Vec<String>>,
    /// Flow set C as `{x : expr ≥ 0}`; all of ℝⁿ when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_guard: Option<String>,
    /// Jump set D as `{x : expr ≥ 0}`; all of ℝⁿ when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump_guard: Option<String>,
    pub policy: PolicySpec,
    #[serde(default)]
    pub lyapunov: Vec<LyapunovSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fts_constants: Option<FtsConstants>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integration: Option<IntegrationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub mode_schedule: ModeScheduleSpec,
    #[serde(default = "no_jumps")]
    pub jump_schedule: JumpScheduleSpec,
    pub t_d: f64,
    pub fts_mode: usize,
}

fn no_jumps() -> JumpScheduleSpec {
    JumpScheduleSpec::None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Activation {
    pub mode: usize,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeScheduleSpec {
    Cyclic {
        sequence: Vec<Activation>,
    },
    Finite {
        sequence: Vec<Activation>,
    },
    Random {
        modes: Vec<usize>,
        dwell: Vec<f64>,
        seed: u64,
    },
    ThenHold {
        #[serde(default)]
        prefix: Vec<Activation>,
        hold: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dwell: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpInstant {
    pub t: f64,
    pub jump: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpScheduleSpec {
    None,
    Periodic { period: f64, jump: usize },
    Instants { instants: Vec<JumpInstant> },
    StateTriggered { jump: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LyapunovSpec {
    Quadratic(Vec<Vec<f64>>),
    Expression(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub radii: Vec<f64>,
    pub angles: usize,
}

/// A system file after parsing and validation.
#[derive(Debug, Clone)]
pub struct LoadedSystem {
    pub name: String,
    pub description: String,
    pub def: HybridSystemDef,
    /// `None` when the file lists no Lyapunov functions.
    pub lyapunov: Option<LyapunovSet>,
    pub config: IntegrationConfig,
    pub sweep: Option<SweepSpec>,
}

fn zero_based(i: usize, what: &str) -> Result<usize, SysFileError> {
    i.checked_sub(1).ok_or_else(|| SysFileError::ZeroIndex { what: what.into() })
}

fn activations(seq: &[Activation], what: &str) -> Result<Vec<(usize, f64)>, SysFileError> {
    seq.iter()
        .map(|a| Ok((zero_based(a.mode, what)?, a.duration)))
        .collect()
}

fn one_based(seq: &[(usize, f64)]) -> Vec<Activation> {
    seq.iter()
        .map(|&(m, d)| Activation {
            mode: m + 1,
            duration: d,
        })
        .collect()
}

impl ModeScheduleSpec {
    pub fn to_schedule(&self) -> Result<ModeSchedule, SysFileError> {
        const W: &str = "mode schedule";
        Ok(match self {
            ModeScheduleSpec::Cyclic { sequence } => ModeSchedule::Cyclic(activations(sequence, W)?),
            ModeScheduleSpec::Finite { sequence } => ModeSchedule::Finite(activations(sequence, W)?),
            ModeScheduleSpec::Random { modes, dwell, seed } => ModeSchedule::Random {
                modes: modes.iter().map(|&m| zero_based(m, W)).collect::<Result<_, _>>()?,
                dwell: dwell.clone(),
                seed: *seed,
            },
            ModeScheduleSpec::ThenHold { prefix, hold, dwell } => ModeSchedule::ThenHold {
                prefix: activations(prefix, W)?,
                hold: zero_based(*hold, W)?,
                dwell: *dwell,
            },
        })
    }

    pub fn from_schedule(s: &ModeSchedule) -> Self {
        match s {
            ModeSchedule::Cyclic(seq) => ModeScheduleSpec::Cyclic {
                sequence: one_based(seq),
            },
            ModeSchedule::Finite(seq) => ModeScheduleSpec::Finite {
                sequence: one_based(seq),
            },
            ModeSchedule::Random { modes, dwell, seed } => ModeScheduleSpec::Random {
                modes: modes.iter().map(|m| m + 1).collect(),
                dwell: dwell.clone(),
                seed: *seed,
            },
            ModeSchedule::ThenHold { prefix, hold, dwell } => ModeScheduleSpec::ThenHold {
                prefix: one_based(prefix),
                hold: hold + 1,
                dwell: *dwell,
            },
        }
    }
}

impl JumpScheduleSpec {
    pub fn to_schedule(&self) -> Result<JumpSchedule, SysFileError> {
        const W: &str = "jump schedule";
        Ok(match self {
            JumpScheduleSpec::None => JumpSchedule::None,
            JumpScheduleSpec::Periodic { period, jump } => JumpSchedule::Periodic {
                period: *period,
                jump: zero_based(*jump, W)?,
            },
            JumpScheduleSpec::Instants { instants } => JumpSchedule::Instants(
                instants
                    .iter()
                    .map(|i| Ok((i.t, zero_based(i.jump, W)?)))
                    .collect::<Result<_, SysFileError>>()?,
            ),
            JumpScheduleSpec::StateTriggered { jump } => JumpSchedule::StateTriggered {
                jump: zero_based(*jump, W)?,
            },
        })
    }

    pub fn from_schedule(s: &JumpSchedule) -> Self {
        match s {
            JumpSchedule::None => JumpScheduleSpec::None,
            JumpSchedule::Periodic { period, jump } => JumpScheduleSpec::Periodic {
                period: *period,
                jump: jump + 1,
            },
            JumpSchedule::Instants(list) => JumpScheduleSpec::Instants {
                instants: list
                    .iter()
                    .map(|&(t, j)| JumpInstant { t, jump: j + 1 })
                    .collect(),
            },
            JumpSchedule::StateTriggered { jump } => JumpScheduleSpec::StateTriggered { jump: jump + 1 },
        }
    }
}

impl PolicySpec {
    pub fn to_policy(&self) -> Result<SwitchingPolicy, SysFileError> {
        Ok(SwitchingPolicy {
            mode_schedule: self.mode_schedule.to_schedule()?,
            jump_schedule: self.jump_schedule.to_schedule()?,
            dwell_min: self.t_d,
            fts_mode: zero_based(self.fts_mode, "fts_mode")?,
        })
    }

    pub fn from_policy(p: &SwitchingPolicy) -> Self {
        PolicySpec {
            mode_schedule: ModeScheduleSpec::from_schedule(&p.mode_schedule),
            jump_schedule: JumpScheduleSpec::from_schedule(&p.jump_schedule),
            t_d: p.dwell_min,
            fts_mode: p.fts_mode + 1,
        }
    }
}

fn vector_map(srcs: &[String], n: usize, what: String) -> Result<VectorMap, SysFileError> {
    VectorMap::parse(srcs, n).map_err(|source| SysFileError::Parse { what, source })
}

fn print_map(m: &VectorMap) -> Vec<String> {
    m.components().iter().map(ToString::to_string).collect()
}

impl SystemFile {
    pub fn from_json(text: &str) -> Result<Self, SysFileError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self, SysFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| SysFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system files serialize")
    }

    /// Parses every expression and checks the structural invariants of
    /// the system. The equilibrium condition is left to
    /// [`crate::model::validate_system`].
    pub fn load(&self) -> Result<LoadedSystem, SysFileError> {
        let n = self.dim;
        let flows = self
            .flows
            .iter()
            .enumerate()
            .map(|(i, f)| vector_map(f, n, format!("flow f{}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let jumps = self
            .jumps
            .iter()
            .enumerate()
            .map(|(j, g)| vector_map(g, n, format!("jump g{}", j + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let guard = |src: &Option<String>, what: &str| {
            src.as_deref()
                .map(|s| {
                    Guard::parse(s, n).map_err(|source| SysFileError::Parse {
                        what: what.into(),
                        source,
                    })
                })
                .transpose()
        };
        let flow_guard = guard(&self.flow_guard, "flow guard")?;
        let jump_guard = guard(&self.jump_guard, "jump guard")?;
        let def = HybridSystemDef::new(n, flows, jumps, flow_guard, jump_guard, self.policy.to_policy()?)?;
        let lyapunov = if self.lyapunov.is_empty() {
            None
        } else {
            let fns = self
                .lyapunov
                .iter()
                .enumerate()
                .map(|(i, spec)| match spec {
                    LyapunovSpec::Quadratic(rows) => Ok(LyapunovFn::quadratic(rows)?),
                    LyapunovSpec::Expression(src) => {
                        LyapunovFn::expression(src, n).map_err(|source| SysFileError::Parse {
                            what: format!("Lyapunov function V{}", i + 1),
                            source,
                        })
                    }
                })
                .collect::<Result<Vec<_>, SysFileError>>()?;
            let set = LyapunovSet::new(n, fns, self.fts_constants)?;
            set.check_against(&def)?;
            Some(set)
        };
        Ok(LoadedSystem {
            name: self.name.clone().unwrap_or_default(),
            description: self.description.clone().unwrap_or_default(),
            def,
            lyapunov,
            config: self.integration.unwrap_or_default(),
            sweep: self.sweep.clone(),
        })
    }

    pub fn from_parts(
        name: Option<&str>,
        description: Option<&str>,
        def: &HybridSystemDef,
        lyapunov: Option<&LyapunovSet>,
        config: Option<IntegrationConfig>,
        sweep: Option<SweepSpec>,
    ) -> Self {
        let guard = |g: Option<&Guard>| g.map(|g| g.expr.to_string());
        SystemFile {
            name: name.map(String::from),
            description: description.map(String::from),
            dim: def.dim(),
            flows: def.flows().iter().map(print_map).collect(),
            jumps: def.jumps().iter().map(print_map).collect(),
            flow_guard: guard(def.flow_guard()),
            jump_guard: guard(def.jump_guard()),
            policy: PolicySpec::from_policy(def.policy()),
            lyapunov: lyapunov
                .map(|set| {
                    set.functions()
                        .iter()
                        .map(|f| match f {
                            LyapunovFn::Quadratic { .. } => {
                                LyapunovSpec::Quadratic(f.matrix().expect("quadratic form"))
                            }
                            LyapunovFn::Expr { expr, .. } => LyapunovSpec::Expression(expr.to_string()),
                        })
                        .collect()
                })
                .unwrap_or_default(),
            fts_constants: lyapunov.and_then(LyapunovSet::fts_constants),
            integration: config,
            sweep,
        }
    }

    pub fn from_entry(e: &ExampleEntry) -> Self {
        Self::from_parts(
            Some(&e.name),
            Some(&e.description),
            &e.def,
            Some(&e.lyapunov),
            Some(e.config),
            Some(SweepSpec {
                radii: e.radii.clone(),
                angles: e.angles,
            }),
        )
    }
}
