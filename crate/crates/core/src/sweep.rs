//! Batches of simulations over initial conditions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::integrator::{simulate, IntegrationConfig, IntegrationError};
use crate::model::{norm, HybridSystemDef, HybridTrajectory};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub radius: f64,
    pub x0: Vec<f64>,
    pub result: Result<HybridTrajectory, IntegrationError>,
}

/// Initial states on spheres of the given radii. In one dimension each
/// radius gives `±r`; in two, `angles` evenly spaced directions starting
/// on the positive `x1` axis; beyond that, `angles` seeded random
/// directions shared by every radius.
pub fn initial_conditions(n: usize, radii: &[f64], angles: usize, seed: u64) -> Vec<(f64, Vec<f64>)> {
    let dirs: Vec<Vec<f64>> = match n {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..angles)
            .map(|k| {
                let th = std::f64::consts::TAU * k as f64 / angles as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut dirs = Vec::with_capacity(angles);
            while dirs.len() < angles {
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let r = norm(&v);
                if r > 1e-3 && r <= 1.0 {
                    dirs.push(v.iter().map(|x| x / r).collect());
                }
            }
            dirs
        }
    };
    let mut out = Vec::with_capacity(radii.len() * dirs.len());
    for &r in radii {
        for d in &dirs {
            out.push((r, d.iter().map(|x| x * r).collect()));
        }
    }
    out
}

/// Simulates every initial state in parallel; results keep input order.
pub fn run_sweep(
    def: &HybridSystemDef,
    cfg: &IntegrationConfig,
    points: &[(f64, Vec<f64>)],
) -> Vec<SweepRun> {
    points
        .par_iter()
        .map(|(radius, x0)| SweepRun {
            radius: *radius,
            x0: x0.clone(),
            result: simulate(def, x0, cfg),
        })
        .collect()
}
