//! Scores every candidate pair with the beamforming solver and keeps the
//! best one.

use std::collections::HashMap;

use crate::beamforming::{BeamformerMode, DecisionOutcome, SolverOptions};
use crate::config::Scenario;
use crate::decision::DecisionPair;
use crate::error::{IsacError, Result};
use crate::world::FrameContext;

#[derive(Debug, Clone, PartialEq)]
pub struct CriticChoice {
    /// 0-based candidate indices.
    pub comm_index: usize,
    pub radar_index: usize,
    pub decision: DecisionPair,
    pub outcome: DecisionOutcome,
    /// Distinct decision pairs actually solved.
    pub solves: usize,
    /// Largest power-budget excess over every solve.
    pub max_power_excess: f64,
}

fn solve_all(
    ctx: &FrameContext,
    scenario: &Scenario,
    pairs: &[DecisionPair],
    mode: BeamformerMode,
    opts: &SolverOptions,
) -> Vec<Result<DecisionOutcome>> {
    let one = |d: &DecisionPair| ctx.solve(scenario, d, mode, opts);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pairs.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        pairs.iter().map(one).collect()
    }
}

/// Argmax over all `(i, j)` pairs; ties go to the lowest `(i, j)` in
/// lexicographic order. Candidates that fail to solve or violate the pilot
/// budget are skipped.
pub fn critic_select(
    ctx: &FrameContext,
    scenario: &Scenario,
    comm: &[Vec<bool>],
    radar: &[Vec<bool>],
    mode: BeamformerMode,
    opts: &SolverOptions,
) -> Result<CriticChoice> {
    if comm.is_empty() || radar.is_empty() {
        return Err(IsacError::InvalidArgument("empty candidate list".into()));
    }
    let max = scenario.system().max_reestimations();
    let mut unique: Vec<DecisionPair> = Vec::new();
    let mut slot: HashMap<DecisionPair, usize> = HashMap::new();
    let mut grid = Vec::with_capacity(comm.len() * radar.len());
    for c in comm {
        for r in radar {
            let d = DecisionPair::new(c.clone(), r.clone());
            if !d.is_feasible(max) {
                grid.push(None);
                continue;
            }
            let next = unique.len();
            let s = *slot.entry(d.clone()).or_insert(next);
            if s == next {
                unique.push(d);
            }
            grid.push(Some(s));
        }
    }
    let results = solve_all(ctx, scenario, &unique, mode, opts);
    for (d, r) in unique.iter().zip(&results) {
        if let Err(e) = r {
            log::warn!("frame {}: candidate {d:?} skipped: {e}", ctx.frame);
        }
    }
    let mut best: Option<(usize, usize, usize, f64)> = None;
    for (cell, s) in grid.iter().enumerate() {
        let Some(s) = *s else { continue };
        let Ok(out) = &results[s] else { continue };
        let u = out.utility.total();
        if best.is_none_or(|(_, _, _, b)| u > b) {
            best = Some((cell / radar.len(), cell % radar.len(), s, u));
        }
    }
    let (i, j, s, _) = best.ok_or(IsacError::NoFeasibleCandidate)?;
    let solves = unique.len();
    let max_power_excess = results
        .iter()
        .flatten()
        .map(|o| o.max_power_excess)
        .fold(f64::NEG_INFINITY, f64::max);
    let outcome = results
        .into_iter()
        .nth(s)
        .expect("slot index in range")
        .expect("selected slot solved");
    Ok(CriticChoice {
        comm_index: i,
        radar_index: j,
        decision: unique.swap_remove(s),
        outcome,
        solves,
        max_power_excess,
    })
}
