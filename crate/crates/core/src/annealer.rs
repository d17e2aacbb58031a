//! Simulated annealing over fixed-size feature subsets.
//!
//! A chain starts from a uniformly random subset, proposes swaps of one
//! member for one non-member, accepts improvements always and worsening
//! moves with probability `exp(-|dU| / T)`, and cools geometrically after
//! each batch of proposals. The chain keeps going while `T >= t_final`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Selection;
use crate::objective::{evaluate_selection, ObjectiveContext, ObjectiveParams, SubsetState};
use crate::rng::{chain_rng, ChainRng};

const MAX_TEMPERATURE_STEPS: usize = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnealSchedule {
    pub t_init: f64,
    pub t_final: f64,
    pub gamma: f64,
    pub swaps_per_temperature: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Report the last state instead of the best one encountered.
    pub return_final: bool,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            t_init: 1.0,
            t_final: 1e-4,
            gamma: 0.999,
            swaps_per_temperature: 1,
            seed: 0,
            restarts: 1,
            return_final: false,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        let finite = self.t_init.is_finite() && self.t_final.is_finite() && self.gamma.is_finite();
        if !finite || !(0.0 < self.t_final && self.t_final < self.t_init) {
            return Err(Error::Parameter(format!(
                "temperatures must satisfy 0 < t_final < t_init (got t_init={}, t_final={})",
                self.t_init, self.t_final
            )));
        }
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::Parameter(format!(
                "cooling rate gamma={} must lie in (0, 1)",
                self.gamma
            )));
        }
        if self.swaps_per_temperature == 0 || self.restarts == 0 {
            return Err(Error::Parameter(
                "swaps per temperature and restarts must be positive".into(),
            ));
        }
        if self.temperature_steps() > MAX_TEMPERATURE_STEPS {
            return Err(Error::Parameter(format!(
                "schedule needs {} temperature steps, limit is {MAX_TEMPERATURE_STEPS}",
                self.temperature_steps()
            )));
        }
        Ok(())
    }

    /// `ceil(ln(t_final / t_init) / ln(gamma))`, at least 1.
    pub fn temperature_steps(&self) -> usize {
        let steps = ((self.t_final / self.t_init).ln() / self.gamma.ln()).ceil();
        if steps.is_finite() && steps >= 1.0 {
            steps.min(usize::MAX as f64) as usize
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub step: usize,
    pub temperature: f64,
    pub current_u: f64,
    pub best_u: f64,
    pub accepted: usize,
    /// Accepted proposals that lowered U.
    pub worsening_accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnealTrace {
    pub seed: u64,
    pub stream: u64,
    pub initial: Selection,
    pub steps: Vec<TraceStep>,
    pub best: Selection,
    pub final_state: Selection,
}

impl AnnealTrace {
    /// The selection a run reports, per the schedule's `return_final` flag.
    pub fn reported(&self, return_final: bool) -> &Selection {
        if return_final {
            &self.final_state
        } else {
            &self.best
        }
    }

    /// CSV with columns `step,temperature,current_u,best_u,accepted_count`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,temperature,current_u,best_u,accepted_count")?;
        for s in &self.steps {
            writeln!(
                w,
                "{},{:e},{},{},{}",
                s.step, s.temperature, s.current_u, s.best_u, s.accepted
            )?;
        }
        Ok(())
    }
}

/// Uniformly random n-subset, evaluated from scratch.
pub fn initial_state(ctx: &ObjectiveContext, params: &ObjectiveParams, rng: &mut ChainRng) -> Result<Selection> {
    ctx.check_params(params)?;
    let indices = rand::seq::index::sample(rng, ctx.n_features(), params.n).into_vec();
    Ok(evaluate_selection(ctx, &indices, params))
}

/// A uniformly random member and, independently, a uniformly random non-member.
pub fn propose_swap(state: &SubsetState<'_>, rng: &mut ChainRng) -> Result<(usize, usize)> {
    let (members, outside) = (state.members(), state.outside());
    if members.is_empty() || outside.is_empty() {
        return Err(Error::Parameter(
            "no swap exists when the subset is empty or holds every feature".into(),
        ));
    }
    let out = members[rng.random_range(0..members.len())];
    let inn = outside[rng.random_range(0..outside.len())];
    Ok((out, inn))
}

/// Metropolis rule for maximization. Ties are accepted with probability one.
pub fn accept(u_current: f64, u_proposed: f64, temperature: f64, rng: &mut ChainRng) -> bool {
    assert!(temperature > 0.0, "temperature must be positive");
    if u_proposed >= u_current {
        return true;
    }
    let p = (-(u_proposed - u_current).abs() / temperature).exp();
    rng.random::<f64>() < p
}

/// One annealing chain on stream `stream` of the schedule's seed.
pub fn run_chain(
    ctx: &ObjectiveContext,
    params: &ObjectiveParams,
    schedule: &AnnealSchedule,
    stream: u64,
) -> Result<AnnealTrace> {
    schedule.validate()?;
    ctx.check_params(params)?;
    let mut rng = chain_rng(schedule.seed, stream);
    let initial = initial_state(ctx, params, &mut rng)?;
    let mut state = SubsetState::new(ctx, params, &initial.indices)?;
    let can_move = params.n < ctx.n_features();

    let mut best_u = state.current().u;
    let mut best_members = state.members().to_vec();
    let n_steps = schedule.temperature_steps();
    let mut steps = Vec::with_capacity(n_steps);
    let mut temperature = schedule.t_init;

    for step in 0..n_steps {
        let mut accepted = 0;
        let mut worsening = 0;
        if can_move {
            for _ in 0..schedule.swaps_per_temperature {
                let (out, inn) = propose_swap(&state, &mut rng)?;
                let current = state.current().u;
                let proposed = state.swap_delta(out, inn).u;
                if accept(current, proposed, temperature, &mut rng) {
                    state.commit();
                    accepted += 1;
                    if proposed < current {
                        worsening += 1;
                    }
                    if state.current().u > best_u {
                        best_u = state.current().u;
                        best_members.clear();
                        best_members.extend_from_slice(state.members());
                    }
                } else {
                    state.discard();
                }
            }
        }
        steps.push(TraceStep {
            step,
            temperature,
            current_u: state.current().u,
            best_u,
            accepted,
            worsening_accepted: worsening,
        });
        temperature *= schedule.gamma;
    }

    Ok(AnnealTrace {
        seed: schedule.seed,
        stream,
        initial,
        steps,
        best: evaluate_selection(ctx, &best_members, params),
        final_state: evaluate_selection(ctx, state.members(), params),
    })
}

/// Runs `schedule.restarts` independent chains (streams `0..restarts`, in
/// parallel) and returns the highest-scoring reported selection with the
/// trace of the chain that produced it. Ties go to the lowest stream.
pub fn run(
    ctx: &ObjectiveContext,
    params: &ObjectiveParams,
    schedule: &AnnealSchedule,
) -> Result<(Selection, AnnealTrace)> {
    schedule.validate()?;
    ctx.check_params(params)?;
    let traces = (0..schedule.restarts as u64)
        .into_par_iter()
        .map(|stream| run_chain(ctx, params, schedule, stream))
        .collect::<Result<Vec<_>>>()?;
    let mut winner: Option<AnnealTrace> = None;
    for trace in traces {
        let better = match &winner {
            None => true,
            Some(w) => {
                trace.reported(schedule.return_final).objective > w.reported(schedule.return_final).objective
            }
        };
        if better {
            winner = Some(trace);
        }
    }
    let trace = winner.expect("at least one restart");
    Ok((trace.reported(schedule.return_final).clone(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PairWeights, RatioMatrix};
    use rand::SeedableRng;

    fn toy_context(seed: u64, f: usize, g: usize) -> ObjectiveContext {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ratios = RatioMatrix::new(
            (0..f).map(|i| format!("f{i}")).collect(),
            (0..g).map(|j| format!("t{j}")).collect(),
            (0..f * g).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        let norms = (0..f).map(|_| rng.random_range(0.1..10.0)).collect();
        ObjectiveContext::from_parts(ratios, norms).unwrap()
    }

    fn params(alpha: f64, n: usize, g: usize) -> ObjectiveParams {
        ObjectiveParams::new(alpha, n, PairWeights::uniform(g, 1).unwrap()).unwrap()
    }

    #[test]
    fn step_count_formula() {
        let s = AnnealSchedule {
            t_init: 1.0,
            t_final: 1e-4,
            gamma: 0.95,
            ..Default::default()
        };
        assert_eq!(s.temperature_steps(), 180);
        assert_eq!(AnnealSchedule::default().temperature_steps(), 9206);
        assert!(AnnealSchedule { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(AnnealSchedule { t_final: 2.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn acceptance_rule() {
        let mut rng = chain_rng(1, 0);
        assert!(accept(0.5, 0.6, 1e-9, &mut rng));
        assert!(accept(0.5, 0.5, 1e-9, &mut rng));
        let trials = 200_000;
        let hits = (0..trials).filter(|_| accept(0.5, 0.4, 1.0, &mut rng)).count();
        let p = (-0.1f64).exp();
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        assert!(((hits as f64 / trials as f64) - p).abs() < 5.0 * sd);
    }

    #[test]
    fn initial_state_examples() {
        let ctx = toy_context(3, 10, 3);
        let full = initial_state(&ctx, &params(0.2, 10, 3), &mut chain_rng(0, 0)).unwrap();
        assert_eq!(full.indices, (0..10).collect::<Vec<_>>());

        let a = initial_state(&ctx, &params(0.2, 3, 3), &mut chain_rng(42, 0)).unwrap();
        let b = initial_state(&ctx, &params(0.2, 3, 3), &mut chain_rng(42, 0)).unwrap();
        assert_eq!(a, b);

        let err = initial_state(&ctx, &params(0.2, 11, 3), &mut chain_rng(0, 0));
        assert!(err.is_err());
    }

    #[test]
    fn initial_state_is_uniform() {
        let ctx = toy_context(4, 10, 3);
        let p = params(0.0, 3, 3);
        let mut rng = chain_rng(99, 0);
        let mut counts = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            for i in initial_state(&ctx, &p, &mut rng).unwrap().indices {
                counts[i] += 1;
            }
        }
        // each feature is included with probability 3/10
        let sd = (draws as f64 * 0.3 * 0.7).sqrt();
        for c in counts {
            assert!((c as f64 - 3000.0).abs() < 5.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn proposals_are_uniform() {
        let ctx = toy_context(5, 4, 3);
        let p = params(0.0, 2, 3);
        let state = SubsetState::new(&ctx, &p, &[0, 1]).unwrap();
        let mut rng = chain_rng(17, 0);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..10_000 {
            *counts.entry(propose_swap(&state, &mut rng).unwrap()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 4);
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - 2500.0).powi(2) / 2500.0)
            .sum();
        // 3 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 16.27, "chi2 = {chi2}");

        let single = toy_context(6, 2, 3);
        let p1 = params(0.0, 1, 3);
        let st = SubsetState::new(&single, &p1, &[1]).unwrap();
        for _ in 0..20 {
            assert_eq!(propose_swap(&st, &mut rng).unwrap(), (1, 0));
        }
        let full = SubsetState::new(&single, &params(0.0, 2, 3), &[0, 1]).unwrap();
        assert!(propose_swap(&full, &mut rng).is_err());
    }

    #[test]
    fn full_subset_returns_initial_state() {
        let ctx = toy_context(8, 6, 3);
        let p = params(0.3, 6, 3);
        let schedule = AnnealSchedule {
            t_init: 1.0,
            t_final: 0.9,
            gamma: 0.5,
            ..Default::default()
        };
        let (best, trace) = run(&ctx, &p, &schedule).unwrap();
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(best, trace.initial);
        assert_eq!(trace.steps[0].accepted, 0);
    }

    #[test]
    fn runs_are_deterministic() {
        let ctx = toy_context(9, 40, 4);
        let p = params(0.2, 8, 4);
        let schedule = AnnealSchedule {
            t_init: 0.5,
            t_final: 1e-3,
            gamma: 0.9,
            swaps_per_temperature: 20,
            seed: 1234,
            restarts: 3,
            return_final: false,
        };
        let a = run(&ctx, &p, &schedule).unwrap();
        let b = run(&ctx, &p, &schedule).unwrap();
        assert_eq!(a, b);
        assert!(a.1.steps.windows(2).all(|w| w[1].best_u >= w[0].best_u));
        assert!(a.0.objective >= a.1.initial.objective);
    }

    #[test]
    fn restarts_pick_the_best_chain() {
        let ctx = toy_context(10, 30, 4);
        let p = params(0.1, 5, 4);
        let schedule = AnnealSchedule {
            t_init: 0.2,
            t_final: 1e-2,
            gamma: 0.8,
            swaps_per_temperature: 5,
            seed: 77,
            restarts: 4,
            return_final: false,
        };
        let (best, _) = run(&ctx, &p, &schedule).unwrap();
        let singles: Vec<_> = (0..4)
            .map(|s| run_chain(&ctx, &p, &schedule, s).unwrap().best)
            .collect();
        let top = singles
            .iter()
            .fold(&singles[0], |acc, s| if s.objective > acc.objective { s } else { acc });
        assert_eq!(&best, top);
    }

    #[test]
    fn cold_chain_rejects_worsening_moves() {
        let mut worsening_at_end = 0;
        for seed in 0..100 {
            let ctx = toy_context(1000 + seed, 14, 4);
            let p = params(0.2, 4, 4);
            let schedule = AnnealSchedule {
                t_init: 1.0,
                t_final: 1e-8,
                gamma: 0.7,
                swaps_per_temperature: 30,
                seed,
                restarts: 1,
                return_final: true,
            };
            let trace = run_chain(&ctx, &p, &schedule, 0).unwrap();
            worsening_at_end += trace.steps.last().unwrap().worsening_accepted;
        }
        assert_eq!(worsening_at_end, 0);
    }

    #[test]
    fn running_sums_match_final_state() {
        let ctx = toy_context(12, 60, 5);
        let p = params(0.25, 12, 5);
        let schedule = AnnealSchedule {
            t_init: 0.3,
            t_final: 1e-3,
            gamma: 0.97,
            swaps_per_temperature: 50,
            seed: 5,
            restarts: 1,
            return_final: true,
        };
        let trace = run_chain(&ctx, &p, &schedule, 0).unwrap();
        let last = trace.steps.last().unwrap();
        assert!((last.current_u - trace.final_state.objective).abs() < 1e-7);
    }

    #[test]
    fn trace_csv_has_one_row_per_step() {
        let ctx = toy_context(13, 20, 3);
        let schedule = AnnealSchedule {
            t_init: 1.0,
            t_final: 0.1,
            gamma: 0.5,
            ..Default::default()
        };
        let trace = run_chain(&ctx, &params(0.0, 4, 3), &schedule, 0).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + schedule.temperature_steps());
        assert!(text.starts_with("step,temperature,current_u,best_u,accepted_count\n"));
    }
}
