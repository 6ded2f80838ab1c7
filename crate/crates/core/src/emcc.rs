//! EM over the latent exogenous variables, run per c-component with
//! likelihood-stationarity stopping and global-maximum filtering.
//!
//! Each run starts from a fresh random point; runs whose final likelihood
//! falls short of the endogenous maximum λ* are rejected. Accepted runs
//! induce fully specified models whose query values sample the compatible
//! set from inside: their min/max is an inner range of the exact bounds.
//! Restarts are independent and can execute in parallel; identical seed
//! streams give identical results regardless of schedule.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::data::{fit_endogenous, lambda_star, DataError, Dataset};
use crate::exec::{map_collect, ExecMode};
use crate::index::{joint_card, unrank};
use crate::inference::{evaluate, InferenceError, QueryOutcome};
use crate::model::{CounterfactualQuery, ModelError, Scm, VarIndex};

#[derive(Debug, Error)]
pub enum EmccError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("no run reached the endogenous maximum within {restarts} restarts (best relative gap {best_gap:.3e})")]
    CompatibilityFailure { restarts: usize, best_gap: f64 },
    #[error("query undefined on the compatible set (zero-probability conditioning)")]
    UndefinedQuery,
}

/// Knobs for a single EM run and for multi-run drivers.
#[derive(Debug, Clone)]
pub struct EmOptions {
    /// Hard iteration cap per c-component.
    pub max_iters: usize,
    /// Stop when the per-record log-likelihood improves by less than this.
    pub stationarity_tol: f64,
    /// Accept a run when (λ* − l)/|λ*| falls below this.
    pub acceptance_rel_tol: f64,
    /// Total restarts a driver may spend.
    pub max_restarts: usize,
    pub exec: ExecMode,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iters: 10_000,
            stationarity_tol: 1e-9,
            acceptance_rel_tol: 1e-6,
            max_restarts: 512,
            exec: ExecMode::default(),
        }
    }
}

/// One EM trajectory.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub seed: u64,
    pub theta: BTreeMap<VarIndex, Vec<f64>>,
    pub iterations: usize,
    /// Final log-likelihood per record; −∞ when the model cannot produce
    /// an observed configuration.
    pub final_avg_log_lik: f64,
    pub accepted: bool,
    /// Per-component log-likelihood series, one value per EM sweep. Each
    /// series is non-decreasing up to 1e-12 slack.
    pub trajectory: Vec<Vec<f64>>,
    /// Relative gap to λ* at termination.
    pub relative_gap: f64,
}

/// Accepted query values of a multi-run EMCC sweep and their range.
#[derive(Debug, Clone)]
pub struct EmccResult {
    pub rho: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub rejected: usize,
    pub runs_executed: usize,
    pub lambda_star: f64,
}

impl EmccResult {
    pub fn range_width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Compatibility verdict of the likelihood test.
#[derive(Debug, Clone, PartialEq)]
pub enum CompatVerdict {
    Compatible { runs_used: usize },
    Incompatible { best_gap: f64 },
}

impl CompatVerdict {
    pub fn is_compatible(&self) -> bool {
        matches!(self, CompatVerdict::Compatible { .. })
    }
}

/// Precomputed per-component data shared by every EM run: the observed
/// closure configurations with their counts, and for each configuration the
/// joint exogenous states consistent with the component's equations.
pub(crate) struct ComponentTables {
    comps: Vec<ComponentData>,
    n_records: f64,
    lambda_star: f64,
}

struct ComponentData {
    exo_vars: Vec<VarIndex>,
    exo_cards: Vec<usize>,
    contexts: Vec<Context>,
}

struct Context {
    count: f64,
    /// Joint exogenous indices consistent with the configuration; empty
    /// means the model structurally cannot produce it.
    consistent: Vec<u32>,
}

impl ComponentTables {
    pub(crate) fn build(model: &Scm, dataset: &Dataset) -> Result<Self, EmccError> {
        let bn = fit_endogenous(model, dataset)?;
        let lambda = lambda_star(&bn, dataset)?;
        let comps = model.c_components()?;
        let mut out = Vec::new();
        for comp in &comps {
            if comp.endo_set.is_empty() {
                out.push(ComponentData {
                    exo_vars: comp.exo_set.clone(),
                    exo_cards: comp
                        .exo_set
                        .iter()
                        .map(|&u| model.cardinality(u))
                        .collect(),
                    contexts: Vec::new(),
                });
                continue;
            }
            let positions = dataset.column_positions(model, &comp.closure)?;
            let counts = dataset.project_counts(&positions);
            let exo_cards: Vec<usize> =
                comp.exo_set.iter().map(|&u| model.cardinality(u)).collect();
            let joint_exo = joint_card(&exo_cards).expect("exogenous space overflow");
            let closure_pos: BTreeMap<VarIndex, usize> = comp
                .closure
                .iter()
                .enumerate()
                .map(|(i, &v)| (v, i))
                .collect();
            let exo_pos: BTreeMap<VarIndex, usize> = comp
                .exo_set
                .iter()
                .enumerate()
                .map(|(i, &u)| (u, i))
                .collect();

            let mut contexts = Vec::with_capacity(counts.len());
            for (wc, n) in counts {
                let mut consistent = Vec::new();
                'joint: for j in 0..joint_exo {
                    let exo_states = unrank(j, &exo_cards);
                    for &v in &comp.endo_set {
                        let eq = model.equation(v).unwrap();
                        let parent_states: Vec<usize> = eq
                            .parents
                            .iter()
                            .map(|p| match exo_pos.get(p) {
                                Some(&i) => exo_states[i],
                                None => wc[closure_pos[p]],
                            })
                            .collect();
                        let cards: Vec<usize> =
                            eq.parents.iter().map(|&p| model.cardinality(p)).collect();
                        if eq.apply(&parent_states, &cards) != wc[closure_pos[&v]] {
                            continue 'joint;
                        }
                    }
                    consistent.push(j as u32);
                }
                if consistent.is_empty() {
                    log::debug!("structurally impossible configuration observed: {wc:?}");
                }
                contexts.push(Context {
                    count: n as f64,
                    consistent,
                });
            }
            out.push(ComponentData {
                exo_vars: comp.exo_set.clone(),
                exo_cards,
                contexts,
            });
        }
        Ok(ComponentTables {
            comps: out,
            n_records: dataset.len() as f64,
            lambda_star: lambda,
        })
    }

    pub(crate) fn lambda_star(&self) -> f64 {
        self.lambda_star
    }
}

/// Dirichlet(1,…,1) draw: a uniform point on the simplex with full support.
fn sample_pmf(rng: &mut ChaCha8Rng, card: usize) -> Vec<f64> {
    let mut pmf: Vec<f64> = (0..card)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let sum: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= sum);
    pmf
}

/// One EM run over all c-components from a seeded random initialization.
pub fn em_run(
    model: &Scm,
    dataset: &Dataset,
    seed: u64,
    opts: &EmOptions,
) -> Result<EmRun, EmccError> {
    let tables = ComponentTables::build(model, dataset)?;
    Ok(em_run_with_tables(model, &tables, seed, opts))
}

pub(crate) fn em_run_with_tables(
    model: &Scm,
    tables: &ComponentTables,
    seed: u64,
    opts: &EmOptions,
) -> EmRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta: BTreeMap<VarIndex, Vec<f64>> = BTreeMap::new();
    for comp in &tables.comps {
        for (i, &u) in comp.exo_vars.iter().enumerate() {
            theta.insert(u, sample_pmf(&mut rng, comp.exo_cards[i]));
        }
    }
    let _ = model;

    let n = tables.n_records;
    let mut iterations = 0usize;
    let mut total_ll = 0.0;
    let mut impossible = false;
    let mut trajectory: Vec<Vec<f64>> = Vec::new();

    for comp in &tables.comps {
        if comp.contexts.is_empty() {
            continue;
        }
        let cards = &comp.exo_cards;
        let mut current: Vec<Vec<f64>> = comp
            .exo_vars
            .iter()
            .map(|u| theta[u].clone())
            .collect();
        let mut prev_ll = f64::NEG_INFINITY;
        let mut comp_ll = f64::NEG_INFINITY;
        let mut comp_iters = 0usize;
        let mut comp_traj: Vec<f64> = Vec::new();

        for iter in 0..opts.max_iters {
            comp_iters = iter + 1;
            // E-step with simultaneous likelihood evaluation at the current
            // point; M-step averages the per-context posteriors.
            let mut pseudo: Vec<Vec<f64>> =
                cards.iter().map(|&c| vec![0.0; c]).collect();
            let mut ll = 0.0;
            for ctx in &comp.contexts {
                let mut mass = 0.0;
                let mut marg: Vec<Vec<f64>> =
                    cards.iter().map(|&c| vec![0.0; c]).collect();
                for &j in &ctx.consistent {
                    let states = unrank(j as usize, cards);
                    let mut w = 1.0;
                    for (k, &s) in states.iter().enumerate() {
                        w *= current[k][s];
                    }
                    mass += w;
                    for (k, &s) in states.iter().enumerate() {
                        marg[k][s] += w;
                    }
                }
                if mass > 0.0 {
                    ll += ctx.count * mass.ln();
                    for (k, m) in marg.iter().enumerate() {
                        for (s, &v) in m.iter().enumerate() {
                            pseudo[k][s] += ctx.count * v / mass;
                        }
                    }
                } else {
                    // zero-probability guard: uniform pseudo-counts over the
                    // consistent states (all states if none are consistent)
                    ll = f64::NEG_INFINITY;
                    if ctx.consistent.is_empty() {
                        for (k, &c) in cards.iter().enumerate() {
                            for s in 0..c {
                                pseudo[k][s] += ctx.count / c as f64;
                            }
                        }
                    } else {
                        let share = ctx.count / ctx.consistent.len() as f64;
                        for &j in &ctx.consistent {
                            let states = unrank(j as usize, cards);
                            for (k, &s) in states.iter().enumerate() {
                                pseudo[k][s] += share;
                            }
                        }
                    }
                    log::debug!("zero-mass context hit during E-step (flagged)");
                }
            }
            comp_ll = ll;
            comp_traj.push(ll);
            if ll.is_finite() && (ll - prev_ll) / n < opts.stationarity_tol && iter > 0 {
                break;
            }
            prev_ll = ll;
            for (k, counts) in pseudo.iter().enumerate() {
                let total: f64 = counts.iter().sum();
                if total > 0.0 {
                    current[k] = counts.iter().map(|&c| c / total).collect();
                }
            }
        }
        for (k, &u) in comp.exo_vars.iter().enumerate() {
            theta.insert(u, current[k].clone());
        }
        iterations = iterations.max(comp_iters);
        if comp_ll.is_finite() {
            total_ll += comp_ll;
        } else {
            impossible = true;
        }
        trajectory.push(comp_traj);
    }

    let final_avg = if impossible {
        f64::NEG_INFINITY
    } else {
        total_ll / n
    };
    let lam = tables.lambda_star;
    let relative_gap = if impossible {
        f64::INFINITY
    } else {
        let scale = lam.abs().max(1e-12);
        ((lam - total_ll) / scale).max(0.0)
    };
    let accepted = relative_gap <= opts.acceptance_rel_tol;
    EmRun {
        seed,
        theta,
        iterations,
        final_avg_log_lik: final_avg,
        accepted,
        trajectory,
        relative_gap,
    }
}

/// Deterministic stream of per-run seeds derived from a base seed.
pub fn run_seed(base: u64, index: usize) -> u64 {
    // splitmix64 step
    let mut z = base
        .wrapping_add(0x9E3779B97F4A7C15u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Run EM restarts until `k` are accepted; each accepted point is pushed
/// through the query to form ρ and its range. Fails with
/// `CompatibilityFailure` when no restart reaches λ* within the budget.
pub fn run_emcc(
    model: &Scm,
    dataset: &Dataset,
    query: &CounterfactualQuery,
    k: usize,
    base_seed: u64,
    opts: &EmOptions,
) -> Result<EmccResult, EmccError> {
    let tables = ComponentTables::build(model, dataset)?;
    let mut rho = Vec::with_capacity(k);
    let mut rejected = 0usize;
    let mut executed = 0usize;
    let mut any_undefined = false;

    let batch = k.clamp(8, 64);
    while rho.len() < k && executed < opts.max_restarts {
        let n_batch = batch.min(opts.max_restarts - executed);
        let runs: Vec<(EmRun, Option<QueryOutcome>)> =
            map_collect(opts.exec, n_batch, |i| {
                let seed = run_seed(base_seed, executed + i);
                let run = em_run_with_tables(model, &tables, seed, opts);
                let outcome = if run.accepted {
                    let fscm = model
                        .with_exogenous_pmfs(&run.theta)
                        .expect("theta shape");
                    Some(evaluate(&fscm, query).expect("query evaluation"))
                } else {
                    None
                };
                (run, outcome)
            });
        executed += n_batch;
        for (run, outcome) in runs {
            if rho.len() >= k {
                break;
            }
            match outcome {
                Some(QueryOutcome::Probability(p)) => rho.push(p),
                Some(QueryOutcome::UndefinedConditional) => {
                    any_undefined = true;
                    rejected += 1;
                }
                None => {
                    rejected += 1;
                    let _ = run;
                }
            }
        }
    }

    if rho.is_empty() {
        if any_undefined {
            return Err(EmccError::UndefinedQuery);
        }
        let best_gap = best_gap_estimate(model, &tables, base_seed, executed, opts);
        return Err(EmccError::CompatibilityFailure {
            restarts: executed,
            best_gap,
        });
    }
    let lower = rho.iter().copied().fold(f64::INFINITY, f64::min);
    let upper = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(EmccResult {
        rho,
        lower,
        upper,
        rejected,
        runs_executed: executed,
        lambda_star: tables.lambda_star,
    })
}

fn best_gap_estimate(
    model: &Scm,
    tables: &ComponentTables,
    base_seed: u64,
    executed: usize,
    opts: &EmOptions,
) -> f64 {
    (0..executed)
        .map(|i| em_run_with_tables(model, tables, run_seed(base_seed, i), opts).relative_gap)
        .fold(f64::INFINITY, f64::min)
}

/// Likelihood-based compatibility test: run EM restarts up to `budget`;
/// compatible iff some run's final likelihood reaches λ*, otherwise report
/// the smallest relative gap seen.
pub fn compatibility_test(
    model: &Scm,
    dataset: &Dataset,
    budget: usize,
    base_seed: u64,
    opts: &EmOptions,
) -> Result<CompatVerdict, EmccError> {
    let tables = ComponentTables::build(model, dataset)?;
    let mut best_gap = f64::INFINITY;
    let batch = budget.clamp(1, 16);
    let mut executed = 0usize;
    while executed < budget {
        let n_batch = batch.min(budget - executed);
        let runs: Vec<EmRun> = map_collect(opts.exec, n_batch, |i| {
            em_run_with_tables(model, &tables, run_seed(base_seed, executed + i), opts)
        });
        executed += n_batch;
        for run in runs {
            if run.accepted {
                return Ok(CompatVerdict::Compatible {
                    runs_used: executed,
                });
            }
            best_gap = best_gap.min(run.relative_gap);
        }
    }
    Ok(CompatVerdict::Incompatible { best_gap })
}
