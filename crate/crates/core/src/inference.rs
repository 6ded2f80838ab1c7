//! Exact inference on fully specified models viewed as Bayesian networks.
//!
//! Observational queries run on the model as-is, interventional ones on the
//! mutilated model, counterfactual ones on a multi-world network sharing the
//! exogenous variables. Everything reduces to variable elimination over
//! dense factors; elimination order only affects speed (min-fill heuristic,
//! deterministic tie-breaks).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

use crate::index::joint_card;
use crate::model::{
    multi_world, CounterfactualQuery, ModelError, Scm, StructuralEquation, VarIndex, VarKind,
    WORLD_SUFFIX,
};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model is not fully specified: `{0}` has no PMF")]
    NotFullySpecified(String),
    #[error("state {state} out of range for `{var}`")]
    InvalidState { var: String, state: usize },
    #[error("variable `{var}` is both observed and intervened in world {world}")]
    ObservedAndIntervened { var: String, world: usize },
    #[error("`{0}` must be a Boolean endogenous variable")]
    NotBooleanEndogenous(String),
    #[error("query has no target")]
    EmptyTarget,
}

/// Outcome of a conditional query. A conditioning event of probability zero
/// yields `UndefinedConditional` rather than NaN so batch drivers can skip
/// and continue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueryOutcome {
    Probability(f64),
    UndefinedConditional,
}

impl QueryOutcome {
    pub fn probability(self) -> Option<f64> {
        match self {
            QueryOutcome::Probability(p) => Some(p),
            QueryOutcome::UndefinedConditional => None,
        }
    }
}

/// Dense nonnegative table over an ordered variable scope.
#[derive(Debug, Clone)]
pub struct Factor {
    pub scope: Vec<VarIndex>,
    pub cards: Vec<usize>,
    pub values: Vec<f64>,
}

impl Factor {
    pub fn new(scope: Vec<VarIndex>, cards: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(joint_card(&cards), Some(values.len()));
        debug_assert!(values.iter().all(|&v| v >= 0.0));
        Factor {
            scope,
            cards,
            values,
        }
    }

    fn constant(value: f64) -> Self {
        Factor {
            scope: vec![],
            cards: vec![],
            values: vec![value],
        }
    }

    /// Pointwise product, scopes merged in sorted order.
    pub fn product(&self, other: &Factor) -> Factor {
        let mut scope: Vec<VarIndex> = self
            .scope
            .iter()
            .chain(other.scope.iter())
            .copied()
            .collect();
        scope.sort_unstable();
        scope.dedup();
        let pos: HashMap<VarIndex, usize> =
            scope.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let cards: Vec<usize> = scope
            .iter()
            .map(|v| {
                self.scope
                    .iter()
                    .position(|s| s == v)
                    .map(|i| self.cards[i])
                    .or_else(|| {
                        other
                            .scope
                            .iter()
                            .position(|s| s == v)
                            .map(|i| other.cards[i])
                    })
                    .unwrap()
            })
            .collect();
        let total = joint_card(&cards).expect("factor size overflow");
        let map_a: Vec<usize> = self.scope.iter().map(|v| pos[v]).collect();
        let map_b: Vec<usize> = other.scope.iter().map(|v| pos[v]).collect();
        let mut values = Vec::with_capacity(total);
        let mut states = vec![0usize; scope.len()];
        for _ in 0..total {
            let ia = flat_index(&states, &map_a, &self.cards);
            let ib = flat_index(&states, &map_b, &other.cards);
            values.push(self.values[ia] * other.values[ib]);
            // odometer, last scope position fastest
            for d in (0..scope.len()).rev() {
                states[d] += 1;
                if states[d] < cards[d] {
                    break;
                }
                states[d] = 0;
            }
        }
        Factor {
            scope,
            cards,
            values,
        }
    }

    /// Sum a variable out of the scope.
    pub fn sum_out(&self, var: VarIndex) -> Factor {
        let Some(axis) = self.scope.iter().position(|&v| v == var) else {
            return self.clone();
        };
        let mut scope = self.scope.clone();
        let mut cards = self.cards.clone();
        scope.remove(axis);
        cards.remove(axis);
        let total: usize = joint_card(&cards).unwrap();
        let mut values = vec![0.0; total];
        let mut states = vec![0usize; self.scope.len()];
        for &v in &self.values {
            let mut idx = 0usize;
            for (d, &s) in states.iter().enumerate() {
                if d != axis {
                    idx = idx * cards[if d < axis { d } else { d - 1 }] + s;
                }
            }
            values[idx] += v;
            for d in (0..self.scope.len()).rev() {
                states[d] += 1;
                if states[d] < self.cards[d] {
                    break;
                }
                states[d] = 0;
            }
        }
        Factor {
            scope,
            cards,
            values,
        }
    }

    /// Fix a variable to a state, dropping it from the scope.
    pub fn reduce(&self, var: VarIndex, state: usize) -> Factor {
        let Some(axis) = self.scope.iter().position(|&v| v == var) else {
            return self.clone();
        };
        let mut scope = self.scope.clone();
        let mut cards = self.cards.clone();
        scope.remove(axis);
        cards.remove(axis);
        let total = joint_card(&cards).unwrap();
        let mut values = Vec::with_capacity(total);
        let mut states = vec![0usize; scope.len()];
        for _ in 0..total {
            let mut full: Vec<usize> = Vec::with_capacity(self.scope.len());
            let mut it = states.iter();
            for d in 0..self.scope.len() {
                if d == axis {
                    full.push(state);
                } else {
                    full.push(*it.next().unwrap());
                }
            }
            values.push(self.values[crate::index::joint_index(&full, &self.cards)]);
            for d in (0..scope.len()).rev() {
                states[d] += 1;
                if states[d] < cards[d] {
                    break;
                }
                states[d] = 0;
            }
        }
        Factor {
            scope,
            cards,
            values,
        }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn flat_index(joint_states: &[usize], axis_map: &[usize], cards: &[usize]) -> usize {
    let mut idx = 0;
    for (d, &axis) in axis_map.iter().enumerate() {
        idx = idx * cards[d] + joint_states[axis];
    }
    idx
}

/// A model with some variables forced to constants. Intervened variables
/// lose their incoming arcs and keep a constant equation.
#[derive(Debug, Clone)]
pub struct MutilatedModel {
    pub model: Scm,
    pub interventions: BTreeMap<String, usize>,
}

/// Replace the equation of each intervened variable by a constant map.
pub fn mutilate(
    model: &Scm,
    interventions: &BTreeMap<String, usize>,
) -> Result<MutilatedModel, InferenceError> {
    let mut variables = model.variables().to_vec();
    let mut equations: Vec<StructuralEquation> = Vec::new();
    let mut forced: BTreeMap<VarIndex, usize> = BTreeMap::new();
    for (id, &state) in interventions {
        let idx = model.require_var(id)?;
        if state >= model.cardinality(idx) {
            return Err(InferenceError::InvalidState {
                var: id.clone(),
                state,
            });
        }
        forced.insert(idx, state);
    }
    for eq in model.equations() {
        if let Some(&state) = forced.get(&eq.child) {
            equations.push(StructuralEquation {
                child: eq.child,
                parents: vec![],
                table: vec![state],
            });
        } else {
            equations.push(eq.clone());
        }
    }
    let pmfs = model
        .exogenous_vars()
        .iter()
        .filter_map(|&u| {
            model
                .exogenous_pmf(u)
                .map(|p| (model.variable(u).id.clone(), p.to_vec()))
        })
        .collect();
    // variables unchanged; rebuild to refresh internal maps
    let scm = Scm::new(std::mem::take(&mut variables), equations, pmfs)?;
    Ok(MutilatedModel {
        model: scm,
        interventions: interventions.clone(),
    })
}

/// Factors of the FSCM seen as a Bayesian network: one PMF per exogenous
/// variable, one degenerate CPT per equation.
fn bn_factors(model: &Scm) -> Result<Vec<Factor>, InferenceError> {
    let mut factors = Vec::new();
    for u in model.exogenous_vars() {
        let pmf = model
            .exogenous_pmf(u)
            .ok_or_else(|| InferenceError::NotFullySpecified(model.variable(u).id.clone()))?;
        factors.push(Factor::new(
            vec![u],
            vec![model.cardinality(u)],
            pmf.to_vec(),
        ));
    }
    for eq in model.equations() {
        let mut scope = eq.parents.clone();
        scope.push(eq.child);
        let cards: Vec<usize> = scope.iter().map(|&v| model.cardinality(v)).collect();
        let parent_cards = &cards[..cards.len() - 1];
        let child_card = *cards.last().unwrap();
        let total = joint_card(&cards).unwrap();
        let mut values = vec![0.0; total];
        let n_parent = joint_card(parent_cards).unwrap();
        for j in 0..n_parent {
            values[j * child_card + eq.table[j]] = 1.0;
        }
        factors.push(Factor::new(scope, cards, values));
    }
    Ok(factors)
}

/// Min-fill elimination order over `elim`, ties broken by variable index.
fn min_fill_order(factors: &[Factor], elim: &BTreeSet<VarIndex>) -> Vec<VarIndex> {
    let mut neighbors: BTreeMap<VarIndex, BTreeSet<VarIndex>> = BTreeMap::new();
    for f in factors {
        for &a in &f.scope {
            for &b in &f.scope {
                if a != b {
                    neighbors.entry(a).or_default().insert(b);
                }
            }
        }
        for &a in &f.scope {
            neighbors.entry(a).or_default();
        }
    }
    let mut remaining: BTreeSet<VarIndex> = elim.clone();
    let mut order = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let mut best: Option<(usize, VarIndex)> = None;
        for &v in &remaining {
            let nbrs: Vec<VarIndex> = neighbors
                .get(&v)
                .map(|s| s.iter().copied().filter(|n| *n != v).collect())
                .unwrap_or_default();
            let mut fill = 0;
            for i in 0..nbrs.len() {
                for j in (i + 1)..nbrs.len() {
                    if !neighbors[&nbrs[i]].contains(&nbrs[j]) {
                        fill += 1;
                    }
                }
            }
            if best.map(|(f, b)| (fill, v) < (f, b)).unwrap_or(true) {
                best = Some((fill, v));
            }
        }
        let (_, v) = best.unwrap();
        remaining.remove(&v);
        order.push(v);
        let nbrs: Vec<VarIndex> = neighbors
            .get(&v)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        for i in 0..nbrs.len() {
            for j in (i + 1)..nbrs.len() {
                let (a, b) = (nbrs[i], nbrs[j]);
                neighbors.get_mut(&a).unwrap().insert(b);
                neighbors.get_mut(&b).unwrap().insert(a);
            }
        }
        for &n in &nbrs {
            neighbors.get_mut(&n).unwrap().remove(&v);
        }
        neighbors.remove(&v);
    }
    order
}

/// Eliminate `order` from the factor list by repeated multiply-and-sum-out.
fn eliminate(mut factors: Vec<Factor>, order: &[VarIndex]) -> Vec<Factor> {
    for &v in order {
        let (touching, rest): (Vec<Factor>, Vec<Factor>) =
            factors.into_iter().partition(|f| f.scope.contains(&v));
        factors = rest;
        if touching.is_empty() {
            continue;
        }
        let mut prod = touching[0].clone();
        for f in &touching[1..] {
            prod = prod.product(f);
        }
        factors.push(prod.sum_out(v));
    }
    factors
}

/// Unnormalized joint over the targets with the evidence fixed, then
/// normalize: P(target | evidence) with a zero-probability evidence signaled
/// as `UndefinedConditional`. Probabilities clamp to [0,1] (clamps logged).
fn conditional_probability(
    model: &Scm,
    evidence: &BTreeMap<VarIndex, usize>,
    target: &BTreeMap<VarIndex, usize>,
    forced_order: Option<&[VarIndex]>,
) -> Result<QueryOutcome, InferenceError> {
    if target.is_empty() {
        return Err(InferenceError::EmptyTarget);
    }
    let mut factors = bn_factors(model)?;
    for (&v, &s) in evidence {
        factors = factors.into_iter().map(|f| f.reduce(v, s)).collect();
    }
    let keep: BTreeSet<VarIndex> = target.keys().copied().collect();
    let mut elim: BTreeSet<VarIndex> = BTreeSet::new();
    for f in &factors {
        for &v in &f.scope {
            if !keep.contains(&v) {
                elim.insert(v);
            }
        }
    }
    let order: Vec<VarIndex> = match forced_order {
        Some(o) => o.iter().copied().filter(|v| elim.contains(v)).collect(),
        None => min_fill_order(&factors, &elim),
    };
    let remaining = eliminate(factors, &order);
    let mut joint = Factor::constant(1.0);
    for f in &remaining {
        joint = joint.product(f);
    }
    let denominator = joint.total();
    if denominator <= 0.0 {
        return Ok(QueryOutcome::UndefinedConditional);
    }
    let mut numerator = joint;
    for (&v, &s) in target {
        numerator = numerator.reduce(v, s);
    }
    let p = numerator.total() / denominator;
    Ok(QueryOutcome::Probability(clamp_probability(p)))
}

pub(crate) fn clamp_probability(p: f64) -> f64 {
    if p < 0.0 || p > 1.0 {
        if p < -1e-12 || p > 1.0 + 1e-12 {
            log::warn!("probability {p} clamped to [0,1] beyond tolerance");
        } else {
            log::debug!("probability {p} clamped to [0,1]");
        }
        p.clamp(0.0, 1.0)
    } else {
        p
    }
}

/// Evaluate a query on a fully specified model.
///
/// Builds the structure the query needs — the model itself for observational
/// queries, the mutilated model for interventional ones, a multi-world
/// network with per-world mutilation otherwise — and runs variable
/// elimination.
pub fn evaluate(model: &Scm, query: &CounterfactualQuery) -> Result<QueryOutcome, InferenceError> {
    evaluate_with_order(model, query, None)
}

/// [`evaluate`] with a forced elimination order (exactness is order-independent;
/// exposed for the order-invariance tests).
pub fn evaluate_with_order(
    model: &Scm,
    query: &CounterfactualQuery,
    forced_order: Option<&[VarIndex]>,
) -> Result<QueryOutcome, InferenceError> {
    let worlds = query.worlds.len().max(1);
    for (w, spec) in query.worlds.iter().enumerate() {
        if w == query.observation_world {
            for var in spec.interventions.keys() {
                if query.observations.contains_key(var) {
                    return Err(InferenceError::ObservedAndIntervened {
                        var: var.clone(),
                        world: w,
                    });
                }
            }
        }
    }

    let expanded;
    let network: &Scm = if worlds == 1 {
        expanded = model.clone();
        &expanded
    } else {
        expanded = multi_world(model, worlds)?;
        &expanded
    };

    let world_id = |base: &str, w: usize| -> String {
        if w == 0 {
            base.to_string()
        } else {
            format!("{base}{}", WORLD_SUFFIX.repeat(w))
        }
    };

    let mut interventions: BTreeMap<String, usize> = BTreeMap::new();
    for (w, spec) in query.worlds.iter().enumerate() {
        for (var, &state) in &spec.interventions {
            model.require_var(var)?;
            interventions.insert(world_id(var, w), state);
        }
    }
    let mutilated = mutilate(network, &interventions)?;
    let net = &mutilated.model;

    let mut evidence = BTreeMap::new();
    for (var, &state) in &query.observations {
        let idx = net.require_var(&world_id(var, query.observation_world))?;
        check_state(net, idx, state)?;
        evidence.insert(idx, state);
    }
    let mut target = BTreeMap::new();
    for ((w, var), &state) in &query.target {
        let idx = net.require_var(&world_id(var, *w))?;
        check_state(net, idx, state)?;
        target.insert(idx, state);
    }
    conditional_probability(net, &evidence, &target, forced_order)
}

fn check_state(model: &Scm, var: VarIndex, state: usize) -> Result<(), InferenceError> {
    if state >= model.cardinality(var) {
        return Err(InferenceError::InvalidState {
            var: model.variable(var).id.clone(),
            state,
        });
    }
    Ok(())
}

fn require_boolean_endogenous(model: &Scm, id: &str) -> Result<(), InferenceError> {
    let idx = model.require_var(id)?;
    let var = model.variable(idx);
    if var.kind != VarKind::Endogenous || var.cardinality != 2 {
        return Err(InferenceError::NotBooleanEndogenous(id.to_string()));
    }
    Ok(())
}

/// P(Y_{X=1}=1, Y_{X=0}=0) on the twin network.
pub fn pns(model: &Scm, cause: &str, effect: &str) -> Result<QueryOutcome, InferenceError> {
    require_boolean_endogenous(model, cause)?;
    require_boolean_endogenous(model, effect)?;
    evaluate(model, &CounterfactualQuery::pns(cause, effect))
}

/// P(Y_{X=0}=0 | X=1, Y=1) on the twin network.
pub fn pn(model: &Scm, cause: &str, effect: &str) -> Result<QueryOutcome, InferenceError> {
    require_boolean_endogenous(model, cause)?;
    require_boolean_endogenous(model, effect)?;
    evaluate(model, &CounterfactualQuery::pn(cause, effect))
}

/// P(Y_{X=1}=1 | X=0, Y=0) on the twin network.
pub fn ps(model: &Scm, cause: &str, effect: &str) -> Result<QueryOutcome, InferenceError> {
    require_boolean_endogenous(model, cause)?;
    require_boolean_endogenous(model, effect)?;
    evaluate(model, &CounterfactualQuery::ps(cause, effect))
}

/// Joint PMF over all endogenous variables, exogenous marginalized out.
pub fn endogenous_joint(model: &Scm) -> Result<Factor, InferenceError> {
    let factors = bn_factors(model)?;
    let elim: BTreeSet<VarIndex> = model.exogenous_vars().into_iter().collect();
    let order = min_fill_order(&factors, &elim);
    let remaining = eliminate(factors, &order);
    let mut joint = Factor::constant(1.0);
    for f in &remaining {
        joint = joint.product(&f);
    }
    // scope might miss isolated endogenous vars only if the model had none;
    // every endogenous variable has an equation factor, so all appear.
    debug_assert_eq!(joint.scope.len(), model.endogenous_vars().len());
    Ok(joint)
}
