//! Credal-set view of a partially specified model given empirical data.
//!
//! Each exogenous variable gets a linear equality system over its PMF
//! simplex: indicator sums of its states must reproduce the empirical
//! conditionals of its c-component. Compatibility of model and data is the
//! feasibility of every per-variable system; exact query bounds come from
//! optimizing over all combinations of the systems' polytope vertices (the
//! query numerator and denominator are multilinear in the per-variable PMFs,
//! so extrema sit at vertex combinations).
//!
//! Right-hand sides fit from data are exact count ratios and the golden-path
//! vertex enumeration runs in rational arithmetic; synthetic distributions
//! fall back to floats with a 1e-9 tolerance.

use std::collections::BTreeMap;

use num::{BigRational, One, ToPrimitive};
use thiserror::Error;

use crate::data::{CptRow, EndogenousBn};
use crate::exec::{map_collect, ExecMode};
use crate::index::{joint_card, unrank};
use crate::inference::{evaluate, InferenceError, QueryOutcome};
use crate::model::{CounterfactualQuery, ModelError, Scm, VarIndex};
use crate::polytope::{self, Equality, PolytopeError, FLOAT_TOL};

/// Default cap on enumerated vertices per exogenous variable.
pub const DEFAULT_VERTEX_BUDGET: usize = 100_000;
/// Default cap on vertex combinations sweepable by [`exact_bounds`].
pub const DEFAULT_COMBINATION_BUDGET: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum CredalError {
    #[error("model is not Markovian")]
    NotMarkovian,
    #[error("model is not quasi-Markovian")]
    NotQuasiMarkovian,
    #[error("constraint system for `{0}` is infeasible")]
    Infeasible(String),
    #[error("vertex budget {budget} exceeded for `{var}`")]
    VertexBudgetExceeded { var: String, budget: usize },
    #[error("combination budget {0} exceeded")]
    CombinationBudgetExceeded(usize),
    #[error("query undefined on every compatible model (zero-probability conditioning)")]
    UndefinedQuery,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Right-hand side of one constraint: an exact count ratio when the
/// endogenous BN was fit from data, a float otherwise.
#[derive(Debug, Clone)]
pub enum Rhs {
    Exact(BigRational),
    Float(f64),
}

impl Rhs {
    pub fn as_f64(&self) -> f64 {
        match self {
            Rhs::Exact(r) => r.to_f64().unwrap(),
            Rhs::Float(v) => *v,
        }
    }

    fn close_to(&self, other: &Rhs) -> bool {
        match (self, other) {
            (Rhs::Exact(a), Rhs::Exact(b)) => a == b,
            _ => (self.as_f64() - other.as_f64()).abs() <= FLOAT_TOL,
        }
    }
}

/// One equality `Σ_{u ∈ support} P(u) = rhs` with the endogenous context
/// that generated it.
#[derive(Debug, Clone)]
pub struct ConstraintRow {
    pub support: Vec<usize>,
    pub rhs: Rhs,
    pub provenance: String,
}

/// The equality system of one exogenous variable over its PMF simplex.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub exo: VarIndex,
    pub cardinality: usize,
    pub rows: Vec<ConstraintRow>,
}

impl ConstraintSet {
    fn push_dedup(&mut self, row: ConstraintRow) {
        let duplicate = self
            .rows
            .iter()
            .any(|r| r.support == row.support && r.rhs.close_to(&row.rhs));
        if !duplicate {
            self.rows.push(row);
        }
    }

    fn float_equalities(&self) -> Vec<Equality<f64>> {
        self.rows
            .iter()
            .map(|r| Equality {
                support: r.support.clone(),
                rhs: r.rhs.as_f64(),
            })
            .collect()
    }

    fn exact_equalities(&self) -> Option<Vec<Equality<BigRational>>> {
        self.rows
            .iter()
            .map(|r| match &r.rhs {
                Rhs::Exact(q) => Some(Equality {
                    support: r.support.clone(),
                    rhs: q.clone(),
                }),
                Rhs::Float(_) => None,
            })
            .collect()
    }

    pub fn is_feasible(&self) -> bool {
        polytope::feasible(self.cardinality, &self.float_equalities(), FLOAT_TOL)
    }
}

/// Per-exogenous constraint sets plus any deterministic conflicts from
/// components without exogenous freedom.
#[derive(Debug, Clone, Default)]
pub struct CredalSpec {
    pub sets: BTreeMap<VarIndex, ConstraintSet>,
    /// Violations with no free parameters (components whose equations alone
    /// contradict the empirical conditionals).
    pub hard_conflicts: Vec<String>,
}

impl CredalSpec {
    pub fn set(&self, exo: VarIndex) -> Option<&ConstraintSet> {
        self.sets.get(&exo)
    }

    /// Documented JSON export of the systems for external LP tooling.
    pub fn to_json(&self, model: &Scm) -> serde_json::Value {
        let sets: Vec<serde_json::Value> = self
            .sets
            .values()
            .map(|cs| {
                serde_json::json!({
                    "exogenous": model.variable(cs.exo).id,
                    "cardinality": cs.cardinality,
                    "rows": cs.rows.iter().map(|r| {
                        let mut row = serde_json::json!({
                            "support": r.support,
                            "rhs": r.rhs.as_f64(),
                            "provenance": r.provenance,
                        });
                        if let Rhs::Exact(q) = &r.rhs {
                            row["rhs_exact"] =
                                serde_json::Value::String(format!("{}/{}", q.numer(), q.denom()));
                        }
                        row
                    }).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({
            "schema": 1,
            "constraint_sets": sets,
            "hard_conflicts": self.hard_conflicts,
        })
    }
}

fn rhs_product(factors: &[&CptRow], states: &[usize]) -> Option<Rhs> {
    debug_assert_eq!(factors.len(), states.len());
    if factors.iter().any(|r| r.is_unobserved()) {
        return None;
    }
    let exacts: Option<Vec<BigRational>> = factors
        .iter()
        .zip(states)
        .map(|(r, &s)| r.exact(s))
        .collect();
    Some(match exacts {
        Some(qs) => Rhs::Exact(qs.into_iter().fold(BigRational::one(), |acc, q| acc * q)),
        None => Rhs::Float(
            factors
                .iter()
                .zip(states)
                .map(|(r, &s)| r.prob(s))
                .product(),
        ),
    })
}

/// Constraint map for Markovian models: for each endogenous `V` with
/// exogenous parent `U`, one equality per (context, state) pair,
/// `Σ_u P(u)·⟦f_V(u, w_V) = v⟧ = P(v | w_V)`.
///
/// Rows for unobserved contexts are omitted — an unseen context imposes no
/// empirical constraint.
pub fn markov_map(model: &Scm, bn: &EndogenousBn) -> Result<CredalSpec, CredalError> {
    if !model.is_markovian() {
        return Err(CredalError::NotMarkovian);
    }
    constraint_map(model, bn)
}

/// Constraint map for quasi-Markovian models: for each exogenous `U` with
/// c-component closure `W^c`, one equality per closure configuration,
/// `Σ_{u ∈ Ω_U^{w^c}} P(u) = Π_{V ∈ V^c} P(v | w_V)`.
///
/// Coincides with [`markov_map`] on Markovian inputs.
pub fn quasi_markov_map(model: &Scm, bn: &EndogenousBn) -> Result<CredalSpec, CredalError> {
    if !model.is_quasi_markovian() {
        return Err(CredalError::NotQuasiMarkovian);
    }
    constraint_map(model, bn)
}

fn constraint_map(model: &Scm, bn: &EndogenousBn) -> Result<CredalSpec, CredalError> {
    let comps = model.c_components()?;
    let mut spec = CredalSpec::default();
    for comp in &comps {
        if comp.endo_set.is_empty() {
            // isolated exogenous variable: unconstrained simplex
            for &u in &comp.exo_set {
                spec.sets.insert(
                    u,
                    ConstraintSet {
                        exo: u,
                        cardinality: model.cardinality(u),
                        rows: Vec::new(),
                    },
                );
            }
            continue;
        }
        let closure_cards: Vec<usize> = comp
            .closure
            .iter()
            .map(|&v| model.cardinality(v))
            .collect();
        let closure_pos: BTreeMap<VarIndex, usize> = comp
            .closure
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i))
            .collect();
        let n_configs = joint_card(&closure_cards).expect("closure space overflow");

        let exo = match comp.exo_set.as_slice() {
            [] => None,
            [u] => Some(*u),
            _ => return Err(CredalError::NotQuasiMarkovian),
        };
        let mut cs = exo.map(|u| ConstraintSet {
            exo: u,
            cardinality: model.cardinality(u),
            rows: Vec::new(),
        });

        for cfg in 0..n_configs {
            let wc = unrank(cfg, &closure_cards);
            // rhs = product of the members' empirical conditionals
            let mut factor_rows = Vec::new();
            let mut factor_states = Vec::new();
            for &v in &comp.endo_set {
                let cpt = bn.cpt(v);
                let ctx_states: Vec<usize> = cpt
                    .context
                    .iter()
                    .map(|w| wc[closure_pos[w]])
                    .collect();
                factor_rows.push(cpt.row(&ctx_states));
                factor_states.push(wc[closure_pos[&v]]);
            }
            let Some(rhs) = rhs_product(&factor_rows, &factor_states) else {
                continue;
            };

            let provenance = comp
                .closure
                .iter()
                .zip(&wc)
                .map(|(&v, s)| format!("{}={}", model.variable(v).id, s))
                .collect::<Vec<_>>()
                .join(",");

            match (&exo, &mut cs) {
                (Some(u), Some(cs)) => {
                    let support: Vec<usize> = (0..model.cardinality(*u))
                        .filter(|&u_state| {
                            component_consistent(model, comp, &closure_pos, &wc, Some((*u, u_state)))
                        })
                        .collect();
                    cs.push_dedup(ConstraintRow {
                        support,
                        rhs,
                        provenance,
                    });
                }
                (None, _) => {
                    // no exogenous freedom: the equations must reproduce the
                    // empirical value exactly
                    let consistent =
                        component_consistent(model, comp, &closure_pos, &wc, None);
                    let want = if consistent { 1.0 } else { 0.0 };
                    if (rhs.as_f64() - want).abs() > FLOAT_TOL {
                        spec.hard_conflicts.push(format!(
                            "deterministic component {{{provenance}}}: equations give {want}, data gives {}",
                            rhs.as_f64()
                        ));
                    }
                }
                _ => unreachable!(),
            }
        }
        if let Some(cs) = cs {
            spec.sets.insert(cs.exo, cs);
        }
    }
    Ok(spec)
}

/// Does every member equation of the component map (exogenous state, closure
/// context) to the closure's recorded child states?
fn component_consistent(
    model: &Scm,
    comp: &crate::model::CComponent,
    closure_pos: &BTreeMap<VarIndex, usize>,
    wc: &[usize],
    exo: Option<(VarIndex, usize)>,
) -> bool {
    comp.endo_set.iter().all(|&v| {
        let eq = model.equation(v).unwrap();
        let parent_states: Vec<usize> = eq
            .parents
            .iter()
            .map(|&p| match exo {
                Some((u, u_state)) if p == u => u_state,
                _ => wc[closure_pos[&p]],
            })
            .collect();
        let cards: Vec<usize> = eq.parents.iter().map(|&p| model.cardinality(p)).collect();
        eq.apply(&parent_states, &cards) == wc[closure_pos[&v]]
    })
}

/// Exact compatibility: every per-variable system feasible on its simplex
/// (phase-1 linear feasibility, tolerance 1e-9) and no deterministic
/// conflicts.
pub fn is_compatible(spec: &CredalSpec) -> bool {
    spec.hard_conflicts.is_empty() && spec.sets.values().all(|cs| cs.is_feasible())
}

fn vertex_error(model_var: String, e: PolytopeError) -> CredalError {
    match e {
        PolytopeError::Infeasible => CredalError::Infeasible(model_var),
        PolytopeError::VertexBudgetExceeded(b) => CredalError::VertexBudgetExceeded {
            var: model_var,
            budget: b,
        },
    }
}

/// All extreme points of `{p ∈ simplex : rows}`, deduplicated. Runs in
/// exact rational arithmetic when every right-hand side is a count ratio.
pub fn vertices(cs: &ConstraintSet, budget: usize) -> Result<Vec<Vec<f64>>, CredalError> {
    let name = format!("exo #{}", cs.exo);
    match cs.exact_equalities() {
        Some(eqs) => {
            let vs = polytope::enumerate_vertices(cs.cardinality, &eqs, budget)
                .map_err(|e| vertex_error(name, e))?;
            Ok(vs
                .into_iter()
                .map(|v| v.iter().map(|q| q.to_f64().unwrap()).collect())
                .collect())
        }
        None => polytope::enumerate_vertices(cs.cardinality, &cs.float_equalities(), budget)
            .map_err(|e| vertex_error(name, e)),
    }
}

/// Rational-mode vertices, available when the system was fit from data.
pub fn vertices_exact(
    cs: &ConstraintSet,
    budget: usize,
) -> Option<Result<Vec<Vec<BigRational>>, CredalError>> {
    let eqs = cs.exact_equalities()?;
    Some(
        polytope::enumerate_vertices(cs.cardinality, &eqs, budget)
            .map_err(|e| vertex_error(format!("exo #{}", cs.exo), e)),
    )
}

/// An interval of query values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

/// Budgets and execution mode for [`exact_bounds`].
#[derive(Debug, Clone)]
pub struct BoundsOptions {
    pub vertex_budget: usize,
    pub combination_budget: usize,
    pub exec: ExecMode,
}

impl Default for BoundsOptions {
    fn default() -> Self {
        BoundsOptions {
            vertex_budget: DEFAULT_VERTEX_BUDGET,
            combination_budget: DEFAULT_COMBINATION_BUDGET,
            exec: ExecMode::default(),
        }
    }
}

/// Exact bounds of a query over the credal specification: enumerate each
/// variable's polytope vertices and sweep every combination, evaluating the
/// query on the induced fully specified model. Exceeding a budget is an
/// error, never a silent approximation.
pub fn exact_bounds(
    model: &Scm,
    spec: &CredalSpec,
    query: &CounterfactualQuery,
    opts: &BoundsOptions,
) -> Result<Bounds, CredalError> {
    if !spec.hard_conflicts.is_empty() {
        return Err(CredalError::Infeasible("deterministic conflict".into()));
    }
    let mut per_var: Vec<(VarIndex, Vec<Vec<f64>>)> = Vec::new();
    for cs in spec.sets.values() {
        let name = model.variable(cs.exo).id.clone();
        let vs = match cs.exact_equalities() {
            Some(eqs) => polytope::enumerate_vertices(cs.cardinality, &eqs, opts.vertex_budget)
                .map_err(|e| vertex_error(name, e))?
                .into_iter()
                .map(|v| v.iter().map(|q| q.to_f64().unwrap()).collect())
                .collect(),
            None => polytope::enumerate_vertices(
                cs.cardinality,
                &cs.float_equalities(),
                opts.vertex_budget,
            )
            .map_err(|e| vertex_error(name, e))?,
        };
        per_var.push((cs.exo, vs));
    }
    let combos = per_var
        .iter()
        .try_fold(1usize, |acc, (_, vs)| acc.checked_mul(vs.len()))
        .filter(|&c| c <= opts.combination_budget)
        .ok_or(CredalError::CombinationBudgetExceeded(
            opts.combination_budget,
        ))?;

    let radices: Vec<usize> = per_var.iter().map(|(_, vs)| vs.len()).collect();
    let outcomes: Vec<Option<f64>> = map_collect(opts.exec, combos, |combo| {
        let choice = unrank(combo, &radices);
        let pmfs: BTreeMap<VarIndex, Vec<f64>> = per_var
            .iter()
            .zip(&choice)
            .map(|((u, vs), &i)| (*u, vs[i].clone()))
            .collect();
        let fscm = model.with_exogenous_pmfs(&pmfs).expect("vertex shape");
        match evaluate(&fscm, query) {
            Ok(QueryOutcome::Probability(p)) => Some(p),
            Ok(QueryOutcome::UndefinedConditional) => None,
            Err(e) => panic!("query evaluation failed during bounds sweep: {e}"),
        }
    });

    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    let mut defined = 0usize;
    for p in outcomes.into_iter().flatten() {
        lower = lower.min(p);
        upper = upper.max(p);
        defined += 1;
    }
    if defined == 0 {
        return Err(CredalError::UndefinedQuery);
    }
    Ok(Bounds { lower, upper })
}

/// Does the specification embed the sub-model obtained by dropping the
/// listed exogenous states? True iff every per-variable system stays
/// feasible after forcing `P(u) = 0` on each dropped state.
pub fn embeds(spec: &CredalSpec, dropped: &BTreeMap<VarIndex, Vec<usize>>) -> bool {
    if !spec.hard_conflicts.is_empty() {
        return false;
    }
    spec.sets.values().all(|cs| {
        let mut eqs = cs.float_equalities();
        if let Some(states) = dropped.get(&cs.exo) {
            for &u in states {
                eqs.push(Equality {
                    support: vec![u],
                    rhs: 0.0,
                });
            }
        }
        polytope::feasible(cs.cardinality, &eqs, FLOAT_TOL)
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{fit_endogenous, Dataset};
    use crate::model::{
        canonical_scm, restrict_exogenous, CausalGraph, GraphNode, StructuralEquation, Variable,
        DEFAULT_EXO_CARDINALITY_CAP,
    };
    use approx::assert_abs_diff_eq;

    pub(crate) fn study_model() -> Scm {
        let g = CausalGraph::new(
            vec![
                GraphNode {
                    id: "Z".into(),
                    cardinality: 2,
                },
                GraphNode {
                    id: "X".into(),
                    cardinality: 2,
                },
                GraphNode {
                    id: "Y".into(),
                    cardinality: 2,
                },
            ],
            vec![(0, 1), (0, 2), (1, 2)],
        );
        canonical_scm(&g, DEFAULT_EXO_CARDINALITY_CAP).unwrap()
    }

    pub(crate) fn study_dataset() -> Dataset {
        let rows = vec![
            (vec![0, 0, 0], 2u64),
            (vec![0, 0, 1], 114),
            (vec![0, 1, 0], 41),
            (vec![0, 1, 1], 313),
            (vec![1, 0, 0], 107),
            (vec![1, 0, 1], 13),
            (vec![1, 1, 0], 109),
            (vec![1, 1, 1], 1),
        ];
        Dataset::with_weights(
            vec!["Z".into(), "X".into(), "Y".into()],
            rows.iter().map(|(r, _)| r.clone()).collect(),
            rows.iter().map(|(_, w)| *w).collect(),
        )
    }

    fn rational(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    /// Mechanism index of the canonical equation for `child` realizing the
    /// given endogenous-parent → child map (parent states in equation order).
    pub(crate) fn mechanism_state(
        model: &Scm,
        child: &str,
        mech: &dyn Fn(&[usize]) -> usize,
    ) -> usize {
        let v = model.var_index(child).unwrap();
        let eq = model.equation(v).unwrap();
        let u = eq.parents[0];
        let cards: Vec<usize> = eq.parents.iter().map(|&p| model.cardinality(p)).collect();
        let endo_cards = &cards[1..];
        let n_ctx = joint_card(endo_cards).unwrap();
        'outer: for u_state in 0..model.cardinality(u) {
            for ctx in 0..n_ctx {
                let w = unrank(ctx, endo_cards);
                let mut states = vec![u_state];
                states.extend(&w);
                if eq.apply(&states, &cards) != mech(&w) {
                    continue 'outer;
                }
            }
            return u_state;
        }
        panic!("mechanism not found for {child}");
    }

    #[test]
    fn study_constraints_match_published_fractions() {
        let model = study_model();
        let bn = fit_endogenous(&model, &study_dataset()).unwrap();
        let spec = markov_map(&model, &bn).unwrap();

        let ux = model.var_index("U_X").unwrap();
        let cs = spec.set(ux).unwrap();
        let m_const0 = mechanism_state(&model, "X", &|_| 0);
        let m_neg = mechanism_state(&model, "X", &|w| 1 - w[0]);
        let m_id = mechanism_state(&model, "X", &|w| w[0]);

        let find_row = |mut support: Vec<usize>| -> Option<&ConstraintRow> {
            support.sort_unstable();
            cs.rows.iter().find(|r| {
                let mut s = r.support.clone();
                s.sort_unstable();
                s == support
            })
        };
        // f_X(Z=0)=0 for the constant-0 and identity mechanisms:
        // P(X=0|Z=0) = 116/470
        let row = find_row(vec![m_const0, m_id]).expect("missing Z=0 row");
        match &row.rhs {
            Rhs::Exact(q) => assert_eq!(q, &rational(116, 470)),
            _ => panic!("expected exact rhs"),
        }
        // f_X(Z=1)=0 for the constant-0 and negation mechanisms:
        // P(X=0|Z=1) = 120/230
        let row = find_row(vec![m_const0, m_neg]).expect("missing Z=1 row");
        match &row.rhs {
            Rhs::Exact(q) => assert_eq!(q, &rational(120, 230)),
            _ => panic!("expected exact rhs"),
        }

        assert!(is_compatible(&spec));
    }

    /// The single-variable family: ternary U, Boolean V, f(0)=0, f(1)=f(2)=1.
    /// Solutions are [P(V=0), α, P(V=1)−α]; vertices at the α endpoints.
    #[test]
    fn single_variable_family_has_two_vertices() {
        let variables = vec![
            Variable::endogenous("V", 2),
            Variable::exogenous("U", 3),
        ];
        let equations = vec![StructuralEquation {
            child: 0,
            parents: vec![1],
            table: vec![0, 1, 1],
        }];
        let model = Scm::new(variables, equations, BTreeMap::new()).unwrap();
        let data = Dataset::with_weights(
            vec!["V".into()],
            vec![vec![0], vec![1]],
            vec![30, 70],
        );
        let bn = fit_endogenous(&model, &data).unwrap();
        let spec = markov_map(&model, &bn).unwrap();
        let cs = spec.set(1).unwrap();
        let mut vs = vertices_exact(cs, 100).unwrap().unwrap();
        vs.sort_by(|a, b| a[1].partial_cmp(&b[1]).unwrap());
        assert_eq!(vs.len(), 2);
        // α = 0: [3/10, 0, 7/10]; α = 7/10: [3/10, 7/10, 0]
        assert_eq!(
            vs[0],
            vec![rational(3, 10), rational(0, 1), rational(7, 10)]
        );
        assert_eq!(
            vs[1],
            vec![rational(3, 10), rational(7, 10), rational(0, 1)]
        );
    }

    /// Two Boolean children of one five-state confounder with joint data
    /// P(00)=1/5, P(10)=2/5, P(01)=4/15, P(11)=2/15. The solution family is
    /// [1/5, 2/15, 2/5, α, 4/15−α].
    pub(crate) fn confounded_pair_model() -> Scm {
        let variables = vec![
            Variable::endogenous("V1", 2),
            Variable::endogenous("V2", 2),
            Variable::exogenous("U", 5),
        ];
        // f_V1: 0 for u ∈ {0,3,4}, 1 for u ∈ {1,2}
        // f_V2(·, V1=0): 0 for u ∈ {0,2}; f_V2(·, V1=1): 0 for u ∈ {2,3}
        let table_v2 = vec![
            0, 1, // u=0
            1, 1, // u=1
            0, 0, // u=2
            1, 0, // u=3
            1, 1, // u=4
        ];
        let equations = vec![
            StructuralEquation {
                child: 0,
                parents: vec![2],
                table: vec![0, 1, 1, 0, 0],
            },
            StructuralEquation {
                child: 1,
                parents: vec![2, 0],
                table: table_v2,
            },
        ];
        Scm::new(variables, equations, BTreeMap::new()).unwrap()
    }

    pub(crate) fn confounded_pair_dataset() -> Dataset {
        // counts over (V1, V2) with total 15: P(00)=3/15, P(01)=4/15,
        // P(10)=6/15, P(11)=2/15
        Dataset::with_weights(
            vec!["V1".into(), "V2".into()],
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]],
            vec![3, 4, 6, 2],
        )
    }

    #[test]
    fn confounded_pair_reproduces_published_family() {
        let model = confounded_pair_model();
        assert!(model.validate().is_valid());
        assert!(!model.is_markovian());
        assert!(model.is_quasi_markovian());
        assert!(matches!(
            markov_map(&model, &fit_endogenous(&model, &confounded_pair_dataset()).unwrap()),
            Err(CredalError::NotMarkovian)
        ));

        let bn = fit_endogenous(&model, &confounded_pair_dataset()).unwrap();
        let spec = quasi_markov_map(&model, &bn).unwrap();
        let cs = spec.set(2).unwrap();

        // expected rows: P(0)=1/5, P(1)=2/15, P(2)=2/5, P(3)+P(4)=4/15
        let mut seen = 0;
        for row in &cs.rows {
            let mut support = row.support.clone();
            support.sort_unstable();
            let rhs = match &row.rhs {
                Rhs::Exact(q) => q.clone(),
                _ => panic!("expected exact rhs"),
            };
            match support.as_slice() {
                [0] => {
                    assert_eq!(rhs, rational(1, 5));
                    seen += 1;
                }
                [1] => {
                    assert_eq!(rhs, rational(2, 15));
                    seen += 1;
                }
                [2] => {
                    assert_eq!(rhs, rational(2, 5));
                    seen += 1;
                }
                [3, 4] => {
                    assert_eq!(rhs, rational(4, 15));
                    seen += 1;
                }
                other => panic!("unexpected support {other:?}"),
            }
        }
        assert_eq!(seen, 4);

        let mut vs = vertices_exact(cs, 100).unwrap().unwrap();
        vs.sort_by(|a, b| a[3].partial_cmp(&b[3]).unwrap());
        assert_eq!(vs.len(), 2);
        assert_eq!(
            vs[0],
            vec![
                rational(1, 5),
                rational(2, 15),
                rational(2, 5),
                rational(0, 1),
                rational(4, 15)
            ]
        );
        assert_eq!(
            vs[1],
            vec![
                rational(1, 5),
                rational(2, 15),
                rational(2, 5),
                rational(4, 15),
                rational(0, 1)
            ]
        );
    }

    #[test]
    fn quasi_map_equals_markov_map_on_markovian_input() {
        let model = study_model();
        let bn = fit_endogenous(&model, &study_dataset()).unwrap();
        let a = markov_map(&model, &bn).unwrap();
        let b = quasi_markov_map(&model, &bn).unwrap();
        assert_eq!(a.sets.len(), b.sets.len());
        for (u, cs_a) in &a.sets {
            let cs_b = b.set(*u).unwrap();
            assert_eq!(cs_a.rows.len(), cs_b.rows.len());
            for row in &cs_a.rows {
                assert!(cs_b.rows.iter().any(|r| {
                    let mut s1 = r.support.clone();
                    let mut s2 = row.support.clone();
                    s1.sort_unstable();
                    s2.sort_unstable();
                    s1 == s2 && r.rhs.close_to(&row.rhs)
                }));
            }
        }
    }

    #[test]
    fn identity_equation_gives_point_credal_set() {
        let variables = vec![
            Variable::endogenous("V", 3),
            Variable::exogenous("U", 3),
        ];
        let equations = vec![StructuralEquation {
            child: 0,
            parents: vec![1],
            table: vec![0, 1, 2],
        }];
        let model = Scm::new(variables, equations, BTreeMap::new()).unwrap();
        let data = Dataset::with_weights(
            vec!["V".into()],
            vec![vec![0], vec![1], vec![2]],
            vec![2, 3, 5],
        );
        let bn = fit_endogenous(&model, &data).unwrap();
        let spec = markov_map(&model, &bn).unwrap();
        let vs = vertices(spec.set(1).unwrap(), 100).unwrap();
        assert_eq!(vs.len(), 1);
        assert_abs_diff_eq!(vs[0][0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(vs[0][1], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(vs[0][2], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn restricted_study_model_is_incompatible() {
        let model = study_model();
        // drop the constant-1 treatment mechanism from U_X
        let m_const1 = mechanism_state(&model, "X", &|_| 1);
        let ux = model.var_index("U_X").unwrap();
        let keep: Vec<usize> = (0..4).filter(|&u| u != m_const1).collect();
        let restricted = restrict_exogenous(&model, ux, &keep).unwrap();
        assert!(restricted.validate().is_valid());

        let bn_r = fit_endogenous(&restricted, &study_dataset()).unwrap();
        let spec = markov_map(&restricted, &bn_r).unwrap();
        assert!(!is_compatible(&spec));
    }

    #[test]
    fn unconstrained_exogenous_is_compatible() {
        // an exogenous variable with no children has an empty system
        let variables = vec![
            Variable::endogenous("V", 2),
            Variable::exogenous("U", 2),
            Variable::exogenous("W", 3),
        ];
        let equations = vec![StructuralEquation {
            child: 0,
            parents: vec![1],
            table: vec![0, 1],
        }];
        let model = Scm::new(variables, equations, BTreeMap::new()).unwrap();
        let data = Dataset::new(vec!["V".into()], vec![vec![0], vec![1]]);
        let bn = fit_endogenous(&model, &data).unwrap();
        let spec = quasi_markov_map(&model, &bn).unwrap();
        assert!(is_compatible(&spec));
        assert!(spec.set(2).unwrap().rows.is_empty());
    }

    #[test]
    fn exact_bounds_collapse_on_point_sets() {
        let variables = vec![
            Variable::endogenous("V", 2),
            Variable::exogenous("U", 2),
        ];
        let equations = vec![StructuralEquation {
            child: 0,
            parents: vec![1],
            table: vec![0, 1],
        }];
        let model = Scm::new(variables, equations, BTreeMap::new()).unwrap();
        let data = Dataset::with_weights(
            vec!["V".into()],
            vec![vec![0], vec![1]],
            vec![1, 3],
        );
        let bn = fit_endogenous(&model, &data).unwrap();
        let spec = markov_map(&model, &bn).unwrap();
        let q = CounterfactualQuery::observational(
            BTreeMap::new(),
            BTreeMap::from([("V".to_string(), 1)]),
        );
        let b = exact_bounds(&model, &spec, &q, &BoundsOptions::default()).unwrap();
        assert_abs_diff_eq!(b.lower, 0.75, epsilon = 1e-9);
        assert_abs_diff_eq!(b.upper, 0.75, epsilon = 1e-9);
    }

    #[test]
    fn sub_model_embedding_detected() {
        let model = study_model();
        let bn = fit_endogenous(&model, &study_dataset()).unwrap();
        let spec = markov_map(&model, &bn).unwrap();

        // the full model is embedded (nothing dropped)
        assert!(embeds(&spec, &BTreeMap::new()));

        // keeping only three recovery mechanisms and dropping the constant-1
        // treatment mechanism leaves a sub-model with an empty compatible set
        let uy = model.var_index("U_Y").unwrap();
        let ux = model.var_index("U_X").unwrap();
        let m0 = mechanism_state(&model, "Y", &|w| {
            let (x, z) = (w[1], w[0]);
            (x == 1 || z == 0) as usize
        });
        let m1 = mechanism_state(&model, "Y", &|w| {
            let (x, z) = (w[1], w[0]);
            (x == 0 || z == 0) as usize
        });
        let m2 = mechanism_state(&model, "Y", &|w| {
            let (x, z) = (w[1], w[0]);
            (x == 0 && z == 1) as usize
        });
        let m_const1 = mechanism_state(&model, "X", &|_| 1);
        let dropped_y: Vec<usize> = (0..16).filter(|u| ![m0, m1, m2].contains(u)).collect();
        let dropped = BTreeMap::from([(uy, dropped_y), (ux, vec![m_const1])]);
        assert!(!embeds(&spec, &dropped));
    }
}
