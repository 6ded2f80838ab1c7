//! Discrete structural causal models: representation, validation,
//! c-component decomposition, canonical specification, twin networks.
//!
//! A model is a DAG over exogenous (latent root) and endogenous (observed)
//! variables. Each endogenous variable carries a structural equation: a
//! surjective deterministic table from its parents' joint state to its own
//! state. With marginal PMFs for every exogenous variable the model is fully
//! specified (an FSCM) and behaves as a Bayesian network; without them it is
//! partially specified (a PSCM).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use thiserror::Error;

use crate::index::{joint_card, joint_index, unrank};

/// Index of a variable within its model.
pub type VarIndex = usize;

/// Default cap on exogenous cardinalities built by [`canonical_scm`].
pub const DEFAULT_EXO_CARDINALITY_CAP: usize = 1 << 20;

/// Tolerance for PMF normalization checks.
pub const PMF_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("duplicate variable id `{0}`")]
    DuplicateId(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{0}` has zero cardinality")]
    ZeroCardinality(String),
    #[error("equation child `{0}` is not endogenous")]
    EquationOnExogenous(String),
    #[error("endogenous variable `{0}` has {1} equations, expected exactly one")]
    EquationCount(String, usize),
    #[error("equation for `{child}` has table length {got}, expected {expected}")]
    TableSize {
        child: String,
        got: usize,
        expected: usize,
    },
    #[error("equation for `{child}` maps to out-of-range state {state}")]
    TableValue { child: String, state: usize },
    #[error("PMF attached to `{0}`, which is not exogenous")]
    PmfOnEndogenous(String),
    #[error("PMF for `{var}` has length {got}, expected {expected}")]
    PmfSize {
        var: String,
        got: usize,
        expected: usize,
    },
    #[error("model graph has a cycle through `{0}`")]
    Cyclic(String),
    #[error("canonical cardinality {required} for `{var}` exceeds the cap {cap}")]
    CardinalityOverflow {
        var: String,
        required: u128,
        cap: usize,
    },
    #[error("restricting `{var}` breaks surjectivity: state {missing} becomes unreachable")]
    NonSurjective { var: String, missing: usize },
    #[error("restriction of `{0}` must keep a nonempty subset of its states")]
    EmptyRestriction(String),
    #[error("model is not fully specified: `{0}` has no PMF")]
    MissingPmf(String),
}

/// Whether a variable is latent noise or an observed model variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Exogenous,
    Endogenous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub id: String,
    pub cardinality: usize,
    pub kind: VarKind,
}

impl Variable {
    pub fn exogenous(id: impl Into<String>, cardinality: usize) -> Self {
        Variable {
            id: id.into(),
            cardinality,
            kind: VarKind::Exogenous,
        }
    }

    pub fn endogenous(id: impl Into<String>, cardinality: usize) -> Self {
        Variable {
            id: id.into(),
            cardinality,
            kind: VarKind::Endogenous,
        }
    }
}

/// Deterministic map from a joint parent state to a child state.
///
/// `table[j]` is the child state for the joint parent assignment with
/// lexicographic index `j`, the last listed parent varying fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuralEquation {
    pub child: VarIndex,
    pub parents: Vec<VarIndex>,
    pub table: Vec<usize>,
}

impl StructuralEquation {
    /// Child state for the given parent states (in `parents` order).
    pub fn apply(&self, parent_states: &[usize], cards: &[usize]) -> usize {
        self.table[joint_index(parent_states, cards)]
    }
}

/// A discrete structural causal model.
///
/// Partially specified when some exogenous PMF is absent, fully specified
/// when all are present. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Scm {
    variables: Vec<Variable>,
    /// One equation per endogenous variable, indexed by variable.
    equations: BTreeMap<VarIndex, StructuralEquation>,
    exogenous_pmfs: BTreeMap<VarIndex, Vec<f64>>,
    by_id: HashMap<String, VarIndex>,
}

impl Scm {
    /// Build a model, checking well-formedness (unique ids, table sizes and
    /// ranges, one equation per endogenous variable). Semantic properties
    /// such as acyclicity and surjectivity are reported by [`validate`].
    pub fn new(
        variables: Vec<Variable>,
        equations: Vec<StructuralEquation>,
        exogenous_pmfs: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self, ModelError> {
        let mut by_id = HashMap::new();
        for (i, v) in variables.iter().enumerate() {
            if v.cardinality == 0 {
                return Err(ModelError::ZeroCardinality(v.id.clone()));
            }
            if by_id.insert(v.id.clone(), i).is_some() {
                return Err(ModelError::DuplicateId(v.id.clone()));
            }
        }
        let mut eq_map = BTreeMap::new();
        for eq in equations {
            let child = &variables[eq.child];
            if child.kind != VarKind::Endogenous {
                return Err(ModelError::EquationOnExogenous(child.id.clone()));
            }
            let cards: Vec<usize> = eq.parents.iter().map(|&p| variables[p].cardinality).collect();
            let expected = joint_card(&cards).expect("parent state space overflow");
            if eq.table.len() != expected {
                return Err(ModelError::TableSize {
                    child: child.id.clone(),
                    got: eq.table.len(),
                    expected,
                });
            }
            if let Some(&bad) = eq.table.iter().find(|&&s| s >= child.cardinality) {
                return Err(ModelError::TableValue {
                    child: child.id.clone(),
                    state: bad,
                });
            }
            if eq_map.insert(eq.child, eq).is_some() {
                return Err(ModelError::EquationCount(child.id.clone(), 2));
            }
        }
        for (i, v) in variables.iter().enumerate() {
            if v.kind == VarKind::Endogenous && !eq_map.contains_key(&i) {
                return Err(ModelError::EquationCount(v.id.clone(), 0));
            }
        }
        let mut pmfs = BTreeMap::new();
        for (id, pmf) in exogenous_pmfs {
            let &idx = by_id
                .get(&id)
                .ok_or_else(|| ModelError::UnknownVariable(id.clone()))?;
            if variables[idx].kind != VarKind::Exogenous {
                return Err(ModelError::PmfOnEndogenous(id));
            }
            if pmf.len() != variables[idx].cardinality {
                return Err(ModelError::PmfSize {
                    var: id,
                    got: pmf.len(),
                    expected: variables[idx].cardinality,
                });
            }
            pmfs.insert(idx, pmf);
        }
        Ok(Scm {
            variables,
            equations: eq_map,
            exogenous_pmfs: pmfs,
            by_id,
        })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, idx: VarIndex) -> &Variable {
        &self.variables[idx]
    }

    pub fn var_index(&self, id: &str) -> Option<VarIndex> {
        self.by_id.get(id).copied()
    }

    pub fn require_var(&self, id: &str) -> Result<VarIndex, ModelError> {
        self.var_index(id)
            .ok_or_else(|| ModelError::UnknownVariable(id.to_string()))
    }

    pub fn cardinality(&self, idx: VarIndex) -> usize {
        self.variables[idx].cardinality
    }

    pub fn equation(&self, child: VarIndex) -> Option<&StructuralEquation> {
        self.equations.get(&child)
    }

    pub fn equations(&self) -> impl Iterator<Item = &StructuralEquation> {
        self.equations.values()
    }

    pub fn exogenous_pmf(&self, idx: VarIndex) -> Option<&[f64]> {
        self.exogenous_pmfs.get(&idx).map(|v| v.as_slice())
    }

    pub fn exogenous_vars(&self) -> Vec<VarIndex> {
        (0..self.variables.len())
            .filter(|&i| self.variables[i].kind == VarKind::Exogenous)
            .collect()
    }

    pub fn endogenous_vars(&self) -> Vec<VarIndex> {
        (0..self.variables.len())
            .filter(|&i| self.variables[i].kind == VarKind::Endogenous)
            .collect()
    }

    /// True when every exogenous variable carries a PMF.
    pub fn is_fully_specified(&self) -> bool {
        self.exogenous_vars()
            .iter()
            .all(|u| self.exogenous_pmfs.contains_key(u))
    }

    /// Replace/attach exogenous PMFs, producing an FSCM from a PSCM.
    pub fn with_exogenous_pmfs(
        &self,
        pmfs: &BTreeMap<VarIndex, Vec<f64>>,
    ) -> Result<Scm, ModelError> {
        let mut out = self.clone();
        for (&u, pmf) in pmfs {
            let var = &self.variables[u];
            if var.kind != VarKind::Exogenous {
                return Err(ModelError::PmfOnEndogenous(var.id.clone()));
            }
            if pmf.len() != var.cardinality {
                return Err(ModelError::PmfSize {
                    var: var.id.clone(),
                    got: pmf.len(),
                    expected: var.cardinality,
                });
            }
            out.exogenous_pmfs.insert(u, pmf.clone());
        }
        Ok(out)
    }

    /// Drop all exogenous PMFs, leaving the bare PSCM.
    pub fn without_exogenous_pmfs(&self) -> Scm {
        let mut out = self.clone();
        out.exogenous_pmfs.clear();
        out
    }

    pub fn parents(&self, v: VarIndex) -> &[VarIndex] {
        self.equations
            .get(&v)
            .map(|eq| eq.parents.as_slice())
            .unwrap_or(&[])
    }

    pub fn endo_parents(&self, v: VarIndex) -> Vec<VarIndex> {
        self.parents(v)
            .iter()
            .copied()
            .filter(|&p| self.variables[p].kind == VarKind::Endogenous)
            .collect()
    }

    pub fn exo_parents(&self, v: VarIndex) -> Vec<VarIndex> {
        self.parents(v)
            .iter()
            .copied()
            .filter(|&p| self.variables[p].kind == VarKind::Exogenous)
            .collect()
    }

    pub fn children(&self, p: VarIndex) -> Vec<VarIndex> {
        let mut out: Vec<VarIndex> = self
            .equations
            .values()
            .filter(|eq| eq.parents.contains(&p))
            .map(|eq| eq.child)
            .collect();
        out.sort_unstable();
        out
    }

    /// Topological order over all variables (exogenous first among roots),
    /// or the id of a variable on a cycle.
    pub fn topological_order(&self) -> Result<Vec<VarIndex>, ModelError> {
        let n = self.variables.len();
        let mut indeg = vec![0usize; n];
        let mut adj: Vec<Vec<VarIndex>> = vec![Vec::new(); n];
        for eq in self.equations.values() {
            for &p in &eq.parents {
                adj[p].push(eq.child);
                indeg[eq.child] += 1;
            }
        }
        let mut queue: BTreeSet<VarIndex> =
            (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&next) = queue.iter().next() {
            queue.remove(&next);
            order.push(next);
            for &c in &adj[next] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.insert(c);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap();
            return Err(ModelError::Cyclic(self.variables[stuck].id.clone()));
        }
        Ok(order)
    }

    /// Markovian: every exogenous variable has exactly one endogenous child.
    pub fn is_markovian(&self) -> bool {
        self.exogenous_vars()
            .iter()
            .all(|&u| self.children(u).len() <= 1)
    }

    /// Quasi-Markovian: every c-component contains exactly one exogenous
    /// variable (no endogenous variable has two exogenous parents and
    /// confounders do not chain).
    pub fn is_quasi_markovian(&self) -> bool {
        match self.c_components() {
            Ok(comps) => comps
                .iter()
                .all(|c| c.exo_set.len() <= 1),
            Err(_) => false,
        }
    }
}

/// A semantic problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Cycle { through: String },
    NonRootExogenous { var: String },
    /// The equation for `var` never produces `missing_state`.
    NonSurjective { var: String, missing_state: usize },
    MalformedPmf { var: String, reason: String },
    /// The joint map of a c-component misses a joint child state. The paper
    /// framework assumes joint surjectivity but only requires it per SE, so
    /// this is a warning.
    JointlyNonSurjective { component: Vec<String> },
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// One element of the c-component partition.
///
/// `closure` is the component's endogenous variables together with their
/// endogenous parents; `per_node_context` maps each member to the closure
/// variables that precede it in a fixed topological order.
#[derive(Debug, Clone)]
pub struct CComponent {
    pub index: usize,
    pub exo_set: Vec<VarIndex>,
    pub endo_set: Vec<VarIndex>,
    pub closure: Vec<VarIndex>,
    pub per_node_context: BTreeMap<VarIndex, Vec<VarIndex>>,
}

impl Scm {
    /// Report cycles, non-root exogenous nodes, non-surjective equations and
    /// malformed PMFs. Joint surjectivity per c-component is a warning.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        for (i, v) in self.variables.iter().enumerate() {
            if v.kind == VarKind::Exogenous && self.equations.contains_key(&i) {
                // new() already rejects this, keep for completeness
                report.violations.push(Violation::NonRootExogenous {
                    var: v.id.clone(),
                });
            }
        }
        if let Err(ModelError::Cyclic(id)) = self.topological_order() {
            report.violations.push(Violation::Cycle { through: id });
        }
        for eq in self.equations.values() {
            let child = &self.variables[eq.child];
            let mut seen = vec![false; child.cardinality];
            for &s in &eq.table {
                seen[s] = true;
            }
            for (state, hit) in seen.iter().enumerate() {
                if !hit {
                    report.violations.push(Violation::NonSurjective {
                        var: child.id.clone(),
                        missing_state: state,
                    });
                }
            }
        }
        for (&u, pmf) in &self.exogenous_pmfs {
            let var = &self.variables[u];
            if pmf.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                report.violations.push(Violation::MalformedPmf {
                    var: var.id.clone(),
                    reason: "negative or non-finite mass".into(),
                });
            } else {
                let sum: f64 = pmf.iter().sum();
                if (sum - 1.0).abs() > PMF_SUM_TOL {
                    report.violations.push(Violation::MalformedPmf {
                        var: var.id.clone(),
                        reason: format!("sums to {sum}"),
                    });
                }
            }
        }
        if report.violations.is_empty() {
            if let Ok(comps) = self.c_components() {
                for comp in &comps {
                    if !self.component_jointly_surjective(&comp) {
                        report.warnings.push(Violation::JointlyNonSurjective {
                            component: comp
                                .endo_set
                                .iter()
                                .map(|&v| self.variables[v].id.clone())
                                .collect(),
                        });
                    }
                }
            }
        }
        report
    }

    /// Joint-surjectivity check over a component: does sweeping the joint
    /// exogenous state and the external endogenous context reach every joint
    /// state of the component's endogenous variables? Skipped (treated as
    /// passing) when the sweep would exceed 2^20 cases.
    fn component_jointly_surjective(&self, comp: &CComponent) -> bool {
        let externals: Vec<VarIndex> = comp
            .closure
            .iter()
            .copied()
            .filter(|v| !comp.endo_set.contains(v))
            .collect();
        let exo_cards: Vec<usize> =
            comp.exo_set.iter().map(|&u| self.cardinality(u)).collect();
        let ext_cards: Vec<usize> = externals.iter().map(|&v| self.cardinality(v)).collect();
        let endo_cards: Vec<usize> =
            comp.endo_set.iter().map(|&v| self.cardinality(v)).collect();
        let (Some(exo_n), Some(ext_n), Some(endo_n)) = (
            joint_card(&exo_cards),
            joint_card(&ext_cards),
            joint_card(&endo_cards),
        ) else {
            return true;
        };
        match exo_n.checked_mul(ext_n) {
            Some(total) if total <= (1 << 20) => total,
            _ => return true,
        };

        let order = match self.topological_order() {
            Ok(o) => o,
            Err(_) => return true,
        };
        let member_order: Vec<VarIndex> = order
            .iter()
            .copied()
            .filter(|v| comp.endo_set.contains(v))
            .collect();
        let mut reached = vec![false; endo_n];
        let mut states: HashMap<VarIndex, usize> = HashMap::new();
        for eu in 0..exo_n {
            let exo_states = unrank(eu, &exo_cards);
            for ee in 0..ext_n {
                let ext_states = unrank(ee, &ext_cards);
                states.clear();
                for (i, &u) in comp.exo_set.iter().enumerate() {
                    states.insert(u, exo_states[i]);
                }
                for (i, &v) in externals.iter().enumerate() {
                    states.insert(v, ext_states[i]);
                }
                for &v in &member_order {
                    let eq = &self.equations[&v];
                    let ps: Vec<usize> = eq.parents.iter().map(|p| states[p]).collect();
                    let cards: Vec<usize> =
                        eq.parents.iter().map(|&p| self.cardinality(p)).collect();
                    let val = eq.apply(&ps, &cards);
                    states.insert(v, val);
                }
                let joint: Vec<usize> =
                    comp.endo_set.iter().map(|v| states[v]).collect();
                reached[joint_index(&joint, &endo_cards)] = true;
            }
        }
        reached.iter().all(|&r| r)
    }

    /// Partition variables into c-components: drop endogenous-endogenous
    /// arcs and take connected components of what remains. Components are
    /// ordered by their smallest endogenous member; context sets follow the
    /// model's topological order.
    pub fn c_components(&self) -> Result<Vec<CComponent>, ModelError> {
        let order = self.topological_order()?;
        let mut topo_pos = vec![0usize; self.variables.len()];
        for (pos, &v) in order.iter().enumerate() {
            topo_pos[v] = pos;
        }

        // Union-find over all variables using only exo-endo arcs.
        let n = self.variables.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for eq in self.equations.values() {
            for &p in &eq.parents {
                if self.variables[p].kind == VarKind::Exogenous {
                    let a = find(&mut parent, p);
                    let b = find(&mut parent, eq.child);
                    parent[a] = b;
                }
            }
        }

        let mut groups: BTreeMap<usize, (Vec<VarIndex>, Vec<VarIndex>)> = BTreeMap::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            let entry = groups.entry(root).or_default();
            match self.variables[i].kind {
                VarKind::Exogenous => entry.0.push(i),
                VarKind::Endogenous => entry.1.push(i),
            }
        }

        let mut comps: Vec<CComponent> = Vec::new();
        let mut keyed: Vec<(usize, Vec<VarIndex>, Vec<VarIndex>)> = groups
            .into_values()
            .map(|(exo, endo)| {
                let key = endo
                    .iter()
                    .chain(exo.iter())
                    .copied()
                    .min()
                    .unwrap_or(usize::MAX);
                (key, exo, endo)
            })
            .collect();
        keyed.sort_by_key(|(k, _, _)| *k);

        for (idx, (_, exo_set, endo_set)) in keyed.into_iter().enumerate() {
            let mut closure: BTreeSet<VarIndex> = endo_set.iter().copied().collect();
            for &v in &endo_set {
                for p in self.endo_parents(v) {
                    closure.insert(p);
                }
            }
            let mut closure: Vec<VarIndex> = closure.into_iter().collect();
            closure.sort_by_key(|&v| topo_pos[v]);
            let mut per_node_context = BTreeMap::new();
            for &v in &endo_set {
                let ctx: Vec<VarIndex> = closure
                    .iter()
                    .copied()
                    .filter(|&w| topo_pos[w] < topo_pos[v])
                    .collect();
                per_node_context.insert(v, ctx);
            }
            comps.push(CComponent {
                index: idx,
                exo_set,
                endo_set,
                closure,
                per_node_context,
            });
        }
        Ok(comps)
    }

    /// Endogenous-BN context of every endogenous variable (its `W_V`).
    pub fn contexts(&self) -> Result<BTreeMap<VarIndex, Vec<VarIndex>>, ModelError> {
        let mut out = BTreeMap::new();
        for comp in self.c_components()? {
            for (v, ctx) in comp.per_node_context {
                out.insert(v, ctx);
            }
        }
        Ok(out)
    }
}

/// Build a canonical PSCM from a causal DAG over endogenous variables.
///
/// Each node `V` gets one fresh exogenous parent `U_V` whose states index
/// every deterministic map from `V`'s endogenous-parent states to `V`:
/// writing `B = |Ω_V|` and `j` for the lexicographic index of an
/// endogenous-parent joint state, state `u` encodes the map
/// `w_j ↦ (u / B^j) mod B` — the function table read as a base-`B` numeral,
/// least-significant digit first. The exogenous parent is listed first in
/// each equation.
pub fn canonical_scm(
    graph: &CausalGraph,
    cardinality_cap: usize,
) -> Result<Scm, ModelError> {
    graph.check_acyclic()?;
    let mut variables: Vec<Variable> = graph
        .nodes
        .iter()
        .map(|n| Variable::endogenous(n.id.clone(), n.cardinality))
        .collect();
    let mut equations = Vec::new();
    for (v_idx, node) in graph.nodes.iter().enumerate() {
        let parents = graph.parents_of(v_idx);
        let parent_cards: Vec<usize> = parents
            .iter()
            .map(|&p| graph.nodes[p].cardinality)
            .collect();
        let n_contexts = joint_card(&parent_cards).expect("parent state space overflow");
        let base = node.cardinality as u128;
        let mut exo_card: u128 = 1;
        for _ in 0..n_contexts {
            exo_card = exo_card.saturating_mul(base);
            if exo_card > cardinality_cap as u128 {
                return Err(ModelError::CardinalityOverflow {
                    var: node.id.clone(),
                    required: base.saturating_pow(n_contexts as u32),
                    cap: cardinality_cap,
                });
            }
        }
        let exo_card = exo_card as usize;
        let exo_idx = variables.len();
        variables.push(Variable::exogenous(format!("U_{}", node.id), exo_card));

        // Equation parents: [U_V, endogenous parents...]; with U first the
        // table groups one full mechanism per u.
        let mut table = Vec::with_capacity(exo_card * n_contexts);
        for u in 0..exo_card {
            for j in 0..n_contexts {
                let digit = (u / node.cardinality.pow(j as u32)) % node.cardinality;
                table.push(digit);
            }
        }
        let mut eq_parents = vec![exo_idx];
        eq_parents.extend(parents.iter());
        equations.push(StructuralEquation {
            child: v_idx,
            parents: eq_parents,
            table,
        });
    }
    Scm::new(variables, equations, BTreeMap::new())
}

/// A bare causal DAG over endogenous variables, input to [`canonical_scm`].
#[derive(Debug, Clone)]
pub struct CausalGraph {
    pub nodes: Vec<GraphNode>,
    /// Arcs as (parent, child) index pairs.
    pub arcs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct GraphNode {
    pub id: String,
    pub cardinality: usize,
}

impl CausalGraph {
    pub fn new(nodes: Vec<GraphNode>, arcs: Vec<(usize, usize)>) -> Self {
        CausalGraph { nodes, arcs }
    }

    /// Parents of a node, in node-index order.
    pub fn parents_of(&self, v: usize) -> Vec<usize> {
        let mut ps: Vec<usize> = self
            .arcs
            .iter()
            .filter(|&&(_, c)| c == v)
            .map(|&(p, _)| p)
            .collect();
        ps.sort_unstable();
        ps.dedup();
        ps
    }

    fn check_acyclic(&self) -> Result<(), ModelError> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(p, c) in &self.arcs {
            adj[p].push(c);
            indeg[c] += 1;
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(x) = queue.pop() {
            seen += 1;
            for &c in &adj[x] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if seen < n {
            let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap();
            return Err(ModelError::Cyclic(self.nodes[stuck].id.clone()));
        }
        Ok(())
    }
}

/// Suffix appended to endogenous ids per extra world.
pub const WORLD_SUFFIX: &str = "'";

/// Duplicate the endogenous layer: every endogenous node and its equation is
/// copied with a primed id, endogenous parents point at the primed copies,
/// exogenous parents are shared with the original world.
pub fn twin_network(model: &Scm) -> Result<Scm, ModelError> {
    multi_world(model, 2)
}

/// Generalization of [`twin_network`] to `worlds` copies; world `w` carries
/// `w` primes.
pub fn multi_world(model: &Scm, worlds: usize) -> Result<Scm, ModelError> {
    assert!(worlds >= 1);
    model.topological_order()?;
    let mut variables = model.variables.to_vec();
    let mut equations: Vec<StructuralEquation> =
        model.equations.values().cloned().collect();
    // map (world, base var) -> new index; world 0 keeps base indices
    let mut world_index: Vec<HashMap<VarIndex, VarIndex>> = vec![HashMap::new()];
    for w in 1..worlds {
        let mut map = HashMap::new();
        for &v in &model.endogenous_vars() {
            let new_idx = variables.len();
            let mut var = model.variables[v].clone();
            var.id = format!("{}{}", var.id, WORLD_SUFFIX.repeat(w));
            variables.push(var);
            map.insert(v, new_idx);
        }
        for eq in model.equations.values() {
            let parents = eq
                .parents
                .iter()
                .map(|&p| match model.variables[p].kind {
                    VarKind::Exogenous => p,
                    VarKind::Endogenous => map[&p],
                })
                .collect();
            equations.push(StructuralEquation {
                child: map[&eq.child],
                parents,
                table: eq.table.clone(),
            });
        }
        world_index.push(map);
    }
    let pmfs = model
        .exogenous_pmfs
        .iter()
        .map(|(&u, pmf)| (model.variables[u].id.clone(), pmf.clone()))
        .collect();
    Scm::new(variables, equations, pmfs)
}

/// Restrict an exogenous variable to a subset of its states, dropping the
/// corresponding mechanism rows. State `allowed[i]` of the original model
/// becomes state `i` of the restriction. Fails if any child equation loses
/// surjectivity.
pub fn restrict_exogenous(
    model: &Scm,
    exo: VarIndex,
    allowed: &[usize],
) -> Result<Scm, ModelError> {
    let var = &model.variables[exo];
    if allowed.is_empty() {
        return Err(ModelError::EmptyRestriction(var.id.clone()));
    }
    let mut seen = HashSet::new();
    for &s in allowed {
        if s >= var.cardinality || !seen.insert(s) {
            return Err(ModelError::EmptyRestriction(var.id.clone()));
        }
    }

    let mut variables = model.variables.to_vec();
    variables[exo].cardinality = allowed.len();
    let mut equations = Vec::new();
    for eq in model.equations.values() {
        let mut eq = eq.clone();
        if let Some(pos) = eq.parents.iter().position(|&p| p == exo) {
            let cards: Vec<usize> = eq
                .parents
                .iter()
                .map(|&p| model.variables[p].cardinality)
                .collect();
            let mut new_cards = cards.clone();
            new_cards[pos] = allowed.len();
            let total = joint_card(&new_cards).unwrap();
            let mut table = Vec::with_capacity(total);
            for j in 0..total {
                let mut states = unrank(j, &new_cards);
                states[pos] = allowed[states[pos]];
                table.push(eq.table[joint_index(&states, &cards)]);
            }
            eq.table = table;
        }
        equations.push(eq);
    }
    let pmfs = model
        .exogenous_pmfs
        .iter()
        .filter(|(&u, _)| u != exo)
        .map(|(&u, pmf)| (model.variables[u].id.clone(), pmf.clone()))
        .collect();
    let restricted = Scm::new(variables, equations, pmfs)?;
    let report = restricted.validate();
    for viol in &report.violations {
        if let Violation::NonSurjective { var, missing_state } = viol {
            return Err(ModelError::NonSurjective {
                var: var.clone(),
                missing: *missing_state,
            });
        }
    }
    Ok(restricted)
}

/// Interventional queries and general counterfactual queries.
///
/// A query spans one or more worlds sharing the exogenous variables; each
/// world may force variables to constants, observations attach to one
/// designated world, and the target is a joint assignment over
/// (world, variable) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterfactualQuery {
    pub worlds: Vec<WorldSpec>,
    pub observations: BTreeMap<String, usize>,
    pub observation_world: usize,
    pub target: BTreeMap<(usize, String), usize>,
    pub kind: QueryKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldSpec {
    pub interventions: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Observational,
    Interventional,
    Counterfactual,
    Pn,
    Ps,
    Pns,
}

impl CounterfactualQuery {
    pub fn observational(
        observations: BTreeMap<String, usize>,
        target: BTreeMap<String, usize>,
    ) -> Self {
        CounterfactualQuery {
            worlds: vec![WorldSpec::default()],
            observations,
            observation_world: 0,
            target: target.into_iter().map(|(v, s)| ((0, v), s)).collect(),
            kind: QueryKind::Observational,
        }
    }

    pub fn interventional(
        interventions: BTreeMap<String, usize>,
        observations: BTreeMap<String, usize>,
        target: BTreeMap<String, usize>,
    ) -> Self {
        CounterfactualQuery {
            worlds: vec![WorldSpec { interventions }],
            observations,
            observation_world: 0,
            target: target.into_iter().map(|(v, s)| ((0, v), s)).collect(),
            kind: QueryKind::Interventional,
        }
    }

    /// Two intervened worlds with a joint target; the factual-side
    /// observations (if any) attach to world 0.
    pub fn two_world(
        world0: BTreeMap<String, usize>,
        world1: BTreeMap<String, usize>,
        observations: BTreeMap<String, usize>,
        target: BTreeMap<(usize, String), usize>,
    ) -> Self {
        CounterfactualQuery {
            worlds: vec![
                WorldSpec {
                    interventions: world0,
                },
                WorldSpec {
                    interventions: world1,
                },
            ],
            observations,
            observation_world: 0,
            target,
            kind: QueryKind::Counterfactual,
        }
    }

    /// P(Y_{X=1}=1, Y_{X=0}=0): world 0 forces the cause on, world 1 off.
    pub fn pns(cause: &str, effect: &str) -> Self {
        let mut q = Self::two_world(
            BTreeMap::from([(cause.to_string(), 1)]),
            BTreeMap::from([(cause.to_string(), 0)]),
            BTreeMap::new(),
            BTreeMap::from([
                ((0, effect.to_string()), 1),
                ((1, effect.to_string()), 0),
            ]),
        );
        q.kind = QueryKind::Pns;
        q
    }

    /// P(Y_{X=0}=0 | X=1, Y=1): factual world 0 observed, world 1 disables
    /// the cause.
    pub fn pn(cause: &str, effect: &str) -> Self {
        let mut q = Self::two_world(
            BTreeMap::new(),
            BTreeMap::from([(cause.to_string(), 0)]),
            BTreeMap::from([(cause.to_string(), 1), (effect.to_string(), 1)]),
            BTreeMap::from([((1, effect.to_string()), 0)]),
        );
        q.kind = QueryKind::Pn;
        q
    }

    /// P(Y_{X=1}=1 | X=0, Y=0).
    pub fn ps(cause: &str, effect: &str) -> Self {
        let mut q = Self::two_world(
            BTreeMap::new(),
            BTreeMap::from([(cause.to_string(), 1)]),
            BTreeMap::from([(cause.to_string(), 0), (effect.to_string(), 0)]),
            BTreeMap::from([((1, effect.to_string()), 1)]),
        );
        q.kind = QueryKind::Ps;
        q
    }
}
