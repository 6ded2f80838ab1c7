//! Endogenous datasets, maximum-likelihood fitting of the endogenous
//! Bayesian network, and the two log-likelihood functions behind the
//! compatibility machinery.
//!
//! Likelihoods are in nats. Comparisons elsewhere use per-record averages so
//! tolerances do not scale with sample size. `0 ln 0 := 0` throughout.

use std::collections::BTreeMap;
use std::path::Path;

use num::BigRational;
use thiserror::Error;

use crate::index::{joint_card, joint_index, unrank};
use crate::model::{ModelError, Scm, VarIndex};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset columns do not cover endogenous variable `{0}`")]
    MissingColumn(String),
    #[error("row {row}: state {state} out of range for `{column}`")]
    BadState {
        row: usize,
        column: String,
        state: usize,
    },
    #[error("row {row}: bad integer `{value}`")]
    BadInteger { row: usize, value: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Column name carrying row multiplicities in aggregated CSV files.
pub const COUNT_COLUMN: &str = "__count";

/// A dataset of endogenous observations. Rows are integer state vectors over
/// the named columns; each row carries a multiplicity.
#[derive(Debug, Clone)]
pub struct Dataset {
    columns: Vec<String>,
    rows: Vec<Vec<usize>>,
    weights: Vec<u64>,
}

impl Dataset {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<usize>>) -> Self {
        let weights = vec![1; rows.len()];
        Dataset {
            columns,
            rows,
            weights,
        }
    }

    pub fn with_weights(columns: Vec<String>, rows: Vec<Vec<usize>>, weights: Vec<u64>) -> Self {
        assert_eq!(rows.len(), weights.len());
        Dataset {
            columns,
            rows,
            weights,
        }
    }

    /// Read a CSV file: header of endogenous ids, integer states, optional
    /// `__count` column for aggregated data.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let mut columns = Vec::new();
        let mut count_col = None;
        for (i, name) in headers.iter().enumerate() {
            if name == COUNT_COLUMN {
                count_col = Some(i);
            } else {
                columns.push(name.to_string());
            }
        }
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            let mut row = Vec::with_capacity(columns.len());
            let mut weight = 1u64;
            for (i, field) in record.iter().enumerate() {
                if Some(i) == count_col {
                    weight = field.trim().parse().map_err(|_| DataError::BadInteger {
                        row: r,
                        value: field.to_string(),
                    })?;
                } else {
                    let state = field.trim().parse().map_err(|_| DataError::BadInteger {
                        row: r,
                        value: field.to_string(),
                    })?;
                    row.push(state);
                }
            }
            rows.push(row);
            weights.push(weight);
        }
        Ok(Dataset::with_weights(columns, rows, weights))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.columns.iter().map(|s| s.as_str()).collect();
        header.push(COUNT_COLUMN);
        writer.write_record(&header)?;
        for (row, &w) in self.rows.iter().zip(&self.weights) {
            let mut record: Vec<String> = row.iter().map(|s| s.to_string()).collect();
            record.push(w.to_string());
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Total number of records, multiplicities included.
    pub fn len(&self) -> u64 {
        self.weights.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[usize], u64)> {
        self.rows
            .iter()
            .map(|r| r.as_slice())
            .zip(self.weights.iter().copied())
    }

    /// Append another dataset with the same columns.
    pub fn extend(&mut self, other: &Dataset) {
        assert_eq!(self.columns, other.columns);
        self.rows.extend(other.rows.iter().cloned());
        self.weights.extend(other.weights.iter().copied());
    }

    /// Positions of the given variable ids within this dataset's columns.
    pub fn column_positions(&self, model: &Scm, vars: &[VarIndex]) -> Result<Vec<usize>, DataError> {
        vars.iter()
            .map(|&v| {
                let id = &model.variable(v).id;
                self.columns
                    .iter()
                    .position(|c| c == id)
                    .ok_or_else(|| DataError::MissingColumn(id.clone()))
            })
            .collect()
    }

    /// Joint counts over a subset of columns: `n(assignment)` for every
    /// observed assignment of the projection.
    pub fn project_counts(&self, positions: &[usize]) -> BTreeMap<Vec<usize>, u64> {
        let mut counts: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
        for (row, w) in self.rows() {
            let key: Vec<usize> = positions.iter().map(|&p| row[p]).collect();
            *counts.entry(key).or_insert(0) += w;
        }
        counts
    }

    fn check_against(&self, model: &Scm) -> Result<(), DataError> {
        for &v in &model.endogenous_vars() {
            let id = &model.variable(v).id;
            if !self.columns.iter().any(|c| c == id) {
                return Err(DataError::MissingColumn(id.clone()));
            }
        }
        let cards: Vec<Option<usize>> = self
            .columns
            .iter()
            .map(|c| model.var_index(c).map(|i| model.cardinality(i)))
            .collect();
        for (r, (row, _)) in self.rows().enumerate() {
            for (i, &s) in row.iter().enumerate() {
                if let Some(card) = cards[i] {
                    if s >= card {
                        return Err(DataError::BadState {
                            row: r,
                            column: self.columns[i].clone(),
                            state: s,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// One conditional PMF P(V | context) with its provenance.
#[derive(Debug, Clone)]
pub enum CptRow {
    /// Fit from data: exact count ratios.
    Counts { counts: Vec<u64>, total: u64 },
    /// Synthetic numeric entries (no exact form).
    Float { probs: Vec<f64> },
    /// Context never observed: filled uniformly and flagged.
    UnobservedUniform { cardinality: usize },
}

impl CptRow {
    pub fn prob(&self, state: usize) -> f64 {
        match self {
            CptRow::Counts { counts, total } => counts[state] as f64 / *total as f64,
            CptRow::Float { probs } => probs[state],
            CptRow::UnobservedUniform { cardinality } => 1.0 / *cardinality as f64,
        }
    }

    /// Exact fraction when the row derives from counts.
    pub fn exact(&self, state: usize) -> Option<BigRational> {
        match self {
            CptRow::Counts { counts, total } => Some(BigRational::new(
                num::BigInt::from(counts[state]),
                num::BigInt::from(*total),
            )),
            _ => None,
        }
    }

    pub fn is_unobserved(&self) -> bool {
        matches!(self, CptRow::UnobservedUniform { .. })
    }
}

/// Conditional probability tables of one endogenous variable over its
/// c-component context `W_V`, rows indexed lexicographically.
#[derive(Debug, Clone)]
pub struct Cpt {
    pub var: VarIndex,
    pub context: Vec<VarIndex>,
    pub context_cards: Vec<usize>,
    pub rows: Vec<CptRow>,
}

impl Cpt {
    pub fn row(&self, context_states: &[usize]) -> &CptRow {
        &self.rows[joint_index(context_states, &self.context_cards)]
    }
}

/// The endogenous Bayesian network: per-variable CPTs following the
/// c-component factorization.
#[derive(Debug, Clone)]
pub struct EndogenousBn {
    cpts: BTreeMap<VarIndex, Cpt>,
    record_count: u64,
}

impl EndogenousBn {
    pub fn cpt(&self, var: VarIndex) -> &Cpt {
        &self.cpts[&var]
    }

    pub fn cpts(&self) -> impl Iterator<Item = &Cpt> {
        self.cpts.values()
    }

    pub fn record_count(&self) -> u64 {
        self.record_count
    }

    /// Contexts that never occurred in the data (flagged uniform fills).
    pub fn unobserved_contexts(&self) -> usize {
        self.cpts
            .values()
            .flat_map(|c| c.rows.iter())
            .filter(|r| r.is_unobserved())
            .count()
    }

    /// Build a synthetic endogenous BN from explicit conditional PMFs, e.g.
    /// a randomly drawn positive distribution. `tables[v]` maps every
    /// context index to a PMF over `v`'s states.
    pub fn from_cpts(model: &Scm, tables: BTreeMap<VarIndex, Vec<Vec<f64>>>) -> Result<Self, DataError> {
        let contexts = model.contexts()?;
        let mut cpts = BTreeMap::new();
        for (&v, ctx) in &contexts {
            let context_cards: Vec<usize> = ctx.iter().map(|&w| model.cardinality(w)).collect();
            let n_ctx = joint_card(&context_cards).expect("context space overflow");
            let table = tables
                .get(&v)
                .unwrap_or_else(|| panic!("missing table for variable {v}"));
            assert_eq!(table.len(), n_ctx);
            let rows = table
                .iter()
                .map(|probs| CptRow::Float {
                    probs: probs.clone(),
                })
                .collect();
            cpts.insert(
                v,
                Cpt {
                    var: v,
                    context: ctx.clone(),
                    context_cards,
                    rows,
                },
            );
        }
        Ok(EndogenousBn {
            cpts,
            record_count: 0,
        })
    }

    /// Joint probability of a full endogenous assignment (indexed per the
    /// model's endogenous variable list).
    pub fn joint_prob(&self, assignment: &BTreeMap<VarIndex, usize>) -> f64 {
        let mut p = 1.0;
        for (&v, cpt) in &self.cpts {
            let ctx_states: Vec<usize> = cpt.context.iter().map(|w| assignment[w]).collect();
            p *= cpt.row(&ctx_states).prob(assignment[&v]);
        }
        p
    }
}

/// Fit the endogenous BN by relative frequencies: P(v|w_V) = n(v,w_V)/n(w_V).
/// Contexts with n(w_V) = 0 are filled uniformly and flagged.
pub fn fit_endogenous(model: &Scm, dataset: &Dataset) -> Result<EndogenousBn, DataError> {
    if dataset.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    dataset.check_against(model)?;
    let contexts = model.contexts()?;
    let mut cpts = BTreeMap::new();
    for (&v, ctx) in &contexts {
        let card = model.cardinality(v);
        let context_cards: Vec<usize> = ctx.iter().map(|&w| model.cardinality(w)).collect();
        let n_ctx = joint_card(&context_cards).expect("context space overflow");
        let scope: Vec<VarIndex> = ctx.iter().copied().chain([v]).collect();
        let positions = dataset.column_positions(model, &scope)?;
        let mut counts = vec![vec![0u64; card]; n_ctx];
        for (row, w) in dataset.rows() {
            let states: Vec<usize> = positions.iter().map(|&p| row[p]).collect();
            let (v_state, ctx_states) = states.split_last().unwrap();
            counts[joint_index(ctx_states, &context_cards)][*v_state] += w;
        }
        let rows: Vec<CptRow> = counts
            .into_iter()
            .map(|c| {
                let total: u64 = c.iter().sum();
                if total == 0 {
                    log::debug!(
                        "unobserved context for `{}` filled uniformly",
                        model.variable(v).id
                    );
                    CptRow::UnobservedUniform { cardinality: card }
                } else {
                    CptRow::Counts { counts: c, total }
                }
            })
            .collect();
        cpts.insert(
            v,
            Cpt {
                var: v,
                context: ctx.clone(),
                context_cards,
                rows,
            },
        );
    }
    Ok(EndogenousBn {
        cpts,
        record_count: dataset.len(),
    })
}

/// Maximum of the endogenous-BN log-likelihood:
/// λ* = Σ_V Σ n(v,w_V) ln(n(v,w_V)/n(w_V)), in nats.
pub fn lambda_star(bn: &EndogenousBn, dataset: &Dataset) -> Result<f64, DataError> {
    if dataset.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let mut ll = 0.0;
    for cpt in bn.cpts() {
        for row in &cpt.rows {
            if let CptRow::Counts { counts, total } = row {
                for &n in counts {
                    if n > 0 {
                        ll += n as f64 * ((n as f64 / *total as f64).ln());
                    }
                }
            }
        }
    }
    Ok(ll)
}

/// Log-likelihood of the dataset from the FSCM (model + `theta`), or
/// `MinusInfinity` when an observed configuration has probability zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogLik {
    Finite(f64),
    MinusInfinity,
}

impl LogLik {
    pub fn finite(self) -> Option<f64> {
        match self {
            LogLik::Finite(v) => Some(v),
            LogLik::MinusInfinity => None,
        }
    }
}

/// Log-likelihood of the data under exogenous chances `theta`, summed per
/// c-component and observed closure configuration:
/// l(θ) = Σ_c Σ_{w^c} n(w^c) ln Σ_{u^c} ∏ θ_u ∏ ⟦f_V = v⟧.
pub fn exo_log_lik(
    model: &Scm,
    theta: &BTreeMap<VarIndex, Vec<f64>>,
    dataset: &Dataset,
) -> Result<LogLik, DataError> {
    if dataset.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    dataset.check_against(model)?;
    let comps = model.c_components()?;
    let mut total = 0.0;
    for comp in &comps {
        if comp.endo_set.is_empty() {
            continue;
        }
        let positions = dataset.column_positions(model, &comp.closure)?;
        let counts = dataset.project_counts(&positions);
        for (wc, n) in counts {
            let mass = component_event_mass(model, comp, theta, &wc);
            if mass <= 0.0 {
                return Ok(LogLik::MinusInfinity);
            }
            total += n as f64 * mass.ln();
        }
    }
    Ok(LogLik::Finite(total))
}

/// Probability mass the component assigns to the closure configuration
/// `wc` (states listed in `comp.closure` order): the sum over joint
/// exogenous states consistent with every member equation.
pub fn component_event_mass(
    model: &Scm,
    comp: &crate::model::CComponent,
    theta: &BTreeMap<VarIndex, Vec<f64>>,
    wc: &[usize],
) -> f64 {
    let exo_cards: Vec<usize> = comp.exo_set.iter().map(|&u| model.cardinality(u)).collect();
    let total = joint_card(&exo_cards).expect("exogenous space overflow");
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
    let mut mass = 0.0;
    for joint in 0..total {
        let exo_states = unrank(joint, &exo_cards);
        let mut consistent = true;
        for &v in &comp.endo_set {
            let eq = model.equation(v).expect("endogenous variable without equation");
            let parent_states: Vec<usize> = eq
                .parents
                .iter()
                .map(|p| match exo_pos.get(p) {
                    Some(&i) => exo_states[i],
                    None => wc[closure_pos[p]],
                })
                .collect();
            let cards: Vec<usize> = eq.parents.iter().map(|&p| model.cardinality(p)).collect();
            if eq.apply(&parent_states, &cards) != wc[closure_pos[&v]] {
                consistent = false;
                break;
            }
        }
        if consistent {
            let mut w = 1.0;
            for (i, &u) in comp.exo_set.iter().enumerate() {
                w *= theta[&u][exo_states[i]];
            }
            mass += w;
        }
    }
    mass
}
