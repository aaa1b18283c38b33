//! Maximum-weight approximately stable matching.
//!
//! Step one finds the fewest blocking groups any matching can have (`LB`) over
//! the pruned bundle graph. Step two optimizes the chosen objective among the
//! matchings that reach `LB`. Two exact strategies are available: blocking rows
//! generated on demand over contract variables (the default), and a direct
//! search over one bundle per supplier.

mod graph;
mod lazy;
mod program;
mod search;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use graph::{expand_and_prune, max_bundle_size, ExpandedGraph, SupplierExpansion, DEFAULT_BUNDLE_CAP};
pub use program::{blocking_program, solve_program};

use crate::error::Result;
use crate::gen::MarketInstance;
use crate::model::{Contract, Matching, SupplierId};
use search::{components, Goal, Incumbent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    MaxUtility,
    MinUtility,
    /// Most matched orders.
    MaxCardinality,
}

impl Objective {
    pub fn bundle_values(self, graph: &ExpandedGraph) -> Vec<f64> {
        graph
            .bundles
            .iter()
            .map(|b| match self {
                Objective::MaxUtility => b.u_grand_total,
                Objective::MinUtility => -b.u_grand_total,
                Objective::MaxCardinality => b.len() as f64,
            })
            .collect()
    }

    fn contract_value(self, c: &Contract) -> f64 {
        match self {
            Objective::MaxUtility => c.u_total,
            Objective::MinUtility => -c.u_total,
            Objective::MaxCardinality => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    LazyRows,
    BundleSearch,
}

#[derive(Clone, Copy, Debug)]
pub struct MwasOptions {
    pub bundle_cap: usize,
    pub node_limit: u64,
    pub strategy: Strategy,
}

impl Default for MwasOptions {
    fn default() -> Self {
        MwasOptions {
            bundle_cap: DEFAULT_BUNDLE_CAP,
            node_limit: 50_000_000,
            strategy: Strategy::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MwasOutcome {
    pub matching: Matching,
    /// Minimum number of blocking groups over all matchings.
    pub lb: usize,
    /// Blocking groups of `matching`; equals `lb`.
    pub blocking_groups: usize,
    pub nodes: u64,
}

fn selection_matching(graph: &ExpandedGraph, bundles: &[usize]) -> Matching {
    Matching::from_contracts(bundles.iter().flat_map(|&b| graph.bundles[b].contracts.iter().cloned()))
}

fn hint_selections(graph: &ExpandedGraph, hints: &[&Matching]) -> Vec<BTreeMap<SupplierId, usize>> {
    hints.iter().filter_map(|m| graph.bundles_of(m)).collect()
}

fn lazy_start(master: &lazy::Master<'_>, instance: &MarketInstance, hints: &[&Matching]) -> Matching {
    let mut best: Option<(usize, &Matching)> = None;
    for h in hints {
        if !h.is_feasible(&instance.suppliers, instance.from()) {
            continue;
        }
        let count = master.blocking(h).len();
        if best.is_none_or(|b| count < b.0) {
            best = Some((count, h));
        }
    }
    best.map(|b| b.1.clone()).unwrap_or_default()
}

/// Step one alone: `LB` and a matching attaining it.
pub fn min_blocking_groups(
    instance: &MarketInstance,
    graph: &ExpandedGraph,
    hints: &[&Matching],
    options: &MwasOptions,
) -> Result<(usize, Matching)> {
    match options.strategy {
        Strategy::LazyRows => {
            let mut master = lazy::Master::new(instance, graph, options.node_limit)?;
            let start = lazy_start(&master, instance, hints);
            master.min_blocking(start)
        }
        Strategy::BundleSearch => search_min_blocking(graph, hints, options),
    }
}

fn search_min_blocking(graph: &ExpandedGraph, hints: &[&Matching], options: &MwasOptions) -> Result<(usize, Matching)> {
    let values = vec![0.0; graph.bundles.len()];
    let hints = hint_selections(graph, hints);
    let mut nodes = 0;
    let mut lb = 0;
    let mut chosen = Vec::new();
    for comp in components(graph, &values) {
        let incumbent = best_hint(&comp, &hints);
        let (choice, count, _) = comp
            .search(Goal::MinBlocking, incumbent, options.node_limit, &mut nodes)?
            .expect("the empty selection is always a candidate");
        lb += count;
        chosen.extend(comp.globalize(&choice));
    }
    Ok((lb, selection_matching(graph, &chosen)))
}

fn best_hint(comp: &search::Component, hints: &[BTreeMap<SupplierId, usize>]) -> Option<Incumbent> {
    let mut best: Option<Incumbent> = None;
    for h in hints {
        let local = comp.localize(h);
        let count = comp.blocking_count(&local);
        if best.as_ref().is_none_or(|b| count < b.1) {
            let value = comp.value_of(&local);
            best = Some((local, count, value));
        }
    }
    best
}

/// Both steps on a prebuilt graph of `instance`. `hints` are known matchings
/// used as starting points; they never change the result, only the search time.
pub fn match_mwas(
    instance: &MarketInstance,
    graph: &ExpandedGraph,
    objective: Objective,
    hints: &[&Matching],
    options: &MwasOptions,
) -> Result<MwasOutcome> {
    match options.strategy {
        Strategy::LazyRows => {
            let mut master = lazy::Master::new(instance, graph, options.node_limit)?;
            let start = lazy_start(&master, instance, hints);
            let (lb, witness) = master.min_blocking(start)?;
            let matching = master.max_value(|c| objective.contract_value(c), lb, witness)?;
            Ok(MwasOutcome {
                matching,
                lb,
                blocking_groups: lb,
                nodes: master.nodes,
            })
        }
        Strategy::BundleSearch => search_mwas(graph, objective, hints, options),
    }
}

fn search_mwas(
    graph: &ExpandedGraph,
    objective: Objective,
    hints: &[&Matching],
    options: &MwasOptions,
) -> Result<MwasOutcome> {
    let values = objective.bundle_values(graph);
    let hints = hint_selections(graph, hints);
    let mut nodes = 0;
    let mut lb = 0;
    let mut chosen = Vec::new();
    for comp in components(graph, &values) {
        let incumbent = best_hint(&comp, &hints);
        let (witness, count, _) = comp
            .search(Goal::MinBlocking, incumbent, options.node_limit, &mut nodes)?
            .expect("the empty selection is always a candidate");
        lb += count;
        let value = comp.value_of(&witness);
        let (best, _, _) = comp
            .search(
                Goal::MaxValue { limit: count },
                Some((witness, count, value)),
                options.node_limit,
                &mut nodes,
            )?
            .expect("the witness is feasible");
        chosen.extend(comp.globalize(&best));
    }
    Ok(MwasOutcome {
        matching: selection_matching(graph, &chosen),
        lb,
        blocking_groups: lb,
        nodes,
    })
}

/// Expands the instance and runs both steps.
pub fn match_mwas_instance(
    instance: &MarketInstance,
    objective: Objective,
    hints: &[&Matching],
    options: &MwasOptions,
) -> Result<(MwasOutcome, ExpandedGraph)> {
    let graph = expand_and_prune(instance, options.bundle_cap)?;
    let outcome = match_mwas(instance, &graph, objective, hints, options)?;
    Ok((outcome, graph))
}
