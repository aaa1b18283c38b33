//! The expanded bundle graph: every capacity-feasible combination of orders a
//! supplier could take, with one contract per member order.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gen::MarketInstance;
use crate::model::{
    bundle_feasible, fits_schedule, Contract, ContractBundle, ContractId, Matching, OrderId, Period, Supplier,
    SupplierId,
};
use crate::solver::{solve, BinaryProgram};

pub const DEFAULT_BUNDLE_CAP: usize = 200_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupplierExpansion {
    pub supplier_id: SupplierId,
    pub candidate_orders: usize,
    pub max_bundle_size: usize,
    pub bundles: usize,
}

#[derive(Clone, Debug)]
pub struct ExpandedGraph {
    pub from: Period,
    pub bundles: Vec<ContractBundle>,
    pub by_order: BTreeMap<OrderId, Vec<usize>>,
    pub by_supplier: BTreeMap<SupplierId, Vec<usize>>,
    pub stats: Vec<SupplierExpansion>,
    lookup: HashMap<(SupplierId, Vec<ContractId>), usize>,
}

impl ExpandedGraph {
    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    /// The bundle holding exactly `contracts` at `supplier`.
    pub fn find(&self, supplier: SupplierId, contracts: &[&Contract]) -> Option<usize> {
        let mut ids: Vec<ContractId> = contracts.iter().map(|c| c.id).collect();
        ids.sort();
        self.lookup.get(&(supplier, ids)).copied()
    }

    /// Each matched supplier's assigned set as a bundle index; `None` when a set
    /// falls outside the graph.
    pub fn bundles_of(&self, matching: &Matching) -> Option<BTreeMap<SupplierId, usize>> {
        matching
            .by_supplier()
            .into_iter()
            .map(|(sid, set)| self.find(sid, &set).map(|b| (sid, b)))
            .collect()
    }
}

/// Largest number of the candidate jobs `(order, hours, due)` that fit together.
pub fn max_bundle_size(supplier: &Supplier, candidates: &[(OrderId, f64, Period)], from: Period) -> Result<usize> {
    if candidates.is_empty() {
        return Ok(0);
    }
    let mut program = BinaryProgram::maximize(vec![1.0; candidates.len()]);
    let mut by_due: BTreeMap<Period, Vec<usize>> = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        by_due.entry(c.2).or_default().push(i);
    }
    let mut prefix = Vec::new();
    for (due, members) in by_due {
        prefix.extend(members.iter().map(|&i| (i, candidates[i].1)));
        program.add_constraint(prefix.clone(), crate::model::cumulative_capacity(supplier, from, due));
    }
    Ok(solve(&program)?.chosen.len())
}

/// One order's contracts at a supplier. `hours` and `due` are the least
/// demanding over the contracts, so a subset that fails with them fails for
/// every choice of contracts.
struct Candidate<'a> {
    hours: f64,
    due: Period,
    contracts: Vec<&'a Contract>,
    /// All contracts share hours and due, so the relaxed job is exact.
    uniform: bool,
}

fn push_combinations(
    supplier: &Supplier,
    subset: &[usize],
    candidates: &[Candidate<'_>],
    from: Period,
    out: &mut Vec<ContractBundle>,
    budget: usize,
) -> Result<()> {
    let exact = subset.iter().all(|&o| candidates[o].uniform);
    let mut pick = vec![0usize; subset.len()];
    loop {
        let members: Vec<&Contract> = subset
            .iter()
            .zip(&pick)
            .map(|(&o, &k)| candidates[o].contracts[k])
            .collect();
        if exact || bundle_feasible(supplier, members.iter().copied(), from) {
            if out.len() >= budget {
                return Err(Error::BundleBudget {
                    supplier: supplier.id,
                    cap: budget,
                });
            }
            out.push(ContractBundle::new(supplier.id, members.into_iter().cloned().collect()));
        }
        // Odometer over the contract choices, last member fastest.
        let mut level = subset.len();
        loop {
            if level == 0 {
                return Ok(());
            }
            level -= 1;
            pick[level] += 1;
            if pick[level] < candidates[subset[level]].contracts.len() {
                break;
            }
            pick[level] = 0;
        }
    }
}

fn expand_supplier(
    supplier: &Supplier,
    contracts: &[&Contract],
    from: Period,
    out: &mut Vec<ContractBundle>,
    budget: usize,
) -> Result<SupplierExpansion> {
    let mut by_order: BTreeMap<OrderId, Vec<&Contract>> = BTreeMap::new();
    for c in contracts {
        by_order.entry(c.order_id).or_default().push(c);
    }
    let candidates: Vec<Candidate> = by_order
        .into_values()
        .map(|mut cs| {
            cs.sort_by_key(|c| c.id);
            let uniform = cs
                .iter()
                .all(|c| c.production_hours == cs[0].production_hours && c.due() == cs[0].due());
            Candidate {
                hours: cs.iter().map(|c| c.production_hours).fold(f64::INFINITY, f64::min),
                due: cs.iter().map(|c| c.due()).max().expect("nonempty"),
                contracts: cs,
                uniform,
            }
        })
        .collect();
    let jobs: Vec<(OrderId, f64, Period)> = candidates
        .iter()
        .map(|c| (c.contracts[0].order_id, c.hours, c.due))
        .collect();
    let k_max = max_bundle_size(supplier, &jobs, from)?;
    let before = out.len();

    // Depth-first over order subsets in index order; infeasible prefixes are cut
    // because feasibility is closed under taking subsets.
    let mut stack: Vec<usize> = Vec::new();
    let mut next = 0usize;
    loop {
        if next < candidates.len() && stack.len() < k_max {
            stack.push(next);
            let mut sched: Vec<(Period, f64)> = stack
                .iter()
                .map(|&o| (candidates[o].due, candidates[o].hours))
                .collect();
            if fits_schedule(&supplier.capacity, &mut sched, from) {
                push_combinations(supplier, &stack, &candidates, from, out, budget)?;
                next += 1;
            } else {
                stack.pop();
                next += 1;
            }
        } else {
            match stack.pop() {
                Some(last) => next = last + 1,
                None => break,
            }
        }
    }
    Ok(SupplierExpansion {
        supplier_id: supplier.id,
        candidate_orders: candidates.len(),
        max_bundle_size: k_max,
        bundles: out.len() - before,
    })
}

/// Builds the pruned bundle graph over the instance's contracts.
pub fn expand_and_prune(instance: &MarketInstance, cap: usize) -> Result<ExpandedGraph> {
    let from = instance.from();
    let mut by_supplier_contracts: BTreeMap<SupplierId, Vec<&Contract>> = BTreeMap::new();
    for c in &instance.contracts {
        by_supplier_contracts.entry(c.supplier_id).or_default().push(c);
    }
    let suppliers = instance.supplier_index();
    let mut bundles = Vec::new();
    let mut stats = Vec::new();
    for (sid, contracts) in &by_supplier_contracts {
        let supplier = suppliers
            .get(sid)
            .ok_or_else(|| Error::Config(format!("contract references unknown supplier {sid}")))?;
        stats.push(expand_supplier(supplier, contracts, from, &mut bundles, cap)?);
    }
    Ok(index(from, bundles, stats))
}

fn index(from: Period, bundles: Vec<ContractBundle>, stats: Vec<SupplierExpansion>) -> ExpandedGraph {
    let mut by_order: BTreeMap<OrderId, Vec<usize>> = BTreeMap::new();
    let mut by_supplier: BTreeMap<SupplierId, Vec<usize>> = BTreeMap::new();
    let mut lookup = HashMap::with_capacity(bundles.len());
    for (b, bundle) in bundles.iter().enumerate() {
        by_supplier.entry(bundle.supplier_id).or_default().push(b);
        for c in &bundle.contracts {
            by_order.entry(c.order_id).or_default().push(b);
        }
        lookup.insert((bundle.supplier_id, bundle.contract_ids()), b);
    }
    ExpandedGraph {
        from,
        bundles,
        by_order,
        by_supplier,
        stats,
        lookup,
    }
}
