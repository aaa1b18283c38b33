//! Order-proposing deferred acceptance over contracts with the exact supplier
//! choice function, and the single defection round used for the anarchy study.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::choice::choose_indices;
use crate::error::{Error, Result};
use crate::gen::MarketInstance;
use crate::model::{Contract, ContractId, Matching, OrderId, SupplierId, TOLERANCE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    /// Rejected contracts leave the supplier's pool.
    #[default]
    Literal,
    /// Suppliers re-choose over every offer received so far.
    Cumulative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupplierRound {
    pub supplier_id: SupplierId,
    pub pool: Vec<ContractId>,
    pub chosen: Vec<ContractId>,
    pub u_supplier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub proposals: Vec<ContractId>,
    pub suppliers: Vec<SupplierRound>,
}

#[derive(Clone, Debug, Default)]
pub struct AsOutcome {
    pub matching: Matching,
    pub rounds: usize,
    pub proposals: usize,
    pub trace: Vec<RoundTrace>,
}

impl AsOutcome {
    /// The trace as JSON lines, one round per line.
    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace serializes") + "\n")
            .collect()
    }
}

/// Order's ranking of contracts: utility descending, then supplier id, then contract id.
fn rank(a: &Contract, b: &Contract) -> std::cmp::Ordering {
    b.u_order
        .total_cmp(&a.u_order)
        .then(a.supplier_id.cmp(&b.supplier_id))
        .then(a.id.cmp(&b.id))
}

pub fn match_as(instance: &MarketInstance, mode: PoolMode) -> Result<AsOutcome> {
    match_as_traced(instance, mode, false)
}

pub fn match_as_traced(instance: &MarketInstance, mode: PoolMode, trace: bool) -> Result<AsOutcome> {
    let suppliers = instance.supplier_index();
    let from = instance.from();
    let mut lists: BTreeMap<OrderId, Vec<&Contract>> = BTreeMap::new();
    for c in &instance.contracts {
        lists.entry(c.order_id).or_default().push(c);
    }
    for list in lists.values_mut() {
        list.sort_by(|a, b| rank(a, b));
    }
    let mut next: BTreeMap<OrderId, usize> = lists.keys().map(|&o| (o, 0)).collect();
    let total_contracts = instance.contracts.len();

    let mut pools: BTreeMap<SupplierId, Vec<&Contract>> = BTreeMap::new();
    let mut chosen: BTreeMap<SupplierId, BTreeSet<ContractId>> = BTreeMap::new();
    let mut rejected: BTreeSet<OrderId> = lists.keys().copied().collect();
    let mut out = AsOutcome::default();

    loop {
        let mut proposals: BTreeMap<SupplierId, Vec<&Contract>> = BTreeMap::new();
        let mut proposed = Vec::new();
        for &order in &rejected {
            let k = next.get_mut(&order).expect("known order");
            if let Some(&c) = lists[&order].get(*k) {
                *k += 1;
                proposals.entry(c.supplier_id).or_default().push(c);
                proposed.push(c.id);
            }
        }
        if proposed.is_empty() {
            break;
        }
        out.rounds += 1;
        out.proposals += proposed.len();
        debug_assert!(out.proposals <= total_contracts);
        let mut round = RoundTrace {
            round: out.rounds,
            proposals: proposed,
            suppliers: Vec::new(),
        };
        for (sid, offers) in proposals {
            let supplier = suppliers
                .get(&sid)
                .ok_or_else(|| Error::Config(format!("contract references unknown supplier {sid}")))?;
            let pool = pools.entry(sid).or_default();
            pool.extend(offers);
            pool.sort_by_key(|c| c.id);
            let picked = choose_indices(supplier, pool, from)?;
            let keep: BTreeSet<ContractId> = picked.iter().map(|&i| pool[i].id).collect();
            if trace {
                round.suppliers.push(SupplierRound {
                    supplier_id: sid,
                    pool: pool.iter().map(|c| c.id).collect(),
                    chosen: keep.iter().copied().collect(),
                    u_supplier: picked.iter().map(|&i| pool[i].u_supplier).sum(),
                });
            }
            if mode == PoolMode::Literal {
                pool.retain(|c| keep.contains(&c.id));
            }
            chosen.insert(sid, keep);
        }
        // An order is held while any supplier currently chooses one of its contracts.
        let held: BTreeSet<OrderId> = pools
            .iter()
            .flat_map(|(sid, pool)| {
                let keep = &chosen[sid];
                pool.iter().filter(move |c| keep.contains(&c.id)).map(|c| c.order_id)
            })
            .collect();
        rejected = lists.keys().filter(|o| !held.contains(o)).copied().collect();
        if trace {
            out.trace.push(round);
        }
    }

    // In cumulative mode one order can be held by several suppliers; it keeps its best.
    let mut best: BTreeMap<OrderId, &Contract> = BTreeMap::new();
    for (sid, pool) in &pools {
        for c in pool.iter().filter(|c| chosen[sid].contains(&c.id)) {
            match best.get(&c.order_id) {
                Some(b) if rank(b, c).is_le() => {}
                _ => {
                    best.insert(c.order_id, c);
                }
            }
        }
    }
    out.matching = Matching::from_contracts(best.into_values().cloned());
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct DefectionOutcome {
    pub matching: Matching,
    pub proposals: usize,
    /// Orders whose outside proposal was accepted.
    pub defectors: BTreeSet<OrderId>,
    /// Orders that lost their assignment to a defector.
    pub displaced: BTreeSet<OrderId>,
}

/// Each order proposes its best accessible contract if it beats its assignment;
/// suppliers choose over their assignment plus proposals, and accepted
/// proposals are final.
pub fn first_round_offers(
    matching: &Matching,
    accessible: &BTreeMap<OrderId, BTreeSet<SupplierId>>,
    instance: &MarketInstance,
) -> Result<DefectionOutcome> {
    let suppliers = instance.supplier_index();
    let from = instance.from();
    let mut best: BTreeMap<OrderId, &Contract> = BTreeMap::new();
    for c in &instance.contracts {
        if !accessible.get(&c.order_id).is_some_and(|s| s.contains(&c.supplier_id)) {
            continue;
        }
        match best.get(&c.order_id) {
            Some(b) if rank(b, c).is_le() => {}
            _ => {
                best.insert(c.order_id, c);
            }
        }
    }
    let mut proposals: BTreeMap<SupplierId, Vec<&Contract>> = BTreeMap::new();
    let mut n_proposals = 0;
    for (order, c) in best {
        let current = matching.contract_for(order);
        let improves = current.is_none_or(|a| c.u_order > a.u_order + TOLERANCE);
        if improves && !matching.contains(c) {
            proposals.entry(c.supplier_id).or_default().push(c);
            n_proposals += 1;
        }
    }

    let mut result = matching.clone();
    let mut defectors = BTreeSet::new();
    let mut accepted: Vec<Contract> = Vec::new();
    let mut dropped: Vec<Contract> = Vec::new();
    for (sid, offers) in proposals {
        let supplier = suppliers
            .get(&sid)
            .ok_or_else(|| Error::Config(format!("contract references unknown supplier {sid}")))?;
        let mut pool: Vec<&Contract> = matching.supplier_set(sid);
        pool.extend(offers.iter().copied());
        pool.sort_by_key(|c| c.id);
        let keep: BTreeSet<ContractId> = choose_indices(supplier, &pool, from)?
            .into_iter()
            .map(|i| pool[i].id)
            .collect();
        for c in &offers {
            if keep.contains(&c.id) {
                defectors.insert(c.order_id);
                accepted.push((*c).clone());
            }
        }
        for c in matching.supplier_set(sid) {
            if !keep.contains(&c.id) {
                dropped.push(c.clone());
            }
        }
    }
    // Defectors leave their old supplier; dropped assignments become unmatched.
    for c in &dropped {
        if result.contains(c) {
            result.unassign(c.order_id);
        }
    }
    for c in accepted {
        result.assign(c);
    }
    let displaced = dropped
        .iter()
        .map(|c| c.order_id)
        .filter(|o| !defectors.contains(o))
        .collect();
    Ok(DefectionOutcome {
        matching: result,
        proposals: n_proposals,
        defectors,
        displaced,
    })
}
