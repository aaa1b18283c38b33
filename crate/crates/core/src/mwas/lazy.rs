//! The two-step program over contract variables with blocking constraints
//! generated on demand.
//!
//! A bundle `b = (I, j, C)` does not block a matching when `j` already earns at
//! least `u(C)` or some member holds a different contract it likes at least as
//! much. Over contract variables `x` this is the linear row
//! `Σ_{c at j} u_c x_c + u(C) Σ_{killers} x + u(C) y_b >= u(C)`, where `y_b`
//! lets the bundle block. Only bundles met blocking some intermediate solution
//! get a row; the loop stops when the master's solution has no blocking bundle
//! outside the generated set, at which point its count is exact.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::gen::MarketInstance;
use crate::model::{Contract, ContractId, Matching, OrderId, SupplierId, TOLERANCE};
use crate::mw::assignment_program;
use crate::solver::{solve_from, BinaryProgram, Sense, SolverOptions};

use super::graph::ExpandedGraph;

/// Nodes spent looking for a stable matching before counting blocking bundles.
const SHORTCUT_NODES: u64 = 200_000;

pub(crate) struct Master<'a> {
    graph: &'a ExpandedGraph,
    base: BinaryProgram,
    offers: Vec<&'a Contract>,
    var_of: HashMap<ContractId, usize>,
    by_order: BTreeMap<OrderId, Vec<usize>>,
    by_supplier: BTreeMap<SupplierId, Vec<usize>>,
    cuts: Vec<usize>,
    cut_set: HashSet<usize>,
    lifted: Vec<usize>,
    lifted_set: HashSet<usize>,
    pub nodes: u64,
    node_limit: u64,
}

impl<'a> Master<'a> {
    pub fn new(instance: &'a MarketInstance, graph: &'a ExpandedGraph, node_limit: u64) -> Result<Self> {
        let (base, offers) = assignment_program(instance, |_| 0.0)?;
        let mut var_of = HashMap::with_capacity(offers.len());
        let mut by_order: BTreeMap<OrderId, Vec<usize>> = BTreeMap::new();
        let mut by_supplier: BTreeMap<SupplierId, Vec<usize>> = BTreeMap::new();
        for (i, c) in offers.iter().enumerate() {
            var_of.insert(c.id, i);
            by_order.entry(c.order_id).or_default().push(i);
            by_supplier.entry(c.supplier_id).or_default().push(i);
        }
        Ok(Master {
            graph,
            base,
            offers,
            var_of,
            by_order,
            by_supplier,
            cuts: Vec::new(),
            cut_set: HashSet::new(),
            lifted: Vec::new(),
            lifted_set: HashSet::new(),
            nodes: 0,
            node_limit,
        })
    }

    /// Bundles blocking `matching`, by the definition.
    pub fn blocking(&self, matching: &Matching) -> Vec<usize> {
        let sigma: BTreeMap<SupplierId, f64> = matching
            .by_supplier()
            .into_iter()
            .map(|(s, cs)| (s, cs.iter().map(|c| c.u_supplier).sum()))
            .collect();
        self.graph
            .bundles
            .iter()
            .enumerate()
            .filter(|(_, b)| {
                let s = sigma.get(&b.supplier_id).copied().unwrap_or(0.0);
                b.u_supplier_total > s + TOLERANCE
                    && b.contracts.iter().all(|c| match matching.contract_for(c.order_id) {
                        None => true,
                        Some(h) => h.id == c.id || c.u_order > h.u_order + TOLERANCE,
                    })
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Adds rows for the bundles not yet covered; returns how many were new.
    fn add_cuts(&mut self, bundles: &[usize]) -> usize {
        let mut added = 0;
        for &b in bundles {
            if self.cut_set.insert(b) {
                self.cuts.push(b);
                added += 1;
            }
        }
        added
    }

    /// Grows bundle `b` greedily, best supplier utility first, to a maximal one.
    fn extend(&self, b: usize) -> usize {
        let bundle = &self.graph.bundles[b];
        let sid = bundle.supplier_id;
        let mut members: Vec<&Contract> = bundle.contracts.iter().collect();
        let mut current = b;
        let mut pool: Vec<usize> = self.by_supplier[&sid].clone();
        pool.sort_by(|&a, &b| {
            self.offers[b]
                .u_supplier
                .total_cmp(&self.offers[a].u_supplier)
                .then(a.cmp(&b))
        });
        for v in pool {
            let c = self.offers[v];
            if members.iter().any(|m| m.order_id == c.order_id) {
                continue;
            }
            members.push(c);
            match self.graph.find(sid, &members) {
                Some(found) => current = found,
                None => {
                    members.pop();
                }
            }
        }
        current
    }

    fn add_lifted(&mut self, bundles: &[usize]) -> usize {
        let mut added = 0;
        for &b in bundles {
            let grown = self.extend(b);
            if self.lifted_set.insert(grown) {
                self.lifted.push(grown);
                added += 1;
            }
        }
        added
    }

    fn cut_terms(&self, b: usize, lifted: bool) -> (Vec<(usize, f64)>, f64) {
        let bundle = &self.graph.bundles[b];
        let u = bundle.u_supplier_total;
        let mut terms: Vec<(usize, f64)> = self.by_supplier[&bundle.supplier_id]
            .iter()
            .map(|&v| (v, -self.offers[v].u_supplier))
            .collect();
        for member in &bundle.contracts {
            for &v in &self.by_order[&member.order_id] {
                let other = self.offers[v];
                if other.id != member.id && other.u_order >= member.u_order - TOLERANCE {
                    terms.push((v, if lifted { -member.u_supplier } else { -u }));
                }
            }
        }
        (terms, TOLERANCE - u)
    }

    fn program(&self, x_objective: &[f64], y_objective: f64, sense: Sense, limit: Option<usize>) -> BinaryProgram {
        let n_x = self.offers.len();
        let mut objective = x_objective.to_vec();
        objective.extend(std::iter::repeat_n(y_objective, self.cuts.len()));
        let mut p = BinaryProgram::new(objective, sense);
        p.constraints = self.base.constraints.clone();
        for (k, &b) in self.cuts.iter().enumerate() {
            let (mut terms, bound) = self.cut_terms(b, false);
            terms.push((n_x + k, -self.graph.bundles[b].u_supplier_total));
            p.add_constraint(terms, bound);
        }
        if let Some(limit) = limit {
            p.add_constraint((n_x..n_x + self.cuts.len()).map(|v| (v, 1.0)).collect(), limit as f64);
        }
        p
    }

    fn lifted_program(&self, x_objective: &[f64]) -> BinaryProgram {
        let mut p = BinaryProgram::new(x_objective.to_vec(), Sense::Maximize);
        p.constraints = self.base.constraints.clone();
        for &b in &self.lifted {
            let (terms, bound) = self.cut_terms(b, true);
            p.add_constraint(terms, bound);
        }
        p
    }

    /// Best matching with no blocking bundle by `x_objective`, or `None` when
    /// every matching has one. `start` seeds the search when it is stable.
    fn stable(&mut self, x_objective: &[f64], start: Option<&Matching>) -> Result<Option<Matching>> {
        let best: Option<Matching> = start.filter(|m| self.blocking(m).is_empty()).cloned();
        loop {
            let p = self.lifted_program(x_objective);
            let seed = best.as_ref().map(|m| self.selection_of(m, &[]));
            let m = match self.solve(&p, seed.as_deref()) {
                Ok(m) => m,
                Err(Error::Infeasible) => return Ok(best),
                Err(e) => return Err(e),
            };
            let blocking = self.blocking(&m);
            // The master relaxes the stable set, so a stable optimum of it is final.
            if blocking.is_empty() {
                return Ok(Some(m));
            }
            let worst = self.worst_per_supplier(&blocking);
            self.add_lifted(&worst);
        }
    }

    /// The highest-value bundle of each supplier among `blocking`.
    fn worst_per_supplier(&self, blocking: &[usize]) -> Vec<usize> {
        let mut best: BTreeMap<SupplierId, usize> = BTreeMap::new();
        for &b in blocking {
            let bundle = &self.graph.bundles[b];
            let e = best.entry(bundle.supplier_id).or_insert(b);
            if bundle.u_supplier_total > self.graph.bundles[*e].u_supplier_total {
                *e = b;
            }
        }
        best.into_values().collect()
    }

    /// Selection for `matching`, with `y` raised on the generated rows it violates.
    fn selection_of(&self, matching: &Matching, blocking: &[usize]) -> Vec<usize> {
        let n_x = self.offers.len();
        let blocked: HashSet<usize> = blocking.iter().copied().collect();
        let mut sel: Vec<usize> = matching.contracts().map(|c| self.var_of[&c.id]).collect();
        sel.extend(
            self.cuts
                .iter()
                .enumerate()
                .filter(|(_, b)| blocked.contains(b))
                .map(|(k, _)| n_x + k),
        );
        sel.sort_unstable();
        sel
    }

    fn matching_of(&self, chosen: &[usize]) -> Matching {
        Matching::from_contracts(
            chosen
                .iter()
                .filter(|&&v| v < self.offers.len())
                .map(|&v| self.offers[v].clone()),
        )
    }

    fn solve(&mut self, p: &BinaryProgram, seed: Option<&[usize]>) -> Result<Matching> {
        let options = SolverOptions {
            node_limit: self.node_limit.saturating_sub(self.nodes).max(1),
            ..SolverOptions::default()
        };
        let sel = solve_from(p, &options, seed)?;
        self.nodes += sel.nodes;
        Ok(self.matching_of(&sel.chosen))
    }

    /// Fewest blocking bundles over all matchings, with a matching attaining it.
    /// `start` must be feasible.
    pub fn min_blocking(&mut self, start: Matching) -> Result<(usize, Matching)> {
        let zeros = vec![0.0; self.offers.len()];
        let mut best_blocking = self.blocking(&start);
        if best_blocking.is_empty() {
            return Ok((0, start));
        }
        let limit = self.node_limit;
        self.node_limit = (self.nodes + SHORTCUT_NODES).min(limit);
        let shortcut = self.stable(&zeros, None);
        self.node_limit = limit;
        match shortcut {
            Ok(Some(m)) => return Ok((0, m)),
            Ok(None) | Err(Error::NodeLimit { .. }) => {}
            Err(e) => return Err(e),
        }
        let mut best = start;
        self.add_cuts(&best_blocking.clone());
        loop {
            if best_blocking.is_empty() {
                return Ok((0, best));
            }
            let p = self.program(&zeros, 1.0, Sense::Minimize, None);
            let seed = self.selection_of(&best, &best_blocking);
            let m = self.solve(&p, Some(&seed))?;
            let blocking = self.blocking(&m);
            let added = self.add_cuts(&blocking);
            if blocking.len() < best_blocking.len() {
                best = m;
                best_blocking = blocking;
            }
            if added == 0 {
                return Ok((best_blocking.len(), best));
            }
        }
    }

    /// Best value among matchings with at most `limit` blocking bundles, starting
    /// from a matching `witness` that meets the limit.
    pub fn max_value<F>(&mut self, value: F, limit: usize, witness: Matching) -> Result<Matching>
    where
        F: Fn(&Contract) -> f64,
    {
        let x_objective: Vec<f64> = self.offers.iter().map(|c| value(c)).collect();
        let worth = |m: &Matching| -> f64 { m.contracts().map(&value).sum() };
        let mut best_blocking = self.blocking(&witness);
        if best_blocking.len() > limit {
            return Err(Error::InvalidProgram(format!(
                "witness has {} blocking bundles, limit {limit}",
                best_blocking.len()
            )));
        }
        if limit == 0 {
            return Ok(self.stable(&x_objective, Some(&witness))?.unwrap_or(witness));
        }
        let mut best = witness;
        self.add_cuts(&best_blocking.clone());
        loop {
            let p = self.program(&x_objective, 0.0, Sense::Maximize, Some(limit));
            let seed = self.selection_of(&best, &best_blocking);
            let m = self.solve(&p, Some(&seed))?;
            let blocking = self.blocking(&m);
            let added = self.add_cuts(&blocking);
            if blocking.len() <= limit && worth(&m) > worth(&best) + TOLERANCE {
                best = m;
                best_blocking = blocking;
            }
            if added == 0 {
                return Ok(best);
            }
        }
    }
}
