//! Exact search over bundle selections for the two-step program.
//!
//! A selection picks at most one bundle per supplier with pairwise-disjoint
//! orders; every feasible matching is such a selection. A bundle `(I, j, C)`
//! blocks a selection `M` when supplier `j` strictly gains over `M_j` and every
//! member order either already holds its contract in `C` or strictly prefers it.
//!
//! Suppliers are decided one at a time in a fixed order. The blocking status of
//! a bundle becomes final as soon as its supplier is decided and each member is
//! settled: assigned, or unassigned with no undecided supplier left that could
//! offer it a contract it likes at least as much. Final statuses give an exact
//! running count, which bounds step one and enforces the step-two limit.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{ContractId, SupplierId, TOLERANCE};

use super::graph::ExpandedGraph;

/// A selection with its blocking count and value.
pub(crate) type Incumbent = (Vec<Option<usize>>, usize, f64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Goal {
    /// Fewest blocking bundles.
    MinBlocking,
    /// Largest total bundle value with at most `limit` blocking bundles.
    MaxValue { limit: usize },
}

struct Member {
    order: usize,
    contract: ContractId,
    u_order: f64,
}

struct Bundle {
    global: usize,
    supplier: usize,
    members: Vec<Member>,
    u_supplier: f64,
    value: f64,
}

/// One connected block of suppliers and orders.
pub(crate) struct Component {
    pub suppliers: Vec<SupplierId>,
    bundles: Vec<Bundle>,
    by_supplier: Vec<Vec<usize>>,
    occurrences: Vec<Vec<(usize, usize)>>,
    /// Members whose last possible weakly-better offer sits at each supplier position.
    settle_at: Vec<Vec<(usize, usize)>>,
    threshold: Vec<Vec<usize>>,
    n_orders: usize,
}

pub(crate) fn components(graph: &ExpandedGraph, values: &[f64]) -> Vec<Component> {
    // Union suppliers that share an order.
    let sids: Vec<SupplierId> = graph.by_supplier.keys().copied().collect();
    let pos: BTreeMap<SupplierId, usize> = sids.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut parent: Vec<usize> = (0..sids.len()).collect();
    fn find(p: &mut [usize], mut v: usize) -> usize {
        while p[v] != v {
            p[v] = p[p[v]];
            v = p[v];
        }
        v
    }
    for bundles in graph.by_order.values() {
        let first = pos[&graph.bundles[bundles[0]].supplier_id];
        for &b in &bundles[1..] {
            let other = pos[&graph.bundles[b].supplier_id];
            let (ra, rb) = (find(&mut parent, first), find(&mut parent, other));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<SupplierId>> = BTreeMap::new();
    for (i, sid) in sids.iter().enumerate() {
        groups.entry(find(&mut parent, i)).or_default().push(*sid);
    }
    groups
        .into_values()
        .map(|suppliers| Component::build(graph, branching_order(graph, suppliers), values))
        .collect()
}

/// Suppliers ordered so that each one shares as many orders as possible with
/// those before it; orders then settle early in the search.
fn branching_order(graph: &ExpandedGraph, mut rest: Vec<SupplierId>) -> Vec<SupplierId> {
    let orders_of = |s: &SupplierId| -> std::collections::BTreeSet<crate::model::OrderId> {
        graph.by_supplier[s]
            .iter()
            .flat_map(|&b| graph.bundles[b].contracts.iter().map(|c| c.order_id))
            .collect()
    };
    let sets: BTreeMap<SupplierId, _> = rest.iter().map(|s| (*s, orders_of(s))).collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(rest.len());
    while !rest.is_empty() {
        let (k, _) = rest
            .iter()
            .enumerate()
            .min_by_key(|(_, s)| {
                let set = &sets[*s];
                let fresh = set.iter().filter(|o| !seen.contains(*o)).count();
                (fresh, std::cmp::Reverse(set.len() - fresh), **s)
            })
            .expect("nonempty");
        let s = rest.remove(k);
        seen.extend(sets[&s].iter().copied());
        out.push(s);
    }
    out
}

impl Component {
    fn build(graph: &ExpandedGraph, suppliers: Vec<SupplierId>, values: &[f64]) -> Component {
        let mut order_index: BTreeMap<crate::model::OrderId, usize> = BTreeMap::new();
        let mut bundles = Vec::new();
        let mut by_supplier = vec![Vec::new(); suppliers.len()];
        for (p, sid) in suppliers.iter().enumerate() {
            for &g in &graph.by_supplier[sid] {
                let src = &graph.bundles[g];
                let members = src
                    .contracts
                    .iter()
                    .map(|c| {
                        let next = order_index.len();
                        Member {
                            order: *order_index.entry(c.order_id).or_insert(next),
                            contract: c.id,
                            u_order: c.u_order,
                        }
                    })
                    .collect();
                by_supplier[p].push(bundles.len());
                bundles.push(Bundle {
                    global: g,
                    supplier: p,
                    members,
                    u_supplier: src.u_supplier_total,
                    value: values[g],
                });
            }
        }
        let n_orders = order_index.len();
        // Best u_order each order can get at each supplier position.
        let mut best_at = vec![vec![f64::NEG_INFINITY; suppliers.len()]; n_orders];
        for b in &bundles {
            for m in &b.members {
                let slot = &mut best_at[m.order][b.supplier];
                *slot = slot.max(m.u_order);
            }
        }
        let mut occurrences = vec![Vec::new(); n_orders];
        let mut settle_at = vec![Vec::new(); suppliers.len()];
        let mut threshold = Vec::with_capacity(bundles.len());
        for (bi, b) in bundles.iter().enumerate() {
            let mut th = Vec::with_capacity(b.members.len());
            for (k, m) in b.members.iter().enumerate() {
                occurrences[m.order].push((bi, k));
                let last = (0..suppliers.len())
                    .rev()
                    .find(|&p| best_at[m.order][p] >= m.u_order - TOLERANCE)
                    .expect("the bundle's own supplier qualifies");
                settle_at[last].push((bi, k));
                th.push(last);
            }
            threshold.push(th);
        }
        Component {
            suppliers,
            bundles,
            by_supplier,
            occurrences,
            settle_at,
            threshold,
            n_orders,
        }
    }

    /// Converts a global selection into local bundle choices per supplier position.
    pub fn localize(&self, selection: &BTreeMap<SupplierId, usize>) -> Vec<Option<usize>> {
        self.suppliers
            .iter()
            .enumerate()
            .map(|(p, sid)| {
                selection.get(sid).and_then(|&g| {
                    self.by_supplier[p]
                        .iter()
                        .copied()
                        .find(|&b| self.bundles[b].global == g)
                })
            })
            .collect()
    }

    pub fn globalize(&self, choice: &[Option<usize>]) -> Vec<usize> {
        choice.iter().flatten().map(|&b| self.bundles[b].global).collect()
    }

    pub fn value_of(&self, choice: &[Option<usize>]) -> f64 {
        choice.iter().flatten().map(|&b| self.bundles[b].value).sum()
    }

    /// Blocking count of a complete selection, straight from the definition.
    pub fn blocking_count(&self, choice: &[Option<usize>]) -> usize {
        let mut held: Vec<Option<(ContractId, f64)>> = vec![None; self.n_orders];
        for &b in choice.iter().flatten() {
            for m in &self.bundles[b].members {
                held[m.order] = Some((m.contract, m.u_order));
            }
        }
        self.bundles
            .iter()
            .filter(|b| {
                let sigma = choice[b.supplier].map_or(0.0, |o| self.bundles[o].u_supplier);
                b.u_supplier > sigma + TOLERANCE
                    && b.members.iter().all(|m| match held[m.order] {
                        None => true,
                        Some((c, u)) => c == m.contract || m.u_order > u + TOLERANCE,
                    })
            })
            .count()
    }

    pub(crate) fn search(
        &self,
        goal: Goal,
        incumbent: Option<Incumbent>,
        node_limit: u64,
        nodes: &mut u64,
    ) -> Result<Option<Incumbent>> {
        let mut s = State::new(self, goal, node_limit, *nodes);
        if let Some((choice, count, value)) = incumbent {
            s.best_count = count;
            s.best_value = value;
            s.best = Some(choice);
        }
        if goal != Goal::MinBlocking {
            s.fit_prices();
        }
        s.order_options();
        let out = s.dfs(0);
        *nodes = s.nodes;
        out?;
        let (count, value) = (s.best_count, s.best_value);
        Ok(s.best.map(|b| (b, count, value)))
    }
}

enum Log {
    Settled(usize, bool),
    Failed(usize),
}

struct State<'a> {
    c: &'a Component,
    goal: Goal,
    held: Vec<Option<(ContractId, f64)>>,
    pending: Vec<u32>,
    failed: Vec<u32>,
    count: usize,
    log: Vec<Log>,
    choice: Vec<Option<usize>>,
    value: f64,
    prices: Vec<f64>,
    /// Per supplier position, bundle options best first.
    options: Vec<Vec<usize>>,
    /// Per supplier position, bundles sorted by priced value for the bound.
    priced: Vec<Vec<(f64, usize)>>,
    best: Option<Vec<Option<usize>>>,
    best_count: usize,
    best_value: f64,
    nodes: u64,
    node_limit: u64,
}

impl<'a> State<'a> {
    fn new(c: &'a Component, goal: Goal, node_limit: u64, nodes: u64) -> Self {
        State {
            c,
            goal,
            held: vec![None; c.n_orders],
            pending: c.bundles.iter().map(|b| b.members.len() as u32 + 1).collect(),
            failed: vec![0; c.bundles.len()],
            count: 0,
            log: Vec::new(),
            choice: vec![None; c.suppliers.len()],
            value: 0.0,
            prices: vec![0.0; c.n_orders],
            options: Vec::new(),
            priced: Vec::new(),
            best: None,
            best_count: usize::MAX,
            best_value: f64::NEG_INFINITY,
            nodes,
            node_limit,
        }
    }

    fn order_options(&mut self) {
        let c = self.c;
        self.options = c
            .by_supplier
            .iter()
            .map(|list| {
                let mut opts = list.clone();
                match self.goal {
                    Goal::MinBlocking => opts.sort_by(|&a, &b| {
                        c.bundles[b]
                            .u_supplier
                            .total_cmp(&c.bundles[a].u_supplier)
                            .then(a.cmp(&b))
                    }),
                    // By reduced value, so the first option failing the bound ends the scan.
                    Goal::MaxValue { .. } => {
                        opts.sort_by(|&a, &b| self.reduced(b).total_cmp(&self.reduced(a)).then(a.cmp(&b)))
                    }
                }
                opts
            })
            .collect();
        self.priced = c
            .by_supplier
            .iter()
            .map(|list| {
                let mut v: Vec<(f64, usize)> = list
                    .iter()
                    .map(|&b| (self.reduced(b), b))
                    .filter(|t| t.0 > 0.0)
                    .collect();
                v.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
                v
            })
            .collect();
    }

    fn reduced(&self, b: usize) -> f64 {
        let bundle = &self.c.bundles[b];
        bundle.value - bundle.members.iter().map(|m| self.prices[m.order]).sum::<f64>()
    }

    /// Order prices from subgradient steps on the relaxed one-bundle-per-order rows.
    fn fit_prices(&mut self) {
        let c = self.c;
        if c.bundles.iter().all(|b| b.value <= 0.0) {
            return;
        }
        let mut best_prices = self.prices.clone();
        let mut best_bound = f64::INFINITY;
        let mut theta = 1.0;
        for _ in 0..40 {
            let mut usage = vec![0i32; c.n_orders];
            let mut bound: f64 = self.prices.iter().sum();
            for list in &c.by_supplier {
                let mut top = (0.0, usize::MAX);
                for &b in list {
                    let r = self.reduced(b);
                    if r > top.0 {
                        top = (r, b);
                    }
                }
                if top.1 != usize::MAX {
                    bound += top.0;
                    for m in &c.bundles[top.1].members {
                        usage[m.order] += 1;
                    }
                }
            }
            if bound < best_bound {
                best_bound = bound;
                best_prices.copy_from_slice(&self.prices);
            } else {
                theta *= 0.7;
            }
            let g: Vec<f64> = usage.iter().map(|&u| 1.0 - f64::from(u)).collect();
            let norm: f64 = g
                .iter()
                .zip(&self.prices)
                .filter(|(gi, p)| !(**gi > 0.0 && **p == 0.0))
                .map(|(gi, _)| gi * gi)
                .sum();
            if norm < 1e-12 {
                break;
            }
            let step = theta * 0.1 * best_bound.max(1e-3) / norm;
            for (p, gi) in self.prices.iter_mut().zip(&g) {
                *p = (*p - step * gi).max(0.0);
            }
        }
        self.prices = best_prices;
    }

    fn settle(&mut self, b: usize) {
        self.pending[b] -= 1;
        let counted = self.pending[b] == 0 && self.failed[b] == 0;
        if counted {
            self.count += 1;
        }
        self.log.push(Log::Settled(b, counted));
    }

    fn fail(&mut self, b: usize) {
        self.pending[b] -= 1;
        self.failed[b] += 1;
        self.log.push(Log::Failed(b));
    }

    fn undo(&mut self, mark: usize) {
        while self.log.len() > mark {
            match self.log.pop().expect("log above mark") {
                Log::Settled(b, counted) => {
                    self.pending[b] += 1;
                    if counted {
                        self.count -= 1;
                    }
                }
                Log::Failed(b) => {
                    self.pending[b] += 1;
                    self.failed[b] -= 1;
                }
            }
        }
    }

    fn decide(&mut self, pos: usize, option: Option<usize>) {
        let c = self.c;
        let sigma = option.map_or(0.0, |o| c.bundles[o].u_supplier);
        for &b in &c.by_supplier[pos] {
            if c.bundles[b].u_supplier > sigma + TOLERANCE {
                self.settle(b);
            } else {
                self.fail(b);
            }
        }
        if let Some(o) = option {
            for m in &c.bundles[o].members {
                self.held[m.order] = Some((m.contract, m.u_order));
                for &(b, k) in &c.occurrences[m.order] {
                    if c.threshold[b][k] < pos {
                        continue;
                    }
                    let other = &c.bundles[b].members[k];
                    if other.contract == m.contract || other.u_order > m.u_order + TOLERANCE {
                        self.settle(b);
                    } else {
                        self.fail(b);
                    }
                }
            }
            self.value += c.bundles[o].value;
        }
        self.choice[pos] = option;
        for &(b, k) in &c.settle_at[pos] {
            let order = c.bundles[b].members[k].order;
            if self.held[order].is_none() {
                self.settle(b);
            }
        }
    }

    fn retract(&mut self, pos: usize, mark: usize) {
        if let Some(o) = self.choice[pos].take() {
            for m in &self.c.bundles[o].members {
                self.held[m.order] = None;
            }
            self.value -= self.c.bundles[o].value;
        }
        self.undo(mark);
    }

    fn available(&self, b: usize) -> bool {
        self.c.bundles[b].members.iter().all(|m| self.held[m.order].is_none())
    }

    fn value_bound(&self, pos: usize) -> f64 {
        let mut bound = self.value;
        for (i, h) in self.held.iter().enumerate() {
            if h.is_none() {
                bound += self.prices[i];
            }
        }
        for list in &self.priced[pos.min(self.priced.len())..] {
            if let Some(&(r, _)) = list.iter().find(|&&(_, b)| self.available(b)) {
                bound += r;
            }
        }
        bound
    }

    fn pruned(&self, pos: usize) -> bool {
        match self.goal {
            Goal::MinBlocking => self.count >= self.best_count,
            Goal::MaxValue { limit } => self.count > limit || self.value_bound(pos) <= self.best_value + TOLERANCE,
        }
    }

    fn improves(&self) -> bool {
        match self.goal {
            Goal::MinBlocking => self.count < self.best_count,
            Goal::MaxValue { limit } => self.count <= limit && self.value > self.best_value + TOLERANCE,
        }
    }

    fn dfs(&mut self, pos: usize) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.node_limit {
            return Err(Error::NodeLimit { limit: self.node_limit });
        }
        if pos == self.c.suppliers.len() {
            if self.improves() {
                self.best = Some(self.choice.clone());
                self.best_count = self.count;
                self.best_value = self.value;
            }
            return Ok(());
        }
        if self.pruned(pos) {
            return Ok(());
        }
        let opts = std::mem::take(&mut self.options[pos]);
        let mut result = Ok(());
        let empty_first =
            matches!(self.goal, Goal::MaxValue { .. }) && opts.first().is_none_or(|&b| self.c.bundles[b].value <= 0.0);
        let mut candidates: Vec<Option<usize>> = Vec::with_capacity(opts.len() + 1);
        if empty_first {
            candidates.push(None);
        }
        candidates.extend(opts.iter().filter(|&&b| self.available(b)).map(|&b| Some(b)));
        if !empty_first {
            candidates.push(None);
        }
        // Taking `b` here can only lower the rest of the bound, so `base + reduced(b)`
        // caps every completion through it.
        let base = match self.goal {
            Goal::MaxValue { .. } => Some(self.value_bound(pos + 1)),
            Goal::MinBlocking => None,
        };
        for option in candidates {
            if let Some(base) = base {
                let cap = base + option.map_or(0.0, |b| self.reduced(b));
                if cap <= self.best_value + TOLERANCE {
                    continue;
                }
            }
            let mark = self.log.len();
            self.decide(pos, option);
            let r = if self.pruned(pos + 1) && pos + 1 < self.c.suppliers.len() {
                Ok(())
            } else {
                self.dfs(pos + 1)
            };
            self.retract(pos, mark);
            if r.is_err() {
                result = r;
                break;
            }
            if self.goal == Goal::MinBlocking && self.best_count == 0 {
                break;
            }
        }
        self.options[pos] = opts;
        result
    }
}
