//! Blocking-pair and blocking-group detection, switching-cost filtering and
//! the stability metric tables.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{choose, choose_posterior};
use crate::error::{Error, Result};
use crate::gen::MarketInstance;
use crate::model::{
    fits_schedule, Contract, ContractBundle, ContractId, Matching, OrderId, Period, Supplier, SupplierId, TOLERANCE,
};
use crate::mwas::{max_bundle_size, ExpandedGraph, DEFAULT_BUNDLE_CAP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    Pair,
    Group,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderFlag {
    StrictlyPrefers,
    /// Already holds this exact contract.
    Indifferent,
    Unmatched,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupplierFlag {
    StrictlyPrefers,
    /// Gains the deviation without dropping any assigned contract.
    Underutilized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockingRecord {
    pub kind: RecordKind,
    pub supplier_id: SupplierId,
    /// Sorted by contract id.
    pub contracts: Vec<Contract>,
    pub order_flags: BTreeMap<OrderId, OrderFlag>,
    pub supplier_flag: SupplierFlag,
    pub available: bool,
    /// `None` for unmatched orders, whose relative gain is unbounded.
    pub order_gains: BTreeMap<OrderId, Option<f64>>,
    pub supplier_gain: Option<f64>,
}

impl BlockingRecord {
    pub fn contract_ids(&self) -> Vec<ContractId> {
        self.contracts.iter().map(|c| c.id).collect()
    }

    /// Participants: member orders plus the supplier.
    pub fn size(&self) -> usize {
        self.contracts.len() + 1
    }

    fn sort_key(&self) -> (SupplierId, Vec<ContractId>, RecordKind) {
        (self.supplier_id, self.contract_ids(), self.kind)
    }
}

fn relative_gain(new: f64, old: Option<f64>) -> Option<f64> {
    match old {
        Some(u) if u > TOLERANCE => Some((new - u) / u),
        _ => None,
    }
}

/// Builds the record for supplier `sid` deviating from `assigned` to `deviation`.
fn record(
    kind: RecordKind,
    sid: SupplierId,
    assigned: &[&Contract],
    mut deviation: Vec<Contract>,
    held: &dyn Fn(OrderId) -> Option<Contract>,
) -> BlockingRecord {
    deviation.sort_by_key(|c| c.id);
    let mut order_flags = BTreeMap::new();
    let mut order_gains = BTreeMap::new();
    for c in &deviation {
        let (flag, gain) = match held(c.order_id) {
            None => (OrderFlag::Unmatched, None),
            Some(h) if h.id == c.id => (OrderFlag::Indifferent, Some(0.0)),
            Some(h) => (OrderFlag::StrictlyPrefers, relative_gain(c.u_order, Some(h.u_order))),
        };
        order_flags.insert(c.order_id, flag);
        order_gains.insert(c.order_id, gain);
    }
    let kept: BTreeSet<ContractId> = deviation.iter().map(|c| c.id).collect();
    let underutilized = assigned.iter().all(|c| kept.contains(&c.id));
    let before: f64 = assigned.iter().map(|c| c.u_supplier).sum();
    let after: f64 = deviation.iter().map(|c| c.u_supplier).sum();
    let available = underutilized && order_flags.values().all(|f| *f != OrderFlag::StrictlyPrefers);
    BlockingRecord {
        kind,
        supplier_id: sid,
        contracts: deviation,
        order_flags,
        supplier_flag: if underutilized {
            SupplierFlag::Underutilized
        } else {
            SupplierFlag::StrictlyPrefers
        },
        available,
        order_gains,
        supplier_gain: relative_gain(after, if assigned.is_empty() { None } else { Some(before) }),
    }
}

fn order_wants(c: &Contract, held: Option<&Contract>) -> bool {
    held.is_none_or(|h| c.u_order > h.u_order + TOLERANCE)
}

/// Definitional group test: the supplier strictly gains and every member either
/// keeps exactly this contract or strictly prefers it.
fn group_blocks(bundle: &ContractBundle, sigma: f64, matching: &Matching) -> bool {
    bundle.u_supplier_total > sigma + TOLERANCE
        && bundle
            .contracts
            .iter()
            .all(|c| match matching.contract_for(c.order_id) {
                Some(h) if h.id == c.id => true,
                h => order_wants(c, h),
            })
}

fn sort_records(records: &mut [BlockingRecord]) {
    records.sort_by_key(|a| a.sort_key());
}

/// Pairs `(i, j, c)` outside the matching that `i` wants and that `j`'s choice
/// over its assignment plus `c` picks up with a strict utility gain.
pub fn find_blocking_pairs(matching: &Matching, instance: &MarketInstance) -> Result<Vec<BlockingRecord>> {
    let from = instance.from();
    let suppliers = instance.supplier_index();
    let mut offers: BTreeMap<SupplierId, Vec<&Contract>> = BTreeMap::new();
    for c in &instance.contracts {
        offers.entry(c.supplier_id).or_default().push(c);
    }
    let shards: Vec<(SupplierId, Vec<&Contract>)> = offers.into_iter().collect();
    let held = |o: OrderId| matching.contract_for(o).cloned();
    let per_supplier: Result<Vec<Vec<BlockingRecord>>> = shards
        .par_iter()
        .map(|(sid, cs)| {
            let supplier = suppliers
                .get(sid)
                .ok_or_else(|| Error::AuditConfig(format!("unknown supplier {sid}")))?;
            let assigned = matching.supplier_set(*sid);
            let mut out = Vec::new();
            for c in cs {
                if matching.contains(c) || !order_wants(c, matching.contract_for(c.order_id)) {
                    continue;
                }
                pair_test(supplier, &assigned, c, &held, &mut out, |pool| {
                    choose(supplier, pool, from)
                })?;
            }
            Ok(out)
        })
        .collect();
    let mut records: Vec<BlockingRecord> = per_supplier?.into_iter().flatten().collect();
    sort_records(&mut records);
    Ok(records)
}

fn pair_test<F>(
    supplier: &Supplier,
    assigned: &[&Contract],
    c: &Contract,
    held: &dyn Fn(OrderId) -> Option<Contract>,
    out: &mut Vec<BlockingRecord>,
    choose_fn: F,
) -> Result<()>
where
    F: FnOnce(Vec<&Contract>) -> Result<Vec<Contract>>,
{
    let mut pool: Vec<&Contract> = assigned.to_vec();
    pool.push(c);
    let picked = choose_fn(pool)?;
    let before: f64 = assigned.iter().map(|a| a.u_supplier).sum();
    let after: f64 = picked.iter().map(|a| a.u_supplier).sum();
    if picked.iter().any(|p| p.id == c.id) && after > before + TOLERANCE {
        // The pair record carries only the new contract; the supplier flag and
        // gain still reflect its full reshuffle.
        let mut r = record(RecordKind::Pair, supplier.id, assigned, picked, held);
        r.contracts.retain(|k| k.id == c.id);
        r.order_flags.retain(|o, _| *o == c.order_id);
        r.order_gains.retain(|o, _| *o == c.order_id);
        r.available =
            r.supplier_flag == SupplierFlag::Underutilized && r.order_flags[&c.order_id] == OrderFlag::Unmatched;
        out.push(r);
    }
    Ok(())
}

/// Every bundle of the pruned graph that blocks the matching.
pub fn find_blocking_groups(
    matching: &Matching,
    instance: &MarketInstance,
    bundles: Option<&ExpandedGraph>,
) -> Result<Vec<BlockingRecord>> {
    let graph = bundles.ok_or_else(|| Error::AuditConfig("group audit needs the bundle graph".into()))?;
    if graph.from != instance.from() {
        return Err(Error::AuditConfig(format!(
            "bundle graph starts production at {}, instance at {}",
            graph.from,
            instance.from()
        )));
    }
    let held = |o: OrderId| matching.contract_for(o).cloned();
    let shards: Vec<(&SupplierId, &Vec<usize>)> = graph.by_supplier.iter().collect();
    let mut records: Vec<BlockingRecord> = shards
        .par_iter()
        .flat_map_iter(|(sid, idx)| {
            let assigned = matching.supplier_set(**sid);
            let sigma: f64 = assigned.iter().map(|c| c.u_supplier).sum();
            idx.iter()
                .map(|&b| &graph.bundles[b])
                .filter(|b| group_blocks(b, sigma, matching))
                .map(|b| record(RecordKind::Group, **sid, &assigned, b.contracts.clone(), &held))
                .collect::<Vec<_>>()
        })
        .collect();
    sort_records(&mut records);
    Ok(records)
}

/// Supplier `sid` as seen across two periods: the earlier schedule plus any
/// capacity first listed in the later period.
fn pooled_supplier(early: &Supplier, late: Option<&Supplier>) -> Supplier {
    let mut s = early.clone();
    if let Some(late) = late {
        for (p, h) in &late.capacity {
            s.capacity.entry(*p).or_insert(*h);
        }
    }
    s
}

fn posterior_feasible(supplier: &Supplier, early: &[&Contract], late: &[&Contract], from_t: Period) -> bool {
    let jobs = |cs: &[&Contract]| -> Vec<(Period, f64)> { cs.iter().map(|c| (c.due(), c.production_hours)).collect() };
    let mut all = jobs(early);
    all.extend(jobs(late));
    fits_schedule(&supplier.capacity, &mut jobs(early), from_t)
        && fits_schedule(&supplier.capacity, &mut jobs(late), from_t.next())
        && fits_schedule(&supplier.capacity, &mut all, from_t)
}

/// Feasible bundles over the pooled offers of one supplier, one contract per order.
fn posterior_bundles(
    supplier: &Supplier,
    early: &[&Contract],
    late: &[&Contract],
    from_t: Period,
    cap: usize,
) -> Result<Vec<ContractBundle>> {
    let late_ids: BTreeSet<ContractId> = late.iter().map(|c| c.id).collect();
    let mut by_order: BTreeMap<OrderId, Vec<&Contract>> = BTreeMap::new();
    for c in early.iter().chain(late) {
        by_order.entry(c.order_id).or_default().push(c);
    }
    let options: Vec<Vec<&Contract>> = by_order.into_values().collect();
    let jobs: Vec<(OrderId, f64, Period)> = options
        .iter()
        .map(|cs| {
            let hours = cs.iter().map(|c| c.production_hours).fold(f64::INFINITY, f64::min);
            let due = cs.iter().map(|c| c.due()).max().expect("nonempty");
            (cs[0].order_id, hours, due)
        })
        .collect();
    let k_max = max_bundle_size(supplier, &jobs, from_t)?;
    let mut out = Vec::new();
    let mut pick: Vec<&Contract> = Vec::new();
    fn rec<'a>(
        k: usize,
        options: &[Vec<&'a Contract>],
        pick: &mut Vec<&'a Contract>,
        ctx: (&Supplier, &BTreeSet<ContractId>, Period, usize, usize),
        out: &mut Vec<ContractBundle>,
    ) -> Result<()> {
        let (supplier, late_ids, from_t, k_max, cap) = ctx;
        if !pick.is_empty() {
            if out.len() >= cap {
                return Err(Error::BundleBudget {
                    supplier: supplier.id,
                    cap,
                });
            }
            out.push(ContractBundle::new(
                supplier.id,
                pick.iter().map(|c| (*c).clone()).collect(),
            ));
        }
        if pick.len() == k_max {
            return Ok(());
        }
        for i in k..options.len() {
            for &c in &options[i] {
                pick.push(c);
                let (late, early): (Vec<&Contract>, Vec<&Contract>) =
                    pick.iter().partition(|p| late_ids.contains(&p.id));
                if posterior_feasible(supplier, &early, &late, from_t) {
                    rec(i + 1, options, pick, ctx, out)?;
                }
                pick.pop();
            }
        }
        Ok(())
    }
    rec(
        0,
        &options,
        &mut pick,
        (supplier, &late_ids, from_t, k_max, cap),
        &mut out,
    )?;
    Ok(out)
}

/// Pair and group detection over the pooled participants of periods `t` and
/// `t + 1`, with the two-period choice function.
pub fn posterior_audit(
    matching_t: &Matching,
    matching_t1: &Matching,
    instance_t: &MarketInstance,
    instance_t1: &MarketInstance,
) -> Result<Vec<BlockingRecord>> {
    if instance_t1.current != instance_t.current.next() {
        return Err(Error::AuditConfig(format!(
            "posterior audit needs consecutive periods, got {} and {}",
            instance_t.current, instance_t1.current
        )));
    }
    let mut pooled = matching_t.clone();
    for c in matching_t1.contracts() {
        if pooled.assign(c.clone()).is_some() {
            return Err(Error::AuditConfig(format!(
                "order {} is matched in both periods",
                c.order_id
            )));
        }
    }
    let from_t = instance_t.from();
    let late_suppliers = instance_t1.supplier_index();
    let mut early_offers: BTreeMap<SupplierId, Vec<&Contract>> = BTreeMap::new();
    let mut late_offers: BTreeMap<SupplierId, Vec<&Contract>> = BTreeMap::new();
    for c in &instance_t.contracts {
        early_offers.entry(c.supplier_id).or_default().push(c);
    }
    for c in &instance_t1.contracts {
        late_offers.entry(c.supplier_id).or_default().push(c);
    }
    let held = |o: OrderId| pooled.contract_for(o).cloned();
    let empty = Vec::new();
    let per_supplier: Result<Vec<Vec<BlockingRecord>>> = instance_t
        .suppliers
        .par_iter()
        .map(|s| {
            let supplier = pooled_supplier(s, late_suppliers.get(&s.id).copied());
            let early = early_offers.get(&s.id).unwrap_or(&empty);
            let late = late_offers.get(&s.id).unwrap_or(&empty);
            let assigned_t = matching_t.supplier_set(s.id);
            let assigned_t1 = matching_t1.supplier_set(s.id);
            let mut assigned = assigned_t.clone();
            assigned.extend(assigned_t1.iter().copied());
            let mut out = Vec::new();
            let late_ids: BTreeSet<ContractId> = late.iter().map(|c| c.id).collect();
            for c in early.iter().chain(late) {
                if pooled.contains(c) || !order_wants(c, pooled.contract_for(c.order_id)) {
                    continue;
                }
                pair_test(&supplier, &assigned, c, &held, &mut out, |pool| {
                    let (l, e): (Vec<&Contract>, Vec<&Contract>) =
                        pool.into_iter().partition(|p| late_ids.contains(&p.id));
                    choose_posterior(&supplier, e, l, from_t)
                })?;
            }
            let sigma: f64 = assigned.iter().map(|c| c.u_supplier).sum();
            for b in posterior_bundles(&supplier, early, late, from_t, DEFAULT_BUNDLE_CAP)? {
                if group_blocks(&b, sigma, &pooled) {
                    out.push(record(RecordKind::Group, s.id, &assigned, b.contracts, &held));
                }
            }
            Ok(out)
        })
        .collect();
    let mut records: Vec<BlockingRecord> = per_supplier?.into_iter().flatten().collect();
    sort_records(&mut records);
    Ok(records)
}

/// Keeps the records in which every matched, strictly-preferring participant
/// gains more than `theta` relative to its assignment.
pub fn apply_switching_cost(records: &[BlockingRecord], theta: f64) -> Vec<BlockingRecord> {
    records
        .iter()
        .filter(|r| {
            let orders_ok = r
                .order_flags
                .iter()
                .all(|(o, f)| *f != OrderFlag::StrictlyPrefers || r.order_gains[o].is_none_or(|g| g > theta));
            let supplier_ok =
                r.supplier_flag == SupplierFlag::Underutilized || r.supplier_gain.is_none_or(|g| g > theta);
            orders_ok && supplier_ok
        })
        .cloned()
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilityMetrics {
    pub kind: Option<RecordKind>,
    pub records: usize,
    /// Unique orders in records over all orders.
    pub orders_in: f64,
    pub suppliers_in: f64,
    /// Records per unique participating order.
    pub per_order: f64,
    pub per_supplier: f64,
    pub unmatched_orders: f64,
    pub underutilized_suppliers: f64,
    pub available: f64,
    pub avg_order_gain: f64,
    pub avg_supplier_gain: f64,
    pub avg_size: f64,
    /// Metrics whose denominator was zero and are reported as 0.
    pub degenerate: Vec<String>,
}

impl StabilityMetrics {
    /// `(name, value)` rows for tabular output.
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("records", self.records as f64),
            ("orders_in", self.orders_in),
            ("suppliers_in", self.suppliers_in),
            ("per_order", self.per_order),
            ("per_supplier", self.per_supplier),
            ("unmatched_orders", self.unmatched_orders),
            ("underutilized_suppliers", self.underutilized_suppliers),
            ("available", self.available),
            ("avg_order_gain", self.avg_order_gain),
            ("avg_supplier_gain", self.avg_supplier_gain),
            ("avg_size", self.avg_size),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub pairs: StabilityMetrics,
    pub groups: StabilityMetrics,
}

fn ratio(num: f64, den: f64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        degenerate.push(name.to_string());
        0.0
    }
}

/// Metrics for the records of one kind over a market of the given size.
pub fn kind_metrics(
    records: &[BlockingRecord],
    kind: RecordKind,
    n_orders: usize,
    n_suppliers: usize,
) -> StabilityMetrics {
    let rs: Vec<&BlockingRecord> = records.iter().filter(|r| r.kind == kind).collect();
    let mut orders = BTreeSet::new();
    let mut unmatched = BTreeSet::new();
    let mut suppliers = BTreeSet::new();
    let mut underutilized = BTreeSet::new();
    let mut order_gains = Vec::new();
    let mut supplier_gains = Vec::new();
    for r in &rs {
        suppliers.insert(r.supplier_id);
        if r.supplier_flag == SupplierFlag::Underutilized {
            underutilized.insert(r.supplier_id);
        } else if let Some(g) = r.supplier_gain {
            supplier_gains.push(g);
        }
        for (o, f) in &r.order_flags {
            orders.insert(*o);
            match f {
                OrderFlag::Unmatched => {
                    unmatched.insert(*o);
                }
                OrderFlag::StrictlyPrefers => order_gains.extend(r.order_gains[o]),
                OrderFlag::Indifferent => {}
            }
        }
    }
    let n = rs.len() as f64;
    let mut d = Vec::new();
    let m = StabilityMetrics {
        kind: Some(kind),
        records: rs.len(),
        orders_in: ratio(orders.len() as f64, n_orders as f64, "orders_in", &mut d),
        suppliers_in: ratio(suppliers.len() as f64, n_suppliers as f64, "suppliers_in", &mut d),
        per_order: ratio(n, orders.len() as f64, "per_order", &mut d),
        per_supplier: ratio(n, suppliers.len() as f64, "per_supplier", &mut d),
        unmatched_orders: ratio(unmatched.len() as f64, orders.len() as f64, "unmatched_orders", &mut d),
        underutilized_suppliers: ratio(
            underutilized.len() as f64,
            suppliers.len() as f64,
            "underutilized_suppliers",
            &mut d,
        ),
        available: ratio(rs.iter().filter(|r| r.available).count() as f64, n, "available", &mut d),
        avg_order_gain: ratio(
            order_gains.iter().sum(),
            order_gains.len() as f64,
            "avg_order_gain",
            &mut d,
        ),
        avg_supplier_gain: ratio(
            supplier_gains.iter().sum(),
            supplier_gains.len() as f64,
            "avg_supplier_gain",
            &mut d,
        ),
        avg_size: ratio(rs.iter().map(|r| r.size() as f64).sum(), n, "avg_size", &mut d),
        degenerate: d,
    };
    m
}

pub fn stability_metrics(records: &[BlockingRecord], instance: &MarketInstance) -> MetricTable {
    let (n_o, n_s) = (instance.n_orders(), instance.suppliers.len());
    MetricTable {
        pairs: kind_metrics(records, RecordKind::Pair, n_o, n_s),
        groups: kind_metrics(records, RecordKind::Group, n_o, n_s),
    }
}

/// One CSV row per record.
pub fn records_csv(records: &[BlockingRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "kind",
        "supplier_id",
        "contracts",
        "orders",
        "order_flags",
        "supplier_flag",
        "available",
        "order_gains",
        "supplier_gain",
    ])
    .expect("in-memory write");
    let fmt_gain = |g: &Option<f64>| g.map_or_else(|| "inf".to_string(), |v| format!("{v:.6}"));
    for r in records {
        let join = |it: Vec<String>| it.join(";");
        w.write_record([
            serde_json::to_value(r.kind)
                .expect("enum")
                .as_str()
                .unwrap_or_default()
                .to_string(),
            r.supplier_id.to_string(),
            join(r.contracts.iter().map(|c| c.id.to_string()).collect()),
            join(r.order_flags.keys().map(|o| o.to_string()).collect()),
            join(
                r.order_flags
                    .values()
                    .map(|f| {
                        serde_json::to_value(f)
                            .expect("enum")
                            .as_str()
                            .unwrap_or_default()
                            .to_string()
                    })
                    .collect(),
            ),
            serde_json::to_value(r.supplier_flag)
                .expect("enum")
                .as_str()
                .unwrap_or_default()
                .to_string(),
            r.available.to_string(),
            join(r.order_gains.values().map(fmt_gain).collect()),
            fmt_gain(&r.supplier_gain),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// One CSV row per metric and kind.
pub fn metrics_csv(table: &MetricTable) -> String {
    let mut out = String::from("kind,metric,value\n");
    for (kind, m) in [("pair", &table.pairs), ("group", &table.groups)] {
        for (name, v) in m.rows() {
            out.push_str(&format!("{kind},{name},{v}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(order_gain: Option<f64>, flag: OrderFlag) -> BlockingRecord {
        let c = crate::model::test_support::contract(1, 1, 1.0, 0.5, 3);
        BlockingRecord {
            kind: RecordKind::Pair,
            supplier_id: SupplierId(1),
            contracts: vec![c],
            order_flags: [(OrderId(1), flag)].into(),
            supplier_flag: SupplierFlag::Underutilized,
            available: flag == OrderFlag::Unmatched,
            order_gains: [(OrderId(1), order_gain)].into(),
            supplier_gain: None,
        }
    }

    #[test]
    fn switching_cost_drops_small_gains() {
        let r = rec(Some(0.2), OrderFlag::StrictlyPrefers);
        assert_eq!(apply_switching_cost(std::slice::from_ref(&r), 0.0).len(), 1);
        assert!(apply_switching_cost(std::slice::from_ref(&r), 0.3).is_empty());
        let free = rec(None, OrderFlag::Unmatched);
        assert_eq!(apply_switching_cost(&[free], 0.9).len(), 1);
    }

    #[test]
    fn empty_records_are_degenerate() {
        let m = kind_metrics(&[], RecordKind::Pair, 10, 3);
        assert_eq!(m.orders_in, 0.0);
        assert_eq!(m.avg_size, 0.0);
        assert!(m.degenerate.contains(&"avg_size".to_string()));
        assert!(!m.degenerate.contains(&"orders_in".to_string()));
    }
}
