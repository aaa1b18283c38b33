//! Run-level system metrics per mechanism and their aggregation across
//! replications.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::model::{OrderId, SupplierId};

use super::{Mechanism, PeriodReport, ReplicationReport};

/// Totals over the periods of one run. Matched shares count distinct
/// participants over the run; the other shares are ratios of per-period sums.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SystemMetrics {
    pub periods: usize,
    pub utility: f64,
    pub mw_utility: f64,
    /// Total utility over MW's total on the same pools.
    pub impact_of_stability: f64,
    pub avg_order_utility: f64,
    /// Supplier utility per matched order.
    pub avg_supplier_utility: f64,
    /// Distinct orders matched at least once over distinct orders pooled.
    pub matched_orders: f64,
    /// Distinct suppliers matched at least once over those that ever held a
    /// contract.
    pub matched_suppliers: f64,
    pub avg_order_rank: f64,
    pub avg_supplier_rank: f64,
    pub blocking_pairs: usize,
    pub blocking_groups: usize,
    /// Orders and suppliers in some blocking pair or group over those present.
    pub pair_orders_in: f64,
    pub pair_suppliers_in: f64,
    pub group_orders_in: f64,
    pub group_suppliers_in: f64,
    /// Retained `(theta, pairs, groups)` summed over periods.
    pub switching: Vec<(f64, usize, usize)>,
    /// Smallest swept switching cost at which nothing blocks.
    pub vanishing_theta: Option<f64>,
    pub degenerate: Vec<String>,
}

impl SystemMetrics {
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("utility", self.utility),
            ("impact_of_stability", self.impact_of_stability),
            ("avg_order_utility", self.avg_order_utility),
            ("avg_supplier_utility", self.avg_supplier_utility),
            ("matched_orders", self.matched_orders),
            ("matched_suppliers", self.matched_suppliers),
            ("avg_order_rank", self.avg_order_rank),
            ("avg_supplier_rank", self.avg_supplier_rank),
            ("blocking_pairs", self.blocking_pairs as f64),
            ("blocking_groups", self.blocking_groups as f64),
            ("pair_orders_in", self.pair_orders_in),
            ("pair_suppliers_in", self.pair_suppliers_in),
            ("group_orders_in", self.group_orders_in),
            ("group_suppliers_in", self.group_suppliers_in),
        ]
    }
}

fn ratio(num: f64, den: f64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        degenerate.push(name.to_string());
        0.0
    }
}

pub fn system_metrics(
    periods: &[PeriodReport],
    mechanisms: &[Mechanism],
    thetas: &[f64],
) -> BTreeMap<Mechanism, SystemMetrics> {
    let pool_orders: f64 = periods.iter().map(|p| p.pool_orders as f64).sum();
    let active_suppliers: f64 = periods.iter().map(|p| p.active_suppliers as f64).sum();
    let pooled: BTreeSet<OrderId> = periods.iter().flat_map(|p| p.pool.iter().copied()).collect();
    let active: BTreeSet<SupplierId> = periods.iter().flat_map(|p| p.active.iter().copied()).collect();
    let mw_utility: f64 = periods
        .iter()
        .filter_map(|p| p.mechanism(Mechanism::Mw))
        .map(|m| m.utility)
        .sum();
    let mut out = BTreeMap::new();
    for &mech in mechanisms {
        let rows: Vec<_> = periods.iter().filter_map(|p| p.mechanism(mech)).collect();
        let mut d = Vec::new();
        let sum = |f: &dyn Fn(&super::MechanismPeriod) -> f64| -> f64 { rows.iter().map(|r| f(r)).sum() };
        let matched = sum(&|r| r.matched_orders as f64);
        let utility = sum(&|r| r.utility);
        let audited: Vec<_> = rows.iter().filter_map(|r| r.stability.as_ref()).collect();
        let stab = |f: &dyn Fn(&super::PeriodStability) -> usize| -> f64 { audited.iter().map(|s| f(s) as f64).sum() };
        let switching: Vec<(f64, usize, usize)> = thetas
            .iter()
            .enumerate()
            .map(|(k, &theta)| {
                let (p, g) = rows
                    .iter()
                    .filter_map(|r| r.switching.get(k))
                    .fold((0, 0), |acc, s| (acc.0 + s.pairs, acc.1 + s.groups));
                (theta, p, g)
            })
            .collect();
        let orders_hit: BTreeSet<OrderId> = rows.iter().flat_map(|r| r.orders.iter().copied()).collect();
        let suppliers_hit: BTreeSet<SupplierId> = rows.iter().flat_map(|r| r.suppliers.iter().copied()).collect();
        let vanishing_theta = switching.iter().find(|s| s.1 + s.2 == 0).map(|s| s.0);
        let m = SystemMetrics {
            periods: rows.len(),
            utility,
            mw_utility,
            impact_of_stability: ratio(utility, mw_utility, "impact_of_stability", &mut d),
            avg_order_utility: ratio(sum(&|r| r.order_utility), matched, "avg_order_utility", &mut d),
            avg_supplier_utility: ratio(sum(&|r| r.supplier_utility), matched, "avg_supplier_utility", &mut d),
            matched_orders: ratio(orders_hit.len() as f64, pooled.len() as f64, "matched_orders", &mut d),
            matched_suppliers: ratio(
                suppliers_hit.len() as f64,
                active.len() as f64,
                "matched_suppliers",
                &mut d,
            ),
            avg_order_rank: ratio(sum(&|r| r.order_rank_sum), matched, "avg_order_rank", &mut d),
            avg_supplier_rank: ratio(sum(&|r| r.supplier_rank_sum), matched, "avg_supplier_rank", &mut d),
            blocking_pairs: audited.iter().map(|s| s.table.pairs.records).sum(),
            blocking_groups: audited.iter().map(|s| s.table.groups.records).sum(),
            pair_orders_in: ratio(stab(&|s| s.pair_orders), pool_orders, "pair_orders_in", &mut d),
            pair_suppliers_in: ratio(
                stab(&|s| s.pair_suppliers),
                active_suppliers,
                "pair_suppliers_in",
                &mut d,
            ),
            group_orders_in: ratio(stab(&|s| s.group_orders), pool_orders, "group_orders_in", &mut d),
            group_suppliers_in: ratio(
                stab(&|s| s.group_suppliers),
                active_suppliers,
                "group_suppliers_in",
                &mut d,
            ),
            switching,
            vanishing_theta,
            degenerate: d,
        };
        out.insert(mech, m);
    }
    out
}

/// Mean and 95% confidence half-width of one metric across replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mechanism: Mechanism,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub ci_half_width: f64,
    /// Fewer than two replications: no interval.
    pub degenerate: bool,
}

/// `mean ± t(0.975, n-1) s / sqrt(n)` per mechanism and metric.
pub fn aggregate(replications: &[ReplicationReport]) -> Vec<AggregateRow> {
    let mut values: BTreeMap<(Mechanism, &'static str), Vec<f64>> = BTreeMap::new();
    let mut order: Vec<(Mechanism, &'static str)> = Vec::new();
    for r in replications {
        for (mech, m) in &r.metrics {
            for (name, v) in m.rows() {
                let key = (*mech, name);
                if !values.contains_key(&key) {
                    order.push(key);
                }
                values.entry(key).or_default().push(v);
            }
        }
    }
    order
        .into_iter()
        .map(|key| {
            let xs = &values[&key];
            let (mean, half, degenerate) = mean_ci(xs);
            AggregateRow {
                mechanism: key.0,
                metric: key.1.to_string(),
                n: xs.len(),
                mean,
                ci_half_width: half,
                degenerate,
            }
        })
        .collect()
}

pub(crate) fn mean_ci(xs: &[f64]) -> (f64, f64, bool) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0, true);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt(), false)
}
