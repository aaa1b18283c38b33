//! Orders defecting from the MW allocation to suppliers they know, with the
//! accepted defections final and everyone displaced sent back to the pool.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::approx_stable::first_round_offers;
use crate::error::{Error, Result};
use crate::gen::MarketInstance;
use crate::model::{OrderId, Period, SupplierId};

use super::metrics::{mean_ci, system_metrics};
use super::{
    finish, frozen_pool, per_replication, Access, AggregateRow, Mechanism, ReplicationReport, RunReport, SimConfig,
    World,
};

type Field = (Mechanism, &'static str, fn(&AnarchySummary) -> f64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnarchyPeriod {
    pub period: Period,
    pub pool_orders: usize,
    pub mw_utility: f64,
    pub post_utility: f64,
    pub as_utility: f64,
    /// MW utility on the pool AS saw; differs from `mw_utility` only with
    /// divergent carryover.
    pub as_mw_utility: f64,
    pub proposals: usize,
    pub defectors: usize,
    pub displaced: usize,
    pub defection_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnarchySummary {
    pub access: Access,
    pub periods: Vec<AnarchyPeriod>,
    /// Post-defection utility over MW's, summed over periods.
    pub utility_fraction: f64,
    pub as_fraction: f64,
    pub mean_defection_share: f64,
    pub early_defection_share: f64,
    pub late_defection_share: f64,
    pub early_utility_fraction: f64,
    pub late_utility_fraction: f64,
}

/// Window for the early and late means.
const WINDOW: usize = 10;

fn summarize(access: Access, periods: Vec<AnarchyPeriod>) -> AnarchySummary {
    let frac = |ps: &[AnarchyPeriod], f: fn(&AnarchyPeriod) -> (f64, f64)| {
        let (num, den) = ps.iter().map(f).fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        if den > 0.0 {
            num / den
        } else {
            1.0
        }
    };
    let share = |ps: &[AnarchyPeriod]| {
        if ps.is_empty() {
            0.0
        } else {
            ps.iter().map(|p| p.defection_share).sum::<f64>() / ps.len() as f64
        }
    };
    let w = WINDOW.min(periods.len());
    let early = &periods[..w];
    let late = &periods[periods.len() - w..];
    let post = |p: &AnarchyPeriod| (p.post_utility, p.mw_utility);
    AnarchySummary {
        access,
        utility_fraction: frac(&periods, post),
        as_fraction: frac(&periods, |p| (p.as_utility, p.as_mw_utility)),
        mean_defection_share: share(&periods),
        early_defection_share: share(early),
        late_defection_share: share(late),
        early_utility_fraction: frac(early, post),
        late_utility_fraction: frac(late, post),
        periods,
    }
}

/// Suppliers each order of `instance` may approach.
fn accessible(instance: &MarketInstance, access: Access) -> BTreeMap<OrderId, BTreeSet<SupplierId>> {
    let all: BTreeSet<SupplierId> = instance.suppliers.iter().map(|s| s.id).collect();
    instance
        .orders()
        .map(|o| {
            let known = match access {
                Access::Complete => all.clone(),
                Access::Restricted => instance
                    .suppliers
                    .iter()
                    .filter(|s| s.known_clients.contains(&o.client_id))
                    .map(|s| s.id)
                    .collect(),
            };
            (o.id, known)
        })
        .collect()
}

pub fn run_anarchy(config: &SimConfig) -> Result<RunReport> {
    config.validate()?;
    let anarchy = config
        .anarchy
        .clone()
        .ok_or_else(|| Error::Config("anarchy section is missing".into()))?;
    let mechanisms = [Mechanism::Mw, Mechanism::As];
    let replications = per_replication(config.replications, |replication| {
        let mut world = World::new(&config.gen, replication);
        let mut as_world = anarchy
            .divergent_carryover
            .then(|| World::new(&config.gen, replication));
        let mut periods = Vec::new();
        let mut series = Vec::new();
        for k in 1..=anarchy.n_periods {
            let t = Period(k);
            let (instance, mut report) = world.open(t)?;
            let outcomes = frozen_pool(config, &instance, &mechanisms).map_err(|e| e.at_period(t))?;
            let mw = &outcomes.matchings[&Mechanism::Mw];
            let defection = first_round_offers(mw, &accessible(&instance, anarchy.access), &instance)
                .map_err(|e| e.at_period(t))?;
            let (as_utility, as_mw_utility) = match as_world.as_mut() {
                None => (outcomes.matchings[&Mechanism::As].total_utility(), mw.total_utility()),
                Some(w) => {
                    let (inst, _) = w.open(t)?;
                    let o = frozen_pool(config, &inst, &mechanisms).map_err(|e| e.at_period(t))?;
                    w.settle(&inst, &o.matchings[&Mechanism::As]);
                    (
                        o.matchings[&Mechanism::As].total_utility(),
                        o.matchings[&Mechanism::Mw].total_utility(),
                    )
                }
            };
            let post = &defection.matching;
            series.push(AnarchyPeriod {
                period: t,
                pool_orders: report.pool_orders,
                mw_utility: mw.total_utility(),
                post_utility: post.total_utility(),
                as_utility,
                as_mw_utility,
                proposals: defection.proposals,
                defectors: defection.defectors.len(),
                displaced: defection.displaced.len(),
                defection_share: if report.pool_orders > 0 {
                    defection.defectors.len() as f64 / report.pool_orders as f64
                } else {
                    0.0
                },
            });
            report.bundles = outcomes.graph.as_ref().map(|g| g.len());
            report.mechanisms = outcomes.periods;
            report.hours_deducted = world.settle(&instance, post);
            report.matched = post.len();
            report.carried_out = report.pool_orders - post.len();
            periods.push(report);
        }
        Ok(ReplicationReport {
            replication,
            conservation: world.conservation(),
            metrics: system_metrics(&periods, &mechanisms, &config.switching_cost_sweep),
            periods,
            anarchy: Some(summarize(anarchy.access, series)),
        })
    })?;
    let mut report = finish(config, replications);
    report.aggregate.extend(anarchy_rows(&report.replications));
    Ok(report)
}

fn anarchy_rows(replications: &[ReplicationReport]) -> Vec<AggregateRow> {
    let summaries: Vec<&AnarchySummary> = replications.iter().filter_map(|r| r.anarchy.as_ref()).collect();
    let fields: [Field; 7] = [
        (Mechanism::Mw, "anarchy_utility_fraction", |s| s.utility_fraction),
        (Mechanism::Mw, "anarchy_defection_share", |s| s.mean_defection_share),
        (Mechanism::Mw, "anarchy_early_defection_share", |s| {
            s.early_defection_share
        }),
        (Mechanism::Mw, "anarchy_late_defection_share", |s| {
            s.late_defection_share
        }),
        (Mechanism::Mw, "anarchy_early_utility_fraction", |s| {
            s.early_utility_fraction
        }),
        (Mechanism::Mw, "anarchy_late_utility_fraction", |s| {
            s.late_utility_fraction
        }),
        (Mechanism::As, "anarchy_as_fraction", |s| s.as_fraction),
    ];
    fields
        .into_iter()
        .map(|(mechanism, metric, f)| {
            let xs: Vec<f64> = summaries.iter().map(|s| f(s)).collect();
            let (mean, ci_half_width, degenerate) = mean_ci(&xs);
            AggregateRow {
                mechanism,
                metric: metric.to_string(),
                n: xs.len(),
                mean,
                ci_half_width,
                degenerate,
            }
        })
        .collect()
}
