//! The multi-period marketplace: arrivals, matching, carryover and capacity
//! bookkeeping, with every mechanism of interest run side by side on the same
//! frozen pool each period.

mod anarchy;
mod metrics;
mod report;
mod world;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use anarchy::{run_anarchy, AnarchyPeriod, AnarchySummary};
pub use metrics::{aggregate, system_metrics, AggregateRow, SystemMetrics};
pub use report::{aggregate_csv, periods_csv};
pub use world::{deduct_earliest_fit, World};

use crate::approx_stable::{match_as, PoolMode};
use crate::audit::{
    apply_switching_cost, find_blocking_groups, find_blocking_pairs, posterior_audit, stability_metrics,
    BlockingRecord, MetricTable, RecordKind,
};
use crate::error::{Error, Result};
use crate::gen::{sha256_hex, GenConfig, MarketInstance};
use crate::model::{ContractId, Matching, OrderId, Period, SupplierId};
use crate::mw::match_mw;
use crate::mwas::{expand_and_prune, match_mwas, ExpandedGraph, MwasOptions, Objective, Strategy, DEFAULT_BUNDLE_CAP};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    Mw,
    MwasMax,
    MwasMin,
    MwasCard,
    As,
}

impl Mechanism {
    pub const ALL: [Mechanism; 5] = [
        Mechanism::Mw,
        Mechanism::MwasMax,
        Mechanism::MwasMin,
        Mechanism::MwasCard,
        Mechanism::As,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Mw => "mw",
            Mechanism::MwasMax => "mwas-max",
            Mechanism::MwasMin => "mwas-min",
            Mechanism::MwasCard => "mwas-card",
            Mechanism::As => "as",
        }
    }

    pub fn objective(self) -> Option<Objective> {
        match self {
            Mechanism::MwasMax => Some(Objective::MaxUtility),
            Mechanism::MwasMin => Some(Objective::MinUtility),
            Mechanism::MwasCard => Some(Objective::MaxCardinality),
            Mechanism::Mw | Mechanism::As => None,
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown mechanism `{s}` (expected mw, mwas-max, mwas-min, mwas-card or as)"
            ))
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Access {
    /// Every supplier is known to every order.
    #[default]
    Complete,
    /// An order knows the suppliers its client has transacted with.
    Restricted,
}

impl FromStr for Access {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(Access::Complete),
            "restricted" => Ok(Access::Restricted),
            _ => Err(Error::Config(format!(
                "unknown access `{s}` (expected complete or restricted)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnarchyConfig {
    pub access: Access,
    pub n_periods: u32,
    /// Run the stable comparator on its own carryover instead of the
    /// post-defection pools.
    pub divergent_carryover: bool,
}

impl Default for AnarchyConfig {
    fn default() -> Self {
        AnarchyConfig {
            access: Access::Complete,
            n_periods: 100,
            divergent_carryover: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub gen: GenConfig,
    /// The mechanism whose matching drives carryover and capacity.
    pub mechanism: Mechanism,
    /// Further mechanisms evaluated on the same frozen pools. MW always runs.
    pub side_by_side: Vec<Mechanism>,
    pub n_periods: u32,
    pub replications: u32,
    /// Transient pair and group audits per period.
    pub audit: bool,
    pub posterior_audit: bool,
    pub switching_cost_sweep: Vec<f64>,
    pub anarchy: Option<AnarchyConfig>,
    pub as_pool_mode: PoolMode,
    pub mwas_strategy: Strategy,
    pub node_limit: u64,
    pub bundle_cap: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            gen: GenConfig::default(),
            mechanism: Mechanism::As,
            side_by_side: Vec::new(),
            n_periods: 15,
            replications: 5,
            audit: true,
            posterior_audit: false,
            switching_cost_sweep: Vec::new(),
            anarchy: None,
            as_pool_mode: PoolMode::Literal,
            mwas_strategy: Strategy::default(),
            node_limit: MwasOptions::default().node_limit,
            bundle_cap: DEFAULT_BUNDLE_CAP,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        if self.n_periods < 1 {
            return Err(Error::Config("n_periods must be >= 1".into()));
        }
        if self.replications < 1 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if let Some(t) = self.switching_cost_sweep.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::Config(format!("switching cost {t} must be finite and >= 0")));
        }
        if self.anarchy.as_ref().is_some_and(|a| a.n_periods < 1) {
            return Err(Error::Config("anarchy.n_periods must be >= 1".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// MW, the driving mechanism, then the side-by-side ones, without repeats.
    pub fn mechanisms(&self) -> Vec<Mechanism> {
        let mut out = vec![Mechanism::Mw];
        for m in std::iter::once(self.mechanism).chain(self.side_by_side.iter().copied()) {
            if !out.contains(&m) {
                out.push(m);
            }
        }
        out
    }

    fn mwas_options(&self) -> MwasOptions {
        MwasOptions {
            bundle_cap: self.bundle_cap,
            node_limit: self.node_limit,
            strategy: self.mwas_strategy,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PeriodStability {
    pub table: MetricTable,
    pub pair_orders: usize,
    pub pair_suppliers: usize,
    pub group_orders: usize,
    pub group_suppliers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchingRow {
    pub theta: f64,
    pub pairs: usize,
    pub groups: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismPeriod {
    pub mechanism: Mechanism,
    pub utility: f64,
    pub order_utility: f64,
    pub supplier_utility: f64,
    pub matched_orders: usize,
    pub matched_suppliers: usize,
    /// `utility` over MW's on the same pool; absent when MW earns nothing.
    pub impact: Option<f64>,
    pub order_rank_sum: f64,
    pub supplier_rank_sum: f64,
    /// Fewest blocking groups any matching of the pool has (MWAS only).
    pub lb: Option<usize>,
    pub stability: Option<PeriodStability>,
    pub switching: Vec<SwitchingRow>,
    pub contracts: Vec<ContractId>,
    pub orders: Vec<OrderId>,
    pub suppliers: Vec<SupplierId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPeriod {
    /// The earlier of the two pooled periods.
    pub period: Period,
    pub table: MetricTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodReport {
    pub period: Period,
    pub arrivals: usize,
    pub carried_in: usize,
    pub expired: usize,
    pub pool_orders: usize,
    /// Suppliers with at least one contract in the pool.
    pub active_suppliers: usize,
    pub pool: Vec<OrderId>,
    pub active: Vec<SupplierId>,
    pub contracts: usize,
    pub bundles: Option<usize>,
    pub matched: usize,
    pub hours_deducted: f64,
    pub carried_out: usize,
    pub mechanisms: Vec<MechanismPeriod>,
    pub posterior: Option<PosteriorPeriod>,
}

impl PeriodReport {
    pub fn mechanism(&self, m: Mechanism) -> Option<&MechanismPeriod> {
        self.mechanisms.iter().find(|p| p.mechanism == m)
    }
}

/// Where every generated order ended up.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub generated: usize,
    pub matched: usize,
    pub expired: usize,
    pub pending: usize,
}

impl Conservation {
    pub fn balances(&self) -> bool {
        self.generated == self.matched + self.expired + self.pending
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub replication: u32,
    pub periods: Vec<PeriodReport>,
    pub metrics: BTreeMap<Mechanism, SystemMetrics>,
    pub conservation: Conservation,
    pub anarchy: Option<AnarchySummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub config_hash: String,
    pub config: SimConfig,
    pub replications: Vec<ReplicationReport>,
    pub aggregate: Vec<AggregateRow>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Mean of `metric` for `mechanism` across replications.
    pub fn mean(&self, mechanism: Mechanism, metric: &str) -> Option<f64> {
        self.aggregate
            .iter()
            .find(|r| r.mechanism == mechanism && r.metric == metric)
            .map(|r| r.mean)
    }
}

/// Worker threads: `MAAS_MATCH_THREADS` when set, else the machine's parallelism.
pub fn worker_threads() -> usize {
    std::env::var("MAAS_MATCH_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs each replication on the capped pool; results come back in index order.
pub(crate) fn per_replication<T, F>(replications: u32, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u32) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..replications).into_par_iter().map(&f).collect())
}

pub fn run(config: &SimConfig) -> Result<RunReport> {
    config.validate()?;
    let replications = per_replication(config.replications, |r| run_replication(config, r))?;
    Ok(finish(config, replications))
}

pub(crate) fn finish(config: &SimConfig, replications: Vec<ReplicationReport>) -> RunReport {
    let aggregate = aggregate(&replications);
    RunReport {
        version: REPORT_FORMAT_VERSION,
        config_hash: config.hash(),
        config: config.clone(),
        replications,
        aggregate,
    }
}

fn run_replication(config: &SimConfig, replication: u32) -> Result<ReplicationReport> {
    let mut world = World::new(&config.gen, replication);
    let mechanisms = config.mechanisms();
    let mut periods = Vec::with_capacity(config.n_periods as usize);
    let mut previous: Option<(MarketInstance, Matching)> = None;
    for k in 1..=config.n_periods {
        let t = Period(k);
        let (instance, mut report) = world.open(t)?;
        let outcomes = frozen_pool(config, &instance, &mechanisms).map_err(|e| e.at_period(t))?;
        report.bundles = outcomes.graph.as_ref().map(ExpandedGraph::len);
        report.mechanisms = outcomes.periods;
        let driving = outcomes.matchings[&config.mechanism].clone();
        if config.posterior_audit {
            if let Some((prev_instance, prev_matching)) = &previous {
                let records =
                    posterior_audit(prev_matching, &driving, prev_instance, &instance).map_err(|e| e.at_period(t))?;
                report.posterior = Some(PosteriorPeriod {
                    period: prev_instance.current,
                    table: stability_metrics(&records, prev_instance),
                });
            }
        }
        report.hours_deducted = world.settle(&instance, &driving);
        report.matched = driving.len();
        report.carried_out = report.pool_orders - driving.len();
        periods.push(report);
        if config.posterior_audit {
            previous = Some((instance, driving));
        }
    }
    let metrics = system_metrics(&periods, &mechanisms, &config.switching_cost_sweep);
    Ok(ReplicationReport {
        replication,
        conservation: world.conservation(),
        periods,
        metrics,
        anarchy: None,
    })
}

pub(crate) struct PoolOutcomes {
    pub graph: Option<ExpandedGraph>,
    pub matchings: BTreeMap<Mechanism, Matching>,
    pub periods: Vec<MechanismPeriod>,
}

/// Runs `mechanisms` on one frozen pool, with audits as configured.
pub(crate) fn frozen_pool(
    config: &SimConfig,
    instance: &MarketInstance,
    mechanisms: &[Mechanism],
) -> Result<PoolOutcomes> {
    let needs_graph = config.audit || mechanisms.iter().any(|m| m.objective().is_some());
    let graph = if needs_graph {
        Some(expand_and_prune(instance, config.bundle_cap)?)
    } else {
        None
    };
    let mw = match_mw(instance)?;
    let as_matching = if mechanisms.iter().any(|m| *m != Mechanism::Mw) {
        Some(match_as(instance, config.as_pool_mode)?.matching)
    } else {
        None
    };
    let mut matchings = BTreeMap::new();
    let mut lbs = BTreeMap::new();
    for &m in mechanisms {
        let matching = match m {
            Mechanism::Mw => mw.clone(),
            Mechanism::As => as_matching.clone().expect("computed for non-MW mechanisms"),
            _ => {
                let objective = m.objective().expect("MWAS variant");
                let graph = graph.as_ref().expect("built for MWAS");
                let mut hints = vec![&mw];
                hints.extend(as_matching.as_ref());
                let out = match_mwas(instance, graph, objective, &hints, &config.mwas_options())?;
                lbs.insert(m, out.lb);
                out.matching
            }
        };
        matchings.insert(m, matching);
    }

    let ranks = Ranks::of(instance);
    let mw_utility = mw.total_utility();
    let mut periods = Vec::with_capacity(mechanisms.len());
    for &m in mechanisms {
        let matching = &matchings[&m];
        let utility = matching.total_utility();
        let (stability, switching) = if config.audit {
            let mut records = find_blocking_pairs(matching, instance)?;
            records.extend(find_blocking_groups(matching, instance, graph.as_ref())?);
            let switching = config
                .switching_cost_sweep
                .iter()
                .map(|&theta| {
                    let kept = apply_switching_cost(&records, theta);
                    SwitchingRow {
                        theta,
                        pairs: kept.iter().filter(|r| r.kind == RecordKind::Pair).count(),
                        groups: kept.iter().filter(|r| r.kind == RecordKind::Group).count(),
                    }
                })
                .collect();
            (Some(period_stability(&records, instance)), switching)
        } else {
            (None, Vec::new())
        };
        periods.push(MechanismPeriod {
            mechanism: m,
            utility,
            order_utility: matching.order_utility(),
            supplier_utility: matching.supplier_utility(),
            matched_orders: matching.len(),
            matched_suppliers: matching.by_supplier().len(),
            impact: (mw_utility > 0.0).then(|| utility / mw_utility),
            order_rank_sum: matching.contracts().map(|c| ranks.order[&c.id]).sum(),
            supplier_rank_sum: matching.contracts().map(|c| ranks.supplier[&c.id]).sum(),
            lb: lbs.get(&m).copied(),
            stability,
            switching,
            contracts: matching.contracts().map(|c| c.id).collect(),
            orders: matching.contracts().map(|c| c.order_id).collect(),
            suppliers: matching.by_supplier().into_keys().collect(),
        });
    }
    Ok(PoolOutcomes {
        graph,
        matchings,
        periods,
    })
}

fn period_stability(records: &[BlockingRecord], instance: &MarketInstance) -> PeriodStability {
    let participants = |kind: RecordKind| {
        let mut orders: BTreeSet<OrderId> = BTreeSet::new();
        let mut suppliers: BTreeSet<SupplierId> = BTreeSet::new();
        for r in records.iter().filter(|r| r.kind == kind) {
            suppliers.insert(r.supplier_id);
            orders.extend(r.order_flags.keys().copied());
        }
        (orders.len(), suppliers.len())
    };
    let (pair_orders, pair_suppliers) = participants(RecordKind::Pair);
    let (group_orders, group_suppliers) = participants(RecordKind::Group);
    PeriodStability {
        table: stability_metrics(records, instance),
        pair_orders,
        pair_suppliers,
        group_orders,
        group_suppliers,
    }
}

/// Percentile ranks of every contract: `(1 + strictly better) / list length`,
/// over the order's contracts by order utility and over the supplier's offers
/// by supplier utility.
pub(crate) struct Ranks {
    pub order: BTreeMap<ContractId, f64>,
    pub supplier: BTreeMap<ContractId, f64>,
}

impl Ranks {
    pub fn of(instance: &MarketInstance) -> Ranks {
        let mut by_order: BTreeMap<OrderId, Vec<(ContractId, f64)>> = BTreeMap::new();
        let mut by_supplier: BTreeMap<SupplierId, Vec<(ContractId, f64)>> = BTreeMap::new();
        for c in &instance.contracts {
            by_order.entry(c.order_id).or_default().push((c.id, c.u_order));
            by_supplier.entry(c.supplier_id).or_default().push((c.id, c.u_supplier));
        }
        fn rank<'a>(lists: impl Iterator<Item = &'a Vec<(ContractId, f64)>>) -> BTreeMap<ContractId, f64> {
            let mut out = BTreeMap::new();
            for list in lists {
                for &(id, u) in list {
                    let better = list.iter().filter(|(_, v)| *v > u + crate::model::TOLERANCE).count();
                    out.insert(id, (1 + better) as f64 / list.len() as f64);
                }
            }
            out
        }
        Ranks {
            order: rank(by_order.values()),
            supplier: rank(by_supplier.values()),
        }
    }
}

/// One full run per arrival rate.
pub fn sweep(config: &SimConfig, lambdas: &[f64]) -> Result<Vec<(f64, RunReport)>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let mut c = config.clone();
            c.gen.lambda_orders = lambda;
            run(&c).map(|r| (lambda, r))
        })
        .collect()
}

/// Direction of the rank and impact trends over a sweep, for `mechanism`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTrends {
    pub mechanism: Mechanism,
    pub lambdas: Vec<f64>,
    pub supplier_rank: Vec<f64>,
    pub order_rank: Vec<f64>,
    pub impact: Vec<f64>,
    pub supplier_rank_decreasing: bool,
    pub order_rank_increasing: bool,
    pub impact_weakly_decreasing: bool,
}

pub fn sweep_trends(reports: &[(f64, RunReport)], mechanism: Mechanism) -> SweepTrends {
    let series = |metric: &str| -> Vec<f64> {
        reports
            .iter()
            .map(|(_, r)| r.mean(mechanism, metric).unwrap_or(f64::NAN))
            .collect()
    };
    let supplier_rank = series("avg_supplier_rank");
    let order_rank = series("avg_order_rank");
    let impact = series("impact_of_stability");
    let strictly = |v: &[f64], up: bool| v.windows(2).all(|w| if up { w[1] > w[0] } else { w[1] < w[0] });
    SweepTrends {
        mechanism,
        lambdas: reports.iter().map(|(l, _)| *l).collect(),
        supplier_rank_decreasing: strictly(&supplier_rank, false),
        order_rank_increasing: strictly(&order_rank, true),
        impact_weakly_decreasing: impact.windows(2).all(|w| w[1] <= w[0] + crate::model::TOLERANCE),
        supplier_rank,
        order_rank,
        impact,
    }
}
