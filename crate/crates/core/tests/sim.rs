mod common;

use std::collections::BTreeMap;

use common::*;
use maas_core::gen::GenConfig;
use maas_core::model::{CapacitySchedule, Matching, OrderId, Period, TOLERANCE};
use maas_core::mw::match_mw;
use maas_core::sim::{
    deduct_earliest_fit, run, run_anarchy, sweep, sweep_trends, Access, AnarchyConfig, Mechanism, SimConfig, World,
};

fn small(seed: u64) -> SimConfig {
    SimConfig {
        gen: GenConfig {
            n_suppliers: 6,
            lambda_orders: 5.0,
            seed,
            ..GenConfig::default()
        },
        mechanism: Mechanism::As,
        side_by_side: vec![Mechanism::MwasMax],
        n_periods: 6,
        replications: 2,
        switching_cost_sweep: vec![0.0, 0.25, 0.5, 1.0],
        ..SimConfig::default()
    }
}

#[test]
fn every_order_is_accounted_for() {
    for seed in 0..3 {
        let report = run(&small(seed)).unwrap();
        for r in &report.replications {
            assert!(r.conservation.balances(), "{:?}", r.conservation);
            let matched: usize = r.periods.iter().map(|p| p.matched).sum();
            assert_eq!(matched, r.conservation.matched);
            for p in &r.periods {
                assert_eq!(p.pool_orders, p.carried_in + p.arrivals);
                assert_eq!(p.carried_out, p.pool_orders - p.matched);
            }
            for w in r.periods.windows(2) {
                assert_eq!(w[1].carried_in + w[1].expired, w[0].carried_out);
            }
        }
    }
}

#[test]
fn unmatched_orders_stay_until_their_last_period() {
    // No suppliers, so nothing is ever matched.
    let gen = GenConfig {
        n_suppliers: 0,
        lambda_orders: 4.0,
        seed: 3,
        ..GenConfig::default()
    };
    let mut world = World::new(&gen, 0);
    let last = 12u32;
    let mut seen: BTreeMap<OrderId, (Period, Period, Vec<u32>)> = BTreeMap::new();
    for k in 1..=last {
        let (inst, report) = world.open(Period(k)).unwrap();
        for o in inst.orders() {
            seen.entry(o.id).or_insert((o.arrival, o.due, Vec::new())).2.push(k);
        }
        assert_eq!(report.pool, inst.orders().map(|o| o.id).collect::<Vec<_>>());
        world.settle(&inst, &Matching::new());
    }
    assert!(!seen.is_empty());
    for (id, (arrival, due, periods)) in seen {
        let want: Vec<u32> = (arrival.0..due.0.min(last + 1)).collect();
        assert_eq!(periods, want, "order {id}");
    }
    let c = world.conservation();
    assert!(c.balances());
    assert_eq!(c.matched, 0);
}

#[test]
fn order_arriving_at_one_due_at_four_is_pooled_three_times() {
    let gen = GenConfig {
        n_suppliers: 0,
        lambda_orders: 40.0,
        seed: 11,
        ..GenConfig::default()
    };
    let mut world = World::new(&gen, 0);
    let mut pools: Vec<Vec<OrderId>> = Vec::new();
    let mut target = None;
    for k in 1..=5 {
        let (inst, _) = world.open(Period(k)).unwrap();
        if k == 1 {
            target = inst.orders().find(|o| o.due == Period(4)).map(|o| o.id);
        }
        pools.push(inst.orders().map(|o| o.id).collect());
        world.settle(&inst, &Matching::new());
    }
    let id = target.expect("some order due at period 4");
    let present: Vec<bool> = pools.iter().map(|p| p.contains(&id)).collect();
    assert_eq!(present, vec![true, true, true, false, false]);
}

#[test]
fn settling_books_contract_hours_and_keeps_capacity_non_negative() {
    let gen = GenConfig {
        n_suppliers: 5,
        lambda_orders: 8.0,
        seed: 4,
        ..GenConfig::default()
    };
    let mut world = World::new(&gen, 0);
    for k in 1..=8 {
        let (inst, _) = world.open(Period(k)).unwrap();
        let m = match_mw(&inst).unwrap();
        let before: f64 = world.suppliers.iter().flat_map(|s| s.capacity.values()).sum();
        let booked = world.settle(&inst, &m);
        let after: f64 = world.suppliers.iter().flat_map(|s| s.capacity.values()).sum();
        let hours: f64 = m.contracts().map(|c| c.production_hours).sum();
        assert!((booked - hours).abs() < 1e-9);
        assert!((before - after - hours).abs() < 1e-6);
        assert!(world
            .suppliers
            .iter()
            .flat_map(|s| s.capacity.values())
            .all(|h| *h >= -TOLERANCE));
        for c in m.contracts() {
            assert!(!world.carryover.iter().any(|o| o.id == c.order_id));
        }
    }
}

#[test]
fn earliest_fit_books_earliest_due_first() {
    let mut schedule: CapacitySchedule = [(Period(2), 3.0), (Period(3), 3.0)].into_iter().collect();
    let late = contract(1, 1, 1, 4.0, 0.5, 0.5, 3);
    let early = contract(2, 2, 1, 1.0, 0.5, 0.5, 2);
    assert_eq!(deduct_earliest_fit(&mut schedule, &[&late, &early], Period(2)), 5.0);
    assert_eq!(schedule[&Period(2)], 0.0);
    assert!((schedule[&Period(3)] - 1.0).abs() < 1e-12);
}

#[test]
#[should_panic(expected = "overruns")]
fn earliest_fit_refuses_an_overrun() {
    let mut schedule: CapacitySchedule = [(Period(2), 1.0)].into_iter().collect();
    deduct_earliest_fit(&mut schedule, &[&contract(1, 1, 1, 2.0, 0.5, 0.5, 2)], Period(2));
}

#[test]
fn reruns_are_identical_and_seeds_matter() {
    let a = run(&small(5)).unwrap().to_json();
    assert_eq!(a, run(&small(5)).unwrap().to_json());
    assert_ne!(a, run(&small(6)).unwrap().to_json());
}

#[test]
fn no_arrivals_gives_an_empty_market() {
    let mut cfg = small(1);
    cfg.gen.lambda_orders = 0.0;
    let report = run(&cfg).unwrap();
    for r in &report.replications {
        assert_eq!(r.conservation.generated, 0);
        for m in r.metrics.values() {
            assert_eq!(m.utility, 0.0);
            assert!(m.degenerate.iter().any(|d| d == "impact_of_stability"));
        }
    }
    assert_eq!(report.mean(Mechanism::Mw, "utility"), Some(0.0));
}

#[test]
fn mechanisms_keep_their_ordering_every_period() {
    let mut cfg = small(2);
    cfg.side_by_side = vec![Mechanism::MwasMax, Mechanism::MwasMin, Mechanism::MwasCard];
    let report = run(&cfg).unwrap();
    for r in &report.replications {
        for p in &r.periods {
            let u = |m| p.mechanism(m).unwrap().utility;
            assert!(u(Mechanism::Mw) >= u(Mechanism::MwasMax) - 1e-9);
            assert!(u(Mechanism::MwasMax) >= u(Mechanism::MwasMin) - 1e-9);
            assert!(u(Mechanism::Mw) >= u(Mechanism::As) - 1e-9);
            let max = p.mechanism(Mechanism::MwasMax).unwrap();
            let groups = max.stability.as_ref().unwrap().table.groups.records;
            assert_eq!(Some(groups), max.lb);
            if let Some(i) = max.impact {
                assert!(i > 0.0 && i <= 1.0 + 1e-9);
            }
            let mw = p.mechanism(Mechanism::Mw).unwrap();
            for w in mw.switching.windows(2) {
                assert!(w[1].pairs <= w[0].pairs && w[1].groups <= w[0].groups);
            }
        }
    }
}

#[test]
fn restricted_access_starts_without_defections() {
    let mut cfg = small(3);
    cfg.replications = 1;
    cfg.anarchy = Some(AnarchyConfig {
        access: Access::Restricted,
        n_periods: 4,
        divergent_carryover: false,
    });
    let report = run_anarchy(&cfg).unwrap();
    let summary = report.replications[0].anarchy.as_ref().unwrap();
    let first = &summary.periods[0];
    assert_eq!(first.defectors, 0);
    assert_eq!(first.proposals, 0);
    assert!((first.post_utility - first.mw_utility).abs() < 1e-12);
    for p in &summary.periods {
        assert!(p.post_utility <= p.mw_utility + 1e-9);
        assert!(p.defectors <= p.proposals);
    }

    cfg.anarchy.as_mut().unwrap().access = Access::Complete;
    let report = run_anarchy(&cfg).unwrap();
    let summary = report.replications[0].anarchy.as_ref().unwrap();
    assert!(summary.utility_fraction <= 1.0 + 1e-9);
    assert!(summary.as_fraction <= 1.0 + 1e-9);
}

#[test]
fn anarchy_needs_its_section() {
    assert!(run_anarchy(&small(1)).is_err());
}

#[test]
fn one_replication_has_no_interval() {
    let mut cfg = small(4);
    cfg.replications = 1;
    let report = run(&cfg).unwrap();
    assert!(report
        .aggregate
        .iter()
        .all(|r| r.degenerate && r.ci_half_width == 0.0 && r.n == 1));
    let report = run(&small(4)).unwrap();
    assert!(report.aggregate.iter().all(|r| !r.degenerate && r.n == 2));
}

#[test]
fn single_point_sweep() {
    let mut cfg = small(7);
    cfg.replications = 1;
    let reports = sweep(&cfg, &[5.0]).unwrap();
    assert_eq!(reports.len(), 1);
    let trends = sweep_trends(&reports, Mechanism::As);
    assert_eq!(trends.lambdas, vec![5.0]);
    assert_eq!(trends.supplier_rank.len(), 1);
    assert!(trends.supplier_rank_decreasing && trends.order_rank_increasing);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = small(1);
    cfg.n_periods = 0;
    assert!(run(&cfg).is_err());
    let mut cfg = small(1);
    cfg.switching_cost_sweep = vec![-0.1];
    assert!(run(&cfg).is_err());
    assert!(serde_json::from_str::<SimConfig>(r#"{"n_period": 3}"#).is_err());
}
