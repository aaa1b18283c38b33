mod common;

use common::*;
use maas_core::choice::{choose, choose_posterior, is_substitutable_violation};
use maas_core::model::{Contract, Period};
use proptest::prelude::*;

const FROM: Period = Period(2);

/// Four offers from distinct orders, all due at period 2, with 9 h listed.
fn four() -> (maas_core::model::Supplier, Vec<Contract>) {
    let s = supplier(1, &[(2, 9.0)]);
    let offers = vec![
        contract(1, 1, 1, 8.1, 0.5, 0.95, 2),
        contract(2, 2, 1, 4.6, 0.5, 0.80, 2),
        contract(3, 3, 1, 4.1, 0.5, 0.72, 2),
        contract(4, 4, 1, 4.4, 0.5, 0.78, 2),
    ];
    (s, offers)
}

fn ids(cs: &[Contract]) -> Vec<u64> {
    cs.iter().map(|c| c.id.0).collect()
}

#[test]
fn pair_keeps_the_long_job() {
    let (s, offers) = four();
    assert_eq!(ids(&choose(&s, &offers[..2], FROM).unwrap()), vec![1]);
}

#[test]
fn second_offer_is_chosen_from_every_larger_set() {
    let (s, offers) = four();
    for mask in 0u32..16 {
        let set: Vec<Contract> = (0..4)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| offers[i].clone())
            .collect();
        if set.len() >= 3 && set.iter().any(|c| c.id.0 == 2) {
            let picked = choose(&s, &set, FROM).unwrap();
            assert!(ids(&picked).contains(&2), "mask {mask:04b}: {:?}", ids(&picked));
        }
    }
    let all = choose(&s, &offers, FROM).unwrap();
    assert_eq!(ids(&all), vec![2, 4]);
    let refs: Vec<&Contract> = offers.iter().collect();
    assert!((best_choice_value(&s, &refs, FROM) - 1.58).abs() < 1e-12);
    assert!((all.iter().map(|c| c.u_supplier).sum::<f64>() - 1.58).abs() < 1e-12);
}

#[test]
fn four_offers_violate_substitutes() {
    let (s, offers) = four();
    assert!(is_substitutable_violation(&s, &offers[..2], &offers, FROM).unwrap());
    assert!(!is_substitutable_violation(&s, &offers, &offers, FROM).unwrap());
    assert!(choose(&s, &[], FROM).unwrap().is_empty());
}

fn offers(unit: bool) -> impl Strategy<Value = (Vec<f64>, Vec<Contract>)> {
    let cap = prop::collection::vec(0u32..=6, 3);
    let offer = (0u64..6, prop_oneof![Just(1.0), 0.5f64..4.0], 0.05f64..1.0, 2u32..=4);
    (cap, prop::collection::vec(offer, 0..=8)).prop_map(move |(cap, raw)| {
        let caps = cap.into_iter().map(f64::from).collect();
        let cs = raw
            .into_iter()
            .enumerate()
            .map(|(i, (o, h, u, due))| contract(i as u64 + 1, o, 1, if unit { 1.0 } else { h }, 0.5, u, due))
            .collect();
        (caps, cs)
    })
}

fn with_capacity(caps: &[f64]) -> maas_core::model::Supplier {
    let schedule: Vec<(u32, f64)> = caps.iter().enumerate().map(|(i, h)| (i as u32 + 2, *h)).collect();
    supplier(1, &schedule)
}

proptest! {
    #[test]
    fn choice_is_an_optimal_feasible_subset((caps, cs) in offers(false)) {
        let s = with_capacity(&caps);
        let picked = choose(&s, &cs, FROM).unwrap();
        let refs: Vec<&Contract> = picked.iter().collect();
        let all: Vec<&Contract> = cs.iter().collect();
        prop_assert!(schedulable(&s, &refs, FROM));
        let orders: std::collections::BTreeSet<_> = picked.iter().map(|c| c.order_id).collect();
        prop_assert_eq!(orders.len(), picked.len());
        prop_assert!((supplier_value(&refs) - best_choice_value(&s, &all, FROM)).abs() < 1e-9);
    }

    #[test]
    fn unit_hours_are_substitutable((caps, cs) in offers(true), mask in 0u32..256) {
        // Distinct orders, so each contract's feasibility depends only on slot counts.
        let cs: Vec<Contract> = cs.into_iter().enumerate().map(|(i, mut c)| { c.order_id.0 = i as u64; c }).collect();
        let s = with_capacity(&caps);
        let smaller: Vec<Contract> = cs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, c)| c.clone()).collect();
        prop_assert!(!is_substitutable_violation(&s, &smaller, &cs, FROM).unwrap());
    }

    #[test]
    fn posterior_choice_is_optimal_under_three_families((caps, cs) in offers(false), split in 0usize..8) {
        let s = with_capacity(&caps);
        let split = split.min(cs.len());
        let (early, late) = cs.split_at(split);
        let picked = choose_posterior(&s, early, late, FROM).unwrap();
        let allowed = |set: &[&Contract]| {
            let e: Vec<&Contract> = set.iter().copied().filter(|c| c.id.0 as usize <= split).collect();
            let l: Vec<&Contract> = set.iter().copied().filter(|c| c.id.0 as usize > split).collect();
            schedulable(&s, &e, FROM) && schedulable(&s, &l, FROM.next()) && schedulable(&s, set, FROM)
        };
        let refs: Vec<&Contract> = picked.iter().collect();
        prop_assert!(allowed(&refs));
        let all: Vec<&Contract> = cs.iter().collect();
        let best = feasible_subsets(&s, &all, FROM)
            .into_iter()
            .filter(|set| allowed(set))
            .map(|set| supplier_value(&set))
            .fold(0.0, f64::max);
        prop_assert!((supplier_value(&refs) - best).abs() < 1e-9);
    }
}
