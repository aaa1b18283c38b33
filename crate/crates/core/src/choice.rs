//! The supplier's exact choice over offered contracts.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{cumulative_capacity, Contract, OrderId, Period, Supplier};
use crate::solver::{solve, BinaryProgram};

fn check_routing(supplier: &Supplier, offers: &[&Contract]) -> Result<()> {
    match offers.iter().find(|c| c.supplier_id != supplier.id) {
        Some(c) => Err(Error::ContractRouting {
            contract: c.id,
            expected: supplier.id,
            actual: c.supplier_id,
        }),
        None => Ok(()),
    }
}

/// Adds `Σ p_i x_i <= H(from..=q)` for every due period `q` among `members`.
pub(crate) fn add_capacity_rows(
    program: &mut BinaryProgram,
    supplier: &Supplier,
    offers: &[&Contract],
    members: &[usize],
    from: Period,
) {
    let mut by_due: BTreeMap<Period, Vec<usize>> = BTreeMap::new();
    for &i in members {
        by_due.entry(offers[i].due()).or_default().push(i);
    }
    let mut prefix: Vec<(usize, f64)> = Vec::new();
    for (due, vars) in by_due {
        prefix.extend(vars.iter().map(|&i| (i, offers[i].production_hours)));
        program.add_constraint(prefix.clone(), cumulative_capacity(supplier, from, due));
    }
}

pub(crate) fn add_order_rows(program: &mut BinaryProgram, offers: &[&Contract]) {
    let mut by_order: BTreeMap<OrderId, Vec<(usize, f64)>> = BTreeMap::new();
    for (i, c) in offers.iter().enumerate() {
        by_order.entry(c.order_id).or_default().push((i, 1.0));
    }
    for (_, terms) in by_order {
        if terms.len() > 1 {
            program.add_constraint(terms, 1.0);
        }
    }
}

fn sorted_refs<'a>(offers: impl IntoIterator<Item = &'a Contract>) -> Vec<&'a Contract> {
    let mut refs: Vec<&Contract> = offers.into_iter().collect();
    refs.sort_by_key(|c| c.id);
    refs
}

/// Indices into `offers` of the supplier's utility-maximizing feasible subset.
pub fn choose_indices(supplier: &Supplier, offers: &[&Contract], from: Period) -> Result<Vec<usize>> {
    check_routing(supplier, offers)?;
    if offers.is_empty() {
        return Ok(Vec::new());
    }
    let mut program = BinaryProgram::maximize(offers.iter().map(|c| c.u_supplier).collect());
    add_order_rows(&mut program, offers);
    let all: Vec<usize> = (0..offers.len()).collect();
    add_capacity_rows(&mut program, supplier, offers, &all, from);
    Ok(solve(&program)?.chosen)
}

/// The chosen subset of `offers`, sorted by contract id. Production starts at `from`.
pub fn choose<'a, I>(supplier: &Supplier, offers: I, from: Period) -> Result<Vec<Contract>>
where
    I: IntoIterator<Item = &'a Contract>,
{
    let refs = sorted_refs(offers);
    Ok(choose_indices(supplier, &refs, from)?
        .into_iter()
        .map(|i| refs[i].clone())
        .collect())
}

/// Two-period choice: offers made at `t` produce from `from_t`, offers made at
/// `t+1` produce from `from_t + 1`, and the pooled set shares the schedule from `from_t`.
pub fn choose_posterior<'a, I, J>(
    supplier: &Supplier,
    offers_t: I,
    offers_t1: J,
    from_t: Period,
) -> Result<Vec<Contract>>
where
    I: IntoIterator<Item = &'a Contract>,
    J: IntoIterator<Item = &'a Contract>,
{
    let early = sorted_refs(offers_t);
    let late = sorted_refs(offers_t1);
    let mut offers = early.clone();
    offers.extend(late.iter().copied());
    check_routing(supplier, &offers)?;
    if offers.is_empty() {
        return Ok(Vec::new());
    }
    let mut program = BinaryProgram::maximize(offers.iter().map(|c| c.u_supplier).collect());
    add_order_rows(&mut program, &offers);
    let early_idx: Vec<usize> = (0..early.len()).collect();
    let late_idx: Vec<usize> = (early.len()..offers.len()).collect();
    let all: Vec<usize> = (0..offers.len()).collect();
    add_capacity_rows(&mut program, supplier, &offers, &early_idx, from_t);
    add_capacity_rows(&mut program, supplier, &offers, &late_idx, from_t.next());
    add_capacity_rows(&mut program, supplier, &offers, &all, from_t);
    let mut chosen: Vec<Contract> = solve(&program)?.chosen.into_iter().map(|i| offers[i].clone()).collect();
    chosen.sort_by_key(|c| c.id);
    Ok(chosen)
}

/// True when a contract rejected from `smaller` is chosen from `larger`.
pub fn is_substitutable_violation(
    supplier: &Supplier,
    smaller: &[Contract],
    larger: &[Contract],
    from: Period,
) -> Result<bool> {
    let kept_small = choose(supplier, smaller, from)?;
    let kept_large = choose(supplier, larger, from)?;
    Ok(smaller
        .iter()
        .any(|c| !kept_small.iter().any(|k| k.id == c.id) && kept_large.iter().any(|k| k.id == c.id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::{contract, supplier_with};
    use crate::model::{ContractId, SupplierId};

    fn ids(set: &[Contract]) -> Vec<u64> {
        set.iter().map(|c| c.id.0).collect()
    }

    fn four_offers() -> Vec<Contract> {
        vec![
            contract(1, 1, 8.1, 0.95, 2),
            contract(2, 2, 4.6, 0.80, 2),
            contract(3, 3, 4.1, 0.72, 2),
            contract(4, 4, 4.4, 0.78, 2),
        ]
    }

    #[test]
    fn smaller_set_rejects_second_contract() {
        let s = supplier_with(&[(1, 9.0)]);
        let offers = four_offers();
        assert_eq!(ids(&choose(&s, &offers[..2], Period(1)).unwrap()), vec![1]);
    }

    #[test]
    fn full_set_prefers_two_small_jobs() {
        let s = supplier_with(&[(1, 9.0)]);
        let chosen = choose(&s, &four_offers(), Period(1)).unwrap();
        assert_eq!(ids(&chosen), vec![2, 4]);
        let total: f64 = chosen.iter().map(|c| c.u_supplier).sum();
        assert!((total - 1.58).abs() < 1e-12);
    }

    #[test]
    fn empty_offers() {
        let s = supplier_with(&[(1, 9.0)]);
        assert!(choose(&s, &[], Period(1)).unwrap().is_empty());
    }

    #[test]
    fn one_contract_per_order() {
        let s = supplier_with(&[(1, 20.0)]);
        let a = contract(1, 7, 2.0, 0.6, 2);
        let b = contract(2, 7, 2.0, 0.7, 2);
        assert_eq!(ids(&choose(&s, [&a, &b], Period(1)).unwrap()), vec![2]);
    }

    #[test]
    fn routing_error() {
        let s = supplier_with(&[(1, 9.0)]);
        let mut c = contract(1, 1, 1.0, 0.5, 2);
        c.supplier_id = SupplierId(9);
        match choose(&s, [&c], Period(1)) {
            Err(Error::ContractRouting { contract, .. }) => assert_eq!(contract, ContractId(1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn substitutes_violation_on_four_offers() {
        let s = supplier_with(&[(1, 9.0)]);
        let offers = four_offers();
        assert!(is_substitutable_violation(&s, &offers[..2], &offers, Period(1)).unwrap());
        assert!(!is_substitutable_violation(&s, &offers, &offers, Period(1)).unwrap());
    }

    #[test]
    fn posterior_without_late_offers_matches_transient() {
        let s = supplier_with(&[(1, 9.0), (2, 3.0)]);
        let offers = four_offers();
        let a = choose(&s, &offers, Period(1)).unwrap();
        let b = choose_posterior(&s, &offers, std::iter::empty(), Period(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn posterior_checks_all_three_families() {
        // 6 h listed in each of the two first production periods.
        let s = supplier_with(&[(1, 6.0), (2, 6.0)]);
        let early = contract(1, 1, 6.0, 0.5, 2);
        let late = contract(2, 2, 6.0, 0.4, 2);
        let both = choose_posterior(&s, [&early], [&late], Period(1)).unwrap();
        assert_eq!(ids(&both), vec![1, 2]);

        // The late offer cannot use period-1 hours on its own family.
        let big_late = contract(3, 3, 7.0, 0.9, 2);
        let picked = choose_posterior(&s, [&early], [&big_late], Period(1)).unwrap();
        assert_eq!(ids(&picked), vec![1]);

        // Pooled demand over the two periods exceeds 12 h: the weaker offer goes.
        let early_big = contract(4, 4, 7.0, 0.3, 2);
        let picked = choose_posterior(&s, [&early_big], [&late], Period(1)).unwrap();
        assert_eq!(ids(&picked), vec![2]);
    }
}
