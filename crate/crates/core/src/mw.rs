//! The socially optimal assignment: maximize total utility over all contracts.

use std::collections::BTreeMap;

use crate::choice::{add_capacity_rows, add_order_rows};
use crate::error::{Error, Result};
use crate::gen::MarketInstance;
use crate::model::{Contract, Matching, SupplierId};
use crate::solver::{solve_with, BinaryProgram, SolverOptions};

pub fn match_mw(instance: &MarketInstance) -> Result<Matching> {
    match_mw_with(instance, &SolverOptions::default())
}

pub fn match_mw_with(instance: &MarketInstance, options: &SolverOptions) -> Result<Matching> {
    let (program, offers) = assignment_program(instance, |c| c.u_total)?;
    let selection = solve_with(&program, options)?;
    Ok(Matching::from_contracts(
        selection.chosen.into_iter().map(|i| offers[i].clone()),
    ))
}

/// One variable per contract (sorted by id) with the order and capacity rows
/// of a feasible matching.
pub(crate) fn assignment_program<F>(instance: &MarketInstance, value: F) -> Result<(BinaryProgram, Vec<&Contract>)>
where
    F: Fn(&Contract) -> f64,
{
    let mut offers: Vec<&Contract> = instance.contracts.iter().collect();
    offers.sort_by_key(|c| c.id);
    let suppliers = instance.supplier_index();
    let mut by_supplier: BTreeMap<SupplierId, Vec<usize>> = BTreeMap::new();
    for (i, c) in offers.iter().enumerate() {
        by_supplier.entry(c.supplier_id).or_default().push(i);
    }
    let mut program = BinaryProgram::maximize(offers.iter().map(|c| value(c)).collect());
    add_order_rows(&mut program, &offers);
    for (sid, members) in &by_supplier {
        let supplier = suppliers
            .get(sid)
            .ok_or_else(|| Error::Config(format!("contract references unknown supplier {sid}")))?;
        add_capacity_rows(&mut program, supplier, &offers, members, instance.from());
    }
    Ok((program, offers))
}
