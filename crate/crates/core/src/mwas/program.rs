//! The two-step program written out as one binary program over the bundle
//! graph, solved by the generic solver. Practical only for small graphs; the
//! specialized search in `search` is used by the mechanism and this form serves
//! as an independent cross-check.
//!
//! Variables: `X_b` (bundle accepted) at index `b`, `Y_b` (bundle blocks) at `n + b`.

use crate::error::Result;
use crate::model::TOLERANCE;
use crate::solver::{solve, BinaryProgram, Sense};

use super::{selection_matching, ExpandedGraph, Objective};
use crate::model::Matching;

/// Step-one program: minimize `Σ Y` subject to one bundle per order, one per
/// supplier, and for every bundle `b`: `Y_b + X_b + Σ X_{b'} >= 1`, where `b'`
/// ranges over bundles that neutralize `b` (a bundle at the same supplier worth
/// at least as much to it, or a bundle giving some member a different contract
/// it values at least as much).
pub fn blocking_program(graph: &ExpandedGraph) -> BinaryProgram {
    let n = graph.bundles.len();
    let mut objective = vec![0.0; 2 * n];
    for y in &mut objective[n..] {
        *y = 1.0;
    }
    let mut p = BinaryProgram::new(objective, Sense::Minimize);
    for bundles in graph.by_order.values() {
        if bundles.len() > 1 {
            p.add_constraint(bundles.iter().map(|&b| (b, 1.0)).collect(), 1.0);
        }
    }
    for bundles in graph.by_supplier.values() {
        if bundles.len() > 1 {
            p.add_constraint(bundles.iter().map(|&b| (b, 1.0)).collect(), 1.0);
        }
    }
    for (b, bundle) in graph.bundles.iter().enumerate() {
        if bundle.u_supplier_total <= TOLERANCE {
            continue;
        }
        let mut terms = vec![(n + b, -1.0), (b, -1.0)];
        for &other in &graph.by_supplier[&bundle.supplier_id] {
            if other != b && graph.bundles[other].u_supplier_total >= bundle.u_supplier_total - TOLERANCE {
                terms.push((other, -1.0));
            }
        }
        for c in &bundle.contracts {
            for &other in &graph.by_order[&c.order_id] {
                if other == b {
                    continue;
                }
                let held = graph.bundles[other]
                    .contract_for(c.order_id)
                    .expect("indexed under this order");
                if held.id != c.id && held.u_order >= c.u_order - TOLERANCE {
                    terms.push((other, -1.0));
                }
            }
        }
        p.add_constraint(terms, -1.0);
    }
    p
}

/// Solves both steps with the generic solver; returns `LB` and the matching.
pub fn solve_program(graph: &ExpandedGraph, objective: Objective) -> Result<(usize, Matching)> {
    let n = graph.bundles.len();
    let mut p = blocking_program(graph);
    let step1 = solve(&p)?;
    let lb = step1.objective_value.round() as usize;
    p.add_constraint((n..2 * n).map(|y| (y, 1.0)).collect(), lb as f64);
    let values = objective.bundle_values(graph);
    p.objective = values.into_iter().chain(std::iter::repeat_n(0.0, n)).collect();
    p.sense = Sense::Maximize;
    let step2 = solve(&p)?;
    let chosen: Vec<usize> = step2.chosen.into_iter().filter(|&v| v < n).collect();
    Ok((lb, selection_matching(graph, &chosen)))
}
