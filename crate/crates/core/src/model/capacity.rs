use std::collections::BTreeMap;

use super::{Contract, Order, Period, Supplier, TOLERANCE};

/// Listed machine hours per period. Unlisted periods contribute nothing.
pub type CapacitySchedule = BTreeMap<Period, f64>;

/// Hours listed in `from..=upto`.
pub fn cumulative_capacity(supplier: &Supplier, from: Period, upto: Period) -> f64 {
    if from > upto {
        return 0.0;
    }
    supplier.capacity.range(from..=upto).map(|(_, h)| *h).sum()
}

/// Checks jobs `(due, hours)` against the schedule: for every due period `q`,
/// the hours due by `q` must fit the capacity listed in `from..=q`.
pub fn fits_schedule(schedule: &CapacitySchedule, jobs: &mut [(Period, f64)], from: Period) -> bool {
    jobs.sort_by_key(|a| a.0);
    let mut demand = 0.0;
    let mut supply = 0.0;
    let mut cursor = from;
    let mut i = 0;
    while i < jobs.len() {
        let due = jobs[i].0;
        while i < jobs.len() && jobs[i].0 == due {
            demand += jobs[i].1;
            i += 1;
        }
        if due >= cursor {
            supply += schedule.range(cursor..=due).map(|(_, h)| *h).sum::<f64>();
            cursor = due.next();
        }
        if demand > supply + TOLERANCE {
            return false;
        }
    }
    true
}

/// Capacity feasibility of a set of contracts for one supplier, production starting at `from`.
pub fn bundle_feasible<'a, I>(supplier: &Supplier, contracts: I, from: Period) -> bool
where
    I: IntoIterator<Item = &'a Contract>,
{
    let mut jobs: Vec<(Period, f64)> = contracts.into_iter().map(|c| (c.due(), c.production_hours)).collect();
    fits_schedule(&supplier.capacity, &mut jobs, from)
}

/// Process, material and resolution compatibility. Capacity is checked per bundle.
pub fn is_capability_feasible(order: &Order, supplier: &Supplier) -> bool {
    let [lo, hi] = supplier.resolution_range;
    order.process == supplier.process
        && supplier.materials.contains(&order.material)
        && order.resolution_microns >= lo - TOLERANCE
        && order.resolution_microns <= hi + TOLERANCE
}

/// Machine-dependent production time, shared by every contract of the pair.
pub fn production_hours(order: &Order, supplier: &Supplier) -> f64 {
    order.base_production_hours * supplier.speed_factor
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::{contract, supplier_with};

    #[test]
    fn cumulative_sums_listed_periods() {
        let s = supplier_with(&[(1, 6.0), (2, 6.0), (3, 6.0), (4, 6.0)]);
        assert_eq!(cumulative_capacity(&s, Period(1), Period(2)), 12.0);
        assert_eq!(cumulative_capacity(&s, Period(1), Period(4)), 24.0);
        assert_eq!(cumulative_capacity(&s, Period(3), Period(2)), 0.0);
    }

    #[test]
    fn cumulative_empty_schedule() {
        let s = supplier_with(&[]);
        assert_eq!(cumulative_capacity(&s, Period(1), Period(9)), 0.0);
    }

    #[test]
    fn cumulative_skips_gaps() {
        let s = supplier_with(&[(1, 2.5), (3, 4.0), (4, 1.5)]);
        let direct: f64 = [2.5, 4.0, 1.5].iter().sum();
        assert_eq!(cumulative_capacity(&s, Period(1), Period(4)), direct);
        assert_eq!(cumulative_capacity(&s, Period(2), Period(3)), 4.0);
    }

    #[test]
    fn bundle_fits_single_large_job() {
        let s = supplier_with(&[(1, 9.0)]);
        let c1 = contract(1, 1, 8.1, 0.95, 2);
        assert!(bundle_feasible(&s, [&c1], Period(1)));
    }

    #[test]
    fn bundle_rejects_overflow() {
        let s = supplier_with(&[(1, 9.0)]);
        let c1 = contract(1, 1, 8.1, 0.95, 2);
        let c2 = contract(2, 2, 4.6, 0.80, 2);
        assert!(!bundle_feasible(&s, [&c1, &c2], Period(1)));
    }

    #[test]
    fn empty_bundle_is_feasible() {
        let s = supplier_with(&[]);
        assert!(bundle_feasible(&s, std::iter::empty::<&Contract>(), Period(1)));
    }

    #[test]
    fn earlier_due_dates_bind_first() {
        // 5h due in period 1 cannot borrow period-2 capacity.
        let s = supplier_with(&[(1, 4.0), (2, 10.0)]);
        let early = contract(1, 1, 5.0, 0.5, 1);
        let late = contract(2, 2, 5.0, 0.5, 2);
        assert!(!bundle_feasible(&s, [&early], Period(1)));
        assert!(bundle_feasible(&s, [&late], Period(1)));
        let late2 = contract(3, 3, 10.0, 0.5, 2);
        assert!(!bundle_feasible(&s, [&late, &late2], Period(1)));
    }
}
