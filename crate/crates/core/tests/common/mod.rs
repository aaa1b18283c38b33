//! Fixtures and brute-force oracles shared by the integration tests. The
//! oracles enumerate definitions directly and share no code with the crate
//! beyond its data types.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use maas_core::gen::MarketInstance;
use maas_core::model::{
    Attribute, AttributeUtility, ClientId, Contract, ContractId, ContractTerms, Location, Matching, Order, OrderId,
    Period, PreferenceModel, Process, Scale, Supplier, SupplierId, WeightedAttribute,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-9;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn supplier(id: u32, capacity: &[(u32, f64)]) -> Supplier {
    Supplier {
        id: SupplierId(id),
        process: Process::Fdm,
        materials: ["PLA".to_string()].into_iter().collect(),
        resolution_range: [100.0, 300.0],
        scale: Scale::Large,
        rating: 3.0,
        location: Location { lat: 35.0, lon: -80.0 },
        hourly_rate: 100.0,
        speed_factor: 1.0,
        capacity: capacity.iter().map(|&(t, h)| (Period(t), h)).collect(),
        prefs: PreferenceModel::default(),
        known_clients: BTreeSet::new(),
    }
}

pub fn order(id: u64, arrival: u32, due: u32) -> Order {
    Order {
        id: OrderId(id),
        client_id: ClientId(id as u32),
        arrival: Period(arrival),
        due: Period(due),
        process: Process::Fdm,
        material: "PLA".to_string(),
        resolution_microns: 200.0,
        base_production_hours: 1.0,
        location: Location { lat: 35.0, lon: -80.0 },
        size_preference: Scale::Large,
        prefs: PreferenceModel::default(),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn contract(id: u64, order: u64, supplier: u32, hours: f64, u_order: f64, u_supplier: f64, due: u32) -> Contract {
    Contract {
        id: ContractId(id),
        order_id: OrderId(order),
        supplier_id: SupplierId(supplier),
        terms: ContractTerms {
            material: "PLA".to_string(),
            process: Process::Fdm,
            resolution_microns: 200.0,
            due: Period(due),
            price: 100.0,
        },
        production_hours: hours,
        u_order,
        u_supplier,
        u_total: u_order + u_supplier,
    }
}

pub fn instance(
    current: u32,
    suppliers: Vec<Supplier>,
    orders: Vec<Order>,
    contracts: Vec<Contract>,
) -> MarketInstance {
    let mut orders_by_period: BTreeMap<Period, Vec<Order>> = BTreeMap::new();
    for o in orders {
        orders_by_period.entry(o.arrival).or_default().push(o);
    }
    MarketInstance {
        version: 1,
        seed: 0,
        config_hash: "fixture".to_string(),
        current: Period(current),
        suppliers,
        orders_by_period,
        contracts,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub max_orders: usize,
    pub max_suppliers: usize,
    pub max_per_pair: usize,
    /// Every contract takes one hour and capacities are whole hours.
    pub unit_hours: bool,
}

pub const SMALL: Shape = Shape {
    max_orders: 6,
    max_suppliers: 3,
    max_per_pair: 2,
    unit_hours: false,
};

fn utility<R: Rng>(r: &mut R) -> f64 {
    // Two decimals, so ties occur.
    f64::from(r.random_range(5u32..=100)) / 100.0
}

/// A random instance matched at period 1 (production from period 2).
pub fn random_instance(seed: u64, shape: Shape) -> MarketInstance {
    let mut r = rng(seed);
    let n_suppliers = r.random_range(1..=shape.max_suppliers);
    let n_orders = r.random_range(1..=shape.max_orders);
    let suppliers: Vec<Supplier> = (1..=n_suppliers as u32)
        .map(|id| {
            let cap: Vec<(u32, f64)> = (2..=4)
                .map(|t| {
                    let h = if shape.unit_hours {
                        f64::from(r.random_range(0u32..=2))
                    } else {
                        f64::from(r.random_range(0u32..=8)) / 2.0
                    };
                    (t, h)
                })
                .collect();
            supplier(id, &cap)
        })
        .collect();
    let orders: Vec<Order> = (1..=n_orders as u64)
        .map(|id| order(id, 1, r.random_range(2..=4)))
        .collect();
    let mut contracts = Vec::new();
    let mut next = 1u64;
    for o in &orders {
        for s in &suppliers {
            if r.random_bool(0.4) {
                continue;
            }
            for _ in 0..r.random_range(1..=shape.max_per_pair) {
                let hours = if shape.unit_hours {
                    1.0
                } else {
                    [0.5, 1.0, 1.5, 2.0, 3.0][r.random_range(0..5)]
                };
                let due = r.random_range(2..=o.due.0);
                contracts.push(contract(
                    next,
                    o.id.0,
                    s.id.0,
                    hours,
                    utility(&mut r),
                    utility(&mut r),
                    due,
                ));
                next += 1;
            }
        }
    }
    instance(1, suppliers, orders, contracts)
}

/// Period-by-period earliest-deadline simulation: every job must finish by
/// its due period using hours listed from `from` on.
pub fn schedulable(supplier: &Supplier, jobs: &[&Contract], from: Period) -> bool {
    let mut left: Vec<(Period, f64)> = jobs.iter().map(|c| (c.terms.due, c.production_hours)).collect();
    left.sort_by_key(|j| j.0);
    let Some(last) = left.last().map(|j| j.0) else {
        return true;
    };
    let mut t = from;
    while t <= last {
        let mut avail = supplier.capacity.get(&t).copied().unwrap_or(0.0);
        for job in left.iter_mut().filter(|j| j.0 >= t) {
            let take = job.1.min(avail);
            job.1 -= take;
            avail -= take;
        }
        if left.iter().any(|j| j.0 == t && j.1 > TOL) {
            return false;
        }
        t = t.next();
    }
    left.iter().all(|j| j.1 <= TOL)
}

fn distinct_orders(cs: &[&Contract]) -> bool {
    let ids: BTreeSet<OrderId> = cs.iter().map(|c| c.order_id).collect();
    ids.len() == cs.len()
}

/// Every subset of `contracts` the supplier can hold: distinct orders and schedulable.
pub fn feasible_subsets<'a>(supplier: &Supplier, contracts: &[&'a Contract], from: Period) -> Vec<Vec<&'a Contract>> {
    assert!(contracts.len() < 20, "subset oracle is exponential");
    let mut out = Vec::new();
    for mask in 0u32..(1 << contracts.len()) {
        let set: Vec<&Contract> = (0..contracts.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| contracts[i])
            .collect();
        if distinct_orders(&set) && schedulable(supplier, &set, from) {
            out.push(set);
        }
    }
    out
}

pub fn supplier_value(cs: &[&Contract]) -> f64 {
    cs.iter().map(|c| c.u_supplier).sum()
}

/// Best supplier utility over feasible subsets of `offers`.
pub fn best_choice_value(supplier: &Supplier, offers: &[&Contract], from: Period) -> f64 {
    feasible_subsets(supplier, offers, from)
        .iter()
        .map(|s| supplier_value(s))
        .fold(0.0, f64::max)
}

/// Every feasible matching of the instance.
pub fn all_matchings(inst: &MarketInstance) -> Vec<Matching> {
    let from = inst.from();
    let orders: Vec<OrderId> = inst.orders().map(|o| o.id).collect();
    let mut by_order: BTreeMap<OrderId, Vec<&Contract>> = BTreeMap::new();
    for c in &inst.contracts {
        by_order.entry(c.order_id).or_default().push(c);
    }
    let suppliers: BTreeMap<SupplierId, &Supplier> = inst.suppliers.iter().map(|s| (s.id, s)).collect();
    let mut out = Vec::new();
    let mut pick: Vec<&Contract> = Vec::new();
    fn rec<'a>(
        k: usize,
        orders: &[OrderId],
        by_order: &BTreeMap<OrderId, Vec<&'a Contract>>,
        suppliers: &BTreeMap<SupplierId, &Supplier>,
        from: Period,
        pick: &mut Vec<&'a Contract>,
        out: &mut Vec<Matching>,
    ) {
        if k == orders.len() {
            out.push(Matching::from_contracts(pick.iter().map(|c| (*c).clone())));
            return;
        }
        rec(k + 1, orders, by_order, suppliers, from, pick, out);
        for &c in by_order.get(&orders[k]).map(Vec::as_slice).unwrap_or(&[]) {
            pick.push(c);
            let set: Vec<&Contract> = pick
                .iter()
                .copied()
                .filter(|p| p.supplier_id == c.supplier_id)
                .collect();
            if schedulable(suppliers[&c.supplier_id], &set, from) {
                rec(k + 1, orders, by_order, suppliers, from, pick, out);
            }
            pick.pop();
        }
    }
    rec(0, &orders, &by_order, &suppliers, from, &mut pick, &mut out);
    out
}

fn held_by(m: &Matching, supplier: SupplierId) -> Vec<&Contract> {
    m.contracts().filter(|c| c.supplier_id == supplier).collect()
}

fn strictly_wants(c: &Contract, held: Option<&Contract>) -> bool {
    match held {
        None => true,
        Some(h) => c.u_order > h.u_order + TOL,
    }
}

/// Contracts `(i, j, c)` outside `m` such that `i` strictly prefers `c` and
/// `j` reaches a strictly better feasible set out of its holdings plus `c`
/// only by taking `c`.
pub fn blocking_pairs(m: &Matching, inst: &MarketInstance) -> BTreeSet<ContractId> {
    let from = inst.from();
    let mut out = BTreeSet::new();
    for c in &inst.contracts {
        if m.contract_for(c.order_id).is_some_and(|h| h.id == c.id) || !strictly_wants(c, m.contract_for(c.order_id)) {
            continue;
        }
        let s = inst.supplier(c.supplier_id).unwrap();
        let held = held_by(m, s.id);
        let before = supplier_value(&held);
        let mut pool = held.clone();
        pool.push(c);
        let with_c = feasible_subsets(s, &pool, from)
            .into_iter()
            .filter(|set| set.iter().any(|x| x.id == c.id))
            .map(|set| supplier_value(&set))
            .fold(f64::NEG_INFINITY, f64::max);
        if with_c > before + TOL {
            out.insert(c.id);
        }
    }
    out
}

/// Nonempty feasible contract sets `C` at one supplier, one per order, with
/// `u_j(C)` above the supplier's current utility and every member either
/// already holding its contract in `C` or strictly preferring it.
pub fn blocking_groups(m: &Matching, inst: &MarketInstance) -> BTreeSet<(SupplierId, Vec<ContractId>)> {
    let from = inst.from();
    let mut out = BTreeSet::new();
    for s in &inst.suppliers {
        let offers: Vec<&Contract> = inst.contracts.iter().filter(|c| c.supplier_id == s.id).collect();
        let sigma = supplier_value(&held_by(m, s.id));
        for set in feasible_subsets(s, &offers, from) {
            if set.is_empty() || supplier_value(&set) <= sigma + TOL {
                continue;
            }
            let members_agree = set.iter().all(|c| match m.contract_for(c.order_id) {
                Some(h) if h.id == c.id => true,
                h => strictly_wants(c, h),
            });
            if members_agree {
                let mut ids: Vec<ContractId> = set.iter().map(|c| c.id).collect();
                ids.sort();
                out.insert((s.id, ids));
            }
        }
    }
    out
}

/// Brute-force MWAS: the fewest blocking groups over all feasible matchings,
/// and the best and worst total utility among matchings attaining it.
pub struct MwasOracle {
    pub lb: usize,
    pub max_utility: f64,
    pub min_utility: f64,
    pub max_cardinality: usize,
    pub mw_utility: f64,
}

pub fn mwas_oracle(inst: &MarketInstance) -> MwasOracle {
    let scored: Vec<(usize, f64, usize)> = all_matchings(inst)
        .iter()
        .map(|m| (blocking_groups(m, inst).len(), m.total_utility(), m.len()))
        .collect();
    let lb = scored.iter().map(|s| s.0).min().unwrap();
    let at_lb = scored.iter().filter(|s| s.0 == lb);
    MwasOracle {
        lb,
        max_utility: at_lb.clone().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max),
        min_utility: at_lb.clone().map(|s| s.1).fold(f64::INFINITY, f64::min),
        max_cardinality: at_lb.map(|s| s.2).max().unwrap(),
        mw_utility: scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Checks each supplier's assigned set against the schedule oracle.
pub fn matching_feasible(m: &Matching, inst: &MarketInstance) -> bool {
    inst.suppliers
        .iter()
        .all(|s| schedulable(s, &held_by(m, s.id), inst.from()))
        && m.contracts().all(|c| inst.contracts.iter().any(|k| k == c))
}

fn weighted(attribute: Attribute, utility: AttributeUtility, weight: f64) -> WeightedAttribute {
    WeightedAttribute {
        attribute,
        utility,
        weight,
    }
}

/// The worked order/supplier pair: 400 miles apart, large supplier rated 3,
/// aluminum at 200 microns due four periods out, quoted at 750. Returns the
/// order, supplier, terms and the matching period.
pub fn worked_pair() -> (Order, Supplier, ContractTerms, Period) {
    let current = Period(1);
    let mut o = order(1, 1, 5);
    o.material = "aluminum".to_string();
    o.location = Location { lat: 35.0, lon: -80.0 };
    o.prefs = PreferenceModel::new(vec![
        weighted(
            Attribute::Location,
            AttributeUtility::polynomial(0.595, -1.516, 0.925, 50.0, 500.0),
            0.2,
        ),
        weighted(
            Attribute::Size,
            AttributeUtility::categorical([("large", 1.0), ("medium", 0.6), ("small", 0.3)]),
            0.1,
        ),
        weighted(
            Attribute::Rating,
            AttributeUtility::polynomial(-0.219, 1.225, -0.005, 1.0, 5.0),
            0.3,
        ),
        weighted(
            Attribute::Price,
            AttributeUtility::polynomial(0.922, -1.962, 1.033, 640.0, 880.0),
            0.4,
        ),
    ]);
    let mut s = supplier(2, &[]);
    s.scale = Scale::Large;
    s.rating = 3.0;
    // Due north by 400 miles of great-circle arc.
    s.location = Location {
        lat: 35.0 + (400.0f64 / 3958.8).to_degrees(),
        lon: -80.0,
    };
    s.prefs = PreferenceModel::new(vec![
        weighted(
            Attribute::Material,
            AttributeUtility::categorical([("aluminum", 1.0), ("titanium", 0.7), ("steel", 0.3)]),
            0.2,
        ),
        weighted(
            Attribute::Urgency,
            AttributeUtility::polynomial(-0.240, 1.329, -0.048, 1.0, 8.0),
            0.3,
        ),
        weighted(
            Attribute::Revenue,
            AttributeUtility::polynomial(-0.444, 1.401, 0.032, 150.0, 1600.0),
            0.5,
        ),
    ]);
    let terms = ContractTerms {
        material: "aluminum".to_string(),
        process: Process::Fdm,
        resolution_microns: 200.0,
        due: Period(5),
        price: 750.0,
    };
    (o, s, terms, current)
}

/// `a x^2 + b x + c` at `x = (raw - lo) / (hi - lo)`, both clamped to [0, 1].
pub fn quad(a: f64, b: f64, c: f64, lo: f64, hi: f64, raw: f64) -> f64 {
    let x = ((raw - lo) / (hi - lo)).clamp(0.0, 1.0);
    (a * x * x + b * x + c).clamp(0.0, 1.0)
}
