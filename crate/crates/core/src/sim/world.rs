//! State carried between periods: supplier schedules, open orders, and the
//! tally of where every order went.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::gen::{draw_listing, generate_orders, generate_suppliers, stream_rng, streams, GenConfig, MarketInstance};
use crate::model::{CapacitySchedule, Contract, Matching, Order, OrderId, Period, Supplier, SupplierId, TOLERANCE};

use super::{Conservation, PeriodReport};

pub struct World {
    gen: GenConfig,
    replication: u32,
    pub suppliers: Vec<Supplier>,
    pub carryover: Vec<Order>,
    current: Option<Period>,
    tally: Conservation,
}

impl World {
    /// Suppliers listing capacity for periods 2 ..= 1 + horizon, before period 1.
    pub fn new(gen: &GenConfig, replication: u32) -> World {
        let mut rng = stream_rng(gen.seed, replication, Period(0), streams::SUPPLIERS);
        World {
            gen: gen.clone(),
            replication,
            suppliers: generate_suppliers(gen, Period(1), &mut rng),
            carryover: Vec::new(),
            current: None,
            tally: Conservation::default(),
        }
    }

    /// Starts period `t`: suppliers relist, expired orders leave, arrivals join.
    /// Periods must be opened in order starting at 1.
    pub fn open(&mut self, t: Period) -> Result<(MarketInstance, PeriodReport)> {
        let expected = self.current.map_or(Period(1), Period::next);
        assert_eq!(t, expected, "periods are opened in sequence");
        self.current = Some(t);
        if t > Period(1) {
            let mut rng = stream_rng(self.gen.seed, self.replication, t, streams::CAPACITY);
            let fresh = t.offset(self.gen.listing_horizon);
            for s in &mut self.suppliers {
                s.capacity.retain(|p, _| *p > t);
                s.capacity.insert(fresh, draw_listing(&self.gen, &mut rng));
            }
        }
        let mut rng = stream_rng(self.gen.seed, self.replication, t, streams::ORDERS);
        let arrivals = generate_orders(&self.gen, t, &mut rng);
        let (kept, expired): (Vec<Order>, Vec<Order>) = std::mem::take(&mut self.carryover)
            .into_iter()
            .partition(|o| t.until(o.due) >= 1);
        self.tally.generated += arrivals.len();
        self.tally.expired += expired.len();
        let report = PeriodReport {
            period: t,
            arrivals: arrivals.len(),
            carried_in: kept.len(),
            expired: expired.len(),
            pool_orders: kept.len() + arrivals.len(),
            active_suppliers: 0,
            pool: Vec::new(),
            active: Vec::new(),
            contracts: 0,
            bundles: None,
            matched: 0,
            hours_deducted: 0.0,
            carried_out: 0,
            mechanisms: Vec::new(),
            posterior: None,
        };
        let mut pool = kept;
        pool.extend(arrivals);
        pool.sort_by_key(|o| o.id);
        let instance = MarketInstance::new(&self.gen, t, self.suppliers.clone(), pool)?;
        let active: BTreeSet<SupplierId> = instance.contracts.iter().map(|c| c.supplier_id).collect();
        let report = PeriodReport {
            active_suppliers: active.len(),
            pool: instance.orders().map(|o| o.id).collect(),
            active: active.into_iter().collect(),
            contracts: instance.contracts.len(),
            ..report
        };
        Ok((instance, report))
    }

    /// Closes the period on `matching`: matched orders leave and their hours
    /// are booked, the rest carry over. Returns the hours deducted.
    pub fn settle(&mut self, instance: &MarketInstance, matching: &Matching) -> f64 {
        let mut by_supplier: BTreeMap<SupplierId, Vec<&Contract>> = BTreeMap::new();
        for c in matching.contracts() {
            by_supplier.entry(c.supplier_id).or_default().push(c);
        }
        let clients: BTreeMap<OrderId, _> = instance.orders().map(|o| (o.id, o.client_id)).collect();
        let mut deducted = 0.0;
        for s in &mut self.suppliers {
            if let Some(set) = by_supplier.get(&s.id) {
                deducted += deduct_earliest_fit(&mut s.capacity, set, instance.from());
                s.known_clients.extend(set.iter().map(|c| clients[&c.order_id]));
            }
        }
        self.tally.matched += matching.len();
        self.carryover = instance
            .orders()
            .filter(|o| matching.contract_for(o.id).is_none())
            .cloned()
            .collect();
        self.carryover.sort_by_key(|o| o.id);
        deducted
    }

    pub fn conservation(&self) -> Conservation {
        Conservation {
            pending: self.carryover.len(),
            ..self.tally.clone()
        }
    }
}

/// Books each contract's hours against the earliest listed periods from `from`
/// up to its due period, earliest due first. Returns the hours booked.
///
/// # Panics
/// If the contracts do not fit the schedule.
pub fn deduct_earliest_fit(schedule: &mut CapacitySchedule, contracts: &[&Contract], from: Period) -> f64 {
    let mut jobs: Vec<&Contract> = contracts.to_vec();
    jobs.sort_by(|a, b| a.due().cmp(&b.due()).then(a.id.cmp(&b.id)));
    let mut total = 0.0;
    for c in jobs {
        let mut need = c.production_hours;
        for (_, hours) in schedule.range_mut(from..=c.due()) {
            if need <= 0.0 {
                break;
            }
            let take = need.min(*hours);
            *hours -= take;
            need -= take;
        }
        assert!(need <= TOLERANCE, "contract {} overruns its supplier's capacity", c.id);
        total += c.production_hours;
    }
    total
}
