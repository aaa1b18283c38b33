//! Marketplace domain types: periods, orders, suppliers, contracts and matchings.

mod capacity;
mod utility;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use capacity::{
    bundle_feasible, cumulative_capacity, fits_schedule, is_capability_feasible, production_hours, CapacitySchedule,
};
pub use utility::{
    haversine_miles, order_utility, supplier_utility, Attribute, AttributeUtility, PreferenceModel, RawValue,
    WeightedAttribute,
};

/// Absolute tolerance used for every utility and hour comparison.
pub const TOLERANCE: f64 = 1e-9;

/// A matching period. One period is twelve wall-clock hours.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Period(pub u32);

impl Period {
    pub fn next(self) -> Period {
        Period(self.0 + 1)
    }

    pub fn offset(self, periods: u32) -> Period {
        Period(self.0 + periods)
    }

    /// Signed number of periods from `self` until `later`.
    pub fn until(self, later: Period) -> i64 {
        i64::from(later.0) - i64::from(self.0)
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident($inner:ty), $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(OrderId(u64), "d");
id_type!(SupplierId(u32), "s");
id_type!(ContractId(u64), "c");
id_type!(
    /// The client placing orders. Clients persist across periods; orders do not.
    ClientId(u32),
    "k"
);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Process {
    #[serde(rename = "FDM")]
    Fdm,
    #[serde(rename = "SLA")]
    Sla,
    #[serde(rename = "MJ")]
    MaterialJetting,
    #[serde(rename = "SLS-polymer")]
    SlsPolymer,
    #[serde(rename = "SLS-metal")]
    SlsMetal,
}

impl Process {
    pub const ALL: [Process; 5] = [
        Process::Fdm,
        Process::Sla,
        Process::MaterialJetting,
        Process::SlsPolymer,
        Process::SlsMetal,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Small,
    Medium,
    Large,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Small, Scale::Medium, Scale::Large];

    pub fn label(self) -> &'static str {
        match self {
            Scale::Small => "small",
            Scale::Medium => "medium",
            Scale::Large => "large",
        }
    }
}

/// Latitude/longitude in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: OrderId,
    pub client_id: ClientId,
    pub arrival: Period,
    pub due: Period,
    pub process: Process,
    pub material: String,
    pub resolution_microns: f64,
    pub base_production_hours: f64,
    pub location: Location,
    pub size_preference: Scale,
    pub prefs: PreferenceModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Supplier {
    pub id: SupplierId,
    pub process: Process,
    pub materials: BTreeSet<String>,
    /// Printable resolution envelope `[finest, coarsest]` in microns.
    pub resolution_range: [f64; 2],
    pub scale: Scale,
    pub rating: f64,
    pub location: Location,
    pub hourly_rate: f64,
    pub speed_factor: f64,
    pub capacity: CapacitySchedule,
    pub prefs: PreferenceModel,
    #[serde(default)]
    pub known_clients: BTreeSet<ClientId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractTerms {
    pub material: String,
    pub process: Process,
    pub resolution_microns: f64,
    pub due: Period,
    pub price: f64,
}

/// An edge `(order, supplier, terms)` of the contract multigraph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub id: ContractId,
    pub order_id: OrderId,
    pub supplier_id: SupplierId,
    pub terms: ContractTerms,
    pub production_hours: f64,
    pub u_order: f64,
    pub u_supplier: f64,
    pub u_total: f64,
}

impl Contract {
    pub fn due(&self) -> Period {
        self.terms.due
    }
}

/// A supplier together with a set of contracts for pairwise-distinct orders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractBundle {
    pub supplier_id: SupplierId,
    /// Member contracts sorted by order id.
    pub contracts: Vec<Contract>,
    pub u_supplier_total: f64,
    pub u_grand_total: f64,
}

impl ContractBundle {
    pub fn new(supplier_id: SupplierId, mut contracts: Vec<Contract>) -> Self {
        contracts.sort_by_key(|c| (c.order_id, c.id));
        let u_supplier_total = contracts.iter().map(|c| c.u_supplier).sum();
        let u_grand_total = contracts.iter().map(|c| c.u_total).sum();
        ContractBundle {
            supplier_id,
            contracts,
            u_supplier_total,
            u_grand_total,
        }
    }

    pub fn len(&self) -> usize {
        self.contracts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contracts.is_empty()
    }

    pub fn contract_ids(&self) -> Vec<ContractId> {
        let mut ids: Vec<_> = self.contracts.iter().map(|c| c.id).collect();
        ids.sort();
        ids
    }

    pub fn contract_for(&self, order: OrderId) -> Option<&Contract> {
        self.contracts.iter().find(|c| c.order_id == order)
    }
}

/// A many-to-one assignment: each order holds at most one contract.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub assigned: BTreeMap<OrderId, Contract>,
}

impl Matching {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_contracts<I: IntoIterator<Item = Contract>>(contracts: I) -> Self {
        let mut m = Matching::new();
        for c in contracts {
            let prev = m.assigned.insert(c.order_id, c);
            debug_assert!(prev.is_none(), "order assigned twice");
        }
        m
    }

    /// Assigns `contract`, returning the contract it displaced for the same order.
    pub fn assign(&mut self, contract: Contract) -> Option<Contract> {
        self.assigned.insert(contract.order_id, contract)
    }

    pub fn unassign(&mut self, order: OrderId) -> Option<Contract> {
        self.assigned.remove(&order)
    }

    pub fn contract_for(&self, order: OrderId) -> Option<&Contract> {
        self.assigned.get(&order)
    }

    pub fn contains(&self, contract: &Contract) -> bool {
        self.assigned
            .get(&contract.order_id)
            .is_some_and(|c| c.id == contract.id)
    }

    pub fn len(&self) -> usize {
        self.assigned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assigned.is_empty()
    }

    pub fn contracts(&self) -> impl Iterator<Item = &Contract> {
        self.assigned.values()
    }

    /// Contracts held by `supplier`, ordered by order id.
    pub fn supplier_set(&self, supplier: SupplierId) -> Vec<&Contract> {
        self.assigned.values().filter(|c| c.supplier_id == supplier).collect()
    }

    pub fn by_supplier(&self) -> BTreeMap<SupplierId, Vec<&Contract>> {
        let mut out: BTreeMap<SupplierId, Vec<&Contract>> = BTreeMap::new();
        for c in self.assigned.values() {
            out.entry(c.supplier_id).or_default().push(c);
        }
        out
    }

    pub fn total_utility(&self) -> f64 {
        self.assigned.values().map(|c| c.u_total).sum()
    }

    pub fn order_utility(&self) -> f64 {
        self.assigned.values().map(|c| c.u_order).sum()
    }

    pub fn supplier_utility(&self) -> f64 {
        self.assigned.values().map(|c| c.u_supplier).sum()
    }

    /// Checks both matching invariants against the given suppliers.
    pub fn is_feasible(&self, suppliers: &[Supplier], from: Period) -> bool {
        self.by_supplier().into_iter().all(|(sid, set)| {
            suppliers
                .iter()
                .find(|s| s.id == sid)
                .is_some_and(|s| bundle_feasible(s, set.iter().copied(), from))
        })
    }
}
