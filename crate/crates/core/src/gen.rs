//! Synthetic marketplace instances: suppliers, per-period arrivals and contracts.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    cumulative_capacity, is_capability_feasible, order_utility, production_hours, supplier_utility, Attribute,
    AttributeUtility, ClientId, Contract, ContractId, ContractTerms, Location, Order, OrderId, Period, PreferenceModel,
    Process, Scale, Supplier, SupplierId, WeightedAttribute, TOLERANCE,
};

pub const INSTANCE_FORMAT_VERSION: u32 = 1;

/// Continental US, degrees.
const LAT_RANGE: (f64, f64) = (25.0, 49.0);
const LON_RANGE: (f64, f64) = (-124.0, -67.0);
/// Distance range of the location utility, miles.
const DISTANCE_RANGE: [f64; 2] = [50.0, 2500.0];
const RATING_RANGE: [f64; 2] = [1.0, 5.0];
const URGENCY_RANGE: [f64; 2] = [1.0, 8.0];
const REVENUE_RANGE: [f64; 2] = [150.0, 1600.0];
const HOURLY_RATE_RANGE: (f64, f64) = (100.0, 180.0);
const SPEED_FACTOR_RANGE: (f64, f64) = (0.8, 1.25);
/// Order price utilities span this multiple of the reference quote.
const PRICE_SPAN: (f64, f64) = (0.6, 1.6);

const LOCATION_POLY: [f64; 3] = [0.595, -1.516, 0.925];
const RATING_POLY: [f64; 3] = [-0.219, 1.225, -0.005];
const PRICE_POLY: [f64; 3] = [0.922, -1.962, 1.033];
const URGENCY_POLY: [f64; 3] = [-0.240, 1.329, -0.048];
const REVENUE_POLY: [f64; 3] = [-0.444, 1.401, 0.032];

struct ProcessTemplate {
    materials: &'static [&'static str],
    resolution: [f64; 2],
    rate_multiplier: f64,
}

fn template(process: Process) -> ProcessTemplate {
    match process {
        Process::Fdm => ProcessTemplate {
            materials: &["PLA", "ABS", "PETG", "Nylon", "PC", "ASA", "TPU"],
            resolution: [100.0, 400.0],
            rate_multiplier: 1.0,
        },
        Process::Sla => ProcessTemplate {
            materials: &["Standard Resin", "Tough Resin", "Clear Resin"],
            resolution: [25.0, 100.0],
            rate_multiplier: 1.2,
        },
        Process::MaterialJetting => ProcessTemplate {
            materials: &["Rigid Photopolymer", "Flexible Photopolymer"],
            resolution: [16.0, 32.0],
            rate_multiplier: 1.5,
        },
        Process::SlsPolymer => ProcessTemplate {
            materials: &["Nylon 12", "Nylon 11", "TPU"],
            resolution: [80.0, 150.0],
            rate_multiplier: 1.4,
        },
        Process::SlsMetal => ProcessTemplate {
            materials: &["Aluminum", "Steel", "Titanium"],
            resolution: [20.0, 60.0],
            rate_multiplier: 2.0,
        },
    }
}

fn default_supplier_mix() -> BTreeMap<Process, f64> {
    [
        (Process::Fdm, 0.50),
        (Process::Sla, 0.15),
        (Process::MaterialJetting, 0.15),
        (Process::SlsPolymer, 0.15),
        (Process::SlsMetal, 0.05),
    ]
    .into_iter()
    .collect()
}

fn default_order_mix() -> BTreeMap<Process, f64> {
    // SLS arrivals (0.2) split between polymer and metal like the listings.
    [
        (Process::Fdm, 0.50),
        (Process::Sla, 0.15),
        (Process::MaterialJetting, 0.15),
        (Process::SlsPolymer, 0.15),
        (Process::SlsMetal, 0.05),
    ]
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_suppliers: usize,
    /// Mean order arrivals per period.
    pub lambda_orders: f64,
    pub process_mix_suppliers: BTreeMap<Process, f64>,
    pub process_mix_orders: BTreeMap<Process, f64>,
    pub mean_production_hours: f64,
    pub production_hours_shape: f64,
    pub due_offset_range: [u32; 2],
    pub capacity_listing_range: [f64; 2],
    pub listing_horizon: u32,
    pub contracts_per_pair_max: u32,
    pub price_spread_fraction: f64,
    pub n_clients: u32,
    /// Relative jitter applied to every utility coefficient; 0 keeps the templates.
    pub coefficient_jitter: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_suppliers: 100,
            lambda_orders: 100.0,
            process_mix_suppliers: default_supplier_mix(),
            process_mix_orders: default_order_mix(),
            mean_production_hours: 5.35,
            production_hours_shape: 4.0,
            due_offset_range: [2, 7],
            capacity_listing_range: [3.0, 6.0],
            listing_horizon: 4,
            contracts_per_pair_max: 2,
            price_spread_fraction: 0.1,
            n_clients: 200,
            coefficient_jitter: 0.1,
            seed: 1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, mix) in [
            ("process_mix_suppliers", &self.process_mix_suppliers),
            ("process_mix_orders", &self.process_mix_orders),
        ] {
            let sum: f64 = mix.values().sum();
            if (sum - 1.0).abs() > TOLERANCE || mix.values().any(|p| *p < 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be a probability map (sums to {sum})"
                )));
            }
        }
        let [lo, hi] = self.due_offset_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "due_offset_range [{lo}, {hi}] is empty or starts at 0"
            )));
        }
        let [clo, chi] = self.capacity_listing_range;
        if !(0.0..=chi).contains(&clo) {
            return Err(Error::Config(format!("capacity_listing_range [{clo}, {chi}] is empty")));
        }
        let checks = [
            (
                self.lambda_orders >= 0.0 && self.lambda_orders.is_finite(),
                "lambda_orders must be >= 0",
            ),
            (self.mean_production_hours > 0.0, "mean_production_hours must be > 0"),
            (self.production_hours_shape > 0.0, "production_hours_shape must be > 0"),
            (self.listing_horizon >= 1, "listing_horizon must be >= 1"),
            (self.contracts_per_pair_max >= 1, "contracts_per_pair_max must be >= 1"),
            (
                (0.0..1.0).contains(&self.price_spread_fraction),
                "price_spread_fraction must lie in [0, 1)",
            ),
            (self.n_clients >= 1, "n_clients must be >= 1"),
            (
                (0.0..1.0).contains(&self.coefficient_jitter),
                "coefficient_jitter must lie in [0, 1)",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.to_string()));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// An independent generator for one `(seed, replication, period, stream)` cell.
pub fn stream_rng(seed: u64, replication: u32, period: Period, stream: u32) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"maas-stream");
    h.update(seed.to_le_bytes());
    h.update(replication.to_le_bytes());
    h.update(period.0.to_le_bytes());
    h.update(stream.to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Stream tags for [`stream_rng`].
pub mod streams {
    pub const SUPPLIERS: u32 = 0;
    pub const ORDERS: u32 = 1;
    pub const CAPACITY: u32 = 2;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketInstance {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    /// The matching period; production starts the period after.
    pub current: Period,
    pub suppliers: Vec<Supplier>,
    /// Open orders keyed by arrival period.
    pub orders_by_period: BTreeMap<Period, Vec<Order>>,
    pub contracts: Vec<Contract>,
}

impl MarketInstance {
    pub fn new(config: &GenConfig, current: Period, suppliers: Vec<Supplier>, orders: Vec<Order>) -> Result<Self> {
        let contracts = enumerate_contracts(&orders, &suppliers, current, config)?;
        let mut orders_by_period: BTreeMap<Period, Vec<Order>> = BTreeMap::new();
        for o in orders {
            orders_by_period.entry(o.arrival).or_default().push(o);
        }
        Ok(MarketInstance {
            version: INSTANCE_FORMAT_VERSION,
            seed: config.seed,
            config_hash: config.hash(),
            current,
            suppliers,
            orders_by_period,
            contracts,
        })
    }

    /// First period in which matched work can be produced.
    pub fn from(&self) -> Period {
        self.current.next()
    }

    pub fn orders(&self) -> impl Iterator<Item = &Order> {
        self.orders_by_period.values().flatten()
    }

    pub fn order(&self, id: OrderId) -> Option<&Order> {
        self.orders().find(|o| o.id == id)
    }

    pub fn supplier(&self, id: SupplierId) -> Option<&Supplier> {
        self.suppliers.iter().find(|s| s.id == id)
    }

    pub fn supplier_index(&self) -> BTreeMap<SupplierId, &Supplier> {
        self.suppliers.iter().map(|s| (s.id, s)).collect()
    }

    pub fn contracts_for_supplier(&self, id: SupplierId) -> Vec<&Contract> {
        self.contracts.iter().filter(|c| c.supplier_id == id).collect()
    }

    pub fn n_orders(&self) -> usize {
        self.orders_by_period.values().map(Vec::len).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("instance serializes"))
    }
}

/// Generates a full instance for `current` from `config` alone.
pub fn generate_instance(config: &GenConfig, current: Period) -> Result<MarketInstance> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, 0, Period(0), streams::SUPPLIERS);
    let suppliers = generate_suppliers(config, current, &mut rng);
    let mut rng = stream_rng(config.seed, 0, current, streams::ORDERS);
    let orders = generate_orders(config, current, &mut rng);
    MarketInstance::new(config, current, suppliers, orders)
}

fn pick_weighted<R: Rng + ?Sized, K: Copy>(mix: &BTreeMap<K, f64>, rng: &mut R) -> K {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (k, p) in mix {
        acc += p;
        last = Some(*k);
        if u < acc {
            return *k;
        }
    }
    last.expect("nonempty mix")
}

fn jittered<R: Rng + ?Sized>(coefficients: [f64; 3], jitter: f64, rng: &mut R) -> [f64; 3] {
    if jitter == 0.0 {
        return coefficients;
    }
    coefficients.map(|c| c * (1.0 + rng.random_range(-jitter..=jitter)))
}

/// Flat-Dirichlet weights.
fn simplex_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    let mut w: Vec<f64> = draws.iter().map(|d| d / total).collect();
    // Absorb rounding so the weights sum to one exactly.
    let rest: f64 = w[..n - 1].iter().sum();
    w[n - 1] = 1.0 - rest;
    w
}

fn uniform_location<R: Rng + ?Sized>(rng: &mut R) -> Location {
    Location {
        lat: rng.random_range(LAT_RANGE.0..LAT_RANGE.1),
        lon: rng.random_range(LON_RANGE.0..LON_RANGE.1),
    }
}

/// The size utility favouring `preferred`.
pub fn size_utility(preferred: Scale) -> AttributeUtility {
    let values = match preferred {
        Scale::Large => [("large", 1.0), ("medium", 0.6), ("small", 0.3)],
        Scale::Small => [("small", 1.0), ("medium", 0.6), ("large", 0.3)],
        Scale::Medium => [("medium", 1.0), ("large", 0.6), ("small", 0.6)],
    };
    AttributeUtility::categorical(values)
}

/// Mean quote for an order of `hours` on a process.
pub fn reference_price(process: Process, hours: f64) -> f64 {
    let mid = 0.5 * (HOURLY_RATE_RANGE.0 + HOURLY_RATE_RANGE.1);
    hours * mid * template(process).rate_multiplier
}

fn order_prefs<R: Rng + ?Sized>(
    config: &GenConfig,
    size: Scale,
    process: Process,
    hours: f64,
    rng: &mut R,
) -> PreferenceModel {
    let j = config.coefficient_jitter;
    let w = simplex_weights(4, rng);
    let poly = |c: [f64; 3], range: [f64; 2]| AttributeUtility::Polynomial { coefficients: c, range };
    let price_ref = reference_price(process, hours);
    PreferenceModel::new(vec![
        WeightedAttribute {
            attribute: Attribute::Location,
            utility: poly(jittered(LOCATION_POLY, j, rng), DISTANCE_RANGE),
            weight: w[0],
        },
        WeightedAttribute {
            attribute: Attribute::Size,
            utility: size_utility(size),
            weight: w[1],
        },
        WeightedAttribute {
            attribute: Attribute::Rating,
            utility: poly(jittered(RATING_POLY, j, rng), RATING_RANGE),
            weight: w[2],
        },
        WeightedAttribute {
            attribute: Attribute::Price,
            utility: poly(
                jittered(PRICE_POLY, j, rng),
                [PRICE_SPAN.0 * price_ref, PRICE_SPAN.1 * price_ref],
            ),
            weight: w[3],
        },
    ])
}

fn supplier_prefs<R: Rng + ?Sized>(config: &GenConfig, materials: &BTreeSet<String>, rng: &mut R) -> PreferenceModel {
    let j = config.coefficient_jitter;
    let w = simplex_weights(3, rng);
    let values: BTreeMap<String, f64> = materials
        .iter()
        .map(|m| (m.clone(), rng.random_range(0.3..=1.0)))
        .collect();
    PreferenceModel::new(vec![
        WeightedAttribute {
            attribute: Attribute::Material,
            utility: AttributeUtility::Categorical { values },
            weight: w[0],
        },
        WeightedAttribute {
            attribute: Attribute::Urgency,
            utility: AttributeUtility::Polynomial {
                coefficients: jittered(URGENCY_POLY, j, rng),
                range: URGENCY_RANGE,
            },
            weight: w[1],
        },
        WeightedAttribute {
            attribute: Attribute::Revenue,
            utility: AttributeUtility::Polynomial {
                coefficients: jittered(REVENUE_POLY, j, rng),
                range: REVENUE_RANGE,
            },
            weight: w[2],
        },
    ])
}

/// Hours listed for one future period.
pub fn draw_listing<R: Rng + ?Sized>(config: &GenConfig, rng: &mut R) -> f64 {
    let [lo, hi] = config.capacity_listing_range;
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Suppliers with capacity listed for `current+1 ..= current+horizon`.
pub fn generate_suppliers<R: Rng + ?Sized>(config: &GenConfig, current: Period, rng: &mut R) -> Vec<Supplier> {
    (0..config.n_suppliers)
        .map(|k| {
            let process = pick_weighted(&config.process_mix_suppliers, rng);
            let t = template(process);
            let mut materials: BTreeSet<String> = t
                .materials
                .iter()
                .filter(|_| rng.random_bool(0.6))
                .map(|m| m.to_string())
                .collect();
            if materials.is_empty() {
                let m = t.materials[rng.random_range(0..t.materials.len())];
                materials.insert(m.to_string());
            }
            let [lo, hi] = t.resolution;
            let span = hi - lo;
            let resolution_range = [
                lo + rng.random_range(0.0..0.3) * span,
                hi - rng.random_range(0.0..0.3) * span,
            ];
            let scale = Scale::ALL[rng.random_range(0..3)];
            let rating = f64::from(rng.random_range(1u32..=5));
            let location = uniform_location(rng);
            let hourly_rate = rng.random_range(HOURLY_RATE_RANGE.0..HOURLY_RATE_RANGE.1) * t.rate_multiplier;
            let speed_factor = rng.random_range(SPEED_FACTOR_RANGE.0..SPEED_FACTOR_RANGE.1);
            let capacity = (1..=config.listing_horizon)
                .map(|h| (current.offset(h), draw_listing(config, rng)))
                .collect();
            let prefs = supplier_prefs(config, &materials, rng);
            Supplier {
                id: SupplierId(k as u32 + 1),
                process,
                materials,
                resolution_range,
                scale,
                rating,
                location,
                hourly_rate,
                speed_factor,
                capacity,
                prefs,
                known_clients: BTreeSet::new(),
            }
        })
        .collect()
}

/// Poisson draw by sequential inversion, split into chunks so `e^-λ` never underflows.
pub fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let mut remaining = lambda;
    let mut total = 0;
    while remaining > 0.0 {
        let chunk = remaining.min(200.0);
        remaining -= chunk;
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut p = (-chunk).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= chunk / k as f64;
            cdf += p;
            if p < 1e-300 && cdf < u {
                break;
            }
        }
        total += k;
    }
    total
}

/// Arrivals of period `period`. Order ids are `period * 1_000_000 + k`.
pub fn generate_orders<R: Rng + ?Sized>(config: &GenConfig, period: Period, rng: &mut R) -> Vec<Order> {
    let n = poisson(config.lambda_orders, rng);
    let gamma = Gamma::new(
        config.production_hours_shape,
        config.mean_production_hours / config.production_hours_shape,
    )
    .expect("validated gamma parameters");
    let [due_lo, due_hi] = config.due_offset_range;
    (0..n)
        .map(|k| {
            let process = pick_weighted(&config.process_mix_orders, rng);
            let t = template(process);
            let material = t.materials[rng.random_range(0..t.materials.len())].to_string();
            let resolution_microns = rng.random_range(t.resolution[0]..=t.resolution[1]);
            let base_production_hours: f64 = gamma.sample(rng).max(0.05);
            let due = period.offset(rng.random_range(due_lo..=due_hi));
            let client_id = ClientId(rng.random_range(0..config.n_clients));
            let size_preference = Scale::ALL[rng.random_range(0..3)];
            let location = uniform_location(rng);
            let prefs = order_prefs(config, size_preference, process, base_production_hours, rng);
            Order {
                id: OrderId(u64::from(period.0) * 1_000_000 + k),
                client_id,
                arrival: period,
                due,
                process,
                material,
                resolution_microns,
                base_production_hours,
                location,
                size_preference,
                prefs,
            }
        })
        .collect()
}

/// Contract id for the `seq`-th contract enumerated at `current`.
pub fn contract_id(current: Period, seq: u64) -> ContractId {
    ContractId(u64::from(current.0) * 1_000_000_000 + seq)
}

/// All contracts for capability-feasible pairs whose single job fits the
/// supplier's capacity by the order's due period. Each pair gets
/// `contracts_per_pair_max` price points from list price down to
/// `list * (1 - price_spread_fraction)`.
pub fn enumerate_contracts(
    orders: &[Order],
    suppliers: &[Supplier],
    current: Period,
    config: &GenConfig,
) -> Result<Vec<Contract>> {
    let mut sorted_orders: Vec<&Order> = orders.iter().collect();
    sorted_orders.sort_by_key(|o| o.id);
    let mut sorted_suppliers: Vec<&Supplier> = suppliers.iter().collect();
    sorted_suppliers.sort_by_key(|s| s.id);
    let from = current.next();
    let k = config.contracts_per_pair_max;
    let mut out = Vec::new();
    for order in sorted_orders {
        for supplier in &sorted_suppliers {
            if !is_capability_feasible(order, supplier) || order.due <= current {
                continue;
            }
            let hours = production_hours(order, supplier);
            if hours > cumulative_capacity(supplier, from, order.due) + TOLERANCE {
                continue;
            }
            let list = hours * supplier.hourly_rate;
            for step in 0..k {
                let discount = if k == 1 {
                    0.0
                } else {
                    config.price_spread_fraction * f64::from(step) / f64::from(k - 1)
                };
                let terms = ContractTerms {
                    material: order.material.clone(),
                    process: order.process,
                    resolution_microns: order.resolution_microns,
                    due: order.due,
                    price: list * (1.0 - discount),
                };
                let u_order = order_utility(order, supplier, &terms)?;
                let u_supplier = supplier_utility(supplier, order, &terms, current)?;
                out.push(Contract {
                    id: contract_id(current, out.len() as u64),
                    order_id: order.id,
                    supplier_id: supplier.id,
                    terms,
                    production_hours: hours,
                    u_order,
                    u_supplier,
                    u_total: u_order + u_supplier,
                });
            }
        }
    }
    Ok(out)
}
