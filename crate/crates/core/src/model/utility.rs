//! Additive multi-attribute utility.
//!
//! Each attribute utility is either a quadratic over a normalized domain or a
//! categorical lookup. For a polynomial with coefficients `(a, b, c)` on the raw
//! range `[lo, hi]`, the raw input is clamped to the range, mapped affinely onto
//! `x in [0, 1]`, and `a x^2 + b x + c` is clamped to `[0, 1]`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ContractTerms, Location, Order, Period, Supplier, TOLERANCE};
use crate::error::{Error, Result};

const EARTH_RADIUS_MILES: f64 = 3958.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    /// Order side: great-circle distance to the supplier, miles.
    Location,
    /// Order side: supplier scale label.
    Size,
    /// Order side: supplier rating (1..5).
    Rating,
    /// Order side: quoted price.
    Price,
    /// Supplier side: requested material label.
    Material,
    /// Supplier side: periods until the order is due.
    Urgency,
    /// Supplier side: revenue from the contract.
    Revenue,
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Attribute::Location => "location",
            Attribute::Size => "size",
            Attribute::Rating => "rating",
            Attribute::Price => "price",
            Attribute::Material => "material",
            Attribute::Urgency => "urgency",
            Attribute::Revenue => "revenue",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RawValue<'a> {
    Number(f64),
    Label(&'a str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttributeUtility {
    Polynomial {
        /// `(a, b, c)` of `a x^2 + b x + c`.
        coefficients: [f64; 3],
        range: [f64; 2],
    },
    Categorical {
        values: BTreeMap<String, f64>,
    },
}

impl AttributeUtility {
    pub fn polynomial(a: f64, b: f64, c: f64, lo: f64, hi: f64) -> Self {
        AttributeUtility::Polynomial {
            coefficients: [a, b, c],
            range: [lo, hi],
        }
    }

    pub fn categorical<'a, I>(values: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        AttributeUtility::Categorical {
            values: values.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn eval(&self, attribute: Attribute, raw: RawValue<'_>) -> Result<f64> {
        match (self, raw) {
            (
                AttributeUtility::Polynomial {
                    coefficients: [a, b, c],
                    range: [lo, hi],
                },
                RawValue::Number(v),
            ) => {
                let span = hi - lo;
                let x = if span.abs() < TOLERANCE {
                    0.0
                } else {
                    ((v - lo) / span).clamp(0.0, 1.0)
                };
                Ok((a * x * x + b * x + c).clamp(0.0, 1.0))
            }
            (AttributeUtility::Categorical { values }, RawValue::Label(label)) => values
                .get(label)
                .map(|v| v.clamp(0.0, 1.0))
                .ok_or_else(|| Error::UnknownLabel {
                    attribute: attribute.to_string(),
                    label: label.to_string(),
                }),
            (AttributeUtility::Polynomial { .. }, RawValue::Label(_)) => Err(Error::WrongValueKind {
                attribute: attribute.to_string(),
                expected: "numeric",
            }),
            (AttributeUtility::Categorical { .. }, RawValue::Number(_)) => Err(Error::WrongValueKind {
                attribute: attribute.to_string(),
                expected: "label",
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedAttribute {
    pub attribute: Attribute,
    pub utility: AttributeUtility,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceModel {
    pub attributes: Vec<WeightedAttribute>,
}

impl PreferenceModel {
    pub fn new(attributes: Vec<WeightedAttribute>) -> Self {
        PreferenceModel { attributes }
    }

    pub fn validate(&self) -> Result<()> {
        let mut sum = 0.0;
        for a in &self.attributes {
            if a.weight < 0.0 {
                return Err(Error::NegativeWeight {
                    attribute: a.attribute.to_string(),
                    weight: a.weight,
                });
            }
            sum += a.weight;
        }
        if (sum - 1.0).abs() > TOLERANCE {
            return Err(Error::WeightSum { sum });
        }
        Ok(())
    }

    /// Weighted sum of attribute utilities, looking raw values up through `raw`.
    pub fn evaluate<'a, F>(&self, mut raw: F) -> Result<f64>
    where
        F: FnMut(Attribute) -> Result<RawValue<'a>>,
    {
        self.validate()?;
        let mut total = 0.0;
        for a in &self.attributes {
            total += a.weight * a.utility.eval(a.attribute, raw(a.attribute)?)?;
        }
        Ok(total.clamp(0.0, 1.0))
    }
}

pub fn haversine_miles(a: Location, b: Location) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_MILES * h.sqrt().min(1.0).asin()
}

fn raw_value<'a>(
    attribute: Attribute,
    order: &'a Order,
    supplier: &'a Supplier,
    terms: &'a ContractTerms,
    current: Option<Period>,
) -> Result<RawValue<'a>> {
    Ok(match attribute {
        Attribute::Location => RawValue::Number(haversine_miles(order.location, supplier.location)),
        Attribute::Size => RawValue::Label(supplier.scale.label()),
        Attribute::Rating => RawValue::Number(supplier.rating),
        Attribute::Price | Attribute::Revenue => RawValue::Number(terms.price),
        Attribute::Material => RawValue::Label(&terms.material),
        Attribute::Urgency => match current {
            Some(now) => RawValue::Number(now.until(terms.due) as f64),
            None => {
                return Err(Error::WrongValueKind {
                    attribute: attribute.to_string(),
                    expected: "supplier-side",
                })
            }
        },
    })
}

/// The order's utility for a contract with `supplier` under `terms`.
pub fn order_utility(order: &Order, supplier: &Supplier, terms: &ContractTerms) -> Result<f64> {
    order
        .prefs
        .evaluate(|attr| raw_value(attr, order, supplier, terms, None))
}

/// The supplier's utility for a contract with `order` under `terms`, evaluated at `current`.
pub fn supplier_utility(supplier: &Supplier, order: &Order, terms: &ContractTerms, current: Period) -> Result<f64> {
    supplier
        .prefs
        .evaluate(|attr| raw_value(attr, order, supplier, terms, Some(current)))
}
