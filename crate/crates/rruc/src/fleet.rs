//! Generator and fleet data model: validation, file ingestion, replication.
//!
//! A [`Generator`] is one dispatchable unit with a quadratic hourly cost
//! `a·P² + b·P + c` (USD/h) over the output window `[p_min, p_max]` MW.
//! A [`Fleet`] is an ordered collection of generators plus the demand
//! parameters `(D, σ_D)` that define the commitment problem.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// Demand assigned to fleets that carry none of their own (CSV ingestion,
/// replication): `D = 0.8 · Σ p_max`.
pub const DEFAULT_DEMAND_FRACTION: f64 = 0.8;

/// Default demand standard deviation: `σ_D = 0.02 · D`.
pub const DEFAULT_SIGMA_FRACTION: f64 = 0.02;

/// Default multiplicative perturbation when replicating a fleet (±1%).
pub const DEFAULT_DEVIATION: f64 = 0.01;

fn de_blank_zero<'de, D>(de: D) -> std::result::Result<f64, D::Error>
where
    D: serde::Deserializer<'de>,
{
    Ok(Option::<f64>::deserialize(de)?.unwrap_or(0.0))
}

/// One generating unit.
///
/// Cost coefficients satisfy `a ≥ 0`, `b ≥ 0` (convex, nondecreasing cost);
/// `c` is the fixed hourly cost of being committed (no-load cost, optionally
/// with startup amortized in). `startup_cost` and the step-price fields are
/// metadata carried along from the source bid curve for composition
/// statistics; they do not enter the optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    #[serde(rename = "p_min_mw")]
    pub p_min: f64,
    #[serde(rename = "p_max_mw")]
    pub p_max: f64,
    #[serde(rename = "a_usd_per_mw2h")]
    pub a: f64,
    #[serde(rename = "b_usd_per_mwh")]
    pub b: f64,
    #[serde(rename = "c_usd_per_h")]
    pub c: f64,
    #[serde(rename = "startup_usd", default, deserialize_with = "de_blank_zero")]
    pub startup_cost: f64,
    #[serde(default)]
    pub first_step_price: Option<f64>,
    #[serde(default)]
    pub max_step_price: Option<f64>,
}

impl Generator {
    /// Hourly cost of running at output `p`, in USD/h.
    pub fn cost(&self, p: f64) -> f64 {
        self.a * p * p + self.b * p + self.c
    }

    /// Marginal cost `2a·p + b` at output `p`, in USD/MWh.
    pub fn marginal_cost(&self, p: f64) -> f64 {
        2.0 * self.a * p + self.b
    }

    pub fn validate(&self) -> Result<()> {
        let check = |field: &'static str, value: f64| -> Result<()> {
            if !value.is_finite() {
                return Err(Error::Invariant {
                    unit: self.id.clone(),
                    field,
                    detail: format!("must be finite, got {value}"),
                });
            }
            Ok(())
        };
        check("p_min", self.p_min)?;
        check("p_max", self.p_max)?;
        check("a", self.a)?;
        check("b", self.b)?;
        check("c", self.c)?;
        check("startup_cost", self.startup_cost)?;
        let err = |field: &'static str, detail: String| Error::Invariant {
            unit: self.id.clone(),
            field,
            detail,
        };
        if self.p_min < 0.0 {
            return Err(err("p_min", format!("must be >= 0, got {}", self.p_min)));
        }
        if self.p_max <= 0.0 {
            return Err(err("p_max", format!("must be > 0, got {}", self.p_max)));
        }
        if self.p_min > self.p_max {
            return Err(err(
                "p_min",
                format!("p_min {} exceeds p_max {}", self.p_min, self.p_max),
            ));
        }
        if self.a < 0.0 {
            return Err(err("a", format!("must be >= 0, got {}", self.a)));
        }
        if self.b < 0.0 {
            return Err(err("b", format!("must be >= 0, got {}", self.b)));
        }
        Ok(())
    }
}

/// An ordered set of generators plus the demand they must serve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    #[serde(rename = "demand_mw")]
    pub demand: f64,
    #[serde(rename = "sigma_d_mw")]
    pub sigma_d: f64,
    pub generators: Vec<Generator>,
}

impl Fleet {
    /// Build a fleet, validating every generator and the fleet invariants.
    pub fn new(generators: Vec<Generator>, demand: f64, sigma_d: f64) -> Result<Self> {
        let fleet = Fleet {
            demand,
            sigma_d,
            generators,
        };
        fleet.validate()?;
        Ok(fleet)
    }

    /// Build a fleet with the default demand policy:
    /// `D = 0.8 · Σ p_max`, `σ_D = 0.02 · D`.
    pub fn with_default_demand(generators: Vec<Generator>) -> Result<Self> {
        let total: f64 = generators.iter().map(|g| g.p_max).sum();
        let demand = DEFAULT_DEMAND_FRACTION * total;
        Fleet::new(generators, demand, DEFAULT_SIGMA_FRACTION * demand)
    }

    /// Same generators, different demand parameters.
    pub fn with_demand(&self, demand: f64, sigma_d: f64) -> Result<Self> {
        Fleet::new(self.generators.clone(), demand, sigma_d)
    }

    pub fn validate(&self) -> Result<()> {
        for g in &self.generators {
            g.validate()?;
        }
        let mut seen = HashSet::new();
        for g in &self.generators {
            if !seen.insert(g.id.as_str()) {
                return Err(Error::DuplicateId { id: g.id.clone() });
            }
        }
        if !self.demand.is_finite() || self.demand < 0.0 {
            return Err(Error::InvalidParameter {
                name: "demand",
                detail: format!("must be finite and >= 0, got {}", self.demand),
            });
        }
        if !self.sigma_d.is_finite() || self.sigma_d < 0.0 {
            return Err(Error::InvalidParameter {
                name: "sigma_d",
                detail: format!("must be finite and >= 0, got {}", self.sigma_d),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn total_p_max(&self) -> f64 {
        self.generators.iter().map(|g| g.p_max).sum()
    }

    pub fn total_p_min(&self) -> f64 {
        self.generators.iter().map(|g| g.p_min).sum()
    }

    pub fn max_p_max(&self) -> f64 {
        self.generators.iter().fold(0.0, |m, g| m.max(g.p_max))
    }
}

/// Which units the largest-contingency term `max_l p_max,l` ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReservePolicy {
    /// Largest unit anywhere in the fleet (conservative N-1 reading).
    #[default]
    FleetMax,
    /// Largest unit among the committed set only.
    CommittedMax,
}

/// Spinning-reserve requirement `D + 3σ_D + max_l p_max,l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReserveRequirement {
    /// `D + 3σ_D + max p_max` over the whole fleet.
    pub value: f64,
    /// `D + 3σ_D`, before the contingency term.
    pub base: f64,
    pub policy: ReservePolicy,
}

impl ReserveRequirement {
    /// Requirement applicable to a committed set whose largest unit has
    /// capacity `max_committed_pmax`.
    pub fn for_committed_pmax(&self, max_committed_pmax: f64) -> f64 {
        match self.policy {
            ReservePolicy::FleetMax => self.value,
            ReservePolicy::CommittedMax => self.base + max_committed_pmax,
        }
    }
}

/// Compute the reserve requirement for a fleet.
pub fn reserve_requirement(fleet: &Fleet, policy: ReservePolicy) -> Result<ReserveRequirement> {
    if fleet.is_empty() {
        return Err(Error::EmptyFleet);
    }
    let base = fleet.demand + 3.0 * fleet.sigma_d;
    Ok(ReserveRequirement {
        value: base + fleet.max_p_max(),
        base,
        policy,
    })
}

/// Fleet file formats understood by [`load_fleet`] / [`save_fleet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FleetFormat {
    Csv,
    Json,
}

impl FleetFormat {
    /// Pick the format from a file extension; defaults to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => FleetFormat::Json,
            _ => FleetFormat::Csv,
        }
    }
}

/// Load a fleet from disk.
///
/// CSV files carry generators only (header row required); demand is assigned
/// by the default policy and can be overridden afterwards. JSON files carry
/// `demand_mw` and `sigma_d_mw` explicitly. Generator order is file order.
pub fn load_fleet(path: &Path, format: FleetFormat) -> Result<Fleet> {
    match format {
        FleetFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .comment(Some(b'#'))
                .from_path(path)
                .map_err(|e| csv_error(path, None, e))?;
            let mut generators = Vec::new();
            for (i, record) in reader.deserialize::<Generator>().enumerate() {
                generators.push(record.map_err(|e| csv_error(path, Some(i + 1), e))?);
            }
            Fleet::with_default_demand(generators)
        }
        FleetFormat::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            let fleet: Fleet = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                row: None,
                detail: e.to_string(),
            })?;
            fleet.validate()?;
            Ok(fleet)
        }
    }
}

/// Write a fleet to disk in the given format (CSV drops the demand fields).
pub fn save_fleet(fleet: &Fleet, path: &Path, format: FleetFormat) -> Result<()> {
    match format {
        FleetFormat::Csv => {
            let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, None, e))?;
            for g in &fleet.generators {
                writer.serialize(g).map_err(|e| csv_error(path, None, e))?;
            }
            writer.flush().map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
        FleetFormat::Json => {
            let text = serde_json::to_string_pretty(fleet).expect("fleet serializes");
            std::fs::write(path, text).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
    }
}

fn csv_error(path: &Path, row: Option<usize>, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::Io {
                path: path.to_path_buf(),
                source: io,
            };
        }
        unreachable!()
    }
    Error::Parse {
        path: path.to_path_buf(),
        row,
        detail: e.to_string(),
    }
}

/// Replicate a fleet `multiplier` times with independent multiplicative
/// perturbations in `[1 − deviation, 1 + deviation]` on each of
/// `{a, b, c, p_min, p_max}`, drawn from a seeded RNG.
///
/// Replicas are emitted replica-major (the whole base fleet, `multiplier`
/// times) with ids suffixed `-r<replica>`. After perturbation `p_min` is
/// clamped to stay at or below `p_max`. Demand is re-derived with the
/// default policy over the replicated fleet.
pub fn replicate_fleet(
    fleet: &Fleet,
    multiplier: u32,
    deviation: f64,
    seed: u64,
) -> Result<Fleet> {
    if multiplier < 1 {
        return Err(Error::InvalidParameter {
            name: "multiplier",
            detail: "must be >= 1".to_string(),
        });
    }
    if !(0.0..1.0).contains(&deviation) {
        return Err(Error::InvalidParameter {
            name: "deviation",
            detail: format!("must be in [0, 1), got {deviation}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor = move || {
        if deviation == 0.0 {
            1.0
        } else {
            rng.random_range(1.0 - deviation..=1.0 + deviation)
        }
    };
    let mut generators = Vec::with_capacity(fleet.len() * multiplier as usize);
    for replica in 0..multiplier {
        for g in &fleet.generators {
            let a = g.a * factor();
            let b = g.b * factor();
            let c = g.c * factor();
            let p_min = g.p_min * factor();
            let p_max = g.p_max * factor();
            generators.push(Generator {
                id: format!("{}-r{}", g.id, replica),
                p_min: p_min.min(p_max),
                p_max,
                a,
                b,
                c,
                startup_cost: g.startup_cost,
                first_step_price: g.first_step_price,
                max_step_price: g.max_step_price,
            });
        }
    }
    Fleet::with_default_demand(generators)
}
