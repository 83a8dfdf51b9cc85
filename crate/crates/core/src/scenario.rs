//! World geometry, drone fleet and the surveillance buffer.
//!
//! Scenarios are stored as TOML. Positions are in kilometers, battery
//! capacity in mAh, voltage in volts, remaining energy in joules.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::{EnergyParams, MAH_VOLT_TO_JOULE};
use crate::error::{invalid, Error, Result};

/// A point in the world frame, kilometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Position { x, y, z }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(invalid(field, "coordinates must be finite"));
        }
        if self.z < 0.0 {
            return Err(invalid(field, format!("altitude must be >= 0, got {}", self.z)));
        }
        Ok(())
    }

    fn inside(&self, map_side: f64) -> bool {
        (0.0..=map_side).contains(&self.x) && (0.0..=map_side).contains(&self.y)
    }
}

/// Published airframe specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneSpec {
    pub model_name: String,
    /// Grams.
    pub weight: f64,
    /// km/h.
    pub max_speed: f64,
    /// Minutes.
    pub max_flight_time: f64,
    /// mAh.
    pub battery_capacity: f64,
    /// Volts.
    pub battery_voltage: f64,
}

impl DroneSpec {
    pub fn phantom4_pro() -> Self {
        DroneSpec {
            model_name: "Phantom4 PRO".into(),
            weight: 1388.0,
            max_speed: 72.0,
            max_flight_time: 30.0,
            battery_capacity: 5870.0,
            battery_voltage: 15.2,
        }
    }

    pub fn mavic2() -> Self {
        DroneSpec {
            model_name: "Mavic 2".into(),
            weight: 907.0,
            max_speed: 72.0,
            max_flight_time: 31.0,
            battery_capacity: 2970.0,
            battery_voltage: 7.6,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().replace([' ', '_'], "-").as_str() {
            "phantom4-pro" | "phantom4" => Some(Self::phantom4_pro()),
            "mavic-2" | "mavic2" => Some(Self::mavic2()),
            _ => None,
        }
    }

    pub fn max_speed_mps(&self) -> f64 {
        self.max_speed / 3.6
    }

    /// Full pack energy in joules.
    pub fn pack_energy(&self) -> f64 {
        self.battery_capacity * self.battery_voltage * MAH_VOLT_TO_JOULE
    }

    fn validate(&self, field: &str) -> Result<()> {
        let numeric = [
            ("weight", self.weight),
            ("max_speed", self.max_speed),
            ("max_flight_time", self.max_flight_time),
            ("battery_capacity", self.battery_capacity),
            ("battery_voltage", self.battery_voltage),
        ];
        for (name, v) in numeric {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(
                    format!("{field}.{name}"),
                    format!("must be > 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// A data hand-over request broadcast by the surveillance drone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRequest {
    /// Megabytes.
    pub data_amount: f64,
    /// Seconds.
    pub max_latency: f64,
    /// Megabits per second.
    #[serde(default = "default_link_rate")]
    pub link_rate: f64,
    /// Meters.
    #[serde(default = "default_link_range")]
    pub link_range: f64,
}

fn default_link_rate() -> f64 {
    250.0
}

fn default_link_range() -> f64 {
    200.0
}

impl DeliveryRequest {
    pub fn new(data_amount: f64, max_latency: f64) -> Self {
        DeliveryRequest {
            data_amount,
            max_latency,
            link_rate: default_link_rate(),
            link_range: default_link_range(),
        }
    }

    /// Seconds to move the payload over the link.
    pub fn transfer_time(&self) -> f64 {
        self.data_amount * 8.0 / self.link_rate
    }

    /// False when the latency budget is already spent on the transfer, in
    /// which case no drone can serve the request.
    pub fn is_satisfiable(&self) -> bool {
        self.max_latency > self.transfer_time()
    }

    fn validate(&self) -> Result<()> {
        if !(self.data_amount.is_finite() && self.data_amount > 0.0) {
            return Err(invalid("request.data_amount", "must be > 0"));
        }
        if !(self.max_latency.is_finite() && self.max_latency >= 0.0) {
            return Err(invalid("request.max_latency", "must be >= 0"));
        }
        if !(self.link_rate > 0.0) {
            return Err(invalid("request.link_rate", "must be > 0"));
        }
        if !(self.link_range > 0.0) {
            return Err(invalid("request.link_range", "must be > 0"));
        }
        Ok(())
    }
}

/// Finite FIFO buffer of the surveillance drone, megabytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurveillanceQueue {
    pub capacity: f64,
    pub backlog: f64,
    /// Data captured per step.
    pub arrival_rate: f64,
    /// Cumulative data lost to overflow.
    #[serde(default)]
    pub dropped: f64,
}

impl SurveillanceQueue {
    pub fn new(capacity: f64, backlog: f64, arrival_rate: f64) -> Result<Self> {
        let q = SurveillanceQueue {
            capacity,
            backlog,
            arrival_rate,
            dropped: 0.0,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(invalid("queue.capacity", "must be > 0"));
        }
        if !(self.backlog >= 0.0 && self.backlog <= self.capacity) {
            return Err(invalid(
                "queue.backlog",
                format!("must be in [0, {}], got {}", self.capacity, self.backlog),
            ));
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate >= 0.0) {
            return Err(invalid("queue.arrival_rate", "must be >= 0"));
        }
        Ok(())
    }
}

/// Advances the buffer by one step. Served data leaves only when a drone was
/// scheduled; overflow beyond capacity is dropped and counted.
pub fn queue_step(q: &SurveillanceQueue, served: f64, scheduled: bool) -> SurveillanceQueue {
    let served = if scheduled { served.max(0.0) } else { 0.0 };
    let raw = q.backlog - served + q.arrival_rate;
    let overflow = (raw - q.capacity).max(0.0);
    SurveillanceQueue {
        backlog: raw.clamp(0.0, q.capacity),
        dropped: q.dropped + overflow,
        ..*q
    }
}

/// Length in km of the path drone → surveillance drone → base station.
pub fn round_trip_distance(drone: &Position, surveillance: &Position, base: &Position) -> f64 {
    drone.distance(surveillance) + surveillance.distance(base)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurveillanceDrone {
    pub position: Position,
    pub spec: DroneSpec,
    pub queue: Option<SurveillanceQueue>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliveryDrone {
    pub position: Position,
    pub spec: DroneSpec,
    /// Joules.
    pub remaining_energy: f64,
    /// Ground demand in the drone's service area, in [0, 1].
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    /// Side of the square map, km.
    pub map_side: f64,
    pub surveillance: SurveillanceDrone,
    pub delivery_drones: Vec<DeliveryDrone>,
    pub base_stations: Vec<Position>,
    pub request: DeliveryRequest,
    pub energy: EnergyParams,
    /// Charge the hand-over hover time to the mission energy.
    pub transfer_hover: bool,
    pub rng_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.map_side.is_finite() && self.map_side > 0.0) {
            return Err(invalid("map_side", "must be > 0"));
        }
        self.surveillance.position.validate("surveillance.position")?;
        if !self.surveillance.position.inside(self.map_side) {
            return Err(invalid("surveillance.position", "outside the map"));
        }
        self.surveillance.spec.validate("surveillance.spec")?;
        if let Some(q) = &self.surveillance.queue {
            q.validate()?;
        }
        if self.base_stations.is_empty() {
            return Err(invalid("base_stations", "at least one base station is required"));
        }
        for (i, b) in self.base_stations.iter().enumerate() {
            b.validate(&format!("base_stations[{i}]"))?;
        }
        for (i, d) in self.delivery_drones.iter().enumerate() {
            let field = format!("delivery_drones[{i}]");
            d.position.validate(&format!("{field}.position"))?;
            if !d.position.inside(self.map_side) {
                return Err(invalid(format!("{field}.position"), "outside the map"));
            }
            d.spec.validate(&format!("{field}.spec"))?;
            if !(d.remaining_energy >= 0.0 && d.remaining_energy <= d.spec.pack_energy()) {
                return Err(invalid(
                    format!("{field}.remaining_energy"),
                    format!("must be in [0, {}] J", d.spec.pack_energy()),
                ));
            }
            if !(0.0..=1.0).contains(&d.demand) {
                return Err(invalid(format!("{field}.demand"), "must be in [0, 1]"));
            }
        }
        self.request.validate()?;
        self.energy.validate()?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let scenario = file.resolve()?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> String {
        let file = ScenarioFile::from(self);
        toml::to_string(&file).expect("scenario serializes")
    }

    /// The bundled reference deployment: 15 delivery drones and 4 edge base
    /// stations on a 7 km map.
    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED_SCENARIO).expect("bundled scenario is valid")
    }
}

pub const BUNDLED_SCENARIO: &str = include_str!("../data/reference_scenario.toml");

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::from_toml_str(&text)
}

// On-disk layout. Drone specs may be given inline or by preset name.

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SpecRef {
    Preset(String),
    Inline(DroneSpec),
}

impl SpecRef {
    fn resolve(self, field: &str) -> Result<DroneSpec> {
        match self {
            SpecRef::Inline(spec) => Ok(spec),
            SpecRef::Preset(name) => DroneSpec::preset(&name)
                .ok_or_else(|| invalid(field, format!("unknown drone preset '{name}'"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurveillanceFile {
    position: Position,
    spec: SpecRef,
    #[serde(skip_serializing_if = "Option::is_none")]
    queue: Option<SurveillanceQueue>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeliveryDroneFile {
    position: Position,
    spec: SpecRef,
    remaining_energy: f64,
    demand: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    map_side: f64,
    #[serde(default)]
    rng_seed: u64,
    #[serde(default = "default_true")]
    transfer_hover: bool,
    request: DeliveryRequest,
    #[serde(skip_serializing_if = "Option::is_none")]
    energy: Option<EnergyParams>,
    surveillance: SurveillanceFile,
    base_stations: Vec<Position>,
    #[serde(default)]
    delivery_drones: Vec<DeliveryDroneFile>,
}

fn default_true() -> bool {
    true
}

impl ScenarioFile {
    fn resolve(self) -> Result<Scenario> {
        let delivery_drones = self
            .delivery_drones
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                Ok(DeliveryDrone {
                    position: d.position,
                    spec: d.spec.resolve(&format!("delivery_drones[{i}].spec"))?,
                    remaining_energy: d.remaining_energy,
                    demand: d.demand,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario {
            map_side: self.map_side,
            surveillance: SurveillanceDrone {
                position: self.surveillance.position,
                spec: self.surveillance.spec.resolve("surveillance.spec")?,
                queue: self.surveillance.queue,
            },
            delivery_drones,
            base_stations: self.base_stations,
            request: self.request,
            energy: self.energy.unwrap_or_else(EnergyParams::reference),
            transfer_hover: self.transfer_hover,
            rng_seed: self.rng_seed,
        })
    }
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        ScenarioFile {
            map_side: s.map_side,
            rng_seed: s.rng_seed,
            transfer_hover: s.transfer_hover,
            request: s.request,
            energy: Some(s.energy),
            surveillance: SurveillanceFile {
                position: s.surveillance.position,
                spec: SpecRef::Inline(s.surveillance.spec.clone()),
                queue: s.surveillance.queue,
            },
            base_stations: s.base_stations.clone(),
            delivery_drones: s
                .delivery_drones
                .iter()
                .map(|d| DeliveryDroneFile {
                    position: d.position,
                    spec: SpecRef::Inline(d.spec.clone()),
                    remaining_energy: d.remaining_energy,
                    demand: d.demand,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bundled_scenario_loads() {
        let s = Scenario::bundled();
        assert_eq!(s.surveillance.position, Position::new(3.5, 3.5, 0.15));
        assert_eq!(s.delivery_drones.len(), 15);
        assert_eq!(s.base_stations.len(), 4);
        assert_eq!(
            s.delivery_drones[0].position,
            Position::new(5.3891, 6.4843, 0.1018)
        );
    }

    #[test]
    fn rejects_missing_base_stations() {
        let mut text = BUNDLED_SCENARIO.to_string();
        let start = text.find("[[base_stations]]").unwrap();
        let end = text.find("[[delivery_drones]]").unwrap();
        text.replace_range(start..end, "");
        text = text.replacen(
            "transfer_hover = true",
            "transfer_hover = true\nbase_stations = []",
            1,
        );
        let err = Scenario::from_toml_str(&text).unwrap_err();
        assert!(
            matches!(err, Error::Validation { ref field, .. } if field == "base_stations"),
            "{err}"
        );
    }

    #[test]
    fn rejects_overfull_queue() {
        let text = BUNDLED_SCENARIO.replace("backlog = 1200.0", "backlog = 9000.0");
        let err = Scenario::from_toml_str(&text).unwrap_err();
        assert!(
            matches!(err, Error::Validation { ref field, .. } if field == "queue.backlog"),
            "{err}"
        );
    }

    #[test]
    fn rejects_malformed_file() {
        assert!(matches!(
            Scenario::from_toml_str("map_side = ["),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn rejects_drone_outside_map() {
        let text = BUNDLED_SCENARIO.replacen("x = 5.3891", "x = 7.3891", 1);
        assert!(Scenario::from_toml_str(&text).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::bundled();
        let again = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn load_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(&path, BUNDLED_SCENARIO).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), load_scenario(&path).unwrap());
        assert!(matches!(
            load_scenario(dir.path().join("nope.toml")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn round_trip_distance_cases() {
        let s = Position::new(3.0, 4.0, 0.0);
        assert_eq!(round_trip_distance(&s, &s, &s), 0.0);
        assert_eq!(round_trip_distance(&Position::new(0.0, 0.0, 0.0), &s, &s), 5.0);
    }

    #[test]
    fn round_trip_distance_first_drone() {
        // Drone 1 (5.3891, 6.4843, 0.1018) to the surveillance drone, then on
        // to base station 1 at (6.5, 0.5, 0.07); legs summed by hand:
        //   sqrt(1.8891² + 2.9843² + 0.0482²) = 3.532289...
        //   sqrt(3.0² + 3.0² + 0.08²)         = 4.243395...
        let s = Scenario::bundled();
        let d = round_trip_distance(
            &s.delivery_drones[0].position,
            &s.surveillance.position,
            &s.base_stations[0],
        );
        let leg1 = (1.8891f64.powi(2) + 2.9843f64.powi(2) + 0.0482f64.powi(2)).sqrt();
        let leg2 = (18.0f64 + 0.0064).sqrt();
        assert!((d - (leg1 + leg2)).abs() < 1e-12);
        assert!((d - 7.775_684).abs() < 1e-6);
    }

    #[test]
    fn queue_examples() {
        let q = SurveillanceQueue::new(100.0, 10.0, 2.0).unwrap();
        assert_eq!(queue_step(&q, 5.0, false).backlog, 12.0);
        let q = SurveillanceQueue::new(100.0, 10.0, 0.0).unwrap();
        assert_eq!(queue_step(&q, 10.0, true).backlog, 0.0);
        let q = SurveillanceQueue::new(50.0, 50.0, 5.0).unwrap();
        let next = queue_step(&q, 0.0, false);
        assert_eq!((next.backlog, next.dropped), (50.0, 5.0));
    }

    /// Step-by-step reference for the clamping rule, kept separate from
    /// `queue_step`: returns (backlog, dropped) after each step.
    fn simulate_queue(capacity: f64, start: f64, lambda: f64, steps: &[(f64, bool)]) -> (f64, f64) {
        let (mut backlog, mut dropped) = (start, 0.0);
        for &(served, scheduled) in steps {
            if scheduled {
                backlog -= served;
            }
            backlog += lambda;
            if backlog < 0.0 {
                backlog = 0.0;
            } else if backlog > capacity {
                dropped += backlog - capacity;
                backlog = capacity;
            }
        }
        (backlog, dropped)
    }

    proptest! {
        #[test]
        fn queue_stays_within_capacity(
            cap in 1.0f64..500.0,
            frac in 0.0f64..=1.0,
            lambda in 0.0f64..50.0,
            steps in prop::collection::vec((0.0f64..100.0, any::<bool>()), 0..60),
        ) {
            let mut q = SurveillanceQueue::new(cap, cap * frac, lambda).unwrap();
            for &(served, scheduled) in &steps {
                q = queue_step(&q, served, scheduled);
                prop_assert!(q.backlog >= 0.0 && q.backlog <= cap);
            }
            let (b, d) = simulate_queue(cap, cap * frac, lambda, &steps);
            prop_assert!((q.backlog - b).abs() < 1e-9);
            prop_assert!((q.dropped - d).abs() < 1e-6);
        }

        #[test]
        fn round_trip_symmetry_and_triangle(
            a in prop::array::uniform3(0.0f64..7.0),
            s in prop::array::uniform3(0.0f64..7.0),
            b in prop::array::uniform3(0.0f64..7.0),
        ) {
            let (a, s, b) = (
                Position::new(a[0], a[1], a[2]),
                Position::new(s[0], s[1], s[2]),
                Position::new(b[0], b[1], b[2]),
            );
            let fwd = round_trip_distance(&a, &s, &b);
            prop_assert!((fwd - round_trip_distance(&b, &s, &a)).abs() < 1e-12);
            prop_assert!(fwd + 1e-12 >= a.distance(&b));
        }
    }
}
