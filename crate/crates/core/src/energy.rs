//! Rotary-wing propulsion power and energy.
//!
//! The profile/induced/parasite decomposition follows the standard
//! rotary-wing model: hovering draws `P_o + P_i`; forward flight at speed `V`
//! scales the blade-profile term with the advance ratio, shrinks the induced
//! term and adds a cubic fuselage-drag term.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Joules per mAh·V.
pub const MAH_VOLT_TO_JOULE: f64 = 3.6;

/// Aerodynamic constants of a rotary-wing airframe. SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    /// Aircraft weight, N.
    pub weight: f64,
    /// Rotor radius, m.
    pub rotor_radius: f64,
    /// Rotor disc area, m².
    pub disc_area: f64,
    pub blade_count: u32,
    pub rotor_solidity: f64,
    /// Blade angular velocity, rad/s.
    pub blade_angular_velocity: f64,
    /// Tip speed of the rotor blade, m/s.
    pub tip_speed: f64,
    pub fuselage_drag_ratio: f64,
    /// Air density, kg/m³.
    pub air_density: f64,
    /// Mean rotor-induced velocity in hover, m/s.
    pub induced_velocity: f64,
    pub profile_drag: f64,
    /// Incremental correction factor to induced power.
    pub induced_power_factor: f64,
}

/// The two components of hover power, in watts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoverPower {
    pub profile: f64,
    pub induced: f64,
}

impl HoverPower {
    pub fn total(&self) -> f64 {
        self.profile + self.induced
    }
}

impl EnergyParams {
    /// Builds a parameter set from primary rotor quantities, deriving disc
    /// area `πR²`, tip speed `ΩR`, fuselage drag ratio `0.0151/(sA)` and hover
    /// induced velocity `sqrt(W/(2ρA))`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_rotor(
        weight: f64,
        rotor_radius: f64,
        blade_count: u32,
        rotor_solidity: f64,
        blade_angular_velocity: f64,
        air_density: f64,
        profile_drag: f64,
        induced_power_factor: f64,
    ) -> Result<Self> {
        let disc_area = std::f64::consts::PI * rotor_radius * rotor_radius;
        let params = EnergyParams {
            weight,
            rotor_radius,
            disc_area,
            blade_count,
            rotor_solidity,
            blade_angular_velocity,
            tip_speed: blade_angular_velocity * rotor_radius,
            fuselage_drag_ratio: 0.0151 / (rotor_solidity * disc_area),
            air_density,
            induced_velocity: (weight / (2.0 * air_density * disc_area)).sqrt(),
            profile_drag,
            induced_power_factor,
        };
        params.validate()?;
        Ok(params)
    }

    /// Reference airframe: 8 N, 0.4 m rotor, 4 blades, solidity 0.05,
    /// 300 rad/s, sea-level air, δ = 0.012, k = 0.1.
    pub fn reference() -> Self {
        Self::from_rotor(8.0, 0.4, 4, 0.05, 300.0, 1.225, 0.012, 0.1).expect("reference parameters are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("weight", self.weight),
            ("rotor_radius", self.rotor_radius),
            ("disc_area", self.disc_area),
            ("blade_count", self.blade_count as f64),
            ("rotor_solidity", self.rotor_solidity),
            ("blade_angular_velocity", self.blade_angular_velocity),
            ("tip_speed", self.tip_speed),
            ("fuselage_drag_ratio", self.fuselage_drag_ratio),
            ("air_density", self.air_density),
            ("induced_velocity", self.induced_velocity),
            ("profile_drag", self.profile_drag),
            ("induced_power_factor", self.induced_power_factor),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(
                    format!("energy.{field}"),
                    format!("must be > 0, got {value}"),
                ));
            }
        }
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        let r = self.rotor_radius;
        if rel(self.disc_area, std::f64::consts::PI * r * r) > 1e-6 {
            return Err(invalid("energy.disc_area", "must equal πR²"));
        }
        if rel(self.tip_speed, self.blade_angular_velocity * r) > 1e-6 {
            return Err(invalid("energy.tip_speed", "must equal ΩR"));
        }
        let v0 = (self.weight / (2.0 * self.air_density * self.disc_area)).sqrt();
        if rel(self.induced_velocity, v0) > 1e-2 {
            return Err(invalid("energy.induced_velocity", "must equal sqrt(W/(2ρA))"));
        }
        Ok(())
    }

    pub fn hover_power(&self) -> HoverPower {
        let omega_r = self.blade_angular_velocity * self.rotor_radius;
        let profile = self.profile_drag / 8.0
            * self.air_density
            * self.rotor_solidity
            * self.disc_area
            * omega_r.powi(3);
        let induced = (1.0 + self.induced_power_factor) * self.weight.powf(1.5)
            / (2.0 * self.air_density * self.disc_area).sqrt();
        HoverPower { profile, induced }
    }

    /// Propulsion power in level flight at `speed` m/s.
    pub fn flight_power(&self, speed: f64) -> f64 {
        let HoverPower { profile, induced } = self.hover_power();
        let v2 = speed * speed;
        let v0_2 = self.induced_velocity * self.induced_velocity;
        let blade = profile * (1.0 + 3.0 * v2 / (self.tip_speed * self.tip_speed));
        // Clamped at zero: for large V the difference is a tiny positive number
        // that can round below zero.
        let bracket = ((1.0 + v2 * v2 / (4.0 * v0_2 * v0_2)).sqrt() - v2 / (2.0 * v0_2)).max(0.0);
        let induced = induced * bracket.sqrt();
        let parasite = 0.5
            * self.fuselage_drag_ratio
            * self.air_density
            * self.rotor_solidity
            * self.disc_area
            * speed.powi(3);
        blade + induced + parasite
    }

    /// Energy in joules for `duration` seconds of flight at `speed` m/s.
    pub fn flight_energy(&self, duration: f64, speed: f64) -> f64 {
        duration * self.flight_power(speed)
    }
}

/// Slowest constant speed that covers `distance` meters in `t_fly` seconds.
pub fn min_velocity(distance: f64, t_fly: f64) -> Result<f64> {
    if !(t_fly > 0.0) {
        return Err(Error::Infeasible(format!(
            "no flight time left (t_fly = {t_fly} s)"
        )));
    }
    Ok(distance / t_fly)
}

/// Energy to fly `distance` meters at `speed` plus `hover_overhead` seconds
/// of hover.
pub fn mission_energy(params: &EnergyParams, distance: f64, speed: f64, hover_overhead: f64) -> Result<f64> {
    let hover = params.hover_power().total() * hover_overhead;
    if distance == 0.0 {
        return Ok(hover);
    }
    if !(speed > 0.0) {
        return Err(Error::Infeasible(format!(
            "cannot cover {distance} m at speed {speed}"
        )));
    }
    Ok(params.flight_energy(distance / speed, speed) + hover)
}

/// Battery charge state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    /// mAh.
    pub capacity: f64,
    /// Volts.
    pub voltage: f64,
    pub usable_fraction: f64,
    /// Joules.
    pub remaining: f64,
}

impl BatteryState {
    pub const DEFAULT_USABLE_FRACTION: f64 = 0.8;

    /// A charged pack holding its full usable energy.
    pub fn charged(capacity: f64, voltage: f64) -> Result<Self> {
        let mut state = BatteryState {
            capacity,
            voltage,
            usable_fraction: Self::DEFAULT_USABLE_FRACTION,
            remaining: 0.0,
        };
        state.remaining = state.usable_energy();
        state.validate()?;
        Ok(state)
    }

    pub fn pack_energy(&self) -> f64 {
        self.capacity * self.voltage * MAH_VOLT_TO_JOULE
    }

    pub fn usable_energy(&self) -> f64 {
        self.pack_energy() * self.usable_fraction
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity > 0.0 && self.voltage > 0.0) {
            return Err(invalid("battery", "capacity and voltage must be > 0"));
        }
        if !(self.usable_fraction > 0.0 && self.usable_fraction <= 1.0) {
            return Err(invalid("battery.usable_fraction", "must be in (0, 1]"));
        }
        if !(self.remaining >= 0.0 && self.remaining <= self.usable_energy() * (1.0 + 1e-12)) {
            return Err(invalid(
                "battery.remaining",
                format!("must be in [0, {}] J", self.usable_energy()),
            ));
        }
        Ok(())
    }
}
