//! PI regulation of the adversarial balance: gamma scales L_E^Ad so that
//! the measured discriminator loss tracks a setpoint.

use serde::{Deserialize, Serialize};

pub const K_P: f64 = 0.4;
pub const K_I: f64 = 0.008;
pub const INTEGRAL_CLAMP: f64 = 0.1;
pub const GAMMA_MAX: f64 = 0.02;
/// Default desired L_D^Ad; the workable band is roughly 0.26..0.30.
pub const DEFAULT_SETPOINT: f64 = 0.28;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiController {
    pub setpoint: f64,
    pub kp: f64,
    pub ki: f64,
    integral: f64,
    gamma: f64,
    /// Last control signal u, kept for logging.
    u: f64,
}

impl PiController {
    pub fn new(setpoint: f64) -> Self {
        Self {
            setpoint,
            kp: K_P,
            ki: K_I,
            integral: 0.0,
            gamma: GAMMA_MAX / 2.0,
            u: 0.0,
        }
    }

    /// One regulation step from a measured L_D^Ad. Positive error (loss
    /// below setpoint, discriminator winning) raises gamma.
    pub fn update(&mut self, measured_ld: f64) -> f64 {
        let e = self.setpoint - measured_ld;
        self.integral = (self.integral + e).clamp(-INTEGRAL_CLAMP, INTEGRAL_CLAMP);
        self.u = self.kp * e + self.ki * self.integral;
        self.gamma = GAMMA_MAX / (1.0 + (-50.0 * self.u).exp());
        self.gamma
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn u(&self) -> f64 {
        self.u
    }
}

impl Default for PiController {
    fn default() -> Self {
        Self::new(DEFAULT_SETPOINT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_control_signal_gives_midpoint_gamma() {
        let mut pi = PiController::new(0.28);
        // measured exactly at setpoint with zero integral -> u = 0
        let gamma = pi.update(0.28);
        assert_eq!(pi.u(), 0.0);
        assert!((gamma - 0.01).abs() < 1e-15);
    }

    #[test]
    fn gamma_matches_sigmoid_evaluation() {
        // e = +0.05 with integral already at 0.05:
        // u = 0.4*0.05 + 0.008*(0.05 + 0.05) ... constructed stepwise below
        let mut pi = PiController::new(0.28);
        pi.update(0.23); // e = 0.05, integral = 0.05
        let gamma = pi.update(0.28 - 0.0); // e = 0, integral stays 0.05
        let u: f64 = 0.4 * 0.0 + 0.008 * 0.05;
        let expect = 0.02 / (1.0 + (-50.0 * u).exp());
        assert!((gamma - expect).abs() < 1e-15);

        // direct single-step check of the documented example numbers
        let u: f64 = 0.4 * 0.05 + 0.008 * 0.05;
        assert!((u - 0.0204).abs() < 1e-15);
        let g = 0.02 / (1.0 + (-50.0 * u).exp());
        assert!(g > 0.01 && g < 0.02);
    }

    #[test]
    fn integral_pins_at_clamp() {
        let mut pi = PiController::new(1.0);
        for _ in 0..1000 {
            pi.update(0.0); // e = +1 every step
            assert!(pi.integral().abs() <= INTEGRAL_CLAMP);
        }
        assert_eq!(pi.integral(), INTEGRAL_CLAMP);
        let mut pi = PiController::new(-1.0);
        for _ in 0..1000 {
            pi.update(0.0);
        }
        assert_eq!(pi.integral(), -INTEGRAL_CLAMP);
    }

    #[test]
    fn gamma_bounded_and_monotone_in_u() {
        let pi = PiController::new(0.28);
        let mut last_u = f64::NEG_INFINITY;
        let mut last_g = 0.0;
        for m in [10.0, 1.0, 0.5, 0.28, 0.1, 0.0, -1.0] {
            let mut fresh = PiController::new(0.28);
            let g = fresh.update(m);
            assert!(g > 0.0 && g < GAMMA_MAX);
            if fresh.u() > last_u {
                assert!(g > last_g || last_u == f64::NEG_INFINITY);
            }
            last_u = fresh.u();
            last_g = g;
        }
        let _ = pi;
    }

    #[test]
    fn closed_loop_on_stub_plant_reaches_setpoint() {
        // stub plant: a larger gamma pushes the encoder harder, raising the
        // discriminator loss, so L_D = a + b*gamma with a, b > 0; b is kept
        // below 1/(K_p * dgamma/du|max) = 10 so the discrete loop contracts
        let (a, b) = (0.24, 4.0);
        let mut pi = PiController::new(0.28);
        let mut measured = a + b * pi.gamma();
        for _ in 0..500 {
            let gamma = pi.update(measured);
            measured = a + b * gamma;
        }
        assert!(
            (measured - 0.28).abs() < 0.01,
            "converged to {measured}, wanted 0.28"
        );
    }
}
