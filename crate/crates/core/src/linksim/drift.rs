use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{ClockModel, PolarizationModel};

/// Brownian component sampled lazily on a fixed grid and linearly interpolated,
/// so the trajectory is continuous and reproducible regardless of query order.
#[derive(Debug, Clone)]
struct Walk {
    step_s: f64,
    sigma_per_step: f64,
    values: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Walk {
    fn new(step_s: f64, density_per_sqrt_s: f64, rng: ChaCha8Rng) -> Self {
        Self {
            step_s,
            sigma_per_step: density_per_sqrt_s * step_s.sqrt(),
            values: vec![0.0],
            rng,
        }
    }

    fn at(&mut self, t_s: f64) -> f64 {
        if self.sigma_per_step == 0.0 || t_s <= 0.0 {
            return 0.0;
        }
        let x = t_s / self.step_s;
        let i = x.floor() as usize;
        while self.values.len() < i + 2 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let last = *self.values.last().expect("non-empty");
            self.values.push(last + self.sigma_per_step * z);
        }
        let f = x - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }
}

/// Offset of a station clock relative to true time.
#[derive(Debug, Clone)]
pub struct ClockTrajectory {
    model: ClockModel,
    walk: Walk,
}

impl ClockTrajectory {
    pub fn new(model: ClockModel, rng: ChaCha8Rng) -> Self {
        let density = model.random_walk_ps_per_sqrt_s;
        Self {
            model,
            walk: Walk::new(0.05, density, rng),
        }
    }

    pub fn offset_ps(&mut self, t_s: f64) -> f64 {
        self.model.deterministic_offset_ps(t_s) + self.walk.at(t_s)
    }

    pub fn model(&self) -> &ClockModel {
        &self.model
    }
}

/// Misalignment angle of the polarization state arriving at a station.
#[derive(Debug, Clone)]
pub struct PolarizationTrajectory {
    model: PolarizationModel,
    walk: Walk,
}

impl PolarizationTrajectory {
    pub fn new(model: PolarizationModel, rng: ChaCha8Rng) -> Self {
        let density = model.random_walk_rad_per_sqrt_h / 3600f64.sqrt();
        Self {
            model,
            walk: Walk::new(1.0, density, rng),
        }
    }

    pub fn angle_rad(&mut self, t_s: f64) -> f64 {
        if !self.model.enabled {
            return 0.0;
        }
        let rate = std::f64::consts::FRAC_PI_2 / (self.model.rotation_time_h * 3600.0);
        self.model.initial_angle_rad + rate * t_s + self.walk.at(t_s)
    }

    pub fn model(&self) -> &PolarizationModel {
        &self.model
    }
}
