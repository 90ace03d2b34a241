use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ContinuousAction, Pose};

/// Forward-Euler unicycle step.
pub fn step_dynamics(pose: Pose, action: ContinuousAction, dt: f64) -> Pose {
    let (s, c) = pose.heading.sin_cos();
    Pose::new(
        pose.x + action.v * c * dt,
        pose.y + action.v * s * dt,
        pose.heading + action.omega * dt,
    )
}

/// Gaussian actuation noise, standard deviations per channel. Zero disables.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuationNoise {
    pub sigma_v: f64,
    pub sigma_omega: f64,
}

impl ActuationNoise {
    pub fn is_off(&self) -> bool {
        self.sigma_v == 0.0 && self.sigma_omega == 0.0
    }
}

/// Unicycle integration with optional seeded actuation noise.
#[derive(Debug, Clone)]
pub struct NoisyDynamics {
    noise: ActuationNoise,
    rng: ChaCha8Rng,
}

impl NoisyDynamics {
    pub fn new(noise: ActuationNoise, seed: u64) -> Self {
        Self {
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn step(&mut self, pose: Pose, action: ContinuousAction, dt: f64) -> Pose {
        if self.noise.is_off() {
            return step_dynamics(pose, action, dt);
        }
        let dv = sample(&mut self.rng, self.noise.sigma_v);
        let dw = sample(&mut self.rng, self.noise.sigma_omega);
        step_dynamics(
            pose,
            ContinuousAction::new(action.v + dv, action.omega + dw),
            dt,
        )
    }
}

fn sample(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
    } else {
        0.0
    }
}
