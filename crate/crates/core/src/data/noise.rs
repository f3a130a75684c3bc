use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::savgol::{savgol, SgFilterSpec};
use crate::error::{Error, Result};
use crate::systems::Trajectory;

/// Zero-mean Gaussian measurement noise on the observed state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation, in state units.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Adds i.i.d. `N(0, σ²)` to the `x` row only. Derivative rows are left as
/// they are; re-estimate them with [`smooth_trajectory`].
pub fn add_noise(traj: &Trajectory, spec: &NoiseSpec) -> Result<Trajectory> {
    spec.validate()?;
    let mut out = traj.clone();
    out.meta.seed = Some(spec.seed);
    if spec.sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for x in out.derivs[0].iter_mut() {
        *x += normal.sample(&mut rng);
    }
    Ok(out)
}

/// Replaces every derivative row by the Savitzky–Golay estimate computed
/// from the `x` row. `filter.deriv_order` is ignored.
pub fn smooth_trajectory(traj: &Trajectory, filter: &SgFilterSpec) -> Result<Trajectory> {
    let spec = SgFilterSpec {
        dt: traj.dt,
        ..*filter
    };
    let mut out = traj.clone();
    let x = traj.x().to_vec();
    for (k, row) in out.derivs.iter_mut().enumerate() {
        *row = savgol(&x, &spec.with_deriv(k))?;
    }
    Ok(out)
}
