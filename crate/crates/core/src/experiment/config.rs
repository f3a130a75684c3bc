use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{NoiseSpec, SgFilterSpec};
use crate::deeponet::{DeepOnetConfig, MaeUnit, PhysicsLossConfig};
use crate::error::{Error, Result};
use crate::io::read_text;
use crate::surrogate::SurrogateConfig;
use crate::systems::{dataset_grids, ControlPolicy, GridEntry, Role, SystemKind, SystemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub kind: SystemKind,
    /// Physical parameters; defaults to the benchmark values of `kind`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<SystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
}

fn default_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridItem {
    pub role: Role,
    pub policy: ControlPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub window: usize,
    pub polyorder: usize,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            window: 51,
            polyorder: 3,
        }
    }
}

/// Which trajectories feed the surrogate in a noisy run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateSource {
    /// Noisy measurements after filtering (the realistic setting).
    Filtered,
    Clean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub sensors: usize,
    pub queries: usize,
    pub surrogate_source: SurrogateSource,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            sensors: 100,
            queries: 200,
            surrogate_source: SurrogateSource::Filtered,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub unit: MaeUnit,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            unit: MaeUnit::Native,
        }
    }
}

/// Everything a run depends on. Two runs with equal configs produce equal
/// artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    /// Explicit grid; the benchmark grid of `system.kind` when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<GridItem>,
    /// Measurement noise; absent for clean runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub operator: DeepOnetConfig,
    #[serde(default)]
    pub physics: PhysicsLossConfig,
    #[serde(default)]
    pub report: ReportSection,
    /// Root for `runs/<hash>`; the CLI flag and environment variable win.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Benchmark settings for `kind`, optionally with noise. Beyond the
    /// generic defaults this picks a filter that keeps the highest filtered
    /// derivative usable at the benchmark noise level, a trunk frequency
    /// matched to the number of oscillations over the horizon, and fewer
    /// surrogate epochs for the long jerk trajectories.
    pub fn for_system(kind: SystemKind, noise_sigma: Option<f64>) -> Self {
        let filter = match kind {
            SystemKind::Pendulum => FilterSection {
                window: 301,
                polyorder: 3,
            },
            SystemKind::DrivenOscillator => FilterSection {
                window: 301,
                polyorder: 5,
            },
            SystemKind::ChaoticJerk => FilterSection {
                window: 2001,
                polyorder: 5,
            },
        };
        let mut operator = DeepOnetConfig::default();
        if kind == SystemKind::DrivenOscillator {
            operator.trunk_frequency = 60.0;
        }
        let mut surrogate = SurrogateConfig::default();
        if kind == SystemKind::ChaoticJerk {
            surrogate.epochs = 50;
        }
        Self {
            system: SystemSection {
                kind,
                params: None,
                horizon: None,
                dt: default_dt(),
                initial_state: None,
            },
            grid: Vec::new(),
            noise: noise_sigma.map(|sigma| NoiseSpec { sigma, seed: 0 }),
            filter,
            dataset: DatasetSection::default(),
            surrogate,
            operator,
            physics: PhysicsLossConfig::default(),
            report: ReportSection::default(),
            output_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?).map_err(|e| match e {
            Error::Config(d) => Error::Config(format!("{}: {d}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// SHA-256 of the canonical (key-sorted) serialization, excluding
    /// `output_dir`, which only says where results go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let value = toml::Value::try_from(&c).expect("config is always serializable");
        let canonical = toml::to_string(&value).expect("value is always serializable");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    /// Sets the data, surrogate and operator seeds to `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(n) = &mut self.noise {
            n.seed = seed;
        }
        self.surrogate.seed = seed;
        self.operator.seed = seed;
    }

    pub fn system_spec(&self) -> SystemSpec {
        self.system
            .params
            .unwrap_or_else(|| SystemSpec::default_for(self.system.kind))
    }

    pub fn horizon(&self) -> f64 {
        self.system
            .horizon
            .unwrap_or_else(|| self.system.kind.default_horizon())
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.system
            .initial_state
            .clone()
            .unwrap_or_else(|| self.system.kind.default_initial_state())
    }

    pub fn grid_entries(&self) -> Vec<GridEntry> {
        if self.grid.is_empty() {
            return dataset_grids(self.system.kind);
        }
        let mut counts = [0usize; 2];
        self.grid
            .iter()
            .map(|g| {
                let slot = &mut counts[(g.role == Role::Test) as usize];
                let index = *slot;
                *slot += 1;
                GridEntry {
                    policy: g.policy,
                    role: g.role,
                    index,
                }
            })
            .collect()
    }

    pub fn filter_spec(&self) -> SgFilterSpec {
        SgFilterSpec::new(self.filter.window, self.filter.polyorder, 0, self.system.dt)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.system_spec();
        if spec.kind() != self.system.kind {
            return Err(Error::Config(format!(
                "system.params describe {} but system.kind is {}",
                spec.kind().name(),
                self.system.kind.name()
            )));
        }
        spec.validate()?;
        if !(self.system.dt > 0.0 && self.system.dt.is_finite()) {
            return Err(Error::Config("system.dt must be positive".into()));
        }
        let steps = crate::systems::steps_for_horizon(self.horizon(), self.system.dt);
        if !(self.horizon() > 0.0) || steps < 2 {
            return Err(Error::Config(format!(
                "horizon {} at dt {} gives no steps to simulate",
                self.horizon(),
                self.system.dt
            )));
        }
        if self.initial_state().len() != self.system.kind.order() {
            return Err(Error::Config(format!(
                "initial_state needs {} values",
                self.system.kind.order()
            )));
        }
        let entries = self.grid_entries();
        for role in [Role::Train, Role::Test] {
            if !entries.iter().any(|e| e.role == role) {
                return Err(Error::Config(format!(
                    "grid has no {} entries",
                    role.name()
                )));
            }
        }
        if let Some(n) = &self.noise {
            n.validate()?;
            self.filter_spec().validate()?;
            if self.filter.polyorder < self.system.kind.order() {
                return Err(Error::Config(format!(
                    "filter polyorder {} cannot estimate derivative {}",
                    self.filter.polyorder,
                    self.system.kind.order()
                )));
            }
        }
        if self.dataset.sensors < 2 || self.dataset.queries < 1 {
            return Err(Error::Config("need sensors >= 2 and queries >= 1".into()));
        }
        self.surrogate.validate()?;
        self.operator.validate()?;
        self.physics.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_stable_hash() {
        let cfg = ExperimentConfig::for_system(SystemKind::Pendulum, Some(0.002));
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_ignores_key_order_and_output_dir() {
        let a = ExperimentConfig::from_toml(
            "[system]\nkind = \"pendulum\"\n[physics]\nw_physics = 0.2\nw_data = 1.0\n",
        )
        .unwrap();
        let mut b = ExperimentConfig::from_toml(
            "[physics]\nw_data = 1.0\nw_physics = 0.2\n[system]\nkind = \"pendulum\"\n",
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.physics.w_physics = 0.3;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml("[system]\nkind = \"chaotic_jerk\"\n").unwrap();
        assert_eq!(cfg.grid_entries().len(), 15);
        assert_eq!(cfg.horizon(), 20.0);
        assert_eq!(cfg.dataset.sensors, 100);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            "[system]\nkind = \"pendulum\"\nhorizon = 0.0\n",
            "[system]\nkind = \"pendulum\"\ninitial_state = [1.0]\n",
            "[system]\nkind = \"pendulum\"\n[physics]\nw_data = 0.0\nw_physics = 0.0\n",
            "[system]\nkind = \"pendulum\"\n[noise]\nsigma = 0.1\nseed = 1\n[filter]\nwindow = 50\n",
            "[system]\nkind = \"pendulum\"\nunknown = 1\n",
            "[system]\nkind = \"pendulum\"\n[system.params]\nkind = \"chaotic_jerk\"\na = 2.0\n",
        ];
        for text in bad {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn explicit_grid() {
        let cfg = ExperimentConfig::from_toml(
            "[system]\nkind = \"pendulum\"\n\
             [[grid]]\nrole = \"train\"\npolicy = { type = \"feedback\", gain = 0.5 }\n\
             [[grid]]\nrole = \"test\"\npolicy = { type = \"feedback\", gain = 0.6 }\n\
             [[grid]]\nrole = \"test\"\npolicy = { type = \"feedback\", gain = 0.7 }\n",
        )
        .unwrap();
        let e = cfg.grid_entries();
        assert_eq!(e.len(), 3);
        assert_eq!((e[2].role, e[2].index), (Role::Test, 1));
    }
}
