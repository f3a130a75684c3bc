use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, SurrogateSource};
use super::manifest::RunManifest;
use super::plot::{line_chart, Series};
use crate::data::{
    add_noise, build_operator_dataset, build_operator_dataset_with, build_surrogate_dataset,
    build_surrogate_dataset_with, smooth_trajectory, NoiseSpec, OperatorDataset, SurrogateDataset,
};
use crate::deeponet::{
    evaluate_mae, predict_dataset, reference_mae, train_operator, DeepOnetModel, MaeReport,
    OperatorHistory, PhysicsLossConfig,
};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_text, write_atomic};
use crate::surrogate::{train_surrogate, SurrogateModel};
use crate::systems::{euler_simulate, steps_for_horizon, Role, Trajectory};

/// Environment variable that relocates the output root.
pub const OUTPUT_ROOT_ENV: &str = "MFPI_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Dataset,
    Surrogate,
    Operator,
    Baseline,
    Evaluate,
    Plot,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Simulate,
        Stage::Dataset,
        Stage::Surrogate,
        Stage::Operator,
        Stage::Baseline,
        Stage::Evaluate,
        Stage::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Dataset => "dataset",
            Stage::Surrogate => "train-surrogate",
            Stage::Operator => "train-operator",
            Stage::Baseline => "train-baseline",
            Stage::Evaluate => "evaluate",
            Stage::Plot => "plot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    /// Already complete for this config and `force` was not set.
    Skipped,
}

/// Which model `train` fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    Surrogate,
    Operator,
    Baseline,
}

/// Picks the output root: explicit flag, then environment, then config,
/// then `runs`.
pub fn resolve_output_root(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// A config bound to its run directory `root/<hash>`.
pub struct Run {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    pub force: bool,
    manifest: RunManifest,
}

type StageResult = (Vec<String>, BTreeMap<String, f64>);

impl Run {
    pub fn open(config: ExperimentConfig, output_root: &Path, force: bool) -> Result<Self> {
        config.validate()?;
        let dir = output_root.join(config.short_hash());
        let manifest = RunManifest::open(&dir.join("manifest.toml"), &config.hash())?;
        write_atomic(&dir.join("config.toml"), config.to_toml().as_bytes())?;
        Ok(Self {
            config,
            dir,
            force,
            manifest,
        })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn require(&self, stage: Stage, hint: &str) -> Result<()> {
        if self.manifest.is_done(stage.name()) {
            Ok(())
        } else {
            Err(Error::MissingStage(format!(
                "stage {} has not completed in {}; {hint}",
                stage.name(),
                self.dir.display()
            )))
        }
    }

    fn stage(
        &mut self,
        stage: Stage,
        body: impl FnOnce(&Self) -> Result<StageResult>,
    ) -> Result<StageOutcome> {
        if !self.force && self.manifest.is_done(stage.name()) {
            log::info!("{}: already complete, skipping", stage.name());
            return Ok(StageOutcome::Skipped);
        }
        let (artifacts, metrics) = body(self)?;
        self.manifest.record(stage.name(), artifacts, metrics);
        self.manifest.save(&self.dir.join("manifest.toml"))?;
        log::info!("{}: done", stage.name());
        Ok(StageOutcome::Ran)
    }

    fn trajectory_path(&self, role: Role, index: usize) -> String {
        format!("trajectories/{}/{index:02}.csv", role.name())
    }

    fn load_trajectories(&self, role: Role) -> Result<Vec<Trajectory>> {
        self.config
            .grid_entries()
            .iter()
            .filter(|e| e.role == role)
            .map(|e| Trajectory::load(&self.path(&self.trajectory_path(role, e.index))))
            .collect()
    }

    pub fn simulate(&mut self) -> Result<StageOutcome> {
        self.stage(Stage::Simulate, |run| {
            let cfg = &run.config;
            let system = cfg.system_spec();
            let steps = steps_for_horizon(cfg.horizon(), cfg.system.dt);
            let x0 = cfg.initial_state();
            let mut artifacts = Vec::new();
            let mut failures = Vec::new();
            for e in cfg.grid_entries() {
                match euler_simulate(&system, &e.policy, &x0, cfg.system.dt, steps) {
                    Ok(tr) => {
                        let rel = run.trajectory_path(e.role, e.index);
                        tr.save(&run.path(&rel))?;
                        artifacts.push(rel);
                    }
                    Err(err) => {
                        log::warn!(
                            "{} {} ({}): {err}",
                            e.role.name(),
                            e.index,
                            e.policy.label()
                        );
                        failures.push(format!("{} {}: {err}", e.role.name(), e.index));
                    }
                }
            }
            if !failures.is_empty() {
                return Err(Error::Numeric(format!(
                    "{} simulation(s) failed: {}",
                    failures.len(),
                    failures.join("; ")
                )));
            }
            let metrics = BTreeMap::from([
                ("trajectories".to_string(), artifacts.len() as f64),
                ("steps".to_string(), steps as f64),
            ]);
            Ok((artifacts, metrics))
        })
    }

    /// Trajectories as the learner sees them: noisy and re-filtered when a
    /// noise spec is present, untouched otherwise.
    fn observe(&self, trajs: &[Trajectory], role: Role) -> Result<Vec<Trajectory>> {
        let Some(noise) = self.config.noise else {
            return Ok(trajs.to_vec());
        };
        let filter = self.config.filter_spec();
        let offset = if role == Role::Train { 0 } else { 1_000_000 };
        trajs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let spec = NoiseSpec {
                    sigma: noise.sigma,
                    seed: noise.seed.wrapping_add(offset + i as u64),
                };
                smooth_trajectory(&add_noise(t, &spec)?, &filter)
            })
            .collect()
    }

    pub fn dataset(&mut self) -> Result<StageOutcome> {
        self.require(Stage::Simulate, "run `simulate` first")?;
        self.stage(Stage::Dataset, |run| {
            let cfg = &run.config;
            let n = cfg.system.kind.order();
            let train_clean = run.load_trajectories(Role::Train)?;
            let test_clean = run.load_trajectories(Role::Test)?;
            let train = run.observe(&train_clean, Role::Train)?;
            let test = run.observe(&test_clean, Role::Test)?;
            let sur_source = match cfg.dataset.surrogate_source {
                SurrogateSource::Filtered => &train,
                SurrogateSource::Clean => &train_clean,
            };
            let sur_train = build_surrogate_dataset(sur_source, n)?;
            let sur_test = build_surrogate_dataset_with(&test_clean, n, &sur_train.stats)?;
            let (m, q) = (cfg.dataset.sensors, cfg.dataset.queries);
            let op_train = build_operator_dataset(&train, m, q)?;
            let op_test = build_operator_dataset_with(&test, m, q, &op_train.stats)?
                .with_targets_from(&test_clean)?;
            sur_train.save(&run.path("datasets/surrogate_train.csv"))?;
            sur_test.save(&run.path("datasets/surrogate_test.csv"))?;
            op_train.save(&run.path("datasets/operator_train.csv"))?;
            op_test.save(&run.path("datasets/operator_test.csv"))?;
            let mut metrics = BTreeMap::from([
                (
                    "surrogate_train_samples".to_string(),
                    sur_train.len() as f64,
                ),
                (
                    "surrogate_input_width".to_string(),
                    sur_train.width() as f64,
                ),
                (
                    "operator_train_samples".to_string(),
                    op_train.samples.len() as f64,
                ),
                (
                    "operator_test_samples".to_string(),
                    op_test.samples.len() as f64,
                ),
            ]);
            if cfg.noise.is_some() {
                // how far the filtered highest derivative is from the truth
                let err = filtered_derivative_rmse(&train, &train_clean, n);
                metrics.insert("filtered_target_rmse".into(), err);
            }
            let artifacts = [
                "datasets/surrogate_train.csv",
                "datasets/surrogate_test.csv",
                "datasets/operator_train.csv",
                "datasets/operator_train.controls.csv",
                "datasets/operator_test.csv",
                "datasets/operator_test.controls.csv",
            ]
            .map(String::from)
            .to_vec();
            Ok((artifacts, metrics))
        })
    }

    pub fn train(&mut self, target: TrainTarget) -> Result<StageOutcome> {
        match target {
            TrainTarget::Surrogate => self.train_surrogate(),
            TrainTarget::Operator => self.train_operator(false),
            TrainTarget::Baseline => self.train_operator(true),
        }
    }

    fn train_surrogate(&mut self) -> Result<StageOutcome> {
        self.require(Stage::Dataset, "run `dataset` first")?;
        self.stage(Stage::Surrogate, |run| {
            let train = SurrogateDataset::load(&run.path("datasets/surrogate_train.csv"))?;
            let (model, history) = train_surrogate(&train, &run.config.surrogate)?;
            model.save(&run.path("models/surrogate.txt"))?;
            write_history(
                &run.path("reports/surrogate_history.csv"),
                &[("loss", &history.epoch_loss)],
            )?;
            let test_clean = run.load_trajectories(Role::Test)?;
            let oracle = model.oracle_rmse(&run.config.system_spec(), &test_clean)?;
            let test = SurrogateDataset::load(&run.path("datasets/surrogate_test.csv"))?;
            let target_std = std_of(&test.targets);
            let metrics = BTreeMap::from([
                ("train_mse_normalized".to_string(), model.train_mse),
                (
                    "final_epoch_loss".to_string(),
                    history.epoch_loss.last().copied().unwrap_or(f64::NAN),
                ),
                ("test_oracle_rmse".to_string(), oracle),
                ("test_target_std".to_string(), target_std),
                ("test_oracle_rmse_ratio".to_string(), oracle / target_std),
            ]);
            Ok((
                vec![
                    "models/surrogate.txt".into(),
                    "reports/surrogate_history.csv".into(),
                ],
                metrics,
            ))
        })
    }

    fn train_operator(&mut self, baseline: bool) -> Result<StageOutcome> {
        self.require(Stage::Dataset, "run `dataset` first")?;
        let stage = if baseline {
            Stage::Baseline
        } else {
            Stage::Operator
        };
        if !baseline {
            self.require(Stage::Surrogate, "run `train surrogate` first")?;
        }
        self.stage(stage, |run| {
            let data = OperatorDataset::load(&run.path("datasets/operator_train.csv"))?;
            let physics = if baseline {
                PhysicsLossConfig {
                    w_physics: 0.0,
                    ..run.config.physics
                }
            } else {
                run.config.physics
            };
            let surrogate = if physics.uses_physics() {
                Some(SurrogateModel::load(&run.path("models/surrogate.txt"))?)
            } else {
                None
            };
            let before = surrogate.as_ref().map(|s| s.params.checksum());
            let (model, history) =
                train_operator(&data, surrogate.as_ref(), &run.config.operator, &physics)?;
            if surrogate.as_ref().map(|s| s.params.checksum()) != before {
                return Err(Error::Contract(
                    "surrogate changed during operator training".into(),
                ));
            }
            let name = if baseline { "baseline" } else { "operator" };
            let model_rel = format!("models/{name}.txt");
            let hist_rel = format!("reports/{name}_history.csv");
            model.save(&run.path(&model_rel))?;
            write_operator_history(&run.path(&hist_rel), &history)?;
            let metrics = BTreeMap::from([
                (
                    "final_data_loss".to_string(),
                    history.data.last().copied().unwrap_or(f64::NAN),
                ),
                (
                    "final_physics_loss".to_string(),
                    history.physics.last().copied().unwrap_or(f64::NAN),
                ),
                ("w_physics".to_string(), physics.w_physics),
            ]);
            Ok((vec![model_rel, hist_rel], metrics))
        })
    }

    pub fn evaluate(&mut self) -> Result<StageOutcome> {
        self.require(Stage::Operator, "run `train operator` first")?;
        self.stage(Stage::Evaluate, |run| {
            let unit = run.config.report.unit;
            let test = OperatorDataset::load(&run.path("datasets/operator_test.csv"))?;
            let physics = DeepOnetModel::load(&run.path("models/operator.txt"))?;
            let baseline_path = run.path("models/baseline.txt");
            let baseline = if run.manifest.is_done(Stage::Baseline.name()) && baseline_path.exists()
            {
                Some(DeepOnetModel::load(&baseline_path)?)
            } else {
                log::warn!(
                    "baseline model missing; the report will only cover the physics-informed model"
                );
                None
            };
            let rp = evaluate_mae(&physics, &test, unit)?;
            let rb = baseline
                .as_ref()
                .map(|b| evaluate_mae(b, &test, unit))
                .transpose()?;
            let csv = mae_table(&rp, rb.as_ref());
            write_atomic(&run.path("reports/mae.csv"), csv.as_bytes())?;
            let mut artifacts = vec!["reports/mae.csv".to_string()];

            let pp = predict_dataset(&physics, &test)?;
            let pb = baseline
                .as_ref()
                .map(|b| predict_dataset(b, &test))
                .transpose()?;
            for traj in 0..test.trajectories() {
                let mut s = String::from("t,truth,physics,baseline\n");
                for (i, smp) in test
                    .samples
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.traj == traj)
                {
                    let b = pb.as_ref().map(|p| fmt_f64(p[i])).unwrap_or_default();
                    let _ = writeln!(
                        s,
                        "{},{},{},{b}",
                        fmt_f64(smp.time),
                        fmt_f64(smp.target),
                        fmt_f64(pp[i])
                    );
                }
                let rel = format!("reports/series/{traj:02}.csv");
                write_atomic(&run.path(&rel), s.as_bytes())?;
                artifacts.push(rel);
            }

            let kind = run.config.system.kind;
            let mut summary = String::new();
            let _ = writeln!(summary, "config_hash={}", run.config.hash());
            let _ = writeln!(summary, "system={}", kind.name());
            let _ = writeln!(summary, "noisy={}", run.config.noise.is_some());
            let _ = writeln!(summary, "unit={}", unit.name());
            let _ = writeln!(summary, "mae_physics_mean={}", fmt_f64(rp.mean));
            if let Some(rb) = &rb {
                let _ = writeln!(summary, "mae_baseline_mean={}", fmt_f64(rb.mean));
            }
            if let Some((p, b)) = reference_mae(kind, run.config.noise.is_some()) {
                let _ = writeln!(summary, "reference_mae_physics={p}");
                let _ = writeln!(summary, "reference_mae_baseline={b}");
            }
            write_atomic(&run.path("reports/summary.txt"), summary.as_bytes())?;
            artifacts.push("reports/summary.txt".into());

            let mut metrics = BTreeMap::from([("mae_physics_mean".to_string(), rp.mean)]);
            if let Some(rb) = rb {
                metrics.insert("mae_baseline_mean".into(), rb.mean);
            }
            Ok((artifacts, metrics))
        })
    }

    pub fn plot(&mut self) -> Result<StageOutcome> {
        self.require(Stage::Evaluate, "run `evaluate` first")?;
        self.stage(Stage::Plot, |run| {
            let labels = OperatorDataset::load(&run.path("datasets/operator_test.csv"))?.labels;
            let mut artifacts = Vec::new();
            for (i, label) in labels.iter().enumerate() {
                let series = read_series(&run.path(&format!("reports/series/{i:02}.csv")))?;
                if series.iter().all(|s| s.points.is_empty()) {
                    log::warn!("series {i:02} is empty; no plot");
                    continue;
                }
                let title = format!("{} test {i:02} ({label})", run.config.system.kind.name());
                let svg = line_chart(&title, "t [s]", "x", &series);
                let rel = format!("plots/{i:02}.svg");
                write_atomic(&run.path(&rel), svg.as_bytes())?;
                artifacts.push(rel);
            }
            let metrics = BTreeMap::from([("plots".to_string(), artifacts.len() as f64)]);
            Ok((artifacts, metrics))
        })
    }

    /// Every stage in order.
    pub fn all(&mut self) -> Result<()> {
        self.simulate()?;
        self.dataset()?;
        self.train(TrainTarget::Surrogate)?;
        self.train(TrainTarget::Operator)?;
        self.train(TrainTarget::Baseline)?;
        self.evaluate()?;
        self.plot()?;
        Ok(())
    }
}

fn std_of(v: &[f64]) -> f64 {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

fn filtered_derivative_rmse(filtered: &[Trajectory], clean: &[Trajectory], n: usize) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for (f, c) in filtered.iter().zip(clean) {
        for (a, b) in f.derivs[n].iter().zip(&c.derivs[n]) {
            sum += (a - b).powi(2);
            count += 1;
        }
    }
    (sum / count.max(1) as f64).sqrt()
}

/// One row per test trajectory and a final `mean` row. The baseline column
/// is empty when no baseline was trained.
pub fn mae_table(physics: &MaeReport, baseline: Option<&MaeReport>) -> String {
    let mut s = String::from("dataset,label,mae_physics,mae_baseline\n");
    for (i, (label, p)) in physics.labels.iter().zip(&physics.per_dataset).enumerate() {
        let b = baseline
            .map(|b| fmt_f64(b.per_dataset[i]))
            .unwrap_or_default();
        let _ = writeln!(s, "{i},{label:?},{},{b}", fmt_f64(*p));
    }
    let b = baseline.map(|b| fmt_f64(b.mean)).unwrap_or_default();
    let _ = writeln!(s, "mean,,{},{b}", fmt_f64(physics.mean));
    s
}

fn write_history(path: &Path, columns: &[(&str, &[f64])]) -> Result<()> {
    let mut s = String::from("epoch");
    for (name, _) in columns {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    let len = columns.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for i in 0..len {
        let _ = write!(s, "{i}");
        for (_, c) in columns {
            let _ = write!(s, ",{}", c.get(i).map_or(String::new(), |v| fmt_f64(*v)));
        }
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

fn write_operator_history(path: &Path, h: &OperatorHistory) -> Result<()> {
    write_history(path, &[("data", &h.data), ("physics", &h.physics)])
}

fn read_series(path: &Path) -> Result<Vec<Series<'static>>> {
    let text = read_text(path)?;
    let mut cols: [Vec<(f64, f64)>; 3] = Default::default();
    for (i, line) in text.lines().skip(1).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::format(path, format!("bad series row {i}"));
        let t: f64 = f.first().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        for (c, col) in cols.iter_mut().enumerate() {
            match f.get(c + 1).copied().unwrap_or("") {
                "" => {}
                v => col.push((t, v.parse().map_err(|_| bad())?)),
            }
        }
    }
    let [truth, physics, baseline] = cols;
    Ok(vec![
        Series {
            name: "truth",
            color: "#000000",
            dashed: false,
            points: truth,
        },
        Series {
            name: "baseline",
            color: "#1f77b4",
            dashed: true,
            points: baseline,
        },
        Series {
            name: "physics-informed",
            color: "#d62728",
            dashed: false,
            points: physics,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deeponet::MaeUnit;

    #[test]
    fn mean_row_is_mean_of_rows() {
        let r = MaeReport {
            labels: vec!["a".into(), "b".into(), "c".into()],
            per_dataset: vec![0.1, 0.2, 0.6],
            mean: 0.3,
            unit: MaeUnit::Native,
        };
        let t = mae_table(&r, None);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("mean,,"));
        assert!(lines[4].ends_with(','));
    }

    #[test]
    fn output_root_precedence() {
        let mut cfg = ExperimentConfig::for_system(crate::systems::SystemKind::Pendulum, None);
        cfg.output_dir = Some("from-config".into());
        assert_eq!(
            resolve_output_root(Some(Path::new("flag")), &cfg),
            PathBuf::from("flag")
        );
    }
}
