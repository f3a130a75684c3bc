//! Supervised sample construction for the surrogate and operator networks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::norm::{NormStats, Standardizer};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_f64_list, read_text, split_header, write_atomic};
use crate::systems::Trajectory;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

fn check_compatible(trajs: &[Trajectory], order: usize) -> Result<f64> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::Contract("no trajectories".into()))?;
    for (i, t) in trajs.iter().enumerate() {
        if t.order() != order {
            return Err(Error::Contract(format!(
                "trajectory {i} has order {} but order {order} was requested",
                t.order()
            )));
        }
        if t.dt.to_bits() != first.dt.to_bits() {
            return Err(Error::Contract(format!(
                "trajectory {i} has a different dt"
            )));
        }
        if t.steps() < order {
            return Err(Error::Contract(format!(
                "trajectory {i} is shorter than the order"
            )));
        }
    }
    Ok(first.dt)
}

/// One short-term-dependency example: `[x, …, dⁿ⁻¹x, u(t−n+1), …, u(t)]`
/// mapped to `dⁿx(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSample {
    pub input: Vec<f64>,
    pub target: f64,
}

/// Raw (unnormalized) surrogate samples plus the statistics used to
/// standardize them.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateDataset {
    pub order: usize,
    pub dt: f64,
    /// Row-major, `2 · order` columns.
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub stats: NormStats,
}

impl SurrogateDataset {
    pub fn width(&self) -> usize {
        2 * self.order
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sample(&self, i: usize) -> SurrogateSample {
        let w = self.width();
        SurrogateSample {
            input: self.inputs[i * w..(i + 1) * w].to_vec(),
            target: self.targets[i],
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = SurrogateSample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    pub fn normalized_inputs(&self) -> Vec<f64> {
        self.stats.input.normalize_rows(&self.inputs)
    }

    pub fn normalized_targets(&self) -> Vec<f64> {
        self.stats.target.normalize_rows(&self.targets)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "schema-version={DATASET_SCHEMA_VERSION}");
        let _ = writeln!(s, "kind=surrogate");
        let _ = writeln!(s, "n={}", self.order);
        let _ = writeln!(s, "dt={}", fmt_f64(self.dt));
        let _ = writeln!(s, "samples={}", self.len());
        self.stats.write_header(&mut s, "norm.");
        let cols: Vec<String> = (0..self.width()).map(|i| format!("in{i}")).collect();
        let _ = writeln!(s, "{},target", cols.join(","));
        let w = self.width();
        for i in 0..self.len() {
            for v in &self.inputs[i * w..(i + 1) * w] {
                s.push_str(&fmt_f64(*v));
                s.push(',');
            }
            s.push_str(&fmt_f64(self.targets[i]));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header, body) = split_header(text);
        let h = Header(header);
        h.expect("kind", "surrogate")?;
        h.check_version()?;
        let order: usize = h.parse("n")?;
        let dt: f64 = h.parse("dt")?;
        let stats = NormStats::read_header(|k| h.get(k).ok().map(str::to_string), "norm.")?;
        let w = 2 * order;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (i, line) in body.iter().skip(1).enumerate() {
            let vals = parse_f64_list(line, ',')
                .filter(|v| v.len() == w + 1)
                .ok_or_else(|| Error::Config(format!("bad surrogate row {i}")))?;
            inputs.extend_from_slice(&vals[..w]);
            targets.push(vals[w]);
        }
        Ok(Self {
            order,
            dt,
            inputs,
            targets,
            stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn surrogate_rows(trajs: &[Trajectory], order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for tr in trajs {
        for t in order - 1..tr.steps() {
            for row in &tr.derivs[..order] {
                inputs.push(row[t]);
            }
            inputs.extend_from_slice(&tr.controls[t + 1 - order..=t]);
            targets.push(tr.derivs[order][t]);
        }
    }
    (inputs, targets)
}

/// Builds surrogate samples and fits their statistics.
pub fn build_surrogate_dataset(trajs: &[Trajectory], order: usize) -> Result<SurrogateDataset> {
    let dt = check_compatible(trajs, order)?;
    let (inputs, targets) = surrogate_rows(trajs, order);
    let stats = NormStats {
        input: Standardizer::fit(&inputs, 2 * order),
        target: Standardizer::fit(&targets, 1),
    };
    Ok(SurrogateDataset {
        order,
        dt,
        inputs,
        targets,
        stats,
    })
}

/// Builds surrogate samples that reuse existing (training) statistics.
pub fn build_surrogate_dataset_with(
    trajs: &[Trajectory],
    order: usize,
    stats: &NormStats,
) -> Result<SurrogateDataset> {
    let dt = check_compatible(trajs, order)?;
    let (inputs, targets) = surrogate_rows(trajs, order);
    Ok(SurrogateDataset {
        order,
        dt,
        inputs,
        targets,
        stats: stats.clone(),
    })
}

/// Branch, trunk and target standardization for the operator network.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorStats {
    /// `order + sensors` entries. The state block uses the pooled statistics
    /// of each derivative row; all control channels share the pooled
    /// statistics of the control signal.
    pub branch: Standardizer,
    pub target: Standardizer,
    /// Trunk input is `t / horizon`.
    pub horizon: f64,
}

impl OperatorStats {
    pub fn time_scale(&self) -> f64 {
        1.0 / self.horizon
    }

    pub(crate) fn write_header(&self, s: &mut String, prefix: &str) {
        NormStats {
            input: self.branch.clone(),
            target: self.target.clone(),
        }
        .write_header(s, prefix);
        let _ = writeln!(s, "{prefix}horizon={}", fmt_f64(self.horizon));
    }

    pub(crate) fn read_header(get: impl Fn(&str) -> Option<String>, prefix: &str) -> Result<Self> {
        let horizon = get(&format!("{prefix}horizon"))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config(format!("missing {prefix}horizon")))?;
        let ns = NormStats::read_header(get, prefix)?;
        Ok(Self {
            branch: ns.input,
            target: ns.target,
            horizon,
        })
    }
}

/// One `(branch input, time) -> x(t)` example. The branch input is shared by
/// all samples of trajectory `traj`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorSample {
    pub traj: usize,
    /// Sample index within the source trajectory.
    pub index: usize,
    /// Seconds.
    pub time: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorDataset {
    pub order: usize,
    pub sensors: usize,
    pub dt: f64,
    /// Raw branch inputs, one per trajectory: `[x(0), …, dⁿ⁻¹x(0), u(s₀), …]`.
    pub branch_inputs: Vec<Vec<f64>>,
    /// Full-resolution control series of each trajectory.
    pub controls: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub samples: Vec<OperatorSample>,
    pub stats: OperatorStats,
}

/// `count` indices evenly spread over `0..=last`, endpoints included.
pub fn sensor_indices(steps: usize, count: usize) -> Vec<usize> {
    let last = (steps - 1) as f64;
    (0..count)
        .map(|j| (j as f64 * last / (count - 1) as f64).round() as usize)
        .collect()
}

/// `count` evenly spaced interior indices; one query lands on the midpoint.
pub fn query_indices(steps: usize, count: usize) -> Vec<usize> {
    let last = (steps - 1) as f64;
    (0..count)
        .map(|i| ((i + 1) as f64 * last / (count + 1) as f64).round() as usize)
        .collect()
}

fn operator_parts(
    trajs: &[Trajectory],
    sensors: usize,
    queries: usize,
) -> Result<(usize, f64, Vec<Vec<f64>>, Vec<OperatorSample>)> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::Contract("no trajectories".into()))?;
    let order = first.order();
    let dt = check_compatible(trajs, order)?;
    if sensors < 2 {
        return Err(Error::Contract(format!(
            "need at least 2 sensors, got {sensors}"
        )));
    }
    if queries < 1 {
        return Err(Error::Contract(
            "need at least one query per trajectory".into(),
        ));
    }
    let steps = first.steps();
    if trajs.iter().any(|t| t.steps() != steps) {
        return Err(Error::Contract(
            "operator datasets need equal-length trajectories".into(),
        ));
    }
    if queries > steps.saturating_sub(2) {
        return Err(Error::Contract(format!(
            "{queries} queries exceed the {} interior samples",
            steps.saturating_sub(2)
        )));
    }
    let sensor_idx = sensor_indices(steps, sensors);
    let query_idx = query_indices(steps, queries);
    let mut branch = Vec::with_capacity(trajs.len());
    let mut samples = Vec::with_capacity(trajs.len() * queries);
    for (k, tr) in trajs.iter().enumerate() {
        let mut b = tr.state_at(0);
        b.extend(sensor_idx.iter().map(|&i| tr.controls[i]));
        branch.push(b);
        for &i in &query_idx {
            samples.push(OperatorSample {
                traj: k,
                index: i,
                time: tr.time(i),
                target: tr.x()[i],
            });
        }
    }
    Ok((order, dt, branch, samples))
}

/// Builds operator samples and fits their statistics on these trajectories.
pub fn build_operator_dataset(
    trajs: &[Trajectory],
    sensors: usize,
    queries: usize,
) -> Result<OperatorDataset> {
    let (order, dt, branch_inputs, samples) = operator_parts(trajs, sensors, queries)?;
    let mut branch = Vec::with_capacity(order + sensors);
    for k in 0..order {
        let pooled: Vec<f64> = trajs
            .iter()
            .flat_map(|t| t.derivs[k].iter().copied())
            .collect();
        branch.push(Standardizer::pooled(&pooled, 1));
    }
    let controls: Vec<f64> = trajs
        .iter()
        .flat_map(|t| t.controls.iter().copied())
        .collect();
    let mut branch_std = Standardizer::pooled(&controls, sensors);
    for s in branch.into_iter().rev() {
        branch_std = s.concat(&branch_std);
    }
    let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
    let stats = OperatorStats {
        branch: branch_std,
        target: Standardizer::fit(&targets, 1),
        horizon: trajs[0].horizon(),
    };
    Ok(OperatorDataset {
        order,
        sensors,
        dt,
        branch_inputs,
        controls: trajs.iter().map(|t| t.controls.clone()).collect(),
        labels: trajs.iter().map(|t| t.meta.policy.label()).collect(),
        samples,
        stats,
    })
}

/// Builds operator samples that reuse existing (training) statistics.
pub fn build_operator_dataset_with(
    trajs: &[Trajectory],
    sensors: usize,
    queries: usize,
    stats: &OperatorStats,
) -> Result<OperatorDataset> {
    let (order, dt, branch_inputs, samples) = operator_parts(trajs, sensors, queries)?;
    if stats.branch.width() != order + sensors {
        return Err(Error::Dimension(format!(
            "statistics cover {} branch features, dataset has {}",
            stats.branch.width(),
            order + sensors
        )));
    }
    Ok(OperatorDataset {
        order,
        sensors,
        dt,
        branch_inputs,
        controls: trajs.iter().map(|t| t.controls.clone()).collect(),
        labels: trajs.iter().map(|t| t.meta.policy.label()).collect(),
        samples,
        stats: stats.clone(),
    })
}

impl OperatorDataset {
    pub fn trajectories(&self) -> usize {
        self.branch_inputs.len()
    }

    pub fn branch_width(&self) -> usize {
        self.order + self.sensors
    }

    pub fn branch_input(&self, sample: &OperatorSample) -> &[f64] {
        &self.branch_inputs[sample.traj]
    }

    /// Replaces every target with the value of `truth[traj].x()` at the
    /// sample's index (used to score against noise-free data).
    pub fn with_targets_from(mut self, truth: &[Trajectory]) -> Result<Self> {
        if truth.len() != self.trajectories() {
            return Err(Error::Contract("truth trajectory count differs".into()));
        }
        for s in &mut self.samples {
            s.target = *truth[s.traj]
                .x()
                .get(s.index)
                .ok_or_else(|| Error::Contract("truth trajectory shorter than dataset".into()))?;
        }
        Ok(self)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "schema-version={DATASET_SCHEMA_VERSION}");
        let _ = writeln!(s, "kind=operator");
        let _ = writeln!(s, "n={}", self.order);
        let _ = writeln!(s, "m={}", self.sensors);
        let _ = writeln!(s, "dt={}", fmt_f64(self.dt));
        let _ = writeln!(s, "trajectories={}", self.trajectories());
        let _ = writeln!(s, "labels={}", self.labels.join("|"));
        self.stats.write_header(&mut s, "norm.");
        let cols: Vec<String> = (0..self.branch_width()).map(|i| format!("b{i}")).collect();
        let _ = writeln!(s, "traj,index,t,{},target", cols.join(","));
        for smp in &self.samples {
            let _ = write!(s, "{},{},{}", smp.traj, smp.index, fmt_f64(smp.time));
            for v in self.branch_input(smp) {
                s.push(',');
                s.push_str(&fmt_f64(*v));
            }
            s.push(',');
            s.push_str(&fmt_f64(smp.target));
            s.push('\n');
        }
        s
    }

    fn controls_text(&self) -> String {
        let mut s = String::new();
        let cols: Vec<String> = (0..self.trajectories()).map(|i| format!("u{i}")).collect();
        let _ = writeln!(s, "{}", cols.join(","));
        let len = self.controls.first().map_or(0, Vec::len);
        for i in 0..len {
            let row: Vec<String> = self.controls.iter().map(|c| fmt_f64(c[i])).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    fn controls_path(path: &Path) -> PathBuf {
        path.with_extension("controls.csv")
    }

    /// Writes the sample file and a sibling `*.controls.csv`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())?;
        write_atomic(&Self::controls_path(path), self.controls_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let wrap = |e: Error| Error::format(path, e.to_string());
        let text = read_text(path)?;
        let (header, body) = split_header(&text);
        let h = Header(header);
        h.expect("kind", "operator").map_err(wrap)?;
        h.check_version().map_err(wrap)?;
        let order: usize = h.parse("n").map_err(wrap)?;
        let sensors: usize = h.parse("m").map_err(wrap)?;
        let dt: f64 = h.parse("dt").map_err(wrap)?;
        let count: usize = h.parse("trajectories").map_err(wrap)?;
        let labels = h
            .get("labels")
            .map_err(wrap)?
            .split('|')
            .map(str::to_string)
            .collect();
        let stats = OperatorStats::read_header(|k| h.get(k).ok().map(str::to_string), "norm.")
            .map_err(wrap)?;
        let w = order + sensors;
        let mut branch_inputs = vec![Vec::new(); count];
        let mut samples = Vec::new();
        for (i, line) in body.iter().skip(1).enumerate() {
            let bad = || Error::format(path, format!("bad operator row {i}"));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != w + 4 {
                return Err(bad());
            }
            let traj: usize = fields[0].parse().map_err(|_| bad())?;
            let index: usize = fields[1].parse().map_err(|_| bad())?;
            let vals: Vec<f64> = fields[2..]
                .iter()
                .map(|v| v.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| bad())?;
            if traj >= count {
                return Err(bad());
            }
            if branch_inputs[traj].is_empty() {
                branch_inputs[traj] = vals[1..=w].to_vec();
            }
            samples.push(OperatorSample {
                traj,
                index,
                time: vals[0],
                target: vals[w + 1],
            });
        }
        let ctext = read_text(&Self::controls_path(path))?;
        let mut controls = vec![Vec::new(); count];
        for line in ctext.lines().skip(1) {
            let vals = parse_f64_list(line, ',')
                .filter(|v| v.len() == count)
                .ok_or_else(|| Error::format(path, "bad controls row"))?;
            for (c, v) in controls.iter_mut().zip(vals) {
                c.push(v);
            }
        }
        Ok(Self {
            order,
            sensors,
            dt,
            branch_inputs,
            controls,
            labels,
            samples,
            stats,
        })
    }
}

struct Header(Vec<(String, String)>);

impl Header {
    fn get(&self, k: &str) -> Result<&str> {
        self.0
            .iter()
            .find(|(hk, _)| hk == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Config(format!("header lacks {k}")))
    }

    fn parse<T: std::str::FromStr>(&self, k: &str) -> Result<T> {
        self.get(k)?
            .parse()
            .map_err(|_| Error::Config(format!("bad header value for {k}")))
    }

    fn expect(&self, k: &str, v: &str) -> Result<()> {
        match self.get(k)? {
            got if got == v => Ok(()),
            got => Err(Error::Config(format!("{k} is {got:?}, expected {v:?}"))),
        }
    }

    fn check_version(&self) -> Result<()> {
        let v: u32 = self.parse("schema-version")?;
        if v != DATASET_SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported dataset schema {v}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{euler_simulate, ControlPolicy, SystemSpec};

    fn pendulum(gain: f64, steps: usize) -> Trajectory {
        euler_simulate(
            &SystemSpec::pendulum(),
            &ControlPolicy::Feedback { gain },
            &[1.0, 0.0],
            1e-3,
            steps,
        )
        .unwrap()
    }

    #[test]
    fn surrogate_sample_count_and_width() {
        let ds = build_surrogate_dataset(&[pendulum(0.5, 10_000)], 2).unwrap();
        assert_eq!(ds.len(), 9_999);
        assert_eq!(ds.width(), 4);
    }

    #[test]
    fn surrogate_layout() {
        let tr = pendulum(0.5, 20);
        let ds = build_surrogate_dataset(std::slice::from_ref(&tr), 2).unwrap();
        // first sample sits at t = 1
        let s = ds.sample(0);
        assert_eq!(
            s.input,
            vec![tr.x()[1], tr.derivs[1][1], tr.controls[0], tr.controls[1]]
        );
        assert_eq!(s.target, tr.derivs[2][1]);
    }

    #[test]
    fn zero_trajectory_gives_zero_samples() {
        let tr = euler_simulate(
            &SystemSpec::pendulum(),
            &ControlPolicy::Feedback { gain: 0.5 },
            &[0.0, 0.0],
            1e-3,
            100,
        )
        .unwrap();
        let ds = build_surrogate_dataset(&[tr], 2).unwrap();
        assert!(ds.inputs.iter().chain(&ds.targets).all(|&v| v == 0.0));
    }

    #[test]
    fn mixed_orders_rejected() {
        let jerk = euler_simulate(
            &SystemSpec::chaotic_jerk(),
            &ControlPolicy::Sinusoid {
                amplitude: 1.0,
                frequency: 2.0,
            },
            &[0.0; 3],
            1e-3,
            100,
        )
        .unwrap();
        assert!(matches!(
            build_surrogate_dataset(&[pendulum(0.5, 100), jerk], 2),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn operator_counts() {
        let trajs: Vec<_> = (0..5)
            .map(|i| pendulum(0.35 + 0.1 * i as f64, 10_001))
            .collect();
        let ds = build_operator_dataset(&trajs, 100, 200).unwrap();
        assert_eq!(ds.samples.len(), 1000);
        assert!(ds.branch_inputs.iter().all(|b| b.len() == 102));
    }

    #[test]
    fn spacing_rules() {
        assert_eq!(query_indices(10_001, 1), vec![5_000]);
        assert_eq!(sensor_indices(10_001, 2), vec![0, 10_000]);
        let tr = pendulum(0.5, 10_001);
        let ds = build_operator_dataset(&[tr], 2, 1).unwrap();
        assert_eq!(ds.samples[0].time, 5.0);
        assert!(build_operator_dataset(&[pendulum(0.5, 10)], 2, 9).is_err());
        assert!(build_operator_dataset(&[pendulum(0.5, 10)], 1, 2).is_err());
    }

    #[test]
    fn operator_file_round_trip() {
        let trajs: Vec<_> = (0..2)
            .map(|i| pendulum(0.4 + 0.1 * i as f64, 300))
            .collect();
        let ds = build_operator_dataset(&trajs, 5, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("op.csv");
        ds.save(&p).unwrap();
        assert_eq!(OperatorDataset::load(&p).unwrap(), ds);
    }

    #[test]
    fn surrogate_file_round_trip() {
        let ds = build_surrogate_dataset(&[pendulum(0.5, 50)], 2).unwrap();
        assert_eq!(SurrogateDataset::from_text(&ds.to_text()).unwrap(), ds);
    }
}
