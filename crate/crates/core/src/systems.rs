//! Benchmark systems, control policies and the explicit-Euler simulator.
//!
//! Each system is an order-`n` scalar ODE `dⁿx/dtⁿ = F(x, …, dⁿ⁻¹x/dtⁿ⁻¹, u)`.
//! Simulation stores every derivative row so that the lower rows satisfy
//! the Euler recurrence bit-for-bit:
//! `derivs[k][t + 1] == derivs[k][t] + dt * derivs[k + 1][t]`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_f64_list, read_text, split_header, write_atomic};

pub const GRAVITY: f64 = 9.81;
/// Damping of the Sprott jerk system where it is chaotic.
pub const JERK_DAMPING: f64 = 2.017;
pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Pendulum,
    DrivenOscillator,
    ChaoticJerk,
}

impl SystemKind {
    pub const ALL: [SystemKind; 3] = [
        SystemKind::Pendulum,
        SystemKind::DrivenOscillator,
        SystemKind::ChaoticJerk,
    ];

    pub fn order(self) -> usize {
        match self {
            SystemKind::Pendulum | SystemKind::DrivenOscillator => 2,
            SystemKind::ChaoticJerk => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Pendulum => "pendulum",
            SystemKind::DrivenOscillator => "driven_oscillator",
            SystemKind::ChaoticJerk => "chaotic_jerk",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown system {s:?}")))
    }

    /// Default simulated horizon in seconds.
    pub fn default_horizon(self) -> f64 {
        match self {
            SystemKind::Pendulum => 10.0,
            SystemKind::DrivenOscillator => 5.0,
            SystemKind::ChaoticJerk => 20.0,
        }
    }

    /// Measurement noise of the benchmark's noisy variant.
    pub fn benchmark_noise(self) -> f64 {
        match self {
            SystemKind::Pendulum => 0.002,
            SystemKind::DrivenOscillator => 0.01,
            SystemKind::ChaoticJerk => 0.03,
        }
    }

    pub fn default_initial_state(self) -> Vec<f64> {
        match self {
            SystemKind::Pendulum | SystemKind::DrivenOscillator => vec![1.0, 0.0],
            SystemKind::ChaoticJerk => vec![0.0, 0.0, 0.0],
        }
    }
}

/// Physical parameters of one benchmark system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    /// Pendulum swung by a torque `u`; `inertia` is the rod's own moment.
    Pendulum {
        m: f64,
        l: f64,
        inertia: f64,
        b: f64,
        g: f64,
    },
    /// `m ẍ + c ẋ + k x = F₀ u`
    DrivenOscillator { m: f64, c: f64, k: f64, f0: f64 },
    /// `x⃛ + A ẍ − ẋ² + x = u`
    ChaoticJerk { a: f64 },
}

impl SystemSpec {
    pub fn pendulum() -> Self {
        let (m, l) = (1.0, 1.0);
        SystemSpec::Pendulum {
            m,
            l,
            inertia: m * l * l / 12.0,
            b: 0.01,
            g: GRAVITY,
        }
    }

    pub fn driven_oscillator() -> Self {
        SystemSpec::DrivenOscillator {
            m: 0.5,
            c: 1.0,
            k: 50.0,
            f0: 4.0,
        }
    }

    pub fn chaotic_jerk() -> Self {
        SystemSpec::ChaoticJerk { a: JERK_DAMPING }
    }

    pub fn default_for(kind: SystemKind) -> Self {
        match kind {
            SystemKind::Pendulum => Self::pendulum(),
            SystemKind::DrivenOscillator => Self::driven_oscillator(),
            SystemKind::ChaoticJerk => Self::chaotic_jerk(),
        }
    }

    pub fn kind(&self) -> SystemKind {
        match self {
            SystemSpec::Pendulum { .. } => SystemKind::Pendulum,
            SystemSpec::DrivenOscillator { .. } => SystemKind::DrivenOscillator,
            SystemSpec::ChaoticJerk { .. } => SystemKind::ChaoticJerk,
        }
    }

    pub fn order(&self) -> usize {
        self.kind().order()
    }

    fn named_params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            SystemSpec::Pendulum {
                m,
                l,
                inertia,
                b,
                g,
            } => {
                vec![("m", m), ("l", l), ("inertia", inertia), ("b", b), ("g", g)]
            }
            SystemSpec::DrivenOscillator { m, c, k, f0 } => {
                vec![("m", m), ("c", c), ("k", k), ("f0", f0)]
            }
            SystemSpec::ChaoticJerk { a } => vec![("a", a)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named_params() {
            if !v.is_finite() {
                return Err(Error::Config(format!(
                    "{}: {name} is not finite",
                    self.kind().name()
                )));
            }
        }
        match *self {
            SystemSpec::Pendulum { m, .. } | SystemSpec::DrivenOscillator { m, .. } if m <= 0.0 => {
                Err(Error::Config(format!(
                    "{}: mass must be positive",
                    self.kind().name()
                )))
            }
            SystemSpec::Pendulum { m, l, inertia, .. } if 0.25 * m * l * l + inertia <= 0.0 => Err(
                Error::Config("pendulum: effective inertia must be positive".into()),
            ),
            _ => Ok(()),
        }
    }

    /// `dⁿx/dtⁿ` from the lower derivatives `state = [x, ẋ, …]` and the
    /// control `u`.
    pub fn highest_derivative(&self, state: &[f64], u: f64) -> f64 {
        debug_assert_eq!(state.len(), self.order());
        match *self {
            SystemSpec::Pendulum {
                m,
                l,
                inertia,
                b,
                g,
            } => {
                let (x, v) = (state[0], state[1]);
                (u - b * v - 0.5 * m * g * l * x.sin()) / (0.25 * m * l * l + inertia)
            }
            SystemSpec::DrivenOscillator { m, c, k, f0 } => {
                let (x, v) = (state[0], state[1]);
                (f0 * u - c * v - k * x) / m
            }
            SystemSpec::ChaoticJerk { a } => {
                let (x, v, acc) = (state[0], state[1], state[2]);
                u - a * acc + v * v - x
            }
        }
    }

    fn to_header(&self) -> String {
        self.named_params()
            .iter()
            .map(|(k, v)| format!("{k}:{}", fmt_f64(*v)))
            .collect::<Vec<_>>()
            .join(";")
    }

    fn from_header(kind: SystemKind, s: &str) -> Result<Self> {
        let mut values = std::collections::HashMap::new();
        for item in s.split(';').filter(|i| !i.is_empty()) {
            let (k, v) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad parameter entry {item:?}")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("bad value in {item:?}")))?;
            values.insert(k.to_string(), v);
        }
        let get = |k: &str| {
            values
                .get(k)
                .copied()
                .ok_or_else(|| Error::Config(format!("missing parameter {k}")))
        };
        Ok(match kind {
            SystemKind::Pendulum => SystemSpec::Pendulum {
                m: get("m")?,
                l: get("l")?,
                inertia: get("inertia")?,
                b: get("b")?,
                g: get("g")?,
            },
            SystemKind::DrivenOscillator => SystemSpec::DrivenOscillator {
                m: get("m")?,
                c: get("c")?,
                k: get("k")?,
                f0: get("f0")?,
            },
            SystemKind::ChaoticJerk => SystemSpec::ChaoticJerk { a: get("a")? },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlPolicy {
    /// `u(t) = −gain · ẋ(t)`
    Feedback { gain: f64 },
    /// `u(t) = amplitude · sin(frequency · t)`
    Sinusoid { amplitude: f64, frequency: f64 },
}

impl ControlPolicy {
    pub fn evaluate(&self, t: f64, state: &[f64]) -> f64 {
        match *self {
            ControlPolicy::Feedback { gain } => -gain * state[1],
            ControlPolicy::Sinusoid {
                amplitude,
                frequency,
            } => amplitude * (frequency * t).sin(),
        }
    }

    /// Short label used in reports, e.g. `c=0.35` or `F=1.09,w=2`.
    pub fn label(&self) -> String {
        match *self {
            ControlPolicy::Feedback { gain } => format!("c={gain}"),
            ControlPolicy::Sinusoid {
                amplitude,
                frequency,
            } if amplitude == 1.0 => {
                format!("w={frequency}")
            }
            ControlPolicy::Sinusoid {
                amplitude,
                frequency,
            } => {
                format!("F={amplitude};w={frequency}")
            }
        }
    }

    fn to_header(&self) -> String {
        match *self {
            ControlPolicy::Feedback { gain } => format!("feedback:gain:{}", fmt_f64(gain)),
            ControlPolicy::Sinusoid {
                amplitude,
                frequency,
            } => format!(
                "sinusoid:amplitude:{};frequency:{}",
                fmt_f64(amplitude),
                fmt_f64(frequency)
            ),
        }
    }

    fn from_header(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad policy {s:?}"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let mut fields = std::collections::HashMap::new();
        for item in rest.split(';') {
            let (k, v) = item.split_once(':').ok_or_else(bad)?;
            fields.insert(k, v.parse::<f64>().map_err(|_| bad())?);
        }
        match kind {
            "feedback" => Ok(ControlPolicy::Feedback {
                gain: *fields.get("gain").ok_or_else(bad)?,
            }),
            "sinusoid" => Ok(ControlPolicy::Sinusoid {
                amplitude: *fields.get("amplitude").ok_or_else(bad)?,
                frequency: *fields.get("frequency").ok_or_else(bad)?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub system: SystemSpec,
    pub policy: ControlPolicy,
    pub initial_state: Vec<f64>,
    pub seed: Option<u64>,
}

/// Uniformly sampled run: `derivs[k][t]` is `dᵏx/dtᵏ` at `t · dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub derivs: Vec<Vec<f64>>,
    pub controls: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn order(&self) -> usize {
        self.derivs.len() - 1
    }

    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn horizon(&self) -> f64 {
        (self.steps() - 1) as f64 * self.dt
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.dt
    }

    pub fn x(&self) -> &[f64] {
        &self.derivs[0]
    }

    /// Lower derivatives `[x, …, dⁿ⁻¹x]` at `index`.
    pub fn state_at(&self, index: usize) -> Vec<f64> {
        self.derivs[..self.order()]
            .iter()
            .map(|row| row[index])
            .collect()
    }

    pub fn to_text(&self) -> String {
        let n = self.order();
        let mut s = String::new();
        let _ = writeln!(s, "schema-version={TRAJECTORY_SCHEMA_VERSION}");
        let _ = writeln!(s, "system={}", self.meta.system.kind().name());
        let _ = writeln!(s, "params={}", self.meta.system.to_header());
        let _ = writeln!(s, "policy={}", self.meta.policy.to_header());
        let _ = writeln!(s, "dt={}", fmt_f64(self.dt));
        let _ = writeln!(s, "steps={}", self.steps());
        let x0: Vec<String> = self
            .meta
            .initial_state
            .iter()
            .map(|&v| fmt_f64(v))
            .collect();
        let _ = writeln!(s, "x0={}", x0.join(";"));
        let _ = writeln!(
            s,
            "seed={}",
            self.meta
                .seed
                .map_or_else(|| "none".to_string(), |v| v.to_string())
        );
        s.push_str("t,x");
        for k in 1..=n {
            let _ = write!(s, ",dx{k}");
        }
        s.push_str(",u\n");
        for i in 0..self.steps() {
            s.push_str(&fmt_f64(self.time(i)));
            for row in &self.derivs {
                s.push(',');
                s.push_str(&fmt_f64(row[i]));
            }
            s.push(',');
            s.push_str(&fmt_f64(self.controls[i]));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header, body) = split_header(text);
        let get = |k: &str| {
            header
                .iter()
                .find(|(hk, _)| hk == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("trajectory header lacks {k}")))
        };
        let version: u32 = get("schema-version")?
            .parse()
            .map_err(|_| Error::Config("bad schema-version".into()))?;
        if version != TRAJECTORY_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported trajectory schema {version}"
            )));
        }
        let kind = SystemKind::parse(get("system")?)?;
        let system = SystemSpec::from_header(kind, get("params")?)?;
        let policy = ControlPolicy::from_header(get("policy")?)?;
        let dt: f64 = get("dt")?
            .parse()
            .map_err(|_| Error::Config("bad dt".into()))?;
        let steps: usize = get("steps")?
            .parse()
            .map_err(|_| Error::Config("bad steps".into()))?;
        let initial_state =
            parse_f64_list(get("x0")?, ';').ok_or_else(|| Error::Config("bad x0".into()))?;
        let seed = match get("seed")? {
            "none" => None,
            v => Some(v.parse().map_err(|_| Error::Config("bad seed".into()))?),
        };
        let n = kind.order();
        let mut rows = body.into_iter();
        rows.next(); // column names
        let mut derivs = vec![Vec::with_capacity(steps); n + 1];
        let mut controls = Vec::with_capacity(steps);
        for (i, line) in rows.enumerate() {
            let vals = parse_f64_list(line, ',')
                .filter(|v| v.len() == n + 3)
                .ok_or_else(|| Error::Config(format!("bad trajectory row {i}")))?;
            for (k, row) in derivs.iter_mut().enumerate() {
                row.push(vals[k + 1]);
            }
            controls.push(vals[n + 2]);
        }
        if controls.len() != steps {
            return Err(Error::Config(format!(
                "header says {steps} steps, found {}",
                controls.len()
            )));
        }
        Ok(Self {
            dt,
            derivs,
            controls,
            meta: TrajectoryMeta {
                system,
                policy,
                initial_state,
                seed,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Number of stored samples covering `[0, horizon]` at spacing `dt`.
pub fn steps_for_horizon(horizon: f64, dt: f64) -> usize {
    (horizon / dt).round() as usize + 1
}

/// Explicit Euler integration, `steps` stored samples starting at `x0`.
pub fn euler_simulate(
    system: &SystemSpec,
    policy: &ControlPolicy,
    x0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    let n = system.order();
    system.validate()?;
    if x0.len() != n {
        return Err(Error::Contract(format!(
            "initial state has {} entries, system order is {n}",
            x0.len()
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Contract(format!("dt must be positive, got {dt}")));
    }
    if steps < 2 {
        return Err(Error::Contract(format!(
            "need at least 2 steps, got {steps}"
        )));
    }
    let mut derivs = vec![vec![0.0; steps]; n + 1];
    let mut controls = vec![0.0; steps];
    let mut state = x0.to_vec();
    for t in 0..steps {
        if let Some(bad) = state.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: t,
                detail: format!("derivative {bad} is not finite"),
            });
        }
        let u = policy.evaluate(t as f64 * dt, &state);
        let top = system.highest_derivative(&state, u);
        if !top.is_finite() || !u.is_finite() {
            return Err(Error::Divergence {
                step: t,
                detail: "highest derivative is not finite".into(),
            });
        }
        for (k, &v) in state.iter().enumerate() {
            derivs[k][t] = v;
        }
        derivs[n][t] = top;
        controls[t] = u;
        // each row advances with the old value of the row above it
        for k in 0..n {
            let above = if k + 1 < n { derivs[k + 1][t] } else { top };
            state[k] = derivs[k][t] + dt * above;
        }
    }
    Ok(Trajectory {
        dt,
        derivs,
        controls,
        meta: TrajectoryMeta {
            system: *system,
            policy: *policy,
            initial_state: x0.to_vec(),
            seed: None,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridEntry {
    pub policy: ControlPolicy,
    pub role: Role,
    pub index: usize,
}

fn ramp(start: f64, step: f64, count: usize) -> impl Iterator<Item = f64> {
    // rounded so that 0.35 + 2·0.1 prints as 0.55
    (0..count).map(move |i| ((start + step * i as f64) * 1e10).round() / 1e10)
}

/// Training and test control policies of each benchmark.
pub fn dataset_grids(kind: SystemKind) -> Vec<GridEntry> {
    let mut out = Vec::new();
    let mut push = |role: Role, policies: Vec<ControlPolicy>| {
        for (index, policy) in policies.into_iter().enumerate() {
            out.push(GridEntry {
                policy,
                role,
                index,
            });
        }
    };
    let sine = |frequency| ControlPolicy::Sinusoid {
        amplitude: 1.0,
        frequency,
    };
    match kind {
        SystemKind::Pendulum => {
            let fb = |gain| ControlPolicy::Feedback { gain };
            push(Role::Train, ramp(0.35, 0.1, 5).map(fb).collect());
            push(Role::Test, ramp(0.3, 0.06, 10).map(fb).collect());
        }
        SystemKind::DrivenOscillator => {
            push(Role::Train, ramp(9.0, 0.5, 5).map(sine).collect());
            push(Role::Test, ramp(8.5, 0.3, 10).map(sine).collect());
        }
        SystemKind::ChaoticJerk => {
            let pair = |(amplitude, frequency)| ControlPolicy::Sinusoid {
                amplitude,
                frequency,
            };
            push(
                Role::Train,
                ramp(1.09, 0.09, 10)
                    .zip(ramp(2.0, 0.09, 10))
                    .map(pair)
                    .collect(),
            );
            push(
                Role::Test,
                ramp(1.2, 0.2, 5).zip(ramp(2.0, 0.1, 5)).map(pair).collect(),
            );
        }
    }
    out
}

/// Total mechanical energy of a pendulum state (rotational about the pivot
/// plus potential of the centre of mass).
pub fn pendulum_energy(system: &SystemSpec, x: f64, v: f64) -> Option<f64> {
    match *system {
        SystemSpec::Pendulum {
            m, l, inertia, g, ..
        } => Some(0.5 * (0.25 * m * l * l + inertia) * v * v + 0.5 * m * g * l * (1.0 - x.cos())),
        _ => None,
    }
}
