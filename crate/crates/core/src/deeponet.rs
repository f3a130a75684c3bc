//! Branch/trunk operator network with an optional surrogate-residual penalty.
//!
//! `x̂(t) = σ_y · (branch(ū) · trunk(ω t / T) + b) + μ_y` where `ū` is the
//! standardized branch input. The physics term propagates jets of the
//! trunk output in normalized time, rescales them to seconds and asks the
//! frozen surrogate for the highest derivative implied by the lower ones:
//!
//! ```text
//! r = (dⁿx̂/dtⁿ − γ(x̂, …, dⁿ⁻¹x̂/dtⁿ⁻¹, u(t−n+1), …, u(t))) / σ_γ
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    init_mlp, layer_widths, mlp_jets_tape, mlp_tape, read_param_block, write_param_block,
    Activation, AdamConfig, AdamState, BoundParams, ParamStore, Tape, Var,
};
use crate::data::{OperatorDataset, OperatorSample, OperatorStats};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_text, split_header, write_atomic};
use crate::surrogate::{decayed_lr, SurrogateModel};
use crate::systems::SystemKind;
use crate::tensor::Tensor;

pub const DEEPONET_FORMAT: &str = "mfpi-deeponet";
pub const DEEPONET_VERSION: u32 = 1;
const BIAS: &str = "bias";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepOnetConfig {
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    /// Width `p` of the shared latent space.
    pub latent: usize,
    pub activation: Activation,
    /// Trunk input is `trunk_frequency · t / T`. Values well above 1 let
    /// a sine trunk represent many oscillations over the horizon.
    pub trunk_frequency: f64,
    pub output_bias: bool,
    pub lr: f64,
    /// Learning rate after the last epoch as a fraction of `lr`; the rate
    /// decays geometrically in between.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DeepOnetConfig {
    fn default() -> Self {
        Self {
            branch_hidden: vec![128, 128],
            trunk_hidden: vec![64, 64],
            latent: 64,
            activation: Activation::Sin,
            trunk_frequency: 30.0,
            output_bias: true,
            lr: 1e-3,
            lr_decay: 0.1,
            epochs: 1000,
            batch_size: 50,
            seed: 0,
        }
    }
}

impl DeepOnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent == 0
            || self
                .branch_hidden
                .iter()
                .chain(&self.trunk_hidden)
                .any(|&w| w == 0)
        {
            return Err(Error::Config("operator widths must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "operator lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.trunk_frequency > 0.0 && self.trunk_frequency.is_finite()) {
            return Err(Error::Config(format!(
                "trunk_frequency must be positive, got {}",
                self.trunk_frequency
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("operator batch size must be positive".into()));
        }
        Ok(())
    }

    fn branch_widths(&self, input: usize) -> Vec<usize> {
        [vec![input], self.branch_hidden.clone(), vec![self.latent]].concat()
    }

    fn trunk_widths(&self) -> Vec<usize> {
        [vec![1], self.trunk_hidden.clone(), vec![self.latent]].concat()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsLossConfig {
    pub w_data: f64,
    pub w_physics: f64,
    /// Collocation points per training trajectory per epoch, drawn
    /// uniformly from the sample grid.
    pub collocation: usize,
}

impl Default for PhysicsLossConfig {
    fn default() -> Self {
        Self {
            w_data: 1.0,
            w_physics: 0.1,
            collocation: 64,
        }
    }
}

impl PhysicsLossConfig {
    pub fn baseline() -> Self {
        Self {
            w_physics: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w >= 0.0 && w.is_finite();
        if !ok(self.w_data) || !ok(self.w_physics) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if self.w_data == 0.0 && self.w_physics == 0.0 {
            return Err(Error::Config(
                "w_data and w_physics cannot both be zero".into(),
            ));
        }
        Ok(())
    }

    pub fn uses_physics(&self) -> bool {
        self.w_physics > 0.0 && self.collocation > 0
    }
}

/// A time (by sample index) on a given trajectory at which the residual is
/// evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollocationPoint {
    pub traj: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepOnetModel {
    pub branch: ParamStore,
    pub trunk: ParamStore,
    /// Holds `bias` when the output bias is enabled.
    pub bias: ParamStore,
    pub stats: OperatorStats,
    pub order: usize,
    pub dt: f64,
    pub config: DeepOnetConfig,
    pub physics: PhysicsLossConfig,
    /// Checksum of the surrogate used during training, if any.
    pub surrogate_checksum: Option<String>,
}

/// Per-epoch means of each loss component (normalized units).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OperatorHistory {
    pub data: Vec<f64>,
    pub physics: Vec<f64>,
}

/// Fresh parameters for `dataset`'s shapes.
pub fn init_operator(
    dataset: &OperatorDataset,
    config: &DeepOnetConfig,
    physics: &PhysicsLossConfig,
) -> Result<DeepOnetModel> {
    config.validate()?;
    physics.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let branch = init_mlp(&config.branch_widths(dataset.branch_width()), &mut rng);
    let trunk = init_mlp(&config.trunk_widths(), &mut rng);
    let mut bias = ParamStore::new();
    if config.output_bias {
        bias.insert(BIAS, Tensor::scalar(0.0));
    }
    Ok(DeepOnetModel {
        branch,
        trunk,
        bias,
        stats: dataset.stats.clone(),
        order: dataset.order,
        dt: dataset.dt,
        config: config.clone(),
        physics: *physics,
        surrogate_checksum: None,
    })
}

struct Bound {
    branch: BoundParams,
    trunk: BoundParams,
    bias: BoundParams,
}

/// Inputs that stay fixed over a training run.
struct Prepared {
    /// `[trajectories, n + m]`, standardized.
    branch_in: Tensor,
}

impl Prepared {
    fn new(model: &DeepOnetModel, dataset: &OperatorDataset) -> Result<Self> {
        let w = model.branch_input_width();
        if dataset.branch_width() != w {
            return Err(Error::Dimension(format!(
                "branch expects {w} features, dataset provides {}",
                dataset.branch_width()
            )));
        }
        let rows: Vec<Vec<f64>> = dataset
            .branch_inputs
            .iter()
            .map(|b| model.stats.branch.normalize(b))
            .collect();
        Ok(Self {
            branch_in: Tensor::from_rows(&rows)?,
        })
    }
}

impl DeepOnetModel {
    /// `d τ / d t` for the trunk input `τ`.
    pub fn time_scale(&self) -> f64 {
        self.config.trunk_frequency * self.stats.time_scale()
    }

    pub fn branch_input_width(&self) -> usize {
        self.branch.get("l0.weight").map_or(0, Tensor::cols)
    }

    fn branch_layers(&self) -> usize {
        self.config.branch_hidden.len() + 1
    }

    fn trunk_layers(&self) -> usize {
        self.config.trunk_hidden.len() + 1
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let b = |p: &ParamStore, tape: &mut Tape| {
            if trainable {
                p.bind(tape)
            } else {
                p.bind_frozen(tape)
            }
        };
        Bound {
            branch: b(&self.branch, tape),
            trunk: b(&self.trunk, tape),
            bias: b(&self.bias, tape),
        }
    }

    /// Normalized outputs `[k, 1]` for trajectories `traj[i]` at normalized
    /// times `tau[i]`.
    fn output_graph(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        branch_latent: Var,
        traj: &[usize],
        tau: &[f64],
    ) -> Result<Var> {
        let b = tape.gather_rows(branch_latent, traj)?;
        let t = tape.constant(Tensor::column(tau));
        let tr = mlp_tape(
            tape,
            &bound.trunk,
            t,
            self.trunk_layers(),
            self.config.activation,
        )?;
        let dot = tape.row_dot(b, tr)?;
        self.add_bias(tape, bound, dot)
    }

    fn add_bias(&self, tape: &mut Tape, bound: &Bound, y: Var) -> Result<Var> {
        match bound.bias.get(BIAS) {
            Some(bias) => {
                let ones = tape.constant(Tensor::filled(&[tape.value(y).rows(), 1], 1.0));
                let bb = tape.linear(ones, bias, None)?;
                tape.add(y, bb)
            }
            None => Ok(y),
        }
    }

    fn branch_graph(&self, tape: &mut Tape, bound: &Bound, prepared: &Prepared) -> Result<Var> {
        let x = tape.constant(prepared.branch_in.clone());
        mlp_tape(
            tape,
            &bound.branch,
            x,
            self.branch_layers(),
            self.config.activation,
        )
    }

    /// Mean squared residual of the surrogate relation at `points`.
    #[allow(clippy::too_many_arguments)]
    fn physics_graph(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        branch_latent: Var,
        surrogate: &SurrogateModel,
        frozen: &BoundParams,
        controls: &[Vec<f64>],
        points: &[CollocationPoint],
    ) -> Result<Var> {
        let n = self.order;
        let traj: Vec<usize> = points.iter().map(|p| p.traj).collect();
        let tau: Vec<f64> = points
            .iter()
            .map(|p| p.index as f64 * self.dt * self.time_scale())
            .collect();
        let b = tape.gather_rows(branch_latent, &traj)?;
        let t = tape.constant(Tensor::column(&tau));
        let jet = mlp_jets_tape(
            tape,
            &bound.trunk,
            t,
            0,
            self.trunk_layers(),
            self.config.activation,
            n,
        )?;
        let sy = self.stats.target.std[0];
        let my = self.stats.target.mean[0];
        let s = self.time_scale();
        let mut derivs = Vec::with_capacity(n + 1);
        let value = tape.row_dot(b, jet.value())?;
        let value = self.add_bias(tape, bound, value)?;
        derivs.push(tape.affine(value, sy, my));
        for k in 1..=n {
            let c = jet.coeff(tape, k);
            let d = tape.row_dot(b, c)?;
            derivs.push(tape.scale(d, sy * s.powi(k as i32)));
        }
        let mut window = Vec::with_capacity(points.len() * n);
        for p in points {
            window.extend_from_slice(&controls[p.traj][p.index + 1 - n..=p.index]);
        }
        let window = tape.constant(Tensor::new(vec![points.len(), n], window)?);
        let mut parts = derivs[..n].to_vec();
        parts.push(window);
        let raw = tape.concat_cols(&parts)?;
        let gamma = surrogate.predict_tape(tape, frozen, raw)?;
        let r = tape.sub(derivs[n], gamma)?;
        let r = tape.scale(r, 1.0 / surrogate.norm.target.std[0]);
        let sq = tape.square(r);
        Ok(tape.mean(sq))
    }

    fn data_graph(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        branch_latent: Var,
        samples: &[OperatorSample],
    ) -> Result<Var> {
        let traj: Vec<usize> = samples.iter().map(|s| s.traj).collect();
        let tau: Vec<f64> = samples.iter().map(|s| s.time * self.time_scale()).collect();
        let y = self.output_graph(tape, bound, branch_latent, &traj, &tau)?;
        let targets: Vec<f64> = samples
            .iter()
            .map(|s| (s.target - self.stats.target.mean[0]) / self.stats.target.std[0])
            .collect();
        let t = tape.constant(Tensor::column(&targets));
        let d = tape.sub(y, t)?;
        let sq = tape.square(d);
        Ok(tape.mean(sq))
    }

    /// Denormalized predictions for one raw branch input at `times` (s).
    pub fn predict(&self, branch_input: &[f64], times: &[f64]) -> Result<Vec<f64>> {
        let w = self.branch_input_width();
        if branch_input.len() != w {
            return Err(Error::Dimension(format!(
                "branch input has {} values, expected {w}",
                branch_input.len()
            )));
        }
        let prepared = Prepared {
            branch_in: Tensor::row(&self.stats.branch.normalize(branch_input)),
        };
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let bl = self.branch_graph(&mut tape, &bound, &prepared)?;
        let tau: Vec<f64> = times.iter().map(|t| t * self.time_scale()).collect();
        let y = self.output_graph(&mut tape, &bound, bl, &vec![0; times.len()], &tau)?;
        let (m, s) = (self.stats.target.mean[0], self.stats.target.std[0]);
        Ok(tape.value(y).data().iter().map(|v| v * s + m).collect())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format={DEEPONET_FORMAT}");
        let _ = writeln!(s, "version={DEEPONET_VERSION}");
        let _ = writeln!(s, "n={}", self.order);
        let _ = writeln!(s, "dt={}", fmt_f64(self.dt));
        let c = &self.config;
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "branch_hidden={}", join(&c.branch_hidden));
        let _ = writeln!(s, "trunk_hidden={}", join(&c.trunk_hidden));
        let _ = writeln!(s, "latent={}", c.latent);
        let _ = writeln!(s, "activation={}", c.activation.name());
        let _ = writeln!(s, "trunk_frequency={}", fmt_f64(c.trunk_frequency));
        let _ = writeln!(s, "output_bias={}", c.output_bias);
        let _ = writeln!(s, "lr={}", fmt_f64(c.lr));
        let _ = writeln!(s, "lr_decay={}", fmt_f64(c.lr_decay));
        let _ = writeln!(s, "epochs={}", c.epochs);
        let _ = writeln!(s, "batch_size={}", c.batch_size);
        let _ = writeln!(s, "seed={}", c.seed);
        let _ = writeln!(s, "w_data={}", fmt_f64(self.physics.w_data));
        let _ = writeln!(s, "w_physics={}", fmt_f64(self.physics.w_physics));
        let _ = writeln!(s, "collocation={}", self.physics.collocation);
        let _ = writeln!(
            s,
            "surrogate_checksum={}",
            self.surrogate_checksum.as_deref().unwrap_or("-")
        );
        self.stats.write_header(&mut s, "norm.");
        for (name, store) in [
            ("branch", &self.branch),
            ("trunk", &self.trunk),
            ("bias", &self.bias),
        ] {
            let _ = writeln!(s, "{name}");
            write_param_block(&mut s, store);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header, body) = split_header(text);
        let get = |k: &str| -> Result<&str> {
            header
                .iter()
                .find(|(hk, _)| hk == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("operator bundle lacks {k}")))
        };
        fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad {k}: {v:?}")))
        }
        let p = |k: &str| -> Result<f64> { parse(k, get(k)?) };
        let u = |k: &str| -> Result<usize> { parse(k, get(k)?) };
        let widths = |k: &str| -> Result<Vec<usize>> {
            get(k)?
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|w| parse(k, w))
                .collect()
        };
        if get("format")? != DEEPONET_FORMAT {
            return Err(Error::Config("not an operator bundle".into()));
        }
        if u("version")? != DEEPONET_VERSION as usize {
            return Err(Error::Config(format!(
                "unsupported operator version {}",
                get("version")?
            )));
        }
        let config = DeepOnetConfig {
            branch_hidden: widths("branch_hidden")?,
            trunk_hidden: widths("trunk_hidden")?,
            latent: u("latent")?,
            activation: Activation::parse(get("activation")?)?,
            trunk_frequency: p("trunk_frequency")?,
            output_bias: parse("output_bias", get("output_bias")?)?,
            lr: p("lr")?,
            lr_decay: p("lr_decay")?,
            epochs: u("epochs")?,
            batch_size: u("batch_size")?,
            seed: parse("seed", get("seed")?)?,
        };
        let physics = PhysicsLossConfig {
            w_data: p("w_data")?,
            w_physics: p("w_physics")?,
            collocation: u("collocation")?,
        };
        let stats = OperatorStats::read_header(|k| get(k).ok().map(str::to_string), "norm.")?;
        let surrogate_checksum = match get("surrogate_checksum")? {
            "-" => None,
            c => Some(c.to_string()),
        };
        let mut lines = body.into_iter();
        let mut block = |name: &str| -> Result<ParamStore> {
            if lines.next() != Some(name) {
                return Err(Error::Config(format!(
                    "operator bundle lacks the {name} block"
                )));
            }
            read_param_block(&mut lines)
        };
        let branch = block("branch")?;
        let trunk = block("trunk")?;
        let bias = block("bias")?;
        let model = Self {
            branch,
            trunk,
            bias,
            stats,
            order: u("n")?,
            dt: p("dt")?,
            config,
            physics,
            surrogate_checksum,
        };
        let bw = layer_widths(&model.branch)?;
        if bw != model.config.branch_widths(bw[0])
            || layer_widths(&model.trunk)? != model.config.trunk_widths()
        {
            return Err(Error::Dimension(
                "operator layer widths do not match header".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Denormalized prediction for one raw branch input at time `t` (s).
pub fn operator_forward(model: &DeepOnetModel, branch_input: &[f64], t: f64) -> Result<f64> {
    Ok(model.predict(branch_input, &[t])?[0])
}

/// `[x̂, dx̂/dt, …, dᵏx̂/dtᵏ]` in physical units at time `t` (s), `order`
/// in `1..=3`.
pub fn operator_jets(
    model: &DeepOnetModel,
    branch_input: &[f64],
    t: f64,
    order: usize,
) -> Result<Vec<f64>> {
    let w = model.branch_input_width();
    if branch_input.len() != w {
        return Err(Error::Dimension(format!(
            "branch input has {} values, expected {w}",
            branch_input.len()
        )));
    }
    let latent = crate::autodiff::mlp_forward(
        &model.branch,
        &Tensor::row(&model.stats.branch.normalize(branch_input)),
        model.config.activation,
    )?;
    let s = model.time_scale();
    let jets = crate::autodiff::forward_with_jets(
        &model.trunk,
        &[],
        t * s,
        model.config.activation,
        order,
    )?;
    let (sy, my) = (model.stats.target.std[0], model.stats.target.mean[0]);
    let bias = model.bias.get(BIAS).map_or(0.0, |b| b.data()[0]);
    Ok((0..=order)
        .map(|k| {
            let dot: f64 = latent
                .data()
                .iter()
                .zip(&jets)
                .map(|(b, j)| b * j.coeff(k))
                .sum();
            if k == 0 {
                sy * (dot + bias) + my
            } else {
                sy * dot * s.powi(k as i32)
            }
        })
        .collect())
}

/// Raw residuals `dⁿx̂/dtⁿ − gamma(state block, control window)` at `points`
/// for an arbitrary right-hand side, e.g. the true dynamics.
pub fn residuals_with(
    model: &DeepOnetModel,
    dataset: &OperatorDataset,
    points: &[CollocationPoint],
    gamma: impl Fn(&[f64], &[f64]) -> f64,
) -> Result<Vec<f64>> {
    check_points(dataset, model.order, points)?;
    let n = model.order;
    points
        .iter()
        .map(|p| {
            let d = operator_jets(
                model,
                &dataset.branch_inputs[p.traj],
                p.index as f64 * model.dt,
                n,
            )?;
            let window = &dataset.controls[p.traj][p.index + 1 - n..=p.index];
            Ok(d[n] - gamma(&d[..n], window))
        })
        .collect()
}

/// Mean squared error in normalized target units.
pub fn data_loss(
    model: &DeepOnetModel,
    dataset: &OperatorDataset,
    samples: &[OperatorSample],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("data loss of an empty batch".into()));
    }
    let prepared = Prepared::new(model, dataset)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let bl = model.branch_graph(&mut tape, &bound, &prepared)?;
    let l = model.data_graph(&mut tape, &bound, bl, samples)?;
    tape.value(l).item()
}

fn check_surrogate(model: &DeepOnetModel, surrogate: &SurrogateModel) -> Result<()> {
    if surrogate.order != model.order {
        return Err(Error::Contract(format!(
            "surrogate has order {} but the system has order {}",
            surrogate.order, model.order
        )));
    }
    Ok(())
}

fn check_points(
    dataset: &OperatorDataset,
    order: usize,
    points: &[CollocationPoint],
) -> Result<()> {
    for p in points {
        let len = dataset.controls.get(p.traj).map_or(0, Vec::len);
        if p.index + 1 < order || p.index >= len {
            return Err(Error::Contract(format!(
                "collocation point {p:?} has no full control window"
            )));
        }
    }
    Ok(())
}

/// Mean squared surrogate residual, scaled by the surrogate's target std.
pub fn physics_loss(
    model: &DeepOnetModel,
    surrogate: &SurrogateModel,
    dataset: &OperatorDataset,
    points: &[CollocationPoint],
) -> Result<f64> {
    check_surrogate(model, surrogate)?;
    check_points(dataset, model.order, points)?;
    if points.is_empty() {
        return Err(Error::Contract(
            "physics loss of no collocation points".into(),
        ));
    }
    let prepared = Prepared::new(model, dataset)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let frozen = surrogate.bind_frozen(&mut tape);
    let bl = model.branch_graph(&mut tape, &bound, &prepared)?;
    let l = model.physics_graph(
        &mut tape,
        &bound,
        bl,
        surrogate,
        &frozen,
        &dataset.controls,
        points,
    )?;
    tape.value(l).item()
}

/// Gradients of the three parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorGrads {
    pub branch: ParamStore,
    pub trunk: ParamStore,
    pub bias: ParamStore,
}

/// Value and parameter gradients of `w_D · L_D + w_P · L_P`.
pub fn combined_loss_and_grads(
    model: &DeepOnetModel,
    surrogate: Option<&SurrogateModel>,
    dataset: &OperatorDataset,
    samples: &[OperatorSample],
    points: &[CollocationPoint],
) -> Result<(f64, f64, OperatorGrads)> {
    let prepared = Prepared::new(model, dataset)?;
    let (d, p, g) = step_graph(model, surrogate, dataset, &prepared, samples, points, 0)?;
    Ok((d, p, g))
}

fn step_graph(
    model: &DeepOnetModel,
    surrogate: Option<&SurrogateModel>,
    dataset: &OperatorDataset,
    prepared: &Prepared,
    samples: &[OperatorSample],
    points: &[CollocationPoint],
    epoch: usize,
) -> Result<(f64, f64, OperatorGrads)> {
    let cfg = &model.physics;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let bl = model.branch_graph(&mut tape, &bound, prepared)?;
    let diverged = |component: &str| Error::Training {
        epoch,
        component: component.into(),
        detail: "loss is not finite".into(),
    };
    let mut total = None;
    let mut data_value = 0.0;
    if !samples.is_empty() && cfg.w_data > 0.0 {
        let l = model.data_graph(&mut tape, &bound, bl, samples)?;
        data_value = tape.value(l).item()?;
        if !data_value.is_finite() {
            return Err(diverged("data"));
        }
        total = Some(tape.scale(l, cfg.w_data));
    }
    let mut phys_value = 0.0;
    if cfg.uses_physics() && !points.is_empty() {
        let surrogate =
            surrogate.ok_or_else(|| Error::Contract("physics loss requires a surrogate".into()))?;
        let frozen = surrogate.bind_frozen(&mut tape);
        let l = model.physics_graph(
            &mut tape,
            &bound,
            bl,
            surrogate,
            &frozen,
            &dataset.controls,
            points,
        )?;
        phys_value = tape.value(l).item()?;
        if !phys_value.is_finite() {
            return Err(diverged("physics"));
        }
        let w = tape.scale(l, cfg.w_physics);
        total = Some(match total {
            Some(t) => tape.add(t, w)?,
            None => w,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("empty training step".into()))?;
    let grads = tape.backward(total)?;
    let wrap = |e: Error| Error::Training {
        epoch,
        component: "gradient".into(),
        detail: e.to_string(),
    };
    Ok((
        data_value,
        phys_value,
        OperatorGrads {
            branch: model
                .branch
                .collect_grads(&bound.branch, &grads)
                .map_err(wrap)?,
            trunk: model
                .trunk
                .collect_grads(&bound.trunk, &grads)
                .map_err(wrap)?,
            bias: model
                .bias
                .collect_grads(&bound.bias, &grads)
                .map_err(wrap)?,
        },
    ))
}

/// Uniform draws of `per_traj` sample indices per trajectory, restricted to
/// indices with a full control window.
pub fn sample_collocation(
    dataset: &OperatorDataset,
    per_traj: usize,
    rng: &mut impl Rng,
) -> Vec<CollocationPoint> {
    let mut out = Vec::with_capacity(per_traj * dataset.trajectories());
    for (traj, c) in dataset.controls.iter().enumerate() {
        for _ in 0..per_traj {
            out.push(CollocationPoint {
                traj,
                index: rng.random_range(dataset.order - 1..c.len()),
            });
        }
    }
    out
}

/// Minimizes `w_D · L_D + w_P · L_P` with Adam. With `w_P = 0` the
/// surrogate is never touched and no jets are built.
pub fn train_operator(
    dataset: &OperatorDataset,
    surrogate: Option<&SurrogateModel>,
    config: &DeepOnetConfig,
    physics: &PhysicsLossConfig,
) -> Result<(DeepOnetModel, OperatorHistory)> {
    let mut model = init_operator(dataset, config, physics)?;
    if dataset.samples.is_empty() {
        return Err(Error::Contract("operator dataset has no samples".into()));
    }
    if physics.uses_physics() {
        let s = surrogate
            .ok_or_else(|| Error::Contract("physics-informed training needs a surrogate".into()))?;
        check_surrogate(&model, s)?;
        model.surrogate_checksum = Some(s.params.checksum());
    }
    let prepared = Prepared::new(&model, dataset)?;
    let adam_cfg = AdamConfig::with_lr(config.lr);
    let mut adam_branch = AdamState::new(&model.branch, adam_cfg);
    let mut adam_trunk = AdamState::new(&model.trunk, adam_cfg);
    let mut adam_bias = AdamState::new(&model.bias, adam_cfg);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0001);
    let mut colloc_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0002);
    let mut samples = dataset.samples.clone();
    let batches = samples.len().div_ceil(config.batch_size);
    let mut history = OperatorHistory::default();
    for epoch in 0..config.epochs {
        let lr = decayed_lr(config.lr, config.lr_decay, epoch, config.epochs);
        adam_branch.config.lr = lr;
        adam_trunk.config.lr = lr;
        adam_bias.config.lr = lr;
        samples.shuffle(&mut shuffle_rng);
        let points = if physics.uses_physics() {
            colloc_rng.set_stream(epoch as u64);
            sample_collocation(dataset, physics.collocation, &mut colloc_rng)
        } else {
            Vec::new()
        };
        let per_batch = points.len().div_ceil(batches);
        let (mut dsum, mut psum) = (0.0, 0.0);
        for (b, chunk) in samples.chunks(config.batch_size).enumerate() {
            let pts = if per_batch == 0 {
                &[][..]
            } else {
                let lo = (b * per_batch).min(points.len());
                &points[lo..((b + 1) * per_batch).min(points.len())]
            };
            let (d, p, g) = step_graph(&model, surrogate, dataset, &prepared, chunk, pts, epoch)?;
            adam_branch.step(&mut model.branch, &g.branch)?;
            adam_trunk.step(&mut model.trunk, &g.trunk)?;
            adam_bias.step(&mut model.bias, &g.bias)?;
            dsum += d;
            psum += p;
        }
        history.data.push(dsum / batches as f64);
        history.physics.push(psum / batches as f64);
        if epoch % 500 == 0 {
            log::debug!(
                "operator epoch {epoch}: data {:.3e} physics {:.3e}",
                dsum / batches as f64,
                psum / batches as f64
            );
        }
    }
    if let Some(s) = surrogate.filter(|_| physics.uses_physics()) {
        if model.surrogate_checksum.as_deref() != Some(s.params.checksum().as_str()) {
            return Err(Error::Contract(
                "surrogate parameters changed during training".into(),
            ));
        }
    }
    Ok((model, history))
}

/// Units in which MAE is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaeUnit {
    Native,
    Degrees,
}

impl MaeUnit {
    pub fn factor(self) -> f64 {
        match self {
            MaeUnit::Native => 1.0,
            MaeUnit::Degrees => 180.0 / std::f64::consts::PI,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaeUnit::Native => "native",
            MaeUnit::Degrees => "degrees",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaeReport {
    pub labels: Vec<String>,
    pub per_dataset: Vec<f64>,
    pub mean: f64,
    pub unit: MaeUnit,
}

/// Predictions at every sample of `dataset`, in dataset order.
pub fn predict_dataset(model: &DeepOnetModel, dataset: &OperatorDataset) -> Result<Vec<f64>> {
    let prepared = Prepared::new(model, dataset)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let bl = model.branch_graph(&mut tape, &bound, &prepared)?;
    let traj: Vec<usize> = dataset.samples.iter().map(|s| s.traj).collect();
    let tau: Vec<f64> = dataset
        .samples
        .iter()
        .map(|s| s.time * model.time_scale())
        .collect();
    let y = model.output_graph(&mut tape, &bound, bl, &traj, &tau)?;
    let (m, s) = (model.stats.target.mean[0], model.stats.target.std[0]);
    Ok(tape.value(y).data().iter().map(|v| v * s + m).collect())
}

/// Mean absolute error per trajectory of `dataset` (whose targets should be
/// the clean ground truth) and their unweighted mean.
pub fn evaluate_mae(
    model: &DeepOnetModel,
    dataset: &OperatorDataset,
    unit: MaeUnit,
) -> Result<MaeReport> {
    let pred = predict_dataset(model, dataset)?;
    let n = dataset.trajectories();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (s, p) in dataset.samples.iter().zip(&pred) {
        sum[s.traj] += (p - s.target).abs();
        count[s.traj] += 1;
    }
    let per_dataset: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| s / c.max(1) as f64 * unit.factor())
        .collect();
    let mean = per_dataset.iter().sum::<f64>() / n.max(1) as f64;
    Ok(MaeReport {
        labels: dataset.labels.clone(),
        per_dataset,
        mean,
        unit,
    })
}

/// Published MAEs of the original physics-informed model and of the plain
/// DeepONet, for side-by-side display only.
pub fn reference_mae(kind: SystemKind, noisy: bool) -> Option<(f64, f64)> {
    match (kind, noisy) {
        (SystemKind::Pendulum, false) => Some((6.23, 17.98)),
        (SystemKind::Pendulum, true) => Some((7.57, 19.27)),
        (SystemKind::DrivenOscillator, false) => Some((16.69, 36.22)),
        (SystemKind::DrivenOscillator, true) => Some((19.10, 39.46)),
        (SystemKind::ChaoticJerk, true) => Some((18.7, 22.2)),
        (SystemKind::ChaoticJerk, false) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_operator_dataset, Standardizer};
    use crate::systems::{euler_simulate, ControlPolicy, SystemSpec};

    fn tiny_dataset() -> OperatorDataset {
        let trajs: Vec<_> = [0.4, 0.6]
            .iter()
            .map(|&gain| {
                euler_simulate(
                    &SystemSpec::pendulum(),
                    &ControlPolicy::Feedback { gain },
                    &[1.0, 0.0],
                    1e-2,
                    201,
                )
                .unwrap()
            })
            .collect();
        build_operator_dataset(&trajs, 4, 10).unwrap()
    }

    fn tiny_config() -> DeepOnetConfig {
        DeepOnetConfig {
            branch_hidden: vec![6],
            trunk_hidden: vec![5],
            latent: 4,
            activation: Activation::Tanh,
            trunk_frequency: 1.0,
            epochs: 1,
            batch_size: 7,
            ..Default::default()
        }
    }

    #[test]
    fn dot_product_selection() {
        let ds = tiny_dataset();
        let mut model = init_operator(&ds, &tiny_config(), &PhysicsLossConfig::baseline()).unwrap();
        model.stats.target = Standardizer::identity(1);
        // branch output forced to e1 via zero weights and a unit bias
        let last = model.branch.get_mut("l1.weight").unwrap();
        last.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let b = model.branch.get_mut("l1.bias").unwrap();
        b.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        model.bias.get_mut(BIAS).unwrap().data_mut()[0] = 0.5;
        let trunk_out =
            crate::autodiff::mlp_forward(&model.trunk, &Tensor::row(&[0.3]), Activation::Tanh)
                .unwrap();
        let y = operator_forward(&model, &ds.branch_inputs[0], 0.3 * ds.stats.horizon).unwrap();
        assert!((y - (trunk_out.data()[0] + 0.5)).abs() < 1e-12);

        model
            .branch
            .get_mut("l1.bias")
            .unwrap()
            .data_mut()
            .fill(0.0);
        let y = model
            .predict(&ds.branch_inputs[1], &[0.0, 1.0, 2.0])
            .unwrap();
        assert!(y.iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn data_loss_arithmetic() {
        let ds = tiny_dataset();
        let mut model = init_operator(&ds, &tiny_config(), &PhysicsLossConfig::baseline()).unwrap();
        model
            .branch
            .get_mut("l1.weight")
            .unwrap()
            .data_mut()
            .fill(0.0);
        model
            .branch
            .get_mut("l1.bias")
            .unwrap()
            .data_mut()
            .fill(0.0);
        model.stats.target = Standardizer::new(vec![0.0], vec![1.0]);
        let mk = |target| OperatorSample {
            traj: 0,
            index: 1,
            time: 0.01,
            target,
        };
        assert_eq!(data_loss(&model, &ds, &[mk(0.0)]).unwrap(), 0.0);
        assert_eq!(data_loss(&model, &ds, &[mk(2.0)]).unwrap(), 4.0);
        let l = data_loss(&model, &ds, &[mk(1.0), mk(-2.0), mk(3.0)]).unwrap();
        assert!((l - 14.0 / 3.0).abs() < 1e-15);
        assert!(data_loss(&model, &ds, &[]).is_err());
    }

    #[test]
    fn constant_target_is_learned() {
        let mut ds = tiny_dataset();
        for s in &mut ds.samples {
            s.target = 0.75;
        }
        ds.stats.target = Standardizer::new(vec![0.5], vec![1.0]);
        let cfg = DeepOnetConfig {
            epochs: 400,
            lr: 1e-2,
            lr_decay: 1.0,
            batch_size: 20,
            ..tiny_config()
        };
        let (model, hist) =
            train_operator(&ds, None, &cfg, &PhysicsLossConfig::baseline()).unwrap();
        let last = *hist.data.last().unwrap();
        assert!(last < 1e-6, "final data loss {last}");
        assert!(hist.physics.iter().all(|&p| p == 0.0));
        let l = data_loss(&model, &ds, &ds.samples).unwrap();
        assert!(l < 1e-6);
    }

    #[test]
    fn physics_without_surrogate_is_rejected() {
        let ds = tiny_dataset();
        assert!(matches!(
            train_operator(&ds, None, &tiny_config(), &PhysicsLossConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mae_of_constant_offset() {
        let mut ds = tiny_dataset();
        let mut model = init_operator(&ds, &tiny_config(), &PhysicsLossConfig::baseline()).unwrap();
        model
            .branch
            .get_mut("l1.weight")
            .unwrap()
            .data_mut()
            .fill(0.0);
        model
            .branch
            .get_mut("l1.bias")
            .unwrap()
            .data_mut()
            .fill(0.0);
        model.stats.target = Standardizer::identity(1);
        for s in &mut ds.samples {
            s.target = 1.0;
        }
        let r = evaluate_mae(&model, &ds, MaeUnit::Native).unwrap();
        assert_eq!(r.per_dataset, vec![1.0, 1.0]);
        assert_eq!(r.mean, 1.0);
        for s in &mut ds.samples {
            s.target = 0.0;
        }
        assert_eq!(
            evaluate_mae(&model, &ds, MaeUnit::Native).unwrap().mean,
            0.0
        );
    }

    #[test]
    fn bundle_round_trip() {
        let ds = tiny_dataset();
        let (model, _) =
            train_operator(&ds, None, &tiny_config(), &PhysicsLossConfig::baseline()).unwrap();
        let back = DeepOnetModel::from_text(&model.to_text()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn collocation_respects_window() {
        let ds = tiny_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = sample_collocation(&ds, 50, &mut rng);
        assert_eq!(pts.len(), 100);
        assert!(pts.iter().all(|p| p.index >= 1 && p.index < 201));
    }
}
