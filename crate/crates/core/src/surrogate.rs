//! The short-term-dependency network: `dⁿx(t) ≈ γ(x(t), …, dⁿ⁻¹x(t), u(t−n+1), …, u(t))`.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    init_mlp, layer_widths, mlp_tape, read_param_block, write_param_block, Activation, AdamConfig,
    AdamState, BoundParams, ParamStore, Tape, Var,
};
use crate::data::{NormStats, SurrogateDataset};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_text, split_header, write_atomic};
use crate::systems::{SystemSpec, Trajectory};
use crate::tensor::Tensor;

pub const SURROGATE_FORMAT: &str = "mfpi-surrogate";
pub const SURROGATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` (geometric decay).
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            activation: Activation::Tanh,
            lr: 1e-3,
            lr_decay: 1.0,
            epochs: 200,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Config(
                "surrogate hidden widths must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "surrogate lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(
                "surrogate batch size must be positive".into(),
            ));
        }
        Ok(())
    }

    fn widths(&self, order: usize) -> Vec<usize> {
        let mut w = vec![2 * order];
        w.extend(&self.hidden);
        w.push(1);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub params: ParamStore,
    pub norm: NormStats,
    pub order: usize,
    pub config: SurrogateConfig,
    /// Mean squared error in normalized target units after the last epoch.
    pub train_mse: f64,
}

/// Per-epoch mean minibatch loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
}

pub fn train_surrogate(
    dataset: &SurrogateDataset,
    config: &SurrogateConfig,
) -> Result<(SurrogateModel, TrainHistory)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("surrogate dataset is empty".into()));
    }
    let width = dataset.width();
    if dataset.inputs.len() != width * dataset.len() || dataset.stats.input.width() != width {
        return Err(Error::Dimension(
            "surrogate dataset shapes are inconsistent".into(),
        ));
    }
    let inputs = dataset.normalized_inputs();
    let targets = dataset.normalized_targets();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let widths = config.widths(dataset.order);
    let layers = widths.len() - 1;
    let mut params = init_mlp(&widths, &mut rng);
    let mut adam = AdamState::new(&params, AdamConfig::with_lr(config.lr));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = TrainHistory::default();
    let mut xb = Vec::with_capacity(config.batch_size * width);
    let mut yb = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        adam.config.lr = decayed_lr(config.lr, config.lr_decay, epoch, config.epochs);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(&inputs[i * width..(i + 1) * width]);
                yb.push(targets[i]);
            }
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let x = tape.constant(Tensor::new(vec![chunk.len(), width], xb.clone())?);
            let y = tape.constant(Tensor::column(&yb));
            let pred = mlp_tape(&mut tape, &bound, x, layers, config.activation)?;
            let diff = tape.sub(pred, y)?;
            let sq = tape.square(diff);
            let loss = tape.mean(sq);
            let lv = tape.value(loss).item()?;
            if !lv.is_finite() {
                return Err(Error::Training {
                    epoch,
                    component: "surrogate".into(),
                    detail: "loss is not finite".into(),
                });
            }
            let grads = tape.backward(loss)?;
            let g = params
                .collect_grads(&bound, &grads)
                .map_err(|e| Error::Training {
                    epoch,
                    component: "surrogate".into(),
                    detail: e.to_string(),
                })?;
            adam.step(&mut params, &g)?;
            total += lv;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::debug!("surrogate epoch {epoch}: loss {mean:.3e}");
        history.epoch_loss.push(mean);
    }
    let mut model = SurrogateModel {
        params,
        norm: dataset.stats.clone(),
        order: dataset.order,
        config: config.clone(),
        train_mse: f64::NAN,
    };
    let pred = model.predict_normalized(&inputs)?;
    model.train_mse = pred
        .iter()
        .zip(&targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / targets.len() as f64;
    Ok((model, history))
}

/// `lr · decay^(epoch / (epochs − 1))`.
pub(crate) fn decayed_lr(lr: f64, decay: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs < 2 {
        return lr;
    }
    lr * decay.powf(epoch as f64 / (epochs - 1) as f64)
}

impl SurrogateModel {
    fn layers(&self) -> usize {
        self.config.hidden.len() + 1
    }

    fn predict_normalized(&self, normalized: &[f64]) -> Result<Vec<f64>> {
        let width = 2 * self.order;
        let rows = normalized.len() / width;
        let mut out = Vec::with_capacity(rows);
        // bounded batches keep the frozen tape small
        for chunk in normalized.chunks(4096 * width) {
            let x = Tensor::new(vec![chunk.len() / width, width], chunk.to_vec())?;
            out.extend(
                crate::autodiff::mlp_forward(&self.params, &x, self.config.activation)?.into_data(),
            );
        }
        Ok(out)
    }

    /// Denormalized `dⁿx(t)` for a state block `[x, …, dⁿ⁻¹x]` and control
    /// window `[u(t−n+1), …, u(t)]`.
    pub fn predict_highest_derivative(&self, state: &[f64], controls: &[f64]) -> Result<f64> {
        if state.len() != self.order || controls.len() != self.order {
            return Err(Error::Dimension(format!(
                "surrogate of order {} got {} states and {} controls",
                self.order,
                state.len(),
                controls.len()
            )));
        }
        let raw: Vec<f64> = state.iter().chain(controls).copied().collect();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("surrogate input is not finite".into()));
        }
        Ok(self.predict_batch(&raw)?[0])
    }

    /// Row-major raw inputs, `2n` columns, to denormalized predictions.
    pub fn predict_batch(&self, raw_inputs: &[f64]) -> Result<Vec<f64>> {
        let width = 2 * self.order;
        if !raw_inputs.len().is_multiple_of(width) {
            return Err(Error::Dimension(format!(
                "input length not a multiple of {width}"
            )));
        }
        let normalized = self.norm.input.normalize_rows(raw_inputs);
        let pred = self.predict_normalized(&normalized)?;
        let (m, s) = (self.norm.target.mean[0], self.norm.target.std[0]);
        Ok(pred.into_iter().map(|p| p * s + m).collect())
    }

    /// Registers the weights as constants: gradients reach the inputs but
    /// never the surrogate itself.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        self.params.bind_frozen(tape)
    }

    /// Differentiable prediction on a `[batch, 2n]` node of raw inputs.
    pub fn predict_tape(&self, tape: &mut Tape, bound: &BoundParams, raw: Var) -> Result<Var> {
        let scale: Vec<f64> = self.norm.input.std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = self
            .norm
            .input
            .mean
            .iter()
            .zip(&self.norm.input.std)
            .map(|(m, s)| -m / s)
            .collect();
        let x = tape.col_affine(raw, &scale, &shift)?;
        let y = mlp_tape(tape, bound, x, self.layers(), self.config.activation)?;
        Ok(tape.affine(y, self.norm.target.std[0], self.norm.target.mean[0]))
    }

    /// RMSE of the surrogate against the true dynamics over every valid
    /// sample of `trajs` (the true function is an oracle here only).
    pub fn oracle_rmse(&self, system: &SystemSpec, trajs: &[Trajectory]) -> Result<f64> {
        let n = self.order;
        let mut raw = Vec::new();
        let mut truth = Vec::new();
        for tr in trajs {
            for t in n - 1..tr.steps() {
                let state = tr.state_at(t);
                truth.push(system.highest_derivative(&state, tr.controls[t]));
                raw.extend(state);
                raw.extend_from_slice(&tr.controls[t + 1 - n..=t]);
            }
        }
        let pred = self.predict_batch(&raw)?;
        let mse = pred
            .iter()
            .zip(&truth)
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / truth.len().max(1) as f64;
        Ok(mse.sqrt())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format={SURROGATE_FORMAT}");
        let _ = writeln!(s, "version={SURROGATE_VERSION}");
        let _ = writeln!(s, "n={}", self.order);
        let _ = writeln!(s, "activation={}", self.config.activation.name());
        let hidden: Vec<String> = self.config.hidden.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "hidden={}", hidden.join(","));
        let _ = writeln!(s, "lr={}", fmt_f64(self.config.lr));
        let _ = writeln!(s, "lr_decay={}", fmt_f64(self.config.lr_decay));
        let _ = writeln!(s, "epochs={}", self.config.epochs);
        let _ = writeln!(s, "batch_size={}", self.config.batch_size);
        let _ = writeln!(s, "seed={}", self.config.seed);
        let _ = writeln!(s, "train_mse={}", fmt_f64(self.train_mse));
        self.norm.write_header(&mut s, "norm.");
        s.push_str("params\n");
        write_param_block(&mut s, &self.params);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header, body) = split_header(text);
        let get = |k: &str| -> Result<&str> {
            header
                .iter()
                .find(|(hk, _)| hk == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("surrogate bundle lacks {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("bad {k}")))
        };
        if get("format")? != SURROGATE_FORMAT {
            return Err(Error::Config("not a surrogate bundle".into()));
        }
        if get("version")? != SURROGATE_VERSION.to_string() {
            return Err(Error::Config(format!(
                "unsupported surrogate version {}",
                get("version")?
            )));
        }
        let hidden = get("hidden")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|w| {
                w.parse()
                    .map_err(|_| Error::Config("bad hidden widths".into()))
            })
            .collect::<Result<Vec<usize>>>()?;
        let config = SurrogateConfig {
            hidden,
            activation: Activation::parse(get("activation")?)?,
            lr: num("lr")?,
            lr_decay: num("lr_decay")?,
            epochs: num("epochs")? as usize,
            batch_size: num("batch_size")? as usize,
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::Config("bad seed".into()))?,
        };
        let norm = NormStats::read_header(|k| get(k).ok().map(str::to_string), "norm.")?;
        let mut lines = body.into_iter();
        if lines.next() != Some("params") {
            return Err(Error::Config(
                "surrogate bundle lacks a params block".into(),
            ));
        }
        let params = read_param_block(&mut lines)?;
        let order = num("n")? as usize;
        let widths = layer_widths(&params)?;
        if widths != config.widths(order) {
            return Err(Error::Dimension(format!(
                "surrogate layer widths {widths:?} do not match header"
            )));
        }
        Ok(Self {
            params,
            norm,
            order,
            config,
            train_mse: num("train_mse")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
    }
}
