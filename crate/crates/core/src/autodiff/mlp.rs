//! Fully connected networks stored in a [`ParamStore`].
//!
//! Layer `i` owns `l{i}.weight` with shape `[out, in]` and `l{i}.bias` with
//! shape `[1, out]`. Hidden layers apply the activation, the final layer is
//! affine.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::jet::{check_order, Jet3, TapeJet};
use super::params::{BoundParams, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sin,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sin => "sin",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sin" => Ok(Activation::Sin),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }

    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Sin => tape.sin(x),
        }
    }

    fn apply_jet(self, tape: &mut Tape, x: &TapeJet) -> Result<TapeJet> {
        match self {
            Activation::Tanh => x.tanh(tape),
            Activation::Relu => x.relu(tape),
            Activation::Sin => x.sin(tape),
        }
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("l{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("l{layer}.bias")
}

/// Glorot-uniform weights, zero biases. `widths` includes input and output.
pub fn init_mlp(widths: &[usize], rng: &mut impl Rng) -> ParamStore {
    assert!(
        widths.len() >= 2,
        "an MLP needs at least input and output widths"
    );
    let mut store = ParamStore::new();
    for (i, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        store.insert(
            weight_name(i),
            Tensor::new(vec![fan_out, fan_in], data).expect("sized"),
        );
        store.insert(bias_name(i), Tensor::zeros(&[1, fan_out]));
    }
    store
}

/// Input and output widths of every layer, validating that they chain.
pub fn layer_widths(params: &ParamStore) -> Result<Vec<usize>> {
    let mut widths = Vec::new();
    let mut layer = 0;
    while let Some(w) = params.get(&weight_name(layer)) {
        if w.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "layer {layer}: weight must be rank 2"
            )));
        }
        let (out, inp) = (w.shape()[0], w.shape()[1]);
        match widths.last() {
            None => widths.push(inp),
            Some(&prev) if prev != inp => {
                return Err(Error::Dimension(format!(
                    "layer {layer}: expects input width {inp} but previous layer emits {prev}"
                )))
            }
            _ => {}
        }
        let b = params
            .get(&bias_name(layer))
            .ok_or_else(|| Error::Dimension(format!("layer {layer}: missing bias")))?;
        if b.len() != out {
            return Err(Error::Dimension(format!(
                "layer {layer}: bias length {} but {out} outputs",
                b.len()
            )));
        }
        widths.push(out);
        layer += 1;
    }
    if layer == 0 {
        return Err(Error::Dimension("parameter store has no layers".into()));
    }
    Ok(widths)
}

/// Forward pass on a tape.
pub fn mlp_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    input: Var,
    layers: usize,
    activation: Activation,
) -> Result<Var> {
    let mut h = input;
    for i in 0..layers {
        let w = bound.require(&weight_name(i))?;
        let b = bound.require(&bias_name(i))?;
        h = tape
            .linear(h, w, Some(b))
            .map_err(|e| Error::Dimension(format!("layer {i}: {e}")))?;
        if i + 1 < layers {
            h = activation.apply(tape, h);
        }
    }
    Ok(h)
}

/// Jet propagation on a tape. `input` is `[batch, in]`; column
/// `time_channel` is the independent variable.
pub fn mlp_jets_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    input: Var,
    time_channel: usize,
    layers: usize,
    activation: Activation,
    order: usize,
) -> Result<TapeJet> {
    check_order(order)?;
    let shape = tape.value(input).shape().to_vec();
    let cols = tape.value(input).cols();
    if time_channel >= cols {
        return Err(Error::Dimension(format!(
            "time channel {time_channel} outside input width {cols}"
        )));
    }
    let mut seed = Tensor::zeros(&shape);
    for row in seed.data_mut().chunks_exact_mut(cols) {
        row[time_channel] = 1.0;
    }
    let seed = tape.constant(seed);
    let mut h = TapeJet {
        coeffs: [Some(input), Some(seed), None, None],
        order,
    };
    for i in 0..layers {
        let w = bound.require(&weight_name(i))?;
        let b = bound.require(&bias_name(i))?;
        h = h
            .map_linear(tape, |tape, x, is_value| {
                tape.linear(x, w, if is_value { Some(b) } else { None })
            })
            .map_err(|e| Error::Dimension(format!("layer {i}: {e}")))?;
        if i + 1 < layers {
            h = activation.apply_jet(tape, &h)?;
        }
    }
    Ok(h)
}

/// Plain forward pass: `input` is `[batch, in]` (or a single row).
pub fn mlp_forward(params: &ParamStore, input: &Tensor, activation: Activation) -> Result<Tensor> {
    let widths = layer_widths(params)?;
    let input = if input.shape().len() == 1 {
        input.clone().reshape(vec![1, input.len()])?
    } else {
        input.clone()
    };
    if input.cols() != widths[0] {
        return Err(Error::Dimension(format!(
            "layer 0: input width {} but network expects {}",
            input.cols(),
            widths[0]
        )));
    }
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let x = tape.constant(input);
    let y = mlp_tape(&mut tape, &bound, x, widths.len() - 1, activation)?;
    let out = tape.value(y).clone();
    if !out.is_finite() {
        return Err(Error::Numeric("network output is not finite".into()));
    }
    Ok(out)
}

/// Output jets of a network whose input is `static_inputs` followed by
/// `time` as the last channel.
pub fn forward_with_jets(
    params: &ParamStore,
    static_inputs: &[f64],
    time: f64,
    activation: Activation,
    order: usize,
) -> Result<Vec<Jet3>> {
    check_order(order)?;
    let widths = layer_widths(params)?;
    let mut row = static_inputs.to_vec();
    row.push(time);
    if row.len() != widths[0] {
        return Err(Error::Dimension(format!(
            "layer 0: input width {} but network expects {}",
            row.len(),
            widths[0]
        )));
    }
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let x = tape.constant(Tensor::row(&row));
    let jet = mlp_jets_tape(
        &mut tape,
        &bound,
        x,
        row.len() - 1,
        widths.len() - 1,
        activation,
        order,
    )?;
    let width = *widths.last().expect("non-empty");
    let read = |k: usize| -> Vec<f64> {
        match jet.coeffs[k] {
            Some(v) if k <= order => tape.value(v).data().to_vec(),
            _ => vec![0.0; width],
        }
    };
    let (c0, c1, c2, c3) = (read(0), read(1), read(2), read(3));
    Ok((0..width)
        .map(|j| Jet3::new(c0[j], c1[j], c2[j], c3[j]))
        .collect())
}
