//! Named parameter tensors and their on-disk container.

use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PARAMS_MAGIC: &str = "mfpi-params";
pub const PARAMS_VERSION: u32 = 1;

/// Insertion-ordered map of parameter name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// A zero tensor for every parameter, same shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.params {
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, true)
    }

    /// Registers every tensor as a constant; gradients still flow through
    /// the network to its inputs.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        BoundParams { vars }
    }

    /// Gradient of every parameter in `bound`; zeros for parameters the
    /// loss does not touch.
    pub fn collect_grads(&self, bound: &BoundParams, grads: &Gradients) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for (name, t) in &self.params {
            let var = bound.get(name).ok_or_else(|| {
                Error::Contract(format!("parameter {name} was not bound on this tape"))
            })?;
            let g = grads
                .get(var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()));
            if !g.is_finite() {
                return Err(Error::Numeric(format!("gradient of {name} is not finite")));
            }
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{PARAMS_MAGIC} {PARAMS_VERSION}\n");
        write_param_block(&mut s, self);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let mut parts = header.split_whitespace();
        if parts.next() != Some(PARAMS_MAGIC) {
            return Err(Error::format("<params>", "missing mfpi-params header"));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format("<params>", "missing format version"))?;
        if version != PARAMS_VERSION {
            return Err(Error::format(
                "<params>",
                format!("unsupported version {version}"),
            ));
        }
        read_param_block(&mut lines)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Format { detail, .. } => Error::format(path, detail),
            other => other,
        })
    }
}

/// `count N` then one line per tensor: `name d0xd1 v v v ...`.
/// Floats use Rust's shortest round-trip formatting, so reading back is
/// bit-exact.
pub(crate) fn write_param_block(s: &mut String, store: &ParamStore) {
    let _ = writeln!(s, "count {}", store.len());
    for (name, t) in store.iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = write!(s, "{name} {}", shape.join("x"));
        for v in t.data() {
            let _ = write!(s, " {v:?}");
        }
        s.push('\n');
    }
}

pub(crate) fn read_param_block<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
) -> Result<ParamStore> {
    let bad = |d: String| Error::format("<params>", d);
    let count_line = lines
        .next()
        .ok_or_else(|| bad("missing count line".into()))?;
    let count: usize = count_line
        .strip_prefix("count ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| bad(format!("bad count line {count_line:?}")))?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing tensor {i}")))?;
        let mut fields = line.split_whitespace();
        let name = fields
            .next()
            .ok_or_else(|| bad(format!("tensor {i}: empty line")))?;
        let shape: Vec<usize> = fields
            .next()
            .ok_or_else(|| bad(format!("{name}: missing shape")))?
            .split('x')
            .map(|d| d.parse().map_err(|_| bad(format!("{name}: bad shape"))))
            .collect::<Result<_>>()?;
        let data: Vec<f64> = fields
            .map(|v| {
                v.parse()
                    .map_err(|_| bad(format!("{name}: bad value {v:?}")))
            })
            .collect::<Result<_>>()?;
        store.insert(
            name,
            Tensor::new(shape, data).map_err(|e| bad(format!("{name}: {e}")))?,
        );
    }
    Ok(store)
}

/// Tape handles for a [`ParamStore`], by name.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<Var> {
        self.get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_bit_exact() {
        let mut p = ParamStore::new();
        p.insert(
            "a.weight",
            Tensor::new(vec![2, 2], vec![0.1, -0.0, 1e-300, 1.0 / 3.0]).unwrap(),
        );
        p.insert("a.bias", Tensor::row(&[std::f64::consts::PI, -7.5]));
        let back = ParamStore::from_text(&p.to_text()).unwrap();
        assert_eq!(back.checksum(), p.checksum());
        let keys: Vec<_> = back.iter().map(|(k, _)| k.to_string()).collect();
        assert_eq!(keys, ["a.weight", "a.bias"]);
        assert!(back.get("a.weight").unwrap().data()[1].is_sign_negative());
    }

    #[test]
    fn rejects_wrong_version() {
        assert!(ParamStore::from_text("mfpi-params 9\ncount 0\n").is_err());
        assert!(ParamStore::from_text("something else").is_err());
    }

    #[test]
    fn checksum_sees_single_bit_changes() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(1.0));
        let before = p.checksum();
        p.get_mut("w").unwrap().data_mut()[0] = f64::from_bits(1.0f64.to_bits() + 1);
        assert_ne!(before, p.checksum());
    }
}
