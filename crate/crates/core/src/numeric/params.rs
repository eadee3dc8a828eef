use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::array::Array;
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Named parameter arrays, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet {
    arrays: BTreeMap<String, Array>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        self.arrays.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.arrays.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.arrays.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Array> {
        self.get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.arrays.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.arrays.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Total number of scalar values.
    pub fn size(&self) -> usize {
        self.arrays.values().map(Array::len).sum()
    }

    /// Zero-filled arrays with the same names and shapes.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            arrays: self
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), Array::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.arrays.len() == other.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&other.arrays)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    /// Adds `other` elementwise; layouts must match.
    pub fn add_assign(&mut self, other: &ParamSet) {
        for (k, v) in self.arrays.iter_mut() {
            if let Some(o) = other.arrays.get(k) {
                v.add_assign(o);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.arrays.values_mut() {
            for x in v.data_mut() {
                *x *= c;
            }
        }
    }

    /// Flat view of coordinate `i` in name-then-row-major order.
    pub(crate) fn coord_mut(&mut self, mut i: usize) -> &mut f64 {
        for v in self.arrays.values_mut() {
            if i < v.len() {
                return &mut v.data_mut()[i];
            }
            i -= v.len();
        }
        panic!("coordinate out of range")
    }

    pub(crate) fn flat(&self) -> Vec<f64> {
        self.arrays.values().flat_map(|v| v.data().iter().copied()).collect()
    }

    /// Registers every parameter on the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v.clone())))
                .collect(),
        }
    }

    /// Serializes as a versioned JSON document; floats use shortest
    /// round-trip formatting, so `from_json(to_json(p)) == p` bit for bit.
    pub fn to_json(&self) -> Result<String> {
        let doc = ParamFile {
            format: PARAM_FORMAT.into(),
            version: PARAM_VERSION,
            params: self.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<ParamSet> {
        let doc: ParamFile = serde_json::from_str(text)?;
        if doc.format != PARAM_FORMAT || doc.version != PARAM_VERSION {
            return Err(Error::Contract(format!(
                "unsupported parameter file {} v{}",
                doc.format, doc.version
            )));
        }
        doc.params.validate()?;
        Ok(doc.params)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        for (k, v) in &self.arrays {
            if v.shape().iter().product::<usize>() != v.len() || v.shape().is_empty() {
                return Err(Error::Contract(format!("parameter `{k}`: shape/data mismatch")));
            }
            if !v.is_finite() {
                return Err(Error::Contract(format!("parameter `{k}` is not finite")));
            }
        }
        Ok(())
    }
}

pub const PARAM_FORMAT: &str = "qbe-params";
pub const PARAM_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamFile {
    format: String,
    version: u32,
    params: ParamSet,
}

/// Tape variables for a bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    /// Collects per-parameter gradients; parameters the loss does not depend
    /// on get zeros.
    pub fn collect(&self, grads: &mut Gradients, like: &ParamSet) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, value) in like.iter() {
            let g = self
                .vars
                .get(name)
                .and_then(|&v| grads.take(v))
                .unwrap_or_else(|| Array::zeros(value.shape()));
            out.insert(name, g);
        }
        out
    }
}
