use serde_json::{json, Value};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io::json_number;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

/// Named model parameters. Each forward pass binds them to a fresh tape.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, true)
    }

    /// Parameter that is carried along but never updated.
    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        self.entries.push(Entry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Puts every parameter on `tape`, trainable ones as gradient leaves.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding {
            vars: self
                .entries
                .iter()
                .map(|e| {
                    if e.trainable {
                        tape.param(e.value.clone())
                    } else {
                        tape.constant(e.value.clone())
                    }
                })
                .collect(),
        }
    }

    /// Checkpoint: `{"params":[{"name","shape","data"}]}` with 17-digit floats.
    pub fn to_json(&self) -> Result<Value> {
        let params = self
            .entries
            .iter()
            .map(|e| {
                let data = e
                    .value
                    .data()
                    .iter()
                    .map(|&x| json_number(x).map(Value::Number))
                    .collect::<Result<Vec<_>>>()?;
                Ok(json!({
                    "name": e.name,
                    "shape": e.value.shape(),
                    "trainable": e.trainable,
                    "data": data,
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(json!({ "params": params }))
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("checkpoint: {m}"));
        let list = v
            .get("params")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing params array"))?;
        let mut store = ParamStore::new();
        for p in list {
            let name = p
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| bad("missing name"))?;
            let shape = p
                .get("shape")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("missing shape"))?
                .iter()
                .map(|d| d.as_u64().map(|d| d as usize).ok_or_else(|| bad("bad shape")))
                .collect::<Result<Vec<_>>>()?;
            let data = p
                .get("data")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("missing data"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| bad("bad number")))
                .collect::<Result<Vec<_>>>()?;
            let trainable = p.get("trainable").and_then(Value::as_bool).unwrap_or(true);
            store.push(name.to_string(), Tensor::new(shape, data)?, trainable);
        }
        Ok(store)
    }
}

/// Tape handles for one forward pass, indexed like the store.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients in store order (zeros for frozen entries).
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.vars.iter().map(|&v| tape.grad(v)).collect()
    }
}
