use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{AutodiffError, Result, Tensor};

/// Named learnable tensors, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

/// On-disk form of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Like [`get`](Self::get) but with an error naming the missing parameter.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| AutodiffError::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn to_stored(&self) -> BTreeMap<String, StoredTensor> {
        self.tensors
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    StoredTensor {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect()
    }

    pub fn from_stored(stored: BTreeMap<String, StoredTensor>) -> Result<Self> {
        let mut out = Self::new();
        for (name, s) in stored {
            let t = Tensor::new(s.shape, s.data)
                .map_err(|e| AutodiffError::Checkpoint(format!("parameter {name}: {e}")))?;
            out.insert(name, t);
        }
        Ok(out)
    }

    /// JSON map `name -> {shape, data}`. Floats round-trip bit-exactly.
    pub fn to_json(&self) -> Result<String> {
        if !self.all_finite() {
            return Err(AutodiffError::NonFinite { op: "checkpoint" });
        }
        serde_json::to_string(&self.to_stored()).map_err(|e| AutodiffError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stored: BTreeMap<String, StoredTensor> =
            serde_json::from_str(text).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        Self::from_stored(stored)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(values in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let mut store = ParamStore::new();
            let n = values.len();
            store.insert("a", Tensor::new(vec![n], values.clone()).unwrap());
            store.insert("b.w", Tensor::new(vec![1, n], values.iter().map(|v| v / 3.0).collect()).unwrap());
            let back = ParamStore::from_json(&store.to_json().unwrap()).unwrap();
            for (name, t) in store.iter() {
                let u = back.get(name).unwrap();
                prop_assert_eq!(t.shape(), u.shape());
                for (x, y) in t.data().iter().zip(u.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn rejects_bad_shape_on_load() {
        let text = r#"{"w":{"shape":[2,2],"data":[1.0,2.0,3.0]}}"#;
        assert!(ParamStore::from_json(text).is_err());
    }
}
