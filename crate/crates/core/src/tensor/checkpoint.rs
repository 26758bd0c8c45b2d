use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;

use super::params::ParamStore;
use super::Tensor;

pub const PARAMS_FORMAT: &str = "sceneaug-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// JSON parameter checkpoint: an ordered list of named tensors plus the
/// model configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    #[serde(default)]
    pub config: serde_json::Value,
    pub params: Vec<ParamRecord>,
}

impl ParamsFile {
    pub fn from_store<T: Scalar>(store: &ParamStore<T>, config: serde_json::Value) -> Self {
        Self {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            dtype: T::NAME.into(),
            config,
            params: store
                .iter()
                .map(|(_, p)| ParamRecord {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().iter().map(|x| x.as_f64()).collect(),
                })
                .collect(),
        }
    }

    /// Overwrites every parameter of `store`; names and shapes must match.
    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.format != PARAMS_FORMAT || self.version != PARAMS_VERSION {
            bail!(
                Format,
                "unsupported checkpoint {:?} v{} (expected {PARAMS_FORMAT:?} v{PARAMS_VERSION})",
                self.format,
                self.version
            );
        }
        if self.params.len() != store.len() {
            bail!(
                Consistency,
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                store.len()
            );
        }
        for rec in &self.params {
            let id = store
                .id_of(&rec.name)
                .ok_or_else(|| Error::Consistency(format!("unknown parameter {:?}", rec.name)))?;
            let p = store.get_mut(id);
            if p.value.shape() != rec.shape.as_slice() {
                bail!(
                    Shape,
                    "parameter {:?}: checkpoint shape {:?}, model shape {:?}",
                    rec.name,
                    rec.shape,
                    p.value.shape()
                );
            }
            let t = Tensor::new(rec.shape.clone(), rec.values.iter().map(|&v| T::lit(v)).collect())?;
            p.value = t.with_requires_grad(true);
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = seeded(3);
        let mut a = ParamStore::<f64>::new();
        a.add_normal("w", 3, 4, 0.7, &mut rng).unwrap();
        a.add_normal("b", 1, 4, 1e-3, &mut rng).unwrap();
        let json = ParamsFile::from_store(&a, serde_json::json!({"d": 4})).to_json().unwrap();
        let mut b = ParamStore::<f64>::new();
        b.add_full("w", 3, 4, 0.0).unwrap();
        b.add_full("b", 1, 4, 0.0).unwrap();
        ParamsFile::from_json(&json).unwrap().load_into(&mut b).unwrap();
        for ((_, x), (_, y)) in a.iter().zip(b.iter()) {
            assert_eq!(x.value.data(), y.value.data());
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut a = ParamStore::<f32>::new();
        a.add_full("w", 2, 2, 1.0).unwrap();
        let f = ParamsFile::from_store(&a, serde_json::Value::Null);
        let mut b = ParamStore::<f32>::new();
        b.add_full("w", 1, 4, 0.0).unwrap();
        assert!(f.load_into(&mut b).is_err());
    }
}
