//! Versioned JSON container for model parameters. Every tensor is stored by
//! name with its shape and row-major values; floats round-trip exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::CnnParams;
use crate::corpus::{RelationMap, Vocab};
use crate::error::{Error, Result};
use crate::selector::PolicyParams;
use crate::trainer::{ModelConfig, Networks};

pub const FORMAT: &str = "noisy-relex-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    pub relations: Vec<String>,
    /// Free-form provenance, e.g. the stage that wrote the file.
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, vocab: &Vocab, relations: &RelationMap) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            model,
            vocab: vocab.words().to_vec(),
            relations: relations.names().to_vec(),
            meta: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::from_words(self.vocab.clone())
    }

    pub fn relations(&self) -> Result<RelationMap> {
        RelationMap::ordered(self.relations.clone())
    }

    fn put(&mut self, name: String, shape: Vec<usize>, values: &[f64]) -> Result<()> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor `{name}` has non-finite values")));
        }
        self.tensors.retain(|t| t.name != name);
        self.tensors.push(Tensor { name, shape, values: values.to_vec() });
        Ok(())
    }

    fn take(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn has(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.tensors.iter().any(|t| t.name.starts_with(&p))
    }

    pub fn put_cnn(&mut self, prefix: &str, params: &CnnParams) -> Result<()> {
        for (name, shape, values) in params.tensors() {
            self.put(format!("{prefix}.{name}"), shape, values)?;
        }
        Ok(())
    }

    pub fn cnn(&self, prefix: &str) -> Result<CnnParams> {
        let shape = self.model.cnn_shape(self.vocab.len(), self.relations.len());
        let mut params = CnnParams::zeros(shape);
        let expected: Vec<(&'static str, Vec<usize>)> =
            params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        for ((name, shape), slot) in expected.into_iter().zip(params.tensors_mut()) {
            let t = self.take(&format!("{prefix}.{name}"))?;
            if t.shape != shape || t.values.len() != slot.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{prefix}.{name}` has shape {:?}, expected {:?}",
                    t.shape, shape
                )));
            }
            slot.copy_from_slice(&t.values);
        }
        Ok(params)
    }

    pub fn put_policy(&mut self, prefix: &str, policy: &PolicyParams) -> Result<()> {
        self.put(format!("{prefix}.w"), vec![policy.dim()], &policy.w)?;
        self.put(format!("{prefix}.b"), vec![1], &[policy.b])
    }

    pub fn policy(&self, prefix: &str) -> Result<PolicyParams> {
        let w = self.take(&format!("{prefix}.w"))?;
        let b = self.take(&format!("{prefix}.b"))?;
        let dim = self.model.state_dim();
        if w.shape != [dim] || w.values.len() != dim || b.values.len() != 1 {
            return Err(Error::Checkpoint(format!("policy `{prefix}` does not have {dim} weights")));
        }
        Ok(PolicyParams { w: w.values.clone(), b: b.values[0] })
    }

    pub fn put_networks(&mut self, nets: &Networks) -> Result<()> {
        self.put_cnn("cnn", &nets.cnn)?;
        self.put_cnn("target_cnn", &nets.target_cnn)?;
        self.put_policy("policy", &nets.policy)?;
        self.put_policy("target_policy", &nets.target_policy)
    }

    pub fn networks(&self) -> Result<Networks> {
        Ok(Networks {
            policy: self.policy("policy")?,
            cnn: self.cnn("cnn")?,
            target_policy: self.policy("target_policy")?,
            target_cnn: self.cnn("target_cnn")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != FORMAT {
            return Err(Error::Checkpoint(format!("unrecognized format `{}`", ck.format)));
        }
        if ck.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        for t in &ck.tensors {
            if t.shape.iter().product::<usize>() != t.values.len() {
                return Err(Error::Checkpoint(format!("tensor `{}` does not match its shape", t.name)));
            }
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelConfig {
        ModelConfig {
            word_dim: 3,
            pos_dim: 2,
            filters: 4,
            max_rel: 3,
            max_len: 10,
            entity_dim: 2,
        }
    }

    #[test]
    fn networks_round_trip_exactly() {
        let vocab = Vocab::from_words(vec!["<pad>".into(), "<unk>".into(), "a".into()]).unwrap();
        let rels = RelationMap::ordered(vec!["NA".into(), "r".into()]).unwrap();
        let m = model();
        let shape = m.cnn_shape(vocab.len(), rels.len());
        let nets = Networks {
            policy: PolicyParams { w: (0..m.state_dim()).map(|i| (i as f64).sin() / 3.0).collect(), b: 0.1 + 0.2 },
            cnn: CnnParams::init(shape, 1),
            target_policy: PolicyParams::zeros(m.state_dim()),
            target_cnn: CnnParams::init(shape, 2),
        };
        let mut ck = Checkpoint::new(m, &vocab, &rels);
        ck.put_networks(&nets).unwrap();
        ck.meta.insert("stage".into(), "train".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.networks().unwrap(), nets);
        assert_eq!(back.vocab().unwrap().words(), vocab.words());
    }

    #[test]
    fn missing_and_malformed_tensors_are_rejected() {
        let vocab = Vocab::from_words(vec!["<pad>".into(), "<unk>".into()]).unwrap();
        let rels = RelationMap::ordered(vec!["NA".into(), "r".into()]).unwrap();
        let mut ck = Checkpoint::new(model(), &vocab, &rels);
        assert!(ck.cnn("cnn").is_err());
        ck.put_policy("policy", &PolicyParams::zeros(3)).unwrap();
        assert!(ck.policy("policy").is_err());
        let mut bad = PolicyParams::zeros(model().state_dim());
        bad.b = f64::NAN;
        assert!(ck.put_policy("policy", &bad).is_err());
    }
}
