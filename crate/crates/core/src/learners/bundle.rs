//! Trained model bundle and its JSON file format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, Mlp};

use super::{Algo, LearnerConfig};

pub const MODEL_VERSION: u32 = 1;

/// Networks produced by one training run.
///
/// `policy` is the acting policy for BC and IQL+AWAC, and the frozen BC
/// reference for CQL (which acts greedily on `q`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub algo: Algo,
    pub n_stages: usize,
    pub obs_dim: usize,
    pub window_k: usize,
    pub learner: LearnerConfig,
    pub data_hash: String,
    /// Free-form run metadata (config hash, seeds) carried into the file.
    pub provenance: BTreeMap<String, String>,
    pub policy: Option<Mlp>,
    pub q: Option<Mlp>,
    pub v: Option<Mlp>,
}

impl ModelBundle {
    pub fn input_dim(&self) -> usize {
        self.window_k * self.obs_dim + self.n_stages
    }

    pub fn validate(&self) -> Result<()> {
        let need = |net: &Option<Mlp>, name: &str| {
            net.as_ref()
                .ok_or_else(|| {
                    Error::Schema(format!("{} model lacks a {name} network", self.algo.name()))
                })
                .map(|_| ())
        };
        match self.algo {
            Algo::Bc => need(&self.policy, "policy")?,
            Algo::Cql => need(&self.q, "q")?,
            Algo::IqlAwac => {
                need(&self.policy, "policy")?;
                need(&self.q, "q")?;
                need(&self.v, "v")?;
            }
        }
        let nets = [
            (&self.policy, self.n_stages),
            (&self.q, self.n_stages),
            (&self.v, 1),
        ];
        for (net, out) in nets {
            let Some(net) = net else { continue };
            net.validate()?;
            if net.input_dim() != self.input_dim() {
                return Err(Error::Shape {
                    what: "network input",
                    expected: self.input_dim(),
                    got: net.input_dim(),
                });
            }
            if net.output_dim() != out {
                return Err(Error::Shape {
                    what: "network output",
                    expected: out,
                    got: net.output_dim(),
                });
            }
        }
        Ok(())
    }

    /// Hash of the serialized model file.
    pub fn content_hash(&self) -> String {
        crate::config::hash_bytes(self.to_json().as_bytes())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        file.into_bundle()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerParams {
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    dims: Vec<usize>,
    params: Vec<LayerParams>,
}

impl From<&Mlp> for NetworkFile {
    fn from(net: &Mlp) -> Self {
        Self {
            dims: net.dims(),
            params: net
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.clone(),
                    biases: l.biases.clone(),
                })
                .collect(),
        }
    }
}

impl NetworkFile {
    fn into_mlp(self) -> Result<Mlp> {
        if self.dims.len() != self.params.len() + 1 {
            return Err(Error::Schema(format!(
                "network declares {} dims but has {} layers",
                self.dims.len(),
                self.params.len()
            )));
        }
        let layers = self
            .dims
            .windows(2)
            .zip(self.params)
            .map(|(d, p)| Dense {
                in_dim: d[0],
                out_dim: d[1],
                weights: p.weights,
                biases: p.biases,
            })
            .collect();
        let net = Mlp { layers };
        net.validate()?;
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDims {
    n_stages: usize,
    obs_dim: usize,
    window_k: usize,
    input_dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    algo: Algo,
    dims: ModelDims,
    learner: LearnerConfig,
    data_hash: String,
    #[serde(default)]
    provenance: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<NetworkFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<NetworkFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<NetworkFile>,
}

impl From<&ModelBundle> for ModelFile {
    fn from(b: &ModelBundle) -> Self {
        Self {
            version: MODEL_VERSION,
            algo: b.algo,
            dims: ModelDims {
                n_stages: b.n_stages,
                obs_dim: b.obs_dim,
                window_k: b.window_k,
                input_dim: b.input_dim(),
            },
            learner: b.learner.clone(),
            data_hash: b.data_hash.clone(),
            provenance: b.provenance.clone(),
            policy: b.policy.as_ref().map(NetworkFile::from),
            q: b.q.as_ref().map(NetworkFile::from),
            v: b.v.as_ref().map(NetworkFile::from),
        }
    }
}

impl ModelFile {
    fn into_bundle(self) -> Result<ModelBundle> {
        if self.version != MODEL_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model version {}",
                self.version
            )));
        }
        let convert = |n: Option<NetworkFile>| n.map(NetworkFile::into_mlp).transpose();
        let bundle = ModelBundle {
            algo: self.algo,
            n_stages: self.dims.n_stages,
            obs_dim: self.dims.obs_dim,
            window_k: self.dims.window_k,
            learner: self.learner,
            data_hash: self.data_hash,
            provenance: self.provenance,
            policy: convert(self.policy)?,
            q: convert(self.q)?,
            v: convert(self.v)?,
        };
        if bundle.input_dim() != self.dims.input_dim {
            return Err(Error::Schema(
                "input_dim disagrees with window shape".into(),
            ));
        }
        bundle.validate()?;
        Ok(bundle)
    }
}

pub fn save_model(bundle: &ModelBundle, path: &Path) -> Result<()> {
    std::fs::write(path, bundle.to_json())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelBundle> {
    ModelBundle::from_json(&std::fs::read_to_string(path)?)
}
