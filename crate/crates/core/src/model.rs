//! A trained tree model and its on-disk directory layout.
//!
//! ```text
//! model/
//!   meta.json      counts, layer sizes, hyper-parameters, seed
//!   C_1.bin ...    indexing matrices
//!   W_1.bin ...    layer weights (K_t × (d + 1))
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binfmt::{read_matrix, write_matrix};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::label_tree::{build_tree, pifa_embeddings, TreeParams, TreeTopology};
use crate::linear_ranker::{induce_layer_targets, train_layer, NegativeSamplingPlan, RankerParams};
use crate::seed::derive_seed;
use crate::sparse::SparseMatrix;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub branching: usize,
    pub max_leaf: usize,
    pub kmeans_max_iter: usize,
    pub ranker: RankerParams,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            branching: 8,
            max_leaf: 100,
            kmeans_max_iter: 20,
            ranker: RankerParams::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format_version: u32,
    pub software_version: String,
    pub n_features: usize,
    pub n_labels: usize,
    pub depth: usize,
    pub branching: usize,
    pub layer_sizes: Vec<usize>,
    pub params: TrainParams,
    /// Whether training rows were L2-normalized at load.
    pub features_normalized: bool,
    /// Free-form run configuration echoed by callers.
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelTree {
    pub topology: TreeTopology,
    /// `W^(t)` for `t = 1..=d`, each `K_t × (n_features + 1)`.
    pub weights: Vec<SparseMatrix>,
    pub meta: ModelMeta,
}

impl LabelTree {
    pub fn new(topology: TreeTopology, weights: Vec<SparseMatrix>, n_features: usize, params: TrainParams) -> Result<Self> {
        if weights.len() != topology.depth() {
            return Err(Error::DimensionMismatch {
                expected: topology.depth(),
                found: weights.len(),
            });
        }
        for (t, w) in weights.iter().enumerate() {
            if w.rows() != topology.layer_size(t + 1) || w.cols() != n_features + 1 {
                return Err(Error::InvalidArgument(format!(
                    "W^({}) is {}×{}, expected {}×{}",
                    t + 1,
                    w.rows(),
                    w.cols(),
                    topology.layer_size(t + 1),
                    n_features + 1
                )));
            }
        }
        let meta = ModelMeta {
            format_version: MODEL_FORMAT_VERSION,
            software_version: crate::VERSION.to_string(),
            n_features,
            n_labels: topology.n_labels(),
            depth: topology.depth(),
            branching: topology.branching(),
            layer_sizes: topology.layer_sizes(),
            params,
            features_normalized: false,
            config: serde_json::Value::Null,
        };
        Ok(Self {
            topology,
            weights,
            meta,
        })
    }

    pub fn n_features(&self) -> usize {
        self.meta.n_features
    }

    pub fn n_labels(&self) -> usize {
        self.topology.n_labels()
    }

    pub fn depth(&self) -> usize {
        self.topology.depth()
    }

    /// `W^(t)`, `t ∈ [1, d]`.
    pub fn layer_weights(&self, t: usize) -> &SparseMatrix {
        &self.weights[t - 1]
    }

    pub fn weight_nnz(&self) -> usize {
        self.weights.iter().map(|w| w.nnz()).sum()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for t in 1..=self.depth() {
            write_matrix(dir.join(format!("C_{t}.bin")), self.topology.indexing(t))?;
            write_matrix(dir.join(format!("W_{t}.bin")), self.layer_weights(t))?;
        }
        let meta = serde_json::to_string_pretty(&self.meta)?;
        let path = dir.join("meta.json");
        fs::write(&path, meta + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ModelMeta = serde_json::from_str(&text)?;
        if meta.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                expected: MODEL_FORMAT_VERSION,
                found: meta.format_version,
            });
        }
        let mut indexing = Vec::with_capacity(meta.depth);
        let mut weights = Vec::with_capacity(meta.depth);
        for t in 1..=meta.depth {
            indexing.push(read_matrix(dir.join(format!("C_{t}.bin")))?);
            weights.push(read_matrix(dir.join(format!("W_{t}.bin")))?);
        }
        let topology = TreeTopology::from_indexing(meta.branching, indexing)?;
        if topology.layer_sizes() != meta.layer_sizes {
            return Err(Error::Metadata("layer sizes disagree with indexing files".into()));
        }
        let mut model = LabelTree::new(topology, weights, meta.n_features, meta.params)?;
        model.meta = meta;
        Ok(model)
    }
}

/// Full pipeline: PIFA embeddings, tree construction, then every layer.
pub fn train_model(data: &Dataset, params: &TrainParams, plan: &NegativeSamplingPlan) -> Result<LabelTree> {
    plan.validate(&data.labels)?;
    let emb = pifa_embeddings(data);
    let tree_params = TreeParams {
        branching: params.branching,
        max_leaf: params.max_leaf,
        max_iter: params.kmeans_max_iter,
        seed: derive_seed(params.seed, &[0]),
    };
    let topology = build_tree(&emb, &tree_params)?;
    log::debug!("tree layer sizes {:?}", topology.layer_sizes());
    let layer_seed = derive_seed(params.seed, &[1]);
    let mut parent = induce_layer_targets(&data.labels, &topology, 0)?;
    let mut weights = Vec::with_capacity(topology.depth());
    for t in 1..=topology.depth() {
        let targets = induce_layer_targets(&data.labels, &topology, t)?;
        let w = train_layer(
            &data.features,
            &topology,
            t,
            &targets,
            &parent,
            plan,
            &params.ranker,
            layer_seed,
        )?;
        weights.push(w.matrix);
        parent = targets;
    }
    LabelTree::new(topology, weights, data.n_features(), *params)
}
