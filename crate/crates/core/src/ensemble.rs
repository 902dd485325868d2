//! Ensembles of label trees: bagging, boosting with hard negatives, boosted
//! bagging and weight dropout, plus the rule that combines member outputs.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::inference::{beam_raw, Ranking};
use crate::linear_ranker::{HardNegative, NegativeSamplingPlan};
use crate::model::{train_model, LabelTree, TrainParams};
use crate::seed::{derive_seed, rng_for};
use crate::sparse::{Index, SparseMatrix, SparseVector};

pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Single,
    Bagging,
    Boosting,
    BoostedBagging,
    McDropout,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "single" => Scheme::Single,
            "bagging" => Scheme::Bagging,
            "boosting" => Scheme::Boosting,
            "boosted-bagging" => Scheme::BoostedBagging,
            "mc-dropout" => Scheme::McDropout,
            _ => return Err(Error::InvalidArgument(format!("unknown scheme {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub format_version: u32,
    pub software_version: String,
    pub scheme: Scheme,
    pub members: usize,
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub k_hard: usize,
    pub seeds: Vec<u64>,
    pub dropout_rate: f64,
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<LabelTree>,
    pub meta: EnsembleMeta,
}

/// Knobs shared by the boosting schemes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub alpha: f64,
    pub k_hard: usize,
    /// Beam used to mine hard negatives.
    pub b: usize,
    pub k: usize,
    pub delta: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            k_hard: 10,
            b: 50,
            k: 100,
            delta: 1e-8,
        }
    }
}

/// Per-member seeds derived from one base seed.
pub fn member_seeds(base: u64, m: usize) -> Vec<u64> {
    (0..m as u64).map(|i| derive_seed(base, &[2, i])).collect()
}

/// Sorted with-replacement resample of `0..n`.
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut rng = rng_for(seed, &[]);
    let mut idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    idx.sort_unstable();
    idx
}

/// Mixture weights after each boosting round: the newest member gets `alpha`
/// and the earlier mass is scaled by `1 − alpha`.
pub fn boosting_weights(m: usize, alpha: f64) -> Vec<f64> {
    let mut w: Vec<f64> = Vec::with_capacity(m);
    for i in 0..m {
        if i == 0 {
            w.push(1.0);
        } else {
            for v in &mut w {
                *v *= 1.0 - alpha;
            }
            w.push(alpha);
        }
    }
    w
}

/// Sum that does not depend on the order of its terms.
pub(crate) fn ordered_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// Member outputs and their weighted average for one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePrediction {
    pub members: Vec<Ranking>,
    /// Top-`k` of the weighted mean over the union of retrieved labels,
    /// with `delta` standing in for labels a member did not retrieve.
    pub averaged: Ranking,
}

/// Union of retrieved labels, ascending, with one probability per member
/// (`delta` where the member did not retrieve the label).
pub fn union_table(members: &[Ranking], delta: f64) -> (Vec<Index>, Vec<Vec<f64>>) {
    let mut labels: Vec<Index> = members.iter().flat_map(|r| r.iter().map(|p| p.0)).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut probs = vec![vec![delta; members.len()]; labels.len()];
    for (m, r) in members.iter().enumerate() {
        for &(l, p) in r {
            let row = labels.binary_search(&l).expect("label collected above");
            probs[row][m] = p;
        }
    }
    (labels, probs)
}

pub fn combine(members: &[Ranking], weights: &[f64], delta: f64, k: usize) -> Ranking {
    let (labels, probs) = union_table(members, delta);
    let mut terms = vec![0.0; weights.len()];
    let mut out: Ranking = labels
        .iter()
        .zip(&probs)
        .map(|(&l, ps)| {
            for ((t, &w), &p) in terms.iter_mut().zip(weights).zip(ps) {
                *t = w * p;
            }
            (l, ordered_sum(&mut terms))
        })
        .collect();
    out.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.truncate(k);
    out
}

impl EnsembleModel {
    pub fn single(model: LabelTree) -> Self {
        let seed = model.meta.params.seed;
        Self {
            members: vec![model],
            meta: EnsembleMeta {
                format_version: ENSEMBLE_FORMAT_VERSION,
                software_version: crate::VERSION.to_string(),
                scheme: Scheme::Single,
                members: 1,
                alpha: 0.0,
                weights: vec![1.0],
                k_hard: 0,
                seeds: vec![seed],
                dropout_rate: 0.0,
                config: serde_json::Value::Null,
            },
        }
    }

    pub fn from_members(members: Vec<LabelTree>, scheme: Scheme, weights: Vec<f64>, seeds: Vec<u64>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidArgument("ensemble needs at least one member".into()))?;
        let (d, l) = (first.n_features(), first.n_labels());
        if weights.len() != members.len() || weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(Error::InvalidArgument("one weight in [0, 1] per member required".into()));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("member weights must sum to 1".into()));
        }
        if members.iter().any(|m| m.n_features() != d || m.n_labels() != l) {
            return Err(Error::InvalidArgument(
                "members disagree on feature or label space".into(),
            ));
        }
        Ok(Self {
            meta: EnsembleMeta {
                format_version: ENSEMBLE_FORMAT_VERSION,
                software_version: crate::VERSION.to_string(),
                scheme,
                members: members.len(),
                alpha: 0.0,
                weights,
                k_hard: 0,
                seeds,
                dropout_rate: 0.0,
                config: serde_json::Value::Null,
            },
            members,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.meta.weights
    }

    pub fn n_labels(&self) -> usize {
        self.members[0].n_labels()
    }

    pub fn n_features(&self) -> usize {
        self.members[0].n_features()
    }

    /// Runs every member's beam search and averages over the retrieved union.
    pub fn predict(&self, x: &SparseVector, b: usize, k: usize, delta: f64) -> Result<EnsemblePrediction> {
        if x.dim() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                found: x.dim(),
            });
        }
        if b == 0 || k == 0 {
            return Err(Error::InvalidArgument("beam width and k must be at least 1".into()));
        }
        let members: Vec<Ranking> = self
            .members
            .iter()
            .map(|m| beam_raw(m, x.indices(), x.values(), b, k))
            .collect();
        let averaged = combine(&members, self.weights(), delta, k);
        Ok(EnsemblePrediction { members, averaged })
    }

    pub fn predict_batch(&self, x: &SparseMatrix, b: usize, k: usize, delta: f64) -> Result<Vec<EnsemblePrediction>> {
        (0..x.rows())
            .into_par_iter()
            .map(|i| self.predict(&x.row_vector(i), b, k, delta))
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, m) in self.members.iter().enumerate() {
            m.save(dir.join(format!("member_{i:03}")))?;
        }
        let path = dir.join("ensemble.json");
        let text = serde_json::to_string_pretty(&self.meta)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads an ensemble directory, or a plain model directory as a
    /// single-member ensemble.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("ensemble.json");
        if !path.exists() && dir.join("meta.json").exists() {
            return Ok(Self::single(LabelTree::load(dir)?));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: EnsembleMeta = serde_json::from_str(&text)?;
        if meta.format_version != ENSEMBLE_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                expected: ENSEMBLE_FORMAT_VERSION,
                found: meta.format_version,
            });
        }
        if meta.weights.len() != meta.members {
            return Err(Error::Metadata("weight count differs from member count".into()));
        }
        let members = (0..meta.members)
            .map(|i| LabelTree::load(dir.join(format!("member_{i:03}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut ens = Self::from_members(members, meta.scheme, meta.weights.clone(), meta.seeds.clone())?;
        ens.meta = meta;
        Ok(ens)
    }
}

fn with_seed(params: &TrainParams, seed: u64) -> TrainParams {
    TrainParams { seed, ..*params }
}

/// One member per seed, each on its own bootstrap resample; uniform weights.
pub fn train_bagging(data: &Dataset, params: &TrainParams, seeds: &[u64]) -> Result<EnsembleModel> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("bagging needs at least one member".into()));
    }
    let members = seeds
        .par_iter()
        .map(|&s| {
            let sample = data.subset(&bootstrap_indices(data.n_instances(), derive_seed(s, &[3])));
            train_model(&sample, &with_seed(params, s), &NegativeSamplingPlan::TeacherForcing)
        })
        .collect::<Result<Vec<_>>>()?;
    let m = members.len();
    EnsembleModel::from_members(members, Scheme::Bagging, vec![1.0 / m as f64; m], seeds.to_vec())
}

/// Top `k_hard` labels of the combined predictor that are not true labels.
pub fn mine_hard_negatives(
    members: &[LabelTree],
    weights: &[f64],
    data: &Dataset,
    boost: &BoostParams,
    source: u32,
) -> Vec<Vec<HardNegative>> {
    (0..data.n_instances())
        .into_par_iter()
        .map(|i| {
            let x = data.features.row(i);
            let outs: Vec<Ranking> = members
                .iter()
                .map(|m| beam_raw(m, x.indices, x.values, boost.b, boost.k))
                .collect();
            let truth = data.label_set(i);
            combine(&outs, weights, boost.delta, boost.k)
                .into_iter()
                .filter(|(l, _)| truth.binary_search(l).is_err())
                .take(boost.k_hard)
                .map(|(label, _)| HardNegative { label, source })
                .collect()
        })
        .collect()
}

fn boost_loop(data: &Dataset, params: &TrainParams, boost: &BoostParams, seeds: &[u64], resample: bool) -> Result<EnsembleModel> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("boosting needs at least one member".into()));
    }
    if !(0.0..=1.0).contains(&boost.alpha) {
        return Err(Error::InvalidArgument(format!("alpha {} outside [0, 1]", boost.alpha)));
    }
    let mut members: Vec<LabelTree> = Vec::with_capacity(seeds.len());
    let mut weights: Vec<f64> = Vec::new();
    for (m, &s) in seeds.iter().enumerate() {
        let sample;
        let train_data = if resample {
            sample = data.subset(&bootstrap_indices(data.n_instances(), derive_seed(s, &[3])));
            &sample
        } else {
            data
        };
        let plan = if members.is_empty() {
            NegativeSamplingPlan::TeacherForcing
        } else {
            NegativeSamplingPlan::HardAugmented {
                hard_negatives: mine_hard_negatives(&members, &weights, train_data, boost, m as u32),
            }
        };
        members.push(train_model(train_data, &with_seed(params, s), &plan)?);
        weights = boosting_weights(members.len(), boost.alpha);
        log::info!("boosting round {} of {} done", m + 1, seeds.len());
    }
    let scheme = if resample { Scheme::BoostedBagging } else { Scheme::Boosting };
    let mut ens = EnsembleModel::from_members(members, scheme, weights, seeds.to_vec())?;
    ens.meta.alpha = boost.alpha;
    ens.meta.k_hard = boost.k_hard;
    Ok(ens)
}

pub fn train_boosting(data: &Dataset, params: &TrainParams, boost: &BoostParams, seeds: &[u64]) -> Result<EnsembleModel> {
    boost_loop(data, params, boost, seeds, false)
}

pub fn train_boosted_bagging(data: &Dataset, params: &TrainParams, boost: &BoostParams, seeds: &[u64]) -> Result<EnsembleModel> {
    boost_loop(data, params, boost, seeds, true)
}

/// Copies of `base` with each stored weight zeroed with probability `rate`.
pub fn mc_dropout_members(base: &LabelTree, rate: f64, seeds: &[u64]) -> Result<EnsembleModel> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    let members: Vec<LabelTree> = seeds
        .iter()
        .map(|&s| {
            let mut m = base.clone();
            if rate > 0.0 {
                for (t, w) in m.weights.iter_mut().enumerate() {
                    let mut rng = rng_for(s, &[4, t as u64]);
                    *w = w
                        .map_values(|_, _, v| if rng.gen_bool(rate) { 0.0 } else { v })
                        .prune(f64::MIN_POSITIVE);
                }
            }
            m
        })
        .collect();
    let n = members.len();
    let mut ens = EnsembleModel::from_members(members, Scheme::McDropout, vec![1.0 / n as f64; n], seeds.to_vec())?;
    ens.meta.dropout_rate = rate;
    Ok(ens)
}
