//! Misclassification and out-of-distribution detection protocols.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{auroc, DetectionSample};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::sparse::{CsrBuilder, Index, SparseMatrix};
use crate::uncertainty::{InstanceScores, LabelScores};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMetric {
    Pv,
    Tu,
    Ku,
    Edu,
    /// Negated label energy, `−ln(1 − μ)`.
    Energy,
}

impl LabelMetric {
    pub fn score(self, s: &LabelScores) -> f64 {
        match self {
            LabelMetric::Pv => s.pv,
            LabelMetric::Tu => s.tu,
            LabelMetric::Ku => s.ku,
            LabelMetric::Edu => s.edu,
            LabelMetric::Energy => -s.energy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceMetric {
    Pv,
    Tu,
    Ku,
    Edu,
    /// Negated joint energy.
    JointEnergy,
}

impl InstanceMetric {
    pub fn score(self, s: &InstanceScores) -> f64 {
        match self {
            InstanceMetric::Pv => s.pv,
            InstanceMetric::Tu => s.tu,
            InstanceMetric::Ku => s.ku,
            InstanceMetric::Edu => s.edu,
            InstanceMetric::JointEnergy => -s.joint_energy,
        }
    }
}

macro_rules! parse_metric {
    ($ty:ty, $($name:literal => $v:expr),+ $(,)?) => {
        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($v),)+
                    _ => Err(Error::InvalidArgument(format!("unknown metric {s:?}"))),
                }
            }
        }
    };
}

parse_metric!(LabelMetric, "pv" => LabelMetric::Pv, "tu" => LabelMetric::Tu, "ku" => LabelMetric::Ku,
    "edu" => LabelMetric::Edu, "energy" => LabelMetric::Energy);
parse_metric!(InstanceMetric, "pv" => InstanceMetric::Pv, "tu" => InstanceMetric::Tu, "ku" => InstanceMetric::Ku,
    "edu" => InstanceMetric::Edu, "joint-energy" => InstanceMetric::JointEnergy);

/// One instance's inputs to the misclassification protocol.
#[derive(Clone, Debug)]
pub struct MisclsInstance<'a> {
    /// Retrieved labels, best first.
    pub ranking: &'a [Index],
    /// Labels with uncertainty scores, ascending by label.
    pub scores: &'a [(Index, LabelScores)],
    /// True labels, ascending.
    pub truth: &'a [Index],
}

/// Evaluated labels and their targets for one instance.
///
/// With `r = |truth|`, the top-`r` retrieved labels count as predicted
/// positive; a label is a target when it is a false positive in the top-`r`
/// or a true label outside it. True labels nobody scored are left out.
pub fn miscls_targets(inst: &MisclsInstance<'_>) -> (Vec<(Index, bool)>, usize) {
    let r = inst.truth.len();
    let top: Vec<Index> = inst.ranking.iter().take(r).copied().collect();
    let scored = |l: &Index| inst.scores.binary_search_by_key(l, |p| p.0).is_ok();
    let mut universe: Vec<Index> = inst.ranking.to_vec();
    let mut excluded = 0;
    for t in inst.truth {
        if scored(t) {
            universe.push(*t);
        } else {
            excluded += 1;
        }
    }
    universe.sort_unstable();
    universe.dedup();
    let out = universe
        .into_iter()
        .map(|l| {
            let in_top = top.contains(&l);
            let is_true = inst.truth.binary_search(&l).is_ok();
            (l, in_top != is_true)
        })
        .collect();
    (out, excluded)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisclsResult {
    pub mean_auroc: f64,
    pub evaluated: usize,
    pub skipped_single_class: usize,
    pub skipped_no_labels: usize,
    pub excluded_true_labels: usize,
}

pub fn misclassification_detection(instances: &[MisclsInstance<'_>], metric: LabelMetric) -> MisclsResult {
    let mut sum = 0.0;
    let mut res = MisclsResult {
        mean_auroc: f64::NAN,
        evaluated: 0,
        skipped_single_class: 0,
        skipped_no_labels: 0,
        excluded_true_labels: 0,
    };
    for inst in instances {
        if inst.truth.is_empty() {
            res.skipped_no_labels += 1;
            continue;
        }
        let (targets, excluded) = miscls_targets(inst);
        res.excluded_true_labels += excluded;
        let samples: Vec<DetectionSample> = targets
            .iter()
            .map(|&(l, target)| {
                let i = inst
                    .scores
                    .binary_search_by_key(&l, |p| p.0)
                    .expect("evaluated labels are scored");
                DetectionSample {
                    score: metric.score(&inst.scores[i].1),
                    target,
                }
            })
            .collect();
        match auroc(&samples) {
            Ok(a) => {
                sum += a;
                res.evaluated += 1;
            }
            Err(_) => res.skipped_single_class += 1,
        }
    }
    if res.evaluated > 0 {
        res.mean_auroc = sum / res.evaluated as f64;
    }
    res
}

/// AUROC separating OOD instances (target 1) from in-distribution ones.
pub fn ood_detection(id: &[InstanceScores], ood: &[InstanceScores], metric: InstanceMetric) -> Result<f64> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::InvalidArgument("both in- and out-of-distribution sets must be non-empty".into()));
    }
    let samples: Vec<DetectionSample> = id
        .iter()
        .map(|s| (s, false))
        .chain(ood.iter().map(|s| (s, true)))
        .map(|(s, target)| DetectionSample {
            score: metric.score(s),
            target,
        })
        .collect();
    auroc(&samples)
}

/// Relabels feature ids by one random permutation shared by all rows.
pub fn permute_features(x: &SparseMatrix, seed: u64) -> SparseMatrix {
    let mut perm: Vec<Index> = (0..x.cols() as Index).collect();
    perm.shuffle(&mut rng_for(seed, &[]));
    let mut b = CsrBuilder::with_capacity(x.cols(), x.rows(), x.nnz());
    let mut row: Vec<(Index, f64)> = Vec::new();
    for i in 0..x.rows() {
        row.clear();
        row.extend(x.row(i).iter().map(|(j, v)| (perm[j as usize], v)));
        row.sort_unstable_by_key(|p| p.0);
        let (idx, val): (Vec<Index>, Vec<f64>) = row.iter().copied().unzip();
        b.push_row(&idx, &val);
    }
    b.finish()
}

/// Random sparse rows with the same non-zero count and norm as `x`'s rows.
pub fn random_matched(x: &SparseMatrix, seed: u64) -> SparseMatrix {
    let mut rng = rng_for(seed, &[]);
    let mut b = CsrBuilder::with_capacity(x.cols(), x.rows(), x.nnz());
    for i in 0..x.rows() {
        let r = x.row(i);
        let norm = r.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut idx: Vec<Index> = rand::seq::index::sample(&mut rng, x.cols(), r.nnz())
            .into_iter()
            .map(|j| j as Index)
            .collect();
        idx.sort_unstable();
        let mut val: Vec<f64> = (0..idx.len()).map(|_| rng.gen_range(0.01..1.0)).collect();
        let n = val.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut val {
            *v *= norm / n;
        }
        b.push_row(&idx, &val);
    }
    b.finish()
}
