//! Run configuration: documented defaults, overridden by a JSON file, overridden by flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use xmc_core::ensemble::{BoostParams, Scheme};
use xmc_core::linear_ranker::RankerParams;
use xmc_core::solver::SolverParams;
use xmc_core::uncertainty::EntropyKind;
use xmc_core::TrainParams;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub members: usize,
    pub alpha: f64,
    pub k_hard: usize,
    pub branching: usize,
    pub max_leaf: usize,
    pub kmeans_max_iter: usize,
    pub c: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    pub prune: f64,
    pub dropout: f64,
    pub seed: u64,
    pub beam: usize,
    pub top_k: usize,
    pub delta: f64,
    pub entropy: EntropyKind,
    /// L2-normalize feature rows when loading data.
    pub normalize: bool,
    /// Largest label count for which exhaustive inference is allowed.
    pub max_exact_labels: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverParams::default();
        Self {
            scheme: Scheme::Single,
            members: 10,
            alpha: 0.5,
            k_hard: 10,
            branching: 8,
            max_leaf: 100,
            kmeans_max_iter: 20,
            c: solver.c,
            solver_tol: solver.tol,
            solver_max_iter: solver.max_iter,
            prune: 1e-3,
            dropout: 0.05,
            seed: 0,
            beam: 50,
            top_k: 100,
            delta: 1e-8,
            entropy: EntropyKind::Binary,
            normalize: true,
            max_exact_labels: 100_000,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Usage(msg));
        if self.members == 0 {
            return bad("members must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.branching < 2 {
            return bad(format!("branching {} must be at least 2", self.branching));
        }
        if self.max_leaf == 0 {
            return bad("max_leaf must be at least 1".into());
        }
        if self.c.is_nan() || self.c <= 0.0 || self.solver_tol.is_nan() || self.solver_tol <= 0.0 {
            return bad("c and solver_tol must be positive".into());
        }
        if self.prune.is_nan() || self.prune < 0.0 {
            return bad(format!("prune threshold {} must be non-negative", self.prune));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.beam == 0 || self.top_k == 0 {
            return bad("beam and top_k must be at least 1".into());
        }
        if !(self.delta > 0.0 && self.delta <= 1e-4) {
            return bad(format!("delta {} outside (0, 1e-4]", self.delta));
        }
        Ok(())
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            branching: self.branching,
            max_leaf: self.max_leaf,
            kmeans_max_iter: self.kmeans_max_iter,
            ranker: RankerParams {
                solver: SolverParams {
                    c: self.c,
                    tol: self.solver_tol,
                    max_iter: self.solver_max_iter,
                },
                prune_threshold: self.prune,
            },
            seed: self.seed,
        }
    }

    pub fn boost_params(&self) -> BoostParams {
        BoostParams {
            alpha: self.alpha,
            k_hard: self.k_hard,
            b: self.beam,
            k: self.top_k,
            delta: self.delta,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_documented_values() {
        let c = RunConfig::default();
        assert_eq!((c.branching, c.beam, c.top_k, c.members), (8, 50, 100, 10));
        assert_eq!((c.alpha, c.prune, c.dropout, c.delta), (0.5, 1e-3, 0.05, 1e-8));
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"members": 3, "scheme": "boosted-bagging"}"#).unwrap();
        assert_eq!(c.members, 3);
        assert_eq!(c.scheme, Scheme::BoostedBagging);
        assert_eq!(c.beam, 50);
        assert!(serde_json::from_str::<RunConfig>(r#"{"memebrs": 3}"#).is_err());
    }
}
