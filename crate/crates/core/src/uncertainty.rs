//! Label- and instance-level uncertainty from ensemble outputs.
//!
//! Each label is treated as its own binary prediction. With member
//! probabilities `p_m` and mixture weights `w_m`:
//!
//! * `μ = Σ w_m p_m`
//! * `TU = H(μ)`, `EDU = Σ w_m H(p_m)`, `KU = TU − EDU`
//! * `PV = Σ w_m (p_m − μ)²`
//!
//! Instance scores sum the label scores. Beam mode only sees the labels some
//! member retrieved; every other label is scored as if all members returned
//! `δ`, and that score is added once per missing label.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{ordered_sum, union_table, EnsembleModel};
use crate::error::{Error, Result};
use crate::format::g6;
use crate::inference::{exhaustive_predict, Ranking};
use crate::sparse::{Index, SparseMatrix, SparseVector};

pub const KU_TOLERANCE: f64 = 1e-12;
const ENERGY_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyKind {
    /// `−p ln p − (1 − p) ln(1 − p)`.
    #[default]
    Binary,
    /// `−p ln p` only.
    PositiveOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Exact,
    Beam,
}

fn xlnx(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * p.ln()
    }
}

/// Binary entropy in nats with `0 ln 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    -(xlnx(p) + xlnx(1.0 - p))
}

pub fn entropy(p: f64, kind: EntropyKind) -> f64 {
    match kind {
        EntropyKind::Binary => binary_entropy(p),
        EntropyKind::PositiveOnly => -xlnx(p),
    }
}

/// `ln(1 − p)` with `p` clamped away from 0 and 1.
pub fn label_energy(p: f64) -> f64 {
    (-p.clamp(ENERGY_CLAMP, 1.0 - ENERGY_CLAMP)).ln_1p()
}

/// Per-label energies and their joint sum `Σ −ln(1 − p)`.
pub fn energy_scores(probs: &[f64]) -> (Vec<f64>, f64) {
    let e: Vec<f64> = probs.iter().map(|&p| label_energy(p)).collect();
    let joint = e.iter().map(|v| -v).sum();
    (e, joint)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub mean_prob: f64,
    pub pv: f64,
    pub tu: f64,
    pub ku: f64,
    pub edu: f64,
    /// `ln(1 − μ)`.
    pub energy: f64,
}

/// Scores of one label; the flag reports whether a tiny negative KU was
/// clamped to zero.
pub fn label_scores(probs: &[f64], weights: &[f64], kind: EntropyKind) -> (LabelScores, bool) {
    debug_assert_eq!(probs.len(), weights.len());
    let mut terms: Vec<f64> = probs.iter().zip(weights).map(|(p, w)| w * p).collect();
    let mu = ordered_sum(&mut terms);
    for ((t, p), w) in terms.iter_mut().zip(probs).zip(weights) {
        *t = w * entropy(*p, kind);
    }
    let edu = ordered_sum(&mut terms);
    for ((t, p), w) in terms.iter_mut().zip(probs).zip(weights) {
        *t = w * (p - mu) * (p - mu);
    }
    let pv = ordered_sum(&mut terms);
    let tu = entropy(mu, kind);
    let mut ku = tu - edu;
    let clamped = (-KU_TOLERANCE..0.0).contains(&ku);
    if clamped {
        ku = 0.0;
    }
    (
        LabelScores {
            mean_prob: mu,
            pv,
            tu,
            ku,
            edu,
            energy: label_energy(mu),
        },
        clamped,
    )
}

/// Member probabilities for a set of labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelProbTable {
    pub labels: Vec<Index>,
    /// `probs[i][m]`: member `m`'s probability for `labels[i]`.
    pub probs: Vec<Vec<f64>>,
    pub delta: f64,
    pub weights: Vec<f64>,
}

impl LabelProbTable {
    pub fn from_beam(members: &[Ranking], weights: &[f64], delta: f64) -> Self {
        let (labels, probs) = union_table(members, delta);
        Self {
            labels,
            probs,
            delta,
            weights: weights.to_vec(),
        }
    }

    pub fn from_dense(members: &[Vec<f64>], weights: &[f64]) -> Self {
        let n = members.first().map_or(0, |m| m.len());
        Self {
            labels: (0..n as Index).collect(),
            probs: (0..n).map(|l| members.iter().map(|m| m[l]).collect()).collect(),
            delta: 0.0,
            weights: weights.to_vec(),
        }
    }
}

/// Scores for every label of the table, plus the number of KU clamps.
pub fn label_uncertainty(table: &LabelProbTable, kind: EntropyKind) -> (Vec<LabelScores>, usize) {
    let mut clamps = 0;
    let scores = table
        .probs
        .iter()
        .map(|ps| {
            let (s, c) = label_scores(ps, &table.weights, kind);
            clamps += c as usize;
            s
        })
        .collect();
    (scores, clamps)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceScores {
    pub tu: f64,
    pub ku: f64,
    pub pv: f64,
    pub edu: f64,
    /// `Σ −ln(1 − μ)` over all labels.
    pub joint_energy: f64,
}

/// Sums label scores in label order and adds `tail_count` copies of `tail`.
pub fn instance_uncertainty(scores: &[LabelScores], tail: &LabelScores, tail_count: usize) -> InstanceScores {
    let mut s = InstanceScores::default();
    for l in scores {
        s.tu += l.tu;
        s.ku += l.ku;
        s.pv += l.pv;
        s.edu += l.edu;
        s.joint_energy -= l.energy;
    }
    let n = tail_count as f64;
    s.tu += n * tail.tu;
    s.ku += n * tail.ku;
    s.pv += n * tail.pv;
    s.edu += n * tail.edu;
    s.joint_energy -= n * tail.energy;
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceReport {
    /// Ascending label ids that were scored individually.
    pub labels: Vec<Index>,
    pub scores: Vec<LabelScores>,
    /// Score given to each label outside `labels`.
    pub tail: LabelScores,
    pub tail_count: usize,
    pub total: InstanceScores,
    pub ku_clamped: usize,
}

impl InstanceReport {
    fn build(table: &LabelProbTable, n_labels: usize, kind: EntropyKind) -> Self {
        let (scores, mut ku_clamped) = label_uncertainty(table, kind);
        let (tail, c) = label_scores(&vec![table.delta; table.weights.len()], &table.weights, kind);
        let tail_count = n_labels - table.labels.len();
        if tail_count > 0 {
            ku_clamped += c as usize;
        }
        let total = instance_uncertainty(&scores, &tail, tail_count);
        Self {
            labels: table.labels.clone(),
            scores,
            tail,
            tail_count,
            total,
            ku_clamped,
        }
    }

    /// Scores of `label`, falling back to the tail score.
    pub fn label(&self, label: Index) -> LabelScores {
        match self.labels.binary_search(&label) {
            Ok(i) => self.scores[i],
            Err(_) => self.tail,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyReport {
    pub mode: Mode,
    pub b: usize,
    pub k: usize,
    pub delta: f64,
    pub entropy: EntropyKind,
    pub n_labels: usize,
    pub instances: Vec<InstanceReport>,
}

impl UncertaintyReport {
    pub fn ku_clamped(&self) -> usize {
        self.instances.iter().map(|r| r.ku_clamped).sum()
    }
}

/// Beam-mode report for one instance from per-member rankings.
pub fn report_from_beam(members: &[Ranking], weights: &[f64], n_labels: usize, delta: f64, kind: EntropyKind) -> Result<InstanceReport> {
    if !(delta > 0.0 && delta <= 1e-4) {
        return Err(Error::InvalidArgument(format!("delta {delta} outside (0, 1e-4]")));
    }
    if members.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            found: members.len(),
        });
    }
    let table = LabelProbTable::from_beam(members, weights, delta);
    if table.labels.last().is_some_and(|&l| l as usize >= n_labels) {
        return Err(Error::InvalidArgument("retrieved label outside label space".into()));
    }
    Ok(InstanceReport::build(&table, n_labels, kind))
}

/// Exact-mode report for one instance from full member probability vectors.
pub fn report_from_dense(members: &[Vec<f64>], weights: &[f64], kind: EntropyKind) -> InstanceReport {
    let table = LabelProbTable::from_dense(members, weights);
    let n = table.labels.len();
    InstanceReport::build(&table, n, kind)
}

pub fn approximate_uncertainty(
    ens: &EnsembleModel,
    x: &SparseVector,
    b: usize,
    k: usize,
    delta: f64,
    kind: EntropyKind,
) -> Result<InstanceReport> {
    let pred = ens.predict(x, b, k, delta)?;
    report_from_beam(&pred.members, ens.weights(), ens.n_labels(), delta, kind)
}

pub fn exact_uncertainty(ens: &EnsembleModel, x: &SparseVector, kind: EntropyKind) -> Result<InstanceReport> {
    let dense = ens
        .members
        .iter()
        .map(|m| exhaustive_predict(m, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from_dense(&dense, ens.weights(), kind))
}

pub fn approximate_batch(
    ens: &EnsembleModel,
    x: &SparseMatrix,
    b: usize,
    k: usize,
    delta: f64,
    kind: EntropyKind,
) -> Result<UncertaintyReport> {
    let instances = (0..x.rows())
        .into_par_iter()
        .map(|i| approximate_uncertainty(ens, &x.row_vector(i), b, k, delta, kind))
        .collect::<Result<Vec<_>>>()?;
    Ok(UncertaintyReport {
        mode: Mode::Beam,
        b,
        k,
        delta,
        entropy: kind,
        n_labels: ens.n_labels(),
        instances,
    })
}

pub fn exact_batch(ens: &EnsembleModel, x: &SparseMatrix, kind: EntropyKind) -> Result<UncertaintyReport> {
    let instances = (0..x.rows())
        .into_par_iter()
        .map(|i| exact_uncertainty(ens, &x.row_vector(i), kind))
        .collect::<Result<Vec<_>>>()?;
    Ok(UncertaintyReport {
        mode: Mode::Exact,
        b: 0,
        k: ens.n_labels(),
        delta: 0.0,
        entropy: kind,
        n_labels: ens.n_labels(),
        instances,
    })
}

const HEADER: &str = "instance\tlabel\tmean_prob\tpv\ttu\tku\tedu\tenergy";

/// Tab-separated dump: one row per scored label, then an `all` row with the
/// instance totals (the last column holds the joint energy there).
pub fn write_report<W: Write>(report: &UncertaintyReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{HEADER}")?;
    for (i, r) in report.instances.iter().enumerate() {
        for (l, s) in r.labels.iter().zip(&r.scores) {
            writeln!(
                w,
                "{i}\t{l}\t{}\t{}\t{}\t{}\t{}\t{}",
                g6(s.mean_prob),
                g6(s.pv),
                g6(s.tu),
                g6(s.ku),
                g6(s.edu),
                g6(s.energy)
            )?;
        }
        let t = &r.total;
        writeln!(
            w,
            "{i}\tall\t-\t{}\t{}\t{}\t{}\t{}",
            g6(t.pv),
            g6(t.tu),
            g6(t.ku),
            g6(t.edu),
            g6(t.joint_energy)
        )?;
    }
    Ok(())
}

/// Parsed rows of a report dump.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportRecord {
    pub labels: Vec<(Index, LabelScores)>,
    pub total: InstanceScores,
}

pub fn read_report<R: BufRead>(reader: R) -> Result<Vec<ReportRecord>> {
    let mut out: Vec<ReportRecord> = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line_no = no + 1;
        let line = line.map_err(|e| Error::parse(line_no, e.to_string()))?;
        if no == 0 {
            if line.trim_end() != HEADER {
                return Err(Error::parse(1, "unexpected report header"));
            }
            continue;
        }
        let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if cols.len() != 8 {
            return Err(Error::parse(line_no, format!("expected 8 columns, got {}", cols.len())));
        }
        let inst: usize = cols[0]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad instance id {:?}", cols[0])))?;
        if inst > out.len() {
            return Err(Error::parse(line_no, "instance ids must be consecutive"));
        }
        if inst == out.len() {
            out.push(ReportRecord::default());
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::parse(line_no, format!("non-numeric value {s:?}")))
        };
        if cols[1] == "all" {
            out[inst].total = InstanceScores {
                pv: num(cols[3])?,
                tu: num(cols[4])?,
                ku: num(cols[5])?,
                edu: num(cols[6])?,
                joint_energy: num(cols[7])?,
            };
        } else {
            let label: Index = cols[1]
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad label {:?}", cols[1])))?;
            out[inst].labels.push((
                label,
                LabelScores {
                    mean_prob: num(cols[2])?,
                    pv: num(cols[3])?,
                    tu: num(cols[4])?,
                    ku: num(cols[5])?,
                    edu: num(cols[6])?,
                    energy: num(cols[7])?,
                },
            ));
        }
    }
    Ok(out)
}

/// Compact binary form of the instance totals: an `n × 5` matrix with
/// columns tu, ku, pv, edu, joint_energy.
pub fn instance_matrix(report: &UncertaintyReport) -> SparseMatrix {
    let dense: Vec<f64> = report
        .instances
        .iter()
        .flat_map(|r| [r.total.tu, r.total.ku, r.total.pv, r.total.edu, r.total.joint_energy])
        .collect();
    SparseMatrix::from_dense(report.instances.len(), 5, &dense)
}
