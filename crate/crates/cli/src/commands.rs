use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use xmc_core::dataset::load_xmc_text;
use xmc_core::ensemble::{
    combine, mc_dropout_members, member_seeds, train_bagging, train_boosted_bagging, train_boosting, EnsembleModel,
    Scheme,
};
use xmc_core::eval::{
    linear_fit, misclassification_detection, ood_detection, precision_recall_at_k, scaling_sweep, timing_comparison,
    InstanceMetric, LabelMetric, MisclsInstance, RankedPrediction,
};
use xmc_core::inference::{exhaustive_top_k, read_predictions, write_predictions, BeamResult, Ranking};
use xmc_core::linear_ranker::NegativeSamplingPlan;
use xmc_core::uncertainty::{
    approximate_batch, exact_batch, read_report, write_report, InstanceScores, LabelScores, ReportRecord,
    UncertaintyReport,
};
use xmc_core::{train_model, Dataset, SparseMatrix};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::VERSION_STRING;

fn load_data(path: &Path, normalize: bool) -> Result<Dataset> {
    let data = load_xmc_text(path)?;
    Ok(if normalize { data.with_normalized_features() } else { data })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

/// Writes `<out>.meta.json` recording how an output file was produced.
fn write_sidecar(out: &Path, command: &str, cfg: &RunConfig, extra: serde_json::Value) -> Result<()> {
    let meta = json!({
        "software_version": VERSION_STRING,
        "command": command,
        "config": cfg.to_json(),
        "details": extra,
    });
    let mut w = create(&sidecar_path(out))?;
    serde_json::to_writer_pretty(&mut w, &meta).map_err(|e| CliError::Core(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    match out {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
            r => r?,
        },
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, train_path: &Path, out: &Path) -> Result<()> {
    let data = load_data(train_path, cfg.normalize)?;
    log::info!(
        "loaded {} instances, {} features, {} labels",
        data.n_instances(),
        data.n_features(),
        data.n_labels()
    );
    let params = cfg.train_params();
    let seeds = member_seeds(cfg.seed, cfg.members);
    let config = cfg.to_json();
    if cfg.scheme == Scheme::Single {
        let mut model = train_model(&data, &params, &NegativeSamplingPlan::TeacherForcing)?;
        model.meta.features_normalized = cfg.normalize;
        model.meta.config = config;
        model.save(out)?;
        log::info!("saved single model (depth {}) to {}", model.depth(), out.display());
        return Ok(());
    }
    let boost = cfg.boost_params();
    let mut ens = match cfg.scheme {
        Scheme::Bagging => train_bagging(&data, &params, &seeds)?,
        Scheme::Boosting => train_boosting(&data, &params, &boost, &seeds)?,
        Scheme::BoostedBagging => train_boosted_bagging(&data, &params, &boost, &seeds)?,
        Scheme::McDropout => {
            let base = train_model(&data, &params, &NegativeSamplingPlan::TeacherForcing)?;
            mc_dropout_members(&base, cfg.dropout, &seeds)?
        }
        Scheme::Single => unreachable!(),
    };
    for m in &mut ens.members {
        m.meta.features_normalized = cfg.normalize;
        m.meta.config = config.clone();
    }
    ens.meta.config = config;
    ens.save(out)?;
    log::info!("saved {} ensemble of {} members to {}", scheme_name(cfg.scheme), ens.len(), out.display());
    Ok(())
}

fn scheme_name(s: Scheme) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

struct Loaded {
    ens: EnsembleModel,
    data: Dataset,
}

fn load_model_and_data(model: &Path, test: &Path) -> Result<Loaded> {
    let ens = EnsembleModel::load(model)?;
    let normalize = ens.members[0].meta.features_normalized;
    let data = load_data(test, normalize)?;
    if data.n_features() != ens.n_features() {
        return Err(xmc_core::Error::DimensionMismatch {
            expected: ens.n_features(),
            found: data.n_features(),
        }
        .into());
    }
    Ok(Loaded { ens, data })
}

fn require_exact_allowed(cfg: &RunConfig, n_labels: usize, what: &str) -> Result<()> {
    if n_labels > cfg.max_exact_labels {
        return Err(CliError::Usage(format!(
            "{what} enumerates all {n_labels} labels, above the ceiling of {}; raise --max-exact-labels to force it",
            cfg.max_exact_labels
        )));
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig, model: &Path, test: &Path, out: &Path, full_width: bool, exhaustive: bool) -> Result<()> {
    let Loaded { ens, data } = load_model_and_data(model, test)?;
    let l = ens.n_labels();
    let k = cfg.top_k.min(l);
    let instances: Vec<Ranking> = if exhaustive {
        require_exact_allowed(cfg, l, "exhaustive prediction")?;
        (0..data.n_instances())
            .map(|i| {
                let x = data.feature_vector(i);
                let members = ens
                    .members
                    .iter()
                    .map(|m| exhaustive_top_k(m, &x, l))
                    .collect::<xmc_core::Result<Vec<_>>>()?;
                Ok(combine(&members, ens.weights(), cfg.delta, k))
            })
            .collect::<Result<_>>()?
    } else {
        let (b, kk) = if full_width {
            let width = ens.members.iter().map(|m| m.topology.max_layer_width()).max().unwrap_or(1);
            (width, l)
        } else {
            (cfg.beam, cfg.top_k)
        };
        ens.predict_batch(&data.features, b, kk, cfg.delta)?
            .into_iter()
            .map(|p| {
                let mut r = p.averaged;
                r.truncate(k);
                r
            })
            .collect()
    };
    let result = BeamResult {
        b: cfg.beam,
        k,
        instances,
    };
    let mut w = create(out)?;
    write_predictions(&result, &mut w)?;
    w.flush()?;
    write_sidecar(
        out,
        "predict",
        cfg,
        json!({"instances": data.n_instances(), "full_width": full_width, "exhaustive": exhaustive}),
    )?;
    log::info!("wrote {} predictions to {}", data.n_instances(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct ExactComparison {
    max_label_tu_diff: f64,
    max_instance_tu_rel_err: f64,
    max_instance_ku_rel_err: f64,
    max_instance_pv_rel_err: f64,
}

fn rel_err(exact: f64, approx: f64) -> f64 {
    (exact - approx).abs() / exact.abs().max(f64::MIN_POSITIVE)
}

fn compare(exact: &UncertaintyReport, beam: &UncertaintyReport) -> ExactComparison {
    let mut c = ExactComparison {
        max_label_tu_diff: 0.0,
        max_instance_tu_rel_err: 0.0,
        max_instance_ku_rel_err: 0.0,
        max_instance_pv_rel_err: 0.0,
    };
    for (e, a) in exact.instances.iter().zip(&beam.instances) {
        for (l, s) in e.labels.iter().zip(&e.scores) {
            c.max_label_tu_diff = c.max_label_tu_diff.max((s.tu - a.label(*l).tu).abs());
        }
        c.max_instance_tu_rel_err = c.max_instance_tu_rel_err.max(rel_err(e.total.tu, a.total.tu));
        c.max_instance_ku_rel_err = c.max_instance_ku_rel_err.max(rel_err(e.total.ku, a.total.ku));
        c.max_instance_pv_rel_err = c.max_instance_pv_rel_err.max(rel_err(e.total.pv, a.total.pv));
    }
    c
}

pub fn uncertainty(cfg: &RunConfig, model: &Path, test: &Path, out: &Path, exact: bool, compare_exact: bool) -> Result<()> {
    let Loaded { ens, data } = load_model_and_data(model, test)?;
    if exact || compare_exact {
        require_exact_allowed(cfg, ens.n_labels(), "exact uncertainty")?;
    }
    let report = if exact {
        exact_batch(&ens, &data.features, cfg.entropy)?
    } else {
        approximate_batch(&ens, &data.features, cfg.beam, cfg.top_k, cfg.delta, cfg.entropy)?
    };
    let clamped = report.ku_clamped();
    if clamped > 0 {
        log::warn!("{clamped} knowledge-uncertainty values within rounding of zero were clamped");
    }
    let mut w = create(out)?;
    write_report(&report, &mut w)?;
    w.flush()?;
    let mut details = json!({
        "mode": if exact { "exact" } else { "beam" },
        "instances": data.n_instances(),
        "ku_clamped": clamped,
    });
    if compare_exact && !exact {
        let reference = exact_batch(&ens, &data.features, cfg.entropy)?;
        let summary = compare(&reference, &report);
        emit_json(&summary, None)?;
        details["compare_exact"] = serde_json::to_value(&summary).expect("summary serializes");
    }
    write_sidecar(out, "uncertainty", cfg, details)?;
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub enum EvalTask {
    Rank,
    Miscls,
    Ood,
}

pub struct EvalArgs<'a> {
    pub task: EvalTask,
    pub truth: Option<&'a Path>,
    pub predictions: Option<&'a Path>,
    pub report: Option<&'a Path>,
    pub ood_report: Option<&'a Path>,
    pub metric: &'a str,
    pub ks: &'a [usize],
    pub out: Option<&'a Path>,
}

fn need<'a>(p: Option<&'a Path>, flag: &str, task: &str) -> Result<&'a Path> {
    p.ok_or_else(|| CliError::Usage(format!("--task {task} requires {flag}")))
}

fn read_preds(path: &Path) -> Result<Vec<Ranking>> {
    Ok(read_predictions(BufReader::new(File::open(path).map_err(|e| io_error(path, e))?))?)
}

fn read_reports(path: &Path) -> Result<Vec<ReportRecord>> {
    Ok(read_report(BufReader::new(File::open(path).map_err(|e| io_error(path, e))?))?)
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn truth_of(path: &Path, expected: usize) -> Result<SparseMatrix> {
    let data = load_xmc_text(path)?;
    if data.n_instances() != expected {
        return Err(xmc_core::Error::DimensionMismatch {
            expected,
            found: data.n_instances(),
        }
        .into());
    }
    Ok(data.labels)
}

fn truth_row(labels: &SparseMatrix, i: usize) -> &[u32] {
    labels.row(i).indices
}

pub fn eval(args: &EvalArgs<'_>) -> Result<()> {
    match args.task {
        EvalTask::Rank => {
            let preds = read_preds(need(args.predictions, "--predictions", "rank")?)?;
            let labels = truth_of(need(args.truth, "--truth", "rank")?, preds.len())?;
            let ranked: Vec<RankedPrediction> = preds
                .iter()
                .enumerate()
                .map(|(i, r)| RankedPrediction {
                    labels: r.iter().map(|p| p.0).collect(),
                    truth: truth_row(&labels, i).to_vec(),
                })
                .collect();
            let pr = precision_recall_at_k(&ranked, args.ks);
            let mut out = serde_json::Map::new();
            for (j, k) in pr.ks.iter().enumerate() {
                out.insert(format!("P@{k}"), json!(pr.precision[j]));
                out.insert(format!("R@{k}"), json!(pr.recall[j]));
            }
            out.insert("evaluated".into(), json!(pr.evaluated));
            out.insert("skipped_no_labels".into(), json!(pr.skipped_no_labels));
            emit_json(&out, args.out)
        }
        EvalTask::Miscls => {
            let metric: LabelMetric = args.metric.parse().map_err(|e: xmc_core::Error| CliError::Usage(e.to_string()))?;
            let preds = read_preds(need(args.predictions, "--predictions", "miscls")?)?;
            let mut reports = read_reports(need(args.report, "--report", "miscls")?)?;
            if reports.len() != preds.len() {
                return Err(xmc_core::Error::DimensionMismatch {
                    expected: preds.len(),
                    found: reports.len(),
                }
                .into());
            }
            let labels = truth_of(need(args.truth, "--truth", "miscls")?, preds.len())?;
            for r in &mut reports {
                r.labels.sort_unstable_by_key(|p| p.0);
            }
            let rankings: Vec<Vec<u32>> = preds.iter().map(|r| r.iter().map(|p| p.0).collect()).collect();
            let scores: Vec<&[(u32, LabelScores)]> = reports.iter().map(|r| r.labels.as_slice()).collect();
            let instances: Vec<MisclsInstance<'_>> = (0..preds.len())
                .map(|i| MisclsInstance {
                    ranking: &rankings[i],
                    scores: scores[i],
                    truth: truth_row(&labels, i),
                })
                .collect();
            let res = misclassification_detection(&instances, metric);
            emit_json(
                &json!({
                    "metric": args.metric,
                    "mean_auroc": if res.mean_auroc.is_nan() { serde_json::Value::Null } else { json!(res.mean_auroc) },
                    "evaluated": res.evaluated,
                    "skipped_single_class": res.skipped_single_class,
                    "skipped_no_labels": res.skipped_no_labels,
                    "excluded_true_labels": res.excluded_true_labels,
                }),
                args.out,
            )
        }
        EvalTask::Ood => {
            let metric: InstanceMetric = args.metric.parse().map_err(|e: xmc_core::Error| CliError::Usage(e.to_string()))?;
            let totals = |p: &Path| -> Result<Vec<InstanceScores>> {
                Ok(read_reports(p)?.into_iter().map(|r| r.total).collect())
            };
            let id = totals(need(args.report, "--report", "ood")?)?;
            let ood = totals(need(args.ood_report, "--ood-report", "ood")?)?;
            let auroc = ood_detection(&id, &ood, metric)?;
            emit_json(
                &json!({"metric": args.metric, "auroc": auroc, "in_distribution": id.len(), "out_of_distribution": ood.len()}),
                args.out,
            )
        }
    }
}

pub fn bench(cfg: &RunConfig, model: &Path, test: &Path, limit: Option<usize>, out: Option<&Path>) -> Result<()> {
    let Loaded { ens, data } = load_model_and_data(model, test)?;
    require_exact_allowed(cfg, ens.n_labels(), "the naive baseline")?;
    let n = limit.unwrap_or(data.n_instances()).min(data.n_instances());
    let x = data.features.select_rows(&(0..n).collect::<Vec<_>>());
    let t = timing_comparison(&ens, &x, cfg.beam, cfg.top_k, cfg.delta)?;
    emit_json(
        &json!({
            "software_version": VERSION_STRING,
            "instances": n,
            "n_labels": ens.n_labels(),
            "members": ens.len(),
            "naive_seconds": t.naive_seconds,
            "beam_seconds": t.beam_seconds,
            "speedup": t.speedup,
            "max_instance_tu_diff": t.max_instance_tu_diff,
            "config": cfg.to_json(),
        }),
        out,
    )
}

pub fn parse_sizes(s: &str) -> std::result::Result<Vec<(usize, usize)>, String> {
    s.split(',')
        .map(|item| {
            let (l, d) = item
                .split_once(':')
                .ok_or_else(|| format!("size {item:?} is not L:depth"))?;
            let l = l.trim().parse().map_err(|_| format!("bad label count {l:?}"))?;
            let d = d.trim().parse().map_err(|_| format!("bad depth {d:?}"))?;
            Ok((l, d))
        })
        .collect()
}

pub fn bench_sweep(
    cfg: &RunConfig,
    sizes: &[(usize, usize)],
    gamma: f64,
    queries: usize,
    reps: usize,
    out: Option<&Path>,
) -> Result<()> {
    if let Some(&(l, _)) = sizes.iter().find(|(l, _)| *l > cfg.max_exact_labels) {
        require_exact_allowed(cfg, l, "the naive baseline")?;
    }
    let points = scaling_sweep(sizes, gamma, cfg.beam, cfg.top_k, queries, reps, cfg.seed)?;
    let ln_l: Vec<f64> = points.iter().map(|p| (p.n_labels as f64).ln()).collect();
    let l: Vec<f64> = points.iter().map(|p| p.n_labels as f64).collect();
    let beam: Vec<f64> = points.iter().map(|p| p.beam_seconds).collect();
    let naive: Vec<f64> = points.iter().map(|p| p.naive_seconds).collect();
    let fits = if points.len() >= 2 {
        json!({
            "beam_vs_ln_l": linear_fit(&ln_l, &beam).ok(),
            "naive_vs_l": linear_fit(&l, &naive).ok(),
        })
    } else {
        serde_json::Value::Null
    };
    let speedup = points.last().map(|p| p.naive_seconds / p.beam_seconds.max(1e-12));
    emit_json(
        &json!({
            "software_version": VERSION_STRING,
            "gamma": gamma,
            "queries": queries,
            "reps": reps,
            "points": points,
            "fits": fits,
            "speedup_at_largest": speedup,
            "config": cfg.to_json(),
        }),
        out,
    )
}
