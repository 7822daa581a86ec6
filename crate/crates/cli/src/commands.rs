use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ctgp::config::ExperimentConfig;
use ctgp::estimators::{run_estimator, EstimateResult, EstimatorConfig, Method, MethodTag};
use ctgp::eval::{summarize, trajectory_metrics, MethodSummary, TrajectoryMetrics};
use ctgp::io::*;
use ctgp::learn::{train_input_covariance, train_singer_noiseless, StateSeries};
use ctgp::sim::{generate, DataSet};
use ctgp::{Error, Result};
use rayon::prelude::*;

use crate::manifest::RunManifest;

pub const CONFIDENCE: f64 = 0.95;
/// Largest relative RMSE difference for the two methods to count as matched.
pub const RMSE_REL_TOL: f64 = 0.05;

const CONFIG_FILE: &str = "config.json";
const PARAMS_FILE: &str = "params.json";

pub struct Context {
    pub seed: Option<u64>,
    pub quiet: bool,
}

impl Context {
    fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn truth_file(set: DataSet) -> String {
    format!("{}_truth.csv", set.name())
}

fn meas_file(set: DataSet) -> String {
    format!("{}_meas.csv", set.name())
}

fn estimates_file(m: MethodTag) -> String {
    format!("estimates_{}.csv", m.name())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::Data(format!("missing input {}: {e}", path.display())))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn with_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn load_config(ctx: &Context, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = match std::fs::metadata(path) {
        Ok(_) => ExperimentConfig::load(path)?,
        Err(e) => return Err(Error::Config(format!("{}: {e}", path.display()))),
    };
    if let Some(seed) = ctx.seed {
        cfg.sim.seed = seed;
    }
    Ok(cfg)
}

fn config_or_snapshot(ctx: &Context, config: Option<&Path>, data: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let path = config.map_or_else(|| data.join(CONFIG_FILE), Path::to_path_buf);
    Ok((load_config(ctx, &path)?, path))
}

fn read_dataset(cfg: &ExperimentConfig, dir: &Path, set: DataSet) -> Result<Vec<ctgp::sim::SimTrajectory>> {
    let tp = dir.join(truth_file(set));
    let mp = dir.join(meas_file(set));
    let truth = with_file(&tp, read_truth(open(&tp)?))?;
    let meas = with_file(&mp, read_measurements(open(&mp)?, cfg.r_pos(), cfg.r_acc()))?;
    join_dataset(truth, meas)
}

pub fn simulate(ctx: &Context, config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(ctx, config)?;
    std::fs::create_dir_all(out)?;
    let mut man = RunManifest::new("simulate", Some(&cfg));
    man.input(config);
    for set in [DataSet::Train, DataSet::Eval] {
        ctx.progress(format!("simulating {} {} trajectories", cfg.sim.count(set), set.name()));
        let trajs = man.time(set.name(), || generate(&cfg.sim, set))?;
        write_truth(create(out, &truth_file(set))?, &trajs)?;
        write_measurements(create(out, &meas_file(set))?, &trajs)?;
        man.output(&truth_file(set));
        man.output(&meas_file(set));
    }
    std::fs::write(out.join(CONFIG_FILE), cfg.to_json() + "\n")?;
    man.output(CONFIG_FILE);
    man.write(out)
}

pub fn train(ctx: &Context, config: Option<&Path>, data: &Path, out: &Path) -> Result<()> {
    let (cfg, cfg_path) = config_or_snapshot(ctx, config, data)?;
    let mut man = RunManifest::new("train", Some(&cfg));
    man.input(&cfg_path);
    man.input(data);
    let trajs = read_dataset(&cfg, data, DataSet::Train)?;
    ctx.progress(format!("training on {} trajectories", trajs.len()));
    let input = man.time("input_covariance", || train_input_covariance(&trajs))?;
    let series: Vec<StateSeries> = trajs.iter().map(StateSeries::from_trajectory).collect();
    let singer = man.time("singer", || train_singer_noiseless(&series, cfg.train.singer_init, &cfg.train.gd))?;
    ctx.progress(format!(
        "q_input = {:.6}, alpha = {:.4}, sigma2 = {:.4}",
        input.params, singer.params.alpha, singer.params.sigma2
    ));
    let params = LearnedParams {
        q_input: input.params,
        singer: singer.params,
        input_report: Some(input),
        singer_report: Some(singer),
    };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(PARAMS_FILE), params.to_json() + "\n")?;
    man.output(PARAMS_FILE);
    man.write(out)
}

fn estimator_config(cfg: &ExperimentConfig, method: Method) -> EstimatorConfig {
    EstimatorConfig {
        method,
        r_pos: cfg.r_pos(),
        r_acc: cfg.r_acc(),
        x0_mean: cfg.sim.x0_mean,
        p0_diag: cfg.sim.p0_diag,
    }
}

pub fn estimate(ctx: &Context, config: Option<&Path>, data: &Path, params: &Path, out: &Path) -> Result<()> {
    let (cfg, cfg_path) = config_or_snapshot(ctx, config, data)?;
    let mut man = RunManifest::new("estimate", Some(&cfg));
    man.input(&cfg_path);
    man.input(data);
    man.input(params);
    let bytes = std::fs::read(params).map_err(|e| Error::Data(format!("missing input {}: {e}", params.display())))?;
    let learned = with_file(params, LearnedParams::parse(&bytes))?;
    let mp = data.join(meas_file(DataSet::Eval));
    let meas = with_file(&mp, read_measurements(open(&mp)?, cfg.r_pos(), cfg.r_acc()))?;
    let meas: Vec<(u64, MeasurementSet)> = meas.into_iter().collect();
    std::fs::create_dir_all(out)?;
    for (tag, method) in [
        (MethodTag::Input, Method::InputPreint { q_input: learned.q_input }),
        (MethodTag::Measurement, Method::MeasurementGp { params: learned.singer }),
    ] {
        ctx.progress(format!("estimating {} trajectories ({})", meas.len(), tag.name()));
        let ec = estimator_config(&cfg, method);
        let results: Vec<(u64, EstimateResult)> = man.time(tag.name(), || {
            meas.par_iter().map(|(id, m)| run_estimator(&m.pos, &m.acc, &ec).map(|r| (*id, r))).collect::<Result<_>>()
        })?;
        write_estimates(create(out, &estimates_file(tag))?, &results)?;
        man.output(&estimates_file(tag));
    }
    std::fs::write(out.join(PARAMS_FILE), learned.to_json() + "\n")?;
    man.output(PARAMS_FILE);
    man.write(out)
}

fn summary_rows(tag: MethodTag, s: &MethodSummary) -> Vec<SummaryRow> {
    TrajectoryMetrics::NAMES
        .iter()
        .zip(&s.boxes)
        .map(|(name, b)| SummaryRow {
            method: tag.name().into(),
            metric: name.to_string(),
            mean: b.mean,
            median: b.median,
            q1: b.q1,
            q3: b.q3,
            w_lo: b.whisker_lo,
            w_hi: b.whisker_hi,
            n_outliers: b.outliers.len(),
        })
        .collect()
}

fn scalar_row(method: &str, metric: &str, v: f64) -> SummaryRow {
    SummaryRow {
        method: method.into(),
        metric: metric.into(),
        mean: v,
        median: v,
        q1: v,
        q3: v,
        w_lo: v,
        w_hi: v,
        n_outliers: 0,
    }
}

fn check(name: &str, method: &str, value: f64, (lo, hi): (f64, f64), pass: bool) -> CheckRow {
    CheckRow { check: name.into(), method: method.into(), value, lo, hi, pass }
}

fn method_checks(tag: MethodTag, s: &MethodSummary) -> Vec<CheckRow> {
    let m = tag.name();
    let inside = |v: f64, (lo, hi): (f64, f64)| lo <= v && v <= hi;
    vec![
        check("bias_pos", m, s.bias_pos.mean, (s.bias_pos.ci_lo, s.bias_pos.ci_hi), s.bias_pos.pass),
        check("bias_vel", m, s.bias_vel.mean, (s.bias_vel.ci_lo, s.bias_vel.ci_hi), s.bias_vel.pass),
        check("nees_full", m, s.nees_full_mean, s.nees_full_band, inside(s.nees_full_mean, s.nees_full_band)),
        check(
            "nees_marginal",
            m,
            s.nees_marginal_mean,
            s.nees_marginal_band,
            inside(s.nees_marginal_mean, s.nees_marginal_band),
        ),
    ]
}

fn truth_at(t: &TruthSeries, times: &[f64]) -> Result<Vec<nalgebra::DVector<f64>>> {
    times
        .iter()
        .map(|&q| {
            t.times
                .iter()
                .position(|&g| ctgp::gp_traj::same_time(g, q))
                .map(|i| t.states[i].clone())
                .ok_or(Error::MeasurementOffGrid(q))
        })
        .collect()
}

pub fn evaluate(ctx: &Context, results: &Path, truth: &Path, out: &Path) -> Result<()> {
    let mut man = RunManifest::new("evaluate", None);
    man.input(results);
    man.input(truth);
    let tp = truth.join(truth_file(DataSet::Eval));
    let truth_series = with_file(&tp, read_truth(open(&tp)?))?;
    let mut metric_rows = Vec::new();
    let mut summary = Vec::new();
    let mut checks = Vec::new();
    let mut summaries = BTreeMap::new();
    for tag in [MethodTag::Input, MethodTag::Measurement] {
        let path = results.join(estimates_file(tag));
        if !path.exists() {
            continue;
        }
        let estimates = with_file(&path, read_estimates(open(&path)?))?;
        ctx.progress(format!("evaluating {} trajectories ({})", estimates.len(), tag.name()));
        let metrics: Vec<TrajectoryMetrics> = man.time(tag.name(), || {
            estimates
                .par_iter()
                .map(|(id, r)| {
                    let t = truth_series
                        .get(id)
                        .ok_or_else(|| Error::Data(format!("no ground truth for trajectory {id}")))?;
                    trajectory_metrics(r, &truth_at(t, &r.times)?)
                })
                .collect::<Result<_>>()
        })?;
        for ((id, _), m) in estimates.iter().zip(&metrics) {
            for (name, v) in TrajectoryMetrics::NAMES.iter().zip(m.values()) {
                metric_rows.push(MetricRow { traj_id: *id, method: tag, metric: name.to_string(), value: v });
            }
        }
        let s = summarize(&metrics, CONFIDENCE)?;
        summary.extend(summary_rows(tag, &s));
        checks.extend(method_checks(tag, &s));
        summaries.insert(tag, s);
    }
    if summaries.is_empty() {
        return Err(Error::Data(format!("no estimate files in {}", results.display())));
    }
    if let (Some(a), Some(b)) = (summaries.get(&MethodTag::Input), summaries.get(&MethodTag::Measurement)) {
        let rel = |x: f64, y: f64| (x - y).abs() / x.max(y);
        for (name, d) in [
            ("rmse_pos_rel_diff", rel(a.rmse_pos_mean, b.rmse_pos_mean)),
            ("rmse_vel_rel_diff", rel(a.rmse_vel_mean, b.rmse_vel_mean)),
        ] {
            checks.push(check(name, "both", d, (0.0, RMSE_REL_TOL), d <= RMSE_REL_TOL));
        }
    }
    let pp = results.join(PARAMS_FILE);
    if pp.exists() {
        let bytes = std::fs::read(&pp)?;
        let p = with_file(&pp, LearnedParams::parse(&bytes))?;
        summary.push(scalar_row("input", "q_input", p.q_input));
        summary.push(scalar_row("measurement", "alpha", p.singer.alpha));
        summary.push(scalar_row("measurement", "sigma2", p.singer.sigma2));
        man.input(&pp);
    }
    std::fs::create_dir_all(out)?;
    write_metrics(create(out, "metrics.csv")?, &metric_rows)?;
    write_summary(create(out, "summary.csv")?, &summary)?;
    write_checks(create(out, "checks.csv")?, &checks)?;
    for f in ["metrics.csv", "summary.csv", "checks.csv"] {
        man.output(f);
    }
    for c in &checks {
        ctx.progress(format!(
            "{:<18} {:<12} {:>12.5e} in [{:.5e}, {:.5e}] {}",
            c.check,
            c.method,
            c.value,
            c.lo,
            c.hi,
            if c.pass { "pass" } else { "FAIL" }
        ));
    }
    man.write(out)
}

/// Full pipeline for a preset; every stage reads the files the previous one wrote.
pub fn reproduce(ctx: &Context, experiment: &str, out: &Path) -> Result<()> {
    let mut cfg = ExperimentConfig::preset(experiment)?;
    if let Some(seed) = ctx.seed {
        cfg.sim.seed = seed;
    }
    std::fs::create_dir_all(out)?;
    let cfg_path = out.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_json() + "\n")?;
    let (data, params, est, eval) = (out.join("data"), out.join("train"), out.join("estimate"), out.join("evaluate"));
    let mut man = RunManifest::new("reproduce", Some(&cfg));
    let stage_ctx = Context { seed: None, quiet: ctx.quiet };
    man.time("simulate", || simulate(&stage_ctx, &cfg_path, &data))?;
    man.time("train", || train(&stage_ctx, None, &data, &params))?;
    man.time("estimate", || estimate(&stage_ctx, None, &data, &params.join(PARAMS_FILE), &est))?;
    man.time("evaluate", || evaluate(&stage_ctx, &est, &data, &eval))?;
    man.output(CONFIG_FILE);
    for d in ["data", "train", "estimate", "evaluate"] {
        man.output(&format!("{d}/"));
    }
    man.write(out)
}
