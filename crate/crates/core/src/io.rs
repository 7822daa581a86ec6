//! CSV and JSON interchange between pipeline stages.
//!
//! Every file has a one-line header and a fixed column order. Floats are
//! written with 17 significant digits so they parse back bit-exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use csv::{ReaderBuilder, StringRecord, Writer};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blocktri::BlockTriDiagSPD;
use crate::error::{Error, Result};
use crate::estimators::{EstimateResult, MethodTag};
use crate::gp_traj::{Measurement, MeasurementStream};
use crate::learn::TrainReport;
use crate::priors::SingerParams;
use crate::sim::{SimTrajectory, ACC_ROW, POS_ROW};

pub const TRUTH_HEADER: [&str; 5] = ["traj_id", "t", "p", "v", "a"];
pub const MEAS_HEADER: [&str; 4] = ["traj_id", "t", "channel", "y"];
pub const METRICS_HEADER: [&str; 4] = ["traj_id", "method", "metric", "value"];
pub const SUMMARY_HEADER: [&str; 9] = ["method", "metric", "mean", "median", "q1", "q3", "w_lo", "w_hi", "n_outliers"];
pub const CHECKS_HEADER: [&str; 6] = ["check", "method", "value", "lo", "hi", "pass"];

/// Widest state handled by the estimate files.
const MAX_DIM: usize = 3;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Data(format!("{kind:?}")),
    }
}

fn line_of(rec: &StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn field<'a>(rec: &'a StringRecord, i: usize, name: &str) -> Result<&'a str> {
    rec.get(i).ok_or_else(|| Error::Data(format!("line {}: missing column '{name}'", line_of(rec))))
}

fn parse_f64(rec: &StringRecord, i: usize, name: &str) -> Result<f64> {
    let s = field(rec, i, name)?;
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("line {}: column '{name}': '{s}' is not a number", line_of(rec))))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("line {}: column '{name}' is not finite", line_of(rec))));
    }
    Ok(v)
}

fn parse_u64(rec: &StringRecord, i: usize, name: &str) -> Result<u64> {
    let s = field(rec, i, name)?;
    s.trim()
        .parse()
        .map_err(|_| Error::Data(format!("line {}: column '{name}': '{s}' is not an integer", line_of(rec))))
}

fn reader<R: Read>(r: R, header: &[&str]) -> Result<csv::Reader<R>> {
    let mut rd = ReaderBuilder::new().has_headers(true).flexible(false).from_reader(r);
    let got = rd.headers().map_err(csv_err)?.clone();
    if got.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(Error::Data(format!(
            "unexpected header '{}' (expected '{}')",
            got.iter().collect::<Vec<_>>().join(","),
            header.join(",")
        )));
    }
    Ok(rd)
}

fn writer<W: Write>(w: W, header: &[&str]) -> Result<Writer<W>> {
    let mut wr = Writer::from_writer(w);
    wr.write_record(header).map_err(csv_err)?;
    Ok(wr)
}

pub fn write_truth<W: Write>(w: W, trajs: &[SimTrajectory]) -> Result<()> {
    let mut wr = writer(w, &TRUTH_HEADER)?;
    for (id, t) in trajs.iter().enumerate() {
        for (time, x) in t.times.iter().zip(&t.states) {
            wr.write_record([id.to_string(), fmt_f64(*time), fmt_f64(x[0]), fmt_f64(x[1]), fmt_f64(x[2])])
                .map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_measurements<W: Write>(w: W, trajs: &[SimTrajectory]) -> Result<()> {
    let mut wr = writer(w, &MEAS_HEADER)?;
    for (id, t) in trajs.iter().enumerate() {
        // interleave by time, position first at shared stamps
        let mut rows: Vec<(f64, u8, f64)> = t
            .pos_meas
            .items
            .iter()
            .map(|m| (m.time, 0, m.y[0]))
            .chain(t.acc_meas.items.iter().map(|m| (m.time, 1, m.y[0])))
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (time, ch, y) in rows {
            let channel = if ch == 0 { "pos" } else { "acc" };
            wr.write_record([id.to_string(), fmt_f64(time), channel.to_string(), fmt_f64(y)]).map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Ground-truth states grouped by trajectory id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TruthSeries {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

pub fn read_truth<R: Read>(r: R) -> Result<BTreeMap<u64, TruthSeries>> {
    let mut rd = reader(r, &TRUTH_HEADER)?;
    let mut out: BTreeMap<u64, TruthSeries> = BTreeMap::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let id = parse_u64(&rec, 0, "traj_id")?;
        let t = parse_f64(&rec, 1, "t")?;
        let x = DVector::from_vec(vec![parse_f64(&rec, 2, "p")?, parse_f64(&rec, 3, "v")?, parse_f64(&rec, 4, "a")?]);
        let s = out.entry(id).or_default();
        if s.times.last().is_some_and(|&last| t <= last) {
            return Err(Error::Data(format!("line {}: times must increase within a trajectory", line_of(&rec))));
        }
        s.times.push(t);
        s.states.push(x);
    }
    Ok(out)
}

/// Position and acceleration streams of one trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasurementSet {
    pub pos: MeasurementStream,
    pub acc: MeasurementStream,
}

/// Read measurement rows; `r_pos`/`r_acc` become the stored noise variances.
pub fn read_measurements<R: Read>(r: R, r_pos: f64, r_acc: f64) -> Result<BTreeMap<u64, MeasurementSet>> {
    let mut rd = reader(r, &MEAS_HEADER)?;
    let mut out: BTreeMap<u64, MeasurementSet> = BTreeMap::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let id = parse_u64(&rec, 0, "traj_id")?;
        let t = parse_f64(&rec, 1, "t")?;
        let y = parse_f64(&rec, 3, "y")?;
        let set = out.entry(id).or_default();
        let (stream, row, var) = match field(&rec, 2, "channel")?.trim() {
            "pos" => (&mut set.pos, &POS_ROW, r_pos),
            "acc" => (&mut set.acc, &ACC_ROW, r_acc),
            other => {
                return Err(Error::Data(format!("line {}: unknown channel '{other}'", line_of(&rec))));
            }
        };
        if stream.items.last().is_some_and(|m| t <= m.time) {
            return Err(Error::Data(format!("line {}: times must increase within a channel", line_of(&rec))));
        }
        stream.items.push(Measurement::scalar(t, row, y, var));
    }
    Ok(out)
}

/// Join truth and measurements into trajectories, ordered by id.
pub fn join_dataset(
    truth: BTreeMap<u64, TruthSeries>,
    mut meas: BTreeMap<u64, MeasurementSet>,
) -> Result<Vec<SimTrajectory>> {
    if let Some(id) = meas.keys().find(|k| !truth.contains_key(k)) {
        return Err(Error::Data(format!("measurements for trajectory {id} have no ground truth")));
    }
    truth
        .into_iter()
        .map(|(id, t)| {
            let m = meas.remove(&id).ok_or_else(|| Error::Data(format!("trajectory {id} has no measurements")))?;
            Ok(SimTrajectory { times: t.times, states: t.states, pos_meas: m.pos, acc_meas: m.acc })
        })
        .collect()
}

fn estimate_header() -> Vec<String> {
    let mut h: Vec<String> = ["traj_id", "method", "k", "t", "dim"].iter().map(|s| s.to_string()).collect();
    h.extend((0..MAX_DIM).map(|i| format!("mean_{i}")));
    for prefix in ["cov", "info", "info_lower"] {
        for i in 0..MAX_DIM {
            for j in 0..MAX_DIM {
                h.push(format!("{prefix}_{i}{j}"));
            }
        }
    }
    h
}

fn push_block(row: &mut Vec<String>, m: Option<&DMatrix<f64>>, d: usize) {
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            row.push(match m {
                Some(m) if i < d && j < d => fmt_f64(m[(i, j)]),
                _ => String::new(),
            });
        }
    }
}

/// One row per endpoint: mean, marginal covariance, and the information
/// blocks `(k, k)` and `(k, k−1)`.
pub fn write_estimates<W: Write>(w: W, results: &[(u64, EstimateResult)]) -> Result<()> {
    let header = estimate_header();
    let mut wr = writer(w, &header.iter().map(String::as_str).collect::<Vec<_>>())?;
    for (id, r) in results {
        let d = r.state_dim();
        for k in 0..r.n_knots() {
            let mut row =
                vec![id.to_string(), r.method.name().to_string(), k.to_string(), fmt_f64(r.times[k]), d.to_string()];
            row.extend((0..MAX_DIM).map(|i| if i < d { fmt_f64(r.means[k][i]) } else { String::new() }));
            push_block(&mut row, Some(&r.marginal_covs[k]), d);
            push_block(&mut row, Some(&r.info.diag()[k]), d);
            push_block(&mut row, k.checked_sub(1).map(|j| &r.info.lower()[j]), d);
            wr.write_record(&row).map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}

fn read_block(rec: &StringRecord, start: usize, d: usize, name: &str) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = parse_f64(rec, start + i * MAX_DIM + j, name)?;
        }
    }
    Ok(m)
}

pub fn read_estimates<R: Read>(r: R) -> Result<Vec<(u64, EstimateResult)>> {
    let header = estimate_header();
    let mut rd = reader(r, &header.iter().map(String::as_str).collect::<Vec<_>>())?;
    struct Acc {
        method: MethodTag,
        dim: usize,
        times: Vec<f64>,
        means: Vec<DVector<f64>>,
        covs: Vec<DMatrix<f64>>,
        diag: Vec<DMatrix<f64>>,
        lower: Vec<DMatrix<f64>>,
    }
    let mut groups: BTreeMap<u64, Acc> = BTreeMap::new();
    let mean0 = 5;
    let cov0 = mean0 + MAX_DIM;
    let info0 = cov0 + MAX_DIM * MAX_DIM;
    let low0 = info0 + MAX_DIM * MAX_DIM;
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let line = line_of(&rec);
        let id = parse_u64(&rec, 0, "traj_id")?;
        let method = MethodTag::parse(field(&rec, 1, "method")?.trim())?;
        let k = parse_u64(&rec, 2, "k")? as usize;
        let t = parse_f64(&rec, 3, "t")?;
        let dim = parse_u64(&rec, 4, "dim")? as usize;
        if dim != method.state_dim() {
            return Err(Error::Data(format!(
                "line {line}: method {} has state dimension {}",
                method.name(),
                method.state_dim()
            )));
        }
        let g = groups.entry(id).or_insert_with(|| Acc {
            method,
            dim,
            times: vec![],
            means: vec![],
            covs: vec![],
            diag: vec![],
            lower: vec![],
        });
        if g.method != method || g.dim != dim {
            return Err(Error::Data(format!("line {line}: trajectory {id} mixes methods")));
        }
        if k != g.times.len() {
            return Err(Error::Data(format!(
                "line {line}: expected knot {} of trajectory {id}, got {k}",
                g.times.len()
            )));
        }
        if g.times.last().is_some_and(|&last| t <= last) {
            return Err(Error::Data(format!("line {line}: times must increase")));
        }
        g.times.push(t);
        g.means.push(DVector::from_iterator(
            dim,
            (0..dim).map(|i| parse_f64(&rec, mean0 + i, "mean")).collect::<Result<Vec<_>>>()?,
        ));
        g.covs.push(read_block(&rec, cov0, dim, "cov")?);
        g.diag.push(read_block(&rec, info0, dim, "info")?);
        if k > 0 {
            g.lower.push(read_block(&rec, low0, dim, "info_lower")?);
        }
    }
    groups
        .into_iter()
        .map(|(id, g)| {
            let info = BlockTriDiagSPD::new(g.diag, g.lower)?;
            Ok((id, EstimateResult { method: g.method, times: g.times, means: g.means, marginal_covs: g.covs, info }))
        })
        .collect()
}

/// Learned parameters handed from training to estimation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnedParams {
    pub q_input: f64,
    pub singer: SingerParams,
    #[serde(default)]
    pub input_report: Option<TrainReport<f64>>,
    #[serde(default)]
    pub singer_report: Option<TrainReport<SingerParams>>,
}

impl LearnedParams {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let p: Self = serde_json::from_slice(bytes).map_err(|e| Error::Data(format!("params: {e}")))?;
        if !(p.q_input > 0.0 && p.q_input.is_finite()) {
            return Err(Error::Data(format!("params: q_input must be > 0, got {}", p.q_input)));
        }
        p.singer.validate().map_err(|e| Error::Data(format!("params: {e}")))?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub traj_id: u64,
    pub method: MethodTag,
    pub metric: String,
    pub value: f64,
}

pub fn write_metrics<W: Write>(w: W, rows: &[MetricRow]) -> Result<()> {
    let mut wr = writer(w, &METRICS_HEADER)?;
    for r in rows {
        wr.write_record([r.traj_id.to_string(), r.method.name().to_string(), r.metric.clone(), fmt_f64(r.value)])
            .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(r: R) -> Result<Vec<MetricRow>> {
    let mut rd = reader(r, &METRICS_HEADER)?;
    rd.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(MetricRow {
                traj_id: parse_u64(&rec, 0, "traj_id")?,
                method: MethodTag::parse(field(&rec, 1, "method")?.trim())?,
                metric: field(&rec, 2, "metric")?.trim().to_string(),
                value: parse_f64(&rec, 3, "value")?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub w_lo: f64,
    pub w_hi: f64,
    pub n_outliers: usize,
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut wr = writer(w, &SUMMARY_HEADER)?;
    for r in rows {
        wr.write_record([
            r.method.clone(),
            r.metric.clone(),
            fmt_f64(r.mean),
            fmt_f64(r.median),
            fmt_f64(r.q1),
            fmt_f64(r.q3),
            fmt_f64(r.w_lo),
            fmt_f64(r.w_hi),
            r.n_outliers.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_summary<R: Read>(r: R) -> Result<Vec<SummaryRow>> {
    let mut rd = reader(r, &SUMMARY_HEADER)?;
    rd.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(SummaryRow {
                method: field(&rec, 0, "method")?.trim().to_string(),
                metric: field(&rec, 1, "metric")?.trim().to_string(),
                mean: parse_f64(&rec, 2, "mean")?,
                median: parse_f64(&rec, 3, "median")?,
                q1: parse_f64(&rec, 4, "q1")?,
                q3: parse_f64(&rec, 5, "q3")?,
                w_lo: parse_f64(&rec, 6, "w_lo")?,
                w_hi: parse_f64(&rec, 7, "w_hi")?,
                n_outliers: parse_u64(&rec, 8, "n_outliers")? as usize,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub method: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
}

pub fn write_checks<W: Write>(w: W, rows: &[CheckRow]) -> Result<()> {
    let mut wr = writer(w, &CHECKS_HEADER)?;
    for r in rows {
        wr.write_record([
            r.check.clone(),
            r.method.clone(),
            fmt_f64(r.value),
            fmt_f64(r.lo),
            fmt_f64(r.hi),
            r.pass.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn truth_header_checked() {
        let r = read_truth("traj,t,p,v,a\n".as_bytes());
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn measurement_rows_grouped() {
        let text = "traj_id,t,channel,y\n0,0,pos,1\n0,0,acc,2\n0,0.01,acc,3\n1,0,pos,4\n";
        let m = read_measurements(text.as_bytes(), 1e-4, 1e-4).unwrap();
        assert_eq!(m[&0].pos.len(), 1);
        assert_eq!(m[&0].acc.len(), 2);
        assert_eq!(m[&1].pos.items[0].y[0], 4.0);
    }

    #[test]
    fn bad_number_names_line_and_column() {
        let text = "traj_id,t,p,v,a\n0,0,1,2,x\n";
        match read_truth(text.as_bytes()) {
            Err(Error::Data(msg)) => assert!(msg.contains("line 2") && msg.contains("'a'"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
