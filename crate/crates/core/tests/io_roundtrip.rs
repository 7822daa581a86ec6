use ctgp::config::ExperimentConfig;
use ctgp::error::Error;
use ctgp::estimators::{estimate_dataset, EstimatorConfig, Method, MethodTag};
use ctgp::eval::trajectory_metrics;
use ctgp::io::*;
use ctgp::learn::TrainReport;
use ctgp::priors::SingerParams;
use ctgp::sim::{experiment_presets, generate, DataSet, SimTrajectory};

fn dataset(n: usize) -> Vec<SimTrajectory> {
    let (_, mut sim) = experiment_presets();
    sim.n_eval = n;
    generate(&sim, DataSet::Eval).unwrap()
}

fn data_error_line(e: Error) -> String {
    match e {
        Error::Data(msg) => msg,
        other => panic!("expected a data error, got {other:?}"),
    }
}

#[test]
fn dataset_round_trip_is_exact() {
    let trajs = dataset(3);
    let (mut truth, mut meas) = (Vec::new(), Vec::new());
    write_truth(&mut truth, &trajs).unwrap();
    write_measurements(&mut meas, &trajs).unwrap();
    let back =
        join_dataset(read_truth(truth.as_slice()).unwrap(), read_measurements(meas.as_slice(), 1e-4, 1e-4).unwrap())
            .unwrap();
    assert_eq!(back, trajs);
}

#[test]
fn empty_dataset_has_headers_only() {
    let mut truth = Vec::new();
    write_truth(&mut truth, &[]).unwrap();
    assert_eq!(String::from_utf8(truth.clone()).unwrap(), "traj_id,t,p,v,a\n");
    assert!(read_truth(truth.as_slice()).unwrap().is_empty());
    let mut meas = Vec::new();
    write_measurements(&mut meas, &[]).unwrap();
    assert_eq!(String::from_utf8(meas).unwrap(), "traj_id,t,channel,y\n");
}

#[test]
fn estimates_replay_to_identical_metrics() {
    let trajs = dataset(4);
    for method in [
        Method::InputPreint { q_input: 3e-3 },
        Method::MeasurementGp { params: SingerParams { alpha: 10.0, sigma2: 1.0 } },
    ] {
        let cfg = EstimatorConfig { method, r_pos: 1e-4, r_acc: 1e-4, x0_mean: [0.0, 1.0, 0.0], p0_diag: [1e-3; 3] };
        let results: Vec<(u64, _)> =
            estimate_dataset(&trajs, &cfg).unwrap().into_iter().enumerate().map(|(i, r)| (i as u64, r)).collect();
        let mut buf = Vec::new();
        write_estimates(&mut buf, &results).unwrap();
        let back = read_estimates(buf.as_slice()).unwrap();
        assert_eq!(back, results);
        for ((_, a), ((_, b), t)) in back.iter().zip(results.iter().zip(&trajs)) {
            let truth = t.states_at(&a.times).unwrap();
            assert_eq!(trajectory_metrics(a, &truth).unwrap(), trajectory_metrics(b, &truth).unwrap());
        }
    }
}

#[test]
fn metrics_summary_and_params_round_trip() {
    let rows = vec![
        MetricRow { traj_id: 0, method: MethodTag::Input, metric: "rmse_pos".into(), value: 1.0 / 3.0 },
        MetricRow { traj_id: 1, method: MethodTag::Measurement, metric: "nees_full".into(), value: 1e-300 },
    ];
    let mut buf = Vec::new();
    write_metrics(&mut buf, &rows).unwrap();
    assert_eq!(read_metrics(buf.as_slice()).unwrap(), rows);

    let summary = vec![SummaryRow {
        method: "input".into(),
        metric: "q_input".into(),
        mean: 0.00338,
        median: 0.1,
        q1: -0.2,
        q3: 0.3,
        w_lo: -1.0,
        w_hi: 1.0,
        n_outliers: 7,
    }];
    let mut buf = Vec::new();
    write_summary(&mut buf, &summary).unwrap();
    assert_eq!(read_summary(buf.as_slice()).unwrap(), summary);

    let params = LearnedParams {
        q_input: 0.0031,
        singer: SingerParams { alpha: 10.2, sigma2: 1.01 },
        input_report: Some(TrainReport {
            params: 0.0031,
            objective: -3.0,
            iterations: 50,
            grad_norm: 0.0,
            converged: true,
            trace: vec![],
        }),
        singer_report: None,
    };
    assert_eq!(LearnedParams::parse(params.to_json().as_bytes()).unwrap(), params);
}

#[test]
fn parse_errors_name_the_line() {
    let bad = "traj_id,t,p,v,a\n0,0.0,1,2,3\n0,0.1,x,2,3\n";
    let msg = data_error_line(read_truth(bad.as_bytes()).unwrap_err());
    assert!(msg.contains("line 3") && msg.contains("'p'"), "{msg}");

    let bad = "traj_id,t,channel,y\n0,0.0,pos,1\n0,0.0,gyro,1\n";
    let msg = data_error_line(read_measurements(bad.as_bytes(), 1.0, 1.0).unwrap_err());
    assert!(msg.contains("line 3") && msg.contains("gyro"), "{msg}");

    let bad = "traj_id,t,p,v,a\n0,0.1,1,2,3\n0,0.1,1,2,3\n";
    assert!(data_error_line(read_truth(bad.as_bytes()).unwrap_err()).contains("line 3"));

    let bad = "traj_id,t,p,v,a\n0,0.0,1,2\n";
    assert!(matches!(read_truth(bad.as_bytes()), Err(Error::Data(_))));

    let bad = "traj_id,time,p,v,a\n";
    assert!(data_error_line(read_truth(bad.as_bytes()).unwrap_err()).contains("header"));

    let bad = "traj_id,t,p,v,a\n0,0.0,inf,2,3\n";
    assert!(data_error_line(read_truth(bad.as_bytes()).unwrap_err()).contains("not finite"));
}

#[test]
fn join_requires_matching_ids() {
    let trajs = dataset(2);
    let (mut truth, mut meas) = (Vec::new(), Vec::new());
    write_truth(&mut truth, &trajs[..1]).unwrap();
    write_measurements(&mut meas, &trajs).unwrap();
    let r = join_dataset(read_truth(truth.as_slice()).unwrap(), read_measurements(meas.as_slice(), 1.0, 1.0).unwrap());
    assert!(data_error_line(r.unwrap_err()).contains("trajectory 1"));
}

#[test]
fn params_are_validated() {
    let bad = br#"{"q_input": -1.0, "singer": {"alpha": 1.0, "sigma2": 1.0}}"#;
    assert!(matches!(LearnedParams::parse(bad), Err(Error::Data(_))));
    let bad = br#"{"q_input": 1.0, "singer": {"alpha": 1.0, "sigma2": 1.0}, "extra": 0}"#;
    assert!(matches!(LearnedParams::parse(bad), Err(Error::Data(_))));
}

#[test]
fn config_errors_report_position() {
    let mut json = ExperimentConfig::preset("wnoj").unwrap().to_json();
    json = json.replace("\"duration\": 1.0", "\"duration\": \"long\"");
    match ExperimentConfig::parse(&json) {
        Err(Error::Config(msg)) => assert!(msg.contains("line") && msg.contains("column"), "{msg}"),
        other => panic!("{other:?}"),
    }
    let mut cfg = ExperimentConfig::preset("singer").unwrap();
    cfg.sim.acc_rate = 15.0;
    assert!(matches!(ExperimentConfig::parse(&cfg.to_json()), Err(Error::Config(_))));
    assert!(ExperimentConfig::preset("wnoa").is_err());
}
