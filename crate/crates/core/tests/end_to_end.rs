use std::fs::File;
use std::io::BufWriter;

use tickvol::exec::ExecPolicy;
use tickvol::ingest::{clean, despread_timestamps, match_quotes, CleanConfig, RawRecord};
use tickvol::io::{read_ticks, read_truth, write_ticks, write_truth};
use tickvol::model::NoiseModel;
use tickvol::pipeline::{run_all, EstimatorKind, PipelineConfig};
use tickvol::sages::{load_kappa, write_kappa_sidecar};
use tickvol::seq_em::StepPolicy;
use tickvol::simulator::{apply_noise, gen_path, PathSpec, SimNoise};

#[test]
fn simulated_file_round_trip_gives_identical_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen_path(
        &PathSpec {
            t_len: 600,
            ..PathSpec::default()
        },
        3,
    )
    .unwrap();
    let ticks = apply_noise(
        &path.times,
        &path.x,
        SimNoise::Deterministic { tick: 0.01 },
        3,
    )
    .unwrap();
    let tick_file = dir.path().join("ticks.csv");
    let truth_file = dir.path().join("truth.csv");
    write_ticks(BufWriter::new(File::create(&tick_file).unwrap()), &ticks).unwrap();
    write_truth(
        BufWriter::new(File::create(&truth_file).unwrap()),
        &path.times,
        &path.x,
    )
    .unwrap();
    let back = read_ticks(File::open(&tick_file).unwrap()).unwrap();
    assert_eq!(back, ticks);
    assert_eq!(
        read_truth(File::open(&truth_file).unwrap()).unwrap(),
        (path.times.clone(), path.x.clone())
    );

    let mut cfg = PipelineConfig::univariate(
        NoiseModel::SimpleDeterministic { tick: 0.01 },
        EstimatorKind::Single(StepPolicy::Fixed { lambda: 0.02 }),
        1e-8,
    );
    cfg.filter.n_particles = 200;
    cfg.filter.seed = 9;
    cfg.filter.exec = ExecPolicy::Sequential;
    let a = run_all(cfg.clone(), &ticks).unwrap();
    cfg.filter.exec = ExecPolicy::Parallel;
    let b = run_all(cfg, &back).unwrap();
    assert_eq!(a.len(), 599);
    assert_eq!(a, b);
    let last = a.last().unwrap().sigma_hat[(0, 0)];
    assert!(last > 2e-9 && last < 5e-8, "{last}");
}

#[test]
fn kappa_sidecar_round_trip_and_hash_check() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("kappa.txt");
    let kappa = vec![0.25, 1.0 / 3.0, 7.5e-3];
    write_kappa_sidecar(File::create(&p).unwrap(), "00ff00ff00ff00ff", &kappa).unwrap();
    assert_eq!(load_kappa(&p, Some("00ff00ff00ff00ff")).unwrap(), kappa);
    assert!(load_kappa(&p, Some("0123456789abcdef")).is_err());
}

#[test]
fn raw_records_to_quoted_ticks() {
    let mut trades = vec![
        RawRecord::trade(34_199.0, 50.01, "N"),
        RawRecord::trade(34_210.0, 50.03, "N"),
        RawRecord::trade(34_210.0, 50.01, "N"),
        RawRecord::trade(34_212.0, 50.03, "P"),
        RawRecord::trade(34_215.0, 50.01, "N"),
    ];
    trades[4].sale_condition = "Z".into();
    let quotes = vec![RawRecord::quote(34_205.0, 50.01, 50.03, "N")];
    let cfg = CleanConfig::default();
    let (kept, audit) = clean(&trades, &cfg);
    assert_eq!(
        (audit.session, audit.exchange, audit.condition, audit.kept),
        (1, 1, 1, 2)
    );
    let (matched, m) = match_quotes(&kept, &clean(&quotes, &cfg).0, 0.0).unwrap();
    assert_eq!(m.unmatched_fraction(), 0.0);
    let times: Vec<f64> = matched.iter().map(|t| t.obs.time).collect();
    let spread = despread_timestamps(&times).unwrap();
    assert!(spread[1] > spread[0]);
    let mut noise = NoiseModel::MarketMakerQuotes;
    for t in &matched {
        let b = noise.support(&t.obs).unwrap();
        let iv = b.interval(0);
        assert!((iv.upper - iv.lower - 0.02).abs() < 1e-9);
        assert!(iv.lower < t.obs.price && t.obs.price < iv.upper);
    }
}
