use pomdp_ope::harness::*;
use pomdp_ope::linear::Ridge;
use pomdp_ope::rng::derive_stream;
use rand::Rng;

fn small_sweep() -> SweepConfig {
    SweepConfig {
        sigma_o_list: vec![1.0, 0.0],
        w_list: vec![1.0, -2.0],
        n_list: vec![500, 1000],
        replications: 2,
        master_seed: 13,
        rff: RffConfig { gamma_k: 5.0, dim: 20, seeds: 2 },
        traj_len: 100,
        truth_rollouts: 2000,
        ridge: Ridge::TraceScaled(1e-8),
    }
}

#[test]
fn relative_mse_matches_plain_loop() {
    let mut rng = derive_stream(2, "ests", &[]);
    let ests: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..8.0)).collect();
    let truth = 4.2;
    let mut acc = 0.0;
    for e in &ests {
        acc += ((e - truth) / truth) * ((e - truth) / truth);
    }
    let want = acc / 10.0;
    assert!((relative_mse(&ests, truth).unwrap() - want).abs() <= 1e-15 * want);
    let bias = (ests.iter().map(|e| e / truth).sum::<f64>() / 10.0 - 1.0).abs();
    assert!((relative_bias(&ests, truth).unwrap() - bias).abs() <= 1e-15);
}

#[test]
fn ci_is_two_standard_errors_of_the_ratio() {
    let ci = ci_halfwidth(&[4.0, 6.0], 5.0).unwrap();
    // ratios 0.8, 1.2: sd = 0.2828…, se = 0.2
    assert!((ci - 0.4).abs() < 1e-15);
    assert!(ci_halfwidth(&[4.0], 5.0).unwrap().is_nan());
    assert!(relative_bias(&[], 5.0).is_err());
}

#[test]
fn toy_table_shows_the_confounding_pattern() {
    let rows = run_toy_table(&ToyConfig::default()).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!((r.truth - 10.0).abs() < 1e-9);
        let p = (r.proposed / r.truth - 1.0).abs();
        let q = (r.naive / r.truth - 1.0).abs();
        assert!(p <= 0.02, "eps {}: proposed {}", r.epsilon, r.proposed);
        if r.epsilon == 0.5 {
            assert!(q <= 0.02, "naive {}", r.naive);
        } else {
            assert!(q > 0.10, "eps {}: naive {}", r.epsilon, r.naive);
        }
    }
}

#[test]
fn sweep_config_echo_and_validation() {
    let cfg: SweepConfig = serde_json::from_str(
        r#"{"sigma_o_list":[1.0],"w_list":[-3,-2,1,2],"n_list":[200000],"replications":10,"master_seed":0,"rff":{"gamma_k":5,"D":100,"seeds":5}}"#,
    )
    .unwrap();
    assert_eq!(cfg.gamma(), 0.95);
    assert_eq!(cfg.rff, RffConfig::default());
    assert_eq!(cfg.traj_len, 100);
    assert_eq!(cfg.n_list[0] / cfg.traj_len, 2000);
    assert_eq!(cfg.truth_rollouts, 1_000_000);
    assert!(cfg.validate().is_ok());

    let unknown = r#"{"sigma_o_list":[1.0],"w_list":[1],"n_list":[100],"replications":1,"master_seed":0,"gamma":0.9}"#;
    assert!(serde_json::from_str::<SweepConfig>(unknown).is_err());
    let bad_n = SweepConfig { n_list: vec![150], ..small_sweep() };
    assert!(bad_n.validate().is_err());
}

#[test]
fn sweep_cells_reproduce_bitwise_and_summary_roundtrips() {
    let cfg = small_sweep();
    let out = run_1d_sweep(&cfg).unwrap();
    assert_eq!(out.raw.len(), 2 * 2 * 2 * 2 * 2);
    assert!(out.raw.iter().all(|r| r.flag.is_empty() && r.estimate.is_finite()));

    let truths = sweep_truths(&cfg).unwrap();
    let cell = run_1d_cell(&cfg, 1, 1, 1, &truths[1]).unwrap();
    let in_sweep: Vec<&RawRow> = out.raw.iter().filter(|r| r.sigma_o == 0.0 && r.n == 1000 && r.replication == 1).collect();
    assert_eq!(cell.len(), in_sweep.len());
    for (a, b) in cell.iter().zip(in_sweep) {
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a, b);
    }

    let mut buf = Vec::new();
    write_csv(&mut buf, &out.raw).unwrap();
    let back = read_raw_rows(buf.as_slice()).unwrap();
    assert_eq!(back, out.raw);
    assert_eq!(summarize(&back).unwrap(), out.summary);
    assert_eq!(out.summary.len(), 2 * 2 * 2 * 2);
}

#[test]
fn flagged_rows_count_as_failures() {
    let row = |rep, estimate: f64, flag: &str| RawRow {
        env: "dyn1d".into(),
        sigma_o: 1.0,
        w: 2.0,
        n: 100,
        replication: rep,
        method: "vm_linear".into(),
        estimate,
        truth: 5.0,
        flag: flag.into(),
    };
    let s = summarize(&[row(0, 6.0, ""), row(1, f64::NAN, "numerical failure"), row(2, 4.0, "")]).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!((s[0].replications, s[0].failures), (3, 1));
    assert!((s[0].rel_mse - 0.04).abs() < 1e-15);
}
