use super::*;

fn cfg(text: &str, dir: &Path) -> ExperimentConfig {
    let mut c = parse_config(text).unwrap();
    c.output_dir = dir.to_path_buf();
    c
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn constants_run_writes_schema_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("experiment=constants\nbeta=0.25\nmc.n_outer=2000\nmc.n_grid=64", dir.path());
    let m = run(&c).unwrap();
    let csv = read(dir.path(), "constants.csv");
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "beta,gamma_hat,gamma_se,Sigma2_hat,Sigma2_se,sigma2_hat,sigma2_se,gamma_exact,sigma2_series,Sigma2_series"
    );
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 0.25);
    assert!((row[7] - crate::constants::gamma_exact(0.25)).abs() < 1e-15);
    assert!(lines.next().is_none());

    let back = read_manifest(dir.path()).unwrap();
    assert_eq!(back.files, vec!["constants.csv", MANIFEST_FILE]);
    assert_eq!(back.passed, m.passed);
    assert_eq!(back.estimates.len(), 3);
    assert_eq!(back.streams[0].rows, (0, 0));
    assert_eq!(back.salts["SIGMA2"], crate::rng::salt::SIGMA2);
    assert!(back.acceptance.contains_key("gamma_closed_form[beta=0.25]"));
    assert!(back.acceptance.contains_key("sigma2_series[beta=0.25]"));
    assert_eq!(parse_config(&back.config_text).unwrap().beta, vec![0.25]);
}

#[test]
fn worker_count_does_not_change_output() {
    let text = "experiment=simulate\nbeta=1\nlattice.n_sites=16\nlattice.t_steps=32\nlattice.n_disorder=24\nmc.n_outer=500\nmc.n_grid=32";
    let mut tables = Vec::new();
    for workers in [1, 5] {
        let mut c = parse_config(text).unwrap();
        c.workers = workers;
        tables.push(compute(&c).unwrap().tables);
    }
    assert_eq!(tables[0], tables[1]);
    assert_eq!(tables[0][1].rows.len(), 24);
}

#[test]
fn missing_experiment_is_a_config_error() {
    match compute(&parse_config("").unwrap()) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "experiment"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn brunet_reports_a_verdict_only() {
    let c = parse_config("experiment=brunet\nbeta=1\nbrunet.h=0.1\nmc.n_outer=2000\nmc.n_grid=64").unwrap();
    let o = compute(&c).unwrap();
    assert!(o.acceptance.is_empty());
    let v = &o.verdicts["brunet[beta=1]"];
    assert!(v == "SUPPORTS" || v == "CONTRADICTS");
    assert!(o.passed());
}

#[test]
fn mixing_at_beta_zero_hits_the_gap() {
    let c = parse_config("experiment=mixing\nbeta=0\nlattice.n_sites=32\nlattice.n_disorder=2").unwrap();
    let o = compute(&c).unwrap();
    assert!(o.acceptance["mixing[beta=0]"], "{:?}", o.tables[0].rows);
}

#[test]
fn diagnostics_run_per_seed() {
    let c = parse_config(
        "experiment=reversal\nbeta=1\nlattice.n_sites=16\nlattice.dt=0.0625\nlattice.t_steps=8\n\
         lattice.n_disorder=40\ndiag.n_seeds=3\ndiag.n_permutations=99\ndiag.probes=0.5",
    )
    .unwrap();
    let o = compute(&c).unwrap();
    // A stationary and a flat-start row per seed.
    assert_eq!(o.tables[0].rows.len(), 6);
    assert_eq!(o.streams.len(), 6);
    assert!(o.acceptance.contains_key("reversal_control[beta=1]"));
}

#[test]
fn f32_runs() {
    let c = parse_config("experiment=constants\nprecision=f32\nbeta=0.5\nmc.n_outer=1000\nmc.n_grid=64").unwrap();
    let o = compute(&c).unwrap();
    assert_eq!(o.tables[0].rows.len(), 1);
}

#[test]
fn runtime_error_leaves_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // The normality test needs at least 200 samples.
    let mut c = cfg("experiment=clt\nbeta=1\nlattice.n_sites=16\nlattice.t_steps=4\nlattice.n_disorder=10\nmc.n_outer=100\nmc.n_grid=32", &out);
    c.diag.n_seeds = 1;
    assert!(run(&c).is_err());
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().count() == 0);
}
