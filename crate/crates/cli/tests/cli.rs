use std::fs;
use std::path::Path;

use glbulk::main_with;
use glbulk::store::{ManifestEntry, MANIFEST};

fn run(dir: &Path, args: &[&str]) -> i32 {
    let store = dir.join("store");
    let mut argv = vec!["glbulk".to_string()];
    argv.extend(args.iter().map(|a| a.to_string()));
    argv.extend(["--store".to_string(), store.display().to_string()]);
    main_with(argv)
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

fn manifest(dir: &Path) -> Vec<ManifestEntry> {
    fs::read_to_string(dir.join("store").join(MANIFEST))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn help_and_bad_usage() {
    assert_eq!(main_with(["glbulk", "--help"]), 0);
    assert_eq!(main_with(["glbulk", "nonsense"]), 2);
    assert_eq!(main_with(["glbulk", "cell", "--b", "abc"]), 2);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[cell]\nb = 0.5\nr = 6\ncolour = 1\n").unwrap();
    assert_eq!(run(d, &["cell", "--config", &p(d, "bad.toml")]), 2);
    assert_eq!(run(d, &["cell", "--b", "-0.5", "--r", "6"]), 2);
    assert_eq!(run(d, &["cell", "--b", "0.5"]), 2);
    assert_eq!(run(d, &["cell", "--b", "0.5", "--r", "6", "--n", "5"]), 2);
    fs::write(d.join("other.toml"), "command = \"radial\"\n").unwrap();
    assert_eq!(run(d, &["cell", "--b", "0.5", "--r", "6", "--config", &p(d, "other.toml")]), 2);
    assert_eq!(run(d, &["gcurve", "--b-grid", "0.9:0.1:3"]), 2);
    assert_eq!(run(d, &["verify", "--state", &p(d, "missing.json"), "--gcurve", &p(d, "missing.csv")]), 2);
    assert_eq!(run(d, &["plot", "--kind", "g_curve"]), 2);
}

#[test]
fn solver_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.toml"), "[solver]\nmax_iters = 2\n").unwrap();
    assert_eq!(run(d, &["cell", "--b", "0.5", "--r", "6", "--config", &p(d, "c.toml")]), 3);
    let m = manifest(d);
    assert_eq!(m.len(), 1);
    assert!(m[0].artifacts.is_empty());
}

#[test]
fn cell_csv_cache_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.toml"), "seed = 2\n[cell]\nb = 0.3\nr = 6\nbc = \"neumann\"\n").unwrap();
    let cfg = p(d, "c.toml");
    assert_eq!(run(d, &["cell", "--config", &cfg, "--b", "0.4", "--out", &p(d, "a.csv")]), 0);
    assert_eq!(run(d, &["cell", "--config", &cfg, "--b", "0.4", "--out", &p(d, "b.csv")]), 0);
    let a = fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(d.join("b.csv")).unwrap());
    assert!(a.starts_with("# config: {"));
    assert!(a.contains("\"seed\":2"));
    let rows = data_lines(&a);
    assert_eq!(rows[0], "b,r,bc,n,energy,per_area,iters,grad_norm");
    let f: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(&f[..4], &["0.4", "6", "neumann", "25"]);
    assert!(f[5].parse::<f64>().unwrap() < 0.0);
    let m = manifest(d);
    assert_eq!(m.len(), 2);
    assert!(!m[0].cache_hit && m[1].cache_hit);
    assert_eq!(m[0].hash, m[1].hash);
}

#[test]
fn gcurve_over_the_unit_interval_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Exit status follows the asserted property checks; the CSV is written either way.
    let code = run(d, &["gcurve", "--b-grid", "0.1:0.9:9", "--out", &p(d, "g.csv")]);
    assert!(code == 0 || code == 1);
    let text = fs::read_to_string(d.join("g.csv")).unwrap();
    let rows = data_lines(&text);
    assert_eq!(rows[0], "b,g,lo,hi,d_minus,d_plus,regular,residual");
    assert_eq!(rows.len(), 10);
    let g: Vec<f64> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(g.windows(2).all(|w| w[1] >= w[0] - 1e-3), "{g:?}");
    let props: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(glob_one(&d.join("store"), "properties.json")).unwrap()).unwrap();
    let failures = props["failures"].as_u64().unwrap();
    assert_eq!(code == 0, failures == 0);
}

fn glob_one(store: &Path, name: &str) -> std::path::PathBuf {
    fs::read_dir(store).unwrap().filter_map(|e| e.ok()).map(|e| e.path().join(name)).find(|p| p.is_file()).unwrap()
}

#[test]
fn solve_verify_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // A single sample has no pairwise checks to assert.
    assert_eq!(run(d, &["gcurve", "--b-grid", "0.5:0.5:1", "--assert", "monotone,concave", "--out", &p(d, "g.csv")]), 0);
    let dump = d.join("fields");
    assert_eq!(
        run(
            d,
            &["solve", "--kappa", "10", "--b", "0.5", "--mode", "frozen", "--dump-fields", &dump.display().to_string(), "--out", &p(d, "s.json")]
        ),
        0
    );
    let psi = fs::read_to_string(dump.join("psi.csv")).unwrap();
    assert!(psi.starts_with("x1,x2,re,im\n"));
    let first: Vec<&str> = psi.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first.len(), 4);
    assert!(first[2].contains('e') && first[2].trim_start_matches('-').len() >= 21);
    assert!(fs::read_to_string(dump.join("a.csv")).unwrap().starts_with("x1,x2,v1,v2\n"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("s.json")).unwrap()).unwrap();
    for key in ["energy", "residuals", "apriori", "observables", "diagnostics", "config"] {
        assert!(report.get(key).is_some(), "{key}");
    }
    assert!(report["observables"]["interior"]["mean_sq"].as_f64().unwrap() > 0.0);

    let solve_dir = glob_one(&d.join("store"), "state.json").parent().unwrap().to_path_buf();
    let code = run(
        d,
        &["verify", "--state", &solve_dir.display().to_string(), "--gcurve", &p(d, "g.csv"), "--out", &p(d, "v.json")],
    );
    assert!(code == 0 || code == 1);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("v.json")).unwrap()).unwrap();
    let rows = v["theorem"]["rows"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["name"].as_str().unwrap()).collect();
    for n in ["quartic", "kinetic", "density", "current_l2", "current_l1", "density_vs_quartic", "depletion"] {
        assert!(names.contains(&n), "{n}");
    }
    for r in rows {
        for key in ["value", "slack", "pass", "lower", "upper"] {
            assert!(r.get(key).is_some());
        }
    }
    assert_eq!(code == 0, v["failures"].as_u64().unwrap() == 0);
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["pass"].as_bool().unwrap()));

    let windows = run(
        d,
        &["verify", "--state", &solve_dir.display().to_string(), "--gcurve", &p(d, "g.csv"), "--windows", "0.5,0.5,0.3;0.4,0.4,0.2"],
    );
    assert!(windows == 0 || windows == 1);
    assert_eq!(
        run(d, &["verify", "--state", &solve_dir.display().to_string(), "--gcurve", &p(d, "g.csv"), "--windows", "0.02,0.5,0.3"]),
        2
    );

    assert_eq!(run(d, &["radial", "--b", "0.5", "--scan-m", "0:2", "--R-ladder", "6,10"]), 0);
    for (kind, header) in [
        ("g_curve", "b,g,lo,hi,d_minus,d_plus"),
        ("gm_scan", "m,g_m"),
        ("density_profile", "x1,x2,density"),
        ("slack_vs_kappa", "kappa,item,slack"),
    ] {
        let out = d.join(format!("{kind}.csv"));
        assert_eq!(run(d, &["plot", "--kind", kind, "--out", &out.display().to_string()]), 0, "{kind}");
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.starts_with(&format!("# kind: {kind}\n")));
        let rows = data_lines(&text);
        assert_eq!(rows[0], header);
        assert!(rows.len() > 1, "{kind}");
    }
    let gm = fs::read_to_string(d.join("gm_scan.csv")).unwrap();
    assert_eq!(data_lines(&gm).len(), 4);
}

#[test]
fn sweep_reruns_are_cache_hits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("s.toml"),
        "[cell]\nr = 6\n[sweep]\ncommand = \"cell\"\nparameter = \"b\"\nvalues = [0.3, 0.6, 0.9]\n",
    )
    .unwrap();
    let cfg = p(d, "s.toml");
    assert_eq!(run(d, &["sweep", "--config", &cfg, "--out", &p(d, "one.csv")]), 0);
    let before = manifest(d).len();
    assert_eq!(before, 4);
    assert_eq!(run(d, &["sweep", "--config", &cfg, "--out", &p(d, "two.csv")]), 0);
    let one = fs::read(d.join("one.csv")).unwrap();
    assert_eq!(one, fs::read(d.join("two.csv")).unwrap());
    let after = manifest(d);
    assert_eq!(after.len(), before + 1);
    assert!(after.last().unwrap().cache_hit);
    let text = String::from_utf8(one).unwrap();
    let rows = data_lines(&text);
    assert_eq!(rows[0], "value,run,status,verify_run,verify_status");
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r.contains(",ok,")));

    // The flag form of the same sweep resolves to the same run.
    assert_eq!(
        run(d, &["sweep", "--config", &p(d, "s.toml"), "--over", "cell", "--parameter", "b", "--values", "0.3,0.6,0.9"]),
        0
    );
    assert!(manifest(d).last().unwrap().cache_hit);
    assert_eq!(run(d, &["sweep", "--config", &cfg, "--parameter", "bogus"]), 2);
}
