use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dynunc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynunc"))
        .args(args)
        .current_dir(dir)
        .env_remove("DYNUNC_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_documents_every_pipeline_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = dynunc(dir.path(), &["pipeline", "--help"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    for kind in ["shock", "compensate", "hydrophone", "ibp", "demo_ringing"] {
        assert!(text.contains(&format!("kind = \"{kind}\"")), "{kind} missing from help");
    }
    assert!(text.contains("DYNUNC_SEED"));
}

#[test]
fn verbs_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&dynunc(
        d,
        &[
            "simulate", "shock", "--fs", "100000", "--duration", "0.00512", "--t0", "1e-3", "--width", "25e-6",
            "--sensor", "1,0.02,8000", "--noise", "1e-4", "--seed", "3", "-o", "y.csv",
        ],
    ));
    ok(&dynunc(d, &["dft", "y.csv", "-o", "Y.csv"]));
    ok(&dynunc(
        d,
        &["deconv", "y.csv", "--sensor", "1,0.02,8000", "--sensor-unc", "0.01,0.001,50", "--lowpass", "64,20000", "-o", "x.csv"],
    ));
    ok(&dynunc(
        d,
        &[
            "design-fir", "--sensor", "1,0.02,8000", "--fs", "100000", "--f-max", "30000", "--order", "64", "--delay", "32",
            "--lowpass", "64,20000", "-o", "fir.json",
        ],
    ));
    ok(&dynunc(
        d,
        &["design-iir", "--sensor", "1,0.02,8000", "--fs", "100000", "--f-max", "30000", "--nb", "4", "--na", "2", "--delay", "2", "-o", "iir.json"],
    ));
    ok(&dynunc(d, &["filter", "y.csv", "--filter", "fir.json", "-o", "xf.csv"]));
    ok(&dynunc(d, &["filter", "y.csv", "--filter", "iir.json", "-o", "xi.csv"]));
    ok(&dynunc(d, &["filter", "y.csv", "--filter", "fir.json", "--smc", "100", "--seed", "1", "-o", "xs.csv"]));

    assert!(fs::read_to_string(d.join("Y.csv")).unwrap().starts_with("f,re,im,unc_re,unc_im\n"));
    for f in ["x.csv", "xf.csv", "xi.csv", "xs.csv"] {
        let text = fs::read_to_string(d.join(f)).unwrap();
        assert!(text.starts_with("t,value,unc\n"));
        assert_eq!(text.lines().count(), 513, "{f}");
    }
}

#[test]
fn fit_sos_prints_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("f,re,im\n");
    for i in 1..40 {
        let r = i as f64 * 500.0 / 8000.0;
        let d = (1.0 - r * r, 2.0 * 0.05 * r);
        let m = d.0 * d.0 + d.1 * d.1;
        csv.push_str(&format!("{},{},{}\n", i as f64 * 500.0, 2.0 * d.0 / m, -2.0 * d.1 / m));
    }
    fs::write(dir.path().join("h.csv"), csv).unwrap();
    let out = dynunc(dir.path(), &["fit-sos", "h.csv"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let f0 = text.lines().find_map(|l| l.strip_prefix("f0 = ")).unwrap();
    let f0: f64 = f0.split(" +/- ").next().unwrap().parse().unwrap();
    assert!((f0 - 8000.0).abs() < 1e-6 * 8000.0, "{text}");
}

#[test]
fn config_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "kind = \"demo_ringing\"\n[design]\norderr = 3\n").unwrap();
    let out = dynunc(dir.path(), &["pipeline", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("orderr"));

    let out = dynunc(dir.path(), &["dft", "missing.csv", "-o", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numerical_failures_exit_with_2_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dynunc(
        dir.path(),
        &["design-iir", "--sensor", "1,0.02,8000", "--fs", "100000", "--points", "3", "--nb", "0", "--na", "40", "--delay", "0", "-o", "x.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage design"));
}

#[test]
fn pipeline_output_follows_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("demo.toml"), "kind = \"demo_ringing\"\noutput_dir = \"a\"\n").unwrap();
    ok(&dynunc(d, &["pipeline", "demo.toml"]));
    ok(&dynunc(d, &["pipeline", "demo.toml", "-o", "b"]));
    let env_run = Command::new(env!("CARGO_BIN_EXE_dynunc"))
        .args(["pipeline", "demo.toml", "-o", "c"])
        .current_dir(d)
        .env("DYNUNC_SEED", "7")
        .output()
        .unwrap();
    ok(&env_run);

    let read = |sub: &str| fs::read(d.join(sub).join("estimate.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    for f in ["estimate.csv", "spectrum.csv", "filter.json", "report.txt"] {
        assert!(d.join("a").join(f).is_file(), "{f}");
    }
}
