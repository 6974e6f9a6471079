use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_modehop");

fn modehop(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn modehop")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn small_gmm(out: &Path) -> String {
    format!(
        "target = gmm-d4-k3-equal\nname = small\nsamples = 600\nwarmup = 50\nchains = 2\nworkers = 1\n\
         record_every = 50\noutput = {}\n[hmc]\ntune = false\n",
        out.display()
    )
}

fn check_status(o: &Output) {
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(!o.status.success(), stderr.contains("error:"), "{stderr}");
}

fn check_csv(path: &Path, header: &str) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(header), "{}", path.display());
    let cols = header.split(',').count();
    for l in lines {
        assert_eq!(l.split(',').count(), cols, "{}: {l}", path.display());
    }
}

#[test]
fn same_seed_gives_identical_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    for out in [&a, &b] {
        let cfg = write_config(dir.path(), "run.cfg", &small_gmm(out));
        let o = modehop(&["run", &cfg, "--seed", "7"]);
        check_status(&o);
        assert!(o.status.success());
    }
    let da = fs::read(a.join("small_7_diagnostics.csv")).unwrap();
    let db = fs::read(b.join("small_7_diagnostics.csv")).unwrap();
    assert_eq!(da, db);
    let ra = fs::read(a.join("small_7_regeneration.csv")).unwrap();
    let rb = fs::read(b.join("small_7_regeneration.csv")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn csv_outputs_have_documented_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", &small_gmm(dir.path()));
    let o = modehop(&["run", &cfg]);
    check_status(&o);
    assert!(o.status.success());
    check_csv(&dir.path().join("small_1_diagnostics.csv"), "t_seconds,rem,recov,rem_window1000,n_bfgs,modes_found");
    check_csv(&dir.path().join("small_1_regeneration.csv"), "chain,step,r,triggered,registry_before,registry_after");
    check_csv(&dir.path().join("small_1_audit.csv"), "k,delta_x,cumulative");
    let summary = fs::read_to_string(dir.path().join("small_1_summary.txt")).unwrap();
    assert!(summary.contains("final_rem"));

    let audit = modehop(&["audit", dir.path().join("small_1_registry.txt").to_str().unwrap()]);
    check_status(&audit);
    assert!(audit.status.success());
    assert!(String::from_utf8_lossy(&audit.stdout).starts_with("k,delta_x,cumulative"));
}

#[test]
fn small_sensor_run_finishes() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "target = sensor-ns3\nschedule = forced-update\nchains = 2\nsamples = 300\nwarmup = 50\nworkers = 1\n\
         reference_samples = 4000\noutput = {}\n[hmc]\nstep_size = 0.014\nsteps = 10\ntune = false\n\
         [wormhole]\nF = 0.01\n[modefinder]\nmodel = gaussian\n",
        dir.path().display()
    );
    let cfg = write_config(dir.path(), "sensor.cfg", &body);
    let o = modehop(&["run", &cfg]);
    check_status(&o);
    assert!(o.status.success());
    check_csv(&dir.path().join("sensor-ns3_1_diagnostics.csv"), "t_seconds,rem,recov,rem_window1000,n_bfgs,modes_found");
    assert!(dir.path().join("sensor-ns3_1_reference.txt").exists());
}

#[test]
fn failures_exit_nonzero_with_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.cfg", "target = gmm-d4-k3-equal\nbogus_key = 1\n");
    let o = modehop(&["run", &bad]);
    check_status(&o);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));

    let missing = write_config(dir.path(), "missing.cfg", "samples = 10\n");
    let o = modehop(&["run", &missing]);
    check_status(&o);
    assert!(!o.status.success());

    let o = modehop(&["run", "no-such-preset"]);
    check_status(&o);
    assert!(!o.status.success());
}

#[test]
fn listing_commands_succeed() {
    let o = modehop(&["presets"]);
    check_status(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("gmm-d10-k5-equal") && text.contains("sensor-ns3"));

    let o = modehop(&["explain-defaults"]);
    check_status(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    for key in ["target", "seed", "hmc.step_size", "wormhole.F", "regeneration.c_window"] {
        assert!(text.contains(key), "{key} missing");
    }
}
