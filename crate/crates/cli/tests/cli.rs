use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mamforge_core::oracle::PairOracle;
use mamforge_core::structure::{self, Structure};
use mamforge_core::xyz;
use tempfile::TempDir;

fn mamforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mamforge"))
        .args(args)
        .current_dir(dir)
        .env("MAMFORGE_THREADS", "1")
        .output()
        .expect("run mamforge")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn dimer(r: f64) -> String {
    xyz::write_structure(&Structure::cluster(vec![[0.0; 3], [r, 0.0, 0.0]], vec![18, 18]).unwrap())
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn version_prints_semver() {
    let d = TempDir::new().unwrap();
    let o = mamforge(d.path(), &["--version"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), format!("mamforge {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn voltage_row() {
    let d = TempDir::new().unwrap();
    let o = mamforge(d.path(), &["analyze", "voltage", "--def", "-3.0", "--n", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows[0], ["def_ev", "n", "v_volt"]);
    assert_eq!(rows[1][2].parse::<f64>().unwrap(), 1.5);
}

#[test]
fn usage_errors_exit_64() {
    let d = TempDir::new().unwrap();
    for args in [
        &["--frobnicate"][..],
        &["melt"],
        &["analyze", "voltage", "--def", "1", "--volts", "2"],
        &["analyze", "voltage", "--def", "1"],
        &["analyze", "teleport"],
    ] {
        let o = mamforge(d.path(), args);
        assert_eq!(o.status.code(), Some(64), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains("error"), "{args:?}");
    }
}

#[test]
fn error_categories_on_stderr() {
    let d = TempDir::new().unwrap();
    let o = mamforge(
        d.path(),
        &["analyze", "voltage", "--def", "1", "--n", "2", "--set", "nope=1"],
    );
    assert_eq!(o.status.code(), Some(65));
    assert!(stderr(&o).contains("error[config]"));

    let o = mamforge(d.path(), &["analyze", "kinetics", "--lambda", "0", "--d", "1"]);
    assert_eq!(o.status.code(), Some(66));
    assert!(stderr(&o).contains("error[data]"));

    let o = mamforge(
        d.path(),
        &[
            "predict",
            "--structure",
            "missing.xyz",
            "--model",
            "oracle:lj",
            "--out",
            "p.xyz",
        ],
    );
    assert_eq!(o.status.code(), Some(66));

    let o = Command::new(env!("CARGO_BIN_EXE_mamforge"))
        .args(["analyze", "voltage", "--def", "1", "--n", "2"])
        .env("MAMFORGE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(65));
}

#[test]
fn batch_matches_single_rows() {
    let d = TempDir::new().unwrap();
    write(d.path(), "w.csv", "e1,e2,e12,area\n-10,-5,-16,10\n-10,-5,-15,10\n");
    let o = mamforge(d.path(), &["analyze", "wsep", "--batch", "w.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][5], "w_sep_j_per_m2");
    assert!((rows[1][5].parse::<f64>().unwrap() - 1.6021766).abs() < 1e-12);
    assert_eq!(rows[2][4].parse::<f64>().unwrap(), 0.0);
    let single = mamforge(
        d.path(),
        &[
            "analyze", "wsep", "--e1", "-10", "--e2", "-5", "--e12", "-16", "--area", "10",
        ],
    );
    assert_eq!(csv_rows(&stdout(&single))[1], rows[1]);

    write(d.path(), "bad.csv", "e1,e2,volts\n1,2,3\n");
    let o = mamforge(d.path(), &["analyze", "wsep", "--batch", "bad.csv"]);
    assert_eq!(o.status.code(), Some(65));
}

#[test]
fn predict_dimer_at_oracle_minimum() {
    let d = TempDir::new().unwrap();
    let r_min = PairOracle::default().r_min();
    write(d.path(), "dimer.xyz", &dimer(r_min));
    let o = mamforge(
        d.path(),
        &[
            "predict",
            "--structure",
            "dimer.xyz",
            "--model",
            "oracle:lj",
            "--out",
            "p.xyz",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let frames = xyz::read_frames(&d.path().join("p.xyz")).unwrap();
    let f = frames[0].forces.as_ref().unwrap();
    assert!(f.iter().flatten().all(|x| x.abs() < 1e-9), "{f:?}");
    let rows = csv_rows(&std::fs::read_to_string(d.path().join("p.xyz.csv")).unwrap());
    assert_eq!(rows[0][2], "energy_ev");
    let e: f64 = rows[1][2].parse().unwrap();
    assert!((e + PairOracle::default().epsilon).abs() < 0.01);
}

#[test]
fn predict_round_trip_and_symmetric_stress() {
    let d = TempDir::new().unwrap();
    let oracle = PairOracle::default();
    let mut s = oracle.zero_pressure_fcc(4, 18).unwrap();
    s.positions[5][0] += 0.1;
    s = structure::apply_strain(&s, &[[0.01, 0.003, 0.0], [0.003, -0.005, 0.0], [0.0, 0.0, 0.0]]).unwrap();
    write(d.path(), "cell.xyz", &xyz::write_structure(&s));
    let args =
        |inp: &'static str, out: &'static str| ["predict", "--structure", inp, "--model", "oracle:lj", "--out", out];
    assert!(mamforge(d.path(), &args("cell.xyz", "a.xyz")).status.success());
    assert!(mamforge(d.path(), &args("a.xyz", "b.xyz")).status.success());
    let a = std::fs::read_to_string(d.path().join("a.xyz")).unwrap();
    let b = std::fs::read_to_string(d.path().join("b.xyz")).unwrap();
    assert_eq!(a, b);
    let rows = csv_rows(&std::fs::read_to_string(d.path().join("a.xyz.csv")).unwrap());
    let m: Vec<f64> = rows[1][5..14].iter().map(|x| x.parse().unwrap()).collect();
    for (p, q) in [(1, 3), (2, 6), (5, 7)] {
        assert!((m[p] - m[q]).abs() < 1e-12);
    }
    assert!(m[1].abs() > 1e-6);
}

#[test]
fn manifest_digests_track_input_content() {
    let d = TempDir::new().unwrap();
    let run = |name: &str| {
        let o = mamforge(
            d.path(),
            &[
                "predict",
                "--structure",
                "dimer.xyz",
                "--model",
                "oracle:lj",
                "--out",
                name,
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let text = std::fs::read_to_string(d.path().join(format!("{name}.manifest.json"))).unwrap();
        serde_json::from_str::<serde_json::Value>(&text).unwrap()
    };
    write(d.path(), "dimer.xyz", &dimer(3.0));
    let m1 = run("p1.xyz");
    let m2 = run("p2.xyz");
    write(d.path(), "dimer.xyz", &dimer(3.1));
    let m3 = run("p3.xyz");
    assert_eq!(m1["subcommand"], "predict");
    assert_eq!(m1["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m1["config"]["oracle.sigma"], "2.5");
    assert!(m1["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(m1["inputs"], m2["inputs"]);
    assert_ne!(m1["inputs"]["dimer.xyz"], m3["inputs"]["dimer.xyz"]);
    assert_eq!(m1["inputs"]["dimer.xyz"].as_str().unwrap().len(), 64);
}

#[test]
fn train_then_predict_with_model_file() {
    let d = TempDir::new().unwrap();
    write(
        d.path(),
        "train.cfg",
        "# small fit\nmodel.descriptors = radial\nmodel.cutoff = 6\nmodel.hidden = 8\nopt.epochs = 40\ndata.frames = 6\nopt.seed = 3\n",
    );
    let args = [
        "train",
        "--data",
        "oracle:lj",
        "--model-out",
        "m.json",
        "--metrics-out",
        "h.csv",
        "--parity-out",
        "par.csv",
        "--config",
        "train.cfg",
        "--set",
        "opt.epochs=30",
    ];
    let o = mamforge(d.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let history = std::fs::read_to_string(d.path().join("h.csv")).unwrap();
    assert!(history.starts_with("epoch,rmse_e_train,rmse_e_val,rmse_f_train,rmse_f_val,rmse_q_train,rmse_q_val\n"));
    assert!(history.lines().count() <= 31);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("m.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["opt.epochs"], "30");
    assert_eq!(manifest["config"]["model.hidden"], "8");
    assert_eq!(manifest["config"]["loss.w_f"], "0.1");
    assert_eq!(manifest["seed"], 3);
    let first = std::fs::read(d.path().join("m.json")).unwrap();
    assert!(mamforge(d.path(), &args).status.success());
    assert_eq!(
        first,
        std::fs::read(d.path().join("m.json")).unwrap(),
        "same seed, same model bytes"
    );

    write(d.path(), "dimer.xyz", &dimer(3.0));
    let o = mamforge(
        d.path(),
        &[
            "predict",
            "--structure",
            "dimer.xyz",
            "--model",
            "m.json",
            "--out",
            "p.xyz",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    write(
        d.path(),
        "neon.xyz",
        &xyz::write_structure(&Structure::cluster(vec![[0.0; 3]], vec![10]).unwrap()),
    );
    let o = mamforge(
        d.path(),
        &[
            "predict",
            "--structure",
            "neon.xyz",
            "--model",
            "m.json",
            "--out",
            "q.xyz",
        ],
    );
    assert_eq!(o.status.code(), Some(66), "element mismatch is a data error");
}

fn slab(d: &Path) -> f64 {
    let oracle = PairOracle::default();
    let a = oracle.zero_pressure_fcc(4, 18).unwrap().cell[0][0] / 4.0;
    let mut s = structure::replicate(&structure::fcc(a, 1, 18).unwrap(), 4, 4, 2).unwrap();
    let top = s.cell[2][2];
    s.cell[2][2] = top + 12.0;
    write(d, "slab.xyz", &xyz::write_structure(&s));
    top
}

#[test]
fn cycle_streams_trace_and_is_reproducible() {
    let d = TempDir::new().unwrap();
    let top = slab(d.path());
    write(
        d.path(),
        "cycle.cfg",
        &format!(
            "cycle.species = Li\ncycle.region_min = {}\ncycle.region_max = {}\ncycle.schedule = charge:2,discharge:2\n\
             cycle.seed = 5\nrelax.max_steps = 40\nrelax.tol = 0.05\n",
            top + 2.0,
            top + 8.0
        ),
    );
    let run = |trace: &str| {
        let o = mamforge(
            d.path(),
            &[
                "cycle",
                "--structure",
                "slab.xyz",
                "--model",
                "oracle:lj",
                "--config",
                "cycle.cfg",
                "--trace-out",
                trace,
                "--frames-out",
                "f.xyz",
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(d.path().join(trace)).unwrap()
    };
    let t1 = run("t1.csv");
    let t2 = run("t2.csv");
    assert_eq!(t1, t2);
    let rows = csv_rows(&t1);
    assert_eq!(rows[0].join(","), mamforge_core::cyclesim::TRACE_HEADER);
    assert_eq!(rows.len(), 5);
    let x: Vec<f64> = rows[1..].iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(x, [1.0 / 128.0, 2.0 / 128.0, 1.0 / 128.0, 0.0]);
    assert_eq!(xyz::read_frames(&d.path().join("f.xyz")).unwrap().len(), 4);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("t1.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["notes"]["bias_ev_per_a"], "0.1");
    assert_eq!(m["notes"]["stop"], "completed");
    assert_eq!(m["seed"], 5);
}

#[test]
fn cycle_failure_keeps_partial_trace() {
    let d = TempDir::new().unwrap();
    let top = slab(d.path());
    let o = mamforge(
        d.path(),
        &[
            "cycle",
            "--structure",
            "slab.xyz",
            "--model",
            "oracle:lj",
            "--trace-out",
            "t.csv",
            "--set",
            "cycle.species=Li",
            "--set",
            &format!("cycle.region_min={}", top + 2.0),
            "--set",
            &format!("cycle.region_max={}", top + 8.0),
            "--set",
            "cycle.schedule=charge:1,discharge:2",
            "--set",
            "relax.max_steps=20",
        ],
    );
    assert_eq!(o.status.code(), Some(66), "{}", stderr(&o));
    let rows = csv_rows(&std::fs::read_to_string(d.path().join("t.csv")).unwrap());
    assert_eq!(rows.len(), 3, "header plus the two completed steps");
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("t.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "error:data");
}

#[test]
fn elastic_sliding_and_distortion() {
    let d = TempDir::new().unwrap();
    let crystal = PairOracle::default().zero_pressure_fcc(4, 18).unwrap();
    write(d.path(), "fcc.xyz", &xyz::write_structure(&crystal));
    let o = mamforge(
        d.path(),
        &[
            "analyze",
            "elastic",
            "--structure",
            "fcc.xyz",
            "--model",
            "oracle:lj",
            "--set",
            "elastic.delta=0.001",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    let c12: f64 = rows[1][2].parse().unwrap();
    let c44: f64 = rows[4][4].parse().unwrap();
    assert!((c12 - c44).abs() / c44 < 0.02);
    let o = mamforge(
        d.path(),
        &[
            "analyze",
            "elastic",
            "--structure",
            "fcc.xyz",
            "--model",
            "oracle:lj",
            "--set",
            "elastic.delta=0.1",
        ],
    );
    assert_eq!(o.status.code(), Some(65));

    let profile: String = (0..5)
        .map(|k| format!("{},{}\n", k as f64, 0.5 + 0.1 * k as f64))
        .collect();
    write(d.path(), "prof.csv", &format!("l_a,w_sep_j_per_m2\n{profile}"));
    let o = mamforge(d.path(), &["analyze", "sliding", "--profile", "prof.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 6);
    for r in &rows[1..] {
        assert!((r[2].parse::<f64>().unwrap() + 0.1).abs() < 1e-12);
        assert!((r[3].parse::<f64>().unwrap() - 0.1).abs() < 1e-12);
    }

    let octahedron = |center: [f64; 3]| {
        let mut pos = vec![center];
        for axis in 0..3 {
            for sign in [1.0, -1.0] {
                let mut p = [0.0; 3];
                p[axis] = 2.0 * sign;
                pos.push(p);
            }
        }
        xyz::write_structure(&Structure::cluster(pos, vec![22, 8, 8, 8, 8, 8, 8]).unwrap())
    };
    let measure = |text: &str| -> Vec<f64> {
        write(d.path(), "oct.xyz", text);
        let o = mamforge(
            d.path(),
            &[
                "analyze",
                "distortion",
                "--structure",
                "oct.xyz",
                "--center",
                "0",
                "--ligands",
                "1,2,3,4,5,6",
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        csv_rows(&stdout(&o))[1][2..]
            .iter()
            .map(|x| x.parse().unwrap())
            .collect()
    };
    let regular = measure(&octahedron([0.0; 3]));
    assert!(regular[0].abs() < 1e-12 && (regular[1] - 1.0).abs() < 1e-12 && regular[2].abs() < 1e-12);
    assert!((regular[3] - 4.0 * 8.0 / 3.0).abs() < 1e-9);
    let shifted = measure(&octahedron([0.2, 0.0, 0.0]));
    assert!((shifted[2] - 0.2).abs() < 1e-12);
    let o = mamforge(
        d.path(),
        &[
            "analyze",
            "distortion",
            "--structure",
            "oct.xyz",
            "--center",
            "0",
            "--ligands",
            "1,2,3",
        ],
    );
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn selftest_subset() {
    let d = TempDir::new().unwrap();
    let o = mamforge(d.path(), &["selftest", "--only", "4,8,10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.contains(" PASS ")).count(), 3);
    assert!(stderr(&o).contains("\"subcommand\":\"selftest\""));
    assert_eq!(
        mamforge(d.path(), &["selftest", "--only", "13"]).status.code(),
        Some(64)
    );
}
