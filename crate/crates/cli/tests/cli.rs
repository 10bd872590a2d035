use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DVector;
use optsub::simulation::{generate_design, generate_response, DesignKind, DesignSpec};
use optsub::{
    draw_pilot_with_redraws, os_probabilities, Criterion, FitOptions, GlmFamily, PilotMethod,
};
use optsub_cli::dataset::{load_csv_dataset, ColumnRef, CsvOptions};
use optsub_cli::parse_config;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn optsub(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optsub"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a seeded design plus responses as CSV (`x1..xd,y`).
fn design_csv(
    path: &Path,
    family: GlmFamily,
    kind: DesignKind,
    n: usize,
    d: usize,
    beta: f64,
    seed: u64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = generate_design(&DesignSpec::new(kind, d).unwrap(), n, &mut rng);
    let y = generate_response(family, &x, &DVector::from_element(d, beta), &mut rng, 1.0).unwrap();
    let mut w = csv::Writer::from_path(path).unwrap();
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header).unwrap();
    for i in 0..n {
        let mut row: Vec<String> = (0..d).map(|j| x[(i, j)].to_string()).collect();
        row.push(y[i].to_string());
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();
}

fn read_pi(path: &Path) -> Vec<(usize, f64)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["row_index", "pi"]);
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].parse().unwrap(), rec[1].parse().unwrap())
        })
        .collect()
}

fn read_rows(path: &Path) -> Vec<usize> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap()[0].parse().unwrap())
        .collect()
}

const SMALL: &str = r#"
[experiment]
family = "logistic"
design = "mzNormal"
n = 2000
dim = 4
beta0 = "const:0.5"
r_p = 200
r_grid = [200, 400]
repetitions = 2
seed = 7
"#;

#[test]
fn simulate_accounts_for_every_cell_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let cfg = cfg.to_str().unwrap();
    for (report, manifest) in [("a.csv", "a.json"), ("b.csv", "b.json")] {
        let o = optsub(
            &[
                "simulate",
                "--config",
                cfg,
                "--report",
                report,
                "--manifest",
                manifest,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());

    let mut r = csv::Reader::from_reader(a.as_slice());
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>().join(","),
        "setting,family,criterion,method,r,r_p,S,emse,emp_var,mean_trace_vhat,rel_eff,mean_iters,wall_ms,seed"
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    // |r_grid| * |criteria| * |methods| cells, each built from S = 2 repetitions
    assert_eq!(rows.len(), 2 * 2 * 2);
    assert!(rows
        .iter()
        .all(|row| &row[6] == "2" && &row[13] == "7" && &row[12] == "NA"));
    for row in &rows {
        let trace = &row[9];
        assert_eq!(trace == "NA", &row[3] == "weighted");
    }

    let m: Value = serde_json::from_slice(&fs::read(dir.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 7);
    assert_eq!(m["cells"], 8);
    assert_eq!(m["config"]["repetitions"], 2);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, text: &str, cmd: &str| {
        let p = write(dir.path(), name, text);
        optsub(&[cmd, "--config", p.to_str().unwrap()], dir.path())
            .status
            .code()
    };
    // configuration problems
    assert_eq!(
        run("unknown.toml", &format!("{SMALL}\nbogus = 1\n"), "simulate"),
        Some(2)
    );
    assert_eq!(
        run(
            "big_r.toml",
            &SMALL.replace("[200, 400]", "[200, 5000]"),
            "simulate"
        ),
        Some(2)
    );
    let o = optsub(&["simulate", "--config", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    // data problems
    let csv_cfg = "[experiment]\nfamily = \"linear\"\nr_grid = [2]\nseed = 1\n[data]\npath = \"nope.csv\"\nresponse = \"y\"\n";
    assert_eq!(run("nofile.toml", csv_cfg, "fit"), Some(3));
    write(dir.path(), "bad.csv", "x,y\n1,2\nfoo,3\n");
    assert_eq!(
        run(
            "badcsv.toml",
            &csv_cfg.replace("nope.csv", "bad.csv"),
            "fit"
        ),
        Some(3)
    );
    // numerical failure: every response is 0, so no pilot can be fitted
    let mut text = String::from("x1,x2,y\n");
    for i in 0..50 {
        text.push_str(&format!("{},{},0\n", i as f64 / 10.0, (i % 7) as f64));
    }
    write(dir.path(), "zeros.csv", &text);
    let logit = "[experiment]\nfamily = \"logistic\"\nr_p = 20\nr_grid = [20]\nseed = 1\nmax_pilot_redraws = 2\n[data]\npath = \"zeros.csv\"\nresponse = \"y\"\n";
    assert_eq!(run("zeros.toml", logit, "fit"), Some(4));
}

#[test]
fn identical_rows_share_the_probability_mass() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "two.csv", "x,y\n1.5,1\n1.5,2\n");
    let cfg = write(
        dir.path(),
        "two.toml",
        "[experiment]\nfamily = \"linear\"\nr_grid = [1]\nseed = 3\n[data]\npath = \"two.csv\"\nresponse = \"y\"\nstandardize = false\nintercept = false\n",
    );
    let o = optsub(
        &[
            "probabilities",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            "pi.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        read_pi(&dir.path().join("pi.csv")),
        vec![(0, 0.5), (1, 0.5)]
    );
}

#[test]
fn exported_probabilities_match_the_library() {
    let dir = TempDir::new().unwrap();
    let data_path = dir.path().join("mz.csv");
    design_csv(
        &data_path,
        GlmFamily::Logistic,
        DesignKind::MzNormal,
        3000,
        4,
        0.5,
        17,
    );
    let cfg = write(
        dir.path(),
        "mz.toml",
        "[experiment]\nfamily = \"logistic\"\nr_p = 300\nr_grid = [500]\nseed = 99\n[data]\npath = \"mz.csv\"\nresponse = \"y\"\n",
    );
    for crit in ["A-OS", "L-OS"] {
        let o = optsub(
            &[
                "probabilities",
                "--config",
                cfg.to_str().unwrap(),
                "--criterion",
                crit,
                "--output",
                "pi.csv",
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let exported = read_pi(&dir.path().join("pi.csv"));
        let total: f64 = exported.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(exported.iter().enumerate().all(|(k, (i, _))| k == *i));

        // same pipeline through the library
        let opts = CsvOptions {
            response: ColumnRef::parse("y"),
            standardize: true,
            intercept: true,
            has_header: true,
        };
        let data = load_csv_dataset(&data_path, &opts).unwrap().dataset;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (pilot, _) = draw_pilot_with_redraws(
            GlmFamily::Logistic,
            &data,
            300,
            PilotMethod::SimpleRandom,
            &FitOptions::default(),
            10,
            &mut rng,
        )
        .unwrap();
        let criterion: Criterion = crit.parse().unwrap();
        let plan = os_probabilities(GlmFamily::Logistic, data.x(), &pilot, criterion).unwrap();
        for (i, p) in exported {
            assert_eq!(p, plan.probabilities[i], "row {i}");
        }
    }
}

#[test]
fn design_probabilities_sum_to_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let o = optsub(
        &[
            "probabilities",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            "pi.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let pi = read_pi(&dir.path().join("pi.csv"));
    assert_eq!(pi.len(), 2000);
    assert!((pi.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-10);
}

#[test]
fn fit_on_the_whole_linear_file_recovers_least_squares() {
    let dir = TempDir::new().unwrap();
    design_csv(
        &dir.path().join("lin.csv"),
        GlmFamily::Linear,
        DesignKind::GA,
        400,
        3,
        1.0,
        5,
    );
    let cfg = write(
        dir.path(),
        "lin.toml",
        "[experiment]\nfamily = \"linear\"\nr_grid = [400]\nseed = 8\n[data]\npath = \"lin.csv\"\nresponse = \"y\"\n",
    );
    let o = optsub(
        &[
            "fit",
            "--config",
            cfg.to_str().unwrap(),
            "--full-fit",
            "--output",
            "est.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let est: Value =
        serde_json::from_slice(&fs::read(dir.path().join("est.json")).unwrap()).unwrap();
    let beta = optsub_cli::commands::beta_from_json(&est).unwrap();
    assert_eq!(beta.len(), 4);
    let dist = est["distance_to_mle"].as_f64().unwrap();
    assert!(dist.is_finite() && dist < 1.0, "{dist}");
    assert!(est["trace_vhat"].as_f64().unwrap() > 0.0);
    assert_eq!(est["seed"], 8);
    assert_eq!(est["config"]["family"], "linear");
    assert!(est["timings_ms"]["total"].as_f64().is_some());
}

#[test]
fn responses_on_demand_only_asks_for_pilot_and_draw_rows() {
    let dir = TempDir::new().unwrap();
    let full_path = dir.path().join("full.csv");
    design_csv(
        &full_path,
        GlmFamily::Logistic,
        DesignKind::MzNormal,
        2000,
        3,
        0.5,
        23,
    );
    let partial = dir.path().join("partial.csv");
    fs::copy(&full_path, &partial).unwrap();
    // blank every response
    let blank = |measured: &dyn Fn(usize) -> bool| {
        let mut rd = csv::Reader::from_path(&full_path).unwrap();
        let mut w = csv::Writer::from_path(&partial).unwrap();
        w.write_record(rd.headers().unwrap()).unwrap();
        for (i, rec) in rd.records().enumerate() {
            let mut row: Vec<String> = rec.unwrap().iter().map(String::from).collect();
            if !measured(i) {
                *row.last_mut().unwrap() = "NA".into();
            }
            w.write_record(&row).unwrap();
        }
        w.flush().unwrap();
    };
    blank(&|_| false);
    let body = "[experiment]\nfamily = \"logistic\"\nr_p = 200\nr_grid = [300]\nseed = 31\n[data]\nresponse = \"y\"\n";
    let cfg = write(
        dir.path(),
        "od.toml",
        &body.replace("[data]\n", "[data]\npath = \"partial.csv\"\n"),
    );
    let cfg = cfg.to_str().unwrap();
    let fit_args = [
        "fit",
        "--config",
        cfg,
        "--responses-on-demand",
        "--to-measure",
        "rows.csv",
        "--output",
        "od.json",
    ];

    // stage 1: the pilot rows
    let o = optsub(&fit_args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let pilot_rows = read_rows(&dir.path().join("rows.csv"));
    assert_eq!(pilot_rows.len(), 200);
    assert!(!dir.path().join("od.json").exists());

    // stage 2: the subsample rows not already measured
    let measured: std::collections::BTreeSet<usize> = pilot_rows.iter().copied().collect();
    blank(&|i| measured.contains(&i));
    let o = optsub(&fit_args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let draw_rows = read_rows(&dir.path().join("rows.csv"));
    assert!(!draw_rows.is_empty() && draw_rows.len() <= 300);
    assert!(draw_rows.iter().all(|i| !measured.contains(i)));

    // stage 3: everything needed is there
    let mut measured = measured;
    measured.extend(draw_rows.iter().copied());
    blank(&|i| measured.contains(&i));
    let o = optsub(&fit_args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let od: Value = serde_json::from_slice(&fs::read(dir.path().join("od.json")).unwrap()).unwrap();
    assert!(measured.len() <= 500);

    // the same seed on the fully observed file gives the same estimate
    let cfg_full = write(
        dir.path(),
        "full.toml",
        &body.replace("[data]\n", "[data]\npath = \"full.csv\"\n"),
    );
    let o = optsub(
        &[
            "fit",
            "--config",
            cfg_full.to_str().unwrap(),
            "--output",
            "full.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let full: Value =
        serde_json::from_slice(&fs::read(dir.path().join("full.json")).unwrap()).unwrap();
    assert_eq!(od["beta"], full["beta"]);
}

#[test]
fn shipped_presets_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 20, "{count} presets");
}

#[test]
fn desk_mix_normal_preset_favours_the_unweighted_estimator() {
    let preset = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets/desk_logistic_mixnormal.toml");
    let dir = TempDir::new().unwrap();
    let o = optsub(
        &[
            "simulate",
            "--config",
            preset.to_str().unwrap(),
            "--report",
            "mix.csv",
            "--manifest",
            "mix.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("mix.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    for row in rows {
        let re: f64 = row[10].parse().unwrap();
        assert!(re > 1.05, "{}/{}: {re}", &row[2], &row[4]);
    }
}
