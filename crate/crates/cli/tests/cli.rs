use std::fs;
use std::path::Path;
use std::process::Command;

use fair_abstain_cli::{run, EXIT_INVALID, EXIT_OK};
use tempfile::TempDir;

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("fair-abstain").chain(args.iter().copied()))
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

/// Runs the built binary and returns (exit code, stderr).
fn binary(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_fair-abstain"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn json(path: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &TempDir, family: &str, n: &str) -> String {
    let d = p(dir, family);
    assert_eq!(
        cli(&["synth", "--family", family, "--n", n, "--seed", "7", "-o", &d]),
        EXIT_OK
    );
    d
}

#[test]
fn uniform_pipeline_reproduces_the_strip_solution() {
    let dir = TempDir::new().unwrap();
    let d = synth(&dir, "uniform", "5000");
    let (model, dec, metrics) = (p(&dir, "fit.json"), p(&dir, "dec.csv"), p(&dir, "m.json"));
    let unlabeled = format!("{d}/unlabeled.csv");
    let test = format!("{d}/test.csv");
    assert_eq!(
        cli(&[
            "postprocess",
            &unlabeled,
            "--alpha-shared",
            "0.8",
            "--seed",
            "1",
            "-o",
            &model
        ]),
        EXIT_OK
    );
    let lambda = json(&model)["lambda"][0].as_f64().unwrap();
    assert!((-0.55..=-0.45).contains(&lambda), "lambda {lambda}");

    assert_eq!(cli(&["predict", &model, &test, "-o", &dec]), EXIT_OK);
    assert_eq!(
        cli(&["evaluate", &dec, &test, "--model", &model, "-o", &metrics]),
        EXIT_OK
    );
    let m = json(&metrics);
    let clf = m["per_group"][0]["clf"].as_f64().unwrap();
    assert!((clf - 0.8).abs() < 0.03, "clf {clf}");
    // with the strip [0.4, 0.6] removed the error is 2 * int_0^0.4 x dx / 0.8 = 0.2
    let acc = m["overall"]["acc"].as_f64().unwrap();
    assert!((acc - 0.8).abs() < 0.03, "acc {acc}");
    assert_eq!(m["per_group"][0]["s"], 1);
    assert_eq!(m["pass"], true);
}

#[test]
fn fitted_model_and_decisions_are_byte_stable() {
    let dir = TempDir::new().unwrap();
    let d = synth(&dir, "logistic2", "500");
    let unlabeled = format!("{d}/unlabeled.csv");
    let test = format!("{d}/test.csv");
    let mut outputs = Vec::new();
    for run in 0..2 {
        let (model, dec) = (
            p(&dir, &format!("fit{run}.json")),
            p(&dir, &format!("dec{run}.csv")),
        );
        assert_eq!(
            cli(&[
                "postprocess",
                &unlabeled,
                "--alpha",
                "0.8,0.9",
                "--seed",
                "3",
                "-o",
                &model
            ]),
            EXIT_OK
        );
        assert_eq!(cli(&["predict", &model, &test, "-o", &dec]), EXIT_OK);
        outputs.push((fs::read(&model).unwrap(), fs::read(&dec).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);

    // regenerating the data is byte-stable too
    let again = TempDir::new().unwrap();
    let d2 = synth(&again, "logistic2", "500");
    for f in ["unlabeled.csv", "test.csv", "population.csv"] {
        assert_eq!(
            fs::read(Path::new(&d).join(f)).unwrap(),
            fs::read(Path::new(&d2).join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn default_sweep_has_twenty_rows() {
    let dir = TempDir::new().unwrap();
    let d = synth(&dir, "logistic2", "400");
    let out = p(&dir, "sweep.csv");
    let code = cli(&[
        "sweep",
        &format!("{d}/unlabeled.csv"),
        "--test",
        &format!("{d}/test.csv"),
        "-o",
        &out,
    ]);
    assert_eq!(code, EXIT_OK);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "alpha,acc_1,clf_1,pos_1,acc_2,clf_2,pos_2");
    assert_eq!(lines.len(), 21);
    assert!(lines[1].starts_with("8.0000000000000004e-1,"));
    assert!(lines[20].starts_with("9.8999999999999999e-1,"));
}

#[test]
fn malformed_row_exits_one_and_names_the_row() {
    let dir = TempDir::new().unwrap();
    let bad = p(&dir, "bad.csv");
    fs::write(&bad, "id,group,score\na,1,0.2\nb,1,0.4\nc,1,oops\n").unwrap();
    let (code, err) = binary(&[
        "postprocess",
        &bad,
        "--alpha-shared",
        "0.8",
        "-o",
        &p(&dir, "m.json"),
    ]);
    assert_eq!(code, EXIT_INVALID);
    assert!(err.contains("row 4"), "{err}");
    assert!(!Path::new(&p(&dir, "m.json")).exists());
}

#[test]
fn usage_errors_name_the_flag() {
    let (code, err) = binary(&[
        "postprocess",
        "x.csv",
        "--alpha-shared",
        "0.8",
        "--sigmaa",
        "1",
        "-o",
        "m.json",
    ]);
    assert_eq!(code, EXIT_INVALID);
    assert!(err.contains("--sigmaa"), "{err}");
    let (code, err) = binary(&[
        "postprocess",
        "x.csv",
        "--alpha",
        "0.8",
        "--alpha-shared",
        "0.8",
        "-o",
        "m.json",
    ]);
    assert_eq!(code, EXIT_INVALID);
    assert!(err.contains("--alpha"), "{err}");
    assert_eq!(binary(&["--help"]).0, EXIT_OK);
}

#[test]
fn invalid_config_values_exit_one() {
    let dir = TempDir::new().unwrap();
    let d = synth(&dir, "uniform", "50");
    let u = format!("{d}/unlabeled.csv");
    let m = p(&dir, "m.json");
    assert_eq!(
        cli(&["postprocess", &u, "--alpha-shared", "1.5", "-o", &m]),
        EXIT_INVALID
    );
    assert_eq!(
        cli(&["postprocess", &u, "--alpha", "0.8,0.9", "-o", &m]),
        EXIT_INVALID
    );
    assert_eq!(
        cli(&[
            "postprocess",
            &u,
            "--alpha-shared",
            "0.8",
            "--p",
            "0.5,0.5",
            "-o",
            &m
        ]),
        EXIT_INVALID
    );
    assert_eq!(
        cli(&["sweep", &u, "--alpha-grid", "0.8:0.7:3", "-o", &m]),
        EXIT_INVALID
    );
    assert_eq!(
        cli(&[
            "synth",
            "--family",
            "gaussian",
            "--n",
            "5",
            "-o",
            &p(&dir, "x")
        ]),
        EXIT_INVALID
    );
}

#[test]
fn unknown_group_at_predict_is_an_error() {
    let dir = TempDir::new().unwrap();
    let d = synth(&dir, "uniform", "200");
    let model = p(&dir, "fit.json");
    assert_eq!(
        cli(&[
            "postprocess",
            &format!("{d}/unlabeled.csv"),
            "--alpha-shared",
            "0.9",
            "-o",
            &model
        ]),
        EXIT_OK
    );
    let scores = p(&dir, "two.csv");
    fs::write(&scores, "id,group,score\na,1,0.3\nb,2,0.6\n").unwrap();
    let (code, err) = binary(&["predict", &model, &scores, "-o", &p(&dir, "d.csv")]);
    assert_eq!(code, EXIT_INVALID);
    assert!(err.contains("row 3") && err.contains("group 2"), "{err}");
}

#[test]
fn zero_based_groups_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = p(&dir, "z");
    assert_eq!(
        cli(&[
            "--zero-based",
            "synth",
            "--family",
            "uniform",
            "--k",
            "2",
            "--n",
            "300",
            "-o",
            &d
        ]),
        EXIT_OK
    );
    let first = fs::read_to_string(format!("{d}/unlabeled.csv")).unwrap();
    assert!(first.lines().nth(1).unwrap().split(',').nth(1) == Some("0"));
    let (model, dec) = (p(&dir, "fit.json"), p(&dir, "dec.csv"));
    assert_eq!(
        cli(&[
            "postprocess",
            &format!("{d}/unlabeled.csv"),
            "--alpha",
            "0.9,0.8",
            "--zero-based",
            "-o",
            &model
        ]),
        EXIT_OK
    );
    assert_eq!(
        cli(&[
            "predict",
            &model,
            &format!("{d}/test.csv"),
            "--zero-based",
            "-o",
            &dec
        ]),
        EXIT_OK
    );
    let groups: Vec<String> = fs::read_to_string(&dec)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().to_string())
        .collect();
    assert!(groups.iter().all(|g| g == "0" || g == "1"));
    // the same files read 1-based have a group 0, which is below the first index
    assert_eq!(
        cli(&["predict", &model, &format!("{d}/test.csv"), "-o", &dec]),
        EXIT_INVALID
    );
}

#[test]
fn oracle_matches_the_uniform_strip_risk() {
    let dir = TempDir::new().unwrap();
    let d = synth(&dir, "uniform", "10");
    let out = p(&dir, "oracle.json");
    assert_eq!(
        cli(&[
            "oracle",
            &format!("{d}/population.csv"),
            "--alpha-shared",
            "0.8",
            "-o",
            &out
        ]),
        EXIT_OK
    );
    let o = json(&out);
    assert!(
        (o["risk"].as_f64().unwrap() - 0.2).abs() < 1e-3,
        "{}",
        o["risk"]
    );
    assert_eq!(o["table"].as_array().unwrap().len(), 200);
    assert!((o["metrics"]["nab"].as_f64().unwrap() - 0.8).abs() < 1e-9);
}

#[test]
fn split_train_score_pipeline() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "features.csv");
    let mut text = String::from("id,group,x,label\n");
    for i in 0..200 {
        let g = 1 + i % 2;
        let x = (i as f64 * 0.37).sin() * 3.0;
        text.push_str(&format!("r{i},{g},{x},{}\n", u8::from(x > 0.0)));
    }
    fs::write(&data, text).unwrap();
    let parts = p(&dir, "parts");
    assert_eq!(cli(&["split", &data, "--seed", "4", "-o", &parts]), EXIT_OK);
    let count = |f: &str| {
        fs::read_to_string(format!("{parts}/{f}"))
            .unwrap()
            .lines()
            .count()
            - 1
    };
    assert_eq!(
        (
            count("train.csv"),
            count("unlabeled.csv"),
            count("test.csv")
        ),
        (120, 40, 40)
    );
    let header = fs::read_to_string(format!("{parts}/unlabeled.csv"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(header, "id,group,x");

    let (model, scores) = (p(&dir, "base.json"), p(&dir, "scores.csv"));
    assert_eq!(
        cli(&["train-base", &format!("{parts}/train.csv"), "-o", &model]),
        EXIT_OK
    );
    assert_eq!(
        cli(&["score", &model, &format!("{parts}/test.csv"), "-o", &scores]),
        EXIT_OK
    );
    let rows: Vec<Vec<String>> = fs::read_to_string(&scores)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 40);
    let correct = rows
        .iter()
        .filter(|r| (r[2].parse::<f64>().unwrap() > 0.5) == (r[3] == "1"))
        .count();
    assert!(correct >= 38, "{correct}/40");

    assert_eq!(
        cli(&[
            "train-base",
            &format!("{parts}/unlabeled.csv"),
            "-o",
            &model
        ]),
        EXIT_INVALID
    );
}

#[test]
fn evaluate_rejects_misaligned_files() {
    let dir = TempDir::new().unwrap();
    let (dec, scores) = (p(&dir, "d.csv"), p(&dir, "s.csv"));
    fs::write(&dec, "id,group,decision\na,1,1\nb,1,r\n").unwrap();
    fs::write(&scores, "id,group,score,label\na,1,0.9,1\nc,1,0.5,0\n").unwrap();
    assert_eq!(
        cli(&["evaluate", &dec, &scores, "-o", &p(&dir, "m.json")]),
        EXIT_INVALID
    );
    fs::write(&scores, "id,group,score,label\na,1,0.9,1\nb,1,0.5,0\n").unwrap();
    assert_eq!(
        cli(&["evaluate", &dec, &scores, "-o", &p(&dir, "m.json")]),
        EXIT_OK
    );
    let m = json(&p(&dir, "m.json"));
    assert_eq!(m["per_group"][0]["clf"].as_f64(), Some(0.5));
    assert_eq!(m["per_group"][0]["acc"].as_f64(), Some(1.0));
}
