use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mofhei(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mofhei"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mofhei(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    mofhei(dir, args).status.code().expect("exit code")
}

const QUICK: &str = r#"
[train]
epochs = 2
batch_size = 16
patience_epochs = 2

[hef]
transfer_epochs = 1
finetune_epochs = 1
patience = 1
batch_size = 16

[prune]
epochs = 3
finetune_epochs = 1
"#;

#[test]
fn five_stage_pipeline_on_synthetic_digits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("quick.toml"), QUICK).unwrap();
    let common = ["--config", "quick.toml", "--seed", "7", "--samples", "200"];
    let with =
        |extra: &[&'static str]| -> Vec<&str> { extra.iter().copied().chain(common).collect() };

    ok(
        d,
        &with(&[
            "train",
            "--arch",
            "lenet",
            "--dataset",
            "synthetic:mnist_like",
            "--out",
            "orig.mofhei",
        ]),
    );
    ok(
        d,
        &with(&[
            "make-hefriendly",
            "--model",
            "orig.mofhei",
            "--out",
            "hef.mofhei",
        ]),
    );
    let conv: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("hef.mofhei.conversion.json")).unwrap())
            .unwrap();
    assert_eq!(conv["seed"], 7);
    assert_eq!(conv["conversions"].as_array().unwrap().len(), 6);

    ok(
        d,
        &with(&[
            "prune",
            "--model",
            "hef.mofhei",
            "--out",
            "p50.mofhei",
            "--sparsity",
            "0.5",
        ]),
    );
    assert!(d.join("p50.mofhei.state.json").is_file());
    ok(
        d,
        &with(&["shrink", "--model", "p50.mofhei", "--out", "s50.mofhei"]),
    );
    let manifest = fs::read_to_string(d.join("s50.mofhei")).unwrap();
    assert!(manifest.contains("\"seed\": \"7\""));
    assert!(manifest.contains("\"stage\": \"shrunk\""));

    ok(
        d,
        &with(&[
            "infer-he",
            "--model",
            "s50.mofhei",
            "--out",
            "he1.csv",
            "--workers",
            "1",
        ]),
    );
    ok(
        d,
        &with(&[
            "infer-he",
            "--model",
            "s50.mofhei",
            "--out",
            "he3.csv",
            "--workers",
            "3",
        ]),
    );
    let (a, b) = (
        fs::read(d.join("he1.csv")).unwrap(),
        fs::read(d.join("he3.csv")).unwrap(),
    );
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().starts_with("# seed=7\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("he1.csv.json")).unwrap()).unwrap();
    assert!(summary["max_abs_error_vs_plaintext"].as_f64().unwrap() < 1e-6);

    ok(
        d,
        &with(&["infer-plain", "--model", "s50.mofhei", "--out", "plain.csv"]),
    );
    let cost = ok(
        d,
        &with(&[
            "analyze-cost",
            "--model",
            "s50.mofhei",
            "--baseline",
            "hef.mofhei",
            "--out",
            "cost.json",
        ]),
    );
    assert!(cost.starts_with("layer,kind,units,reduction_factor,heo,skipped\n"));

    ok(
        d,
        &with(&[
            "report",
            "--hef",
            "hef.mofhei",
            "--pruned",
            "s50.mofhei",
            "--out",
            "report.json",
            "--csv",
            "report.csv",
        ]),
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    let schema: serde_json::Value =
        serde_json::from_str(mofhei_cli::report::REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(&report)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{errors:?}");
    let cols = report["columns"].as_array().unwrap();
    assert_eq!(cols.len(), 2);
    assert_eq!(cols[1]["label"], "50%");
    assert!(cols[1]["reduction_vs_hef"].as_f64().unwrap() > 0.5);
    assert!(fs::read_to_string(d.join("report.csv"))
        .unwrap()
        .starts_with("information,HEF,50%\n"));
}

#[test]
fn analyze_cost_of_untrained_hef_lenet() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "train",
            "--arch",
            "lenet",
            "--he-friendly",
            "--epochs",
            "0",
            "--dataset",
            "mnist",
            "--out",
            "l.mofhei",
        ],
    );
    let table = ok(
        d,
        &["analyze-cost", "--model", "l.mofhei", "--csv", "l.csv"],
    );
    assert!(table.contains("0,Conv2D,6,-,235200,0\n"), "{table}");
    assert!(table.contains("total,,,,871884,0\n"), "{table}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["train", "--bogus"]), 2);
    assert_eq!(
        code(
            d,
            &["train", "--arch", "vgg", "--dataset", "mnist", "--out", "x"]
        ),
        2
    );
    assert_eq!(
        code(
            d,
            &[
                "train",
                "--arch",
                "lenet",
                "--dataset",
                "imagenet",
                "--out",
                "x"
            ]
        ),
        2
    );

    ok(
        d,
        &[
            "train",
            "--arch",
            "fcnet",
            "--he-friendly",
            "--epochs",
            "0",
            "--dataset",
            "synthetic:blobs",
            "--out",
            "f.mofhei",
        ],
    );
    assert_eq!(
        code(
            d,
            &[
                "prune",
                "--model",
                "f.mofhei",
                "--out",
                "p",
                "--block-shape",
                "3by1"
            ]
        ),
        2
    );

    fs::write(d.join("broken.mofhei"), "{ \"format\": \"mofhei-model\", ").unwrap();
    assert_eq!(code(d, &["analyze-cost", "--model", "broken.mofhei"]), 3);
    fs::write(d.join("bad.toml"), "[train]\nepochs = \"many\"\n").unwrap();
    assert_eq!(
        code(
            d,
            &[
                "analyze-cost",
                "--model",
                "f.mofhei",
                "--config",
                "bad.toml"
            ]
        ),
        3
    );

    ok(
        d,
        &[
            "train",
            "--arch",
            "ae3",
            "--he-friendly",
            "--epochs",
            "0",
            "--dataset",
            "synthetic:mnist_like",
            "--out",
            "ae3.mofhei",
        ],
    );
    assert_eq!(code(d, &["analyze-cost", "--model", "ae3.mofhei"]), 4);
    assert_eq!(
        code(
            d,
            &[
                "infer-he",
                "--model",
                "ae3.mofhei",
                "--out",
                "y.csv",
                "--samples",
                "20"
            ]
        ),
        4
    );

    fs::write(
        d.join("hot.toml"),
        "[train]\nepochs = 3\nlearning_rate = 1e300\noptimizer = \"sgd_momentum\"\n",
    )
    .unwrap();
    assert_eq!(
        code(
            d,
            &[
                "train",
                "--arch",
                "lenet",
                "--he-friendly",
                "--dataset",
                "synthetic:mnist_like",
                "--samples",
                "60",
                "--config",
                "hot.toml",
                "--out",
                "h"
            ]
        ),
        5
    );
    assert_eq!(
        code(
            d,
            &[
                "train",
                "--arch",
                "fcnet",
                "--dataset",
                "synthetic:blobs",
                "--out",
                "g"
            ]
        ),
        2
    );
}
