use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neuroview::train::data::{write_idx_images, write_idx_labels};

fn neuroview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neuroview")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 28x28 digits where class `k` is a bright vertical bar at column `2k+4`.
fn write_bars(dir: &Path, n_train: usize, n_val: usize) {
    fs::create_dir_all(dir).unwrap();
    for (prefix, n) in [("train", n_train), ("t10k", n_val)] {
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let mut pixels = Vec::with_capacity(n * 784);
        for (i, &l) in labels.iter().enumerate() {
            for y in 0..28 {
                for x in 0..28 {
                    let bar = x / 2 == l as usize + 2;
                    pixels.push(if bar { 200 + ((i + y) % 50) as u8 } else { ((i * 7 + x * 3 + y) % 40) as u8 });
                }
            }
        }
        write_idx_images(&dir.join(format!("{prefix}-images-idx3-ubyte")), 28, 28, &pixels).unwrap();
        write_idx_labels(&dir.join(format!("{prefix}-labels-idx1-ubyte")), &labels).unwrap();
    }
}

/// Every file under `dir` with its bytes, keyed by relative path.
fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--arch", "vgg-mini", "--data", s(data), "--epochs", "1", "--batch", "16", "--out", s(out)];
    args.extend_from_slice(extra);
    neuroview(&args)
}

#[test]
fn train_is_reproducible_and_reports_render() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bars");
    write_bars(&data, 160, 40);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = train(&data, out, &["--neuroview", "--reduce", "mean", "--seed", "7"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(read_tree(&a.join("checkpoint")), read_tree(&b.join("checkpoint")));
    assert_eq!(fs::read(a.join("metrics.jsonl")).unwrap(), fs::read(b.join("metrics.jsonl")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["train"]["seed"], 7);
    assert_eq!(manifest["config"]["neuroview"]["reduce"], "mean");

    // Re-running from the manifest alone reproduces the checkpoint.
    let c = tmp.path().join("c");
    let o = neuroview(&["train", "--config", s(&a.join("manifest.json")), "--out", s(&c)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_tree(&a.join("checkpoint")), read_tree(&c.join("checkpoint")));

    let rep = tmp.path().join("explain");
    let o = neuroview(&["explain", "--ckpt", s(&a.join("checkpoint")), "--class", "3", "--format", "svg", "--out", s(&rep)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = fs::read_to_string(rep.join("weights_class3.svg")).unwrap();
    roxmltree::Document::parse(&svg).expect("well-formed svg");
    assert!(rep.join("manifest.json").exists());

    let labels = tmp.path().join("labels.csv");
    fs::write(&labels, "layer,channel,concept,category\n0,0,bar,part\n0,1,bar,part\n2,5,noise,texture\n").unwrap();
    let o = neuroview(&[
        "concepts", "--ckpt", s(&a.join("checkpoint")), "--labels", s(&labels), "--class", "1", "--out", s(&rep),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(rep.join("concepts_class1.csv")).unwrap();
    assert!(csv.starts_with("class,concept,category,units,weight,share_percent\n"));
    assert_eq!(csv.lines().count(), 4);

    let o = neuroview(&["eval", "--ckpt", s(&b.join("checkpoint")), "--data", s(&data), "--out", s(&rep)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval: serde_json::Value = serde_json::from_slice(&fs::read(rep.join("eval.json")).unwrap()).unwrap();
    let trained: serde_json::Value = serde_json::from_slice(&fs::read(b.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval, trained);
}

#[test]
fn baseline_and_neuroview_flags_select_the_family() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bars");
    write_bars(&data, 40, 20);
    let out = tmp.path().join("base");
    let o = train(&data, &out, &["--baseline"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("checkpoint/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["family"], "baseline");
    let o = train(&data, &tmp.path().join("x"), &["--baseline", "--neuroview"]);
    assert!(!o.status.success());
    let o = neuroview(&["view-means", "--ckpt", s(&out.join("checkpoint")), "--class", "0", "--out", s(&tmp.path().join("vm"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("baseline"));
}

#[test]
fn errors_name_the_flag_or_path() {
    let tmp = tempfile::tempdir().unwrap();
    let o = neuroview(&["train", "--out", s(tmp.path()), "--bogus"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--bogus"));

    let missing = tmp.path().join("nowhere");
    let o = neuroview(&["train", "--data", s(&missing), "--out", s(&tmp.path().join("o"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));

    let o = neuroview(&["train", "--data", s(&missing), "--reduce", "median", "--out", s(tmp.path())]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--reduce"), "{}", stderr(&o));
}

#[test]
fn nan_loss_exits_with_dedicated_code() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bars");
    write_bars(&data, 64, 10);
    let o = train(&data, &tmp.path().join("o"), &["--baseline", "--lr", "1e30", "--momentum", "0.99"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn colored_dataset_and_perturbation_table() {
    let tmp = tempfile::tempdir().unwrap();
    let mnist = tmp.path().join("bars");
    write_bars(&mnist, 100, 30);
    let colored = tmp.path().join("colored");
    let o = neuroview(&["dataset", "make-colored-mnist", "--data", s(&mnist), "--rho", "1", "--out", s(&colored)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(colored.join("train/7").is_dir() && colored.join("val/0").is_dir());

    let run = tmp.path().join("run");
    let o = train(&colored, &run, &["--format", "png-dir", "--neuroview"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cf = tmp.path().join("cf");
    let model = format!("nv={}", s(&run.join("checkpoint")));
    let o = neuroview(&["perturb", "--model", &model, "--data", s(&colored), "--out", s(&cf)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(cf.join("counterfactual.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("network,class,none,red,green,blue"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| r.starts_with("nv,") && r.split(',').count() == 6));
}

#[test]
fn gradcheck_passes() {
    let o = neuroview(&["gradcheck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    let line = text.lines().find(|l| l.starts_with("max relative error")).expect("summary line");
    let value: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(value <= 1e-4);
}
