use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use indirect::rng::{gaussian_vec, seeded_rng};
use indirect::{read_embeddings, write_embeddings, EmbeddingSet, LabelSet};
use tempfile::TempDir;

fn indirect_bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_indirect"));
    cmd.env_remove("INDIRECT_DATA_DIR");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn save(set: &EmbeddingSet, path: &Path) {
    let mut f = fs::File::create(path).unwrap();
    write_embeddings(set, &mut f).unwrap();
}

/// Writes three well-separated image classes in R^8, prompts near the class
/// centers, and the label file.
fn fixture(dir: &Path) {
    let (r, classes, per) = (8, 3, 6);
    let mut rng = seeded_rng(11);
    let centers = gaussian_vec(&mut rng, classes * r, 1.0);
    let mut images = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for c in 0..classes {
        for k in 0..per {
            let noise = gaussian_vec(&mut rng, r, 0.05);
            images.extend(
                centers[c * r..(c + 1) * r]
                    .iter()
                    .zip(&noise)
                    .map(|(a, b)| a + b),
            );
            ids.push(format!("c{c}_{k}.jpg"));
            labels.push((format!("c{c}_{k}.jpg"), format!("class{c}")));
        }
    }
    let mut prompts = Vec::new();
    for c in 0..classes {
        for _ in 0..4 {
            let noise = gaussian_vec(&mut rng, r, 0.1);
            prompts.extend(
                centers[c * r..(c + 1) * r]
                    .iter()
                    .zip(&noise)
                    .map(|(a, b)| a + b),
            );
        }
    }
    save(
        &EmbeddingSet::new(r, images, Some(ids)).unwrap(),
        &dir.join("img.emb"),
    );
    save(
        &EmbeddingSet::new(r, prompts, None).unwrap(),
        &dir.join("text.emb"),
    );
    fs::write(
        dir.join("labels.tsv"),
        LabelSet::new(labels).unwrap().to_tsv(),
    )
    .unwrap();
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_passthrough_writes_report() {
    let dir = TempDir::new().unwrap();
    fixture(dir.path());
    let out = dir.path().join("report.json");
    let o = run(indirect_bin()
        .args(["run", "--method", "clip-passthrough", "--seeds", "0..3"])
        .arg("--img-emb")
        .arg(dir.path().join("img.emb"))
        .arg("--labels")
        .arg(dir.path().join("labels.tsv"))
        .arg("--out")
        .arg(&out));
    assert!(o.status.success());
    let report = json(&out);
    assert_eq!(report["prec_at_1"]["mean"], 1.0);
    assert_eq!(report["prec_at_1"]["runs"].as_array().unwrap().len(), 3);
    assert_eq!(report["map_at_r"]["std"], 0.0);
    assert_eq!(report["fingerprint"].as_str().unwrap().len(), 64);
    assert!(String::from_utf8_lossy(&o.stderr).contains("MAP@R"));
}

#[test]
fn data_dir_from_environment_and_config_file() {
    let dir = TempDir::new().unwrap();
    fixture(dir.path());
    let config = dir.path().join("exp.toml");
    fs::write(
        &config,
        "method = \"indirect\"\ntext_emb = \"text.emb\"\nimg_emb = \"img.emb\"\nlabels = \"labels.tsv\"\ntarget_dim = 3\nseeds = [0, 1]\nmetrics = [\"map_at_r\", \"prec_at_1\"]\n",
    )
    .unwrap();
    let o = run(indirect_bin()
        .env("INDIRECT_DATA_DIR", dir.path())
        .arg("run")
        .arg("--config")
        .arg(&config));
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["map_at_r"]["mean"].as_f64().unwrap() > 0.9);
    assert!(report.get("ami").is_none());
    assert_eq!(report["config"]["target_dim"], 3);
}

#[test]
fn fit_transform_evaluate_roundtrip() {
    let dir = TempDir::new().unwrap();
    fixture(dir.path());
    let d = dir.path();
    let o = run(indirect_bin().current_dir(d).args([
        "fit",
        "--method",
        "pca",
        "--text-emb",
        "text.emb",
        "--dim",
        "3",
        "--out",
        "model.json",
    ]));
    assert!(o.status.success());
    assert_eq!(json(&d.join("model.json"))["kind"], "projection");

    let o = run(indirect_bin().current_dir(d).args([
        "transform",
        "--model",
        "model.json",
        "--img-emb",
        "img.emb",
        "--out",
        "small.emb",
    ]));
    assert!(o.status.success());
    let small = read_embeddings(fs::File::open(d.join("small.emb")).unwrap()).unwrap();
    assert_eq!((small.count(), small.dim()), (18, 3));
    assert!(small.ids().is_some());

    let o = run(indirect_bin().current_dir(d).args([
        "evaluate",
        "--img-emb",
        "small.emb",
        "--labels",
        "labels.tsv",
        "--seeds",
        "0",
    ]));
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["prec_at_1"]["mean"], 1.0);
}

#[test]
fn sweep_records_inapplicable_points() {
    let dir = TempDir::new().unwrap();
    fixture(dir.path());
    let d = dir.path();
    // 12 prompts: PCA at 16 dimensions is impossible (also exceeds r = 8).
    let o = run(indirect_bin().current_dir(d).args([
        "sweep",
        "--method",
        "pca",
        "--text-emb",
        "text.emb",
        "--img-emb",
        "img.emb",
        "--labels",
        "labels.tsv",
        "--seeds",
        "0",
        "--dims",
        "1,2,16",
        "--out",
        "sweep.json",
    ]));
    assert!(o.status.success());
    let points = json(&d.join("sweep.json"));
    let points = points.as_array().unwrap();
    assert_eq!(points.len(), 3);
    assert!(points[0]["report"].is_object());
    assert!(points[1]["report"].is_object());
    assert!(points[2]["error"].is_string());
}

#[test]
fn report_renders_saved_reports() {
    let dir = TempDir::new().unwrap();
    fixture(dir.path());
    let d = dir.path();
    for (method, name) in [
        ("clip-passthrough", "clip.json"),
        ("random-transform", "random.json"),
    ] {
        let o = run(indirect_bin().current_dir(d).args([
            "run",
            "--method",
            method,
            "--img-emb",
            "img.emb",
            "--labels",
            "labels.tsv",
            "--dim",
            "4",
            "--out",
            name,
        ]));
        assert!(o.status.success());
    }
    let o = run(indirect_bin()
        .current_dir(d)
        .args(["report", "clip.json", "random.json"]));
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("clip") && table.contains("random"));
    assert!(table.contains("100.0"));
    assert!(table.contains('±'));
}

#[test]
fn exit_codes_follow_error_category() {
    let dir = TempDir::new().unwrap();
    fixture(dir.path());
    let d = dir.path();

    // Config: indirect without text embeddings.
    let o = run(indirect_bin().current_dir(d).args([
        "run",
        "--method",
        "indirect",
        "--img-emb",
        "img.emb",
        "--labels",
        "labels.tsv",
    ]));
    assert_eq!(o.status.code(), Some(2));

    // Config: unknown method rejected by argument parsing.
    let o = run(indirect_bin().args(["run", "--method", "nope"]));
    assert_eq!(o.status.code(), Some(2));

    // Data: corrupted embedding file.
    fs::write(d.join("bad.emb"), b"NOPE0000").unwrap();
    let o = run(indirect_bin().current_dir(d).args([
        "evaluate",
        "--img-emb",
        "bad.emb",
        "--labels",
        "labels.tsv",
    ]));
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));

    // Numerical: a prompt that is the zero vector cannot be normalized.
    let zero = EmbeddingSet::new(8, vec![0.0; 16], None).unwrap();
    save(&zero, &d.join("zero.emb"));
    let o = run(indirect_bin().current_dir(d).args([
        "run",
        "--method",
        "indirect",
        "--text-emb",
        "zero.emb",
        "--img-emb",
        "img.emb",
        "--labels",
        "labels.tsv",
        "--dim",
        "2",
        "--seeds",
        "0",
    ]));
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed 0"));
}
