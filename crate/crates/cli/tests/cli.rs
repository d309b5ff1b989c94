use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const QUADRANT: &str = "synthetic:quadrant-mean";

fn write_test_image(dir: &Path, name: &str, side: u32) -> PathBuf {
    let img = image::RgbImage::from_fn(side, side, |x, y| {
        let bright = x < side / 2 && y < side / 2;
        let base: u32 = if bright { 200 } else { 40 };
        image::Rgb([base as u8, (base + (x * 3 + y) % 40) as u8, (base / 2) as u8])
    });
    let path = dir.join(name);
    img.save(&path).unwrap();
    path
}

fn wcam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wcam")).args(args).env_remove("WCAM_SCORER_URL").output().unwrap()
}

fn run_ok(args: &[&str]) {
    let out = wcam(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn small<'a>(cmd: &'a str, image: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![cmd, "--image", image, "--scorer", QUADRANT, "--class", "1", "--size", "32", "--grid", "8", "--levels", "2", "--out", out]
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn attribute_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let img = write_test_image(dir.path(), "in.png", 48);
    let out = dir.path().join("out");
    let (img, out_s) = (img.to_str().unwrap(), out.to_str().unwrap());
    let mut args = small("attribute", img, out_s);
    args.extend(["--seed", "7"]);
    run_ok(&args);
    let files = ["wcam.csv", "spatial.csv", "wcam.png", "spatial.png"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
    let mut m1 = json(out.join("manifest.json"));
    run_ok(&args);
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&fs::read(out.join(f)).unwrap(), bytes, "{f} differs");
    }
    let mut m2 = json(out.join("manifest.json"));
    m1.as_object_mut().unwrap().remove("wall_time_s");
    m2.as_object_mut().unwrap().remove("wall_time_s");
    assert_eq!(m1, m2);

    let csv = fs::read_to_string(out.join("wcam.csv")).unwrap();
    assert!(csv.starts_with("# schema: wcam.grid.v1\n# manifest: {"));
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 8);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 8);
        for c in cells {
            let mantissa = c.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(|ch| ch.is_ascii_digit()).count(), 17, "{c}");
        }
    }
}

#[test]
fn heatmap_embeds_manifest() {
    let dir = TempDir::new().unwrap();
    let img = write_test_image(dir.path(), "in.png", 32);
    let out = dir.path().join("out");
    run_ok(&small("attribute", img.to_str().unwrap(), out.to_str().unwrap()));
    let decoder = png::Decoder::new(fs::File::open(out.join("wcam.png")).unwrap());
    let reader = decoder.read_info().unwrap();
    let text = &reader.info().uncompressed_latin1_text;
    let chunk = text.iter().find(|t| t.keyword == "wcam-manifest").expect("manifest chunk");
    let manifest: Value = serde_json::from_str(&chunk.text).unwrap();
    assert_eq!(manifest["schema"], "wcam.manifest.v1");
    assert_eq!(manifest["config"]["grid_size"], 8);
}

#[test]
fn default_config_records_forward_count() {
    let dir = TempDir::new().unwrap();
    let img = write_test_image(dir.path(), "in.png", 100);
    let out = dir.path().join("out");
    run_ok(&[
        "attribute", "--image", img.to_str().unwrap(), "--scorer", QUADRANT, "--grid", "28", "--designs", "8",
        "--out", out.to_str().unwrap(),
    ]);
    let m = json(out.join("manifest.json"));
    assert_eq!(m["n_forwards"], 6288);
    assert_eq!(m["resize"], 224);
    assert!(m["wall_time_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn indivisible_grid_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let img = write_test_image(dir.path(), "in.png", 32);
    let out = wcam(&[
        "attribute", "--image", img.to_str().unwrap(), "--scorer", QUADRANT, "--grid", "30", "--levels", "2",
        "--out", dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid_size must be divisible by 2^levels"));
}

#[test]
fn exit_codes_for_scorer_and_io_failures() {
    let dir = TempDir::new().unwrap();
    let img = write_test_image(dir.path(), "in.png", 32);
    let o = dir.path().join("o");
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let mut args = small("attribute", img.to_str().unwrap(), o.to_str().unwrap());
    args[4] = &url;
    assert_eq!(wcam(&args).status.code(), Some(3));
    let missing = dir.path().join("missing.png");
    let out = wcam(&small("attribute", missing.to_str().unwrap(), o.to_str().unwrap()));
    assert_eq!(out.status.code(), Some(4));
    assert!(!out.stderr.is_empty());
    let mut args = small("attribute", img.to_str().unwrap(), o.to_str().unwrap());
    args[4] = "synthetic:nonsense";
    assert_eq!(wcam(&args).status.code(), Some(2));
}

#[test]
fn scorer_url_from_environment() {
    let dir = TempDir::new().unwrap();
    let img = write_test_image(dir.path(), "in.png", 32);
    let o = dir.path().join("o");
    let out = Command::new(env!("CARGO_BIN_EXE_wcam"))
        .args(["attribute", "--image", img.to_str().unwrap(), "--size", "32", "--grid", "8", "--out", o.to_str().unwrap()])
        .env("WCAM_SCORER_URL", QUADRANT)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(json(o.join("manifest.json"))["scorer"], "synthetic:region-mean:0,0,0.5,0.5");
}

#[test]
fn embed_orders_subbands_coarse_to_fine() {
    let dir = TempDir::new().unwrap();
    let img = write_test_image(dir.path(), "in.png", 32);
    let out = dir.path().join("out");
    run_ok(&small("embed", img.to_str().unwrap(), out.to_str().unwrap()));
    let doc = json(out.join("embedding.json"));
    assert_eq!(doc["schema"], "wcam.embedding.v1");
    let labels: Vec<&str> = doc["entries"].as_array().unwrap().iter().map(|e| e["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["a", "h2", "v2", "d2", "h1", "v1", "d1"]);
    let curve = fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

#[test]
fn reconstruct_k0_is_the_baseline_image() {
    let dir = TempDir::new().unwrap();
    let img = write_test_image(dir.path(), "in.png", 32);
    let out = dir.path().join("out");
    let mut args = small("reconstruct", img.to_str().unwrap(), out.to_str().unwrap());
    args.extend(["--k", "0,64"]);
    run_ok(&args);
    let zero = image::open(out.join("topk_000.png")).unwrap().to_rgb8();
    assert!(zero.pixels().all(|p| p.0 == [0, 0, 0]));
    let full = image::open(out.join("topk_064.png")).unwrap().to_rgb8();
    assert!(full.pixels().any(|p| p.0 != [0, 0, 0]));
    let minimal = json(out.join("minimal.json"));
    assert_eq!(minimal["schema"], "wcam.minimal.v1");
    assert_eq!(minimal["found"], true);
}

#[test]
fn metrics_outputs() {
    let dir = TempDir::new().unwrap();
    let img = write_test_image(dir.path(), "in.png", 32);
    let out = dir.path().join("out");
    let mut args = small("metrics", img.to_str().unwrap(), out.to_str().unwrap());
    args.extend(["--steps", "16", "--subsets", "32"]);
    run_ok(&args);
    let del = fs::read_to_string(out.join("deletion.csv")).unwrap();
    assert!(del.starts_with("# schema: wcam.deletion.v1"));
    assert_eq!(del.lines().filter(|l| !l.starts_with('#')).count(), 18);
    let mu = json(out.join("mufidelity.json"));
    assert_eq!(mu["schema"], "wcam.mufidelity.v1");
    assert!(mu["correlation"].as_f64().unwrap().abs() <= 1.0);

    // Reading the map back reproduces the curves.
    let out2 = dir.path().join("out2");
    run_ok(&small("attribute", img.to_str().unwrap(), out2.to_str().unwrap()));
    let map = out2.join("wcam.csv");
    let out3 = dir.path().join("out3");
    let mut args = small("metrics", img.to_str().unwrap(), out3.to_str().unwrap());
    args.extend(["--steps", "16", "--subsets", "32", "--map", map.to_str().unwrap()]);
    run_ok(&args);
    let strip = |s: String| s.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(del), strip(fs::read_to_string(out3.join("deletion.csv")).unwrap()));
}

#[test]
fn consistency_of_identical_images_matches_noise() {
    let dir = TempDir::new().unwrap();
    let img = write_test_image(dir.path(), "in.png", 32);
    let img_s = img.to_str().unwrap();
    let out = dir.path().join("out");
    let mut args = small("consistency", img_s, out.to_str().unwrap());
    args.extend(["--with", img_s, img_s, img_s, img_s]);
    run_ok(&args);
    let csv = fs::read_to_string(out.join("distances.csv")).unwrap();
    let d: Vec<f64> = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("i,"))
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(d.len(), 10);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let noise = json(out.join("noise_baseline.json"));
    assert_eq!(noise["schema"], "wcam.noise_baseline.v1");
    assert_eq!(noise["baseline"]["distances"].as_array().unwrap().len(), 190);
    assert!((noise["batch_mean_distance"].as_f64().unwrap() - mean).abs() < 1e-12);
    // Batch and noise distances come from the same process, so a two-sided
    // Welch test should not separate them.
    let p = noise["report"]["welch"]["p_value"].as_f64().unwrap();
    assert!(p >= 0.05, "batch mean {mean} separated from noise, p = {p}");
}
