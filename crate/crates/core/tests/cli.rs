use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mspc::Image8;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn mspc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mspc"))
        .args(args)
        .env_remove("MSPC_THREADS")
        .output()
        .expect("spawn mspc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("not json ({e}): {}", stdout(o)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn noise(w: usize, h: usize, seed: u64) -> Image8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image8::from_raw(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
}

struct Fixture {
    dir: TempDir,
    model: PathBuf,
}

impl Fixture {
    fn new(grouping: &str) -> Self {
        let dir = TempDir::new().unwrap();
        let model = dir.path().join("tiny.mspc");
        let o = mspc(&[
            "init", "--profile", "custom", "--channels", "6", "--mixtures", "2", "--resblocks", "1", "--scales", "2",
            "--grouping", grouping, "--seed", "3", "--out", s(&model),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        Fixture { dir, model }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn image(&self, name: &str, w: usize, h: usize, seed: u64) -> PathBuf {
        let p = self.path(name);
        noise(w, h, seed).save_png(&p).unwrap();
        p
    }
}

#[test]
fn encode_then_decode_is_byte_identical() {
    let f = Fixture::new("fixed_a");
    let input = f.image("in.png", 23, 17, 1);
    let packed = f.path("in.msp");
    let back = f.path("back.png");
    let e = mspc(&["encode", "--input", s(&input), "--model", s(&f.model), "--profile", "custom", "--out", s(&packed), "--patch", "12"]);
    assert_eq!(e.status.code(), Some(0), "{}", stderr(&e));
    let text = stdout(&e);
    assert!(text.contains("bpp") && text.contains("bits/subpixel") && text.contains("wall time") && text.contains("scale 0"));
    let d = mspc(&["decode", "--input", s(&packed), "--model", s(&f.model), "--out", s(&back)]);
    assert_eq!(d.status.code(), Some(0), "{}", stderr(&d));
    assert_eq!(Image8::load(&back).unwrap(), Image8::load(&input).unwrap());
}

#[test]
fn dynamic_grouping_on_64x64_round_trips() {
    let f = Fixture::new("dynamic");
    let input = f.image("in.png", 64, 64, 2);
    let packed = f.path("in.msp");
    let back = f.path("back.ppm");
    let e = mspc(&["encode", "--input", s(&input), "--model", s(&f.model), "--profile", "custom", "--grouping", "dynamic", "--out", s(&packed)]);
    assert_eq!(e.status.code(), Some(0), "{}", stderr(&e));
    let d = mspc(&["decode", "--input", s(&packed), "--model", s(&f.model), "--out", s(&back)]);
    assert_eq!(d.status.code(), Some(0), "{}", stderr(&d));
    assert_eq!(Image8::load(&back).unwrap(), Image8::load(&input).unwrap());
}

#[test]
fn missing_model_exits_2_and_names_the_path() {
    let f = Fixture::new("fixed_a");
    let input = f.image("in.png", 8, 8, 3);
    let missing = f.path("no-such-model.mspc");
    let o = mspc(&["encode", "--input", s(&input), "--model", s(&missing), "--profile", "normal", "--out", s(&f.path("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no-such-model.mspc"), "{}", stderr(&o));
}

#[test]
fn profile_mismatch_exits_2() {
    let f = Fixture::new("fixed_a");
    let input = f.image("in.png", 8, 8, 4);
    let o = mspc(&["encode", "--input", s(&input), "--model", s(&f.model), "--profile", "big", "--out", s(&f.path("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("profile"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(mspc(&["encode", "--input", "x"]).status.code(), Some(1));
    assert_eq!(mspc(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mspc(&["init", "--profile", "fancy", "--out", "x"]).status.code(), Some(1));
    assert_eq!(mspc(&["init", "--profile", "custom", "--out", "x"]).status.code(), Some(1));
    assert_eq!(mspc(&["--help"]).status.code(), Some(0));
}

#[test]
fn threads_default_comes_from_the_environment() {
    let f = Fixture::new("fixed_a");
    let input = f.image("in.png", 16, 16, 5);
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_mspc"))
            .args(["encode", "--input", s(&input), "--model", s(&f.model), "--profile", "custom", "--out", s(&f.path("t.msp"))])
            .env("MSPC_THREADS", threads)
            .output()
            .unwrap()
    };
    assert_eq!(run("2").status.code(), Some(0));
    assert_eq!(run("many").status.code(), Some(1));
    assert_eq!(run("0").status.code(), Some(1));
}

#[test]
fn encoding_is_deterministic() {
    let f = Fixture::new("random");
    let input = f.image("in.png", 30, 21, 6);
    let (a, b) = (f.path("a.msp"), f.path("b.msp"));
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = mspc(&["--threads", threads, "encode", "--input", s(&input), "--model", s(&f.model), "--profile", "custom", "--grouping", "random", "--seed", "9", "--patch", "8", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn inspect_shows_dims_scales_and_flags_tampering() {
    let f = Fixture::new("fixed_b");
    let input = f.image("in.png", 21, 13, 7);
    let packed = f.path("in.msp");
    assert!(mspc(&["encode", "--input", s(&input), "--model", s(&f.model), "--profile", "custom", "--patch", "8", "--out", s(&packed)]).status.success());

    let o = mspc(&["--json", "inspect", "--file", s(&packed), "--model", s(&f.model)]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert_eq!((v["width"].as_u64(), v["height"].as_u64()), (Some(21), Some(13)));
    assert_eq!(v["scales"].as_u64(), Some(2));
    assert_eq!(v["model_match"].as_bool(), Some(true));
    assert!(v["patches"].as_array().unwrap().iter().all(|p| p["crc_ok"] == true));

    let mut bytes = std::fs::read(&packed).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    let tampered = f.path("tampered.msp");
    std::fs::write(&tampered, &bytes).unwrap();
    let o = mspc(&["inspect", "--file", s(&tampered)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("TAMPERED"), "{}", stdout(&o));
    let o = mspc(&["--json", "inspect", "--file", s(&tampered)]);
    assert_eq!(json(&o)["patches"].as_array().unwrap().iter().filter(|p| p["crc_ok"] == false).count(), 1);

    let mut bytes = std::fs::read(&packed).unwrap();
    bytes[0] = b'X';
    std::fs::write(&tampered, &bytes).unwrap();
    assert_eq!(mspc(&["inspect", "--file", s(&tampered)]).status.code(), Some(2));
}

#[test]
fn inspect_scales_match_preset_profile() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("extra.mspc");
    assert!(mspc(&["init", "--profile", "extra", "--out", s(&model)]).status.success());
    let input = dir.path().join("in.png");
    noise(16, 16, 8).save_png(&input).unwrap();
    let packed = dir.path().join("in.msp");
    let o = mspc(&["encode", "--input", s(&input), "--model", s(&model), "--profile", "extra", "--out", s(&packed)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&mspc(&["--json", "inspect", "--file", s(&packed)]));
    assert_eq!(v["scales"].as_u64(), Some(4));
    assert_eq!(v["profile"].as_str(), Some("extra"));
}

#[test]
fn every_command_speaks_json() {
    let f = Fixture::new("fixed_a");
    let data = f.path("data");
    std::fs::create_dir(&data).unwrap();
    for i in 0..3 {
        noise(16, 16, 20 + i).save_png(data.join(format!("img{i}.png"))).unwrap();
    }
    let input = data.join("img0.png");
    let packed = f.path("p.msp");
    let trained = f.path("trained.mspc");
    let log = f.path("log.csv");
    let cases: Vec<Vec<String>> = vec![
        vec!["init", "--profile", "custom", "--channels", "4", "--mixtures", "1", "--resblocks", "1", "--scales", "1", "--out", s(&f.path("i.mspc"))],
        vec!["encode", "--input", s(&input), "--model", s(&f.model), "--profile", "custom", "--out", s(&packed)],
        vec!["decode", "--input", s(&packed), "--model", s(&f.model), "--out", s(&f.path("d.png"))],
        vec!["inspect", "--file", s(&packed)],
        vec!["eval", "--data", s(&data), "--model", s(&f.model), "--profile", "custom"],
        vec!["bench", "--input", s(&input), "--model", s(&f.model), "--profile", "custom", "--runs", "1"],
        vec!["train", "--data", s(&data), "--profile", "custom", "--model", s(&f.model), "--out", s(&trained), "--log", s(&log), "--crop", "8", "--batch", "2", "--epochs", "1", "--max-steps", "1"],
    ]
    .into_iter()
    .map(|c| c.into_iter().map(String::from).collect())
    .collect();
    for case in cases {
        let mut args = vec!["--json"];
        args.extend(case.iter().map(String::as_str));
        let o = mspc(&args);
        assert_eq!(o.status.code(), Some(0), "{case:?}: {}", stderr(&o));
        assert_eq!(json(&o)["command"].as_str(), Some(case[0].as_str()));
    }
    let csv = std::fs::read_to_string(log).unwrap();
    assert!(csv.starts_with("epoch,train_bpp,val_bpp,lr\n"));
    assert!(trained.exists());
}

#[test]
fn bench_normalizes_per_32x32_and_cites_reference_rows() {
    let f = Fixture::new("fixed_a");
    let input = f.image("in.png", 64, 64, 9);
    let csv = f.path("bench.csv");
    let o = mspc(&["--json", "bench", "--input", s(&input), "--model", s(&f.model), "--profile", "custom", "--runs", "5", "--csv", s(&csv)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&o);
    let row = &v["images"][0];
    for k in ["encode", "decode"] {
        let raw = row[format!("{k}_s")].as_f64().unwrap();
        let per = row[format!("{k}_s_per_32x32")].as_f64().unwrap();
        assert!((raw / 4.0 - per).abs() <= 1e-12 * raw.max(1.0), "{k}: {raw} / 4 != {per}");
    }
    let refs = v["references"].as_array().unwrap();
    assert!(refs.iter().all(|r| r["citation"] == true));
    assert!(refs.iter().any(|r| r["method"] == "normal" && r["metric"] == "encode_s_per_32x32" && r["value"] == 0.031));
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("image,width,height,encode_s,decode_s,encode_s_per_32x32,decode_s_per_32x32\n"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn eval_reports_both_rates_and_cites_tables() {
    let f = Fixture::new("fixed_a");
    let data = f.path("data");
    std::fs::create_dir(&data).unwrap();
    noise(12, 10, 30).save_png(data.join("a.png")).unwrap();
    noise(9, 14, 31).save_png(data.join("b.png")).unwrap();
    let o = mspc(&["--json", "eval", "--data", s(&data), "--model", s(&f.model), "--profile", "custom", "--compare-groupings"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&o);
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 4);
    for r in results {
        for img in r["report"]["images"].as_array().unwrap() {
            let gap = img["bpp"].as_f64().unwrap() - img["cross_entropy_bpp"].as_f64().unwrap();
            assert!(gap >= 0.0 && gap <= img["overhead_bound_bpp"].as_f64().unwrap(), "{img}");
        }
    }
    let refs: Vec<f64> = v["references"].as_array().unwrap().iter().map(|r| r["value"].as_f64().unwrap()).collect();
    assert_eq!(refs, vec![10.83, 10.66, 10.45, 10.60]);
    let text = stdout(&mspc(&["eval", "--data", s(&data), "--model", s(&f.model), "--profile", "custom"]));
    assert!(text.contains("[citation]") && text.contains("bits/subpixel") && text.contains("per-scale"));
}
