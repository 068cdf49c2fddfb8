use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gpr_core::io::{self, BScanMeta, RunConfig};
use gpr_core::network::{NetworkConfig, Variant};
use gpr_core::scene::{sample_scene, Mask};

fn gpr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpr"))
        .args(["--threads", "1"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(o: &Output, key: &str) -> String {
    let prefix = format!("{key}=");
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix(&prefix).map(str::to_owned))
        .unwrap_or_else(|| panic!("no `{key}` in\n{}", stdout(o)))
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.scene.nx = 40;
    c.scene.ny = 32;
    c.scene.cell = 0.01;
    c.scan.tx_rx_offset = 0.05;
    c.scan.scan_step = 0.02;
    c.scan.trace_count = 4;
    c.scan.time_window = 3e-9;
    c.network = NetworkConfig::tiny(Variant::Fusion, 16, 2);
    c.training.test_records = 2;
    c.training.epochs = 2;
    c
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(ws.path("config.json"), small_config().to_json()).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn gen_data(&self, out: &str, n: usize, seed: u64) -> Output {
        let (n, seed) = (n.to_string(), seed.to_string());
        gpr(&["gen-data", "--config", &self.arg("config.json"), "--n", &n, "--seed", &seed, "--out", &self.arg(out)])
    }

    fn trained(&self) -> Output {
        ok(self.gen_data("data", 6, 3));
        ok(gpr(&[
            "train",
            "--config",
            &self.arg("config.json"),
            "--data",
            &self.arg("data"),
            "--out",
            &self.arg("ckpt"),
        ]))
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(gpr(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(gpr(&["render", "--in", "x"]).status.code(), Some(1));
    assert_eq!(gpr(&["gen-data", "--n", "many", "--out", "x"]).status.code(), Some(1));
    assert_eq!(gpr(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_two() {
    let ws = Workspace::new();
    let o = gpr(&["eval", "--ckpt", &ws.arg("missing"), "--data", &ws.arg("missing")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    fs::write(ws.path("bad.json"), r#"{"scene": {"nx": 40, "wat": 1}}"#).unwrap();
    let o = gpr(&["gen-data", "--config", &ws.arg("bad.json"), "--n", "1", "--out", &ws.arg("d")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_data_is_byte_reproducible() {
    let ws = Workspace::new();
    let o = ok(ws.gen_data("a", 3, 9));
    assert_eq!(value(&o, "generated"), "3");
    assert_eq!(value(&o, "config_hash"), small_config().hash());
    ok(ws.gen_data("b", 3, 9));
    let (a, b) = (dir_bytes(&ws.path("a")), dir_bytes(&ws.path("b")));
    assert_eq!(a.len(), 10);
    assert_eq!(a, b);
    // rerunning over a finished directory only skips
    let again = ok(ws.gen_data("a", 3, 9));
    assert_eq!(value(&again, "skipped"), "3");
    assert_eq!(dir_bytes(&ws.path("a")), b);
}

#[test]
fn train_eval_finetune_predict_render() {
    let ws = Workspace::new();
    let t = ws.trained();
    assert!(value(&t, "mre").parse::<f64>().unwrap().is_finite());
    assert_eq!(value(&t, "steps"), "2");

    let eval = |extra: &[&str]| {
        let (ckpt, data) = (ws.arg("ckpt"), ws.arg("data"));
        let mut args = vec!["eval", "--ckpt", &ckpt, "--data", &data];
        args.extend_from_slice(extra);
        ok(gpr(&args))
    };
    assert_eq!(value(&eval(&["--targets-as-predictions"]), "mre"), "0.000000");
    assert_eq!(value(&eval(&["--all"]), "counted"), "6");
    assert_eq!(value(&eval(&[]), "mre"), value(&t, "mre"));

    // fine-tuning must use a smaller rate than pre-training
    let ft = |lr: &str| {
        gpr(&[
            "finetune", "--ckpt", &ws.arg("ckpt"), "--data", &ws.arg("data"), "--lr", lr, "--out", &ws.arg("ft"),
            "--epochs", "1",
        ])
    };
    assert_eq!(ft("1e-2").status.code(), Some(2));
    ok(ft("1e-4"));
    assert!(ws.path("ft").join("weights.bin").exists());

    let cfg = small_config();
    let spec = sample_scene(&cfg.scene, 77, 0).unwrap();
    io::write_json(&ws.path("scene.json"), &spec).unwrap();
    let p = ok(gpr(&["predict", "--ckpt", &ws.arg("ckpt"), "--scene", &ws.arg("scene.json"), "--out", &ws.arg("p.f32")]));
    let (meta, data) = io::read_bscan(&ws.path("p.f32")).unwrap();
    assert_eq!((meta.cols, value(&p, "cols")), (4, "4".to_string()));
    assert_eq!(meta.config_hash, cfg.hash());
    assert!(data.iter().all(|v| v.is_finite()));

    let mask = Mask {
        nx: cfg.scene.nx,
        ny: cfg.scene.ny,
        cells: (0..cfg.scene.nx * cfg.scene.ny).map(|k| k % cfg.scene.ny > 20 && k / cfg.scene.ny > 15).collect(),
    };
    fs::write(ws.path("mask.pgm"), mask.to_pgm()).unwrap();
    ok(gpr(&[
        "predict", "--ckpt", &ws.arg("ckpt"), "--scene", &ws.arg("mask.pgm"), "--eps", "20", "--out", &ws.arg("m.f32"),
    ]));

    ok(gpr(&["render", "--in", &ws.arg("p.f32"), "--out", &ws.arg("p.pgm")]));
    let img = fs::read(ws.path("p.pgm")).unwrap();
    let header = format!("P5\n4 {}\n255\n", meta.rows);
    assert!(img.starts_with(header.as_bytes()));
    assert_eq!(img.len(), header.len() + meta.rows * 4);

    let b = ok(gpr(&["bench", "--ckpt", &ws.arg("ckpt"), "--scene", &ws.arg("scene.json"), "--runs", "1"]));
    assert!(value(&b, "speedup").parse::<f64>().unwrap() > 0.0);
}

#[test]
fn training_is_bitwise_reproducible() {
    let ws = Workspace::new();
    ws.trained();
    ok(gpr(&[
        "train",
        "--config",
        &ws.arg("config.json"),
        "--data",
        &ws.arg("data"),
        "--out",
        &ws.arg("ckpt2"),
    ]));
    assert_eq!(dir_bytes(&ws.path("ckpt")).len(), 2);
    let strip = |files: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        // wall-clock time is the one field allowed to differ
        files
            .into_iter()
            .map(|(n, b)| {
                if n == "model.json" {
                    let text = String::from_utf8(b).unwrap();
                    let kept: String = text.lines().filter(|l| !l.contains("wall_clock_s")).collect();
                    (n, kept.into_bytes())
                } else {
                    (n, b)
                }
            })
            .collect()
    };
    assert_eq!(strip(dir_bytes(&ws.path("ckpt"))), strip(dir_bytes(&ws.path("ckpt2"))));
}

#[test]
fn render_of_silence_is_mid_gray() {
    let ws = Workspace::new();
    io::write_bscan(&ws.path("z.f32"), &[0.0; 12], &BScanMeta::new(3, 4, 1e-11, "h".into())).unwrap();
    ok(gpr(&["render", "--in", &ws.arg("z.f32"), "--out", &ws.arg("z.pgm")]));
    let img = fs::read(ws.path("z.pgm")).unwrap();
    assert!(img.starts_with(b"P5\n4 3\n255\n"));
    assert!(img[img.len() - 12..].iter().all(|&v| v == 127));
}

#[test]
fn simulate_writes_a_bscan() {
    let ws = Workspace::new();
    let spec = sample_scene(&small_config().scene, 4, 1).unwrap();
    io::write_json(&ws.path("s.json"), &spec).unwrap();
    let o = ok(gpr(&["simulate", "--config", &ws.arg("config.json"), "--scene", &ws.arg("s.json"), "--out", &ws.arg("s.f32")]));
    let (meta, data) = io::read_bscan(&ws.path("s.f32")).unwrap();
    assert_eq!(value(&o, "rows"), meta.rows.to_string());
    assert!(data.iter().any(|&v| v != 0.0));
}
