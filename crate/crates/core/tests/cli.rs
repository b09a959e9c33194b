use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ringformer::dsp::Waveform;
use ringformer::io::{encode_mel, encode_wav, read_mel, read_wav};
use ringformer::Tensor;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ringformer"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tone(path: &Path, secs: f64, hz: f64) -> Waveform {
    let n = (22050.0 * secs) as usize;
    let x = Waveform::new(
        (0..n)
            .map(|i| (0.3 * (2.0 * std::f64::consts::PI * hz * i as f64 / 22050.0).sin()) as f32)
            .collect(),
        22050,
    )
    .unwrap();
    std::fs::write(path, encode_wav(&x).unwrap().0).unwrap();
    x
}

fn data_chunk_samples(path: &Path) -> usize {
    let bytes = std::fs::read(path).unwrap();
    assert_eq!(&bytes[36..40], b"data");
    u32::from_le_bytes(bytes[40..44].try_into().unwrap()) as usize / 2
}

/// Small generator so CLI tests stay fast.
fn tiny_config(dir: &TempDir) -> PathBuf {
    let path = p(dir, "tiny.json");
    std::fs::write(
        &path,
        r#"{"input_channels": 64, "conformer": {"num_heads": 4, "num_layers": 1}}"#,
    )
    .unwrap();
    path
}

#[test]
fn mel_of_one_second_has_87_frames() {
    let dir = TempDir::new().unwrap();
    let (wav, melf) = (p(&dir, "a.wav"), p(&dir, "a.melf"));
    tone(&wav, 1.0, 220.0);
    let out = ok(&["mel", s(&wav), s(&melf)]);
    assert_eq!(out.trim(), "F=80 T=87");
    let m = read_mel(&melf).unwrap();
    assert_eq!(m.shape(), &[80, 87]);
    // Write → read → write is byte-identical.
    assert_eq!(encode_mel(&m).unwrap(), std::fs::read(&melf).unwrap());
}

#[test]
fn silence_maps_to_floor() {
    let dir = TempDir::new().unwrap();
    let (wav, melf) = (p(&dir, "z.wav"), p(&dir, "z.melf"));
    let silent = Waveform::new(vec![0.0; 5000], 22050).unwrap();
    std::fs::write(&wav, encode_wav(&silent).unwrap().0).unwrap();
    ok(&["mel", s(&wav), s(&melf)]);
    let floor = (1e-5f64).ln() as f32;
    assert!(read_mel(&melf).unwrap().data().iter().all(|&v| v == floor));
}

#[test]
fn vocode_length_and_determinism() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(&dir);
    let melf = p(&dir, "m.melf");
    let mel = Tensor::from_fn(&[80, 32], |i| ((i % 17) as f32 - 8.0) * 0.5);
    std::fs::write(&melf, encode_mel(&mel).unwrap()).unwrap();
    let (a, b) = (p(&dir, "a.wav"), p(&dir, "b.wav"));
    ok(&["vocode", s(&melf), s(&a), "--seed", "7", "--config", s(&cfg)]);
    ok(&["vocode", s(&melf), s(&b), "--seed", "7", "--config", s(&cfg)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(data_chunk_samples(&a), 8192);

    let c = p(&dir, "c.wav");
    ok(&["vocode", s(&melf), s(&c), "--seed", "8", "--config", s(&cfg)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn vocode_device_count_within_quantization() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(&dir);
    let melf = p(&dir, "m.melf");
    std::fs::write(
        &melf,
        encode_mel(&Tensor::from_fn(&[80, 40], |i| (i as f32 * 0.37).sin() * 4.0)).unwrap(),
    )
    .unwrap();
    let (a, b) = (p(&dir, "1.wav"), p(&dir, "4.wav"));
    ok(&["vocode", s(&melf), s(&a), "--devices", "1", "--config", s(&cfg)]);
    ok(&["vocode", s(&melf), s(&b), "--devices", "4", "--config", s(&cfg)]);
    let (x, y) = (read_wav(&a).unwrap(), read_wav(&b).unwrap());
    // < 1e-3 float difference can move a sample by at most a few PCM16 steps.
    let diff = x.samples.max_abs_diff(&y.samples).unwrap();
    assert!(diff <= 1e-3 + 2.0 / 32768.0, "{diff}");
}

#[test]
fn vocode_accepts_wav_and_saved_weights() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(&dir);
    let wav = p(&dir, "in.wav");
    tone(&wav, 0.25, 300.0);
    let (a, b, w) = (p(&dir, "a.wav"), p(&dir, "b.wav"), p(&dir, "w.rfw"));
    let out = ok(&[
        "vocode",
        s(&wav),
        s(&a),
        "--seed",
        "3",
        "--config",
        s(&cfg),
        "--save-weights",
        s(&w),
    ]);
    assert!(out.contains("frames=22"), "{out}");
    ok(&["vocode", s(&wav), s(&b), "--weights", s(&w)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(data_chunk_samples(&a), 256 * 22);
}

#[test]
fn bench_csv_follows_memory_law() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(&dir);
    let csv = p(&dir, "b.csv");
    ok(&[
        "bench",
        "--seq-lens",
        "64,96",
        "--block-lens",
        "16,32",
        "--repeats",
        "3",
        "--config",
        s(&cfg),
        s(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "seq_len,block_len,mode,median_ms,peak_score_elements,realtime_factor"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    for r in rows {
        let (t, b): (usize, usize) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        let peak: usize = r[4].parse().unwrap();
        match r[2] {
            "ring" => assert_eq!(peak, t.div_ceil(b) * b * b),
            "vanilla" => assert_eq!(peak, t * t),
            other => panic!("mode {other}"),
        }
        let rtf: f64 = r[5].parse().unwrap();
        assert!(rtf > 0.0 && rtf.is_finite());
    }
    let out = run(&["bench", "--repeats", "2", s(&csv)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn losses_report_identities() {
    let dir = TempDir::new().unwrap();
    let real = p(&dir, "real.wav");
    let x = tone(&real, 0.15, 180.0);
    let neg = p(&dir, "neg.wav");
    std::fs::write(&neg, encode_wav(&x.scaled(-1.0)).unwrap().0).unwrap();
    let (r1, r2, r3) = (p(&dir, "r1.json"), p(&dir, "r2.json"), p(&dir, "r3.json"));
    ok(&["losses", s(&real), s(&real), s(&r1)]);
    ok(&["losses", s(&real), s(&real), s(&r2)]);
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&r1).unwrap()).unwrap();
    assert_eq!(v["l_mag"], 0.0);
    assert_eq!(v["l_fm"], 0.0);
    assert!(v["l_phase"].as_f64().unwrap().abs() < 1e-9);
    for key in ["l_g", "l_d", "l_sd", "l_total", "weights"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    ok(&["losses", s(&real), s(&neg), s(&r3)]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&r3).unwrap()).unwrap();
    assert!((v["l_phase"].as_f64().unwrap() - 2.0).abs() < 1e-4);
}

#[test]
fn metrics_of_identical_files() {
    let dir = TempDir::new().unwrap();
    let wav = p(&dir, "x.wav");
    tone(&wav, 0.5, 150.0);
    let report = p(&dir, "m.json");
    ok(&["metrics", s(&wav), s(&wav), s(&report)]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["mcd_db"], 0.0);
    assert_eq!(v["f0_pearson"], 1.0);
    assert!(v["voiced_frames"].as_u64().unwrap() > 0);
    assert!(v["total_frames"].as_u64().unwrap() >= v["voiced_frames"].as_u64().unwrap());
}

#[test]
fn selftest_passes_and_catches_corruption() {
    let out = run(&["selftest", "--quick"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS ring_exactness"));
    let bad = run(&["selftest", "--quick", "--corrupt", "istft"]);
    assert_ne!(bad.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("istft_round_trip"));
}

#[test]
fn exit_codes_by_error_kind() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let missing = p(&dir, "missing.wav");
    assert_eq!(run(&["mel", s(&missing), s(&p(&dir, "o.melf"))]).status.code(), Some(3));

    let garbage = p(&dir, "garbage.wav");
    std::fs::write(&garbage, b"RIFF\0\0\0\0WAVEjunk").unwrap();
    let out = run(&["mel", s(&garbage), s(&p(&dir, "o.melf"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));

    let bad_cfg = p(&dir, "bad.json");
    std::fs::write(&bad_cfg, r#"{"output_channels": 64}"#).unwrap();
    let melf = p(&dir, "m.melf");
    std::fs::write(&melf, encode_mel(&Tensor::zeros(&[80, 2])).unwrap()).unwrap();
    let out = run(&["vocode", s(&melf), s(&p(&dir, "o.wav")), "--config", s(&bad_cfg)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("output_channels"));

    let wrong_bins = p(&dir, "w.melf");
    std::fs::write(&wrong_bins, encode_mel(&Tensor::zeros(&[40, 2])).unwrap()).unwrap();
    let cfg = tiny_config(&dir);
    let out = run(&["vocode", s(&wrong_bins), s(&p(&dir, "o.wav")), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(4));
}
