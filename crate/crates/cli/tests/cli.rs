use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ltlm_cli::cli::read_words;
use ltlm_model::{LtLm, LtLmConfig};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn ltlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltlm"))
        .args(args)
        .env_remove("LTLM_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn toy_config() -> PathBuf {
    fixtures().join("toy.toml")
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&ltlm(&["--help"])), 0);
}

#[test]
fn bad_usage_and_config_exit_2() {
    assert_eq!(code(&ltlm(&["no-such-command"])), 2);
    assert_eq!(code(&ltlm(&["make-world", "--out", "x"])), 2, "no config");

    let dir = tempfile::tempdir().unwrap();
    let no_seed = dir.path().join("no_seed.toml");
    std::fs::write(&no_seed, "[world]\nleak = 0.4\n").unwrap();
    let out = dir.path().join("w");
    assert_eq!(code(&ltlm(&["--config", s(&no_seed), "make-world", "--out", s(&out)])), 2);

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "seed = 1\n[world]\nleakage = 0.4\n").unwrap();
    assert_eq!(code(&ltlm(&["--config", s(&unknown), "make-world", "--out", s(&out)])), 2);

    let cfg = toy_config();
    let bad = ltlm(&["--config", s(&cfg), "--set", "ltlm.heads=5", "make-world", "--out", s(&out)]);
    assert_eq!(code(&bad), 2);
    assert!(!out.exists());
}

#[test]
fn bad_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let words = fixtures().join("toy_world/words.txt");
    assert_eq!(code(&ltlm(&["wer", "--hyp", s(&missing), "--ref", s(&missing)])), 3);

    let lat = dir.path().join("bad.lat.txt");
    std::fs::write(&lat, "utt1\n0 1 suk 1.0,2.0\n0 1 nonsense\n\n").unwrap();
    assert_eq!(code(&ltlm(&["stats", "--lattices", s(&lat), "--words", s(&words)])), 3);

    let texts = dir.path().join("texts.txt");
    std::fs::write(&texts, "u1\tsuk notaword\n").unwrap();
    let cfg = toy_config();
    let o = ltlm(&["--config", s(&cfg), "latgen", "--texts", s(&texts), "--out", s(dir.path())]);
    assert_eq!(code(&o), 3);
}

#[test]
fn runtime_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let texts = dir.path().join("empty.txt");
    std::fs::write(&texts, "").unwrap();
    let cfg = toy_config();
    let o = ltlm(&["--config", s(&cfg), "latgen", "--texts", s(&texts), "--out", s(dir.path())]);
    assert_eq!(code(&o), 4);
}

#[test]
fn wer_of_identical_files_is_zero() {
    let eval = fixtures().join("toy_world/eval.txt");
    let o = ltlm(&["wer", "--hyp", s(&eval), "--ref", s(&eval)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("WER 0.00% [ 0 / "), "{}", stdout(&o));
}

#[test]
fn zero_l2_rescoring_reproduces_first_pass() {
    let dir = tempfile::tempdir().unwrap();
    let texts = dir.path().join("some.txt");
    let eval = std::fs::read_to_string(fixtures().join("toy_world/eval.txt")).unwrap();
    std::fs::write(&texts, eval.lines().take(12).map(|l| format!("{l}\n")).collect::<String>()).unwrap();
    let cfg = toy_config();
    let o = ltlm(&["--config", s(&cfg), "latgen", "--texts", s(&texts), "--out", s(dir.path()), "--stem", "dev", "--models", "true"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let words = dir.path().join("words.txt");
    let lat = dir.path().join("dev.lat.txt");
    let reference = dir.path().join("dev.ref");
    let table = read_words(&words).unwrap();
    let model = LtLm::new(LtLmConfig {
        vocab_size: table.id_bound(),
        d_model: 8,
        layers: 1,
        heads: 2,
        ff_dim: 16,
        max_positions: 256,
        dropout: 0.0,
        seed: 3,
    })
    .unwrap();
    let ckpt = dir.path().join("tiny.ckpt");
    model.save(&ckpt).unwrap();

    let report = dir.path().join("out/l2zero.report");
    let o = ltlm(&[
        "rescore", "--mode", "single-shot", "--lattices", s(&lat), "--words", s(&words), "--model", s(&ckpt), "--out",
        s(&report), "--ref", s(&reference), "--l2", "0",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    let utts: Vec<&str> = text.lines().filter(|l| l.starts_with("utt\t")).collect();
    assert_eq!(utts.len(), 12);
    for line in utts {
        let field = |k: &str| line.split('\t').find_map(|f| f.strip_prefix(k)).unwrap().to_string();
        assert_eq!(field("hyp="), field("first_pass="), "{line}");
        assert_eq!(field("cost="), field("first_pass_cost="), "{line}");
    }
    assert!(report.parent().unwrap().join("manifest.json").exists());

    let o = ltlm(&["oracle-wer", "--lattices", s(&lat), "--ref", s(&reference), "--words", s(&words)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("Oracle WER "), "{}", stdout(&o));
}

#[test]
fn bundled_world_matches_a_fresh_build() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("world");
    let cfg = toy_config();
    assert_eq!(code(&ltlm(&["--config", s(&cfg), "make-world", "--out", s(&out)])), 0);
    let bundled = fixtures().join("toy_world");
    let mut names: Vec<String> = std::fs::read_dir(&bundled)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    assert_eq!(names.len(), 9);
    for n in names {
        let a = std::fs::read(bundled.join(&n)).unwrap();
        let b = std::fs::read(out.join(&n)).unwrap();
        assert!(a == b, "{n} differs from a fresh build");
    }
}
