use std::path::Path;
use std::process::{Command, Output};

fn speller(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speller"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    std::fs::write(&p, "seed = 5\n[data]\nsubjects = [4]\nblocks = 1\n").unwrap();
    p.display().to_string()
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&speller(&[], tmp.path())), 1);
    assert_eq!(code(&speller(&["synth", "--bogus"], tmp.path())), 1);
    assert_eq!(code(&speller(&["transmogrify"], tmp.path())), 1);
    assert_eq!(code(&speller(&["synth", "--seed", "x"], tmp.path())), 1);
    assert_eq!(code(&speller(&["synth", "--config", "missing.toml"], tmp.path())), 1);
    std::fs::write(tmp.path().join("bad.toml"), "[fusion]\nalphas = [2.0]\n").unwrap();
    assert_eq!(code(&speller(&["fuse-eval", "--config", "bad.toml"], tmp.path())), 1);
    std::fs::write(tmp.path().join("typo.toml"), "sede = 3\n").unwrap();
    assert_eq!(code(&speller(&["synth", "--config", "typo.toml"], tmp.path())), 1);
    assert_eq!(code(&speller(&["synth", "--seed", "18446744073709551615"], tmp.path())), 1);
}

#[test]
fn help_exits_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let o = speller(&["--help"], tmp.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["synth", "train-eegnet", "train-charrnn", "ablate", "stitch-words", "fuse-eval"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn runtime_failures_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    // no synthesized data under the default data directory
    assert_eq!(code(&speller(&["train-eegnet", "--out", "t"], tmp.path())), 2);
}

#[test]
fn synth_defaults_out_and_reruns_from_its_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    assert_eq!(code(&speller(&["synth", "--config", &cfg, "--threads", "1"], tmp.path())), 0);
    let first = tmp.path().join("runs/synth");
    let manifest = std::fs::read_to_string(first.join("segments.manifest")).unwrap();
    assert_eq!(manifest.lines().count(), 40);

    let echo = first.join("config.toml").display().to_string();
    assert_eq!(code(&speller(&["synth", "--config", &echo, "--out", "again"], tmp.path())), 0);
    for name in ["segments.manifest", "segments/s04/t07_b01.eft", "config.toml"] {
        assert_eq!(
            std::fs::read(first.join(name)).unwrap(),
            std::fs::read(tmp.path().join("again").join(name)).unwrap(),
            "{name}"
        );
    }

    assert_eq!(code(&speller(&["synth", "--config", &cfg, "--seed", "6", "--out", "other"], tmp.path())), 0);
    let echoed = std::fs::read_to_string(tmp.path().join("other/config.toml")).unwrap();
    assert!(echoed.lines().any(|l| l == "seed = 6"));
    assert_ne!(
        std::fs::read(first.join("segments/s04/t07_b01.eft")).unwrap(),
        std::fs::read(tmp.path().join("other/segments/s04/t07_b01.eft")).unwrap()
    );
}
