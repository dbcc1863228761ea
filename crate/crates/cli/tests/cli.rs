use std::path::Path;
use std::process::{Command, Output};

fn playrep(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_playrep"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

const SYNTH: &str = r#"
stage = "synthgen"

[synth]
image_size = 32
length = [6, 8]
min_contact_fraction = 0.0

[synth_counts]
play = 2
demos = 2
heldout = 1
"#;

#[test]
fn help_lists_every_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let out = playrep(&["--help"], tmp.path());
    assert!(out.status.success());
    let help = text(&out.stdout);
    for cmd in [
        "pretrain",
        "train-bc",
        "eval",
        "ablate",
        "synthgen",
        "import-weights",
        "report",
        "runs",
    ] {
        assert!(help.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn synthgen_registers_a_run_and_refuses_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("synth.toml"), SYNTH).unwrap();
    let first = playrep(&["synthgen", "--config", "synth.toml", "--out", "runs"], tmp.path());
    assert!(first.status.success(), "{}", text(&first.stderr));
    let stdout = text(&first.stdout);
    assert!(stdout.contains("Completed"), "{stdout}");
    assert!(tmp.path().join("runs/registry.jsonl").exists());

    let again = playrep(&["synthgen", "--config", "synth.toml", "--out", "runs"], tmp.path());
    assert_eq!(again.status.code(), Some(2));
    assert!(text(&again.stderr).contains("--force"));

    let forced = playrep(
        &["synthgen", "--config", "synth.toml", "--out", "runs", "--force"],
        tmp.path(),
    );
    assert!(forced.status.success());
    assert!(text(&forced.stdout).contains("-r1"));

    let seeded = playrep(
        &["synthgen", "--config", "synth.toml", "--out", "runs", "--seed", "4"],
        tmp.path(),
    );
    assert!(seeded.status.success());

    let runs = playrep(&["runs", "--out", "runs", "--stage", "synthgen"], tmp.path());
    assert!(runs.status.success());
    assert_eq!(text(&runs.stdout).lines().count(), 3);
    let none = playrep(&["runs", "--out", "runs", "--stage", "eval"], tmp.path());
    assert_eq!(text(&none.stdout).lines().count(), 0);
}

#[test]
fn mismatched_stage_and_invalid_configs_exit_with_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("synth.toml"), SYNTH).unwrap();
    let out = playrep(&["pretrain", "--config", "synth.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("declares stage synthgen"));

    let out = playrep(&["pretrain", "--out", "runs"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("data.play"));
    assert!(!tmp.path().join("runs/registry.jsonl").exists());

    std::fs::write(tmp.path().join("bad.toml"), "stage = \"eval\"\nunknown_key = 3\n").unwrap();
    let out = playrep(&["eval", "--config", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    let out = playrep(&["runs", "--out", "runs", "--init", "nonsense"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
