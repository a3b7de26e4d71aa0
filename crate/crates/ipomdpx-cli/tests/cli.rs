//! End-to-end checks of the `ipomdpx` binary: exit codes, output files,
//! and determinism of the solve path. The expensive `simulate` pipeline is
//! exercised only through its fast argument-validation failures; the full
//! experiment is covered by the library's acceptance suite.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ipomdpx");

const TOY_MODEL: &str = r#"
(variables (LOC left right))
(observations (HEAR left right))
(discount 0.9)
(action listen
  (observe HEAR
    (HEAR (left  (LOC' (left (0.85)) (right (0.15))))
          (right (LOC' (left (0.15)) (right (0.85))))))
  (reward (-1)))
(action open-left
  (transition LOC
    (LOC' (left (0.5)) (right (0.5))))
  (observe HEAR (HEAR (left (0.5)) (right (0.5))))
  (reward (LOC (left (-20)) (right (8)))))
(action open-right
  (transition LOC
    (LOC' (left (0.5)) (right (0.5))))
  (observe HEAR (HEAR (left (0.5)) (right (0.5))))
  (reward (LOC (left (8)) (right (-20)))))
(belief (LOC (left (0.5)) (right (0.5))))
"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("IPOMDPX_PARAMS")
        .output()
        .expect("failed to launch ipomdpx binary")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("binary terminated by signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn validate_accepts_well_formed_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("toy.ipx");
    std::fs::write(&model, TOY_MODEL).unwrap();
    let out = run(&["validate", "--model", model.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("valid level-0"), "unexpected output: {text}");
    assert!(text.contains("2 states"), "unexpected output: {text}");
}

#[test]
fn validate_rejects_malformed_and_missing_models() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("broken.ipx");
    // Probabilities that do not sum to one must be rejected.
    std::fs::write(&model, TOY_MODEL.replace("(left (0.85))", "(left (0.95))")).unwrap();
    let out = run(&["validate", "--model", model.to_str().unwrap()]);
    assert_eq!(code(&out), 2);

    let out = run(&["validate", "--model", dir.path().join("nope.ipx").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn solve_level0_is_deterministic_and_inspectable() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("toy.ipx");
    std::fs::write(&model, TOY_MODEL).unwrap();

    for sub in ["a", "b"] {
        let out = run(&[
            "solve",
            "--model",
            model.to_str().unwrap(),
            "--level",
            "0",
            "--points",
            "60",
            "--out",
            dir.path().join(sub).to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a/policy.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/policy.json")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "repeated solves must produce byte-identical policies");

    let policy = dir.path().join("a/policy.json");
    let out = run(&["inspect", "--policy", policy.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("alpha-vectors over 2 states"));

    // Evaluating a belief reports the greedy action; at certainty the
    // correct door is opened.
    let belief = dir.path().join("belief.json");
    std::fs::write(&belief, "[1.0, 0.0]").unwrap();
    let out = run(&[
        "inspect",
        "--policy",
        policy.to_str().unwrap(),
        "--belief",
        belief.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("best action open-right"), "{}", stdout(&out));

    // A belief of the wrong dimension is a validation error.
    std::fs::write(&belief, "[0.5, 0.2, 0.3]").unwrap();
    let out = run(&[
        "inspect",
        "--policy",
        policy.to_str().unwrap(),
        "--belief",
        belief.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn solve_rejects_wrong_level() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("toy.ipx");
    std::fs::write(&model, TOY_MODEL).unwrap();
    let out = run(&[
        "solve",
        "--model",
        model.to_str().unwrap(),
        "--level",
        "1",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let out = run(&[
        "solve",
        "--model",
        model.to_str().unwrap(),
        "--level",
        "7",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_rejects_bad_arguments_before_solving() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "simulate",
        "--defender",
        "bogus",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let out = run(&["simulate", "--trials", "0", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let out = run(&[
        "simulate",
        "--aware-prior",
        "1.5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_rejects_bad_parameter_file() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("params.toml");
    std::fs::write(&params, "p_find_sdata = 1.5\n").unwrap();
    let out = Command::new(BIN)
        .args(["simulate", "--out", dir.path().join("o").to_str().unwrap()])
        .env("IPOMDPX_PARAMS", &params)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exported_domain_files_are_pinned() {
    // The shipped `domains/` directory must stay in lockstep with the
    // builders; regenerate it with `ipomdpx export-domain` after domain
    // changes.
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["export-domain", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../domains");
    for name in [
        "data_exfil.ipx",
        "data_manipulator.ipx",
        "persistent_threat.ipx",
        "defender.ipx",
        "params.toml",
    ] {
        let generated = std::fs::read(dir.path().join(name)).unwrap();
        let pinned = std::fs::read(shipped.join(name))
            .unwrap_or_else(|e| panic!("missing shipped domain file {name}: {e}"));
        assert_eq!(generated, pinned, "domains/{name} is stale");
    }

    // Every exported document must itself pass validation.
    for name in ["data_exfil.ipx", "data_manipulator.ipx", "persistent_threat.ipx", "defender.ipx"] {
        let out = run(&["validate", "--model", dir.path().join(name).to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{name} failed validation");
    }
}
