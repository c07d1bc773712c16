//! End-to-end runs of the binary: exit codes, determinism, file formats.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hyptsp"))
}

fn run_ok(args: &[&str]) {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Result files compare equal apart from the timing field.
fn result_sans_timing(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timing_ms");
    v
}

#[test]
fn generate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for path in [&a, &b] {
        run_ok(&[
            "generate", "--kind", "ball", "--n", "6", "--scale", "1.2", "--seed", "42", "--out",
            path.to_str().unwrap(),
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn tsp_run_with_oracle_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    let res = dir.path().join("res.json");
    let svg = dir.path().join("fig.svg");
    run_ok(&[
        "generate", "--n", "5", "--scale", "1.0", "--seed", "7", "--out",
        inst.to_str().unwrap(),
    ]);
    run_ok(&[
        "run", "--mode", "tsp", "--in", inst.to_str().unwrap(), "--out", res.to_str().unwrap(),
        "--epsilon", "0.5", "--shifts", "4", "--seed", "1", "--oracle", "--svg",
        svg.to_str().unwrap(),
    ]);
    let v = result_sans_timing(&res);
    let ratio = v["ratio"].as_f64().unwrap();
    assert!(ratio >= 1.0 - 1e-9, "ratio {ratio}");
    assert_eq!(v["shifts"].as_array().unwrap().len(), 4);
    let doc = std::fs::read_to_string(&svg).unwrap();
    assert!(doc.starts_with("<svg") && doc.trim_end().ends_with("</svg>"));

    // report prints a summary
    let out = bin().args(["report", "--in", res.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("best length") && text.contains("ratio"));
}

#[test]
fn identical_config_gives_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    run_ok(&["generate", "--n", "6", "--seed", "9", "--out", inst.to_str().unwrap()]);
    let r1 = dir.path().join("r1.json");
    let r2 = dir.path().join("r2.json");
    for res in [&r1, &r2] {
        run_ok(&[
            "run", "--mode", "tsp", "--in", inst.to_str().unwrap(), "--out",
            res.to_str().unwrap(), "--shifts", "3", "--seed", "5",
        ]);
    }
    assert_eq!(result_sans_timing(&r1), result_sans_timing(&r2));
}

#[test]
fn steiner_and_harness_modes_run() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    run_ok(&["generate", "--n", "4", "--scale", "0.9", "--seed", "3", "--out", inst.to_str().unwrap()]);
    let res = dir.path().join("res.json");
    run_ok(&[
        "run", "--mode", "steiner", "--in", inst.to_str().unwrap(), "--out",
        res.to_str().unwrap(), "--shifts", "2", "--seed", "1",
    ]);
    let v = result_sans_timing(&res);
    assert!(v["best_length"].as_f64().unwrap() > 0.0);

    let res2 = dir.path().join("res2.json");
    run_ok(&[
        "run", "--mode", "harness", "--in", inst.to_str().unwrap(), "--out",
        res2.to_str().unwrap(), "--shifts", "3", "--seed", "2",
    ]);
    let v = result_sans_timing(&res2);
    let harness = v["harness"].as_array().unwrap();
    assert_eq!(harness.len(), 3);
    for h in harness {
        assert!(h["fixed_grid_ok"].as_bool().unwrap());
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // invalid input file: exit 2
    let missing = dir.path().join("nope.json");
    let out = bin()
        .args(["run", "--mode", "tsp", "--in", missing.to_str().unwrap(), "--out",
               dir.path().join("r.json").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // malformed instance: exit 2
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"dimension\": 2, \"model\": \"half-space\", \"points\": [[0, -1]]}")
        .unwrap();
    let out = bin()
        .args(["run", "--mode", "tsp", "--in", bad.to_str().unwrap(), "--out",
               dir.path().join("r.json").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // shift enumeration over the cap: exit 3, count reported
    let inst = dir.path().join("inst.json");
    run_ok(&["generate", "--n", "8", "--scale", "2.0", "--seed", "1", "--out", inst.to_str().unwrap()]);
    let out = bin()
        .args(["run", "--mode", "tsp", "--in", inst.to_str().unwrap(), "--out",
               dir.path().join("r.json").to_str().unwrap(), "--shifts", "enumerate",
               "--shift-cap", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shifts"));
}

#[test]
fn n2_best_doubles_the_geodesic() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("two.json");
    std::fs::write(
        &inst,
        "{\"dimension\": 2, \"model\": \"half-space\", \"points\": [[0.0, 1.0], [0.6, 1.5]]}",
    )
    .unwrap();
    let res = dir.path().join("res.json");
    run_ok(&[
        "run", "--mode", "tsp", "--in", inst.to_str().unwrap(), "--out", res.to_str().unwrap(),
        "--shifts", "4", "--seed", "11", "--oracle",
    ]);
    let v = result_sans_timing(&res);
    // the oracle for two points is exactly the doubled geodesic; every shift
    // lands within the portal detour of it
    let ratio = v["ratio"].as_f64().unwrap();
    assert!(ratio >= 1.0 - 1e-9 && ratio <= 1.05, "ratio {ratio}");
}
