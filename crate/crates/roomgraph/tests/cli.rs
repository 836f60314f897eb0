use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use roomgraph::dataset;
use roomgraph::io::{ply, scene, tum};
use roomgraph_core::geometry::{ate_rmse, AlignmentMode, AteOptions};
use roomgraph_core::pgo::g2o::G2oGraph;

fn roomgraph(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_roomgraph"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, seed: &str) {
    ok(&roomgraph(&["simulate", "--seed", seed, "--out", s(dir)], &[]));
}

#[test]
fn simulate_run_eval_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, run) = (tmp.path().join("in"), tmp.path().join("run"));
    simulate(&input, "3");
    for f in [
        dataset::FEATURES_BIN,
        dataset::FEATURES_JSON,
        dataset::GT_TRAJECTORY,
        dataset::GT_CLOUD,
        dataset::TRACKLETS,
        dataset::WORLD,
    ] {
        assert!(input.join(f).is_file(), "{f} missing");
    }
    ok(&roomgraph(&["run", "--input", s(&input), "--out", s(&run)], &[]));
    let graph = scene::load(&run).unwrap();
    assert_eq!(graph.rooms().len(), 5);
    assert!(graph.room_edges().len() >= 4);
    for id in graph.rooms().keys() {
        assert!(run.join(scene::room_cloud_path(*id)).is_file());
    }
    assert!(!tum::read_trajectory(&run.join(dataset::TRAJECTORY)).unwrap().is_empty());

    let eval = roomgraph(&["eval", "--run", s(&run), "--gt", s(&input)], &[]);
    ok(&eval);
    let table = String::from_utf8(eval.stdout).unwrap();
    assert!(table.contains("ATE (m)") && table.contains("precision"), "{table}");
    assert!(run.join(dataset::REPORT).is_file());

    let csv = roomgraph(&["eval", "--run", s(&run), "--gt", s(&input), "--csv"], &[]);
    ok(&csv);
    let csv = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some(roomgraph::report::CSV_HEADER));
    assert_eq!(csv.lines().count(), 1 + graph.rooms().len());
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let out = roomgraph(&["run", "--input", s(&missing), "--out", s(&tmp.path().join("o"))], &[]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("does not exist") && stderr.contains("usage"),
        "{stderr}"
    );
    assert!(out.stdout.is_empty());

    assert_eq!(roomgraph(&["frobnicate"], &[]).status.code(), Some(1));
    assert_eq!(roomgraph(&["run", "--input"], &[]).status.code(), Some(1));
    let bad_format = roomgraph(&["export", "--run", s(tmp.path()), "--format", "obj"], &[]);
    assert_eq!(bad_format.status.code(), Some(1));
    assert_eq!(roomgraph(&["--help"], &[]).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    // An existing but empty input directory has no frame stream.
    let out = roomgraph(
        &["run", "--input", s(tmp.path()), "--out", s(&tmp.path().join("o"))],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "batch_size = 1\n").unwrap();
    let out = roomgraph(
        &["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));
}

#[test]
fn runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    simulate(&input, "8");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&roomgraph(&["run", "--input", s(&input), "--out", s(&a)], &[]));
    ok(&roomgraph(&["run", "--input", s(&input), "--out", s(&b)], &[]));
    for f in [scene::SCENE_FILE, dataset::TRAJECTORY] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn g2o_and_ply_exports_parse() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, run) = (tmp.path().join("in"), tmp.path().join("run"));
    simulate(&input, "2");
    let env = [("ROOMGRAPH_STAGES__OBJECTS", "false")];
    ok(&roomgraph(&["run", "--input", s(&input), "--out", s(&run)], &env));
    ok(&roomgraph(&["export", "--run", s(&run), "--format", "g2o"], &[]));
    let graph = scene::load(&run).unwrap();
    assert_eq!(graph.objects().len(), 0);

    let text = fs::read_to_string(run.join(dataset::EXPORT_DIR).join("graph.g2o")).unwrap();
    let g2o = G2oGraph::parse(&text).unwrap();
    assert_eq!(g2o.vertices.len(), graph.rooms().len());
    let estimates: usize = graph.room_edges().values().map(|e| e.estimates.len()).sum();
    assert_eq!(g2o.edges.len(), estimates);
    for (id, room) in graph.rooms() {
        let gap = (g2o.vertices[id].inverse() * room.reference_pose).log().unwrap().norm();
        assert!(gap < 1e-12, "{gap}");
    }

    let out = tmp.path().join("map.ply");
    ok(&roomgraph(
        &["export", "--run", s(&run), "--format", "ply", "--out", s(&out)],
        &[],
    ));
    let map = ply::read(&out).unwrap();
    let total: usize = graph.rooms().values().map(|r| r.point_cloud.len()).sum();
    assert_eq!(map.len(), total);
    assert!(map.labels().is_some());
}

#[test]
fn recorded_replay_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, first, second) = (tmp.path().join("in"), tmp.path().join("a"), tmp.path().join("b"));
    simulate(&input, "5");
    let env = [("ROOMGRAPH_STAGES__OBJECTS", "false")];
    ok(&roomgraph(
        &["run", "--input", s(&input), "--out", s(&first), "--record-replay"],
        &env,
    ));

    // A replay-only input: the frame stream plus recorded reconstructions.
    let replay_input = tmp.path().join("replay_in");
    fs::create_dir_all(replay_input.join(dataset::REPLAY_DIR)).unwrap();
    for f in [dataset::FEATURES_BIN, dataset::FEATURES_JSON, dataset::CUES] {
        fs::copy(input.join(f), replay_input.join(f)).unwrap();
    }
    for entry in fs::read_dir(first.join(dataset::REPLAY_DIR)).unwrap() {
        let entry = entry.unwrap();
        fs::copy(
            entry.path(),
            replay_input.join(dataset::REPLAY_DIR).join(entry.file_name()),
        )
        .unwrap();
    }
    ok(&roomgraph(
        &["run", "--input", s(&replay_input), "--out", s(&second)],
        &env,
    ));

    let (ga, gb) = (scene::load(&first).unwrap(), scene::load(&second).unwrap());
    assert_eq!(ga.rooms().len(), gb.rooms().len());
    assert_eq!(ga.room_edges().len(), gb.room_edges().len());
    let ta = tum::read_trajectory(&first.join(dataset::TRAJECTORY)).unwrap();
    let tb = tum::read_trajectory(&second.join(dataset::TRAJECTORY)).unwrap();
    assert_eq!(ta.len(), tb.len());
    let opts = AteOptions {
        alignment: AlignmentMode::None,
        ..Default::default()
    };
    assert!(ate_rmse(&tb, &ta, opts).unwrap().0 < 1e-9);
    let summary = fs::read_to_string(second.join(dataset::RUN_SUMMARY)).unwrap();
    assert!(summary.contains("\"provider\": \"replay\""));
}
