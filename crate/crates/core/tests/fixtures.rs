use std::path::{Path, PathBuf};

use flowsmith::runner::{run_search, SearchOverrides};
use flowsmith::verify::{verify, BuiltinBackend, TaskDescriptor};
use serde::Deserialize;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[derive(Deserialize)]
struct Sample {
    file: String,
    class: String,
    passed: usize,
}

#[test]
fn code_samples_verify_as_labelled() {
    let task = TaskDescriptor::load(&root().join("tasks/mux")).unwrap();
    let samples: Vec<Sample> =
        serde_json::from_str(&std::fs::read_to_string(root().join("code/manifest.json")).unwrap()).unwrap();
    for s in samples {
        let code = std::fs::read_to_string(root().join("code").join(&s.file)).unwrap();
        let o = verify(&code, &task, 3, &BuiltinBackend::default()).unwrap();
        o.check_invariants().unwrap();
        match s.class.as_str() {
            "invalid" => assert_eq!(o.v1, 0, "{}", s.file),
            _ => {
                assert_eq!((o.tests_passed, o.tests_total), (s.passed, 10), "{}: {o}", s.file);
                assert_eq!(o.v3, u8::from(s.class == "passing"), "{}", s.file);
            }
        }
    }
}

#[test]
fn golden_meets_reference_metrics() {
    let task = TaskDescriptor::load(&root().join("tasks/mux")).unwrap();
    let o = verify(task.golden.as_ref().unwrap(), &task, 3, &BuiltinBackend::default()).unwrap();
    assert!(o.passes(3));
    let m = o.metrics.unwrap();
    let r = task.reference_metrics.unwrap();
    const TOL: f64 = 1e-12;
    assert!((m.area - r.area).abs() < TOL);
    assert!((m.power.unwrap() - r.power).abs() < TOL);
    assert!((m.timing_slack.unwrap() - r.timing_slack).abs() < TOL);
}

#[test]
fn mux_search_runs_on_canned_outputs() {
    let cfg = root().join("configs/search.toml");
    let raw = std::fs::read_to_string(&cfg).unwrap();
    let o = SearchOverrides { seed: None, tasks: Some(vec!["mux".into()]) };
    let r = run_search(&raw, cfg.parent().unwrap(), &o).unwrap();
    let res = r.tasks[0].result.as_ref().unwrap();
    assert!(res.pareto_frontier.iter().any(|f| f.scores.functional == 1.0), "{}", r.summary);
}
