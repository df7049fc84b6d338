use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use todsim_acute::store::{write_tasks, ANNOTATIONS_FILE};
use todsim_acute::{build_tasks, router, ControlSpec, EvalStore, EvalTask, ServiceConfig, SessionPolicy};
use todsim_core::dialogue::{ApiCall, Episode, Fold, Origin, Speaker, Turn, DONE};

const TOKEN: &str = "s3cret";

fn episode(g: &ApiCall, system: &str) -> Episode {
    Episode {
        goal: g.clone(),
        schema: None,
        turns: vec![
            Turn::new(Speaker::User, format!("flowers for {}", g.get("name").unwrap())),
            Turn::new(Speaker::AssistantCall, g.to_string()),
            Turn::new(Speaker::ApiResp, "APIRESP: status = sent"),
            Turn::new(Speaker::AssistantUtt, format!("{system}: sent")),
            Turn::new(Speaker::User, DONE),
        ],
        success: true,
        domain: "Florist".into(),
        fold: Fold::Test,
        origin: Origin::Synthetic,
    }
}

fn fixture_tasks(n_goals: usize, n_controls: usize) -> Vec<EvalTask> {
    let goals: Vec<ApiCall> = (0..n_goals)
        .map(|i| ApiCall::new("SendFlowers", [("name", format!("p{i}"))]).unwrap())
        .collect();
    let runs: BTreeMap<String, Vec<Episode>> = ["alpha", "beta"]
        .iter()
        .map(|s| (s.to_string(), goals.iter().map(|g| episode(g, s)).collect()))
        .collect();
    let gold = goals.iter().map(|g| episode(g, "gold")).collect();
    build_tasks(&runs, &goals, &ControlSpec { gold, n_controls }, 11).unwrap()
}

struct Server {
    base: String,
    _rt: tokio::runtime::Runtime,
}

fn start(dir: &Path, policy: SessionPolicy) -> Server {
    let store = Arc::new(EvalStore::open(dir, policy).unwrap());
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let config = ServiceConfig {
        admin_token: Some(TOKEN.into()),
        ui_dir: None,
    };
    rt.spawn(async move { axum::serve(listener, router(store, config)).await.unwrap() });
    Server { base, _rt: rt }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(10)))
        .build()
        .into()
}

fn next(s: &Server, who: &str) -> (u16, Option<Value>) {
    let mut r = agent().get(format!("{}/api/next-task?annotator={who}", s.base)).call().unwrap();
    let status = r.status().as_u16();
    let body = if status == 200 { Some(r.body_mut().read_json().unwrap()) } else { None };
    (status, body)
}

fn submit(s: &Server, task: &str, who: &str, choice: &str) -> u16 {
    agent()
        .post(format!("{}/api/annotate", s.base))
        .send_json(json!({"task_id": task, "annotator_id": who, "choice": choice, "rationale": "clearer"}))
        .unwrap()
        .status()
        .as_u16()
}

fn results(s: &Server, token: Option<&str>) -> (u16, Value) {
    let mut req = agent().get(format!("{}/api/results", s.base));
    if let Some(t) = token {
        req = req.header("Authorization", format!("Bearer {t}"));
    }
    let mut r = req.call().unwrap();
    (r.status().as_u16(), r.body_mut().read_json().unwrap())
}

fn policy(controls: usize) -> SessionPolicy {
    SessionPolicy {
        controls_per_annotator: controls,
        control_every: 3,
        ..SessionPolicy::default()
    }
}

#[test]
fn annotator_session_flow() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = fixture_tasks(4, 1);
    write_tasks(dir.path(), &tasks).unwrap();
    let s = start(dir.path(), policy(1));

    // First task served is the control; reloading returns the same claim
    // only for leased comparisons, so annotate it right away.
    let (status, first) = next(&s, "ann1");
    assert_eq!(status, 200);
    let first = first.unwrap();
    let id = first["id"].as_str().unwrap().to_string();
    assert!(id.starts_with("ctrl-"));
    let text = first.to_string();
    assert!(!text.contains("APICALL:") && !text.contains("APIRESP:") && !text.contains("alpha"));
    assert_eq!(first["left"]["label"], "Assistant 1");
    assert_eq!(first["right"]["label"], "Assistant 2");
    assert_eq!(first["question"], "Which Assistant would you rather use yourself?");

    let gold_side = {
        let t = tasks.iter().find(|t| t.id == id).unwrap();
        if t.left_system == "gold" { "Left" } else { "Right" }
    };
    assert_eq!(submit(&s, &id, "ann1", gold_side), 204);
    assert_eq!(submit(&s, &id, "ann1", gold_side), 409, "duplicate");
    assert_eq!(submit(&s, "task-00002", "ann1", "Left"), 409, "never claimed");
    assert_eq!(submit(&s, "nope", "ann1", "Left"), 404);

    // A comparison lease is stable across reloads.
    let (_, a) = next(&s, "ann1");
    let (_, again) = next(&s, "ann1");
    assert_eq!(a.as_ref().unwrap()["id"], again.as_ref().unwrap()["id"]);
    let mut served = vec![a.unwrap()["id"].as_str().unwrap().to_string()];
    assert_eq!(submit(&s, &served[0], "ann1", "Left"), 204);
    loop {
        match next(&s, "ann1") {
            (200, Some(t)) => {
                let id = t["id"].as_str().unwrap().to_string();
                assert!(id.starts_with("task-"));
                assert_eq!(submit(&s, &id, "ann1", "Left"), 204);
                served.push(id);
            }
            (204, None) => break,
            other => panic!("{other:?}"),
        }
    }
    assert_eq!(served.len(), 4);

    assert_eq!(results(&s, None).0, 401);
    assert_eq!(results(&s, Some("wrong")).0, 403);
    let (status, body) = results(&s, Some(TOKEN));
    assert_eq!(status, 200);
    assert_eq!(body["systems"], json!(["alpha", "beta"]));
    assert_eq!(body["n_annotations_used"], 4);
    assert_eq!(body["excluded_annotators"], json!([]));
}

#[test]
fn leases_keep_comparisons_exclusive_until_expiry() {
    let dir = tempfile::tempdir().unwrap();
    write_tasks(dir.path(), &fixture_tasks(2, 0)).unwrap();
    let short = SessionPolicy {
        controls_per_annotator: 0,
        lease: Duration::from_millis(300),
        ..SessionPolicy::default()
    };
    let s = start(dir.path(), short);
    let a = next(&s, "a").1.unwrap()["id"].clone();
    let b = next(&s, "b").1.unwrap()["id"].clone();
    assert_ne!(a, b);
    // Both tasks are leased.
    assert_eq!(next(&s, "c").0, 204);
    std::thread::sleep(Duration::from_millis(400));
    let (status, c) = next(&s, "c");
    assert_eq!(status, 200);
    assert!(c.unwrap()["id"] == a);
    // "a" claimed before the lease lapsed and may still submit.
    assert_eq!(submit(&s, a.as_str().unwrap(), "a", "Right"), 204);
}

#[test]
fn least_annotated_first_and_restart_survival() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = fixture_tasks(3, 2);
    write_tasks(dir.path(), &tasks).unwrap();
    {
        let s = start(dir.path(), policy(0));
        for who in ["x", "y"] {
            let t = next(&s, who).1.unwrap();
            assert_eq!(submit(&s, t["id"].as_str().unwrap(), who, "Left"), 204);
        }
    }
    // Two different tasks got one annotation each.
    let store = EvalStore::open(dir.path(), policy(0)).unwrap();
    let counts = store.annotation_counts();
    assert_eq!(counts.iter().sum::<usize>(), 2);
    assert_eq!(counts.iter().filter(|&&c| c == 1).count(), 2);
    // The third annotator gets the untouched comparison first.
    let t = store.next_task("z").unwrap().unwrap();
    let i = tasks.iter().position(|x| x.id == t.id).unwrap();
    assert_eq!(counts[i], 0);
    assert!(!t.is_control);
    drop(store);

    // A torn final line from a crash is skipped, and new appends still parse.
    let log = dir.path().join(ANNOTATIONS_FILE);
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("{\"task_id\": \"task-0");
    std::fs::write(&log, text).unwrap();
    let s = start(dir.path(), policy(0));
    let t = next(&s, "x").1.unwrap();
    assert_eq!(submit(&s, t["id"].as_str().unwrap(), "x", "Right"), 204);
    drop(s);
    let store = EvalStore::open(dir.path(), policy(0)).unwrap();
    assert_eq!(store.annotations().len(), 3);
    assert!(store.annotations().iter().all(|a| a.timestamp.is_some()));
}

#[test]
fn failed_control_excludes_annotator_from_results() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = fixture_tasks(3, 1);
    write_tasks(dir.path(), &tasks).unwrap();
    let s = start(dir.path(), policy(1));
    for (who, pass, prefer) in [("good", true, "alpha"), ("bad", false, "beta")] {
        loop {
            let (status, t) = next(&s, who);
            if status == 204 {
                break;
            }
            let id = t.unwrap()["id"].as_str().unwrap().to_string();
            let task = tasks.iter().find(|x| x.id == id).unwrap();
            let want = if task.is_control {
                if pass { "gold" } else { "repetitive" }
            } else {
                prefer
            };
            let side = if task.left_system == want { "Left" } else { "Right" };
            assert_eq!(submit(&s, &id, who, side), 204);
        }
    }
    let (_, body) = results(&s, Some(TOKEN));
    assert_eq!(body["excluded_annotators"], json!(["bad"]));
    assert_eq!(body["n"][0][1], 3);
    assert_eq!(body["wins"][0][1], 1.0);
}
