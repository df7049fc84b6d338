use std::collections::{BTreeMap, BTreeSet};

use todsim_acute::{analyze, build_tasks, gate_annotators, win_matrix, Annotation, BuildError, Choice, ControlSpec};
use todsim_core::dialogue::{ApiCall, Episode, Fold, Origin, Speaker, Turn, DONE};

fn goal(i: usize) -> ApiCall {
    ApiCall::new("FindGym", [("city", format!("town{i}"))]).unwrap()
}

fn episode(g: &ApiCall, system: &str) -> Episode {
    Episode {
        goal: g.clone(),
        schema: None,
        turns: vec![
            Turn::new(Speaker::User, format!("gym in {}", g.get("city").unwrap())),
            Turn::new(Speaker::AssistantCall, g.to_string()),
            Turn::new(Speaker::ApiResp, "APIRESP: status = open"),
            Turn::new(Speaker::AssistantUtt, format!("{system} found one")),
            Turn::new(Speaker::User, DONE),
        ],
        success: true,
        domain: "Gym".into(),
        fold: Fold::Test,
        origin: if system == "human" { Origin::Human } else { Origin::Synthetic },
    }
}

fn runs(systems: &[&str], goals: &[ApiCall]) -> BTreeMap<String, Vec<Episode>> {
    systems
        .iter()
        .map(|s| (s.to_string(), goals.iter().map(|g| episode(g, s)).collect()))
        .collect()
}

fn ann(task: &str, who: &str, choice: Choice) -> Annotation {
    Annotation {
        task_id: task.into(),
        annotator_id: who.into(),
        choice,
        rationale: None,
        timestamp: None,
    }
}

#[test]
fn three_systems_ten_goals_make_thirty_tasks() {
    let goals: Vec<ApiCall> = (0..10).map(goal).collect();
    let runs = runs(&["a", "b", "human"], &goals);
    let tasks = build_tasks(&runs, &goals, &ControlSpec::default(), 4).unwrap();
    assert_eq!(tasks.len(), 30);
    assert!(tasks.iter().all(|t| t.goal_matched && !t.is_control && t.left.goal == t.right.goal));
    let pairs: BTreeSet<(String, String)> = tasks
        .iter()
        .map(|t| {
            let mut p = [t.left_system.clone(), t.right_system.clone()];
            p.sort();
            (p[0].clone(), p[1].clone())
        })
        .collect();
    assert_eq!(pairs.len(), 3);
    let lefts: BTreeSet<&str> = tasks.iter().map(|t| t.left_system.as_str()).collect();
    assert!(lefts.len() > 1, "sides should vary");

    let again = build_tasks(&runs, &goals, &ControlSpec::default(), 4).unwrap();
    assert_eq!(tasks, again);
    let other = build_tasks(&runs, &goals, &ControlSpec::default(), 5).unwrap();
    assert_ne!(tasks, other);
}

#[test]
fn missing_episode_is_named() {
    let goals: Vec<ApiCall> = (0..3).map(goal).collect();
    let mut runs = runs(&["a", "b"], &goals);
    runs.get_mut("b").unwrap().pop();
    let err = build_tasks(&runs, &goals, &ControlSpec::default(), 1).unwrap_err();
    assert_eq!(
        err,
        BuildError::MissingEpisode {
            system: "b".into(),
            goal: goal(2).to_string()
        }
    );
}

#[test]
fn controls_and_payloads_hide_api_turns() {
    let goals: Vec<ApiCall> = (0..4).map(goal).collect();
    let runs = runs(&["a", "b"], &goals);
    let gold: Vec<Episode> = goals.iter().map(|g| episode(g, "human")).collect();
    let tasks = build_tasks(&runs, &goals, &ControlSpec { gold, n_controls: 3 }, 9).unwrap();
    assert_eq!(tasks.iter().filter(|t| t.is_control).count(), 3);
    for t in &tasks {
        let json = serde_json::to_string(&t.public()).unwrap();
        assert!(!json.contains("APICALL:") && !json.contains("APIRESP:"), "{json}");
        assert!(json.contains("Assistant 1") && json.contains("Assistant 2"));
        assert!(!json.contains("\"a\"") && !json.contains("repetitive") && !json.contains("gold"));
    }
    let empty = ControlSpec { gold: vec![], n_controls: 1 };
    assert_eq!(build_tasks(&runs, &goals, &empty, 9).unwrap_err(), BuildError::NoControlSource);
}

#[test]
fn gating_drops_every_failed_annotator() {
    let goals: Vec<ApiCall> = (0..5).map(goal).collect();
    let runs = runs(&["a", "b"], &goals);
    let gold: Vec<Episode> = goals.iter().map(|g| episode(g, "human")).collect();
    let tasks = build_tasks(&runs, &goals, &ControlSpec { gold, n_controls: 2 }, 3).unwrap();
    let controls: Vec<_> = tasks.iter().filter(|t| t.is_control).collect();
    let comparisons: Vec<_> = tasks.iter().filter(|t| !t.is_control).collect();

    let mut log = Vec::new();
    for w in 0..10 {
        let who = format!("w{w}");
        for (c, t) in controls.iter().enumerate() {
            let rep = t.repetitive_side().unwrap();
            // w0..w2 fail exactly one of two controls.
            let choice = if w < 3 && c == 1 { rep } else { rep.other() };
            log.push(ann(&t.id, &who, choice));
        }
        for t in &comparisons {
            // Failed annotators always pick b, retained ones always pick a.
            let want = if w < 3 { "b" } else { "a" };
            let side = if t.left_system == want { Choice::Left } else { Choice::Right };
            log.push(ann(&t.id, &who, side));
        }
    }
    let excluded = gate_annotators(&tasks, &log, 0);
    assert_eq!(excluded, ["w0", "w1", "w2"].iter().map(|s| s.to_string()).collect());
    assert!(gate_annotators(&tasks, &log, 1).is_empty());

    let report = analyze(&tasks, &log, 0);
    assert_eq!(report.retained_annotators.len(), 7);
    assert_eq!(report.n_annotations_used, 7 * comparisons.len());
    let m = &report.matrix;
    let (a, b) = (m.index("a").unwrap(), m.index("b").unwrap());
    assert_eq!(m.systems, ["a", "b"]);
    assert_eq!(m.n[a][b], 35);
    assert_eq!(m.wins[a][b], Some(1.0));
    assert_eq!(m.wins[b][a], Some(0.0));
    assert!(m.significant[a][b]);

    // Ungated, the failed annotators would have shifted the cell.
    let raw = win_matrix(&log, &tasks);
    assert_eq!(raw.n[a][b], 50);
}
