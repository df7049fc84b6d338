use std::path::PathBuf;

use todsim_core::data_io::{self, default_holdout, extract_goals, import_sgd_like, split_by_domain, DataError};
use todsim_core::fixture::{Corpus, World};
use todsim_core::{Fold, Speaker};

#[test]
fn episodes_round_trip_through_jsonl() {
    let world = World::merged(&[&World::in_domain(), &World::holdout()]);
    let corpus = Corpus::build(&world, (1, 1, 1), 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/episodes.jsonl");
    data_io::write_episodes(&path, &corpus.episodes).unwrap();
    assert_eq!(data_io::load_episodes(&path).unwrap(), corpus.episodes);

    let split = split_by_domain(&corpus.episodes, &default_holdout());
    let counts = split.counts();
    assert_eq!(counts.out_of_domain.values().sum::<usize>(), 3 * 8);
    assert!(split.out_fold(Fold::Test).iter().all(|e| default_holdout().contains(&e.domain)));

    let goals = extract_goals(split.out_fold(Fold::Test), None);
    assert_eq!(goals.goals.len(), 8);
    let mut want: Vec<String> = corpus.goals[&Fold::Test].iter().filter(|g| world.domain_map()[g.intent()] != "").map(|g| g.to_string()).collect();
    want.retain(|g| goals.goals.iter().any(|x| &x.to_string() == g));
    assert_eq!(want.len(), 8);
}

#[test]
fn parse_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let corpus = Corpus::build(&World::holdout(), (1, 0, 0), 1);
    let good = serde_json::to_string(&corpus.episodes[0]).unwrap();
    std::fs::write(&path, format!("{good}\n\n{good}\n{{\"goal\": 3}}\n")).unwrap();
    match data_io::load_episodes(&path) {
        Err(DataError::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
    let missing = data_io::load_episodes(&dir.path().join("absent.jsonl"));
    assert!(matches!(missing, Err(DataError::Io { .. })));
}

fn write(dir: &std::path::Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SCHEMA: &str = r#"[
 {"service": "Homes_1", "domain": "Home Search",
  "intents": [{"name": "FindHomeByArea", "slots": ["area", "beds"]}]},
 {"service": "Pay_1", "domain": "Payment",
  "intents": [{"name": "MakePayment", "slots": ["to", "amount"]}]}
]"#;

#[test]
fn sgd_like_import() {
    let dir = tempfile::tempdir().unwrap();
    let schema = write(dir.path(), "schema.json", SCHEMA);
    let dialogues = write(
        dir.path(),
        "dialogues_001.json",
        r#"[
 {"dialogue_id": "1", "services": ["Homes_1"], "turns": [
   {"speaker": "SYSTEM", "utterance": "Welcome ."},
   {"speaker": "USER", "utterance": "A home in Cork ."},
   {"speaker": "USER", "utterance": "Two beds ."},
   {"speaker": "SYSTEM", "utterance": "Found one .",
    "service_call": {"service": "Homes_1", "method": "FindHomeByArea", "parameters": {"area": "Cork", "beds": "2"}},
    "service_results": [{"address": "1 Main St"}]},
   {"speaker": "SYSTEM", "utterance": "Anything else ?"},
   {"speaker": "USER", "utterance": "No thanks ."}]},
 {"dialogue_id": "2", "services": ["Homes_1", "Pay_1"], "turns": [
   {"speaker": "USER", "utterance": "Pay Sven ."},
   {"speaker": "SYSTEM", "utterance": "Sorry .",
    "service_call": {"service": "Pay_1", "method": "MakePayment", "parameters": {"to": "Sven", "amount": "5"}},
    "service_results": []}]},
 {"dialogue_id": "3", "services": ["Pay_1"], "turns": [
   {"speaker": "USER", "utterance": "Hello ."},
   {"speaker": "SYSTEM", "utterance": "Hi ."}]}
]"#,
    );
    let out = import_sgd_like(&schema, &[dialogues.clone()], Fold::Valid).unwrap();
    assert_eq!(out.episodes.len(), 2);
    assert_eq!(out.skipped_without_calls, 1);
    let first = &out.episodes[0];
    first.validate().unwrap();
    assert_eq!(first.turns[0].text, "A home in Cork . Two beds .");
    assert_eq!(first.turns[1].speaker, Speaker::AssistantCall);
    assert_eq!(first.turns[1].text, "APICALL: api_name = FindHomeByArea ; area = Cork ; beds = 2");
    assert_eq!(first.turns[3].text, "Found one . Anything else ?");
    assert!(first.success);
    assert_eq!(first.fold, Fold::Valid);
    let second = &out.episodes[1];
    assert_eq!(second.domain, "Home Search, Payment");
    assert_eq!(second.turns[2].text, "APIRESP: API_FAIL");
    assert!(second.success);
    let split = split_by_domain(&out.episodes, &default_holdout());
    assert_eq!(split.out_fold(Fold::Valid).len(), 2);

    let bad = write(
        dir.path(),
        "bad.json",
        r#"[{"dialogue_id": "9", "services": ["Pay_1"], "turns": [
   {"speaker": "USER", "utterance": "x"},
   {"speaker": "SYSTEM", "utterance": "y",
    "service_call": {"service": "Pay_1", "method": "MakePayment", "parameters": {"iban": "1"}}}]}]"#,
    );
    assert!(matches!(import_sgd_like(&schema, &[bad], Fold::Train), Err(DataError::SchemaMismatch(_))));
}
