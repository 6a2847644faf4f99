use std::path::PathBuf;

use nldst_core::ingestion::{
    load_multiwoz, load_taskmaster, read_canonical, split_corpus, to_canonical, write_canonical,
};
use nldst_core::model::{SlotValue, Split, StructuredState};
use nldst_core::ontology::Ontology;
use nldst_core::verbalizer::TemplateSet;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn res() -> (Ontology, TemplateSet) {
    let o = Ontology::builtin();
    let t = TemplateSet::builtin(&o);
    (o, t)
}

fn table6() -> StructuredState {
    [
        SlotValue::new("train", "departure", "london kings cross"),
        SlotValue::new("train", "destination", "cambridge"),
        SlotValue::new("train", "day", "monday"),
        SlotValue::new("train", "leaveat", "07:00"),
    ]
    .into_iter()
    .collect()
}

#[test]
fn multiwoz_matches_golden_file() {
    let (o, t) = res();
    let (corpus, skips) = load_multiwoz(&fixture("multiwoz_mini.json"), &o, &t).unwrap();
    let golden = std::fs::read_to_string(fixture("multiwoz_mini.golden.jsonl")).unwrap();
    assert_eq!(to_canonical(&corpus).unwrap(), golden);
    assert_eq!(corpus.examples[0].gold_structured, table6());
    let reasons: Vec<_> = skips.entries.iter().map(|e| e.reason.as_str()).collect();
    assert_eq!(
        reasons,
        ["unknown slot", "value outside ontology", "user turn without following system turn"]
    );
}

#[test]
fn multiwoz_drops_unset_markers() {
    let (o, t) = res();
    let (corpus, _) = load_multiwoz(&fixture("multiwoz_mini.json"), &o, &t).unwrap();
    let first = &corpus.examples[0].gold_structured;
    assert_eq!(first.get("train", "arriveby"), None);
    assert!(first.restrict("restaurant").is_empty());
}

#[test]
fn empty_archive_gives_empty_corpus() {
    let (o, t) = res();
    let (corpus, skips) = load_multiwoz(&fixture("empty_multiwoz.json"), &o, &t).unwrap();
    assert!(corpus.is_empty() && skips.is_empty());
}

#[test]
fn malformed_archive_names_dialogue() {
    let (o, t) = res();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"BAD01.json": {"log": [{"metadata": {}}]}}"#).unwrap();
    let err = load_multiwoz(&path, &o, &t).unwrap_err().to_string();
    assert!(err.contains("BAD01.json"), "{err}");
}

#[test]
fn taskmaster_cumulative_override() {
    let (o, t) = res();
    let (corpus, skips) = load_taskmaster(&fixture("taskmaster_mini.json"), &o, &t).unwrap();
    assert_eq!(corpus.len(), 4);
    let first = &corpus.examples[0].gold_structured;
    assert_eq!(first.get("restaurant", "food"), Some("italian"));
    assert_eq!(first.get("restaurant", "people"), Some("4"));
    let second = &corpus.examples[1].gold_structured;
    assert_eq!(second.get("restaurant", "food"), Some("chinese"));
    assert_eq!(second.get("restaurant", "time"), Some("19:00"));
    assert_eq!(second.get("restaurant", "people"), Some("4"));
    assert!(corpus.examples[2].gold_structured.is_empty());
    assert!(corpus.examples[3].gold_structured.is_empty());
    assert_eq!(skips.len(), 1);
    assert_eq!(skips.entries[0].reason, "unmapped label");
}

#[test]
fn canonical_file_round_trip_and_validation() {
    let (o, t) = res();
    let (corpus, _) = load_taskmaster(&fixture("taskmaster_mini.json"), &o, &t).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tm.jsonl");
    write_canonical(&corpus, &path).unwrap();
    let back = read_canonical(&path, "taskmaster1", Split::Train, &o, &t).unwrap();
    assert_eq!(back, corpus);
    for ex in &back.examples {
        o.validate_state(&ex.gold_structured).unwrap();
    }
}

#[test]
fn split_manifest_is_byte_identical() {
    let (o, t) = res();
    let (corpus, _) = load_multiwoz(&fixture("multiwoz_mini.json"), &o, &t).unwrap();
    let (_, a) = split_corpus(&corpus, [0.5, 0.5, 0.0], 9).unwrap();
    let (_, b) = split_corpus(&corpus, [0.5, 0.5, 0.0], 9).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.train.len() + a.dev.len(), 2);
}
