use std::collections::BTreeMap;
use std::path::PathBuf;

use bytecomposer_core::abc::{parse_abc, serialize_abc};
use bytecomposer_core::eval::{corpus_metrics, evaluate, EvalError, EvalErrorKind, InstrumentRangeTable, Location};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn opt(field: &str) -> Option<usize> {
    (field != "-").then(|| field.parse().unwrap())
}

fn annotations() -> BTreeMap<String, Vec<EvalError>> {
    let text = std::fs::read_to_string(fixture_dir().join("annotations.txt")).unwrap();
    let mut out: BTreeMap<String, Vec<EvalError>> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('|').map(str::trim).collect();
        let entry = out.entry(f[0].to_string()).or_default();
        if f.len() == 1 {
            continue;
        }
        let kind = match f[1] {
            "BeatCountMismatch" => EvalErrorKind::BeatCountMismatch,
            "NoteOutOfRange" => EvalErrorKind::NoteOutOfRange,
            "MissingHeaderField" => EvalErrorKind::MissingHeaderField,
            other => panic!("unknown kind {other}"),
        };
        entry.push(EvalError {
            kind,
            location: Location {
                voice: opt(f[2]),
                measure: opt(f[3]),
                event: opt(f[4]),
            },
            expected: f[5].to_string(),
            actual: f[6].to_string(),
        });
    }
    out
}

#[test]
fn every_fixture_is_annotated() {
    let mut files: Vec<String> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".abc"))
        .collect();
    files.sort();
    let annotated: Vec<String> = annotations().keys().cloned().collect();
    assert_eq!(files, annotated);
    assert_eq!(files.len(), 12);
}

#[test]
fn evaluation_matches_annotations() {
    let table = InstrumentRangeTable::default();
    let mut reports = Vec::new();
    for (file, expected) in annotations() {
        let text = std::fs::read_to_string(fixture_dir().join(&file)).unwrap();
        let score = parse_abc(&text).unwrap_or_else(|e| panic!("{file}: {e}"));
        let report = evaluate(&score, &table, None).unwrap();
        assert_eq!(report.errors, expected, "{file}");
        reports.push(report);
    }
    // 5 of 12 have beat errors, 3 have range errors, 9 are complete
    let m = corpus_metrics(&reports).unwrap();
    assert_eq!(m.n_scores, 12);
    assert_eq!(m.tser, 5.0 / 12.0);
    assert_eq!(m.irer, 3.0 / 12.0);
    assert_eq!(m.sicr, 9.0 / 12.0);
    assert_eq!(m.aaa, None);
}

#[test]
fn fixtures_round_trip() {
    for file in annotations().keys() {
        let text = std::fs::read_to_string(fixture_dir().join(file)).unwrap();
        let once = parse_abc(&text).unwrap();
        let twice = parse_abc(&serialize_abc(&once)).unwrap();
        assert_eq!(once, twice, "{file}");
        assert_eq!(serialize_abc(&twice), serialize_abc(&once), "{file}");
    }
}
