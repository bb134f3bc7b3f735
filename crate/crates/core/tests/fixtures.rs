use crowdforge_core::constraint::Registry;
use crowdforge_core::spec::{
    canonicalize, canonicalize_task_set, codes, detect_kind, parse_document, parse_pipeline, parse_question_set,
    parse_task_set, DocumentKind, Severity, SpecDocument,
};
use serde_json::Value;

const FIXTURES: &[(&str, &str)] = &[
    ("covid_taskset", include_str!("../../../fixtures/covid_taskset.json")),
    ("covid_pipeline", include_str!("../../../fixtures/covid_pipeline.json")),
    ("drop", include_str!("../../../fixtures/drop.json")),
    ("matres", include_str!("../../../fixtures/matres.json")),
    ("torque", include_str!("../../../fixtures/torque.json")),
    ("vqa_e", include_str!("../../../fixtures/vqa_e.json")),
    ("acceptability", include_str!("../../../fixtures/acceptability.json")),
    ("adversarial_unicode", include_str!("../../../fixtures/adversarial_unicode.json")),
    ("adversarial_conditions", include_str!("../../../fixtures/adversarial_conditions.json")),
];

fn parse(raw: &str) -> SpecDocument {
    let registry = Registry::with_builtins();
    let kind = detect_kind(raw).expect("kind");
    match parse_document(raw, kind, &registry) {
        Ok(p) => p.value,
        Err(diags) => panic!("{diags:#?}"),
    }
}

fn canonical(doc: &SpecDocument) -> String {
    match doc {
        SpecDocument::Pipeline(p) => canonicalize(p),
        SpecDocument::TaskSet(t) => canonicalize_task_set(t),
        SpecDocument::QuestionSet(q) => crowdforge_core::spec::canonicalize_question_set(q),
        SpecDocument::ExamConfig(c) => crowdforge_core::spec::canonicalize_exam_config(c),
    }
}

#[test]
fn every_fixture_parses_without_errors() {
    let registry = Registry::with_builtins();
    for (name, raw) in FIXTURES {
        let kind = detect_kind(raw).unwrap_or_else(|| panic!("{name}: kind"));
        let parsed = parse_document(raw, kind, &registry).unwrap_or_else(|d| panic!("{name}: {d:#?}"));
        if *name != "adversarial_unicode" {
            assert!(parsed.warnings.is_empty(), "{name}: {:#?}", parsed.warnings);
        }
    }
}

#[test]
fn canonical_round_trip_and_idempotence() {
    for (name, raw) in FIXTURES {
        let doc = parse(raw);
        let once = canonical(&doc);
        let reparsed = parse(&once);
        assert_eq!(reparsed, doc, "{name}: parse(canonicalize(s)) != s");
        assert_eq!(canonical(&reparsed), once, "{name}: not idempotent");
        assert!(once.ends_with('\n') && !once.contains('\r'));
    }
}

fn shuffle_keys(v: &Value, flip: bool) -> Value {
    match v {
        Value::Object(m) => {
            let mut entries: Vec<(&String, &Value)> = m.iter().collect();
            if flip {
                entries.reverse();
            } else {
                entries.sort_by(|a, b| b.0.cmp(a.0));
            }
            let mut out = serde_json::Map::new();
            for (k, v) in entries {
                // options order is meaningful and must stay put
                let keep = k == "options";
                out.insert(k.clone(), if keep { v.clone() } else { shuffle_keys(v, !flip) });
            }
            Value::Object(out)
        }
        Value::Array(a) => Value::Array(a.iter().map(|x| shuffle_keys(x, flip)).collect()),
        other => other.clone(),
    }
}

#[test]
fn key_order_does_not_change_canonical_bytes() {
    for (name, raw) in FIXTURES {
        let value: Value = serde_json::from_str(raw).unwrap();
        let shuffled = serde_json::to_string(&shuffle_keys(&value, true)).unwrap();
        assert_ne!(shuffled, serde_json::to_string(&value).unwrap(), "{name}: shuffle was a no-op");
        let a = parse(raw);
        let b = parse(&shuffled);
        assert_eq!(a, b, "{name}");
        assert_eq!(canonical(&a), canonical(&b), "{name}");
    }
}

#[test]
fn canonical_materializes_defaults() {
    let raw = r#"{"task_set_id":"s","tasks":[{"task_id":"t","contexts":[
        {"label":"Note","type":"html","html":"<p>Remember to ...</p>","id":"note"},
        {"type":"text","text":"x","id":"snippet"}],
        "annotations":[{"id":"a","type":"text-input","prompt":"p"}]}]}"#;
    let ts = parse_task_set(raw, &Registry::new()).unwrap().value;
    let out: Value = serde_json::from_str(&canonicalize_task_set(&ts)).unwrap();
    assert_eq!(out["redundancy"], 1);
    let a = &out["tasks"][0]["annotations"][0];
    assert_eq!(a["optional"], false);
    assert_eq!(a["conditions"], Value::Array(vec![]));
    assert_eq!(a["constraints"], Value::Array(vec![]));
    assert_eq!(out["tasks"][0]["contexts"][0]["html"], "<p>Remember to ...</p>");
}

#[test]
fn covid_question_set_listing() {
    let raw = r#"{"question_set": [{
        "type": "multiple-choice", "question_id": "q1",
        "context": [{"type": "text", "text": "As of Tuesday, 144 of the state's then-294 deaths involved nursing homes or longterm care facilities."}],
        "question": {"question_text": "In \"294 deaths\", what should you label as the quantity?", "options": {"A": "294", "B": "294 deaths"}},
        "answer": "A",
        "explanation": {"A": "Correct", "B": "In our definition, the quantity should be \"294\"."}}]}"#;
    let qs = parse_question_set(raw).unwrap().value;
    assert_eq!(qs.len(), 1);
    let q = &qs.questions[0];
    assert_eq!(q.options.keys().collect::<Vec<_>>(), ["A", "B"]);
    assert_eq!(q.options.get("B"), Some("294 deaths"));
    assert_eq!(q.answer, "A");
}

fn error_codes(raw: &str) -> Vec<(String, String)> {
    match parse_task_set(raw, &Registry::with_builtins()) {
        Ok(p) => panic!("expected errors, got {:?}", p.value),
        Err(d) => d.into_iter().filter(|d| d.severity == Severity::Error).map(|d| (d.code, d.path)).collect(),
    }
}

fn task_with(annotations: &str) -> String {
    format!(
        r#"{{"task_set_id":"s","tasks":[{{"task_id":"t","contexts":[{{"id":"snippet","type":"text","text":"abc"}}],"annotations":{annotations}}}]}}"#
    )
}

#[test]
fn bad_bounds_fixture() {
    let codes_found = error_codes(include_str!("../../../fixtures/bad_bounds.json"));
    assert_eq!(codes_found, vec![(codes::BOUNDS_INVERTED.to_string(), "/tasks/0/annotation_groups/0".to_string())]);
}

#[test]
fn dangling_reference() {
    let raw = task_with(
        r#"[{"id":"relevance","type":"multiple-choice","prompt":"p","options":{"A":"a","B":"b"}},
            {"id":"typing","type":"multiple-choice","prompt":"p","options":{"A":"a","B":"b"},
             "conditions":[{"id":"relevnce","op":"eq","value":"A"}]}]"#,
    );
    let found = error_codes(&raw);
    assert_eq!(found.len(), 1);
    assert_eq!(found[0].0, codes::DANGLING_CONDITION_REF);
    assert!(found[0].1.starts_with("/tasks/0/annotations/1/conditions/0"), "{}", found[0].1);
}

#[test]
fn two_cycle() {
    let raw = task_with(
        r#"[{"id":"A","type":"multiple-choice","prompt":"p","options":{"y":"y","n":"n"},"conditions":[{"id":"B","op":"eq","value":"y"}]},
            {"id":"B","type":"multiple-choice","prompt":"p","options":{"y":"y","n":"n"},"conditions":[{"id":"A","op":"eq","value":"y"}]}]"#,
    );
    let found = error_codes(&raw);
    assert_eq!(found.iter().filter(|c| c.0 == codes::CONDITION_CYCLE).count(), 1, "{found:?}");
}

#[test]
fn malformed_regex() {
    let raw = task_with(
        r#"[{"id":"q","type":"span-from-text","prompt":"p","from_context":"snippet",
             "constraints":[{"type":"regex","regex":"[","description":"d"}]}]"#,
    );
    let found = error_codes(&raw);
    assert_eq!(found.len(), 1);
    assert_eq!(found[0].0, codes::REGEX_INVALID);
    assert_eq!(found[0].1, "/tasks/0/annotations/0/constraints/0/regex");
}

#[test]
fn unregistered_custom_constraint() {
    let raw = task_with(
        r#"[{"id":"q","type":"text-input","prompt":"p",
             "constraints":[{"type":"custom","name":"no-such-check","description":"d"}]}]"#,
    );
    assert_eq!(error_codes(&raw)[0].0, codes::UNKNOWN_CUSTOM_CONSTRAINT);
}

#[test]
fn covid_condition_listing_validates() {
    let raw = task_with(
        r#"[{"type":"span-from-text","from_context":"snippet","prompt":"Select one quantity from below.","id":"quantity"},
            {"type":"multiple-choice","prompt":"Is this quantity related to COVID-19?","options":{"A":"Relevant","B":"Not relevant"},"id":"relevance"},
            {"id":"typing","type":"multiple-choice","prompt":"What type is it?",
             "options":{"A":"Number of Deaths","B":"Number of confirmed cases","C":"Number of hospitalized"},
             "conditions":[{"id":"relevance","op":"eq","value":"A"}]}]"#,
    );
    let parsed = parse_task_set(&raw, &Registry::new()).unwrap();
    assert!(parsed.warnings.is_empty());
}

#[test]
fn misc_structural_errors() {
    let unknown_type = task_with(r#"[{"id":"q","type":"slider","prompt":"p"}]"#);
    assert_eq!(error_codes(&unknown_type)[0].0, codes::UNKNOWN_ANNOTATION_TYPE);
    let dup = task_with(r#"[{"id":"q","type":"text-input","prompt":"p"},{"id":"q","type":"text-input","prompt":"p"}]"#);
    assert_eq!(error_codes(&dup)[0].0, codes::DUPLICATE_ID);
    let html_span = r#"{"task_set_id":"s","tasks":[{"task_id":"t","contexts":[{"id":"h","type":"html","html":"<p>x</p>"}],
        "annotations":[{"id":"q","type":"span-from-text","prompt":"p","from_context":"h"}]}]}"#;
    assert!(!error_codes(html_span).is_empty());
    let regex_on_choice = task_with(
        r#"[{"id":"q","type":"multiple-choice","prompt":"p","options":{"A":"a","B":"b"},
             "constraints":[{"type":"regex","regex":"A","description":"d"}]}]"#,
    );
    assert_eq!(error_codes(&regex_on_choice)[0].0, codes::REGEX_ON_NON_TEXT);
    let bad_ctx = r#"{"task_set_id":"s","tasks":[{"task_id":"t","contexts":[{"id":"x","type":"pdf","url":"u"}]}]}"#;
    assert_eq!(error_codes(bad_ctx)[0].0, codes::UNKNOWN_CONTEXT_TYPE);
    assert_eq!(error_codes("{not json")[0].0, codes::MALFORMED_DOCUMENT);
}

#[test]
fn answer_not_in_options() {
    let raw = r#"[{"type":"multiple-choice","question_id":"q","context":[],
        "question":{"question_text":"?","options":{"A":"a","B":"b"}},"answer":"C","explanation":{}}]"#;
    let diags = parse_question_set(raw).unwrap_err();
    assert_eq!(diags[0].code, codes::ANSWER_NOT_IN_OPTIONS);
    assert_eq!(diags[0].path, "/0/answer");
}

#[test]
fn exam_requires_config_and_fits_pool() {
    let mut p: Value = serde_json::from_str(include_str!("../../../fixtures/acceptability.json")).unwrap();
    p["exam_config"]["sample_size"] = 9.into();
    let diags = parse_pipeline(&p.to_string(), &Registry::with_builtins()).unwrap_err();
    assert_eq!(diags[0].code, codes::SAMPLE_EXCEEDS_POOL);
    p.as_object_mut().unwrap().remove("exam_config");
    let diags = parse_pipeline(&p.to_string(), &Registry::with_builtins()).unwrap_err();
    assert_eq!(diags[0].code, codes::EXAM_CONFIG_MISSING);
}

#[test]
fn diagnostic_paths_resolve_in_source() {
    let broken = [
        task_with(r#"[{"id":"q","type":"slider","prompt":"p"}]"#),
        task_with(r#"[{"id":"q","type":"text-input","prompt":"p","conditions":[{"id":"zz","op":"eq","value":"A"}]}]"#),
        include_str!("../../../fixtures/bad_bounds.json").to_string(),
    ];
    for raw in &broken {
        let value: Value = serde_json::from_str(raw).unwrap();
        for d in parse_task_set(raw, &Registry::with_builtins()).unwrap_err() {
            assert!(value.pointer(&d.path).is_some(), "{} does not resolve in {raw}", d.path);
        }
    }
}

#[test]
fn unknown_fields_only_warn() {
    let raw = include_str!("../../../fixtures/adversarial_unicode.json");
    let parsed = parse_task_set(raw, &Registry::with_builtins()).unwrap();
    let paths: Vec<&str> = parsed.warnings.iter().map(|w| w.path.as_str()).collect();
    assert_eq!(paths, ["/x-editor", "/tasks/0/annotations/0/colour"]);
    assert!(parsed.warnings.iter().all(|w| w.severity == Severity::Warning && w.code == codes::UNKNOWN_FIELD));
    let kind = DocumentKind::TaskSet;
    assert_eq!(detect_kind(raw), Some(kind));
}
