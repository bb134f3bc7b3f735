#![allow(dead_code)]

use std::sync::Arc;

use crowdforge::clock::ManualClock;
use crowdforge::connector::{HitKind, MockConnector};
use crowdforge::core::constraint::Registry;
use crowdforge::gateway::{LaunchRequest, Service, ServiceConfig};
use crowdforge::store::Store;
use serde_json::{json, Value};

pub const COVID_PIPELINE: &str = include_str!("../../../../fixtures/covid_pipeline.json");
pub const COVID_TASKSET: &str = include_str!("../../../../fixtures/covid_taskset.json");
pub const DROP: &str = include_str!("../../../../fixtures/drop.json");
pub const BAD_BOUNDS: &str = include_str!("../../../../fixtures/bad_bounds.json");

pub fn fixture_specs() -> Vec<(&'static str, &'static str)> {
    vec![
        ("covid_pipeline", COVID_PIPELINE),
        ("covid_taskset", COVID_TASKSET),
        ("drop", DROP),
        ("matres", include_str!("../../../../fixtures/matres.json")),
        ("torque", include_str!("../../../../fixtures/torque.json")),
        ("vqa_e", include_str!("../../../../fixtures/vqa_e.json")),
        ("acceptability", include_str!("../../../../fixtures/acceptability.json")),
        ("adversarial_conditions", include_str!("../../../../fixtures/adversarial_conditions.json")),
        ("adversarial_unicode", include_str!("../../../../fixtures/adversarial_unicode.json")),
    ]
}

pub struct Env {
    pub service: Arc<Service>,
    pub connector: Arc<MockConnector>,
    pub clock: ManualClock,
}

pub fn env_with(secret: &[u8], seed: u64, lease_ms: u64) -> Env {
    let store = Store::in_memory(secret.to_vec(), Arc::new(Registry::with_builtins())).with_lease_ms(lease_ms);
    let connector = Arc::new(MockConnector::new(seed));
    let clock = ManualClock::new(1_700_000_000_000);
    let service = Service::new(
        Arc::new(store),
        connector.clone(),
        Arc::new(clock.clone()),
        ServiceConfig { external_url: "https://forge.test".into(), connector_retries: 2 },
    );
    Env { service: Arc::new(service), connector, clock }
}

pub fn env() -> Env {
    env_with(b"test-secret", 7, 60_000)
}

/// Synthetic pool of `n` two- to four-option questions `q00..`, answer
/// key cycling through A, B, C.
pub fn exam_pipeline(name: &str, n: usize, sample: u32, chances: u32, passing: f64, comparison: &str) -> String {
    let questions: Vec<Value> = (0..n)
        .map(|i| {
            json!({
                "type": "multiple-choice",
                "question_id": format!("q{i:02}"),
                "context": [{"type": "text", "text": format!("Passage number {i}.")}],
                "question": {
                    "question_text": format!("Question {i}?"),
                    "options": {"A": "first", "B": "second", "C": "third", "D": "fourth"}
                },
                "answer": (["A", "B", "C"][i % 3])
            })
        })
        .collect();
    json!({
        "name": name,
        "instruction": "# Exam\n\nAnswer every question.",
        "exam": {"question_set": questions},
        "exam_config": {"sample_size": sample, "passing_score": passing, "max_attempts": chances, "pass_comparison": comparison}
    })
    .to_string()
}

pub fn launch(svc: &Service, name: &str, kind: HitKind, count: u32, gates: &[&str]) -> String {
    let l = svc
        .launch(
            name,
            &LaunchRequest {
                kind,
                reward: 0.5,
                count,
                gates: gates.iter().map(|g| g.to_string()).collect(),
                client_token: None,
            },
        )
        .expect("launch");
    l.hit_ids[0].clone()
}
