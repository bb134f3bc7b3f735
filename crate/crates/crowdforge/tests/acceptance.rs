#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use common::*;
use crowdforge::bundle;
use crowdforge::connector::HitKind;
use crowdforge::core::analytics::{agreement, fleiss_kappa};
use crowdforge::core::condition::{evaluate, Scope};
use crowdforge::core::constraint::{check_regex, validate_submission_with, Registry};
use crowdforge::core::exam::{ExamError, ExamSession};
use crowdforge::core::lease::AssignmentBook;
use crowdforge::core::spec::{
    self, canonicalize, parse_task_set, AnnotationDef, AnnotationKind, Options, SpecDocument, TaskSetSpec, TaskSpec,
};
use crowdforge::core::{AnswerValue, ConditionExpr, ResponseState, SpanSelection};
use crowdforge::gateway::service::{ExamPage, ExternalParams, TaskPage};
use crowdforge::gateway::SubmitPayload;
use crowdforge::sim::{self, ExamTarget, SimConfig, TaskTarget};
use crowdforge::store::{Event, Outcome, Store, StoreError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------------------
// 1. condition truth tables

const VARS: usize = 6;

fn random_expr(rng: &mut impl Rng, depth: u32) -> ConditionExpr {
    if depth == 1 || rng.random_bool(0.3) {
        let v = rng.random_range(0..VARS);
        return ConditionExpr::eq(format!("v{v}"), if rng.random_bool(0.5) { "A" } else { "B" });
    }
    match rng.random_range(0..3) {
        0 => ConditionExpr::not(random_expr(rng, depth - 1)),
        1 => ConditionExpr::And((0..rng.random_range(1..4)).map(|_| random_expr(rng, depth - 1)).collect()),
        _ => ConditionExpr::Or((0..rng.random_range(1..4)).map(|_| random_expr(rng, depth - 1)).collect()),
    }
}

fn depth(e: &ConditionExpr) -> u32 {
    match e {
        ConditionExpr::Eq { .. } => 1,
        ConditionExpr::Not(x) => 1 + depth(x),
        ConditionExpr::And(xs) | ConditionExpr::Or(xs) => 1 + xs.iter().map(depth).max().unwrap_or(0),
    }
}

/// 0 = unanswered, 1 = "A", 2 = "B".
fn brute_force(e: &ConditionExpr, vars: &[u8]) -> bool {
    match e {
        ConditionExpr::Eq { id, value } => {
            let v = vars[id[1..].parse::<usize>().unwrap()];
            (v == 1 && value == "A") || (v == 2 && value == "B")
        }
        ConditionExpr::Not(x) => !brute_force(x, vars),
        ConditionExpr::And(xs) => xs.iter().all(|x| brute_force(x, vars)),
        ConditionExpr::Or(xs) => xs.iter().any(|x| brute_force(x, vars)),
    }
}

fn condition_truth_tables() -> Check {
    let start = Instant::now();
    let task = TaskSpec {
        task_id: "t".into(),
        annotations: (0..VARS)
            .map(|i| {
                let mut a = AnnotationDef::new(format!("v{i}"), AnnotationKind::MultipleChoice, "?");
                a.options = Some(Options::new(vec![("A".into(), "a".into()), ("B".into(), "b".into())]));
                a
            })
            .collect(),
        ..Default::default()
    };
    let assignments: Vec<(Vec<u8>, ResponseState)> = (0..3usize.pow(VARS as u32))
        .map(|mut code| {
            let mut vars = vec![0u8; VARS];
            let mut s = ResponseState::new();
            for (i, v) in vars.iter_mut().enumerate() {
                *v = (code % 3) as u8;
                code /= 3;
                if *v > 0 {
                    s.set(format!("v{i}"), 0, AnswerValue::Choice(if *v == 1 { "A" } else { "B" }.into()));
                }
            }
            (vars, s)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0u64;
    let mut max_depth = 0;
    for _ in 0..1000 {
        let e = random_expr(&mut rng, 5);
        max_depth = max_depth.max(depth(&e));
        ensure!(depth(&e) <= 5, "generated a tree deeper than 5");
        for (vars, state) in &assignments {
            let got = evaluate(&e, &task, state, Scope::Task).map_err(|x| format!("evaluate failed: {x:?}"))?;
            ensure!(got == brute_force(&e, vars), "mismatch for {e:?} under {vars:?}");
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2}s");
    Ok(format!("1000 trees (max depth {max_depth}) x 729 states = {checked} evaluations agree, {secs:.2}s"))
}

// ---------------------------------------------------------------------------
// 2. regex messages from the COVID fixture

fn regex_fixture_messages() -> Check {
    let ts = parse_task_set(COVID_TASKSET, &Registry::with_builtins()).map_err(|d| format!("{d:?}"))?.value;
    let task = &ts.tasks[0];
    let quantity = task.find_annotation("quantity").unwrap().1;
    let first = &quantity.constraints[0];
    let length = &quantity.constraints[1];
    let err = check_regex(first, " 294").err().ok_or("\" 294\" was accepted")?;
    ensure!(
        err.description == "The quantity should only start with digits or letters.",
        "message was {:?}",
        err.description
    );
    ensure!(check_regex(first, "294").is_ok(), "\"294\" rejected");

    // the same value selected in the snippet goes through the whole gate
    let src = &task.find_context("snippet", &ts.shared).unwrap().payload;
    let at = src.chars().collect::<Vec<_>>();
    let start = (0..at.len()).find(|&i| at[i..].starts_with(&[' ', '1', '4', '4'])).unwrap() as u32;
    let mut s = ResponseState::new();
    s.set_group_count("quantity_extraction_typing", 1);
    s.set("quantity", 0, AnswerValue::Spans(vec![SpanSelection::from_source(src, start, start + 4).unwrap()]));
    s.set("relevance", 0, AnswerValue::Choice("B".into()));
    let v = validate_submission_with(task, &ts.shared, &s, &Registry::with_builtins()).err().ok_or("accepted")?;
    ensure!(v.len() == 1, "expected one violation, got {v:?}");
    ensure!(v[0].description == "The quantity should only start with digits or letters.", "got {:?}", v[0].description);

    let mut accepted = Vec::new();
    for n in 0..=40usize {
        for fill in ["a", "9", "é", " ", "-"] {
            let value = fill.repeat(n);
            let ok = check_regex(length, &value).is_ok();
            ensure!(ok == (1..=30).contains(&n), "length {n} ({fill:?}) gave {ok}");
            if ok && fill == "a" {
                accepted.push(n);
            }
        }
    }
    ensure!(accepted == (1..=30).collect::<Vec<_>>(), "accepted lengths {accepted:?}");
    Ok("\" 294\" → exact message; ^.{1,30}$ accepts exactly lengths 1..=30 over 0..=40".into())
}

// ---------------------------------------------------------------------------
// 3/4. exam lifecycle

/// Pearson statistic for how often each pool question was sampled. Under
/// uniform sampling of `k` of `n` without replacement, each question's
/// count over `a` attempts has variance a·p(1-p) with p = k/n and pairwise
/// covariance -a·p(1-p)/(n-1); scaling by n/(n-1) makes the sum χ² with
/// n-1 degrees of freedom.
fn sampling_p_value(counts: &BTreeMap<String, u64>, pool: usize, sample: usize, attempts: u64) -> f64 {
    let n = pool as f64;
    let p = sample as f64 / n;
    let a = attempts as f64;
    let expected = a * p;
    let scale = a * p * (1.0 - p) * n / (n - 1.0);
    let stat: f64 = (0..pool)
        .map(|i| {
            let c = *counts.get(&format!("q{i:02}")).unwrap_or(&0) as f64;
            (c - expected).powi(2) / scale
        })
        .sum();
    1.0 - ChiSquared::new(n - 1.0).unwrap().cdf(stat)
}

fn exam_lifecycle(pool: usize, sample: u32, chances: u32, passing: f64, comparison: &str, participants: usize) -> Check {
    let start = Instant::now();
    let env = env();
    let svc = &env.service;
    let raw = exam_pipeline("exam", pool, sample, chances, passing, comparison);
    svc.put_pipeline("exam", &raw).map_err(|e| e.to_string())?;
    let hit = launch(svc, "exam", HitKind::Exam, participants as u32, &[]);
    let spec = svc.store().read("exam", |r| r.latest().spec.clone()).unwrap();
    let exam = spec.exam.clone().unwrap();
    let key: BTreeMap<String, String> = exam.questions.iter().map(|q| (q.question_id.clone(), q.answer.clone())).collect();
    let target = ExamTarget::from_pool("exam", &hit, &exam);
    let cfg = SimConfig {
        workers: participants,
        seed: 3,
        min_skill: 0.2,
        max_skill: 1.0,
        abandon_rate: 0.0,
        tasks_per_worker: 0,
        threads: 8,
        ..SimConfig::default()
    };
    let report = sim::run(svc.as_ref(), env.connector.as_ref(), Some(&target), None, &Registry::with_builtins(), &cfg);
    ensure!(report.errors.is_empty(), "simulation errors {:?}", report.errors);

    let sessions: Vec<ExamSession> = svc.store().read("exam", |r| r.exam_sessions(1)).unwrap();
    ensure!(sessions.len() == participants, "{} sessions", sessions.len());
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let (mut attempts, mut passed, mut exhausted) = (0u64, 0u64, 0u64);
    for s in &sessions {
        ensure!(s.attempts.len() as u32 <= chances, "{} has {} attempts", s.participant, s.attempts.len());
        for a in &s.attempts {
            attempts += 1;
            let distinct: BTreeSet<&String> = a.sampled.iter().collect();
            ensure!(a.sampled.len() == sample as usize && distinct.len() == a.sampled.len(), "attempt {:?}", a.sampled);
            ensure!(a.sampled.iter().all(|q| key.contains_key(q)), "sampled outside the pool");
            for q in &a.sampled {
                *counts.entry(q.clone()).or_default() += 1;
            }
            let grade = a.grade.ok_or("ungraded attempt")?;
            let correct = a.sampled.iter().filter(|q| a.answers.get(*q) == key.get(*q)).count() as u64;
            // passing fraction as an exact ratio num/den
            let (num, den) = ((passing * 100.0).round() as u64, 100u64);
            let oracle = match comparison {
                "strict-greater" => correct * den > num * u64::from(sample),
                _ => correct * den >= num * u64::from(sample),
            };
            ensure!(grade.correct as u64 == correct, "grade {grade:?} vs recount {correct}");
            ensure!(grade.passed == oracle, "pass decision {} for {correct}/{sample}", grade.passed);
        }
        // no further chance once passed or exhausted
        let after = svc.exam_page("exam", &ExternalParams::new("A-extra", &hit, &s.participant, "https://m.test"));
        if s.passed() {
            passed += 1;
            ensure!(matches!(after, Ok(ExamPage::Passed { .. })), "passed participant got {after:?}");
        } else {
            ensure!(s.attempts.len() as u32 == chances, "{} stopped early", s.participant);
            exhausted += 1;
            let code = after.err().map(|e| e.code()).unwrap_or("none");
            ensure!(code == ExamError::AttemptsExhausted.code(), "exhausted participant got {code}");
        }
    }
    ensure!(passed > 0 && exhausted > 0, "degenerate population: {passed} passed, {exhausted} exhausted");
    let p = sampling_p_value(&counts, pool, sample as usize, attempts);
    ensure!(p > 0.01, "chi-square p = {p:.4}");
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok(format!(
        "{participants} participants, {attempts} attempts, {passed} passed, {exhausted} exhausted; uniformity p = {p:.3}; {secs:.1}s"
    ))
}

// ---------------------------------------------------------------------------
// 5. submission gate vs an independent oracle

fn word_spans(src: &str) -> Vec<(u32, u32)> {
    let cs: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < cs.len() {
        if cs[i].is_alphanumeric() {
            let s = i;
            while i < cs.len() && cs[i].is_alphanumeric() {
                i += 1;
            }
            out.push((s as u32, i as u32));
        } else {
            i += 1;
        }
    }
    out
}

fn sel(src: &str, s: u32, e: u32) -> SpanSelection {
    SpanSelection::from_source(src, s, e).unwrap()
}

fn gen_spans(rng: &mut impl Rng, src: &str, want: usize, odds: u32) -> AnswerValue {
    let words = word_spans(src);
    let cs: Vec<char> = src.chars().collect();
    let mut spans: Vec<SpanSelection> =
        (0..want).map(|_| words[rng.random_range(0..words.len())]).map(|(s, e)| sel(src, s, e)).collect();
    match rng.random_range(0..odds) {
        0 => {
            // leading space
            if let Some((s, e)) = words.iter().copied().find(|(s, _)| *s > 0 && cs[*s as usize - 1] == ' ') {
                spans[0] = sel(src, s - 1, e);
            }
        }
        1 => spans[0] = sel(src, 0, 31.min(cs.len() as u32)),
        2 => spans[0].text = "not in the text".into(),
        3 => spans.clear(),
        4 => spans.push(spans[0].clone()),
        5 => {
            // trailing punctuation keeps the first character rule satisfied
            let (s, e) = spans[0].start_end();
            spans[0] = sel(src, s, (e + 1).min(cs.len() as u32));
        }
        _ => {}
    }
    AnswerValue::Spans(spans)
}

trait StartEnd {
    fn start_end(&self) -> (u32, u32);
}

impl StartEnd for SpanSelection {
    fn start_end(&self) -> (u32, u32) {
        (self.start, self.end)
    }
}

fn choice(rng: &mut impl Rng, valid: &[&str]) -> Option<AnswerValue> {
    match rng.random_range(0..20) {
        0 => None,
        1 => Some(AnswerValue::Choice("Z".into())),
        2 => Some(AnswerValue::Text(valid[0].into())),
        _ => Some(AnswerValue::Choice(valid[rng.random_range(0..valid.len())].into())),
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn span_ok(src: &str, s: &SpanSelection) -> bool {
    let cs: Vec<char> = src.chars().collect();
    s.start < s.end && (s.end as usize) <= cs.len() && cs[s.start as usize..s.end as usize].iter().collect::<String>() == s.text
}

fn covid_oracle(src: &str, s: &ResponseState) -> bool {
    let n = s.group_counts().find(|(g, _)| *g == "quantity_extraction_typing").map(|(_, c)| c).unwrap_or(0);
    if !(1..=3).contains(&n) {
        return false;
    }
    (0..n).all(|i| {
        let quantity = match s.value("quantity", i) {
            Some(AnswerValue::Spans(sp)) if sp.len() == 1 => {
                let t = &sp[0].text;
                span_ok(src, &sp[0])
                    && t.chars().next().is_some_and(is_word_char)
                    && (1..=30).contains(&t.chars().count())
                    && !t.contains('\n')
            }
            _ => false,
        };
        let relevance = s.value("relevance", i);
        let rel_ok = matches!(relevance, Some(AnswerValue::Choice(c)) if c == "A" || c == "B");
        let needs_typing = matches!(relevance, Some(AnswerValue::Choice(c)) if c == "A");
        let typing_ok = matches!(s.value("typing", i), Some(AnswerValue::Choice(c)) if ["A", "B", "C", "D"].contains(&c.as_str()));
        quantity && rel_ok && (!needs_typing || typing_ok)
    })
}

fn covid_state(rng: &mut impl Rng, src: &str) -> ResponseState {
    let mut s = ResponseState::new();
    let n = match rng.random_range(0..20) {
        0 => 0,
        1 => 4,
        _ => rng.random_range(1..=3),
    };
    s.set_group_count("quantity_extraction_typing", n);
    for i in 0..n + u32::from(rng.random_bool(0.1)) {
        match rng.random_range(0..25) {
            0 => {}
            1 => {
                s.set("quantity", i, AnswerValue::Text("294".into()));
            }
            _ => {
                s.set("quantity", i, gen_spans(rng, src, 1, 14));
            }
        }
        if let Some(v) = choice(rng, &["A", "B"]) {
            s.set("relevance", i, v);
        }
        if let Some(v) = choice(rng, &["A", "B", "C", "D"]) {
            s.set("typing", i, v);
        }
    }
    s
}

const VALID_NUMBERS: [&str; 5] = ["13", "-3", "15.6", "3328", "0"];
const BAD_NUMBERS: [&str; 5] = ["3,328", "1.", " 7", ".5", "abc"];
const VALID_DATES: [&str; 4] = ["1997-01-04", "2010-12-31", "1996-02-29", "1997-01-04T10:30:00"];
const BAD_DATES: [&str; 5] = ["1997-13-04", "2010-02-30", "Jan 4 1997", "97-01-04", "1997-02-29"];

fn drop_state(rng: &mut impl Rng, src: &str) -> ResponseState {
    let mut s = ResponseState::new();
    let n = if rng.random_bool(0.85) { rng.random_range(12..=14) } else { rng.random_range(9..12) };
    s.set_group_count("qa", n);
    let mut written: Vec<String> = Vec::new();
    for i in 0..n {
        let q = match rng.random_range(0..300) {
            0 if !written.is_empty() => Some(AnswerValue::Text(written[rng.random_range(0..written.len())].clone())),
            1 => Some(AnswerValue::Text(format!("How many points in case {i}"))),
            2 => Some(AnswerValue::Text(String::new())),
            3 => None,
            4 => Some(AnswerValue::Choice("A".into())),
            _ => Some(AnswerValue::Text(format!("How many points in case {i}?"))),
        };
        if let Some(AnswerValue::Text(t)) = &q {
            written.push(t.clone());
        }
        if let Some(q) = q {
            s.set("question", i, q);
        }
        let kind = match rng.random_range(0..200) {
            0 => None,
            1 => Some("D"),
            _ => Some(["A", "B", "C"][rng.random_range(0..3)]),
        };
        if let Some(k) = kind {
            s.set("answer_type", i, AnswerValue::Choice(k.into()));
        }
        // answers for every type; the disabled ones must not matter
        let pick = |rng: &mut dyn rand::RngCore, good: &[&str], bad: &[&str]| -> String {
            if rng.random_range(0..80) == 0 {
                bad[rng.random_range(0..bad.len())].to_string()
            } else {
                good[rng.random_range(0..good.len())].to_string()
            }
        };
        if rng.random_range(0..120) != 0 {
            s.set("number", i, AnswerValue::Text(pick(rng, &VALID_NUMBERS, &BAD_NUMBERS)));
        }
        if rng.random_range(0..120) != 0 {
            s.set("date", i, AnswerValue::Datetime(pick(rng, &VALID_DATES, &BAD_DATES)));
        }
        let want = match rng.random_range(0..120) {
            0 => 6,
            _ => rng.random_range(1..=5),
        };
        s.set("spans", i, gen_spans(rng, src, want, 150));
    }
    s
}

fn drop_oracle(src: &str, s: &ResponseState) -> bool {
    let n = s.group_counts().find(|(g, _)| *g == "qa").map(|(_, c)| c).unwrap_or(0);
    if n < 12 {
        return false;
    }
    let mut questions = BTreeSet::new();
    for i in 0..n {
        let Some(AnswerValue::Text(q)) = s.value("question", i) else { return false };
        if q.is_empty() || !q.ends_with('?') || q.contains('\n') || !questions.insert(q.clone()) {
            return false;
        }
        let ok = match s.value("answer_type", i) {
            Some(AnswerValue::Choice(c)) if c == "A" => {
                matches!(s.value("number", i), Some(AnswerValue::Text(t)) if VALID_NUMBERS.contains(&t.as_str()))
            }
            Some(AnswerValue::Choice(c)) if c == "B" => {
                matches!(s.value("date", i), Some(AnswerValue::Datetime(t)) if VALID_DATES.contains(&t.as_str()))
            }
            Some(AnswerValue::Choice(c)) if c == "C" => match s.value("spans", i) {
                Some(AnswerValue::Spans(sp)) => (1..=5).contains(&sp.len()) && sp.iter().all(|x| span_ok(src, x)),
                _ => false,
            },
            _ => false,
        };
        if !ok {
            return false;
        }
    }
    true
}

fn submission_gate() -> Check {
    let reg = Registry::with_builtins();
    let covid = parse_task_set(COVID_TASKSET, &reg).map_err(|d| format!("{d:?}"))?.value;
    let drop = parse_task_set(DROP, &reg).map_err(|d| format!("{d:?}"))?.value;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tally = BTreeMap::new();
    let suites: [(&str, &TaskSetSpec, &str, fn(&mut ChaCha8Rng, &str) -> ResponseState, fn(&str, &ResponseState) -> bool); 2] = [
        ("covid", &covid, "snippet", covid_state, covid_oracle),
        ("drop", &drop, "passage", drop_state, drop_oracle),
    ];
    for (name, ts, ctx, gen, oracle) in suites {
        let (mut acc, mut rej) = (0, 0);
        for k in 0..5000 {
            let task = &ts.tasks[k % ts.tasks.len()];
            let src = task.find_context(ctx, &ts.shared).unwrap().payload.clone();
            let state = gen(&mut rng, &src);
            let engine = validate_submission_with(task, &ts.shared, &state, &reg);
            let expected = oracle(&src, &state);
            ensure!(
                engine.is_ok() == expected,
                "{name}/{}: engine {:?} oracle {expected}\nstate {}",
                task.task_id,
                engine.err(),
                serde_json::to_string(&state).unwrap()
            );
            if expected {
                acc += 1;
            } else {
                rej += 1;
            }
        }
        ensure!(acc >= 500 && rej >= 500, "{name}: unbalanced sample, {acc} accepted / {rej} rejected");
        tally.insert(name, (acc, rej));
    }
    Ok(format!(
        "10000 states agree (covid {}/{} accepted/rejected, drop {}/{})",
        tally["covid"].0, tally["covid"].1, tally["drop"].0, tally["drop"].1
    ))
}

// ---------------------------------------------------------------------------
// 6. gating end to end

fn gating_airtight() -> Check {
    let env = env();
    let svc = &env.service;
    let name = "covid-quantities";
    svc.put_pipeline(name, COVID_PIPELINE).map_err(|e| e.to_string())?;
    let exam_hit = launch(svc, name, HitKind::Exam, 100, &[]);
    let task_hit = launch(svc, name, HitKind::TaskSet, 100, &[name]);
    let spec = svc.store().read(name, |r| r.latest().spec.clone()).unwrap();
    let pool = spec.exam.clone().unwrap();
    let exam = ExamTarget::from_pool(name, &exam_hit, &pool);
    let task = TaskTarget { pipeline: name.into(), hit_id: task_hit, task_set: spec.task_set.clone().unwrap() };
    let cfg = SimConfig { workers: 100, seed: 11, min_skill: 0.2, max_skill: 1.0, abandon_rate: 0.05, threads: 8, ..SimConfig::default() };
    let report = sim::run(svc.as_ref(), env.connector.as_ref(), Some(&exam), Some(&task), &Registry::with_builtins(), &cfg);
    ensure!(report.errors.is_empty(), "simulation errors {:?}", report.errors);

    let sessions = svc.store().read(name, |r| r.exam_sessions(1)).unwrap();
    let by_worker: BTreeMap<&str, &ExamSession> = sessions.iter().map(|s| (s.participant.as_str(), s)).collect();
    let submitted: Vec<_> = svc.store().read(name, |r| r.books[&1].submitted().cloned().collect()).unwrap();
    ensure!(!submitted.is_empty(), "no task submissions");
    for a in &submitted {
        let s = by_worker.get(a.worker.as_str()).ok_or(format!("{} submitted without an exam session", a.worker))?;
        let passed_at = s
            .attempts
            .iter()
            .filter(|t| t.grade.is_some_and(|g| g.passed))
            .filter_map(|t| t.submitted_at)
            .min()
            .ok_or(format!("{} submitted a task without passing", a.worker))?;
        ensure!(passed_at <= a.leased_at, "{} leased before passing", a.worker);
    }
    let failed = report.per_worker.iter().filter(|w| !w.passed).count();
    ensure!(report.task_pages_rejected as usize >= failed.saturating_sub(report.exam_abandons as usize), "rejections undercounted");
    ensure!(report.task_pages_rejected > 0, "no worker was turned away");

    let exam_report = svc.report(name, None).map_err(|e| e.to_string())?.exam.ok_or("no exam report")?;
    let graded: Vec<_> = sessions.iter().flat_map(|s| &s.attempts).filter(|a| a.grade.is_some()).collect();
    let mass: u64 = exam_report.histogram.iter().map(|b| b.count).sum();
    ensure!(mass == graded.len() as u64 && exam_report.graded_attempts == mass, "histogram mass {mass} vs {}", graded.len());
    let key: BTreeMap<&str, &str> = pool.questions.iter().map(|q| (q.question_id.as_str(), q.answer.as_str())).collect();
    let mut recount: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for a in &graded {
        for q in &a.sampled {
            let e = recount.entry(q.as_str()).or_default();
            e.0 += 1;
            if a.answers.get(q).map(String::as_str) != key.get(q.as_str()).copied() {
                e.1 += 1;
            }
        }
    }
    for qs in &exam_report.questions {
        let (shown, errors) = recount.get(qs.question_id.as_str()).copied().unwrap_or((0, 0));
        ensure!(qs.shown == shown && qs.errors == errors, "{}: report {}/{} vs recount {shown}/{errors}", qs.question_id, qs.shown, qs.errors);
        let rate = if shown == 0 { 0.0 } else { errors as f64 / shown as f64 };
        ensure!((qs.error_rate - rate).abs() < 1e-12, "{} error rate", qs.question_id);
    }
    let accepted = graded.len() + submitted.len();
    ensure!(
        env.connector.postbacks().len() == accepted && svc.post_emissions() as usize == accepted,
        "{} POST-backs for {accepted} accepted submissions",
        env.connector.postbacks().len()
    );
    Ok(format!(
        "100 workers: {} passed, {} task submissions all from passed workers, {} rejections; histogram mass {mass}",
        report.exams_passed,
        submitted.len(),
        report.task_pages_rejected
    ))
}

// ---------------------------------------------------------------------------
// 7. agreement

fn copy_book(raters: usize, tasks: usize, rng: &mut impl Rng) -> (TaskSetSpec, AssignmentBook) {
    let doc = serde_json::json!({
        "task_set_id": "copies",
        "redundancy": raters,
        "tasks": (0..tasks).map(|i| serde_json::json!({
            "task_id": format!("t{i}"),
            "contexts": [{"id": "c", "type": "text", "text": format!("item {i}")}],
            "annotations": [{"id": "label", "type": "multiple-choice", "prompt": "?", "options": {"A": "a", "B": "b", "C": "c"}}]
        })).collect::<Vec<_>>()
    });
    let reg = Registry::with_builtins();
    let ts = parse_task_set(&doc.to_string(), &reg).unwrap().value;
    let mut book = AssignmentBook::new(&ts, 60_000);
    let truth: Vec<&str> = (0..tasks).map(|_| ["A", "B", "C"][rng.random_range(0..3)]).collect();
    for r in 0..raters {
        let worker = format!("r{r}");
        while let Some(a) = book.next_assignment(&worker, 1).cloned() {
            let mut s = ResponseState::new();
            s.set("label", 0, AnswerValue::Choice(truth[a.task_index].into()));
            book.submit(&ts, &reg, &a.id, &worker, &s, 2).unwrap();
        }
    }
    (ts, book)
}

fn agreement_metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (ts, book) = copy_book(3, 40, &mut rng);
    let ag = agreement(&ts, &book, "label").map_err(|e| e.to_string())?;
    ensure!(ag.kappa == 1.0 && ag.percent == 1.0, "copies gave {ag:?}");
    ensure!(ag.items == 40 && ag.raters == 3, "copies covered {ag:?}");

    let table: Vec<Vec<u64>> = (0..10_000)
        .map(|_| {
            let yes = u64::from(rng.random_bool(0.5)) + u64::from(rng.random_bool(0.5));
            vec![yes, 2 - yes]
        })
        .collect();
    let k = fleiss_kappa(&table).ok_or("no kappa")?;
    ensure!(k.abs() <= 0.05, "independent raters kappa {k}");

    // 5 subjects, 3 raters, 2 categories:
    // P_i = 1, 1/3, 1/3, 1, 1/3 → P̄ = 3/5
    // p_A = 8/15, p_B = 7/15 → P_e = 113/225
    // κ = (3/5 - 113/225) / (1 - 113/225) = 22/112 = 11/56
    let hand = vec![vec![3, 0], vec![2, 1], vec![2, 1], vec![0, 3], vec![1, 2]];
    let k_hand = fleiss_kappa(&hand).ok_or("no kappa")?;
    ensure!((k_hand - 11.0 / 56.0).abs() < 1e-9, "hand table gave {k_hand}");
    Ok(format!("copies κ = 1.0; independent κ = {k:+.4}; hand table κ = {k_hand:.9} (11/56)"))
}

// ---------------------------------------------------------------------------
// 8. reproducibility

fn samples(store: &Store, name: &str, participants: usize, attempts: u32) -> Result<Vec<Vec<String>>, String> {
    let mut out = Vec::new();
    for p in 0..participants {
        for _ in 0..attempts {
            let ev = Event::ExamOpen { name: name.into(), version: 1, participant: format!("P{p}"), resume: false, at: 5 };
            match store.apply(ev).map_err(|e| e.to_string())? {
                Outcome::Attempt(a) => out.push(a.sampled),
                other => return Err(format!("unexpected {other:?}")),
            }
        }
    }
    Ok(out)
}

fn canonical_doc(doc: &SpecDocument) -> String {
    match doc {
        SpecDocument::Pipeline(p) => canonicalize(p),
        SpecDocument::TaskSet(t) => spec::canonicalize_task_set(t),
        SpecDocument::QuestionSet(q) => spec::canonicalize_question_set(q),
        SpecDocument::ExamConfig(c) => spec::canonicalize_exam_config(c),
    }
}

fn reproducibility() -> Check {
    let reg = Registry::with_builtins();
    let name = "covid-quantities";
    let original = env_with(b"shared-secret", 1, 60_000);
    original.service.put_pipeline(name, COVID_PIPELINE).map_err(|e| e.to_string())?;
    launch(&original.service, name, HitKind::Exam, 10, &[]);
    launch(&original.service, name, HitKind::TaskSet, 10, &[name]);
    let zip = original.service.bundle(name, None).map_err(|e| e.to_string())?;

    // relaunch elsewhere with the same secret and under another name
    let other = env_with(b"shared-secret", 2, 60_000);
    let imported = other.service.import_bundle("covid-copy", &zip).map_err(|e| e.to_string())?;
    ensure!(imported.version == 1, "imported as version {}", imported.version);
    let configs = other.service.store().read("covid-copy", |r| r.launch_configs.clone()).unwrap();
    for c in &configs {
        let gates: Vec<&str> = c.gates.iter().map(|g| if g == name { "covid-copy" } else { g.as_str() }).collect();
        launch(&other.service, "covid-copy", c.kind, c.count, &gates);
    }
    let a = samples(original.service.store(), name, 25, 3)?;
    let b = samples(other.service.store(), "covid-copy", 25, 3)?;
    ensure!(a == b, "sampled question ids differ after import");

    let orig_spec = original.service.store().read(name, |r| r.latest().spec.clone()).unwrap();
    let mut copy_spec = other.service.store().read("covid-copy", |r| r.latest().spec.clone()).unwrap();
    copy_spec.name = orig_spec.name.clone();
    ensure!(canonicalize(&copy_spec) == canonicalize(&orig_spec), "canonical bytes differ");
    let (m1, _) = bundle::verify_bundle(&zip).map_err(|e| e.to_string())?;
    let (m2, _) = bundle::verify_bundle(&other.service.bundle("covid-copy", None).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure!(m1.digest == m2.digest && m1.members == m2.members, "bundle digests differ");

    let mut fixtures = 0;
    for (label, raw) in fixture_specs() {
        let kind = spec::detect_kind(raw).ok_or(format!("{label}: unknown kind"))?;
        let first = spec::parse_document(raw, kind, &reg).map_err(|d| format!("{label}: {d:?}"))?.value;
        let c1 = canonical_doc(&first);
        let second = spec::parse_document(&c1, kind, &reg).map_err(|d| format!("{label} (canonical): {d:?}"))?.value;
        ensure!(second == first, "{label}: reparse changed the document");
        ensure!(canonical_doc(&second) == c1, "{label}: canonical form not stable");
        fixtures += 1;
    }
    Ok(format!("75 (participant, attempt) samples identical after import; digest {}…; {fixtures} fixtures round trip", &m1.digest[..12]))
}

// ---------------------------------------------------------------------------
// 9. concurrency

fn concurrency() -> Check {
    let env = env();
    let svc = env.service.clone();
    svc.put_pipeline("exam", &exam_pipeline("exam", 20, 10, 3, 0.8, "strict-greater")).map_err(|e| e.to_string())?;
    let opened = AtomicUsize::new(0);
    let exhausted = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..64 {
            s.spawn(|| {
                let ev = Event::ExamOpen { name: "exam".into(), version: 1, participant: "P".into(), resume: false, at: 1 };
                match svc.store().apply(ev) {
                    Ok(_) => opened.fetch_add(1, Ordering::SeqCst),
                    Err(StoreError::Exam(ExamError::AttemptsExhausted)) => exhausted.fetch_add(1, Ordering::SeqCst),
                    Err(e) => panic!("unexpected {e}"),
                };
            });
        }
    });
    let (opened, exhausted) = (opened.into_inner(), exhausted.into_inner());
    ensure!(opened == 3 && exhausted == 61, "{opened} opened, {exhausted} exhausted");

    let mut doc: serde_json::Value = serde_json::from_str(COVID_TASKSET).unwrap();
    doc["tasks"].as_array_mut().unwrap().truncate(1);
    let pipeline = serde_json::json!({"name": "one", "instruction": "x", "task_set": doc}).to_string();
    svc.put_pipeline("one", &pipeline).map_err(|e| e.to_string())?;
    let hit = launch(&svc, "one", HitKind::TaskSet, 64, &[]);
    let ts = svc.store().read("one", |r| r.latest().spec.task_set.clone().unwrap()).unwrap();
    let reg = Registry::with_builtins();
    let leased = AtomicUsize::new(0);
    let stored = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for w in 0..64 {
            let (svc, env, hit, ts, reg) = (&svc, &env, &hit, &ts, &reg);
            let (leased, stored) = (&leased, &stored);
            s.spawn(move || {
                let worker = format!("W{w:02}");
                let asg = env.connector.accept_hit(hit, &worker).unwrap();
                let params = ExternalParams::new(&asg, hit, &worker, "https://m.test");
                match svc.task_page("one", &params).unwrap() {
                    TaskPage::Assigned { token, .. } => {
                        leased.fetch_add(1, Ordering::SeqCst);
                        let mut rng = ChaCha8Rng::seed_from_u64(w);
                        let response = sim::valid_response(&ts.tasks[0], &ts.shared, reg, &mut rng, 1.0, 50);
                        let payload = SubmitPayload { answers: None, response: Some(response) };
                        // a double click: only one of the two may land
                        let ok = std::thread::scope(|inner| {
                            let a = inner.spawn(|| svc.submit(&token, payload.clone()).is_ok());
                            let b = inner.spawn(|| svc.submit(&token, payload.clone()).is_ok());
                            usize::from(a.join().unwrap()) + usize::from(b.join().unwrap())
                        });
                        stored.fetch_add(ok, Ordering::SeqCst);
                    }
                    TaskPage::Exhausted { .. } => {}
                    other => panic!("unexpected page {other:?}"),
                }
            });
        }
    });
    let submissions = svc.store().read("one", |r| r.books[&1].submitted().count()).unwrap();
    let (leased, stored) = (leased.into_inner(), stored.into_inner());
    ensure!(leased == 3 && stored == 3 && submissions == 3, "{leased} leases, {stored} accepted, {submissions} stored");
    ensure!(svc.post_emissions() == 3, "emissions {}", svc.post_emissions());
    Ok("64 parallel opens → 3 attempts; 64 parallel leases on redundancy 3 → 3 submissions".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("condition truth tables", Box::new(condition_truth_tables)),
        ("regex fixture messages", Box::new(regex_fixture_messages)),
        ("exam lifecycle 20/10/3", Box::new(|| exam_lifecycle(20, 10, 3, 0.8, "strict-greater", 500))),
        ("exam lifecycle 8/5/2", Box::new(|| exam_lifecycle(8, 5, 2, 0.8, "at-least", 500))),
        ("submission gate", Box::new(submission_gate)),
        ("qualification gating", Box::new(gating_airtight)),
        ("agreement metrics", Box::new(agreement_metrics)),
        ("reproducibility round trip", Box::new(reproducibility)),
        ("concurrency", Box::new(concurrency)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
