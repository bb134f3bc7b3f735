//! Server-rendered worker pages. The interactive annotation widgets are the
//! web client's job; these pages carry the same data and post back to the
//! same endpoint.

use std::fmt::Write;

use crowdforge_core::constraint::Violation;

use super::service::{ContextView, ExamPage, GateStatus, QuestionView, SubmitOutcome, TaskPage, TaskView};
use crate::markdown::escape_text as esc;

fn layout(title: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{}</title></head>\n<body>\n{body}</body></html>\n",
        esc(title)
    )
}

fn context_html(out: &mut String, c: &ContextView) {
    out.push_str("<div class=\"context\">");
    if let Some(label) = &c.label {
        let _ = write!(out, "<h4>{}</h4>", esc(label));
    }
    let p = esc(&c.payload);
    match c.kind.as_str() {
        "text" => {
            let _ = write!(out, "<p>{p}</p>");
        }
        "html" => out.push_str(&c.payload),
        "image" => {
            let _ = write!(out, "<img src=\"{p}\" alt=\"\">");
        }
        "audio" => {
            let _ = write!(out, "<audio controls src=\"{p}\"></audio>");
        }
        _ => {
            let _ = write!(out, "<video controls src=\"{p}\"></video>");
        }
    }
    out.push_str("</div>\n");
}

fn question_html(out: &mut String, q: &QuestionView, input: bool) {
    let _ = writeln!(out, "<fieldset class=\"question\"><legend>{}</legend>", esc(&q.question_text));
    for c in &q.context {
        context_html(out, c);
    }
    for o in &q.options {
        if input {
            let _ = writeln!(
                out,
                "<label><input type=\"radio\" name=\"{}\" value=\"{}\"> {}</label><br>",
                esc(&q.question_id),
                esc(&o.key),
                esc(&o.text)
            );
        } else {
            let _ = writeln!(out, "<div>{}. {}</div>", esc(&o.key), esc(&o.text));
        }
    }
    out.push_str("</fieldset>\n");
}

pub fn exam_page(page: &ExamPage) -> String {
    let mut b = String::new();
    match page {
        ExamPage::Preview { pipeline, instruction_html, sample_size, max_attempts } => {
            b.push_str(instruction_html);
            let _ = writeln!(
                b,
                "<p class=\"preview\">Accept the HIT to start the exam: {sample_size} questions, {max_attempts} chance(s).</p>"
            );
            layout(pipeline, &b)
        }
        ExamPage::Attempt { pipeline, instruction_html, attempt, remaining, questions, token } => {
            b.push_str(instruction_html);
            let _ = writeln!(b, "<p>Attempt {attempt}; {remaining} chance(s) left after this one.</p>");
            let _ = writeln!(b, "<form method=\"POST\" action=\"../submit/{}\">", esc(token));
            for q in questions {
                question_html(&mut b, q, true);
            }
            b.push_str("<button type=\"submit\">Submit</button>\n</form>\n");
            layout(pipeline, &b)
        }
        ExamPage::Passed { pipeline } => {
            layout(pipeline, "<p class=\"passed\">You already passed this exam.</p>\n")
        }
    }
}

fn task_html(out: &mut String, t: &TaskView) {
    for c in &t.contexts {
        context_html(out, c);
    }
    if let Some(anns) = t.spec.get("annotations").and_then(|a| a.as_array()) {
        for a in anns {
            let prompt = a.get("prompt").and_then(|p| p.as_str()).unwrap_or_default();
            let _ = writeln!(out, "<div class=\"annotation\">{}</div>", esc(prompt));
        }
    }
    let spec = serde_json::to_string(&t.spec).unwrap_or_default();
    let _ = writeln!(out, "<script type=\"application/json\" id=\"task-spec\">{}</script>", spec.replace("</", "<\\/"));
}

pub fn task_page(page: &TaskPage) -> String {
    let mut b = String::new();
    match page {
        TaskPage::Preview { pipeline, instruction_html, task } => {
            b.push_str(instruction_html);
            b.push_str("<p class=\"preview\">Preview: accept the HIT to work on this task.</p>\n");
            task_html(&mut b, task);
            layout(pipeline, &b)
        }
        TaskPage::Assigned { pipeline, instruction_html, task, token, .. } => {
            b.push_str(instruction_html);
            task_html(&mut b, task);
            let _ = write!(
                b,
                "<form method=\"POST\" action=\"../submit/{}\">\n<textarea name=\"response\" hidden></textarea>\n<button type=\"submit\">Submit</button>\n</form>\n",
                esc(token)
            );
            layout(pipeline, &b)
        }
        TaskPage::Exhausted { pipeline } => layout(pipeline, "<p>No tasks are left for you in this task set.</p>\n"),
    }
}

pub fn rejection_page(gates: &[GateStatus]) -> String {
    let mut b = String::from("<p class=\"rejected\">Only workers who passed the qualification exam can continue.</p>\n<ul>\n");
    for g in gates {
        let _ = writeln!(
            b,
            "<li>{} ({}): <a href=\"{}\">take the exam</a></li>",
            esc(&g.pipeline),
            g.status.as_str(),
            esc(&g.exam_url)
        );
    }
    b.push_str("</ul>\n");
    layout("Qualification required", &b)
}

pub fn violations_page(violations: &[Violation]) -> String {
    let mut b = String::from("<p>Please fix the following before submitting:</p>\n<ul class=\"violations\">\n");
    for v in violations {
        let _ = writeln!(b, "<li>{}</li>", esc(&v.to_string()));
    }
    b.push_str("</ul>\n");
    layout("Submission rejected", &b)
}

pub fn error_page(code: &str, message: &str) -> String {
    layout("Error", &format!("<p class=\"error\" data-code=\"{}\">{}</p>\n", esc(code), esc(message)))
}

/// Aggregate result plus the form that posts back to the marketplace.
pub fn submitted_page(outcome: &SubmitOutcome) -> String {
    let mut b = String::new();
    if let Some(f) = &outcome.exam {
        let verdict = if f.passed { "passed" } else { "not passed" };
        let _ = writeln!(b, "<p class=\"result\">{} mistake(s); {verdict}; {} chance(s) left.</p>", f.mistakes, f.remaining);
    } else {
        b.push_str("<p class=\"result\">Thank you, your response was recorded.</p>\n");
    }
    let _ = writeln!(b, "<form id=\"external-submit\" method=\"POST\" action=\"{}\">", esc(&outcome.external_submit.action));
    for (k, v) in &outcome.external_submit.fields {
        let _ = writeln!(b, "<input type=\"hidden\" name=\"{}\" value=\"{}\">", esc(k), esc(v));
    }
    b.push_str("</form>\n<script>document.getElementById('external-submit').submit();</script>\n");
    layout(&outcome.pipeline, &b)
}
