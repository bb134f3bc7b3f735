//! ISO-8601 values accepted by datetime annotations.
//!
//! Accepted forms: `YYYY-MM-DD`, `YYYY-MM-DDTHH:MM`, `YYYY-MM-DDTHH:MM:SS`
//! with optional fractional seconds, each date-time optionally followed by
//! `Z` or a `±HH:MM` offset. Calendar validity is checked, so `2021-02-29`
//! is rejected.

use chrono::{DateTime, NaiveDate, NaiveDateTime};

const NAIVE_FORMATS: [&str; 2] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M"];

fn has_four_digit_year(value: &str) -> bool {
    let b = value.as_bytes();
    b.len() >= 5 && b[..4].iter().all(u8::is_ascii_digit) && b[4] == b'-'
}

pub fn is_iso8601(value: &str) -> bool {
    if !has_four_digit_year(value) {
        return false;
    }
    if value.len() == 10 {
        return NaiveDate::parse_from_str(value, "%Y-%m-%d").is_ok();
    }
    if NAIVE_FORMATS.iter().any(|f| NaiveDateTime::parse_from_str(value, f).is_ok()) {
        return true;
    }
    if DateTime::parse_from_rfc3339(value).is_ok() {
        return true;
    }
    // Offset form without seconds, e.g. 2020-05-01T10:00Z.
    let split = value.len().saturating_sub(if value.ends_with('Z') { 1 } else { 6 });
    if value.len() > 16 && split == 16 && value.is_char_boundary(split) {
        let (head, tail) = value.split_at(split);
        let mut with_seconds = alloc::string::String::from(head);
        with_seconds.push_str(":00");
        with_seconds.push_str(tail);
        return DateTime::parse_from_rfc3339(&with_seconds).is_ok();
    }
    false
}
