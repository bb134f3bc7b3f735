//! Instruction rendering and HTML sanitizing.
//!
//! Markdown goes through pulldown-cmark; the resulting HTML, and every
//! requester-supplied `html` context, then passes an allowlist filter.
//! Script-capable elements are removed with their content, event-handler
//! and style attributes are dropped, and URLs must be relative or use
//! http, https or mailto. Images, video and audio embeds survive.

use pulldown_cmark::{html, Options, Parser};

pub fn render_instruction(markdown: &str) -> String {
    sanitize_html(&render_unsanitized(markdown))
}

/// Plain CommonMark (plus tables and strikethrough) rendering.
pub fn render_unsanitized(markdown: &str) -> String {
    let parser = Parser::new_ext(markdown, Options::ENABLE_TABLES | Options::ENABLE_STRIKETHROUGH);
    let mut out = String::new();
    html::push_html(&mut out, parser);
    out
}

const DROP_WITH_CONTENT: &[&str] = &[
    "script", "style", "iframe", "object", "embed", "template", "noscript", "textarea", "select", "svg", "math",
    "frame", "frameset", "applet", "title", "head",
];

const VOID: &[&str] = &["br", "hr", "img", "source", "wbr"];

const GLOBAL_ATTRS: &[&str] = &["title", "class", "lang", "dir"];

fn allowed_attrs(tag: &str) -> Option<&'static [&'static str]> {
    Some(match tag {
        "p" | "br" | "hr" | "b" | "strong" | "i" | "em" | "u" | "s" | "del" | "ins" | "mark" | "code" | "pre"
        | "kbd" | "sub" | "sup" | "small" | "blockquote" | "ul" | "li" | "h1" | "h2" | "h3" | "h4" | "h5" | "h6"
        | "span" | "div" | "dl" | "dt" | "dd" | "figure" | "figcaption" | "table" | "thead" | "tbody" | "tr"
        | "caption" | "wbr" => &[],
        "ol" => &["start"],
        "th" | "td" => &["colspan", "rowspan", "align", "style-align"],
        "a" => &["href"],
        "img" => &["src", "alt", "width", "height"],
        "video" => &["src", "poster", "controls", "width", "height", "muted", "loop", "preload"],
        "audio" => &["src", "controls", "loop", "preload"],
        "source" => &["src", "type"],
        _ => return None,
    })
}

fn is_url_attr(name: &str) -> bool {
    matches!(name, "href" | "src" | "poster")
}

/// Relative URLs and http/https/mailto pass.
pub fn is_safe_url(url: &str) -> bool {
    let cleaned: String = url.chars().filter(|c| !c.is_whitespace() && !c.is_control()).collect();
    let lower = cleaned.to_ascii_lowercase();
    match lower.find(':') {
        None => true,
        Some(colon) => {
            if lower[..colon].contains(['/', '?', '#']) {
                return true;
            }
            matches!(&lower[..colon], "http" | "https" | "mailto")
        }
    }
}

fn escape_attr(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
    out
}

/// Escapes text for HTML element content.
pub fn escape_text(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

struct Tag {
    name: String,
    closing: bool,
    attrs: Vec<(String, Option<String>)>,
    /// Byte offset just past the `>`.
    end: usize,
}

fn parse_tag(s: &str, start: usize) -> Option<Tag> {
    let b = s.as_bytes();
    let mut i = start + 1;
    let closing = b.get(i) == Some(&b'/');
    if closing {
        i += 1;
    }
    let name_start = i;
    while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'-') {
        i += 1;
    }
    if i == name_start || !b[name_start].is_ascii_alphabetic() {
        return None;
    }
    let name = s[name_start..i].to_ascii_lowercase();
    let mut attrs = Vec::new();
    loop {
        while i < b.len() && (b[i].is_ascii_whitespace() || b[i] == b'/') {
            i += 1;
        }
        if i >= b.len() {
            return None;
        }
        if b[i] == b'>' {
            return Some(Tag { name, closing, attrs, end: i + 1 });
        }
        let an_start = i;
        while i < b.len() && !b[i].is_ascii_whitespace() && !matches!(b[i], b'=' | b'>' | b'/') {
            i += 1;
        }
        let attr_name = s[an_start..i].to_ascii_lowercase();
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        let mut value = None;
        if b.get(i) == Some(&b'=') {
            i += 1;
            while i < b.len() && b[i].is_ascii_whitespace() {
                i += 1;
            }
            match b.get(i) {
                Some(&q @ (b'"' | b'\'')) => {
                    let vs = i + 1;
                    let ve = vs + s[vs..].find(q as char)?;
                    value = Some(decode_entities(&s[vs..ve]));
                    i = ve + 1;
                }
                Some(_) => {
                    let vs = i;
                    while i < b.len() && !b[i].is_ascii_whitespace() && b[i] != b'>' {
                        i += 1;
                    }
                    value = Some(decode_entities(&s[vs..i]));
                }
                None => return None,
            }
        }
        if !attr_name.is_empty() {
            attrs.push((attr_name, value));
        }
    }
}

/// Decodes the handful of entities that matter for URL scheme checks.
fn decode_entities(v: &str) -> String {
    if !v.contains('&') {
        return v.to_string();
    }
    let mut out = String::new();
    let mut rest = v;
    while let Some(p) = rest.find('&') {
        out.push_str(&rest[..p]);
        rest = &rest[p..];
        let Some(semi) = rest.find(';').filter(|&s| s <= 10) else {
            out.push('&');
            rest = &rest[1..];
            continue;
        };
        let ent = &rest[1..semi];
        let decoded = match ent {
            "amp" => Some('&'),
            "lt" => Some('<'),
            "gt" => Some('>'),
            "quot" => Some('"'),
            "apos" => Some('\''),
            "colon" => Some(':'),
            _ if ent.starts_with("#x") || ent.starts_with("#X") => {
                u32::from_str_radix(&ent[2..], 16).ok().and_then(char::from_u32)
            }
            _ if ent.starts_with('#') => ent[1..].parse().ok().and_then(char::from_u32),
            _ => None,
        };
        match decoded {
            Some(c) => {
                out.push(c);
                rest = &rest[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn emit_tag(out: &mut String, tag: &Tag) {
    let Some(allowed) = allowed_attrs(&tag.name) else { return };
    if tag.closing {
        if !VOID.contains(&tag.name.as_str()) {
            out.push_str("</");
            out.push_str(&tag.name);
            out.push('>');
        }
        return;
    }
    out.push('<');
    out.push_str(&tag.name);
    for (name, value) in &tag.attrs {
        if !(allowed.contains(&name.as_str()) || GLOBAL_ATTRS.contains(&name.as_str())) {
            continue;
        }
        if is_url_attr(name) && !value.as_deref().is_some_and(is_safe_url) {
            continue;
        }
        out.push(' ');
        out.push_str(name);
        if let Some(v) = value {
            out.push_str("=\"");
            out.push_str(&escape_attr(v));
            out.push('"');
        }
    }
    if tag.name == "a" {
        out.push_str(" rel=\"noopener noreferrer nofollow\"");
    }
    out.push('>');
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    haystack.to_ascii_lowercase().find(needle)
}

pub fn sanitize_html(input: &str) -> String {
    let mut out = String::with_capacity(input.len());
    let mut i = 0;
    while i < input.len() {
        let Some(rel) = input[i..].find('<') else {
            out.push_str(&input[i..]);
            break;
        };
        out.push_str(&input[i..i + rel]);
        let start = i + rel;
        let rest = &input[start..];
        if rest.starts_with("<!--") {
            i = rest.find("-->").map_or(input.len(), |e| start + e + 3);
            continue;
        }
        if rest.starts_with("<!") || rest.starts_with("<?") {
            i = rest.find('>').map_or(input.len(), |e| start + e + 1);
            continue;
        }
        match parse_tag(input, start) {
            Some(tag) if !tag.closing && DROP_WITH_CONTENT.contains(&tag.name.as_str()) => {
                let close = format!("</{}", tag.name);
                i = match find_ci(&input[tag.end..], &close) {
                    Some(p) => {
                        let after = tag.end + p;
                        input[after..].find('>').map_or(input.len(), |e| after + e + 1)
                    }
                    None => input.len(),
                };
            }
            Some(tag) => {
                emit_tag(&mut out, &tag);
                i = tag.end;
            }
            None => {
                out.push_str("&lt;");
                i = start + 1;
            }
        }
    }
    out
}
