//! Small text utilities shared by the prompt parsers.

/// Location of one header inside a headed-sections document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeaderHit {
    /// Byte offset of the start of the header line.
    pub line_start: usize,
    /// Byte offset where the section body begins.
    pub body_start: usize,
}

/// Splits `text` into sections introduced by the given headers.
///
/// Headers are searched in the order given, each strictly after the previous
/// one that was found, and only at the start of a line. A header line may be
/// decorated with list markers or markdown emphasis (`-Reflection:`,
/// `**Method:**`) and may carry a parenthesised tag (`Keywords (k)`). The
/// body of a header runs until the next header that was found.
#[derive(Debug, Clone)]
pub struct HeadedSections<'a> {
    text: &'a str,
    hits: Vec<Option<HeaderHit>>,
}

impl<'a> HeadedSections<'a> {
    pub fn parse(text: &'a str, headers: &[&str], case_sensitive: bool) -> Self {
        let lines = line_spans(text);
        let mut hits = Vec::with_capacity(headers.len());
        let mut cursor_line = 0usize;
        for header in headers {
            let mut found = None;
            for (idx, &(start, end)) in lines.iter().enumerate().skip(cursor_line) {
                if let Some(offset) = match_header(&text[start..end], header, case_sensitive) {
                    let body_start = if offset >= end - start {
                        // header alone on its line: body starts on the next line
                        lines.get(idx + 1).map(|l| l.0).unwrap_or(text.len())
                    } else {
                        start + offset
                    };
                    found = Some((idx, HeaderHit { line_start: start, body_start }));
                    break;
                }
            }
            match found {
                Some((idx, hit)) => {
                    cursor_line = idx + 1;
                    hits.push(Some(hit));
                }
                None => hits.push(None),
            }
        }
        Self { text, hits }
    }

    pub fn hit(&self, index: usize) -> Option<HeaderHit> {
        self.hits.get(index).copied().flatten()
    }

    pub fn found(&self, index: usize) -> bool {
        self.hit(index).is_some()
    }

    /// Raw (untrimmed) body of the header at `index`.
    pub fn raw_body(&self, index: usize) -> Option<&'a str> {
        let hit = self.hit(index)?;
        let end = self.hits[index + 1..]
            .iter()
            .flatten()
            .map(|h| h.line_start)
            .find(|&s| s >= hit.body_start)
            .unwrap_or(self.text.len());
        Some(&self.text[hit.body_start.min(end)..end])
    }

    /// Trimmed body of the header at `index`.
    pub fn body(&self, index: usize) -> Option<&'a str> {
        self.raw_body(index).map(str::trim)
    }
}

/// Returns `(start, end)` byte spans of each line, excluding the terminator.
pub fn line_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, b) in text.bytes().enumerate() {
        if b == b'\n' {
            let end = if i > start && text.as_bytes()[i - 1] == b'\r' { i - 1 } else { i };
            spans.push((start, end));
            start = i + 1;
        }
    }
    if start < text.len() {
        spans.push((start, text.len()));
    }
    spans
}

/// Checks whether `line` is a header line for `name`. Returns the byte offset
/// within the line where the body begins (the line length when the header
/// stands alone).
pub fn match_header(line: &str, name: &str, case_sensitive: bool) -> Option<usize> {
    let trimmed = line.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '-' | '*' | '#' | '>' | '_'));
    let mut pos = line.len() - trimmed.len();
    let rest = &line[pos..];
    let head = rest.get(..name.len())?;
    let same = if case_sensitive { head == name } else { head.eq_ignore_ascii_case(name) };
    if !same {
        return None;
    }
    pos += name.len();
    pos += skip_decoration(&line[pos..]);
    // optional "(t)" style tag
    let after = &line[pos..];
    let after_ws = after.trim_start_matches([' ', '\t']);
    if after_ws.starts_with('(') {
        if let Some(close) = after_ws.find(')') {
            pos += (after.len() - after_ws.len()) + close + 1;
            pos += skip_decoration(&line[pos..]);
        }
    }
    let after = &line[pos..];
    let after_ws = after.trim_start_matches([' ', '\t']);
    if let Some(stripped) = after_ws.strip_prefix(':') {
        let mut body = pos + (after.len() - after_ws.len()) + 1;
        body += skip_decoration(stripped);
        body += line[body.min(line.len())..].len() - line[body.min(line.len())..].trim_start_matches([' ', '\t']).len();
        return Some(body.min(line.len()));
    }
    if after_ws.trim_end().is_empty() {
        return Some(line.len());
    }
    None
}

fn skip_decoration(s: &str) -> usize {
    s.len() - s.trim_start_matches(['*', '_']).len()
}

/// Number of whitespace-separated words.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Removes a surrounding markdown code fence, if any.
pub fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return text;
    };
    let Some(newline) = rest.find('\n') else {
        return text;
    };
    let body = &rest[newline + 1..];
    match body.rfind("```") {
        Some(end) => &body[..end],
        None => body,
    }
}

/// Clips `text` to at most `max_chars` characters, appending `marker` inside
/// the limit when clipping happens.
pub fn clip_chars(text: &str, max_chars: usize, marker: &str) -> String {
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let keep = max_chars.saturating_sub(marker.chars().count());
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(marker);
    out.chars().take(max_chars).collect()
}

/// Lowercased alphanumeric tokens in order of appearance.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Lowercases and collapses internal whitespace.
pub fn normalize_title(title: &str) -> String {
    title.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}
