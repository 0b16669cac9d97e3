//! Pulls one JSON object out of free-form completion text.

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Clean,
    Repaired,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub object: Map<String, Value>,
    /// `Clean` or `Repaired`; never `Failed`.
    pub status: ParseStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructuredError {
    #[error("no JSON object found in completion")]
    NoJsonFound,
    #[error("unbalanced braces: object opened at byte {open_at} never closes")]
    UnbalancedBraces { open_at: usize },
    #[error("invalid JSON at byte {offset}: {message}")]
    ParseError { offset: usize, message: String },
}

/// Strips a code fence if present, takes the first balanced top-level
/// `{...}` block and parses it. Anything dropped along the way (fences,
/// prose) marks the result as repaired.
pub fn parse_structured(text: &str) -> Result<Parsed, StructuredError> {
    let (start, end) = fenced_region(text).unwrap_or((0, text.len()));
    let region = &text[start..end];

    let open = region.find('{').ok_or(StructuredError::NoJsonFound)?;
    let close = matching_brace(region, open)
        .ok_or(StructuredError::UnbalancedBraces { open_at: start + open })?;
    let block_start = start + open;
    let block = &text[block_start..=start + close];

    let value: Value = serde_json::from_str(block).map_err(|e| StructuredError::ParseError {
        offset: block_start + byte_offset(block, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let Value::Object(object) = value else {
        unreachable!("a block starting with '{{' is an object or a parse error")
    };

    let status = if text.trim() == block { ParseStatus::Clean } else { ParseStatus::Repaired };
    Ok(Parsed { object, status })
}

/// Byte range after an opening ``` fence, skipping the info string. A fence
/// only counts when it comes before the first `{`, so backticks inside JSON
/// strings are left alone. The range runs to the end of the text; brace
/// matching finds where the object stops.
fn fenced_region(text: &str) -> Option<(usize, usize)> {
    let open = text.find("```")?;
    if text.find('{').is_some_and(|b| b < open) {
        return None;
    }
    let after = open + 3;
    let body = match text[after..].find('\n') {
        Some(nl) => after + nl + 1,
        None => after,
    };
    Some((body, text.len()))
}

/// Index of the `}` closing the `{` at `open`, skipping braces inside strings.
fn matching_brace(s: &str, open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, b) in s.bytes().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// serde_json reports 1-based line and column (column counts bytes).
fn byte_offset(s: &str, line: usize, column: usize) -> usize {
    let line_start: usize = s.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(s.len())
}
