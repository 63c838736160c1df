//! A forgiving JSON reader for hand-written or model-written action inputs.
//!
//! Accepted beyond strict JSON: single-quoted strings, unquoted keys, bare
//! values (read as strings, or numbers when they look numeric), trailing
//! commas, raw newlines inside strings and `\_` escapes. Keys are normalized
//! by dropping backslashes.

use serde_json::{Map, Number, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LenientError {
    pub offset: usize,
    pub message: String,
}

impl std::fmt::Display for LenientError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} at character {}", self.message, self.offset)
    }
}

const MAX_DEPTH: usize = 64;

struct Reader {
    chars: Vec<char>,
    pos: usize,
}

pub fn parse_lenient(text: &str) -> Result<Value, LenientError> {
    let mut r = Reader {
        chars: text.chars().collect(),
        pos: 0,
    };
    r.skip_ws();
    let value = r.value(0)?;
    r.skip_ws();
    if r.pos < r.chars.len() {
        return Err(r.err("unexpected trailing text"));
    }
    Ok(value)
}

/// Parses `text` and requires a top-level object.
pub fn parse_object(text: &str) -> Result<Map<String, Value>, LenientError> {
    match parse_lenient(text)? {
        Value::Object(map) => Ok(map),
        _ => Err(LenientError {
            offset: 0,
            message: "expected an object enclosed in { }".into(),
        }),
    }
}

impl Reader {
    fn err(&self, message: &str) -> LenientError {
        LenientError {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn value(&mut self, depth: usize) -> Result<Value, LenientError> {
        if depth > MAX_DEPTH {
            return Err(self.err("nesting too deep"));
        }
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some('{') => self.object(depth),
            Some('[') => self.array(depth),
            Some(q @ ('"' | '\'')) => self.string(q).map(Value::String),
            Some(_) => self.bare(),
        }
    }

    fn object(&mut self, depth: usize) -> Result<Value, LenientError> {
        self.pos += 1;
        let mut map = Map::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(self.err("unclosed object")),
                Some('}') => {
                    self.pos += 1;
                    return Ok(Value::Object(map));
                }
                Some(',') => {
                    self.pos += 1;
                    continue;
                }
                _ => {}
            }
            let key = match self.peek() {
                Some(q @ ('"' | '\'')) => self.string(q)?,
                _ => self.bare_key()?,
            };
            self.skip_ws();
            if self.peek() != Some(':') {
                return Err(self.err("expected ':' after key"));
            }
            self.pos += 1;
            self.skip_ws();
            let value = self.value(depth + 1)?;
            map.insert(key.replace('\\', "").trim().to_string(), value);
            self.skip_ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some('}') => {}
                None => return Err(self.err("unclosed object")),
                Some(_) => return Err(self.err("expected ',' or '}'")),
            }
        }
    }

    fn array(&mut self, depth: usize) -> Result<Value, LenientError> {
        self.pos += 1;
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(self.err("unclosed array")),
                Some(']') => {
                    self.pos += 1;
                    return Ok(Value::Array(items));
                }
                Some(',') => {
                    self.pos += 1;
                    continue;
                }
                _ => {}
            }
            items.push(self.value(depth + 1)?);
            self.skip_ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(']') => {}
                None => return Err(self.err("unclosed array")),
                Some(_) => return Err(self.err("expected ',' or ']'")),
            }
        }
    }

    fn string(&mut self, quote: char) -> Result<String, LenientError> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            let Some(c) = self.peek() else {
                return Err(self.err("unterminated string"));
            };
            self.pos += 1;
            if c == quote {
                return Ok(out);
            }
            if c != '\\' {
                out.push(c);
                continue;
            }
            let Some(e) = self.peek() else {
                return Err(self.err("unterminated escape"));
            };
            self.pos += 1;
            match e {
                'n' => out.push('\n'),
                't' => out.push('\t'),
                'r' => out.push('\r'),
                'b' => out.push('\u{8}'),
                'f' => out.push('\u{c}'),
                'u' => {
                    let hex: String = self.chars.iter().skip(self.pos).take(4).collect();
                    let code = (hex.len() == 4)
                        .then(|| u32::from_str_radix(&hex, 16).ok())
                        .flatten()
                        .ok_or_else(|| self.err("invalid \\u escape"))?;
                    self.pos += 4;
                    out.push(char::from_u32(code).unwrap_or('\u{fffd}'));
                }
                other => out.push(other),
            }
        }
    }

    fn bare_key(&mut self) -> Result<String, LenientError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c != ':' && c != '}' && c != ',' && c != '\n') {
            self.pos += 1;
        }
        let key: String = self.chars[start..self.pos].iter().collect();
        if key.trim().is_empty() {
            return Err(self.err("expected a key"));
        }
        Ok(key)
    }

    fn bare(&mut self) -> Result<Value, LenientError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| !matches!(c, ',' | '}' | ']' | '\n')) {
            self.pos += 1;
        }
        let raw: String = self.chars[start..self.pos].iter().collect();
        let word = raw.trim();
        if word.is_empty() {
            return Err(self.err("expected a value"));
        }
        Ok(match word {
            "true" | "True" => Value::Bool(true),
            "false" | "False" => Value::Bool(false),
            "null" | "None" => Value::Null,
            _ => number(word).map(Value::Number).unwrap_or_else(|| Value::String(word.to_string())),
        })
    }
}

fn number(word: &str) -> Option<Number> {
    if let Ok(i) = word.parse::<i64>() {
        return Some(i.into());
    }
    let looks_numeric = word.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-'))
        && word.chars().any(|c| c.is_ascii_digit());
    if looks_numeric {
        word.parse::<f64>().ok().and_then(Number::from_f64)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn strict_json_passes_through() {
        let v = parse_lenient(r#"{"a": 1, "b": [true, null, "x"], "c": {"d": 2.5}}"#).unwrap();
        assert_eq!(v, json!({"a": 1, "b": [true, null, "x"], "c": {"d": 2.5}}));
    }

    #[test]
    fn sloppy_input_normalizes() {
        // hand-normalized: single quotes, trailing comma, escaped underscore, bare numeral
        let sloppy = "{'script_name': 'train.py', \"start\\_line_number\": '1', end_line_number: 74,}";
        let canonical = json!({"script_name": "train.py", "start_line_number": "1", "end_line_number": 74});
        assert_eq!(parse_lenient(sloppy).unwrap(), canonical);
    }

    #[test]
    fn raw_newlines_and_bare_strings() {
        let v = parse_object("{\n  edit_instruction: \"line one\nline two\",\n  save_name: train.py\n}").unwrap();
        assert_eq!(v["edit_instruction"], "line one\nline two");
        assert_eq!(v["save_name"], "train.py");
    }

    #[test]
    fn errors_carry_positions() {
        assert!(parse_lenient("{\"a\": ").is_err());
        assert!(parse_lenient("{\"a\" 1}").is_err());
        assert!(parse_object("[1]").is_err());
        assert!(parse_lenient("{} extra").is_err());
        let deep = "[".repeat(200);
        assert!(parse_lenient(&deep).is_err());
    }

    proptest! {
        #[test]
        fn never_panics(s in "\\PC{0,200}") {
            let _ = parse_lenient(&s);
        }

        #[test]
        fn strict_json_agrees_with_serde(v in any::<(i32, bool, String)>()) {
            let value = json!({"n": v.0, "b": v.1, "s": v.2});
            let text = serde_json::to_string(&value).unwrap();
            prop_assert_eq!(parse_lenient(&text).unwrap(), value);
        }
    }
}
