//! Canonical JSON text: object keys sorted, reals at nine significant
//! digits, two-space indentation, trailing newline.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub fn to_canonical_string<T: Serialize>(value: &T) -> String {
    let tree = serde_json::to_value(value).expect("report types serialize to JSON");
    let mut out = String::new();
    write_value(&tree, 0, &mut out);
    out.push('\n');
    out
}

pub fn from_canonical_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("canonical json: {e}")))
}

/// Formats a finite real with nine significant digits.
pub fn format_real(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        // non-finite values never reach reports; render as zero rather than invalid JSON
        return "0.0".to_string();
    }
    let sci = format!("{x:.8e}");
    let (_, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..=8).contains(&exp) {
        let decimals = (8 - exp) as usize;
        let mut s = format!("{x:.decimals$}");
        if !s.contains('.') {
            s.push_str(".0");
        }
        s
    } else {
        sci
    }
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else {
                out.push_str(&format_real(n.as_f64().unwrap_or(0.0)));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string escapes")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(indent + 1, out);
                write_value(item, indent + 1, out);
            }
            newline(indent, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(indent + 1, out);
                out.push_str(&serde_json::to_string(key).expect("string escapes"));
                out.push_str(": ");
                write_value(&map[key.as_str()], indent + 1, out);
            }
            newline(indent, out);
            out.push('}');
        }
    }
}

fn newline(indent: usize, out: &mut String) {
    out.push('\n');
    for _ in 0..indent {
        out.push_str("  ");
    }
}
