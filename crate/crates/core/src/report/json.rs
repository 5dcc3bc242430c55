//! Deterministic JSON text: keys sorted, floats printed with six decimals.

use serde::Serialize;
use serde_json::Value;

use crate::error::Result;

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let f = n.as_f64().unwrap_or(f64::NAN);
                out.push_str(&format!("{f:.6}"));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_value(&map[k], out);
            }
            out.push('}');
        }
    }
}

/// One-line JSON with sorted keys and `{:.6}` floats.
pub fn to_fixed_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&v, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_format() {
        let v = serde_json::json!({"b": 0.5, "a": [1, 2.0, null], "c": "x\"y"});
        assert_eq!(to_fixed_json(&v).unwrap(), r#"{"a":[1,2.000000,null],"b":0.500000,"c":"x\"y"}"#);
        let back: Value = serde_json::from_str(&to_fixed_json(&v).unwrap()).unwrap();
        assert_eq!(back["b"], 0.5);
    }
}
