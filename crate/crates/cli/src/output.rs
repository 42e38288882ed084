use std::io::Write;
use std::path::Path;

use gridshare_core::sharing::BidTrace;
use gridshare_core::UserId;
use serde::Serialize;
use serde_json::Value;

/// Significant digits kept in JSON output.
pub const DIGITS: usize = 12;

pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if !x.is_finite() {
        return x;
    }
    format!("{:.*e}", DIGITS - 1, x).parse().unwrap_or(x)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to [`DIGITS`] significant digits.
pub fn to_json<S: Serialize>(value: &S) -> anyhow::Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

/// Writes to `path`, or standard output when there is none.
pub fn emit(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// One row per iteration and user: `iter,user_id,b,lambda,d,residual`.
pub fn trace_csv(trace: &BidTrace<f64>, ids: &[UserId]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iter", "user_id", "b", "lambda", "d", "residual"])?;
    for r in &trace.records {
        for (k, id) in ids.iter().enumerate() {
            w.serialize((r.n, id.0, r.b[k] + 0.0, r.lambda[k] + 0.0, r.d[k] + 0.0, r.residual))?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(-1.234567890123456e-5), -1.23456789012e-5);
        assert!(round_sig(-0.0).is_sign_positive());
        let s = to_json(&serde_json::json!({"x": [0.30000000000000004, 2], "y": "z"})).unwrap();
        assert!(s.contains("0.3") && !s.contains("0000000004"));
        assert!(s.contains("\"y\": \"z\""));
    }
}
