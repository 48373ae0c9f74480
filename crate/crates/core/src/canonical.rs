//! Canonical structured-text writer.
//!
//! Output is JSON with lexicographically ordered keys, no insignificant
//! whitespace, bare integers, and every real number written with exactly four
//! decimals (ties to even). Identical values always produce identical bytes.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Canon {
    Null,
    Bool(bool),
    Int(i64),
    /// Real number rendered with four decimals.
    Fixed(f64),
    Str(String),
    Arr(Vec<Canon>),
    Obj(BTreeMap<String, Canon>),
}

impl Canon {
    pub fn obj<I, K>(fields: I) -> Canon
    where
        I: IntoIterator<Item = (K, Canon)>,
        K: Into<String>,
    {
        Canon::Obj(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn str(s: impl Into<String>) -> Canon {
        Canon::Str(s.into())
    }

    pub fn uint(v: impl TryInto<i64>) -> Canon {
        Canon::Int(v.try_into().unwrap_or(i64::MAX))
    }

    pub fn opt(v: Option<Canon>) -> Canon {
        v.unwrap_or(Canon::Null)
    }

    pub fn write(&self, out: &mut String) -> Result<()> {
        match self {
            Canon::Null => out.push_str("null"),
            Canon::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Canon::Int(i) => out.push_str(&i.to_string()),
            Canon::Fixed(x) => out.push_str(&fixed4(*x)?),
            Canon::Str(s) => out.push_str(&serde_json::to_string(s).expect("strings always serialize")),
            Canon::Arr(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    item.write(out)?;
                }
                out.push(']');
            }
            Canon::Obj(fields) => {
                out.push('{');
                for (i, (k, v)) in fields.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(k).expect("strings always serialize"));
                    out.push(':');
                    v.write(out)?;
                }
                out.push('}');
            }
        }
        Ok(())
    }

    /// Compact rendering without a trailing newline.
    pub fn to_line(&self) -> Result<String> {
        let mut s = String::new();
        self.write(&mut s)?;
        Ok(s)
    }
}

/// Four-decimal rendering, ties to even. Non-finite values are rejected.
pub fn fixed4(x: f64) -> Result<String> {
    if !x.is_finite() {
        return Err(Error::Serialization(format!("non-finite number {x}")));
    }
    // std formatting rounds the exact binary value, ties to even.
    let s = format!("{x:.4}");
    Ok(if s == "-0.0000" { "0.0000".to_string() } else { s })
}

/// Snaps `x` to the value its four-decimal rendering parses back to.
pub fn quantize4(x: f64) -> f64 {
    fixed4(x).map(|s| s.parse().expect("fixed4 output parses")).unwrap_or(x)
}
