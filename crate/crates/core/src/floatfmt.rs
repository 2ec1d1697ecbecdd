//! Serde helpers that write `f64` as JSON numbers with 17 significant
//! digits, which round-trips every finite double exactly. Non-finite and
//! subnormal values are refused at serialization time.

use serde::ser::{Error as _, SerializeSeq};
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

pub(crate) fn check(v: f64) -> Result<(), String> {
    if !v.is_finite() {
        return Err(format!("non-finite value {v}"));
    }
    if v != 0.0 && !v.is_normal() {
        return Err(format!("subnormal value {v:e}"));
    }
    Ok(())
}

fn raw(v: f64) -> Result<Box<RawValue>, String> {
    check(v)?;
    RawValue::from_string(format!("{v:.16e}")).map_err(|e| e.to_string())
}

struct Digits17(f64);

impl Serialize for Digits17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        raw(self.0).map_err(S::Error::custom)?.serialize(s)
    }
}

pub(crate) fn f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    Digits17(*v).serialize(s)
}

pub(crate) fn vec<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&Digits17(*x))?;
    }
    seq.end()
}
