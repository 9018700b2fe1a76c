//! Serde helpers for dB quantities that may be infinite. JSON has no
//! infinity literal, so `±inf` are written as the strings `"-inf"`/`"inf"`.

use serde::{de, Deserialize, Deserializer, Serializer};

#[derive(Deserialize)]
#[serde(untagged)]
enum NumOrStr {
    Num(f64),
    Str(String),
}

fn parse(v: NumOrStr) -> Result<f64, String> {
    match v {
        NumOrStr::Num(x) => Ok(x),
        NumOrStr::Str(s) => match s.trim() {
            "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
            "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
            other => other.parse().map_err(|_| format!("expected a number or \"-inf\", got {other:?}")),
        },
    }
}

pub mod db {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        parse(NumOrStr::deserialize(d)?).map_err(de::Error::custom)
    }
}

pub mod opt_db {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => db::serialize(x, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<NumOrStr>::deserialize(d)?
            .map(parse)
            .transpose()
            .map_err(de::Error::custom)
    }
}
