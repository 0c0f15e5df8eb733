//! Fixed-width float text used by every file format the crate writes.
//!
//! Doubles are always written with 17 significant digits in scientific
//! notation, which round-trips any IEEE-754 value exactly and keeps the output
//! byte-stable across platforms.

use serde::ser::{Serialize, SerializeSeq, Serializer};
use serde_json::value::RawValue;

/// Formats `x` with 17 significant digits. Non-finite values become `nan`,
/// `inf` or `-inf`.
pub fn f17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn json_number(x: f64) -> Box<RawValue> {
    let text = if x.is_finite() {
        f17(x)
    } else {
        "null".to_string()
    };
    RawValue::from_string(text).expect("formatted float is valid JSON")
}

/// A float that serializes to JSON with 17 significant digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F17(pub f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        json_number(self.0).serialize(serializer)
    }
}

/// `serialize_with` helper for `f64` fields.
pub fn ser_f64<S: Serializer>(x: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    F17(*x).serialize(serializer)
}

/// `serialize_with` helper for `Vec<f64>` fields.
pub fn ser_vec<S: Serializer>(xs: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
    let mut seq = serializer.serialize_seq(Some(xs.len()))?;
    for &x in xs {
        seq.serialize_element(&F17(x))?;
    }
    seq.end()
}

/// `serialize_with` helper for optional rates (undefined rates become `null`).
pub fn ser_opt<S: Serializer>(x: &Option<f64>, serializer: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => F17(*v).serialize(serializer),
        None => serializer.serialize_none(),
    }
}

/// `serialize_with` helper for optional vectors (`None` becomes `null`).
pub fn ser_opt_vec<S: Serializer>(xs: &Option<Vec<f64>>, serializer: S) -> Result<S::Ok, S::Error> {
    match xs {
        Some(v) => ser_vec(v, serializer),
        None => serializer.serialize_none(),
    }
}

/// Pretty-printed JSON followed by a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for &x in &[0.1, 1.0 / 3.0, -2.5e-300, 123456.789, 0.0, -0.0, f64::MAX] {
            let s = f17(x);
            let digits: String = s
                .split('e')
                .next()
                .unwrap()
                .chars()
                .filter(char::is_ascii_digit)
                .collect();
            assert_eq!(digits.len(), 17, "{s}");
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn json_output_is_parseable() {
        #[derive(serde::Serialize)]
        struct Row {
            #[serde(serialize_with = "ser_vec")]
            v: Vec<f64>,
            #[serde(serialize_with = "ser_opt")]
            o: Option<f64>,
        }
        let s = serde_json::to_string(&Row {
            v: vec![0.8, -1e-9],
            o: None,
        })
        .unwrap();
        assert_eq!(
            s,
            r#"{"v":[8.0000000000000004e-1,-1.0000000000000001e-9],"o":null}"#
        );
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["v"][0].as_f64(), Some(0.8));
    }
}
