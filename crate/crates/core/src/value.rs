//! Scalar values and their kinds.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::ValueError;

/// The kind of a non-null value. Attributes are typed by one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Boolean,
    Integer,
    Decimal,
    Text,
    Timestamp,
}

impl DataType {
    pub const ALL: [DataType; 5] = [
        DataType::Boolean,
        DataType::Integer,
        DataType::Decimal,
        DataType::Text,
        DataType::Timestamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DataType::Boolean => "boolean",
            DataType::Integer => "integer",
            DataType::Decimal => "decimal",
            DataType::Text => "text",
            DataType::Timestamp => "timestamp",
        }
    }

    /// Parses a value of this kind from its canonical text rendering.
    pub fn parse_value(self, text: &str) -> Result<DataValue, ValueError> {
        let bad = || ValueError::Malformed {
            kind: self,
            text: text.to_string(),
        };
        Ok(match self {
            DataType::Boolean => match text {
                "true" => DataValue::Boolean(true),
                "false" => DataValue::Boolean(false),
                _ => return Err(bad()),
            },
            DataType::Integer => {
                if text.starts_with('+') {
                    return Err(bad());
                }
                DataValue::Integer(text.parse().map_err(|_| bad())?)
            }
            DataType::Decimal => DataValue::Decimal(text.parse().map_err(|_| bad())?),
            DataType::Text => DataValue::Text(text.to_string()),
            DataType::Timestamp => DataValue::Timestamp(text.parse().map_err(|_| bad())?),
        })
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataType {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DataType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| ValueError::UnknownType(s.to_string()))
    }
}

/// An exact decimal number kept in canonical form: no trailing fractional
/// zeros, no leading zeros, no negative zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Decimal {
    negative: bool,
    /// Unscaled magnitude as base-10 digits.
    digits: String,
    scale: usize,
}

impl Decimal {
    pub fn zero() -> Self {
        Decimal {
            negative: false,
            digits: "0".to_string(),
            scale: 0,
        }
    }

    pub fn is_negative(&self) -> bool {
        self.negative
    }

    fn from_parts(negative: bool, digits: &str, scale: usize) -> Self {
        let mut digits = digits.trim_start_matches('0').to_string();
        let mut scale = scale;
        while scale > 0 && digits.ends_with('0') {
            digits.pop();
            scale -= 1;
        }
        if digits.is_empty() {
            return Decimal::zero();
        }
        Decimal {
            negative,
            digits,
            scale,
        }
    }

    /// Parses JSON-style numbers, including exponent notation.
    pub fn parse_json_number(text: &str) -> Result<Self, ValueError> {
        let bad = || ValueError::Malformed {
            kind: DataType::Decimal,
            text: text.to_string(),
        };
        let (mantissa, exponent) = match text.find(['e', 'E']) {
            Some(i) => {
                let exp: i64 = text[i + 1..].trim_start_matches('+').parse().map_err(|_| bad())?;
                (&text[..i], exp)
            }
            None => (text, 0),
        };
        let base: Decimal = mantissa.parse().map_err(|_| bad())?;
        if exponent.unsigned_abs() > 4096 {
            return Err(bad());
        }
        let mut digits = base.digits.clone();
        let mut scale = base.scale as i64 - exponent;
        if scale < 0 {
            digits.extend(std::iter::repeat_n('0', (-scale) as usize));
            scale = 0;
        }
        Ok(Decimal::from_parts(base.negative, &digits, scale as usize))
    }

    /// Magnitude digits padded on the right to `scale` fractional places.
    fn aligned(&self, scale: usize) -> String {
        let mut s = self.digits.clone();
        s.extend(std::iter::repeat_n('0', scale - self.scale));
        s
    }

    fn cmp_magnitude(&self, other: &Self) -> Ordering {
        let scale = self.scale.max(other.scale);
        let a = self.aligned(scale);
        let b = other.aligned(scale);
        a.len().cmp(&b.len()).then_with(|| a.cmp(&b))
    }
}

impl FromStr for Decimal {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ValueError::Malformed {
            kind: DataType::Decimal,
            text: s.to_string(),
        };
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
        if int_part.is_empty()
            || !all_digits(int_part)
            || !all_digits(frac_part)
            || (body.contains('.') && frac_part.is_empty())
        {
            return Err(bad());
        }
        let digits = format!("{int_part}{frac_part}");
        Ok(Decimal::from_parts(negative, &digits, frac_part.len()))
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negative {
            f.write_str("-")?;
        }
        if self.scale == 0 {
            return f.write_str(&self.digits);
        }
        let padded = if self.digits.len() <= self.scale {
            format!("{}{}", "0".repeat(self.scale + 1 - self.digits.len()), self.digits)
        } else {
            self.digits.clone()
        };
        let point = padded.len() - self.scale;
        write!(f, "{}.{}", &padded[..point], &padded[point..])
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.negative, other.negative) {
            (false, true) => Ordering::Greater,
            (true, false) => Ordering::Less,
            (false, false) => self.cmp_magnitude(other),
            (true, true) => other.cmp_magnitude(self),
        }
    }
}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// UTC instant with second precision, limited to years 0000 through 9999.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";
const MIN_TIMESTAMP: i64 = -62_167_219_200; // 0000-01-01T00:00:00Z
const MAX_TIMESTAMP: i64 = 253_402_300_799; // 9999-12-31T23:59:59Z

impl Timestamp {
    pub fn from_unix_seconds(secs: i64) -> Option<Self> {
        (MIN_TIMESTAMP..=MAX_TIMESTAMP)
            .contains(&secs)
            .then_some(Timestamp(secs))
    }

    pub fn unix_seconds(self) -> i64 {
        self.0
    }
}

impl FromStr for Timestamp {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ValueError::Malformed {
            kind: DataType::Timestamp,
            text: s.to_string(),
        };
        // chrono accepts unpadded fields; the canonical form does not.
        if s.len() != 20 {
            return Err(bad());
        }
        let parsed = NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT).map_err(|_| bad())?;
        Timestamp::from_unix_seconds(parsed.and_utc().timestamp()).ok_or_else(bad)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dt = DateTime::from_timestamp(self.0, 0).expect("timestamp in range");
        write!(f, "{}", dt.format(TIMESTAMP_FORMAT))
    }
}

/// A single cell value.
///
/// `Ord` is a total sorting order (kind first, then value) used for bag
/// comparison and deterministic rendering. Query predicates use
/// [`compare_values`], which treats null and mixed kinds as incomparable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DataValue {
    Null,
    Boolean(bool),
    Integer(i64),
    Decimal(Decimal),
    Text(String),
    Timestamp(Timestamp),
}

impl DataValue {
    pub fn text(s: impl Into<String>) -> Self {
        DataValue::Text(s.into())
    }

    pub fn decimal(s: &str) -> Result<Self, ValueError> {
        Ok(DataValue::Decimal(s.parse()?))
    }

    pub fn timestamp(s: &str) -> Result<Self, ValueError> {
        Ok(DataValue::Timestamp(s.parse()?))
    }

    /// `None` for null.
    pub fn data_type(&self) -> Option<DataType> {
        Some(match self {
            DataValue::Null => return None,
            DataValue::Boolean(_) => DataType::Boolean,
            DataValue::Integer(_) => DataType::Integer,
            DataValue::Decimal(_) => DataType::Decimal,
            DataValue::Text(_) => DataType::Text,
            DataValue::Timestamp(_) => DataType::Timestamp,
        })
    }

    pub fn is_null(&self) -> bool {
        matches!(self, DataValue::Null)
    }

    /// Canonical text form; null renders as the empty string.
    pub fn render(&self) -> String {
        match self {
            DataValue::Null => String::new(),
            DataValue::Boolean(b) => b.to_string(),
            DataValue::Integer(i) => i.to_string(),
            DataValue::Decimal(d) => d.to_string(),
            DataValue::Text(s) => s.clone(),
            DataValue::Timestamp(t) => t.to_string(),
        }
    }

    fn kind_rank(&self) -> u8 {
        match self {
            DataValue::Null => 0,
            DataValue::Boolean(_) => 1,
            DataValue::Integer(_) => 2,
            DataValue::Decimal(_) => 3,
            DataValue::Text(_) => 4,
            DataValue::Timestamp(_) => 5,
        }
    }
}

impl fmt::Display for DataValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Ord for DataValue {
    fn cmp(&self, other: &Self) -> Ordering {
        compare_values(self, other).unwrap_or_else(|| self.kind_rank().cmp(&other.kind_rank()))
    }
}

impl PartialOrd for DataValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl From<i64> for DataValue {
    fn from(v: i64) -> Self {
        DataValue::Integer(v)
    }
}

impl From<bool> for DataValue {
    fn from(v: bool) -> Self {
        DataValue::Boolean(v)
    }
}

impl From<&str> for DataValue {
    fn from(v: &str) -> Self {
        DataValue::Text(v.to_string())
    }
}

/// Orders two values of the same kind. Null operands and mixed kinds are
/// incomparable (`None`).
pub fn compare_values(a: &DataValue, b: &DataValue) -> Option<Ordering> {
    use DataValue::*;
    match (a, b) {
        (Boolean(x), Boolean(y)) => Some(x.cmp(y)),
        (Integer(x), Integer(y)) => Some(x.cmp(y)),
        (Decimal(x), Decimal(y)) => Some(x.cmp(y)),
        (Text(x), Text(y)) => Some(x.cmp(y)),
        (Timestamp(x), Timestamp(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dec(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    #[test]
    fn decimal_canonical_form() {
        assert_eq!(dec("2.50").to_string(), "2.5");
        assert_eq!(dec("007.0").to_string(), "7");
        assert_eq!(dec("-0.000").to_string(), "0");
        assert_eq!(dec("0.05").to_string(), "0.05");
        assert_eq!(dec("-12.340").to_string(), "-12.34");
        for bad in ["", "+1", "1.", ".5", "1e3", "--1", "1.2.3", "a"] {
            assert!(bad.parse::<Decimal>().is_err(), "{bad}");
        }
    }

    #[test]
    fn decimal_from_json_exponent() {
        assert_eq!(Decimal::parse_json_number("1.5e3").unwrap().to_string(), "1500");
        assert_eq!(Decimal::parse_json_number("25E-3").unwrap().to_string(), "0.025");
        assert_eq!(Decimal::parse_json_number("-4.20").unwrap().to_string(), "-4.2");
    }

    #[test]
    fn compare_examples() {
        assert_eq!(compare_values(&3.into(), &3.into()), Some(Ordering::Equal));
        assert_eq!(compare_values(&DataValue::Null, &5.into()), None);
        assert_eq!(
            compare_values(
                &DataValue::decimal("2.50").unwrap(),
                &DataValue::decimal("2.5").unwrap()
            ),
            Some(Ordering::Equal)
        );
        assert_eq!(compare_values(&1.into(), &"1".into()), None);
        assert_eq!(compare_values(&false.into(), &true.into()), Some(Ordering::Less));
    }

    #[test]
    fn timestamp_round_trip() {
        let t: Timestamp = "2022-09-01T12:30:05Z".parse().unwrap();
        assert_eq!(t.to_string(), "2022-09-01T12:30:05Z");
        assert!("2022-9-01T12:30:05Z".parse::<Timestamp>().is_err());
        assert!("2022-09-01 12:30:05".parse::<Timestamp>().is_err());
        assert_eq!(
            Timestamp::from_unix_seconds(0).unwrap().to_string(),
            "1970-01-01T00:00:00Z"
        );
    }

    #[test]
    fn integer_rendering_rejects_plus() {
        assert!(DataType::Integer.parse_value("+5").is_err());
        assert_eq!(DataType::Integer.parse_value("-5").unwrap(), DataValue::Integer(-5));
    }

    /// Exact rational comparison: a/10^s scaled to a common denominator
    /// with i128 arithmetic, independent of the string-alignment route.
    fn rational_cmp(a: (i64, u32), b: (i64, u32)) -> Ordering {
        let scale = a.1.max(b.1);
        let x = a.0 as i128 * 10i128.pow(scale - a.1);
        let y = b.0 as i128 * 10i128.pow(scale - b.1);
        x.cmp(&y)
    }

    fn render_scaled(unscaled: i64, scale: u32) -> String {
        let neg = unscaled < 0;
        let mag = unscaled.unsigned_abs().to_string();
        let s = scale as usize;
        let padded = if mag.len() <= s {
            format!("{}{}", "0".repeat(s + 1 - mag.len()), mag)
        } else {
            mag
        };
        let (i, f) = padded.split_at(padded.len() - s);
        let body = if s == 0 { i.to_string() } else { format!("{i}.{f}") };
        if neg {
            format!("-{body}")
        } else {
            body
        }
    }

    proptest::proptest! {
        #[test]
        fn decimal_order_matches_rational_oracle(
            a in -100_000i64..100_000, sa in 0u32..5,
            b in -100_000i64..100_000, sb in 0u32..5,
        ) {
            let da = dec(&render_scaled(a, sa));
            let db = dec(&render_scaled(b, sb));
            proptest::prop_assert_eq!(da.cmp(&db), rational_cmp((a, sa), (b, sb)));
            proptest::prop_assert_eq!(da == db, rational_cmp((a, sa), (b, sb)) == Ordering::Equal);
        }

        #[test]
        fn decimal_render_parse_is_identity(a in -1_000_000i64..1_000_000, s in 0u32..7) {
            let d = dec(&render_scaled(a, s));
            proptest::prop_assert_eq!(dec(&d.to_string()), d);
        }
    }
}
