//! Dollar amounts held as integer cents and serialized as decimal strings.

use std::fmt;
use std::iter::Sum;
use std::ops::Add;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money {
    cents: i64,
}

impl Money {
    pub const ZERO: Money = Money { cents: 0 };

    pub const fn from_cents(cents: i64) -> Self {
        Money { cents }
    }

    pub const fn cents(self) -> i64 {
        self.cents
    }

    pub fn dollars(self) -> f64 {
        self.cents as f64 / 100.0
    }

    /// Finds the first amount in page text such as `"Price: $1,043.99"`,
    /// preferring one written with a dollar sign.
    pub fn find_in(text: &str) -> Option<Money> {
        let dollar = text
            .match_indices('$')
            .map(|(i, _)| i + 1)
            .find(|&i| text[i..].starts_with(|c: char| c.is_ascii_digit()));
        let start = dollar.or_else(|| text.find(|c: char| c.is_ascii_digit()))?;
        let raw: String = text[start..]
            .chars()
            .take_while(|c| c.is_ascii_digit() || *c == ',' || *c == '.')
            .filter(|c| *c != ',')
            .collect();
        raw.trim_end_matches('.').parse().ok()
    }
}

impl FromStr for Money {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim().trim_start_matches('$');
        let (neg, t) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (whole, frac) = t.split_once('.').unwrap_or((t, ""));
        let bad = || format!("{s:?} is not a dollar amount");
        if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 2 {
            return Err(bad());
        }
        if !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let whole: i64 = whole.parse().map_err(|_| bad())?;
        let frac: i64 = format!("{frac:0<2}").parse().map_err(|_| bad())?;
        let cents = whole.checked_mul(100).and_then(|w| w.checked_add(frac)).ok_or_else(bad)?;
        Ok(Money {
            cents: if neg { -cents } else { cents },
        })
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.cents < 0 { "-" } else { "" };
        let abs = self.cents.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Add for Money {
    type Output = Money;

    fn add(self, rhs: Money) -> Money {
        Money::from_cents(self.cents + rhs.cents)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        assert_eq!("43.99".parse::<Money>().unwrap().cents(), 4399);
        assert_eq!("$12.5".parse::<Money>().unwrap().cents(), 1250);
        assert_eq!("7".parse::<Money>().unwrap().to_string(), "7.00");
        assert_eq!(Money::from_cents(-5).to_string(), "-0.05");
        assert!("1.234".parse::<Money>().is_err());
        assert!("abc".parse::<Money>().is_err());
    }

    #[test]
    fn find_in_text() {
        assert_eq!(Money::find_in("Price: $1,043.99").unwrap().cents(), 104_399);
        assert_eq!(Money::find_in("Subtotal (1 item): $39.99.").unwrap().cents(), 3999);
        assert_eq!(Money::find_in("free"), None);
    }

    #[test]
    fn json_is_a_string() {
        let m = Money::from_cents(2841);
        assert_eq!(serde_json::to_string(&m).unwrap(), "\"28.41\"");
        assert_eq!(serde_json::from_str::<Money>("\"28.41\"").unwrap(), m);
    }
}
