//! Fixed-point token amounts and ratios.
//!
//! Rewards carry cents (the daily block reward is 682,425.46), so all
//! economic arithmetic runs on integer hundredths of a token. Ratios such as
//! the SPV commission are stored in basis points so that splitting is exact
//! integer math with an explicit rounding rule (always floor, remainder is
//! reported to the caller).

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub, SubAssign};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Hundredths of a token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Amount(pub u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub fn from_tokens(tokens: u64) -> Self {
        Amount(tokens * 100)
    }

    pub fn cents(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// `self * num / den`, rounded down.
    pub fn mul_div_floor(self, num: u64, den: u64) -> Amount {
        assert!(den > 0, "division by zero in mul_div_floor");
        Amount(((self.0 as u128 * num as u128) / den as u128) as u64)
    }

    pub fn saturating_sub(self, rhs: Amount) -> Amount {
        Amount(self.0.saturating_sub(rhs.0))
    }
}

impl Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0 + rhs.0)
    }
}

impl AddAssign for Amount {
    fn add_assign(&mut self, rhs: Amount) {
        self.0 += rhs.0;
    }
}

impl Sub for Amount {
    type Output = Amount;
    fn sub(self, rhs: Amount) -> Amount {
        Amount(self.0 - rhs.0)
    }
}

impl SubAssign for Amount {
    fn sub_assign(&mut self, rhs: Amount) {
        self.0 -= rhs.0;
    }
}

impl Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        iter.fold(Amount::ZERO, Add::add)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseMoneyError {
    #[error("invalid decimal amount `{0}`")]
    Invalid(String),
    #[error("too many decimal places in `{0}`")]
    Precision(String),
}

/// Parses `[digits][.digits]` with at most `places` decimals into an
/// integer scaled by `10^places`.
fn parse_scaled(s: &str, places: u32) -> Result<u64, ParseMoneyError> {
    let invalid = || ParseMoneyError::Invalid(s.to_string());
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int.is_empty() && frac.is_empty() {
        return Err(invalid());
    }
    if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(invalid());
    }
    if frac.len() > places as usize {
        return Err(ParseMoneyError::Precision(s.to_string()));
    }
    let int_val: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| invalid())? };
    let mut frac_val: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| invalid())? };
    frac_val *= 10u64.pow(places - frac.len() as u32);
    int_val
        .checked_mul(10u64.pow(places))
        .and_then(|v| v.checked_add(frac_val))
        .ok_or_else(invalid)
}

impl FromStr for Amount {
    type Err = ParseMoneyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_scaled(s.trim(), 2).map(Amount)
    }
}

/// A ratio in `[0, 1]` with basis-point resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fraction {
    bps: u32,
}

impl Fraction {
    pub const ONE_BPS: u32 = 10_000;
    pub const ZERO: Fraction = Fraction { bps: 0 };
    pub const ONE: Fraction = Fraction { bps: 10_000 };

    pub fn from_bps(bps: u32) -> Option<Self> {
        (bps <= Self::ONE_BPS).then_some(Fraction { bps })
    }

    pub fn from_f64(v: f64) -> Option<Self> {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return None;
        }
        Self::from_bps((v * Self::ONE_BPS as f64).round() as u32)
    }

    pub fn bps(self) -> u32 {
        self.bps
    }

    pub fn complement(self) -> Fraction {
        Fraction { bps: Self::ONE_BPS - self.bps }
    }

    /// The share of `amount` this fraction represents, rounded down.
    pub fn of(self, amount: Amount) -> Amount {
        amount.mul_div_floor(self.bps as u64, Self::ONE_BPS as u64)
    }

    pub fn as_f64(self) -> f64 {
        self.bps as f64 / Self::ONE_BPS as f64
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:04}", self.bps / Self::ONE_BPS, self.bps % Self::ONE_BPS)
    }
}

impl FromStr for Fraction {
    type Err = ParseMoneyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bps = parse_scaled(s.trim(), 4)?;
        u32::try_from(bps)
            .ok()
            .and_then(Fraction::from_bps)
            .ok_or_else(|| ParseMoneyError::Invalid(s.to_string()))
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Fraction::from_f64(v)
            .ok_or_else(|| serde::de::Error::custom(format!("fraction {v} outside [0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_parse() {
        assert_eq!(Amount(68_242_546).to_string(), "682425.46");
        assert_eq!(Amount(5).to_string(), "0.05");
        assert_eq!("682425.46".parse::<Amount>().unwrap(), Amount(68_242_546));
        assert_eq!("3".parse::<Amount>().unwrap(), Amount(300));
        assert_eq!("0.3".parse::<Amount>().unwrap(), Amount(30));
        assert!("1.234".parse::<Amount>().is_err());
        assert!("-1".parse::<Amount>().is_err());
        assert!("".parse::<Amount>().is_err());
    }

    #[test]
    fn fraction_floor_split() {
        let phi: Fraction = "0.30".parse().unwrap();
        assert_eq!(phi.bps(), 3000);
        assert_eq!(phi.of(Amount::from_tokens(100)), Amount::from_tokens(30));
        assert_eq!(phi.complement().of(Amount(1)), Amount(0));
        assert_eq!(Fraction::from_f64(0.15).unwrap().bps(), 1500);
        assert!(Fraction::from_f64(1.5).is_none());
        assert!("1.0001".parse::<Fraction>().is_err());
    }
}
