//! Query pricing in exact fixed-point dollars.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MICROS_PER_DOLLAR: i64 = 1_000_000;

/// A dollar amount held as an integer number of micro-dollars.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Usd {
    micros: i64,
}

impl Usd {
    pub const ZERO: Usd = Usd { micros: 0 };

    pub const fn from_micros(micros: i64) -> Self {
        Self { micros }
    }

    pub fn micros(self) -> i64 {
        self.micros
    }

    /// Parses a plain decimal such as `0.016` or `$160.00`; at most six
    /// fractional digits.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("not a dollar amount: `{text}`"));
        let t = text.trim();
        let t = t.strip_prefix('$').unwrap_or(t);
        let (neg, t) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (whole, frac) = t.split_once('.').unwrap_or((t, ""));
        let grouped = whole.contains(',');
        if grouped && !whole.split(',').skip(1).all(|g| g.len() == 3) {
            return Err(bad());
        }
        let whole = whole.replace(',', "");
        let whole = whole.as_str();
        if whole.is_empty() && frac.is_empty()
            || frac.len() > 6
            || !whole.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
        {
            return Err(bad());
        }
        let whole: i64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| bad())? };
        let frac_micros: i64 = if frac.is_empty() {
            0
        } else {
            format!("{frac:0<6}").parse().map_err(|_| bad())?
        };
        let micros = whole
            .checked_mul(MICROS_PER_DOLLAR)
            .and_then(|w| w.checked_add(frac_micros))
            .ok_or_else(bad)?;
        Ok(Self {
            micros: if neg { -micros } else { micros },
        })
    }

    pub fn checked_mul(self, n: u64) -> Option<Usd> {
        let n = i64::try_from(n).ok()?;
        self.micros.checked_mul(n).map(Usd::from_micros)
    }
}

impl Add for Usd {
    type Output = Usd;

    fn add(self, rhs: Usd) -> Usd {
        Usd::from_micros(self.micros + rhs.micros)
    }
}

/// `$160.00`, `$1,280.00`, `$0.016`: two decimals, more only when needed.
impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.micros < 0 { "-" } else { "" };
        let abs = self.micros.unsigned_abs();
        let whole = abs / MICROS_PER_DOLLAR as u64;
        let mut frac = format!("{:06}", abs % MICROS_PER_DOLLAR as u64);
        while frac.len() > 2 && frac.ends_with('0') {
            frac.pop();
        }
        let digits = whole.to_string();
        let mut grouped = String::new();
        for (i, ch) in digits.chars().enumerate() {
            if i > 0 && (digits.len() - i) % 3 == 0 {
                grouped.push(',');
            }
            grouped.push(ch);
        }
        write!(f, "{sign}${grouped}.{frac}")
    }
}

impl TryFrom<String> for Usd {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Usd::parse(&s)
    }
}

impl From<Usd> for String {
    fn from(u: Usd) -> String {
        u.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPolicy {
    /// Per-client cap; `None` is unlimited.
    pub max_queries: Option<u64>,
    pub unit_price: Usd,
}

impl Default for BudgetPolicy {
    fn default() -> Self {
        Self {
            max_queries: None,
            unit_price: Usd::from_micros(16_000),
        }
    }
}

/// `n_queries * unit_price`, exact.
pub fn cost_estimate(n_queries: u64, policy: &BudgetPolicy) -> Result<Usd> {
    policy
        .unit_price
        .checked_mul(n_queries)
        .ok_or_else(|| Error::InvalidArgument(format!("cost of {n_queries} queries overflows")))
}
