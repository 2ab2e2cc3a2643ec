use serde::{Deserialize, Serialize};

/// What to do past the end of an explicit table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extend {
    /// Repeat the last entry forever.
    Last,
    /// Indexing past the table is an error.
    #[default]
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Formula {
    /// `scale * base^n`
    Pow {
        base: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Const { value: f64 },
    /// `1 / n^2`
    InverseSquare,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table {
    pub values: Vec<f64>,
    #[serde(default)]
    pub extend: Extend,
}

/// A positive sequence indexed by the nonnegative integers, given either by
/// a formula or by a table whose first entry sits at a fixed offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateRule {
    Formula(Formula),
    Table(Table),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum RuleError {
    PastTable { index: usize },
    Invalid { index: usize, value: f64 },
}

impl RateRule {
    pub fn pow(base: f64) -> Self {
        RateRule::Formula(Formula::Pow { base, scale: 1.0 })
    }

    pub fn constant(value: f64) -> Self {
        RateRule::Formula(Formula::Const { value })
    }

    pub fn inverse_square() -> Self {
        RateRule::Formula(Formula::InverseSquare)
    }

    pub fn table(values: Vec<f64>, extend: Extend) -> Self {
        RateRule::Table(Table { values, extend })
    }

    /// Value at index `n`; a table's first entry is index `offset`.
    pub(crate) fn at(&self, n: usize, offset: usize) -> Result<f64, RuleError> {
        let v = match self {
            RateRule::Formula(Formula::Pow { base, scale }) => {
                if n <= i32::MAX as usize {
                    scale * base.powi(n as i32)
                } else {
                    scale * base.powf(n as f64)
                }
            }
            RateRule::Formula(Formula::Const { value }) => *value,
            RateRule::Formula(Formula::InverseSquare) => {
                let x = n as f64;
                1.0 / (x * x)
            }
            RateRule::Table(Table { values, extend }) => {
                let Some(k) = n.checked_sub(offset) else {
                    return Err(RuleError::PastTable { index: n });
                };
                match (values.get(k), extend) {
                    (Some(v), _) => *v,
                    (None, Extend::Last) => match values.last() {
                        Some(v) => *v,
                        None => return Err(RuleError::PastTable { index: n }),
                    },
                    (None, Extend::Error) => return Err(RuleError::PastTable { index: n }),
                }
            }
        };
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(RuleError::Invalid { index: n, value: v })
        }
    }

    /// Parameter check that does not touch the sequence itself.
    pub(crate) fn check_parameters(&self) -> Result<(), String> {
        match self {
            RateRule::Formula(Formula::Pow { base, scale }) => {
                if !(base.is_finite() && *base > 0.0 && scale.is_finite() && *scale > 0.0) {
                    return Err(format!("pow rule needs base > 0 and scale > 0, got {base}, {scale}"));
                }
            }
            RateRule::Formula(Formula::Const { value }) => {
                if !(value.is_finite() && *value > 0.0) {
                    return Err(format!("const rule needs value > 0, got {value}"));
                }
            }
            RateRule::Formula(Formula::InverseSquare) => {}
            RateRule::Table(Table { values, .. }) => {
                if values.is_empty() {
                    return Err("table rule is empty".into());
                }
                if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    return Err(format!("table rule has nonpositive entry {v}"));
                }
            }
        }
        Ok(())
    }

    /// True when the sequence is provably bounded above from some index on.
    pub(crate) fn eventually_bounded(&self) -> bool {
        match self {
            RateRule::Formula(Formula::Pow { base, .. }) => *base <= 1.0,
            RateRule::Formula(Formula::Const { .. }) | RateRule::Formula(Formula::InverseSquare) => true,
            RateRule::Table(Table { extend, .. }) => *extend == Extend::Last,
        }
    }

    /// True when the sequence is provably bounded below by a positive
    /// constant from some index on.
    pub(crate) fn eventually_bounded_below(&self) -> bool {
        match self {
            RateRule::Formula(Formula::Pow { base, .. }) => *base >= 1.0,
            RateRule::Formula(Formula::Const { .. }) => true,
            RateRule::Formula(Formula::InverseSquare) => false,
            RateRule::Table(Table { extend, .. }) => *extend == Extend::Last,
        }
    }
}
