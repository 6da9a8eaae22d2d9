//! Estimated effects and their shared CSV format.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sim::CoefficientSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    Main,
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Positive,
    Negative,
    Null,
}

impl Classification {
    /// Three-way sign of a value; exact zero is `Null`.
    pub fn of_value(v: f64) -> Self {
        if v > 0.0 {
            Classification::Positive
        } else if v < 0.0 {
            Classification::Negative
        } else {
            Classification::Null
        }
    }

    /// `Null` when the interval covers zero, otherwise its sign.
    pub fn of_interval(low: f64, high: f64) -> Self {
        if low <= 0.0 && 0.0 <= high {
            Classification::Null
        } else if low > 0.0 {
            Classification::Positive
        } else {
            Classification::Negative
        }
    }

    pub fn is_null(self) -> bool {
        self == Classification::Null
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::Positive => "positive",
            Classification::Negative => "negative",
            Classification::Null => "null",
        })
    }
}

impl FromStr for Classification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Classification::Positive),
            "negative" => Ok(Classification::Negative),
            "null" => Ok(Classification::Null),
            other => Err(Error::Parse(format!("unknown classification {other:?}"))),
        }
    }
}

/// Identifies one coefficient of the utility model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EffectSlot {
    pub kind: EffectKind,
    pub attribute: usize,
    pub level: usize,
    pub context_level: Option<usize>,
}

impl EffectSlot {
    pub fn main(attribute: usize, level: usize) -> Self {
        EffectSlot {
            kind: EffectKind::Main,
            attribute,
            level,
            context_level: None,
        }
    }

    pub fn interaction(attribute: usize, level: usize, context: usize) -> Self {
        EffectSlot {
            kind: EffectKind::Interaction,
            attribute,
            level,
            context_level: Some(context),
        }
    }

    pub fn truth(&self, coefs: &CoefficientSet) -> f64 {
        match self.context_level {
            None => coefs.main(self.attribute, self.level),
            Some(c) => coefs.interaction(self.attribute, self.level, c),
        }
    }
}

/// Every non-baseline slot: all mains, then all interactions, each in
/// (attribute, level, context) order.
pub fn effect_slots(attribute_levels: &[usize], context_levels: usize) -> Vec<EffectSlot> {
    let mut out = Vec::new();
    for (a, &n) in attribute_levels.iter().enumerate() {
        out.extend((1..n).map(|l| EffectSlot::main(a, l)));
    }
    for (a, &n) in attribute_levels.iter().enumerate() {
        for l in 1..n {
            out.extend((1..context_levels).map(|c| EffectSlot::interaction(a, l, c)));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub kind: EffectKind,
    pub attribute: usize,
    pub level: usize,
    pub context_level: Option<usize>,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub classification: Classification,
    #[serde(default)]
    pub truth_class: Option<Classification>,
}

impl EffectEstimate {
    pub fn slot(&self) -> EffectSlot {
        EffectSlot {
            kind: self.kind,
            attribute: self.attribute,
            level: self.level,
            context_level: self.context_level,
        }
    }

    /// Estimate classified by whether `[ci_low, ci_high]` covers zero.
    pub fn from_interval(slot: EffectSlot, point: f64, ci_low: f64, ci_high: f64) -> Self {
        EffectEstimate {
            kind: slot.kind,
            attribute: slot.attribute,
            level: slot.level,
            context_level: slot.context_level,
            point,
            ci_low,
            ci_high,
            classification: Classification::of_interval(ci_low, ci_high),
            truth_class: None,
        }
    }
}

/// Fills `truth_class` from the generating coefficients.
pub fn attach_truth(estimates: &mut [EffectEstimate], truth: &CoefficientSet) {
    for e in estimates {
        e.truth_class = Some(Classification::of_value(e.slot().truth(truth)));
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    kind: EffectKind,
    attribute: usize,
    level: usize,
    context_level: Option<usize>,
    point: f64,
    ci_low: f64,
    ci_high: f64,
    classification: String,
    truth_class: Option<String>,
}

pub fn write_estimates_csv<W: Write>(estimates: &[EffectEstimate], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in estimates {
        w.serialize(Record {
            kind: e.kind,
            attribute: e.attribute,
            level: e.level,
            context_level: e.context_level,
            point: e.point,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
            classification: e.classification.to_string(),
            truth_class: e.truth_class.map(|c| c.to_string()),
        })?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_estimates_csv<R: Read>(reader: R) -> Result<Vec<EffectEstimate>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize::<Record>()
        .map(|rec| {
            let rec = rec?;
            Ok(EffectEstimate {
                kind: rec.kind,
                attribute: rec.attribute,
                level: rec.level,
                context_level: rec.context_level,
                point: rec.point,
                ci_low: rec.ci_low,
                ci_high: rec.ci_high,
                classification: rec.classification.parse()?,
                truth_class: rec.truth_class.as_deref().map(str::parse).transpose()?,
            })
        })
        .collect()
}
