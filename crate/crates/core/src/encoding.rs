//! Design matrices for the estimators.
//!
//! Three layouts are supported:
//!
//! - [`EncodingMode::PerProfile`]: one row per profile, full one-hot blocks
//!   for every attribute followed by the context one-hot; label 1 iff that
//!   profile was chosen.
//! - [`EncodingMode::Difference`]: one row per task, attribute blocks hold
//!   `onehot(left) - onehot(right)` in `{-1, 0, 1}`, context block unchanged;
//!   label 1 iff the left profile was chosen.
//! - [`EncodingMode::OlsInteraction`]: per-profile rows with baseline levels
//!   dropped and explicit `attribute level x context level` product columns.

use std::collections::HashMap;
use std::io::Write;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::sim::{ChoiceTask, DesignSpec, Profile};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Column {
    Main { attribute: usize, level: usize },
    Context { level: usize },
    Interaction { attribute: usize, level: usize, context: usize },
}

impl Column {
    pub fn header(&self) -> String {
        match *self {
            Column::Main { attribute, level } => format!("attr{attribute}_lvl{level}"),
            Column::Context { level } => format!("ctx_{level}"),
            Column::Interaction {
                attribute,
                level,
                context,
            } => format!("attr{attribute}_lvl{level}:ctx_{context}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncodingMode {
    PerProfile,
    Difference,
    OlsInteraction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub columns: Vec<Column>,
    pub mode: EncodingMode,
    pub attribute_levels: Vec<usize>,
    pub context_levels: usize,
    index: HashMap<Column, usize>,
}

impl FeatureSchema {
    pub fn new(attribute_levels: &[usize], context_levels: usize, mode: EncodingMode) -> Self {
        let first = match mode {
            EncodingMode::OlsInteraction => 1,
            _ => 0,
        };
        let mut columns = Vec::new();
        for (attribute, &levels) in attribute_levels.iter().enumerate() {
            columns.extend((first..levels).map(|level| Column::Main { attribute, level }));
        }
        columns.extend((first..context_levels).map(|level| Column::Context { level }));
        if mode == EncodingMode::OlsInteraction {
            for (attribute, &levels) in attribute_levels.iter().enumerate() {
                for level in 1..levels {
                    columns.extend((1..context_levels).map(|context| Column::Interaction {
                        attribute,
                        level,
                        context,
                    }));
                }
            }
        }
        let index = columns.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        FeatureSchema {
            columns,
            mode,
            attribute_levels: attribute_levels.to_vec(),
            context_levels,
            index,
        }
    }

    pub fn for_spec(spec: &DesignSpec, mode: EncodingMode) -> Self {
        Self::new(&spec.attribute_levels, spec.context_levels, mode)
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn index_of(&self, column: &Column) -> Option<usize> {
        self.index.get(column).copied()
    }

    pub fn headers(&self) -> Vec<String> {
        self.columns.iter().map(Column::header).collect()
    }

    /// Column indices of the attribute (non-context) block.
    pub fn attribute_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c, Column::Main { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Context level of a row, read off its context one-hot block.
    pub fn context_of(&self, row: ArrayView1<f64>) -> usize {
        (1..self.context_levels)
            .find(|&level| {
                self.index_of(&Column::Context { level })
                    .is_some_and(|i| row[i] == 1.0)
            })
            .unwrap_or(0)
    }
}

/// Design matrix, binary labels, and the respondent of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub matrix: Array2<f64>,
    pub labels: Vec<bool>,
    pub schema: FeatureSchema,
    pub respondent_ids: Vec<usize>,
}

impl EncodedDataset {
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| f64::from(u8::from(l))).collect()
    }

    /// Rows at the given indices, in that order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        EncodedDataset {
            matrix: self.matrix.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            schema: self.schema.clone(),
            respondent_ids: rows.iter().map(|&r| self.respondent_ids[r]).collect(),
        }
    }

    /// Left/right exchange of a difference-encoded dataset: attribute
    /// columns negated, labels flipped.
    pub fn swapped(&self) -> Result<Self> {
        if self.schema.mode != EncodingMode::Difference {
            return Err(Error::SchemaMismatch("swap is defined for difference encoding only".into()));
        }
        let mut out = self.clone();
        for c in self.schema.attribute_columns() {
            out.matrix.column_mut(c).mapv_inplace(|v| -v);
        }
        out.labels.iter_mut().for_each(|l| *l = !*l);
        Ok(out)
    }

    /// Original rows followed by their left/right swaps.
    pub fn symmetrized(&self) -> Result<Self> {
        let swapped = self.swapped()?;
        let matrix = ndarray::concatenate(Axis(0), &[self.matrix.view(), swapped.matrix.view()])
            .expect("same width");
        Ok(EncodedDataset {
            matrix,
            labels: self.labels.iter().chain(&swapped.labels).copied().collect(),
            schema: self.schema.clone(),
            respondent_ids: self.respondent_ids.iter().chain(&swapped.respondent_ids).copied().collect(),
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.schema.headers();
        header.push("label".into());
        header.push("respondent_id".into());
        w.write_record(&header)?;
        for (r, row) in self.matrix.rows().into_iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            rec.push(u8::from(self.labels[r]).to_string());
            rec.push(self.respondent_ids[r].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

fn check_profile(p: &Profile, levels: &[usize], what: &str) -> Result<()> {
    if p.level_choices.len() != levels.len() {
        return Err(Error::SchemaMismatch(format!(
            "{what} profile has {} attributes, design has {}",
            p.level_choices.len(),
            levels.len()
        )));
    }
    for (a, (&l, &n)) in p.level_choices.iter().zip(levels).enumerate() {
        if l >= n {
            return Err(Error::SchemaMismatch(format!(
                "{what} profile attribute {a} level {l} exceeds {n} levels"
            )));
        }
    }
    Ok(())
}

fn check_task(t: &ChoiceTask, spec: &DesignSpec) -> Result<()> {
    check_profile(&t.left, &spec.attribute_levels, "left")?;
    check_profile(&t.right, &spec.attribute_levels, "right")?;
    if t.context_level >= spec.context_levels {
        return Err(Error::SchemaMismatch(format!(
            "context level {} exceeds {} levels",
            t.context_level, spec.context_levels
        )));
    }
    Ok(())
}

/// Full one-hot layout shared by the per-profile and difference encodings:
/// main columns at `offset[a] + level`, context columns after them.
fn write_onehot(row: &mut [f64], profile: &Profile, offsets: &[usize], sign: f64) {
    for (&level, &o) in profile.level_choices.iter().zip(offsets) {
        row[o + level] += sign;
    }
}

/// Two rows per task (left then right).
pub fn encode_per_profile(tasks: &[ChoiceTask], spec: &DesignSpec) -> Result<EncodedDataset> {
    let schema = FeatureSchema::for_spec(spec, EncodingMode::PerProfile);
    let offsets = spec.attribute_offsets();
    let n_main = spec.n_main();
    let mut matrix = Array2::zeros((2 * tasks.len(), schema.width()));
    let mut labels = Vec::with_capacity(2 * tasks.len());
    let mut respondent_ids = Vec::with_capacity(2 * tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        check_task(t, spec)?;
        for (side, profile, chosen) in [(0, &t.left, t.chose_left), (1, &t.right, !t.chose_left)] {
            let mut row = matrix.row_mut(2 * i + side);
            let row = row.as_slice_mut().expect("row-major");
            write_onehot(row, profile, &offsets, 1.0);
            row[n_main + t.context_level] = 1.0;
            labels.push(chosen);
            respondent_ids.push(t.respondent_id);
        }
    }
    Ok(EncodedDataset {
        matrix,
        labels,
        schema,
        respondent_ids,
    })
}

/// One row per task: `onehot(left) - onehot(right)` then the context one-hot.
pub fn encode_difference(tasks: &[ChoiceTask], spec: &DesignSpec) -> Result<EncodedDataset> {
    let schema = FeatureSchema::for_spec(spec, EncodingMode::Difference);
    let offsets = spec.attribute_offsets();
    let n_main = spec.n_main();
    let mut matrix = Array2::zeros((tasks.len(), schema.width()));
    for (i, t) in tasks.iter().enumerate() {
        check_task(t, spec)?;
        let mut row = matrix.row_mut(i);
        let row = row.as_slice_mut().expect("row-major");
        write_onehot(row, &t.left, &offsets, 1.0);
        write_onehot(row, &t.right, &offsets, -1.0);
        row[n_main + t.context_level] = 1.0;
    }
    Ok(EncodedDataset {
        matrix,
        labels: tasks.iter().map(|t| t.chose_left).collect(),
        schema,
        respondent_ids: tasks.iter().map(|t| t.respondent_id).collect(),
    })
}

/// Per-profile rows for the linear baseline: non-baseline main and context
/// columns plus every non-baseline `level x context` product. The intercept
/// is added by the fitter.
pub fn encode_ols_interactions(tasks: &[ChoiceTask], spec: &DesignSpec) -> Result<EncodedDataset> {
    let schema = FeatureSchema::for_spec(spec, EncodingMode::OlsInteraction);
    let mut matrix = Array2::zeros((2 * tasks.len(), schema.width()));
    let mut labels = Vec::with_capacity(2 * tasks.len());
    let mut respondent_ids = Vec::with_capacity(2 * tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        check_task(t, spec)?;
        for (side, profile, chosen) in [(0, &t.left, t.chose_left), (1, &t.right, !t.chose_left)] {
            let mut row = matrix.row_mut(2 * i + side);
            let ctx = t.context_level;
            if ctx > 0 {
                row[schema.index_of(&Column::Context { level: ctx }).expect("context column")] = 1.0;
            }
            for (attribute, &level) in profile.level_choices.iter().enumerate() {
                if level == 0 {
                    continue;
                }
                row[schema.index_of(&Column::Main { attribute, level }).expect("main column")] = 1.0;
                if ctx > 0 {
                    let col = Column::Interaction {
                        attribute,
                        level,
                        context: ctx,
                    };
                    row[schema.index_of(&col).expect("interaction column")] = 1.0;
                }
            }
            labels.push(chosen);
            respondent_ids.push(t.respondent_id);
        }
    }
    Ok(EncodedDataset {
        matrix,
        labels,
        schema,
        respondent_ids,
    })
}

/// Encode a list of tasks under the given mode.
pub fn encode(tasks: &[ChoiceTask], spec: &DesignSpec, mode: EncodingMode) -> Result<EncodedDataset> {
    match mode {
        EncodingMode::PerProfile => encode_per_profile(tasks, spec),
        EncodingMode::Difference => encode_difference(tasks, spec),
        EncodingMode::OlsInteraction => encode_ols_interactions(tasks, spec),
    }
}

/// Noise-free labels aligned with the rows of `encode(tasks, _, mode)`.
/// `None` if any task lacks its latent choice.
pub fn latent_labels(tasks: &[ChoiceTask], mode: EncodingMode) -> Option<Vec<bool>> {
    let latent: Option<Vec<bool>> = tasks.iter().map(|t| t.latent_chose_left).collect();
    let latent = latent?;
    Some(match mode {
        EncodingMode::Difference => latent,
        EncodingMode::PerProfile | EncodingMode::OlsInteraction => {
            latent.iter().flat_map(|&l| [l, !l]).collect()
        }
    })
}

/// Split row indices into `(kept, held_out)` by respondent: a seeded random
/// `fraction` of respondents (at least one, if `fraction > 0`) goes to the
/// held-out side.
pub fn split_by_respondent(respondent_ids: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut respondents: Vec<usize> = respondent_ids.to_vec();
    respondents.sort_unstable();
    respondents.dedup();
    let n = respondents.len();
    let n_out = if fraction <= 0.0 {
        0
    } else {
        ((fraction * n as f64).round() as usize).clamp(1, n)
    };
    respondents.shuffle(&mut rng::stream(seed, 0));
    let mut held: Vec<usize> = respondents[..n_out].to_vec();
    held.sort_unstable();
    let mut kept = Vec::new();
    let mut out = Vec::new();
    for (row, id) in respondent_ids.iter().enumerate() {
        if held.binary_search(id).is_ok() {
            out.push(row);
        } else {
            kept.push(row);
        }
    }
    (kept, out)
}
