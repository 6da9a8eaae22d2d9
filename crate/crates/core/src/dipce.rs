//! Effect recovery from a trained black-box choice model.
//!
//! Predicted probabilities on a held-out set are centred at `center_offset`
//! and contrasted across subsets of rows. For a difference-encoded column
//! `X^D` the informative rows are those with `X^D = +1` (variant P) or
//! `X^D = -1` with the score negated (variant N). Within those rows, with
//! `K` contexts:
//!
//! - `Y_A` is the overall mean score and `Y_B(c)` the mean over rows whose
//!   context differs from `c`;
//! - the interaction with context `c >= 1` is `(Y_A - Y_B(c)) * K`;
//! - the main effect is `Y_A - (K * Y_A - sum_c Y_B(c))`.
//!
//! Confidence intervals are percentile intervals over row-level bootstrap
//! resamples; an effect is `Null` when its interval covers zero.
//!
//! [`estimate_effects_per_profile`] applies the same contrasts to per-profile
//! rows (`E[Y | X = 1] - E[Y | X = 0]`, overall and with one context excluded)
//! and rebuilds the main effect with [`reconstruct_main_from_interactions`].

use ndarray::ArrayView2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::{EffectEstimate, EffectSlot};
use crate::encoding::{Column, EncodedDataset, EncodingMode, FeatureSchema};
use crate::mlp::MlpModel;
use crate::sim::CoefficientSet;
use crate::{rng, Error, Result};

/// Anything that maps encoded rows to choice probabilities.
pub trait ProbabilityModel: Sync {
    fn predict_proba(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>>;
}

impl ProbabilityModel for MlpModel {
    fn predict_proba(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
        MlpModel::predict_proba(self, rows)
    }
}

/// `p_sym(x) = (p(x) + 1 - p(swap(x))) / 2` for difference-encoded rows, so
/// that swapping left and right exactly complements the probability.
pub struct Antisymmetrized<'a, M: ProbabilityModel> {
    inner: &'a M,
    attribute_columns: Vec<usize>,
}

impl<'a, M: ProbabilityModel> Antisymmetrized<'a, M> {
    pub fn new(inner: &'a M, schema: &FeatureSchema) -> Result<Self> {
        if schema.mode != EncodingMode::Difference {
            return Err(Error::SchemaMismatch("antisymmetrization needs difference encoding".into()));
        }
        Ok(Antisymmetrized {
            inner,
            attribute_columns: schema.attribute_columns(),
        })
    }
}

impl<M: ProbabilityModel> ProbabilityModel for Antisymmetrized<'_, M> {
    fn predict_proba(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
        let mut swapped = rows.to_owned();
        for &c in &self.attribute_columns {
            swapped.column_mut(c).mapv_inplace(|v| -v);
        }
        let p = self.inner.predict_proba(rows)?;
        let q = self.inner.predict_proba(swapped.view())?;
        Ok(p.iter().zip(&q).map(|(a, b)| 0.5 * (a + 1.0 - b)).collect())
    }
}

/// Plug-in predictor built from known coefficients: `0.5 + scale * u`,
/// where `u` is the utility of a per-profile row or the left-minus-right
/// utility difference of a difference-encoded row. Choose `scale` small
/// enough that the result stays inside `(0, 1)`.
#[derive(Debug, Clone)]
pub struct PlugInOracle {
    weights: Vec<Vec<f64>>,
    context_columns: Vec<(usize, usize)>,
    context_levels: usize,
    scale: f64,
}

impl PlugInOracle {
    pub fn new(coefs: &CoefficientSet, schema: &FeatureSchema, scale: f64) -> Result<Self> {
        if schema.mode == EncodingMode::OlsInteraction {
            return Err(Error::SchemaMismatch("oracle expects full one-hot rows".into()));
        }
        if schema.attribute_levels != coefs.attribute_levels || schema.context_levels != coefs.context_levels {
            return Err(Error::SchemaMismatch("oracle coefficients do not match the schema".into()));
        }
        let k = schema.context_levels;
        let mut weights = vec![vec![0.0; k]; schema.width()];
        let mut context_columns = Vec::new();
        for (i, col) in schema.columns.iter().enumerate() {
            match *col {
                Column::Main { attribute, level } => {
                    for (c, w) in weights[i].iter_mut().enumerate() {
                        *w = coefs.main(attribute, level) + coefs.interaction(attribute, level, c);
                    }
                }
                Column::Context { level } => context_columns.push((i, level)),
                Column::Interaction { .. } => unreachable!("rejected above"),
            }
        }
        Ok(PlugInOracle {
            weights,
            context_columns,
            context_levels: k,
            scale,
        })
    }

    fn context_of(&self, row: ndarray::ArrayView1<f64>) -> usize {
        self.context_columns
            .iter()
            .find(|&&(i, _)| row[i] == 1.0)
            .map_or(0, |&(_, l)| l)
            .min(self.context_levels - 1)
    }
}

impl ProbabilityModel for PlugInOracle {
    fn predict_proba(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
        if rows.ncols() != self.weights.len() {
            return Err(Error::ShapeMismatch {
                expected: self.weights.len(),
                got: rows.ncols(),
            });
        }
        Ok(rows
            .rows()
            .into_iter()
            .map(|row| {
                let c = self.context_of(row);
                let u: f64 = row.iter().zip(&self.weights).map(|(x, w)| x * w[c]).sum();
                0.5 + self.scale * u
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    P,
    N,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub n_bootstrap: usize,
    pub ci_level: f64,
    pub variant: Variant,
    pub center_offset: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_bootstrap: 1000,
            ci_level: 0.95,
            variant: Variant::N,
            center_offset: 0.5,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bootstrap == 0 {
            return Err(Error::InvalidConfig("n_bootstrap must be positive".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidConfig(format!("ci_level {} outside (0, 1)", self.ci_level)));
        }
        if !self.center_offset.is_finite() {
            return Err(Error::InvalidConfig("center_offset must be finite".into()));
        }
        Ok(())
    }
}

/// Centred scores of one main variable's informative rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredPredictionTable {
    pub attribute: usize,
    pub level: usize,
    pub scores: Vec<f64>,
    pub contexts: Vec<usize>,
    pub respondent_ids: Vec<usize>,
}

fn main_column(schema: &FeatureSchema, attribute: usize, level: usize) -> Result<usize> {
    schema
        .index_of(&Column::Main { attribute, level })
        .ok_or_else(|| Error::SchemaMismatch(format!("no column for attribute {attribute} level {level}")))
}

fn contexts_of(data: &EncodedDataset) -> Vec<usize> {
    data.matrix.rows().into_iter().map(|r| data.schema.context_of(r)).collect()
}

/// Mean of `predict_proba - center_offset` over the rows selected by `filter`.
pub fn conditional_mean<M, F>(model: &M, data: &EncodedDataset, center_offset: f64, filter: F) -> Result<f64>
where
    M: ProbabilityModel + ?Sized,
    F: Fn(ndarray::ArrayView1<f64>) -> bool,
{
    let rows: Vec<usize> = data
        .matrix
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| filter(*r))
        .map(|(i, _)| i)
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptySubset("filter selects no rows".into()));
    }
    let x = data.matrix.select(ndarray::Axis(0), &rows);
    let p = model.predict_proba(x.view())?;
    Ok(p.iter().map(|v| v - center_offset).sum::<f64>() / p.len() as f64)
}

/// Variant P: mean centred score over rows with `X^D = +1`; variant N:
/// minus the mean over rows with `X^D = -1`.
pub fn marginal_contrast<M: ProbabilityModel + ?Sized>(
    model: &M,
    data: &EncodedDataset,
    main_index: usize,
    variant: Variant,
) -> Result<f64> {
    require_mode(data, EncodingMode::Difference)?;
    if main_index >= data.schema.width() || !matches!(data.schema.columns[main_index], Column::Main { .. }) {
        return Err(Error::SchemaMismatch(format!("column {main_index} is not an attribute column")));
    }
    let (target, sign) = variant_filter(variant);
    Ok(sign * conditional_mean(model, data, 0.5, |r| r[main_index] == target)?)
}

fn variant_filter(variant: Variant) -> (f64, f64) {
    match variant {
        Variant::P => (1.0, 1.0),
        Variant::N => (-1.0, -1.0),
    }
}

fn require_mode(data: &EncodedDataset, mode: EncodingMode) -> Result<()> {
    if data.schema.mode != mode {
        return Err(Error::SchemaMismatch(format!(
            "expected {mode:?} encoding, got {:?}",
            data.schema.mode
        )));
    }
    Ok(())
}

/// `total - sum_j interactions[j] * context_distribution[j + 1]`; context 0
/// is the baseline and carries no interaction.
pub fn reconstruct_main_from_interactions(
    total_contrast: f64,
    interaction_estimates: &[f64],
    context_distribution: &[f64],
) -> Result<f64> {
    let expected = context_distribution.len().saturating_sub(1);
    if interaction_estimates.len() != expected {
        return Err(Error::MissingInteraction {
            expected,
            got: interaction_estimates.len(),
        });
    }
    let sum: f64 = interaction_estimates
        .iter()
        .zip(&context_distribution[1..])
        .map(|(b, p)| b * p)
        .sum();
    Ok(total_contrast - sum)
}

/// Percentile (linear interpolation between order statistics) of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn interval(mut draws: Vec<f64>, ci_level: f64) -> (f64, f64) {
    draws.sort_by(f64::total_cmp);
    let tail = (1.0 - ci_level) / 2.0;
    (percentile(&draws, tail), percentile(&draws, 1.0 - tail))
}

/// Per-context sums and counts of a resample.
struct Tally {
    sum: Vec<f64>,
    count: Vec<usize>,
}

impl Tally {
    fn new(k: usize) -> Self {
        Tally {
            sum: vec![0.0; k],
            count: vec![0; k],
        }
    }

    fn add(&mut self, score: f64, ctx: usize) {
        self.sum[ctx] += score;
        self.count[ctx] += 1;
    }

    fn total(&self) -> (f64, usize) {
        (self.sum.iter().sum(), self.count.iter().sum())
    }

    /// Mean over rows whose context is not `c`.
    fn mean_excluding(&self, c: usize) -> Option<f64> {
        let (s, n) = self.total();
        let n = n - self.count[c];
        (n > 0).then(|| (s - self.sum[c]) / n as f64)
    }
}

fn check_cells(counts: &[usize], what: &str) -> Result<()> {
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::EmptySubset(format!("{what}, context {c}: no rows")));
        }
        if n < 2 {
            return Err(Error::InsufficientBootstrap(format!("{what}, context {c}: {n} row")));
        }
    }
    Ok(())
}

/// Returns `[main, interaction(1), ..., interaction(K-1)]`.
fn difference_statistic(t: &Tally) -> Vec<f64> {
    let k = t.sum.len();
    let (s, n) = t.total();
    let y_a = s / n as f64;
    if k == 1 {
        return vec![y_a];
    }
    let y_b: Vec<f64> = (0..k).map(|c| t.mean_excluding(c).unwrap_or(y_a)).collect();
    let z = k as f64 * y_a - y_b.iter().sum::<f64>();
    let mut out = vec![y_a - z];
    out.extend((1..k).map(|c| (y_a - y_b[c]) * k as f64));
    out
}

/// Tallies for the `X = 1` and `X = 0` rows.
fn per_profile_statistic(t1: &Tally, t0: &Tally) -> Vec<f64> {
    let k = t1.sum.len();
    let mean = |t: &Tally| {
        let (s, n) = t.total();
        s / n as f64
    };
    let total = mean(t1) - mean(t0);
    let inter: Vec<f64> = (1..k)
        .map(|c| {
            let excl = t1.mean_excluding(c).unwrap_or(mean(t1)) - t0.mean_excluding(c).unwrap_or(mean(t0));
            (total - excl) * k as f64
        })
        .collect();
    let uniform = vec![1.0 / k as f64; k];
    let main = reconstruct_main_from_interactions(total, &inter, &uniform).expect("lengths agree");
    let mut out = vec![main];
    out.extend(inter);
    out
}

fn slots_for(attribute: usize, level: usize, k: usize) -> Vec<EffectSlot> {
    let mut s = vec![EffectSlot::main(attribute, level)];
    s.extend((1..k).map(|c| EffectSlot::interaction(attribute, level, c)));
    s
}

fn summarise(slots: Vec<EffectSlot>, point: Vec<f64>, draws: Vec<Vec<f64>>, ci_level: f64) -> Vec<EffectEstimate> {
    slots
        .into_iter()
        .zip(point)
        .zip(draws)
        .map(|((slot, p), d)| {
            let (lo, hi) = interval(d, ci_level);
            EffectEstimate::from_interval(slot, p, lo, hi)
        })
        .collect()
}

fn main_variables(schema: &FeatureSchema) -> Vec<(usize, usize, usize)> {
    schema
        .columns
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match *c {
            Column::Main { attribute, level } if level > 0 => Some((attribute, level, i)),
            _ => None,
        })
        .collect()
}

fn bootstrap_rng(boot: &BootstrapConfig, attribute: usize, level: usize) -> rand_chacha::ChaCha8Rng {
    rng::stream(
        rng::derive_seed_tagged(boot.seed, "bootstrap", &[attribute as u64, level as u64]),
        0,
    )
}

/// Centred score table of one main variable under the configured variant.
pub fn prediction_table(
    probabilities: &[f64],
    data: &EncodedDataset,
    contexts: &[usize],
    attribute: usize,
    level: usize,
    boot: &BootstrapConfig,
) -> Result<CenteredPredictionTable> {
    let col = main_column(&data.schema, attribute, level)?;
    let (target, sign) = variant_filter(boot.variant);
    let mut t = CenteredPredictionTable {
        attribute,
        level,
        scores: Vec::new(),
        contexts: Vec::new(),
        respondent_ids: Vec::new(),
    };
    for (i, row) in data.matrix.rows().into_iter().enumerate() {
        if row[col] == target {
            t.scores.push(sign * (probabilities[i] - boot.center_offset));
            t.contexts.push(contexts[i]);
            t.respondent_ids.push(data.respondent_ids[i]);
        }
    }
    Ok(t)
}

/// Main and interaction estimates with bootstrap percentile intervals for
/// every non-baseline attribute level of a difference-encoded held-out set.
/// Output is ordered by (attribute, level): the main effect, then its
/// interactions by context.
pub fn estimate_effects<M: ProbabilityModel + ?Sized>(
    model: &M,
    heldout: &EncodedDataset,
    boot: &BootstrapConfig,
) -> Result<Vec<EffectEstimate>> {
    boot.validate()?;
    require_mode(heldout, EncodingMode::Difference)?;
    let k = heldout.schema.context_levels;
    let probabilities = model.predict_proba(heldout.matrix.view())?;
    let contexts = contexts_of(heldout);
    let per_variable: Vec<Vec<EffectEstimate>> = main_variables(&heldout.schema)
        .into_par_iter()
        .map(|(a, l, _)| {
            let table = prediction_table(&probabilities, heldout, &contexts, a, l, boot)?;
            let mut full = Tally::new(k);
            for (&s, &c) in table.scores.iter().zip(&table.contexts) {
                full.add(s, c);
            }
            check_cells(&full.count, &format!("attribute {a} level {l}"))?;
            let point = difference_statistic(&full);
            let mut draws = vec![Vec::with_capacity(boot.n_bootstrap); k];
            let mut r = bootstrap_rng(boot, a, l);
            let n = table.scores.len();
            for _ in 0..boot.n_bootstrap {
                let mut t = Tally::new(k);
                for _ in 0..n {
                    let i = r.random_range(0..n);
                    t.add(table.scores[i], table.contexts[i]);
                }
                for (d, v) in draws.iter_mut().zip(difference_statistic(&t)) {
                    d.push(v);
                }
            }
            Ok(summarise(slots_for(a, l, k), point, draws, boot.ci_level))
        })
        .collect::<Result<_>>()?;
    Ok(per_variable.into_iter().flatten().collect())
}

/// The same estimands from a per-profile model: `E[Y | X = 1] - E[Y | X = 0]`
/// overall and with each context excluded, interactions scaled by the
/// number of contexts, and the main effect reconstructed from them under a
/// uniform context distribution. `variant` and `center_offset` are ignored
/// beyond centring (the contrast is sign-symmetric by construction).
pub fn estimate_effects_per_profile<M: ProbabilityModel + ?Sized>(
    model: &M,
    heldout: &EncodedDataset,
    boot: &BootstrapConfig,
) -> Result<Vec<EffectEstimate>> {
    boot.validate()?;
    require_mode(heldout, EncodingMode::PerProfile)?;
    let k = heldout.schema.context_levels;
    let centred: Vec<f64> = model
        .predict_proba(heldout.matrix.view())?
        .into_iter()
        .map(|p| p - boot.center_offset)
        .collect();
    let contexts = contexts_of(heldout);
    let per_variable: Vec<Vec<EffectEstimate>> = main_variables(&heldout.schema)
        .into_par_iter()
        .map(|(a, l, col)| {
            let on: Vec<bool> = heldout.matrix.column(col).iter().map(|&v| v == 1.0).collect();
            let tally = |idx: &mut dyn Iterator<Item = usize>| {
                let mut t1 = Tally::new(k);
                let mut t0 = Tally::new(k);
                for i in idx {
                    (if on[i] { &mut t1 } else { &mut t0 }).add(centred[i], contexts[i]);
                }
                (t1, t0)
            };
            let (t1, t0) = tally(&mut (0..centred.len()));
            let what = format!("attribute {a} level {l}");
            check_cells(&t1.count, &what)?;
            check_cells(&t0.count, &what)?;
            let point = per_profile_statistic(&t1, &t0);
            let mut draws = vec![Vec::with_capacity(boot.n_bootstrap); k];
            let mut r = bootstrap_rng(boot, a, l);
            let n = centred.len();
            for _ in 0..boot.n_bootstrap {
                let (t1, t0) = tally(&mut (0..n).map(|_| r.random_range(0..n)));
                if t1.total().1 == 0 || t0.total().1 == 0 {
                    continue;
                }
                for (d, v) in draws.iter_mut().zip(per_profile_statistic(&t1, &t0)) {
                    d.push(v);
                }
            }
            if draws[0].is_empty() {
                return Err(Error::InsufficientBootstrap(format!("{what}: every resample lost a subset")));
            }
            Ok(summarise(slots_for(a, l, k), point, draws, boot.ci_level))
        })
        .collect::<Result<_>>()?;
    Ok(per_variable.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effects::{Classification, EffectKind};
    use crate::encoding::{encode_difference, encode_per_profile};
    use crate::sim::{generate_dataset, ChoiceTask, DesignSpec, Profile};

    struct Constant(f64);

    impl ProbabilityModel for Constant {
        fn predict_proba(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
            Ok(vec![self.0; rows.nrows()])
        }
    }

    /// Arbitrary nonlinear function of the first few columns.
    struct Wiggly;

    impl ProbabilityModel for Wiggly {
        fn predict_proba(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
            Ok(rows
                .rows()
                .into_iter()
                .map(|r| {
                    let z: f64 = r.iter().enumerate().map(|(i, v)| v * (0.3 + 0.17 * i as f64).sin()).sum();
                    1.0 / (1.0 + (-z - 0.2 * z * z).exp())
                })
                .collect())
        }
    }

    fn enumerated_design() -> (DesignSpec, Vec<ChoiceTask>) {
        // Every ordered pair of profiles of a 2 x 2 design in both contexts.
        let spec = DesignSpec {
            attribute_levels: vec![2, 2],
            context_levels: 2,
            n_respondents: 1,
            tasks_per_respondent: 32,
            ..DesignSpec::desk()
        };
        let profiles: Vec<Profile> = (0..4).map(|i| Profile::new(vec![i & 1, i >> 1])).collect();
        let mut tasks = Vec::new();
        for ctx in 0..2 {
            for l in &profiles {
                for r in &profiles {
                    tasks.push(ChoiceTask {
                        respondent_id: tasks.len(),
                        task_index: 0,
                        left: l.clone(),
                        right: r.clone(),
                        context_level: ctx,
                        chose_left: l.level_choices[0] >= r.level_choices[0],
                        latent_chose_left: None,
                    });
                }
            }
        }
        (spec, tasks)
    }

    #[test]
    fn constant_half_model_has_zero_means() {
        let (spec, tasks) = enumerated_design();
        let d = encode_difference(&tasks, &spec).unwrap();
        assert_eq!(conditional_mean(&Constant(0.5), &d, 0.5, |_| true).unwrap(), 0.0);
        assert_eq!(conditional_mean(&Constant(0.5), &d, 0.5, |r| r[1] == 1.0).unwrap(), 0.0);
    }

    #[test]
    fn total_expectation_over_complementary_filters() {
        let (spec, tasks) = enumerated_design();
        let d = encode_difference(&tasks, &spec).unwrap();
        let all = conditional_mean(&Wiggly, &d, 0.5, |_| true).unwrap();
        let n1 = d.matrix.column(1).iter().filter(|&&v| v == 1.0).count() as f64;
        let n = d.n_rows() as f64;
        let a = conditional_mean(&Wiggly, &d, 0.5, |r| r[1] == 1.0).unwrap();
        let b = conditional_mean(&Wiggly, &d, 0.5, |r| r[1] != 1.0).unwrap();
        assert!((all - (n1 * a + (n - n1) * b) / n).abs() < 1e-14);
    }

    #[test]
    fn conditional_mean_matches_enumeration() {
        let (spec, tasks) = enumerated_design();
        let d = encode_difference(&tasks, &spec).unwrap();
        // Brute force: encode each enumerated task independently and average.
        let mut sum = 0.0;
        let mut n = 0;
        for t in &tasks {
            let dx = t.left.level_choices[0] as i32 - t.right.level_choices[0] as i32;
            if dx == 1 && t.context_level == 1 {
                let row = encode_difference(std::slice::from_ref(t), &spec).unwrap();
                sum += Wiggly.predict_proba(row.matrix.view()).unwrap()[0] - 0.5;
                n += 1;
            }
        }
        assert_eq!(n, 4);
        let cols = (
            d.schema.index_of(&Column::Main { attribute: 0, level: 1 }).unwrap(),
            d.schema.index_of(&Column::Context { level: 1 }).unwrap(),
        );
        let got = conditional_mean(&Wiggly, &d, 0.5, |r| r[cols.0] == 1.0 && r[cols.1] == 1.0).unwrap();
        assert!((got - sum / n as f64).abs() < 1e-14);
    }

    #[test]
    fn empty_filter_is_an_error() {
        let (spec, tasks) = enumerated_design();
        let d = encode_difference(&tasks, &spec).unwrap();
        assert!(matches!(
            conditional_mean(&Wiggly, &d, 0.5, |r| r[0] == 7.0),
            Err(Error::EmptySubset(_))
        ));
    }

    #[test]
    fn variants_agree_for_an_antisymmetric_model() {
        let spec = DesignSpec { n_respondents: 300, seed: 4, ..DesignSpec::desk() };
        let d = encode_difference(&generate_dataset(&spec).unwrap().tasks, &spec).unwrap();
        let sym = Antisymmetrized::new(&Wiggly, &d.schema).unwrap();
        let aug = d.symmetrized().unwrap();
        for col in d.schema.attribute_columns() {
            let p = marginal_contrast(&sym, &aug, col, Variant::P).unwrap();
            let n = marginal_contrast(&sym, &aug, col, Variant::N).unwrap();
            assert!((p - n).abs() < 1e-12, "column {col}: {p} vs {n}");
        }
    }

    #[test]
    fn oracle_recovers_total_contrast_on_one_attribute() {
        // One binary attribute, two contexts: the X^D = +1 rows all compare
        // level 1 against level 0, so the contrast is scale * (B + B_1 E[C_1]).
        let spec = DesignSpec {
            attribute_levels: vec![2],
            context_levels: 2,
            n_respondents: 20000,
            tasks_per_respondent: 4,
            seed: 8,
            ..DesignSpec::desk()
        };
        let mut coefs = CoefficientSet::zeros(&[2], 2);
        coefs.set_main(0, 1, 0.4);
        coefs.set_interaction(0, 1, 1, 0.3);
        let tasks = generate_dataset(&spec).unwrap().tasks;
        let d = encode_difference(&tasks, &spec).unwrap();
        let scale = 0.5;
        let oracle = PlugInOracle::new(&coefs, &d.schema, scale).unwrap();
        let col = d.schema.index_of(&Column::Main { attribute: 0, level: 1 }).unwrap();
        let share = tasks.iter().filter(|t| t.context_level == 1).count() as f64 / tasks.len() as f64;
        let expected = 0.4 + 0.3 * share;
        for v in [Variant::P, Variant::N] {
            let got = marginal_contrast(&oracle, &d, col, v).unwrap() / scale;
            assert!((got - expected).abs() / expected < 0.02, "{v:?}: {got} vs {expected}");
        }
        let got = marginal_contrast(&oracle, &d, col, Variant::P).unwrap() / scale;
        assert!((got - 0.55).abs() / 0.55 < 0.02);
    }

    #[test]
    fn reconstruction_examples() {
        assert_eq!(reconstruct_main_from_interactions(0.7, &[0.0, 0.0], &[0.4, 0.3, 0.3]).unwrap(), 0.7);
        // Forward: total = B + B_1 E[C_1] = 0.4 + 0.2 * 0.2.
        let total = 0.4 + 0.2 * 0.2;
        assert!((total - 0.44_f64).abs() < 1e-15);
        let b = reconstruct_main_from_interactions(total, &[0.2], &[0.8, 0.2]).unwrap();
        assert!((b - 0.4).abs() < 1e-15);
        assert_eq!(reconstruct_main_from_interactions(0.0, &[0.0], &[0.5, 0.5]).unwrap(), 0.0);
        assert!(matches!(
            reconstruct_main_from_interactions(0.1, &[0.2], &[0.2, 0.4, 0.4]),
            Err(Error::MissingInteraction { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_eq!(percentile(&v, 1.0), 5.0);
        assert!((percentile(&v, 0.025) - 1.1).abs() < 1e-12);
    }

    fn oracle_setup() -> (EncodedDataset, PlugInOracle, CoefficientSet) {
        let spec = DesignSpec {
            attribute_levels: vec![2, 2],
            context_levels: 2,
            n_respondents: 5000,
            tasks_per_respondent: 8,
            seed: 17,
            ..DesignSpec::desk()
        };
        let mut coefs = CoefficientSet::zeros(&[2, 2], 2);
        coefs.set_main(0, 1, 0.6);
        coefs.set_main(1, 1, -0.3);
        coefs.set_interaction(0, 1, 1, 0.5);
        coefs.set_interaction(1, 1, 1, -0.7);
        let d = encode_difference(&generate_dataset(&spec).unwrap().tasks, &spec).unwrap();
        let oracle = PlugInOracle::new(&coefs, &d.schema, 0.2).unwrap();
        (d, oracle, coefs)
    }

    #[test]
    fn oracle_interactions_are_recovered() {
        let (d, oracle, coefs) = oracle_setup();
        for variant in [Variant::P, Variant::N] {
            let boot = BootstrapConfig { n_bootstrap: 50, variant, ..Default::default() };
            let est = estimate_effects(&oracle, &d, &boot).unwrap();
            assert_eq!(est.len(), 4);
            for e in est.iter().filter(|e| e.kind == EffectKind::Interaction) {
                let truth = e.slot().truth(&coefs);
                let got = e.point / 0.2;
                assert!((got - truth).abs() / truth.abs() < 0.05, "{e:?}: {got} vs {truth}");
                assert_eq!(e.classification, Classification::of_value(truth));
            }
        }
    }

    #[test]
    fn bootstrap_is_deterministic_and_consistent() {
        let (d, oracle, _) = oracle_setup();
        let boot = BootstrapConfig { n_bootstrap: 40, seed: 3, ..Default::default() };
        let a = estimate_effects(&oracle, &d, &boot).unwrap();
        let b = estimate_effects(&oracle, &d, &boot).unwrap();
        assert_eq!(a, b);
        let c = estimate_effects(&oracle, &d, &BootstrapConfig { seed: 4, ..boot }).unwrap();
        assert_ne!(a, c);
        for e in &a {
            assert!(e.ci_low <= e.ci_high);
            assert_eq!(e.classification.is_null(), e.ci_low <= 0.0 && 0.0 <= e.ci_high);
        }
    }

    #[test]
    fn single_draw_gives_degenerate_interval() {
        let (d, oracle, _) = oracle_setup();
        let boot = BootstrapConfig { n_bootstrap: 1, ..Default::default() };
        for e in estimate_effects(&oracle, &d, &boot).unwrap() {
            assert_eq!(e.ci_low, e.ci_high);
            assert_eq!(e.classification, Classification::of_value(e.ci_low));
        }
    }

    #[test]
    fn variants_agree_on_symmetrized_heldout() {
        let (d, _, _) = oracle_setup();
        let aug = d.subset(&(0..2000).collect::<Vec<_>>()).symmetrized().unwrap();
        let sym = Antisymmetrized::new(&Wiggly, &aug.schema).unwrap();
        let point = |v| {
            let boot = BootstrapConfig { n_bootstrap: 1, variant: v, ..Default::default() };
            estimate_effects(&sym, &aug, &boot).unwrap()
        };
        for (p, n) in point(Variant::P).iter().zip(&point(Variant::N)) {
            assert!((p.point - n.point).abs() < 1e-10);
        }
    }

    #[test]
    fn missing_context_cells_are_reported() {
        let (d, oracle, _) = oracle_setup();
        let ctx = d.schema.index_of(&Column::Context { level: 1 }).unwrap();
        let only0: Vec<usize> = (0..d.n_rows()).filter(|&i| d.matrix[[i, ctx]] == 0.0).collect();
        let boot = BootstrapConfig { n_bootstrap: 5, ..Default::default() };
        assert!(matches!(
            estimate_effects(&oracle, &d.subset(&only0), &boot),
            Err(Error::EmptySubset(_))
        ));
        let mut one = only0[..50].to_vec();
        one.push((0..d.n_rows()).find(|&i| d.matrix[[i, ctx]] == 1.0).unwrap());
        // The lone context-1 row may not be informative for every variable,
        // so either error is acceptable; both mean a starved cell.
        assert!(matches!(
            estimate_effects(&oracle, &d.subset(&one), &boot),
            Err(Error::EmptySubset(_) | Error::InsufficientBootstrap(_))
        ));
    }

    #[test]
    fn per_profile_oracle_recovers_binary_design() {
        let spec = DesignSpec {
            attribute_levels: vec![2, 2],
            context_levels: 2,
            n_respondents: 4000,
            tasks_per_respondent: 8,
            seed: 23,
            ..DesignSpec::desk()
        };
        let mut coefs = CoefficientSet::zeros(&[2, 2], 2);
        coefs.set_main(0, 1, 0.6);
        coefs.set_interaction(0, 1, 1, 0.5);
        coefs.set_main(1, 1, -0.4);
        let d = encode_per_profile(&generate_dataset(&spec).unwrap().tasks, &spec).unwrap();
        let oracle = PlugInOracle::new(&coefs, &d.schema, 0.2).unwrap();
        let boot = BootstrapConfig { n_bootstrap: 30, ..Default::default() };
        let est = estimate_effects_per_profile(&oracle, &d, &boot).unwrap();
        for e in &est {
            let truth = e.slot().truth(&coefs);
            let got = e.point / 0.2;
            assert!((got - truth).abs() < 0.05, "{e:?}: {got} vs {truth}");
        }
    }

    #[test]
    fn invalid_bootstrap_config() {
        assert!(BootstrapConfig { n_bootstrap: 0, ..Default::default() }.validate().is_err());
        assert!(BootstrapConfig { ci_level: 1.0, ..Default::default() }.validate().is_err());
    }
}
