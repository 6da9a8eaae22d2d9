//! Ground-truth coefficients and simulated forced-choice tasks.
//!
//! A design has `A` categorical conjoint attributes with `levels[a]` levels
//! each and one categorical context factor with `M` levels. One-hot main
//! effects are indexed `j = offset[a] + level`, `j < N = sum(levels)`, and
//! interaction effects by `(j, k)` with `k < M`. Level 0 of every attribute
//! and context level 0 are baselines whose coefficients are fixed at zero.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Full parameterisation of one simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub attribute_levels: Vec<usize>,
    pub context_levels: usize,
    pub sparsity_main: f64,
    pub sparsity_interaction: f64,
    pub n_respondents: usize,
    pub tasks_per_respondent: usize,
    /// Probability of keeping the utility-maximal choice.
    pub measurement_error_threshold: f64,
    pub coef_low: f64,
    pub coef_high: f64,
    pub coef_exclusion_halfwidth: f64,
    pub seed: u64,
}

impl DesignSpec {
    /// The immigration-conjoint design: nine attributes, five contexts,
    /// 2000 respondents answering 8 paired questions, 85% kept choices.
    pub fn reference() -> Self {
        DesignSpec {
            attribute_levels: vec![7, 2, 10, 4, 3, 11, 4, 4, 5],
            context_levels: 5,
            sparsity_main: 0.5,
            sparsity_interaction: 0.5,
            n_respondents: 2000,
            tasks_per_respondent: 8,
            measurement_error_threshold: 0.85,
            coef_low: -1.0,
            coef_high: 1.0,
            coef_exclusion_halfwidth: 0.1,
            seed: 0,
        }
    }

    /// Small design that runs a full grid in minutes.
    pub fn desk() -> Self {
        DesignSpec {
            attribute_levels: vec![3, 2, 4],
            context_levels: 3,
            n_respondents: 500,
            ..Self::reference()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.attribute_levels.is_empty() {
            return bad("at least one attribute is required".into());
        }
        if let Some(a) = self.attribute_levels.iter().position(|&l| l == 0) {
            return bad(format!("attribute {a} has zero levels"));
        }
        if self.context_levels == 0 {
            return bad("context_levels must be positive".into());
        }
        for (name, v) in [
            ("sparsity_main", self.sparsity_main),
            ("sparsity_interaction", self.sparsity_interaction),
            ("measurement_error_threshold", self.measurement_error_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if self.sparsity_interaction < self.sparsity_main {
            return bad(format!(
                "interaction sparsity {} is below main sparsity {}",
                self.sparsity_interaction, self.sparsity_main
            ));
        }
        if self.n_respondents == 0 || self.tasks_per_respondent == 0 {
            return bad("n_respondents and tasks_per_respondent must be positive".into());
        }
        if !(self.coef_low < self.coef_high) {
            return bad(format!(
                "coef_low {} must be below coef_high {}",
                self.coef_low, self.coef_high
            ));
        }
        let h = self.coef_exclusion_halfwidth;
        if !(h >= 0.0 && h < self.coef_low.abs().min(self.coef_high)) {
            return bad(format!(
                "exclusion half-width {h} must be in [0, min(|coef_low|, coef_high))"
            ));
        }
        Ok(())
    }

    pub fn n_attributes(&self) -> usize {
        self.attribute_levels.len()
    }

    /// One-hot main-effect dimension `N`.
    pub fn n_main(&self) -> usize {
        self.attribute_levels.iter().sum()
    }

    pub fn n_interaction_slots(&self) -> usize {
        self.n_main() * self.context_levels
    }

    pub fn attribute_offsets(&self) -> Vec<usize> {
        attribute_offsets(&self.attribute_levels)
    }

    /// Main effects not fixed at zero by the baseline rule.
    pub fn eligible_main_count(&self) -> usize {
        self.n_main() - self.n_attributes()
    }

    pub fn eligible_interaction_count(&self) -> usize {
        self.eligible_main_count() * (self.context_levels - 1)
    }

    pub fn n_tasks(&self) -> usize {
        self.n_respondents * self.tasks_per_respondent
    }

    /// Same design with the sparsity pair and seed replaced.
    pub fn with_cell(&self, sparsity_main: f64, sparsity_interaction: f64, seed: u64) -> Self {
        DesignSpec {
            sparsity_main,
            sparsity_interaction,
            seed,
            ..self.clone()
        }
    }
}

pub(crate) fn attribute_offsets(levels: &[usize]) -> Vec<usize> {
    levels
        .iter()
        .scan(0, |acc, &l| {
            let start = *acc;
            *acc += l;
            Some(start)
        })
        .collect()
}

/// Ground-truth main effects `beta` (length `N`) and interaction matrix
/// `b_interaction` (`N` rows by `M` columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub attribute_levels: Vec<usize>,
    pub context_levels: usize,
    pub beta: Vec<f64>,
    pub b_interaction: Vec<Vec<f64>>,
    pub main_active_mask: Vec<bool>,
    pub interaction_active_mask: Vec<Vec<bool>>,
}

impl CoefficientSet {
    /// All-zero coefficients for the given layout.
    pub fn zeros(attribute_levels: &[usize], context_levels: usize) -> Self {
        let n: usize = attribute_levels.iter().sum();
        CoefficientSet {
            attribute_levels: attribute_levels.to_vec(),
            context_levels,
            beta: vec![0.0; n],
            b_interaction: vec![vec![0.0; context_levels]; n],
            main_active_mask: vec![false; n],
            interaction_active_mask: vec![vec![false; context_levels]; n],
        }
    }

    pub fn main_index(&self, attribute: usize, level: usize) -> usize {
        attribute_offsets(&self.attribute_levels)[attribute] + level
    }

    pub fn main(&self, attribute: usize, level: usize) -> f64 {
        self.beta[self.main_index(attribute, level)]
    }

    pub fn interaction(&self, attribute: usize, level: usize, context: usize) -> f64 {
        self.b_interaction[self.main_index(attribute, level)][context]
    }

    /// Set a coefficient directly and keep the masks consistent.
    pub fn set_main(&mut self, attribute: usize, level: usize, value: f64) {
        let j = self.main_index(attribute, level);
        self.beta[j] = value;
        self.main_active_mask[j] = value != 0.0;
    }

    pub fn set_interaction(&mut self, attribute: usize, level: usize, context: usize, value: f64) {
        let j = self.main_index(attribute, level);
        self.b_interaction[j][context] = value;
        self.interaction_active_mask[j][context] = value != 0.0;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One level index per attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Profile {
    pub level_choices: Vec<usize>,
}

impl Profile {
    pub fn new(level_choices: Vec<usize>) -> Self {
        Profile { level_choices }
    }

    /// Uniform independent level per attribute.
    pub fn random<R: Rng + ?Sized>(levels: &[usize], rng: &mut R) -> Self {
        Profile {
            level_choices: levels.iter().map(|&l| rng.random_range(0..l)).collect(),
        }
    }
}

/// One paired-profile question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceTask {
    pub respondent_id: usize,
    pub task_index: usize,
    pub left: Profile,
    pub right: Profile,
    pub context_level: usize,
    /// Observed choice, after measurement error.
    pub chose_left: bool,
    /// Utility-maximal choice before measurement error. Only the simulator
    /// knows it; tasks loaded from disk carry `None`.
    pub latent_chose_left: Option<bool>,
}

impl ChoiceTask {
    /// The same question with the two sides exchanged.
    pub fn swapped(&self) -> Self {
        ChoiceTask {
            left: self.right.clone(),
            right: self.left.clone(),
            chose_left: !self.chose_left,
            latent_chose_left: self.latent_chose_left.map(|l| !l),
            ..self.clone()
        }
    }
}

/// Number of slots to zero out, rounding halves up.
pub fn sparsity_zero_count(sparsity: f64, eligible: usize) -> usize {
    let x = sparsity * eligible as f64;
    ((x + 0.5 + 1e-9).floor() as usize).min(eligible)
}

fn draw_coefficient<R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> f64 {
    loop {
        let c = rng.random_range(spec.coef_low..spec.coef_high);
        if c.abs() >= spec.coef_exclusion_halfwidth {
            return c;
        }
    }
}

/// Draw ground-truth coefficients: baselines fixed at zero, an exact
/// sparsity fraction of the remaining slots zeroed uniformly at random, the
/// rest uniform on `[low, high)` outside the exclusion band.
pub fn sample_coefficients<R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> Result<CoefficientSet> {
    spec.validate()?;
    let mut coefs = CoefficientSet::zeros(&spec.attribute_levels, spec.context_levels);
    let offsets = spec.attribute_offsets();

    let eligible_main: Vec<usize> = spec
        .attribute_levels
        .iter()
        .zip(&offsets)
        .flat_map(|(&l, &o)| (o + 1)..(o + l))
        .collect();
    let eligible_inter: Vec<(usize, usize)> = eligible_main
        .iter()
        .flat_map(|&j| (1..spec.context_levels).map(move |k| (j, k)))
        .collect();

    let mut main_order = eligible_main.clone();
    main_order.shuffle(rng);
    let zero_main = sparsity_zero_count(spec.sparsity_main, main_order.len());
    for &j in &main_order[zero_main..] {
        coefs.beta[j] = draw_coefficient(spec, rng);
        coefs.main_active_mask[j] = true;
    }

    let mut inter_order = eligible_inter.clone();
    inter_order.shuffle(rng);
    let zero_inter = sparsity_zero_count(spec.sparsity_interaction, inter_order.len());
    for &(j, k) in &inter_order[zero_inter..] {
        coefs.b_interaction[j][k] = draw_coefficient(spec, rng);
        coefs.interaction_active_mask[j][k] = true;
    }
    Ok(coefs)
}

/// Latent utility `x'beta + (x'B) z` of a profile under a context level.
pub fn utility_score(profile: &Profile, context_level: usize, coefs: &CoefficientSet) -> f64 {
    let offsets = attribute_offsets(&coefs.attribute_levels);
    profile
        .level_choices
        .iter()
        .zip(&offsets)
        .map(|(&level, &o)| {
            let j = o + level;
            coefs.beta[j] + coefs.b_interaction[j][context_level]
        })
        .sum()
}

/// Latent (utility-maximal, ties to the left) and observed choice.
///
/// The observed choice flips the latent one when `p >= error_threshold`
/// for `p ~ Unif[0, 1)`.
pub fn simulate_choice<R: Rng + ?Sized>(
    left: &Profile,
    right: &Profile,
    context_level: usize,
    coefs: &CoefficientSet,
    rng: &mut R,
    error_threshold: f64,
) -> (bool, bool) {
    let latent = utility_score(left, context_level, coefs) >= utility_score(right, context_level, coefs);
    let p: f64 = rng.random();
    let flip = p >= error_threshold;
    (latent, latent ^ flip)
}

/// Coefficients plus the simulated tasks, respondent-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub coefficients: CoefficientSet,
    pub tasks: Vec<ChoiceTask>,
}

fn respondent_tasks(spec: &DesignSpec, coefs: &CoefficientSet, respondent: usize) -> Vec<ChoiceTask> {
    let mut rng = rng::stream(spec.seed, respondent as u64 + 1);
    let context_level = rng.random_range(0..spec.context_levels);
    (0..spec.tasks_per_respondent)
        .map(|task_index| {
            let left = Profile::random(&spec.attribute_levels, &mut rng);
            let right = Profile::random(&spec.attribute_levels, &mut rng);
            let (latent, observed) = simulate_choice(
                &left,
                &right,
                context_level,
                coefs,
                &mut rng,
                spec.measurement_error_threshold,
            );
            ChoiceTask {
                respondent_id: respondent,
                task_index,
                left,
                right,
                context_level,
                chose_left: observed,
                latent_chose_left: Some(latent),
            }
        })
        .collect()
}

/// One run of the simulation. Coefficients come from stream 0 of the seed,
/// respondent `r` from stream `r + 1`, so the output does not depend on how
/// respondents are scheduled across threads.
pub fn generate_dataset(spec: &DesignSpec) -> Result<SimulatedDataset> {
    spec.validate()?;
    let mut coef_rng = rng::stream(spec.seed, 0);
    let coefficients = sample_coefficients(spec, &mut coef_rng)?;
    let tasks = (0..spec.n_respondents)
        .into_par_iter()
        .map(|r| respondent_tasks(spec, &coefficients, r))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(SimulatedDataset { coefficients, tasks })
}

/// All `(Sp_j, Sp_z)` pairs with interaction sparsity at least main sparsity.
pub fn sparsity_grid(options_main: &[f64], options_interaction: &[f64]) -> Vec<(f64, f64)> {
    options_main
        .iter()
        .flat_map(|&m| {
            options_interaction
                .iter()
                .filter(move |&&z| z >= m)
                .map(move |&z| (m, z))
        })
        .collect()
}

/// Write tasks as one CSV record per profile-in-task.
pub fn write_tasks_csv<W: Write>(tasks: &[ChoiceTask], n_attributes: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["respondent_id".to_string(), "task_index".into(), "side".into()];
    header.extend((0..n_attributes).map(|a| format!("attr{a}")));
    header.extend(["context_level".to_string(), "chose_left".into()]);
    w.write_record(&header)?;
    for t in tasks {
        for (side, profile) in [("left", &t.left), ("right", &t.right)] {
            let mut rec = vec![t.respondent_id.to_string(), t.task_index.to_string(), side.to_string()];
            rec.extend(profile.level_choices.iter().map(|l| l.to_string()));
            rec.push(t.context_level.to_string());
            rec.push(u8::from(t.chose_left).to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Read tasks written by [`write_tasks_csv`]. The latent choice is unknown.
pub fn read_tasks_csv<R: Read>(reader: R) -> Result<Vec<ChoiceTask>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let n_cols = headers.len();
    if n_cols < 5 {
        return Err(Error::Parse(format!("expected at least 5 columns, got {n_cols}")));
    }
    let n_attributes = n_cols - 5;
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad {what}: {s:?}")))
    };

    let mut tasks = Vec::new();
    let mut pending: Option<(usize, usize, Profile, usize, bool)> = None;
    for rec in r.records() {
        let rec = rec?;
        let respondent = parse(&rec[0], "respondent_id")?;
        let task = parse(&rec[1], "task_index")?;
        let side = &rec[2];
        let levels = (0..n_attributes)
            .map(|a| parse(&rec[3 + a], "level"))
            .collect::<Result<Vec<_>>>()?;
        let context = parse(&rec[3 + n_attributes], "context_level")?;
        let chose_left = match rec[4 + n_attributes].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(Error::Parse(format!("bad chose_left: {other:?}"))),
        };
        match (side, pending.take()) {
            ("left", None) => pending = Some((respondent, task, Profile::new(levels), context, chose_left)),
            ("right", Some((pr, pt, left, pc, pl))) => {
                if (pr, pt, pc, pl) != (respondent, task, context, chose_left) {
                    return Err(Error::Parse(format!(
                        "right row of respondent {respondent} task {task} does not match its left row"
                    )));
                }
                tasks.push(ChoiceTask {
                    respondent_id: respondent,
                    task_index: task,
                    left,
                    right: Profile::new(levels),
                    context_level: context,
                    chose_left,
                    latent_chose_left: None,
                });
            }
            (side, _) => {
                return Err(Error::Parse(format!(
                    "unexpected {side:?} row for respondent {respondent} task {task}"
                )))
            }
        }
    }
    if pending.is_some() {
        return Err(Error::Parse("trailing left row without its right row".into()));
    }
    Ok(tasks)
}
