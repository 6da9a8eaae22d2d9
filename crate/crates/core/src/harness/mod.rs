//! Experiment grid: configuration, per-cell method runs, resumable
//! persistence and replication aggregates.
//!
//! Layout of an output directory:
//!
//! ```text
//! run.json              RunRecord of the last grid run
//! ledger.jsonl          one line per finished, resumed or failed cell
//! metrics.csv           aggregates per configuration, method and metric
//! cells/<id>/           tasks.csv, truth.json, model_*.json,
//!                       estimates_<method>.csv, cell_metrics.json
//! fig1.json ...         written by `emit_figures`
//! ```

mod figures;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{classify_lm, fit_ols, predict_lm, Correction};
use crate::dipce::{estimate_effects, estimate_effects_per_profile, BootstrapConfig};
use crate::effects::{attach_truth, write_estimates_csv, EffectEstimate};
use crate::encoding::{encode, latent_labels, split_by_respondent, EncodingMode};
use crate::metrics::{aggregate_values, predictive_accuracy, score_classifications, write_metrics_csv};
use crate::metrics::{ConfusionSummary, MetricRow};
use crate::mlp::{self, MlpConfig, MlpModel};
use crate::sim::{generate_dataset, sparsity_grid, write_tasks_csv, ChoiceTask, DesignSpec, SimulatedDataset};
use crate::{rng, Error, Result};

pub use figures::emit_figures;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "dipce")]
    Dipce,
    #[serde(rename = "dipce-per-profile-ablation")]
    DipcePerProfile,
    #[serde(rename = "lm")]
    Lm,
    #[serde(rename = "lm-bon")]
    LmBonferroni,
    #[serde(rename = "lm-bh")]
    LmBh,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Dipce,
        Method::DipcePerProfile,
        Method::Lm,
        Method::LmBonferroni,
        Method::LmBh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dipce => "dipce",
            Method::DipcePerProfile => "dipce-per-profile-ablation",
            Method::Lm => "lm",
            Method::LmBonferroni => "lm-bon",
            Method::LmBh => "lm-bh",
        }
    }

    fn correction(self) -> Option<Correction> {
        match self {
            Method::Lm => Some(Correction::None),
            Method::LmBonferroni => Some(Correction::Bonferroni),
            Method::LmBh => Some(Correction::BenjaminiHochberg),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

fn default_heldout() -> f64 {
    0.2
}

fn default_alpha() -> f64 {
    0.05
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// Everything a grid run depends on. `design` is a template whose sparsity
/// pair and seed are replaced per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replications: usize,
    pub sparsity_main: Vec<f64>,
    pub sparsity_interaction: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Fraction of respondents whose tasks are held out for estimation and
    /// test accuracy.
    #[serde(default = "default_heldout")]
    pub heldout_fraction: f64,
    /// Significance level of the lm baselines.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub jobs: usize,
    pub design: DesignSpec,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub mlp: MlpConfig,
}

/// The fields that determine results (output location and thread count
/// do not).
#[derive(Serialize)]
struct Scientific<'a> {
    seed: u64,
    replications: usize,
    sparsity_main: &'a [f64],
    sparsity_interaction: &'a [f64],
    methods: &'a [Method],
    heldout_fraction: f64,
    alpha: f64,
    design: &'a DesignSpec,
    bootstrap: &'a BootstrapConfig,
    mlp: &'a MlpConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        for (name, opts) in [
            ("sparsity_main", &self.sparsity_main),
            ("sparsity_interaction", &self.sparsity_interaction),
        ] {
            if opts.is_empty() {
                return bad(format!("{name} is empty"));
            }
            if opts.windows(2).any(|w| !(w[0] < w[1])) {
                return bad(format!("{name} must be strictly ascending"));
            }
        }
        if self.grid().is_empty() {
            return bad("no sparsity pair has Sp_z >= Sp_j".into());
        }
        for &(m, z) in &self.grid() {
            self.design
                .with_cell(m, z, 0)
                .validate()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        if self.methods.is_empty() {
            return bad("method list is empty".into());
        }
        let mut sorted = self.methods.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            return bad("method list has duplicates".into());
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return bad(format!("heldout_fraction {} must be in (0, 1)", self.heldout_fraction));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} must be in (0, 1)", self.alpha));
        }
        self.bootstrap.validate()?;
        MlpConfig { input_dim: 1, ..self.mlp.clone() }.validate()?;
        Ok(())
    }

    pub fn grid(&self) -> Vec<(f64, f64)> {
        sparsity_grid(&self.sparsity_main, &self.sparsity_interaction)
    }

    /// Hex SHA-256 of the result-determining fields.
    pub fn fingerprint(&self) -> String {
        let sci = Scientific {
            seed: self.seed,
            replications: self.replications,
            sparsity_main: &self.sparsity_main,
            sparsity_interaction: &self.sparsity_interaction,
            methods: &self.methods,
            heldout_fraction: self.heldout_fraction,
            alpha: self.alpha,
            design: &self.design,
            bootstrap: &self.bootstrap,
            mlp: &self.mlp,
        };
        let json = serde_json::to_vec(&sci).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }

    /// Seed of one cell, a pure function of the master seed, the sparsity
    /// pair and the replication index.
    pub fn cell_seed(&self, sp_j: f64, sp_z: f64, replication: usize) -> u64 {
        rng::derive_seed(self.seed, &[sp_j.to_bits(), sp_z.to_bits(), replication as u64])
    }

    pub fn cells(&self) -> Vec<CellId> {
        self.grid()
            .into_iter()
            .flat_map(|(sp_j, sp_z)| {
                (0..self.replications).map(move |replication| CellId {
                    sp_j,
                    sp_z,
                    replication,
                })
            })
            .collect()
    }

    fn uses_model(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }

    fn uses_lm(&self) -> bool {
        self.methods.iter().any(|m| m.correction().is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellId {
    pub sp_j: f64,
    pub sp_z: f64,
    pub replication: usize,
}

impl CellId {
    pub fn name(&self) -> String {
        format!("spj{:.2}_spz{:.2}_rep{:02}", self.sp_j, self.sp_z, self.replication)
    }
}

/// Estimates and accuracies of one method on one dataset. Accuracies are
/// `None` when the method does not predict, or when latent labels are
/// unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    #[serde(skip)]
    pub estimates: Vec<EffectEstimate>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub latent_test_accuracy: Option<f64>,
}

struct Trained {
    model: MlpModel,
    train_accuracy: f64,
    test_accuracy: f64,
    latent_test_accuracy: Option<f64>,
}

fn accuracy_of(model: &MlpModel, data: &crate::encoding::EncodedDataset, labels: &[bool]) -> Result<f64> {
    predictive_accuracy(&model.predict(data.matrix.view())?, labels)
}

/// The same split of tasks by respondent is shared by every method.
pub fn split_tasks(tasks: &[ChoiceTask], fraction: f64, seed: u64) -> (Vec<ChoiceTask>, Vec<ChoiceTask>) {
    let ids: Vec<usize> = tasks.iter().map(|t| t.respondent_id).collect();
    let (train, test) = split_by_respondent(&ids, fraction, seed);
    let pick = |rows: Vec<usize>| rows.into_iter().map(|i| tasks[i].clone()).collect();
    (pick(train), pick(test))
}

/// Runs `cfg.methods` on one dataset. Models are checkpointed into `dir`
/// when one is given.
pub fn run_methods(
    cfg: &ExperimentConfig,
    spec: &DesignSpec,
    tasks: &[ChoiceTask],
    seed: u64,
    dir: Option<&Path>,
) -> Result<Vec<MethodResult>> {
    let (train, test) = split_tasks(tasks, cfg.heldout_fraction, rng::derive_seed_tagged(seed, "heldout", &[]));
    if train.is_empty() || test.is_empty() {
        return Err(Error::DegenerateData("too few respondents to hold any out".into()));
    }
    let boot = BootstrapConfig {
        seed: rng::derive_seed_tagged(seed, "bootstrap", &[cfg.bootstrap.seed]),
        ..cfg.bootstrap.clone()
    };

    let train_model = |mode: EncodingMode, tag: &str| -> Result<(Trained, crate::encoding::EncodedDataset)> {
        let tr = encode(&train, spec, mode)?;
        let te = encode(&test, spec, mode)?;
        let mlp_cfg = MlpConfig {
            input_dim: tr.schema.width(),
            seed: rng::derive_seed_tagged(seed, tag, &[cfg.mlp.seed]),
            ..cfg.mlp.clone()
        };
        let (model, _) = mlp::fit(&mlp_cfg, &tr)?;
        if let Some(dir) = dir {
            model.save(&dir.join(format!("model_{tag}.json")))?;
        }
        let latent = match latent_labels(&test, mode) {
            Some(l) => Some(accuracy_of(&model, &te, &l)?),
            None => None,
        };
        let trained = Trained {
            train_accuracy: accuracy_of(&model, &tr, &tr.labels)?,
            test_accuracy: accuracy_of(&model, &te, &te.labels)?,
            latent_test_accuracy: latent,
            model,
        };
        Ok((trained, te))
    };

    let mut out = Vec::new();
    for &(method, mode, tag) in &[
        (Method::Dipce, EncodingMode::Difference, "difference"),
        (Method::DipcePerProfile, EncodingMode::PerProfile, "per_profile"),
    ] {
        if !cfg.uses_model(method) {
            continue;
        }
        let (t, te) = train_model(mode, tag)?;
        let estimates = match method {
            Method::Dipce => estimate_effects(&t.model, &te, &boot)?,
            _ => estimate_effects_per_profile(&t.model, &te, &boot)?,
        };
        out.push(MethodResult {
            method,
            estimates,
            train_accuracy: Some(t.train_accuracy),
            test_accuracy: Some(t.test_accuracy),
            latent_test_accuracy: t.latent_test_accuracy,
        });
    }

    if cfg.uses_lm() {
        let tr = encode(&train, spec, EncodingMode::OlsInteraction)?;
        let te = encode(&test, spec, EncodingMode::OlsInteraction)?;
        let fit = fit_ols(&tr)?;
        let train_acc = predictive_accuracy(&predict_lm(&fit, tr.matrix.view())?, &tr.labels)?;
        let test_pred = predict_lm(&fit, te.matrix.view())?;
        let test_acc = predictive_accuracy(&test_pred, &te.labels)?;
        let latent = match latent_labels(&test, EncodingMode::OlsInteraction) {
            Some(l) => Some(predictive_accuracy(&test_pred, &l)?),
            None => None,
        };
        for &method in &cfg.methods {
            if let Some(c) = method.correction() {
                out.push(MethodResult {
                    method,
                    estimates: classify_lm(&fit, c, cfg.alpha),
                    train_accuracy: Some(train_acc),
                    test_accuracy: Some(test_acc),
                    latent_test_accuracy: latent,
                });
            }
        }
    }
    // Report in the configured order.
    out.sort_by_key(|r| cfg.methods.iter().position(|m| *m == r.method));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    #[serde(flatten)]
    pub result: MethodResult,
    pub summaries: Vec<ConfusionSummary>,
}

/// Contents of `cell_metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub fingerprint: String,
    pub cell: CellId,
    pub seed: u64,
    pub profile_observations: usize,
    pub methods: Vec<MethodMetrics>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes the generated dataset and its truth into `dir`.
pub fn write_dataset(dir: &Path, spec: &DesignSpec, data: &SimulatedDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_tasks_csv(&data.tasks, spec.n_attributes(), create(&dir.join("tasks.csv"))?)?;
    write_file(&dir.join("truth.json"), data.coefficients.to_json()?.as_bytes())?;
    write_file(
        &dir.join("design.json"),
        serde_json::to_string_pretty(spec)?.as_bytes(),
    )
}

fn run_cell(cfg: &ExperimentConfig, fingerprint: &str, cell: CellId, dir: &Path) -> Result<CellMetrics> {
    let seed = cfg.cell_seed(cell.sp_j, cell.sp_z, cell.replication);
    let spec = cfg.design.with_cell(cell.sp_j, cell.sp_z, seed);
    let data = generate_dataset(&spec)?;
    write_dataset(dir, &spec, &data)?;
    let results = run_methods(cfg, &spec, &data.tasks, seed, Some(dir))?;
    let mut methods = Vec::new();
    for mut r in results {
        attach_truth(&mut r.estimates, &data.coefficients);
        write_estimates_csv(&r.estimates, create(&dir.join(format!("estimates_{}.csv", r.method)))?)?;
        let summaries = score_classifications(&r.estimates, &data.coefficients)?;
        methods.push(MethodMetrics { result: r, summaries });
    }
    let metrics = CellMetrics {
        fingerprint: fingerprint.to_string(),
        cell,
        seed,
        profile_observations: 2 * spec.n_tasks(),
        methods,
    };
    write_file(
        &dir.join("cell_metrics.json"),
        serde_json::to_string_pretty(&metrics)?.as_bytes(),
    )?;
    Ok(metrics)
}

fn load_completed(path: &Path, fingerprint: &str) -> Option<CellMetrics> {
    let text = fs::read_to_string(path).ok()?;
    let m: CellMetrics = serde_json::from_str(&text).ok()?;
    (m.fingerprint == fingerprint).then_some(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Computed,
    Resumed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub id: String,
    pub cell: CellId,
    pub status: CellStatus,
    pub error: Option<String>,
    pub dataset_path: PathBuf,
    pub checkpoint_paths: Vec<PathBuf>,
    pub estimates_paths: Vec<PathBuf>,
    pub metrics_path: PathBuf,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fingerprint: String,
    pub output_dir: PathBuf,
    pub methods: Vec<Method>,
    pub grid: Vec<(f64, f64)>,
    pub replications: usize,
    /// Choice ceiling implied by the measurement error.
    pub error_threshold: f64,
    pub metrics_path: PathBuf,
    pub cells: Vec<CellRecord>,
    pub profile_observations_per_cell: usize,
    pub profile_observations_total: usize,
    pub seconds: f64,
}

impl RunRecord {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.status == CellStatus::Failed).count()
    }

    pub fn load(output_dir: &Path) -> Result<Self> {
        let path = output_dir.join("run.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Runs every (configuration, replication) cell, skipping cells already
/// completed under the same fingerprint when `resume` is set, then writes
/// `metrics.csv` and `run.json`. Failed cells are recorded and left out of
/// the aggregates.
pub fn run_grid(cfg: &ExperimentConfig, resume: bool) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let out = cfg.output_dir.clone();
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;
    let fingerprint = cfg.fingerprint();
    write_file(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let cells = cfg.cells();
    let results: Vec<(CellId, CellStatus, Result<CellMetrics>, f64)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&cell| {
                let t = Instant::now();
                let dir = cells_dir.join(cell.name());
                if resume {
                    if let Some(m) = load_completed(&dir.join("cell_metrics.json"), &fingerprint) {
                        return (cell, CellStatus::Resumed, Ok(m), 0.0);
                    }
                }
                let r = run_cell(cfg, &fingerprint, cell, &dir);
                let status = if r.is_ok() { CellStatus::Computed } else { CellStatus::Failed };
                (cell, status, r, t.elapsed().as_secs_f64())
            })
            .collect()
    });

    let ledger_path = out.join("ledger.jsonl");
    let mut ledger = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&ledger_path)
        .map_err(|e| Error::io(&ledger_path, e))?;
    let mut records = Vec::new();
    let mut completed = Vec::new();
    for (cell, status, result, seconds) in results {
        let dir = cells_dir.join(cell.name());
        let record = CellRecord {
            id: cell.name(),
            cell,
            status,
            error: result.as_ref().err().map(|e| e.to_string()),
            dataset_path: dir.join("tasks.csv"),
            checkpoint_paths: ["difference", "per_profile"]
                .iter()
                .map(|t| dir.join(format!("model_{t}.json")))
                .filter(|p| p.exists())
                .collect(),
            estimates_paths: cfg
                .methods
                .iter()
                .map(|m| dir.join(format!("estimates_{m}.csv")))
                .collect(),
            metrics_path: dir.join("cell_metrics.json"),
            seconds,
        };
        let line = serde_json::to_string(&record)?;
        writeln!(ledger, "{line}").map_err(|e| Error::io(&ledger_path, e))?;
        records.push(record);
        if let Ok(m) = result {
            completed.push(m);
        }
    }

    let rows = aggregate_cells(cfg, &completed);
    let metrics_path = out.join("metrics.csv");
    write_metrics_csv(&rows, create(&metrics_path)?)?;

    let per_cell = 2 * cfg.design.n_tasks();
    let record = RunRecord {
        fingerprint,
        output_dir: out.clone(),
        methods: cfg.methods.clone(),
        grid: cfg.grid(),
        replications: cfg.replications,
        error_threshold: cfg.design.measurement_error_threshold,
        metrics_path,
        profile_observations_per_cell: per_cell,
        profile_observations_total: per_cell * cells.len(),
        cells: records,
        seconds: started.elapsed().as_secs_f64(),
    };
    write_file(&out.join("run.json"), serde_json::to_string_pretty(&record)?.as_bytes())?;
    Ok(record)
}

/// Prediction metrics are reported under the effect kind `"prediction"`.
pub const PREDICTION_KIND: &str = "prediction";

/// Replication aggregates per configuration, method, kind and metric, in
/// grid then configured-method order.
pub fn aggregate_cells(cfg: &ExperimentConfig, cells: &[CellMetrics]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for (sp_j, sp_z) in cfg.grid() {
        let here: Vec<&CellMetrics> = cells
            .iter()
            .filter(|c| c.cell.sp_j == sp_j && c.cell.sp_z == sp_z)
            .collect();
        for &method in &cfg.methods {
            let results: Vec<&MethodMetrics> = here
                .iter()
                .filter_map(|c| c.methods.iter().find(|m| m.result.method == method))
                .collect();
            let mut push = |kind: &str, metric: &str, values: Vec<f64>| {
                if let Some(a) = aggregate_values(&values) {
                    rows.push(MetricRow {
                        method: method.to_string(),
                        sp_j,
                        sp_z,
                        effect_kind: kind.to_string(),
                        metric: metric.to_string(),
                        mean: a.mean,
                        ci_low: a.ci_low,
                        ci_high: a.ci_high,
                    });
                }
            };
            for kind in crate::metrics::ScoreKind::ALL {
                for (i, name) in ["fpr", "fnr", "sign_accuracy"].iter().enumerate() {
                    let values = results
                        .iter()
                        .filter_map(|m| m.summaries.iter().find(|s| s.effect_kind == kind))
                        .filter_map(|s| s.rates()[i].1)
                        .collect();
                    push(kind.name(), name, values);
                }
            }
            let acc = |f: fn(&MethodResult) -> Option<f64>| results.iter().filter_map(|m| f(&m.result)).collect();
            push(PREDICTION_KIND, "train_accuracy", acc(|r| r.train_accuracy));
            push(PREDICTION_KIND, "test_accuracy", acc(|r| r.test_accuracy));
            push(PREDICTION_KIND, "latent_test_accuracy", acc(|r| r.latent_test_accuracy));
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            seed: 11,
            replications: 2,
            sparsity_main: vec![0.5],
            sparsity_interaction: vec![0.5, 0.8],
            methods: Method::ALL.to_vec(),
            heldout_fraction: 0.2,
            alpha: 0.05,
            output_dir: dir.to_path_buf(),
            jobs: 1,
            design: DesignSpec { n_respondents: 120, ..DesignSpec::desk() },
            bootstrap: BootstrapConfig { n_bootstrap: 20, ..Default::default() },
            mlp: MlpConfig { max_epochs: 3, ..Default::default() },
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("ols".parse::<Method>().is_err());
    }

    #[test]
    fn fingerprint_tracks_scientific_fields() {
        let a = tiny_config(Path::new("/tmp/a"));
        let b = ExperimentConfig { output_dir: "/tmp/b".into(), jobs: 4, ..a.clone() };
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = ExperimentConfig { alpha: 0.1, ..a.clone() };
        assert_ne!(a.fingerprint(), c.fingerprint());
        let mut d = a.clone();
        d.design.n_respondents += 1;
        assert_ne!(a.fingerprint(), d.fingerprint());
    }

    #[test]
    fn cell_seeds_are_pure() {
        let a = tiny_config(Path::new("/tmp/a"));
        assert_eq!(a.cell_seed(0.5, 0.8, 1), a.cell_seed(0.5, 0.8, 1));
        assert_ne!(a.cell_seed(0.5, 0.8, 1), a.cell_seed(0.5, 0.8, 0));
        assert_ne!(a.cell_seed(0.5, 0.8, 1), a.cell_seed(0.5, 0.5, 1));
        assert_eq!(a.cells().len(), 4);
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let a = tiny_config(Path::new("/tmp/a"));
        let text = a.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), a);
        let bad = text.replace("replications = 2", "replications = 0");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::InvalidConfig(_))));
        assert!(matches!(
            ExperimentConfig::from_toml("seed = 1\nbogus = 2"),
            Err(Error::InvalidConfig(_))
        ));
        let mut empty = a.clone();
        empty.methods.clear();
        assert!(empty.validate().is_err());
    }

    #[test]
    fn reference_grid_size() {
        let cfg = ExperimentConfig {
            replications: 15,
            sparsity_main: vec![0.5, 0.65, 0.8, 0.95],
            sparsity_interaction: vec![0.5, 0.65, 0.8, 0.95],
            design: DesignSpec::reference(),
            ..tiny_config(Path::new("/tmp/a"))
        };
        assert_eq!(cfg.cells().len(), 150);
        assert_eq!(2 * cfg.design.n_tasks() * cfg.cells().len(), 4_800_000);
    }

    #[test]
    fn grid_runs_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let first = run_grid(&cfg, false).unwrap();
        assert_eq!(first.failed_cells(), 0);
        assert!(first.cells.iter().all(|c| c.status == CellStatus::Computed));
        let metrics = fs::read(&first.metrics_path).unwrap();
        let second = run_grid(&cfg, true).unwrap();
        assert!(second.cells.iter().all(|c| c.status == CellStatus::Resumed));
        assert_eq!(fs::read(&second.metrics_path).unwrap(), metrics);

        // Drop one cell: only it is recomputed, with identical values.
        let victim = &first.cells[1];
        let before = fs::read(&victim.metrics_path).unwrap();
        fs::remove_dir_all(victim.metrics_path.parent().unwrap()).unwrap();
        let third = run_grid(&cfg, true).unwrap();
        let statuses: Vec<_> = third.cells.iter().map(|c| c.status).collect();
        assert_eq!(
            statuses,
            vec![CellStatus::Resumed, CellStatus::Computed, CellStatus::Resumed, CellStatus::Resumed]
        );
        assert_eq!(fs::read(&victim.metrics_path).unwrap(), before);
        assert_eq!(fs::read(&third.metrics_path).unwrap(), metrics);
        let ledger = fs::read_to_string(dir.path().join("ledger.jsonl")).unwrap();
        assert_eq!(ledger.lines().count(), 12);
    }

    #[test]
    fn single_replication_lm_only_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            replications: 1,
            sparsity_interaction: vec![0.5],
            methods: vec![Method::Lm],
            ..tiny_config(dir.path())
        };
        let rec = run_grid(&cfg, false).unwrap();
        let rows = crate::metrics::read_metrics_csv(fs::File::open(&rec.metrics_path).unwrap()).unwrap();
        for kind in ["main", "interaction", "all"] {
            let fpr: Vec<_> = rows.iter().filter(|r| r.effect_kind == kind && r.metric == "fpr").collect();
            assert_eq!(fpr.len(), 1);
            assert_eq!(fpr[0].ci_low, fpr[0].ci_high);
        }
    }

    #[test]
    fn failed_cells_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        // Too few respondents to train: every cell fails but the grid finishes.
        let mut cfg = tiny_config(dir.path());
        cfg.design.n_respondents = 3;
        cfg.methods = vec![Method::Dipce];
        let rec = run_grid(&cfg, false).unwrap();
        assert_eq!(rec.failed_cells(), rec.cells.len());
        assert!(rec.cells[0].error.is_some());
    }
}
