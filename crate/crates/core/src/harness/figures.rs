use std::fs;
use std::path::PathBuf;

use serde::Serialize;

use super::{Method, RunRecord, PREDICTION_KIND};
use crate::metrics::{read_metrics_csv, MetricRow};
use crate::{Error, Result};

#[derive(Serialize)]
struct Point {
    method: String,
    #[serde(rename = "Sp_j")]
    sp_j: f64,
    #[serde(rename = "Sp_z")]
    sp_z: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    effect_kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    encoding: Option<&'static str>,
    metric: String,
    mean: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
}

#[derive(Serialize)]
struct Figure {
    figure: &'static str,
    description: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    ceiling: Option<f64>,
    cells: Vec<Point>,
}

struct Lookup(Vec<MetricRow>);

impl Lookup {
    fn find(&self, method: Method, (sp_j, sp_z): (f64, f64), kind: &str, metric: &str) -> Option<&MetricRow> {
        self.0.iter().find(|r| {
            r.method == method.name() && r.sp_j == sp_j && r.sp_z == sp_z && r.effect_kind == kind && r.metric == metric
        })
    }

    fn point(
        &self,
        method: Method,
        cfg: (f64, f64),
        kind: &str,
        metric: &str,
        effect_kind: Option<String>,
        encoding: Option<&'static str>,
    ) -> Point {
        let row = self.find(method, cfg, kind, metric);
        Point {
            method: method.to_string(),
            sp_j: cfg.0,
            sp_z: cfg.1,
            effect_kind,
            encoding,
            metric: metric.to_string(),
            mean: row.map(|r| r.mean),
            ci_low: row.map(|r| r.ci_low),
            ci_high: row.map(|r| r.ci_high),
        }
    }
}

/// Writes `fig1.json` (FPR/FNR by effect kind, method and configuration),
/// `fig3.json` (test accuracy by method and configuration) and `fig4.json`
/// (train/test accuracy of the difference and per-profile encodings with
/// the choice-noise ceiling) next to the run's metrics.
pub fn emit_figures(record: &RunRecord) -> Result<Vec<PathBuf>> {
    if record.methods.is_empty() || record.grid.is_empty() {
        return Err(Error::MissingAggregate("the run has no methods or configurations".into()));
    }
    let file = fs::File::open(&record.metrics_path).map_err(|e| Error::io(&record.metrics_path, e))?;
    let rows = Lookup(read_metrics_csv(file)?);
    for &m in &record.methods {
        for &g in &record.grid {
            if !rows.0.iter().any(|r| r.method == m.name() && (r.sp_j, r.sp_z) == g) {
                return Err(Error::MissingAggregate(format!(
                    "no aggregates for {m} at Sp_j = {}, Sp_z = {}",
                    g.0, g.1
                )));
            }
        }
    }

    let mut fig1 = Vec::new();
    let mut fig3 = Vec::new();
    let mut fig4 = Vec::new();
    for &g in &record.grid {
        for &m in &record.methods {
            for kind in ["main", "interaction"] {
                for metric in ["fpr", "fnr"] {
                    fig1.push(rows.point(m, g, kind, metric, Some(kind.into()), None));
                }
            }
            fig3.push(rows.point(m, g, PREDICTION_KIND, "test_accuracy", None, None));
            let encoding = match m {
                Method::Dipce => Some("difference"),
                Method::DipcePerProfile => Some("per-profile"),
                _ => None,
            };
            if let Some(enc) = encoding {
                for metric in ["train_accuracy", "test_accuracy"] {
                    fig4.push(rows.point(m, g, PREDICTION_KIND, metric, None, Some(enc)));
                }
            }
        }
    }
    let figures = [
        ("fig1", Figure {
            figure: "fig1",
            description: "false positive and false negative rates by effect kind",
            ceiling: None,
            cells: fig1,
        }),
        ("fig3", Figure {
            figure: "fig3",
            description: "out-of-sample accuracy on observed choices",
            ceiling: None,
            cells: fig3,
        }),
        ("fig4", Figure {
            figure: "fig4",
            description: "train and test accuracy by encoding; ceiling is the share of unflipped choices",
            ceiling: Some(record.error_threshold),
            cells: fig4,
        }),
    ];
    let mut paths = Vec::new();
    for (name, fig) in figures {
        let path = record.output_dir.join(format!("{name}.json"));
        fs::write(&path, serde_json::to_string_pretty(&fig)?).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::super::{run_grid, ExperimentConfig};
    use super::*;
    use crate::dipce::BootstrapConfig;
    use crate::mlp::MlpConfig;
    use crate::sim::DesignSpec;

    #[test]
    fn figure_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            seed: 2,
            replications: 2,
            sparsity_main: vec![0.5],
            sparsity_interaction: vec![0.5, 0.8],
            methods: vec![Method::Dipce, Method::DipcePerProfile, Method::Lm],
            heldout_fraction: 0.2,
            alpha: 0.05,
            output_dir: dir.path().into(),
            jobs: 2,
            design: DesignSpec { n_respondents: 120, ..DesignSpec::desk() },
            bootstrap: BootstrapConfig { n_bootstrap: 10, ..Default::default() },
            mlp: MlpConfig { max_epochs: 2, ..Default::default() },
        };
        let rec = run_grid(&cfg, false).unwrap();
        let paths = emit_figures(&rec).unwrap();
        let load = |i: usize| -> serde_json::Value {
            serde_json::from_str(&fs::read_to_string(&paths[i]).unwrap()).unwrap()
        };
        assert_eq!(load(0)["cells"].as_array().unwrap().len(), 3 * 2 * 2 * 2);
        assert_eq!(load(1)["cells"].as_array().unwrap().len(), 3 * 2);
        let fig4 = load(2);
        assert_eq!(fig4["ceiling"], 0.85);
        assert_eq!(fig4["cells"].as_array().unwrap().len(), 2 * 2 * 2);

        let empty = RunRecord { methods: vec![], ..rec };
        assert!(matches!(emit_figures(&empty), Err(Error::MissingAggregate(_))));
    }
}
