//! Linear-probability OLS baseline with multiple-testing corrections.

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::effects::{Classification, EffectEstimate, EffectSlot};
use crate::encoding::{Column, EncodedDataset, EncodingMode, FeatureSchema};
use crate::{Error, Result};

/// Columns whose QR diagonal falls below this fraction of the largest are
/// treated as linearly dependent.
const RANK_TOLERANCE: f64 = 1e-10;

/// Coefficient vectors start with the intercept, followed by the schema's
/// columns in order.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub residual_df: usize,
    pub schema: FeatureSchema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Correction {
    None,
    Bonferroni,
    BenjaminiHochberg,
}

/// Least squares of the 0/1 choice labels on the interaction design.
pub fn fit_ols(data: &EncodedDataset) -> Result<OlsFit> {
    fit_ols_response(data, &data.labels_f64())
}

/// Least squares of an arbitrary response on the interaction design.
pub fn fit_ols_response(data: &EncodedDataset, response: &[f64]) -> Result<OlsFit> {
    if data.schema.mode != EncodingMode::OlsInteraction {
        return Err(Error::SchemaMismatch("OLS needs the interaction encoding".into()));
    }
    let (n, w) = data.matrix.dim();
    if response.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: response.len(),
        });
    }
    let p = w + 1;
    if n <= p {
        return Err(Error::DegenerateData(format!("{n} rows for {p} coefficients")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { data.matrix[[i, j - 1]] });
    let qr = x.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let dependent: Vec<String> = (0..p)
        .filter(|&j| r[(j, j)].abs() <= RANK_TOLERANCE * max_diag)
        .map(|j| if j == 0 { "intercept".into() } else { data.schema.columns[j - 1].header() })
        .collect();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }
    let solve = |rhs: &[f64]| {
        let mut qty = DVector::from_column_slice(rhs);
        qr.q_tr_mul(&mut qty);
        r.solve_upper_triangular(&qty.rows(0, p).into_owned())
            .expect("full rank checked")
    };
    let residuals = |beta: &DVector<f64>| -> Vec<f64> {
        data.matrix
            .rows()
            .into_iter()
            .zip(response)
            .map(|(row, y)| y - beta[0] - row.iter().zip(beta.iter().skip(1)).map(|(v, b)| v * b).sum::<f64>())
            .collect()
    };
    // One round of iterative refinement removes most of the QR round-off.
    let mut beta = solve(response);
    beta += solve(&residuals(&beta));
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .expect("full rank checked");

    let rss: f64 = residuals(&beta).iter().map(|e| e * e).sum();
    let df = n - p;
    let sigma = (rss / df as f64).sqrt();
    let standard_errors: Vec<f64> = (0..p).map(|j| sigma * r_inv.row(j).norm()).collect();
    let t_dist = StudentsT::new(0.0, 1.0, df as f64).expect("positive df");
    let p_values = beta
        .iter()
        .zip(&standard_errors)
        .map(|(&b, &se)| {
            if se > 0.0 {
                (2.0 * t_dist.sf((b / se).abs())).clamp(0.0, 1.0)
            } else if b != 0.0 {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        standard_errors,
        p_values,
        residual_df: df,
        schema: data.schema.clone(),
    })
}

/// Reject iff `p <= alpha / m`.
pub fn bonferroni(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let cut = alpha / p_values.len() as f64;
    p_values.iter().map(|&p| p <= cut).collect()
}

/// Number of rejections of the step-up rule: the largest `k` with
/// `p_(k) <= k / m * alpha`.
fn bh_count(p_values: &[f64], alpha: f64) -> usize {
    let mut sorted = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .rev()
        .find(|&(i, &p)| p <= (i + 1) as f64 / m * alpha)
        .map_or(0, |(i, _)| i + 1)
}

/// Benjamini-Hochberg step-up: rejects the `k` smallest p-values.
pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let k = bh_count(p_values, alpha);
    if k == 0 {
        return vec![false; p_values.len()];
    }
    let cut = k as f64 / p_values.len() as f64 * alpha;
    p_values.iter().map(|&p| p <= cut).collect()
}

fn effect_slot(column: &Column) -> Option<EffectSlot> {
    match *column {
        Column::Main { attribute, level } => Some(EffectSlot::main(attribute, level)),
        Column::Interaction {
            attribute,
            level,
            context,
        } => Some(EffectSlot::interaction(attribute, level, context)),
        Column::Context { .. } => None,
    }
}

/// Classify every attribute main and interaction coefficient. The tested
/// family excludes the intercept and context mains. Wald bounds use the
/// per-test level implied by the correction, so a rejected effect's interval
/// excludes zero.
pub fn classify_lm(fit: &OlsFit, correction: Correction, alpha: f64) -> Vec<EffectEstimate> {
    let tested: Vec<(usize, EffectSlot)> = fit
        .schema
        .columns
        .iter()
        .enumerate()
        .filter_map(|(i, c)| effect_slot(c).map(|s| (i + 1, s)))
        .collect();
    if tested.is_empty() {
        return Vec::new();
    }
    let p: Vec<f64> = tested.iter().map(|&(j, _)| fit.p_values[j]).collect();
    let m = p.len() as f64;
    let (reject, level) = match correction {
        Correction::None => (p.iter().map(|&v| v <= alpha).collect(), alpha),
        Correction::Bonferroni => (bonferroni(&p, alpha), alpha / m),
        Correction::BenjaminiHochberg => {
            let k = bh_count(&p, alpha);
            (benjamini_hochberg(&p, alpha), alpha * k.max(1) as f64 / m)
        }
    };
    let t_crit = StudentsT::new(0.0, 1.0, fit.residual_df as f64)
        .expect("positive df")
        .inverse_cdf(1.0 - level / 2.0);
    tested
        .iter()
        .zip(reject)
        .map(|(&(j, slot), rejected): (&(usize, EffectSlot), bool)| {
            let b = fit.coefficients[j];
            let half = t_crit * fit.standard_errors[j];
            EffectEstimate {
                kind: slot.kind,
                attribute: slot.attribute,
                level: slot.level,
                context_level: slot.context_level,
                point: b,
                ci_low: b - half,
                ci_high: b + half,
                classification: if rejected { Classification::of_value(b) } else { Classification::Null },
                truth_class: None,
            }
        })
        .collect()
}

/// Fitted values (intercept included) for rows in the fit's encoding.
pub fn fitted_values(fit: &OlsFit, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
    let w = fit.coefficients.len() - 1;
    if rows.ncols() != w {
        return Err(Error::ShapeMismatch {
            expected: w,
            got: rows.ncols(),
        });
    }
    Ok(rows
        .rows()
        .into_iter()
        .map(|r| fit.coefficients[0] + r.iter().zip(&fit.coefficients[1..]).map(|(x, b)| x * b).sum::<f64>())
        .collect())
}

/// Class 1 iff the fitted value exceeds 0.5.
pub fn predict_lm(fit: &OlsFit, rows: ArrayView2<f64>) -> Result<Vec<bool>> {
    Ok(fitted_values(fit, rows)?.into_iter().map(|v| v > 0.5).collect())
}
