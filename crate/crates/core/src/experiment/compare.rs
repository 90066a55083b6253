use serde::{Deserialize, Serialize};

use super::formats::fmt_f64;
use super::manifest::ExperimentResult;
use crate::error::{Error, Result};

/// Default significance level for [`CompareReport::significant`].
pub const ALPHA: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// b − a
    pub delta: f64,
    /// √(se_a² + se_b²), when both runs report `<metric>_se`.
    pub std_error: Option<f64>,
    pub z: Option<f64>,
    /// Two-sided normal p-value of z.
    pub p_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub kind: String,
    pub run_a: String,
    pub run_b: String,
    pub rows: Vec<CompareRow>,
}

/// Two-sided p-value of a standard normal deviate.
pub fn normal_two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Tabulates b − a for every summary metric both runs share. Metrics with a
/// `<metric>_se` companion in both runs also get a z-test.
pub fn compare_runs(a: &ExperimentResult, b: &ExperimentResult) -> Result<CompareReport> {
    if a.kind != b.kind {
        return Err(Error::KindMismatch {
            a: a.kind.clone(),
            b: b.kind.clone(),
        });
    }
    let rows = a
        .summary
        .iter()
        .filter(|(k, _)| !k.ends_with("_se"))
        .filter_map(|(k, &va)| {
            let vb = *b.summary.get(k)?;
            let delta = vb - va;
            let se_key = format!("{k}_se");
            let std_error = match (a.summary.get(&se_key), b.summary.get(&se_key)) {
                (Some(sa), Some(sb)) => Some((sa * sa + sb * sb).sqrt()),
                _ => None,
            };
            let z = std_error.map(|se| {
                if delta == 0.0 {
                    0.0
                } else if se > 0.0 {
                    delta / se
                } else {
                    delta.signum() * f64::INFINITY
                }
            });
            Some(CompareRow {
                metric: k.clone(),
                a: va,
                b: vb,
                delta,
                std_error,
                z,
                p_value: z.map(normal_two_sided_p),
            })
        })
        .collect();
    Ok(CompareReport {
        kind: a.kind.clone(),
        run_a: a.run_id.clone(),
        run_b: b.run_id.clone(),
        rows,
    })
}

impl CompareReport {
    pub fn row(&self, metric: &str) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// Whether the difference in `metric` is significant at level `alpha`.
    /// `None` if the metric is absent or has no standard error.
    pub fn significant(&self, metric: &str, alpha: f64) -> Option<bool> {
        self.row(metric)?.p_value.map(|p| p < alpha)
    }

    /// `metric,a,b,delta,std_error,z,p_value`; missing values are empty.
    pub fn to_csv(&self) -> Vec<u8> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut text = String::from("metric,a,b,delta,std_error,z,p_value\n");
        for r in &self.rows {
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.metric,
                fmt_f64(r.a),
                fmt_f64(r.b),
                fmt_f64(r.delta),
                opt(r.std_error),
                opt(r.z),
                opt(r.p_value)
            ));
        }
        text.into_bytes()
    }
}
