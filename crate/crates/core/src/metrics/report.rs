use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MapAtR,
    #[serde(rename = "prec_at_1")]
    PrecAt1,
    RPrec,
    Ami,
    Nmi,
    Map,
    Mrr,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::MapAtR,
        Metric::PrecAt1,
        Metric::RPrec,
        Metric::Ami,
        Metric::Nmi,
        Metric::Map,
        Metric::Mrr,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::MapAtR => "map_at_r",
            Metric::PrecAt1 => "prec_at_1",
            Metric::RPrec => "r_prec",
            Metric::Ami => "ami",
            Metric::Nmi => "nmi",
            Metric::Map => "map",
            Metric::Mrr => "mrr",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Metric::MapAtR => "MAP@R",
            Metric::PrecAt1 => "Prec@1",
            Metric::RPrec => "R-Prec",
            Metric::Ami => "AMI",
            Metric::Nmi => "NMI",
            Metric::Map => "MAP",
            Metric::Mrr => "MRR",
        }
    }

    /// Whether the metric needs a clustering step.
    pub fn is_clustering(self) -> bool {
        matches!(self, Metric::Ami | Metric::Nmi)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', '@'], "_");
        Metric::ALL
            .into_iter()
            .find(|m| {
                m.key() == norm
                    || m.display_name()
                        .to_ascii_lowercase()
                        .replace(['-', '@'], "_")
                        == norm
            })
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

/// Mean, sample standard deviation, and raw values of one metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<f64>,
}

impl MetricSummary {
    pub fn from_runs(runs: Vec<f64>) -> Self {
        let n = runs.len() as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let std = if runs.len() > 1 {
            (runs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std, runs }
    }
}

/// Aggregated results of one experiment.
///
/// Serializes as a JSON object mapping each metric key to its summary,
/// alongside the configuration it was produced from and a fingerprint of
/// configuration and inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    #[serde(flatten)]
    pub metrics: BTreeMap<Metric, MetricSummary>,
    pub config: serde_json::Value,
    pub fingerprint: String,
    /// Queries skipped because no other item shares their class.
    pub excluded_queries: usize,
}

impl RetrievalReport {
    pub fn get(&self, metric: Metric) -> Option<&MetricSummary> {
        self.metrics.get(&metric)
    }
}

/// Fixed-width table, one row per metric and one column per report, in percent.
pub fn render_table(columns: &[(String, &RetrievalReport)]) -> String {
    let metrics: Vec<Metric> = Metric::ALL
        .into_iter()
        .filter(|m| columns.iter().any(|(_, r)| r.metrics.contains_key(m)))
        .collect();
    let cell = |r: &RetrievalReport, m: Metric| match r.metrics.get(&m) {
        None => "---".to_string(),
        Some(s) if s.runs.len() <= 1 => format!("{:.1}", 100.0 * s.mean),
        Some(s) => format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * s.std),
    };
    let width = |i: usize| {
        let (name, report) = &columns[i];
        metrics
            .iter()
            .map(|&m| cell(report, m).chars().count())
            .chain([name.chars().count()])
            .max()
            .unwrap_or(0)
    };
    let label_width = metrics
        .iter()
        .map(|m| m.display_name().len())
        .max()
        .unwrap_or(0)
        .max(6);

    let mut out = format!("{:<label_width$}", "");
    for (i, (name, _)) in columns.iter().enumerate() {
        out.push_str(&format!("  {:>w$}", name, w = width(i)));
    }
    out.push('\n');
    for &m in &metrics {
        out.push_str(&format!("{:<label_width$}", m.display_name()));
        for (i, (_, report)) in columns.iter().enumerate() {
            out.push_str(&format!("  {:>w$}", cell(report, m), w = width(i)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(values: &[(Metric, Vec<f64>)]) -> RetrievalReport {
        RetrievalReport {
            metrics: values
                .iter()
                .map(|(m, runs)| (*m, MetricSummary::from_runs(runs.clone())))
                .collect(),
            config: serde_json::json!({"method": "indirect"}),
            fingerprint: "abc".into(),
            excluded_queries: 0,
        }
    }

    #[test]
    fn summary_statistics() {
        let s = MetricSummary::from_runs(vec![0.2, 0.4]);
        assert!((s.mean - 0.3).abs() < 1e-15);
        assert!((s.std - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(MetricSummary::from_runs(vec![0.5]).std, 0.0);
    }

    #[test]
    fn json_shape_and_roundtrip() {
        let r = report(&[
            (Metric::MapAtR, vec![0.374, 0.374]),
            (Metric::PrecAt1, vec![0.844]),
        ]);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["map_at_r"]["runs"], serde_json::json!([0.374, 0.374]));
        assert_eq!(json["prec_at_1"]["mean"], serde_json::json!(0.844));
        assert_eq!(json["fingerprint"], "abc");
        let back: RetrievalReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn table_layout() {
        let a = report(&[
            (Metric::MapAtR, vec![0.374, 0.374]),
            (Metric::PrecAt1, vec![0.843, 0.845]),
        ]);
        let b = report(&[(Metric::MapAtR, vec![0.235])]);
        let table = render_table(&[("learned".into(), &a), ("CLIP".into(), &b)]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("MAP@R"));
        assert!(lines[1].contains("37.4 ± 0.0"));
        assert!(lines[1].ends_with("23.5"));
        assert!(lines[2].contains("84.4 ± 0.1"));
        assert!(lines[2].ends_with("---"));
        let widths: Vec<usize> = lines.iter().map(|l| l.chars().count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{table}");
    }

    #[test]
    fn metric_names_parse() {
        assert_eq!("MAP@R".parse::<Metric>().unwrap(), Metric::MapAtR);
        assert_eq!("prec_at_1".parse::<Metric>().unwrap(), Metric::PrecAt1);
        assert_eq!("r-prec".parse::<Metric>().unwrap(), Metric::RPrec);
        assert!("recall".parse::<Metric>().is_err());
    }
}
