use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{metrics, undefined_marker, ConfusionCounts, EvalError, MetricSet, RankingResult, UNDEFINED};
use crate::calibration::BuildPrediction;
use crate::dataset::{BuildStatus, GroundTruth, Outcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestPrediction {
    pub instance_id: String,
    pub workflow: String,
    pub test_id: String,
    pub prediction: Outcome,
}

/// Everything one approach (critic variant or baseline) predicted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VariantPredictions {
    pub name: String,
    /// Per-test predictions, for approaches that make them.
    pub micro: Option<Vec<TestPrediction>>,
    pub builds: Vec<BuildPrediction>,
    /// Verdicts the threshold policy forced to fail.
    pub forced: usize,
}

pub struct ReportInputs<'a> {
    /// Ground truth keyed by (instance_id, workflow).
    pub labels: &'a BTreeMap<(String, String), GroundTruth>,
    pub variants: &'a [VariantPredictions],
    pub rankings: &'a [RankingResult],
    /// Treat fail/failure as the positive class.
    pub flip_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub n: u64,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: MetricSet,
}

impl Scored {
    fn from_counts(counts: ConfusionCounts) -> Option<Self> {
        (counts.total() > 0).then(|| Scored {
            n: counts.total(),
            counts,
            metrics: metrics(&counts),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub micro: Option<Scored>,
    #[serde(rename = "macro")]
    pub macro_: Option<Scored>,
    pub forced: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingSummary {
    pub instances: usize,
    pub defined_rho: usize,
    #[serde(with = "undefined_marker")]
    pub mean_rho: Option<f64>,
    #[serde(with = "undefined_marker")]
    pub perfect_alignment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildRecord {
    pub variant: String,
    #[serde(flatten)]
    pub prediction: BuildPrediction,
    pub true_status: BuildStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub variants: Vec<VariantReport>,
    pub builds: Vec<BuildRecord>,
    pub rankings: Vec<RankingResult>,
    pub ranking_summary: RankingSummary,
    pub pass_rate_histogram: Vec<HistogramBin>,
    pub rho_histogram: Vec<HistogramBin>,
}

fn coverage(instance_id: &str, message: String) -> EvalError {
    EvalError::Coverage {
        instance_id: instance_id.to_string(),
        message,
    }
}

fn bin_label(lo: f64, hi: f64) -> String {
    format!("{lo:.1}..{hi:.1}")
}

/// Equal-width bins over `[lo, hi]`; the last bin is closed.
fn histogram(values: impl Iterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Vec<HistogramBin> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for v in values {
        let idx = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            bin: bin_label(lo + i as f64 * width, lo + (i + 1) as f64 * width),
            count,
        })
        .collect()
}

/// Scores every approach against the labels and summarizes rankings.
/// Predictions for unlabelled instances, workflows or tests are a
/// coverage error.
pub fn build_report(inputs: &ReportInputs<'_>) -> Result<EvaluationReport, EvalError> {
    let positive = |pass: bool| pass != inputs.flip_positive;
    let mut variants = Vec::new();
    let mut builds = Vec::new();
    let mut ordered: Vec<&VariantPredictions> = inputs.variants.iter().collect();
    ordered.sort_by(|a, b| a.name.cmp(&b.name));

    for vp in ordered {
        let micro = match &vp.micro {
            None => None,
            Some(preds) => {
                let mut counts = ConfusionCounts::default();
                for p in preds {
                    let truth = inputs
                        .labels
                        .get(&(p.instance_id.clone(), p.workflow.clone()))
                        .ok_or_else(|| coverage(&p.instance_id, format!("no labels for workflow `{}`", p.workflow)))?;
                    let actual = truth.tests.get(&p.test_id).ok_or_else(|| {
                        coverage(
                            &p.instance_id,
                            format!("no label for test `{}` ({})", p.test_id, p.workflow),
                        )
                    })?;
                    counts.add(positive(p.prediction.is_pass()), positive(actual.is_pass()));
                }
                Scored::from_counts(counts)
            }
        };
        let mut counts = ConfusionCounts::default();
        let mut sorted: Vec<&BuildPrediction> = vp.builds.iter().collect();
        sorted.sort_by(|a, b| (&a.instance_id, &a.workflow).cmp(&(&b.instance_id, &b.workflow)));
        for b in sorted {
            let truth = inputs
                .labels
                .get(&(b.instance_id.clone(), b.workflow.clone()))
                .ok_or_else(|| coverage(&b.instance_id, format!("no labels for workflow `{}`", b.workflow)))?;
            counts.add(
                positive(b.status.is_success()),
                positive(truth.build_status.is_success()),
            );
            builds.push(BuildRecord {
                variant: vp.name.clone(),
                prediction: b.clone(),
                true_status: truth.build_status,
            });
        }
        variants.push(VariantReport {
            name: vp.name.clone(),
            micro,
            macro_: Scored::from_counts(counts),
            forced: vp.forced,
        });
    }

    let mut rankings = inputs.rankings.to_vec();
    rankings.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    let rhos: Vec<f64> = rankings.iter().filter_map(|r| r.rho).collect();
    let aligned = rankings.iter().filter(|r| r.perfectly_aligned()).count();
    let ranking_summary = RankingSummary {
        instances: rankings.len(),
        defined_rho: rhos.len(),
        mean_rho: (!rhos.is_empty()).then(|| rhos.iter().sum::<f64>() / rhos.len() as f64),
        perfect_alignment: (!rankings.is_empty()).then(|| aligned as f64 / rankings.len() as f64),
    };
    let pass_rate_histogram = histogram(
        rankings.iter().flat_map(|r| r.predicted_rates.values().copied()),
        0.0,
        1.0,
        10,
    );
    let mut rho_histogram = histogram(rhos.iter().copied(), -1.0, 1.0, 20);
    rho_histogram.push(HistogramBin {
        bin: UNDEFINED.to_string(),
        count: (rankings.len() - rhos.len()) as u64,
    });

    Ok(EvaluationReport {
        variants,
        builds,
        rankings,
        ranking_summary,
        pass_rate_histogram,
        rho_histogram,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{:.1}", x * 100.0))
}

impl EvaluationReport {
    /// One record per line: metric rows, then builds, then rankings.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |v: serde_json::Value| {
            out.push_str(&v.to_string());
            out.push('\n');
        };
        for v in &self.variants {
            for (level, scored) in [("micro", &v.micro), ("macro", &v.macro_)] {
                if let Some(s) = scored {
                    let mut rec = json!({"record": "metrics", "variant": v.name, "level": level, "forced": v.forced});
                    let body = serde_json::to_value(s).expect("metrics serialize");
                    rec.as_object_mut().unwrap().extend(body.as_object().unwrap().clone());
                    push(rec);
                }
            }
        }
        for b in &self.builds {
            let mut rec = json!({"record": "build"});
            rec.as_object_mut().unwrap().extend(
                serde_json::to_value(b)
                    .expect("build serializes")
                    .as_object()
                    .unwrap()
                    .clone(),
            );
            push(rec);
        }
        for r in &self.rankings {
            let mut rec = json!({"record": "ranking"});
            rec.as_object_mut().unwrap().extend(
                serde_json::to_value(r)
                    .expect("ranking serializes")
                    .as_object()
                    .unwrap()
                    .clone(),
            );
            push(rec);
        }
        let mut rec = json!({"record": "ranking_summary"});
        rec.as_object_mut().unwrap().extend(
            serde_json::to_value(&self.ranking_summary)
                .expect("summary serializes")
                .as_object()
                .unwrap()
                .clone(),
        );
        push(rec);
        out
    }

    /// Plain-text metric table (percentages) plus the ranking summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let w = self.variants.iter().map(|v| v.name.len()).max().unwrap_or(0).max(8);
        let _ = writeln!(
            out,
            "{:<w$} {:<6} {:>5} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            "Approach", "Level", "N", "Acc", "Prec", "Rec", "F1", "Spec", "Forced"
        );
        for v in &self.variants {
            for (level, scored) in [("micro", &v.micro), ("macro", &v.macro_)] {
                if let Some(s) = scored {
                    let m = &s.metrics;
                    let _ = writeln!(
                        out,
                        "{:<w$} {:<6} {:>5} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
                        v.name,
                        level,
                        s.n,
                        pct(m.accuracy),
                        pct(m.precision),
                        pct(m.recall),
                        pct(m.f1),
                        pct(m.specificity),
                        v.forced
                    );
                }
            }
        }
        let s = &self.ranking_summary;
        let _ = writeln!(out);
        let _ = writeln!(out, "Ranked instances:       {}", s.instances);
        let _ = writeln!(out, "Defined rho:            {}", s.defined_rho);
        let _ = writeln!(
            out,
            "Mean rho:               {}",
            s.mean_rho.map_or_else(|| UNDEFINED.to_string(), |r| format!("{r:.3}"))
        );
        let _ = writeln!(out, "Perfect rank alignment: {}", pct(s.perfect_alignment));
        out
    }

    pub fn pass_rate_csv(&self) -> String {
        csv(&self.pass_rate_histogram)
    }

    pub fn rho_csv(&self) -> String {
        csv(&self.rho_histogram)
    }
}

fn csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin,count\n");
    for b in bins {
        let _ = writeln!(out, "{},{}", b.bin, b.count);
    }
    out
}
