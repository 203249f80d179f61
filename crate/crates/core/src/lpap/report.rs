//! Evaluation report: per-plan scores, rater-pair agreement, subject
//! summaries and subject comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{cohen_kappa, percent_agreement, spearman_correlation, wilcoxon_signed_rank, Wilcoxon};
use super::{average_raters, subject_of, BandTable, EvaluationRecord, LpapError, QualityBand, RaterScore, Rubric};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const PAIRING_CONVENTION: &str = "plans paired by lesson index (sorted plan_id) within each subject";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub plan_id: String,
    pub rater_a: String,
    pub rater_b: String,
    pub percent_agreement: f64,
    /// `None` when undefined for this pair.
    pub spearman: Option<f64>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject: String,
    pub plans: usize,
    pub mean_percentage: f64,
    pub min_percentage: f64,
    pub max_percentage: f64,
    pub mean_quality_only: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectComparison {
    pub subject_a: String,
    pub subject_b: String,
    pub pairs: usize,
    pub test: Wilcoxon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub records: Vec<EvaluationRecord>,
    pub raters_per_plan: BTreeMap<String, usize>,
    pub agreements: Vec<PairAgreement>,
    pub subjects: Vec<SubjectSummary>,
    pub comparisons: Vec<SubjectComparison>,
}

/// Score every plan, compute agreement for every rater pair of every plan,
/// summarize by subject and compare subjects pairwise.
pub fn evaluation_report(
    ratings: &[RaterScore],
    rubric: &Rubric,
    bands: &BandTable,
) -> Result<EvaluationReport, LpapError> {
    let mut by_plan: BTreeMap<&str, Vec<RaterScore>> = BTreeMap::new();
    for r in ratings {
        by_plan.entry(r.plan_id.as_str()).or_default().push(r.clone());
    }
    if by_plan.is_empty() {
        return Err(LpapError::NoRaters);
    }
    let mut records = Vec::new();
    let mut agreements = Vec::new();
    let mut raters_per_plan = BTreeMap::new();
    for (plan_id, mut scores) in by_plan {
        scores.sort_by(|a, b| a.rater_id.cmp(&b.rater_id));
        records.push(average_raters(&scores, rubric, bands)?);
        raters_per_plan.insert(plan_id.to_string(), scores.len());
        for i in 0..scores.len() {
            for j in i + 1..scores.len() {
                let (a, b) = (&scores[i], &scores[j]);
                agreements.push(PairAgreement {
                    plan_id: plan_id.to_string(),
                    rater_a: a.rater_id.clone(),
                    rater_b: b.rater_id.clone(),
                    percent_agreement: percent_agreement(a, b)?,
                    spearman: spearman_correlation(a, b).ok(),
                    kappa: cohen_kappa(a, b).ok(),
                });
            }
        }
    }

    let mut groups: BTreeMap<&str, Vec<&EvaluationRecord>> = BTreeMap::new();
    for rec in &records {
        groups.entry(subject_of(&rec.plan_id)).or_default().push(rec);
    }
    let subjects: Vec<SubjectSummary> = groups
        .iter()
        .map(|(subject, recs)| {
            let n = recs.len() as f64;
            SubjectSummary {
                subject: subject.to_string(),
                plans: recs.len(),
                mean_percentage: recs.iter().map(|r| r.percentage).sum::<f64>() / n,
                min_percentage: recs.iter().map(|r| r.percentage).fold(f64::INFINITY, f64::min),
                max_percentage: recs.iter().map(|r| r.percentage).fold(f64::NEG_INFINITY, f64::max),
                mean_quality_only: recs.iter().map(|r| r.quality_only_percentage).sum::<f64>() / n,
            }
        })
        .collect();

    let names: Vec<&str> = groups.keys().copied().collect();
    let mut comparisons = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let (a, b) = (&groups[names[i]], &groups[names[j]]);
            let pairs = a.len().min(b.len());
            let x: Vec<f64> = a[..pairs].iter().map(|r| r.percentage).collect();
            let y: Vec<f64> = b[..pairs].iter().map(|r| r.percentage).collect();
            comparisons.push(SubjectComparison {
                subject_a: names[i].to_string(),
                subject_b: names[j].to_string(),
                pairs,
                test: wilcoxon_signed_rank(&x, &y)?,
            });
        }
    }

    Ok(EvaluationReport {
        records,
        raters_per_plan,
        agreements,
        subjects,
        comparisons,
    })
}

/// Quartiles by linear interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some([v[0], at(0.25), at(0.5), at(0.75), v[v.len() - 1]])
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

impl EvaluationReport {
    fn plan_pairs<'a>(&'a self, plan_id: &'a str) -> impl Iterator<Item = &'a PairAgreement> + 'a {
        self.agreements.iter().filter(move |a| a.plan_id == plan_id)
    }

    pub fn band_counts(&self) -> BTreeMap<QualityBand, usize> {
        let mut counts: BTreeMap<QualityBand, usize> =
            QualityBand::ALL.iter().map(|b| (*b, 0)).collect();
        for r in &self.records {
            *counts.entry(r.band).or_default() += 1;
        }
        counts
    }

    /// One row per plan, ordered by plan_id.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "plan_id,subject,raters,total_points,percentage,quality_only_percentage,band,\
             mean_percent_agreement,mean_spearman,mean_kappa\n",
        );
        for r in &self.records {
            let pairs: Vec<&PairAgreement> = self.plan_pairs(&r.plan_id).collect();
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.4},{:.4},{},{},{},{}",
                r.plan_id,
                subject_of(&r.plan_id),
                self.raters_per_plan[&r.plan_id],
                r.total_points,
                r.percentage,
                r.quality_only_percentage,
                r.band,
                fmt_opt(mean(pairs.iter().map(|p| p.percent_agreement))),
                fmt_opt(mean(pairs.iter().filter_map(|p| p.spearman))),
                fmt_opt(mean(pairs.iter().filter_map(|p| p.kappa))),
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let n = self.records.len();
        let _ = writeln!(out, "LESSON PLAN EVALUATION");
        let _ = writeln!(out, "plans: {n}");
        if let Some(m) = mean(self.records.iter().map(|r| r.percentage)) {
            let _ = writeln!(out, "mean percentage: {m:.2}");
        }
        if let Some(m) = mean(self.records.iter().map(|r| r.quality_only_percentage)) {
            let _ = writeln!(out, "mean quality-only percentage: {m:.2}");
        }

        let _ = writeln!(out, "\nPLANS");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{:<16} {:>7.2}%  quality-only {:>7.2}%  {}",
                r.plan_id, r.percentage, r.quality_only_percentage, r.band
            );
        }

        let _ = writeln!(out, "\nBANDS");
        for (band, count) in self.band_counts() {
            let _ = writeln!(out, "{:<11} {count}", band.as_str());
        }

        let _ = writeln!(out, "\nAGREEMENT");
        if self.agreements.is_empty() {
            let _ = writeln!(out, "n/a (fewer than two raters per plan)");
        } else {
            let series: [(&str, Vec<f64>); 3] = [
                ("percent agreement", self.agreements.iter().map(|a| a.percent_agreement).collect()),
                ("spearman", self.agreements.iter().filter_map(|a| a.spearman).collect()),
                ("kappa", self.agreements.iter().filter_map(|a| a.kappa).collect()),
            ];
            let _ = writeln!(out, "{:<18} {:>4} {:>9} {:>9} {:>9} {:>9} {:>9}", "metric", "n", "min", "q1", "median", "q3", "max");
            for (name, values) in &series {
                match quartiles(values) {
                    Some(q) => {
                        let _ = writeln!(
                            out,
                            "{name:<18} {:>4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                            values.len(),
                            q[0],
                            q[1],
                            q[2],
                            q[3],
                            q[4]
                        );
                    }
                    None => {
                        let _ = writeln!(out, "{name:<18} {:>4} n/a", 0);
                    }
                }
            }
            let _ = writeln!(out, "\nRATER PAIRS");
            for a in &self.agreements {
                let _ = writeln!(
                    out,
                    "{:<16} {}-{}  agreement {:.2}%  spearman {}  kappa {}",
                    a.plan_id,
                    a.rater_a,
                    a.rater_b,
                    a.percent_agreement,
                    fmt_opt(a.spearman),
                    fmt_opt(a.kappa)
                );
            }
        }

        let _ = writeln!(out, "\nSUBJECTS");
        for s in &self.subjects {
            let _ = writeln!(
                out,
                "{:<16} plans {}  mean {:.2}%  min {:.2}%  max {:.2}%  quality-only {:.2}%",
                s.subject, s.plans, s.mean_percentage, s.min_percentage, s.max_percentage, s.mean_quality_only
            );
        }

        let _ = writeln!(out, "\nSUBJECT COMPARISONS (Wilcoxon signed-rank, two-sided)");
        if self.comparisons.is_empty() {
            let _ = writeln!(out, "n/a (fewer than two subjects)");
        } else {
            let _ = writeln!(out, "pairing: {PAIRING_CONVENTION}");
            for c in &self.comparisons {
                let _ = writeln!(
                    out,
                    "{} vs {}: pairs {}  n_effective {}  W {}  p {:.6}  ({})",
                    c.subject_a,
                    c.subject_b,
                    c.pairs,
                    c.test.n_effective,
                    c.test.w,
                    c.test.p_value,
                    if c.test.exact { "exact" } else { "normal approximation" }
                );
            }
        }
        out
    }

    /// Write `report.csv` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), LpapError> {
        let io = |path: &Path, e: std::io::Error| LpapError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let csv = dir.join(REPORT_CSV);
        std::fs::write(&csv, self.to_csv()).map_err(|e| io(&csv, e))?;
        let txt = dir.join(REPORT_TXT);
        std::fs::write(&txt, self.to_text()).map_err(|e| io(&txt, e))?;
        Ok(())
    }
}
