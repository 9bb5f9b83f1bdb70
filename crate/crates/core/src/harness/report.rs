//! Leaderboards and the statistical report over records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::EvaluationRecord;
use crate::stats::{kruskal_wallis, pairwise_dunn, spearman};

pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub system_id: String,
    pub mean_score: f64,
    /// Sample standard deviation; 0 for a single record.
    pub std_score: f64,
    pub n: usize,
}

fn scores_by_system(records: &[EvaluationRecord]) -> BTreeMap<&str, Vec<f64>> {
    let mut m: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let (true, Some(s)) = (r.is_ok(), r.remix_score) {
            m.entry(r.system_id.as_str()).or_default().push(s);
        }
    }
    m
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Per-system remix score summary over successful records, best first,
/// ties by system id.
pub fn leaderboard(records: &[EvaluationRecord]) -> Vec<LeaderboardRow> {
    let mut rows: Vec<LeaderboardRow> = scores_by_system(records)
        .into_iter()
        .map(|(id, s)| {
            let (mean_score, std_score) = mean_std(&s);
            LeaderboardRow {
                system_id: id.to_string(),
                mean_score,
                std_score,
                n: s.len(),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.mean_score.total_cmp(&a.mean_score).then_with(|| a.system_id.cmp(&b.system_id)));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmnibusSummary {
    pub h: f64,
    pub df: usize,
    pub p: f64,
    pub eta_squared: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub system_a: String,
    pub system_b: String,
    pub z: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    /// `"all"` or a system id.
    pub scope: String,
    pub rho: f64,
    pub p: f64,
    pub n: usize,
    pub rank_variance_explained: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub alpha: f64,
    pub leaderboard: Vec<LeaderboardRow>,
    pub failed_records: BTreeMap<String, usize>,
    pub kruskal_wallis: Option<OmnibusSummary>,
    pub pairwise: Vec<PairwiseRow>,
    pub severity_correlation: Vec<CorrelationRow>,
    pub gain_spread_correlation: Vec<CorrelationRow>,
    /// Analyses that could not be computed, with the reason.
    pub notes: Vec<String>,
}

fn correlations(records: &[&EvaluationRecord], x: impl Fn(&EvaluationRecord) -> f64, label: &str, notes: &mut Vec<String>) -> Vec<CorrelationRow> {
    let mut scopes: Vec<(String, Vec<&EvaluationRecord>)> = vec![("all".into(), records.to_vec())];
    let mut by_sys: BTreeMap<&str, Vec<&EvaluationRecord>> = BTreeMap::new();
    for r in records {
        by_sys.entry(&r.system_id).or_default().push(r);
    }
    if by_sys.len() > 1 {
        scopes.extend(by_sys.into_iter().map(|(k, v)| (k.to_string(), v)));
    }
    let mut rows = Vec::new();
    for (scope, rs) in scopes {
        let xs: Vec<f64> = rs.iter().map(|r| x(r)).collect();
        let ys: Vec<f64> = rs.iter().map(|r| r.remix_score.expect("filtered to scored records")).collect();
        match spearman(&xs, &ys) {
            Ok(s) => rows.push(CorrelationRow {
                scope,
                rho: s.rho,
                p: s.p,
                n: s.n,
                rank_variance_explained: s.rank_variance_explained,
            }),
            Err(e) => notes.push(format!("{label} correlation ({scope}): {e}")),
        }
    }
    rows
}

pub fn analysis_report(records: &[EvaluationRecord], alpha: f64) -> StatsReport {
    let mut notes = Vec::new();
    let leaderboard = leaderboard(records);
    let mut failed_records: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        let e = failed_records.entry(r.system_id.clone()).or_default();
        if !r.is_ok() || r.remix_score.is_none() {
            *e += 1;
        }
    }
    let groups = scores_by_system(records);
    let names: Vec<&str> = groups.keys().copied().collect();
    let values: Vec<Vec<f64>> = groups.values().cloned().collect();
    let mut kw = None;
    let mut pairwise = Vec::new();
    if values.len() < 2 {
        notes.push(format!("omnibus test needs at least 2 systems, found {}", values.len()));
    } else {
        match kruskal_wallis(&values) {
            Ok(r) => {
                kw = Some(OmnibusSummary {
                    h: r.h,
                    df: r.df,
                    p: r.p,
                    eta_squared: r.eta_squared,
                    n: r.n,
                })
            }
            Err(e) => notes.push(format!("Kruskal-Wallis: {e}")),
        }
        match pairwise_dunn(&values) {
            Ok(d) => {
                for i in 0..names.len() {
                    for j in i + 1..names.len() {
                        pairwise.push(PairwiseRow {
                            system_a: names[i].to_string(),
                            system_b: names[j].to_string(),
                            z: d.z[i][j],
                            p_raw: d.p_raw[i][j],
                            p_adjusted: d.p_adjusted[i][j],
                            significant: d.significant(i, j, alpha),
                        });
                    }
                }
            }
            Err(e) => notes.push(format!("pairwise comparisons: {e}")),
        }
    }
    let scored: Vec<&EvaluationRecord> = records.iter().filter(|r| r.is_ok() && r.remix_score.is_some()).collect();
    let severity_correlation = correlations(&scored, |r| r.severity_code as f64, "severity", &mut notes);
    let gain_spread_correlation = correlations(&scored, |r| r.gain_spread_db, "gain spread", &mut notes);
    StatsReport {
        alpha,
        leaderboard,
        failed_records,
        kruskal_wallis: kw,
        pairwise,
        severity_correlation,
        gain_spread_correlation,
        notes,
    }
}

impl StatsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let _ = writeln!(md, "# Evaluation report\n");
        let _ = writeln!(md, "| Rank | System | Score | n | Failed |");
        let _ = writeln!(md, "|---:|---|---|---:|---:|");
        for (i, row) in self.leaderboard.iter().enumerate() {
            let failed = self.failed_records.get(&row.system_id).copied().unwrap_or(0);
            let _ = writeln!(
                md,
                "| {} | {} | {:.3} ± {:.3} | {} | {} |",
                i + 1,
                row.system_id,
                row.mean_score,
                row.std_score,
                row.n,
                failed
            );
        }
        if let Some(kw) = &self.kruskal_wallis {
            let _ = writeln!(
                md,
                "\nKruskal-Wallis: H({}) = {:.3}, p = {:.3e}, η² = {:.3}, N = {}",
                kw.df, kw.h, kw.p, kw.eta_squared, kw.n
            );
        }
        if !self.pairwise.is_empty() {
            let _ = writeln!(md, "\n## Pairwise comparisons (Bonferroni, α = {})\n", self.alpha);
            let _ = writeln!(md, "| A | B | z | p (adj.) | Significant |");
            let _ = writeln!(md, "|---|---|---:|---:|---|");
            for p in &self.pairwise {
                let _ = writeln!(
                    md,
                    "| {} | {} | {:.3} | {:.3e} | {} |",
                    p.system_a,
                    p.system_b,
                    p.z,
                    p.p_adjusted,
                    if p.significant { "yes" } else { "no" }
                );
            }
        }
        for (title, rows) in [
            ("Score vs hearing-loss severity", &self.severity_correlation),
            ("Score vs gain spread", &self.gain_spread_correlation),
        ] {
            if rows.is_empty() {
                continue;
            }
            let _ = writeln!(md, "\n## {title} (Spearman)\n");
            let _ = writeln!(md, "| Scope | rho | p | n | rho² |");
            let _ = writeln!(md, "|---|---:|---:|---:|---:|");
            for r in rows {
                let _ = writeln!(md, "| {} | {:.3} | {:.3e} | {} | {:.3} |", r.scope, r.rho, r.p, r.n, r.rank_variance_explained);
            }
        }
        if !self.notes.is_empty() {
            let _ = writeln!(md, "\n## Notes\n");
            for n in &self.notes {
                let _ = writeln!(md, "- {n}");
            }
        }
        md
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::RecordStatus;

    fn rec(system: &str, score: f64, severity: u8) -> EvaluationRecord {
        EvaluationRecord {
            system_id: system.into(),
            scene_id: "S".into(),
            listener_id: "L".into(),
            remix_score: Some(score),
            vdbo_score: None,
            severity_code: severity,
            gain_spread_db: 0.0,
            status: RecordStatus::Ok,
        }
    }

    #[test]
    fn single_system_mean_and_sample_std() {
        let rows = leaderboard(&[rec("A", 0.5, 0), rec("A", 0.7, 0)]);
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean_score - 0.6).abs() < 1e-12);
        assert!((rows[0].std_score - 0.141_421_356_237_309_5).abs() < 1e-12);
        assert_eq!(rows[0].n, 2);
    }

    #[test]
    fn ties_are_alphabetical_and_empty_is_empty() {
        let rows = leaderboard(&[rec("b", 0.5, 0), rec("a", 0.5, 0), rec("c", 0.9, 0)]);
        let ids: Vec<&str> = rows.iter().map(|r| r.system_id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert!(leaderboard(&[]).is_empty());
    }

    #[test]
    fn failed_rows_are_counted_not_averaged() {
        let mut bad = rec("A", 0.0, 0);
        bad.remix_score = None;
        bad.status = RecordStatus::Failed;
        let records = vec![rec("A", 0.4, 0), bad, rec("B", 0.6, 1)];
        let r = analysis_report(&records, DEFAULT_ALPHA);
        assert_eq!(r.leaderboard[1].n, 1);
        assert_eq!(r.failed_records["A"], 1);
        assert_eq!(r.failed_records["B"], 0);
    }

    #[test]
    fn degenerate_inputs_become_notes() {
        let r = analysis_report(&[rec("A", 0.4, 1), rec("A", 0.5, 1)], DEFAULT_ALPHA);
        assert!(r.kruskal_wallis.is_none());
        assert!(r.notes.iter().any(|n| n.contains("at least 2 systems")));
        assert!(r.notes.iter().any(|n| n.contains("severity")));
        let md = r.to_markdown();
        assert!(md.contains("| 1 | A | 0.450 ± 0.071 | 2 | 0 |"), "{md}");
    }

    #[test]
    fn report_has_pairwise_matrix_and_json() {
        let mut records = Vec::new();
        for i in 0..12 {
            records.push(rec("A", 0.5 + 0.01 * i as f64, (i % 4) as u8));
            records.push(rec("B", 0.3 + 0.01 * i as f64, (i % 4) as u8));
            records.push(rec("C", 0.1 + 0.01 * i as f64, (i % 4) as u8));
        }
        let r = analysis_report(&records, DEFAULT_ALPHA);
        assert_eq!(r.pairwise.len(), 3);
        assert!(r.kruskal_wallis.as_ref().unwrap().p < 0.01);
        assert_eq!(r.severity_correlation.len(), 4);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["pairwise"].as_array().unwrap().len(), 3);
        assert_eq!(v["leaderboard"][0]["system_id"], "A");
    }
}
