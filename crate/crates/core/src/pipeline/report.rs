//! Per-stage counts and the funnel report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub docs_in: u64,
    pub docs_out: u64,
    pub drops_by_reason: BTreeMap<String, u64>,
    pub wall_time_s: f64,
    /// Stage-specific counts that are not document drops, e.g. removed image
    /// slots or manifest size.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counters: BTreeMap<String, u64>,
}

impl StageStats {
    pub fn new(stage: &str) -> Self {
        StageStats {
            stage: stage.to_string(),
            docs_in: 0,
            docs_out: 0,
            drops_by_reason: BTreeMap::new(),
            wall_time_s: 0.0,
            counters: BTreeMap::new(),
        }
    }

    pub fn dropped(&self) -> u64 {
        self.drops_by_reason.values().sum()
    }

    /// `docs_in = docs_out + drops`
    pub fn is_conserved(&self) -> bool {
        self.docs_in == self.docs_out + self.dropped()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelRow {
    #[serde(flatten)]
    pub stats: StageStats,
    /// `docs_out / docs_in` in percent; absent when nothing came in.
    pub pct_kept: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FunnelReport {
    pub stages: Vec<FunnelRow>,
    pub total_in: u64,
    pub total_out: u64,
    pub total_wall_time_s: f64,
}

/// Rows in execution order, each with its percentage relative to the
/// previous stage's output.
pub fn funnel_report(stats: Vec<StageStats>) -> FunnelReport {
    let total_in = stats.first().map_or(0, |s| s.docs_in);
    let total_out = stats.last().map_or(0, |s| s.docs_out);
    let total_wall_time_s = stats.iter().map(|s| s.wall_time_s).sum();
    let stages = stats
        .into_iter()
        .map(|s| {
            let pct_kept = (s.docs_in > 0).then(|| 100.0 * s.docs_out as f64 / s.docs_in as f64);
            FunnelRow { stats: s, pct_kept }
        })
        .collect();
    FunnelReport { stages, total_in, total_out, total_wall_time_s }
}

impl FunnelReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:<24} {:>10} {:>10} {:>8} {:>9}  drops\n", "stage", "in", "out", "kept", "time(s)");
        for row in &self.stages {
            let s = &row.stats;
            let pct = row.pct_kept.map_or("-".to_string(), |p| format!("{p:.1}%"));
            let drops: Vec<String> = s.drops_by_reason.iter().map(|(k, v)| format!("{k}={v}")).collect();
            out.push_str(&format!(
                "{:<24} {:>10} {:>10} {:>8} {:>9.2}  {}\n",
                s.stage,
                s.docs_in,
                s.docs_out,
                pct,
                s.wall_time_s,
                drops.join(" ")
            ));
        }
        out.push_str(&format!(
            "{:<24} {:>10} {:>10} {:>8} {:>9.2}\n",
            "total",
            self.total_in,
            self.total_out,
            if self.total_in > 0 { format!("{:.1}%", 100.0 * self.total_out as f64 / self.total_in as f64) } else { "-".into() },
            self.total_wall_time_s
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(name: &str, i: u64, o: u64) -> StageStats {
        let mut s = StageStats::new(name);
        s.docs_in = i;
        s.docs_out = o;
        if i > o {
            s.drops_by_reason.insert("x".into(), i - o);
        }
        s
    }

    #[test]
    fn percentages_relative_to_previous() {
        let r = funnel_report(vec![st("a", 100, 80), st("b", 80, 40)]);
        let pcts: Vec<f64> = r.stages.iter().map(|r| r.pct_kept.unwrap()).collect();
        assert_eq!(pcts, [80.0, 50.0]);
        assert_eq!((r.total_in, r.total_out), (100, 40));
        assert!(r.stages.iter().all(|r| r.stats.is_conserved()));
    }

    #[test]
    fn empty_run_and_json_round_trip() {
        let empty = funnel_report(vec![]);
        assert!(empty.stages.is_empty());
        assert_eq!(empty.render_table().lines().count(), 2);
        let mut s = st("a", 3, 3);
        s.counters.insert("images".into(), 7);
        let r = funnel_report(vec![s, st("b", 0, 0)]);
        assert_eq!(FunnelReport::from_json(&r.to_json()).unwrap(), r);
    }
}
