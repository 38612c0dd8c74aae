//! Per-group outcome aggregates over session records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::persona::{standard_income_bins, IncomeBin};
use crate::record::{OutcomeKind, SessionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Gender,
    IncomeBin,
}

impl FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gender" => Ok(GroupBy::Gender),
            "income_bin" | "income" => Ok(GroupBy::IncomeBin),
            other => Err(format!("unknown group_by {other:?}; use gender or income_bin")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: String,
    pub count: usize,
    pub purchased: usize,
    /// `purchased / count`; `None` for an empty group.
    pub purchase_rate: Option<f64>,
    /// Mean total in dollars over the sessions that purchased.
    pub mean_total: Option<f64>,
    /// Mean total in dollars over all sessions, counting no purchase as 0.
    pub mean_spend: Option<f64>,
    pub mean_actions: Option<f64>,
}

#[derive(Default)]
struct Acc {
    count: usize,
    purchased: usize,
    total_cents: i64,
    actions: usize,
}

impl Acc {
    fn add(&mut self, r: &SessionRecord) {
        self.count += 1;
        self.actions += r.actions.len();
        if r.outcome.kind == OutcomeKind::Purchased {
            self.purchased += 1;
            self.total_cents += r.outcome.total.map_or(0, |t| t.cents());
        }
    }

    fn row(&self, group: String) -> AggregateRow {
        let per = |num: f64, den: usize| (den > 0).then(|| num / den as f64);
        let dollars = self.total_cents as f64 / 100.0;
        AggregateRow {
            group,
            count: self.count,
            purchased: self.purchased,
            purchase_rate: per(self.purchased as f64, self.count),
            mean_total: per(dollars, self.purchased),
            mean_spend: per(dollars, self.count),
            mean_actions: per(self.actions as f64, self.count),
        }
    }
}

/// The gender label a record is grouped under.
pub fn gender_group(gender: &str) -> String {
    gender.trim().to_lowercase()
}

/// One row per group. Income rows follow `bins` in order and include empty
/// bins; gender rows are the genders present, sorted.
pub fn aggregate_with_bins(records: &[SessionRecord], group_by: GroupBy, bins: &[IncomeBin]) -> Vec<AggregateRow> {
    match group_by {
        GroupBy::IncomeBin => {
            let mut accs: Vec<Acc> = bins.iter().map(|_| Acc::default()).collect();
            let mut outside = Acc::default();
            for r in records {
                match bins.iter().position(|b| b.contains(r.persona.income)) {
                    Some(i) => accs[i].add(r),
                    None => outside.add(r),
                }
            }
            let mut rows: Vec<_> = bins.iter().zip(&accs).map(|(b, a)| a.row(b.label())).collect();
            if outside.count > 0 {
                rows.push(outside.row("other".into()));
            }
            rows
        }
        GroupBy::Gender => {
            let mut groups: BTreeMap<String, Acc> = BTreeMap::new();
            for r in records {
                groups.entry(gender_group(&r.persona.gender)).or_default().add(r);
            }
            groups.into_iter().map(|(g, a)| a.row(g)).collect()
        }
    }
}

/// [`aggregate_with_bins`] over the five standard income bins.
pub fn aggregate_stats(records: &[SessionRecord], group_by: GroupBy) -> Vec<AggregateRow> {
    aggregate_with_bins(records, group_by, &standard_income_bins())
}

fn cell(v: Option<f64>, money: bool) -> String {
    match v {
        None => "-".into(),
        Some(v) if money => format!("${v:.2}"),
        Some(v) => format!("{v:.2}"),
    }
}

/// Aligned plain-text table.
pub fn format_table(rows: &[AggregateRow]) -> String {
    let header = ["group", "count", "purchased", "rate", "mean_total", "mean_spend", "mean_actions"];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.group.clone(),
                r.count.to_string(),
                r.purchased.to_string(),
                cell(r.purchase_rate, false),
                cell(r.mean_total, true),
                cell(r.mean_spend, true),
                cell(r.mean_actions, false),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let mut parts = Vec::new();
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                parts.push(format!("{c:<w$}", w = widths[i]));
            } else {
                parts.push(format!("{c:>w$}", w = widths[i]));
            }
        }
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header);
    for row in &body {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_group_by() {
        assert_eq!("gender".parse::<GroupBy>().unwrap(), GroupBy::Gender);
        assert_eq!("income_bin".parse::<GroupBy>().unwrap(), GroupBy::IncomeBin);
        assert!("age".parse::<GroupBy>().is_err());
    }

    #[test]
    fn empty_input_gives_empty_bins() {
        let rows = aggregate_stats(&[], GroupBy::IncomeBin);
        let labels: Vec<_> = rows.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(labels, ["$0-$30k", "$30k-$58k", "$58k-$94k", "$94k-$153k", "$153k-"]);
        assert!(rows.iter().all(|r| r.count == 0 && r.mean_total.is_none() && r.purchase_rate.is_none()));
        assert!(aggregate_stats(&[], GroupBy::Gender).is_empty());
        let table = format_table(&rows);
        assert!(table.lines().nth(1).unwrap().starts_with("$0-$30k     "));
    }
}
