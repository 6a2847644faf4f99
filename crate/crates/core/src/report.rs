//! Plain-text result tables.

use serde::{Deserialize, Serialize};

use crate::config::SystemKind;
use crate::error::{Error, Result};
use crate::harness::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Main,
    Ablation,
    PerDomain,
    Noise,
}

impl Layout {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "main" => Some(Layout::Main),
            "ablation" => Some(Layout::Ablation),
            "per_domain" => Some(Layout::PerDomain),
            "noise" => Some(Layout::Noise),
            _ => None,
        }
    }
}

/// Row order of the per-domain table; domains outside it follow by name.
pub const DOMAIN_ORDER: &[&str] = &[
    "restaurant",
    "hotel",
    "attraction",
    "taxi",
    "train",
    "hospital",
    "police",
];

fn num(x: f64) -> String {
    format!("{x:.1}")
}

/// Aligned table: first column left-aligned, the rest right-aligned.
fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        parts.join(" | ").trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    let rule: Vec<String> = (0..cols).map(|i| "-".repeat(widths[i])).collect();
    out.push_str(&rule.join("-+-"));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

fn require_same<T: PartialEq + std::fmt::Debug>(records: &[RunRecord], what: &str, f: impl Fn(&RunRecord) -> T) -> Result<()> {
    let first = f(&records[0]);
    for r in &records[1..] {
        if f(r) != first {
            return Err(Error::contract(format!(
                "records {:?} and {:?} differ in {what}",
                records[0].name, r.name
            )));
        }
    }
    Ok(())
}

fn rate_label(rate: f64) -> String {
    let pct = rate * 100.0;
    let shown = if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    };
    if rate == 0.0 {
        format!("{shown}% (Clean)")
    } else {
        format!("{shown}% Noise")
    }
}

fn metric_header() -> Vec<String> {
    ["Method", "JGA (%)", "Slot Accuracy (%)"].map(String::from).to_vec()
}

fn metric_row(r: &RunRecord) -> Vec<String> {
    let rep = &r.baseline_level().report;
    vec![r.label.clone(), num(rep.jga), num(rep.slot_accuracy)]
}

/// Renders `records` in `layout`. Records must come from the same data and
/// ontology; the ablation layout takes exactly one run of each ablation arm,
/// and the noise layout needs identical noise levels.
pub fn render_report(records: &[RunRecord], layout: Layout) -> Result<String> {
    if records.is_empty() {
        return Err(Error::contract("no records to render"));
    }
    require_same(records, "ontology", |r| r.resource_hashes.ontology.clone())?;
    require_same(records, "evaluation data", |r| r.data.hash.clone())?;
    Ok(match layout {
        Layout::Main => table(&metric_header(), &records.iter().map(metric_row).collect::<Vec<_>>()),
        Layout::Ablation => {
            let find = |kind: SystemKind| {
                let found: Vec<&RunRecord> = records.iter().filter(|r| r.system == kind).collect();
                match found.as_slice() {
                    [one] => Ok(*one),
                    _ => Err(Error::contract(format!(
                        "ablation layout needs exactly one {} record",
                        kind.as_str()
                    ))),
                }
            };
            if records.len() != 2 {
                return Err(Error::contract("ablation layout needs exactly two records"));
            }
            let structured = find(SystemKind::NgramStructuredAblation)?;
            let nl = find(SystemKind::NgramNl)?;
            require_same(records, "seed", |r| r.seed)?;
            table(&metric_header(), &[metric_row(structured), metric_row(nl)])
        }
        Layout::PerDomain => {
            let mut header = vec!["Domain".to_string()];
            for r in records {
                header.push(format!("{} JGA (%)", r.label));
                header.push(format!("{} Slot Acc. (%)", r.label));
            }
            let mut domains: Vec<String> = DOMAIN_ORDER.iter().map(|d| d.to_string()).collect();
            let mut extra: Vec<String> = records
                .iter()
                .flat_map(|r| r.baseline_level().report.per_domain.keys().cloned())
                .filter(|d| !DOMAIN_ORDER.contains(&d.as_str()))
                .collect();
            extra.sort();
            extra.dedup();
            domains.extend(extra);
            domains.retain(|d| records.iter().any(|r| r.baseline_level().report.per_domain.contains_key(d)));

            let mut rows = Vec::new();
            for d in &domains {
                let mut row = vec![capitalize(d)];
                for r in records {
                    match r.baseline_level().report.per_domain.get(d) {
                        Some(s) => {
                            row.push(num(s.jga));
                            row.push(num(s.slot_accuracy));
                        }
                        None => row.extend(["-".to_string(), "-".to_string()]),
                    }
                }
                rows.push(row);
            }
            let mut avg = vec!["Average".to_string()];
            for r in records {
                let pd = &r.baseline_level().report.per_domain;
                if pd.is_empty() {
                    avg.extend(["-".to_string(), "-".to_string()]);
                } else {
                    let n = pd.len() as f64;
                    avg.push(num(pd.values().map(|s| s.jga).sum::<f64>() / n));
                    avg.push(num(pd.values().map(|s| s.slot_accuracy).sum::<f64>() / n));
                }
            }
            rows.push(avg);
            table(&header, &rows)
        }
        Layout::Noise => {
            let rates = |r: &RunRecord| r.levels.iter().map(|l| l.noise_rate.to_bits()).collect::<Vec<_>>();
            require_same(records, "noise levels", rates)?;
            let mut header = vec!["Method".to_string()];
            header.extend(records[0].levels.iter().map(|l| rate_label(l.noise_rate)));
            let rows: Vec<Vec<String>> = records
                .iter()
                .map(|r| {
                    let mut row = vec![r.label.clone()];
                    row.extend(r.levels.iter().map(|l| num(l.report.jga)));
                    row
                })
                .collect();
            table(&header, &rows)
        }
    })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}
