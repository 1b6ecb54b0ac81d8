//! JSON and text renderings of metric reports, seed summaries and
//! correlation matrices. Tables follow a fixed column order: phoneme MSE and
//! PCC, three word aspects, five utterance aspects.

use hia_core::data::CorrelationMatrix;
use hia_core::metrics::{ColumnSummary, MetricReport};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct ColumnJson {
    pub granularity: &'static str,
    pub aspect: &'static str,
    pub n: usize,
    pub mse: f64,
    pub pcc: Option<f64>,
    pub undefined: bool,
}

#[derive(Debug, Serialize)]
pub struct ReportJson {
    pub total_loss: f64,
    pub columns: Vec<ColumnJson>,
}

pub fn report_json(r: &MetricReport) -> ReportJson {
    let columns = r
        .columns()
        .into_iter()
        .map(|(granularity, aspect, m)| ColumnJson {
            granularity,
            aspect,
            n: m.n,
            mse: m.mse,
            pcc: m.pcc,
            undefined: m.pcc.is_none(),
        })
        .collect();
    ReportJson { total_loss: r.total_loss(), columns }
}

const SHORT: [&str; 10] =
    ["MSE", "PCC", "Acc.", "Stress", "Total", "Acc.", "Comp.", "Flu.", "Pros.", "Total"];

fn header() -> String {
    let mut s = format!("{:<20}{:<30}{}\n", "Phoneme", "Word (PCC)", "Utterance (PCC)");
    for h in SHORT {
        s.push_str(&format!("{h:<10}"));
    }
    s.truncate(s.trim_end().len());
    s.push('\n');
    s
}

fn row(cells: &[String]) -> String {
    let mut s: String = cells.iter().map(|c| format!("{c:<10}")).collect();
    s.truncate(s.trim_end().len());
    s.push('\n');
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".to_string(), |v| format!("{v:.3}"))
}

pub fn report_table(r: &MetricReport) -> String {
    let mut cells = vec![format!("{:.3}", r.phoneme.mse)];
    cells.extend(r.columns().into_iter().map(|(_, _, m)| fmt_opt(m.pcc)));
    header() + &row(&cells)
}

#[derive(Debug, Serialize)]
pub struct SummaryColumnJson {
    pub granularity: &'static str,
    pub aspect: &'static str,
    pub metric: &'static str,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub defined: usize,
    pub runs: usize,
}

#[derive(Debug, Serialize)]
pub struct SummaryJson {
    pub seeds: Vec<u64>,
    pub columns: Vec<SummaryColumnJson>,
    pub per_seed: Vec<ReportJson>,
}

pub fn summary_json(seeds: &[u64], summary: &[ColumnSummary], reports: &[MetricReport]) -> SummaryJson {
    SummaryJson {
        seeds: seeds.to_vec(),
        columns: summary
            .iter()
            .map(|c| SummaryColumnJson {
                granularity: c.granularity,
                aspect: c.aspect,
                metric: c.metric,
                mean: c.mean,
                std: c.std,
                defined: c.defined,
                runs: c.runs,
            })
            .collect(),
        per_seed: reports.iter().map(report_json).collect(),
    }
}

/// `mean ± std` per column; columns with undefined runs show the defined count.
pub fn summary_table(summary: &[ColumnSummary]) -> String {
    let cells: Vec<String> = summary
        .iter()
        .map(|c| {
            let mut s = match (c.mean, c.std) {
                (Some(m), Some(sd)) => format!("{m:.3}±{sd:.3}"),
                (Some(m), None) => format!("{m:.3}"),
                _ => "undef".to_string(),
            };
            if c.defined < c.runs {
                s.push_str(&format!(" ({}/{})", c.defined, c.runs));
            }
            s
        })
        .collect();
    let mut s: String = cells.iter().map(|c| format!("{c:<14}")).collect();
    s.truncate(s.trim_end().len());
    let mut head = format!("{:<28}{:<42}{}\n", "Phoneme", "Word (PCC)", "Utterance (PCC)");
    let names: String = SHORT.iter().map(|h| format!("{h:<14}")).collect();
    head.push_str(names.trim_end());
    head.push('\n');
    head + &s + "\n"
}

#[derive(Debug, Serialize)]
pub struct CorrelationJson {
    pub n: usize,
    pub fields: Vec<&'static str>,
    pub matrix: Vec<Vec<Option<f64>>>,
}

pub fn correlation_json(m: &CorrelationMatrix) -> CorrelationJson {
    CorrelationJson {
        n: m.n,
        fields: m.fields.to_vec(),
        matrix: m.values.iter().map(|r| r.to_vec()).collect(),
    }
}

pub fn correlation_table(m: &CorrelationMatrix) -> String {
    let mut s = format!("{:<8}", "");
    for f in m.fields {
        s.push_str(&format!("{f:>8}"));
    }
    s.push('\n');
    for (f, r) in m.fields.iter().zip(&m.values) {
        s.push_str(&format!("{f:<8}"));
        for v in r {
            s.push_str(&format!("{:>8}", v.map_or_else(|| "undef".to_string(), |v| format!("{v:.3}"))));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use hia_core::metrics::AspectMetric;

    fn report() -> MetricReport {
        let m = |p: Option<f64>| AspectMetric { pcc: p, mse: 0.25, n: 10 };
        MetricReport {
            phoneme: m(Some(0.5)),
            word: [m(Some(0.4)); 3],
            utterance: [m(Some(0.7)), m(None), m(Some(0.1)), m(Some(0.2)), m(Some(0.3))],
        }
    }

    #[test]
    fn json_has_nine_columns() {
        let j = report_json(&report());
        assert_eq!(j.columns.len(), 9);
        assert!(j.columns[5].undefined);
        let text = serde_json::to_string(&j).unwrap();
        assert!(text.contains("\"pcc\":null"));
    }

    #[test]
    fn table_layout() {
        let t = report_table(&report());
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Phoneme"));
        assert_eq!(lines[2].split_whitespace().count(), 10);
        assert!(lines[2].contains("undef"));
    }
}
