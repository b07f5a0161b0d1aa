//! Plain-text and CSV rendering of evaluation reports.
//!
//! Text output uses percentages with two decimals. CSV output keeps full
//! precision fractions so it parses back to exactly the reported values.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{EvalReport, TaskRow};
use crate::metrics::Metrics;

pub const ABSENT: &str = "--";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            other => Err(Error::UnsupportedFormat(format!(
                "unknown report format {other:?} (expected text or csv)"
            ))),
        }
    }
}

pub fn render(report: &EvalReport, format: Format) -> String {
    match format {
        Format::Text => render_text(report),
        Format::Csv => CsvTable::from_report(report).to_csv(),
    }
}

const BASE_COLUMNS: [&str; 4] = ["name", "level", "accuracy", "macro_f1"];
const LOOP_COLUMNS: [&str; 4] = ["post_accuracy", "post_macro_f1", "delta_accuracy", "delta_macro_f1"];

/// One CSV line: a task at one level, or a detector.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub name: String,
    pub level: String,
    /// accuracy, macro_f1, then post and delta pairs for loop reports.
    pub values: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub loop_report: bool,
    pub rows: Vec<CsvRow>,
}

fn pair(m: Option<Metrics>) -> [Option<f64>; 2] {
    [m.map(|m| m.accuracy), m.map(|m| m.macro_f1)]
}

fn task_rows(row: &TaskRow, loop_report: bool) -> [CsvRow; 2] {
    let make = |level: &str, pre: Option<Metrics>, post: Option<Metrics>, delta: Option<Metrics>| {
        let mut values = pair(pre).to_vec();
        if loop_report {
            values.extend(pair(post));
            values.extend(pair(delta));
        }
        CsvRow {
            name: row.task.as_str().to_owned(),
            level: level.to_owned(),
            values,
        }
    };
    [
        make("sweep", Some(row.sweep), row.post_sweep, row.delta_sweep),
        make("patient", row.patient, row.post_patient, row.delta_patient),
    ]
}

impl CsvTable {
    pub fn from_report(report: &EvalReport) -> Self {
        let loop_report = report.is_loop();
        let mut rows: Vec<CsvRow> = report.tasks.iter().flat_map(|t| task_rows(t, loop_report)).collect();
        for d in &report.detectors {
            let mut values = pair(Some(d.metrics)).to_vec();
            if loop_report {
                values.extend([None; 4]);
            }
            rows.push(CsvRow {
                name: format!("qa_{}", d.perturbation.as_str()),
                level: "sweep".into(),
                values,
            });
        }
        Self { loop_report, rows }
    }

    pub fn columns(&self) -> Vec<&'static str> {
        let mut cols = BASE_COLUMNS.to_vec();
        if self.loop_report {
            cols.extend(LOOP_COLUMNS);
        }
        cols
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns().join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.name);
            out.push(',');
            out.push_str(&row.level);
            for v in &row.values {
                out.push(',');
                match v {
                    Some(x) => write!(out, "{x}").expect("write to string"),
                    None => out.push_str(ABSENT),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let err = |line: usize, column: usize, message: String| Error::Parse {
            source_name: source_name.to_owned(),
            line,
            column,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, 1, "empty CSV document".into()))?;
        let header: Vec<&str> = header.split(',').collect();
        let loop_report = if header == BASE_COLUMNS {
            false
        } else if header[..] == [&BASE_COLUMNS[..], &LOOP_COLUMNS[..]].concat()[..] {
            true
        } else {
            return Err(err(1, 1, format!("unexpected header {:?}", header.join(","))));
        };
        let width = header.len();
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != width {
                return Err(err(i + 1, 1, format!("expected {width} fields, found {}", cells.len())));
            }
            let mut column = cells[0].len() + cells[1].len() + 3;
            let mut values = Vec::with_capacity(width - 2);
            for cell in &cells[2..] {
                values.push(if *cell == ABSENT {
                    None
                } else {
                    Some(
                        cell.parse::<f64>()
                            .map_err(|e| err(i + 1, column, format!("bad number {cell:?}: {e}")))?,
                    )
                });
                column += cell.len() + 1;
            }
            rows.push(CsvRow {
                name: cells[0].to_owned(),
                level: cells[1].to_owned(),
                values,
            });
        }
        Ok(Self { loop_report, rows })
    }
}

fn pct(x: f64) -> String {
    let s = format!("{:.2}", x * 100.0);
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn cell(m: Option<Metrics>) -> String {
    match m {
        Some(m) => format!("{} / {}", pct(m.accuracy), pct(m.macro_f1)),
        None => ABSENT.into(),
    }
}

fn table(out: &mut String, title: &str, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_owned()
    };
    let _ = writeln!(out, "{title}");
    let _ = writeln!(
        out,
        "{}",
        line(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>())
    );
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    let _ = writeln!(out, "{}", "-".repeat(total));
    for r in rows {
        let _ = writeln!(out, "{}", line(r));
    }
    out.push('\n');
}

pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let m = &report.meta;
    let _ = writeln!(out, "seed {}  patients {}  sweeps {}", m.seed, m.n_patients, m.n_sweeps);
    if let Some(mix) = &m.mixture {
        let _ = writeln!(out, "mixture {:?}", mix.probs());
    }
    if let Some(src) = &m.prediction_source {
        let _ = writeln!(out, "predictions {src}");
    }
    if let Some(src) = &m.detector_source {
        let _ = writeln!(out, "detectors {src}");
    }
    if let Some(n) = m.reacquired {
        let _ = writeln!(out, "reacquired sweeps {n}");
    }
    if let Some(cfg) = &m.config {
        let _ = writeln!(out, "config {cfg}");
    }
    out.push('\n');

    if !report.tasks.is_empty() {
        if report.is_loop() {
            let rows: Vec<Vec<String>> = report
                .tasks
                .iter()
                .map(|t| {
                    vec![
                        t.task.display_name().to_owned(),
                        cell(Some(t.sweep)),
                        cell(t.post_sweep),
                        cell(t.delta_sweep),
                        cell(t.patient),
                        cell(t.post_patient),
                        cell(t.delta_patient),
                    ]
                })
                .collect();
            table(
                &mut out,
                "Downstream tasks after simulated reacquisition (accuracy / macro-F1, %)",
                &[
                    "Task",
                    "Sweep pre",
                    "Sweep post",
                    "Sweep delta",
                    "Patient pre",
                    "Patient post",
                    "Patient delta",
                ],
                &rows,
            );
        } else {
            let rows: Vec<Vec<String>> = report
                .tasks
                .iter()
                .map(|t| vec![t.task.display_name().to_owned(), cell(Some(t.sweep)), cell(t.patient)])
                .collect();
            table(
                &mut out,
                "Downstream tasks (accuracy / macro-F1, %)",
                &["Task", "Sweep level", "Patient level"],
                &rows,
            );
        }
    }
    if !report.detectors.is_empty() {
        let rows: Vec<Vec<String>> = report
            .detectors
            .iter()
            .map(|d| vec![d.perturbation.display_name().to_owned(), cell(Some(d.metrics))])
            .collect();
        table(
            &mut out,
            "QA detection (accuracy / macro-F1, %)",
            &["Task", "Sweep level"],
            &rows,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::downstream::Task;
    use crate::eval::{DetectorRow, ReportMeta};
    use crate::perturb::Perturbation;

    fn m(a: f64, f: f64) -> Metrics {
        Metrics {
            accuracy: a,
            macro_f1: f,
        }
    }

    fn sample(loop_report: bool) -> EvalReport {
        let tasks = Task::ALL
            .iter()
            .enumerate()
            .map(|(i, &task)| {
                let pre = m(0.1 * (i + 1) as f64, 1.0 / 3.0);
                let patient = task.has_patient_level().then(|| m(0.9, 0.7));
                let mut row = TaskRow {
                    task,
                    sweep: pre,
                    patient,
                    post_sweep: None,
                    post_patient: None,
                    delta_sweep: None,
                    delta_patient: None,
                };
                if loop_report {
                    row.post_sweep = Some(m(0.95, 0.9));
                    row.delta_sweep = Some(m(0.95, 0.9).minus(&pre));
                    row.post_patient = patient.map(|_| m(1.0, 1.0));
                    row.delta_patient = patient.map(|p| m(1.0, 1.0).minus(&p));
                }
                row
            })
            .collect();
        EvalReport {
            meta: ReportMeta {
                seed: 7,
                n_patients: 2,
                n_sweeps: 12,
                ..Default::default()
            },
            tasks,
            detectors: vec![DetectorRow {
                perturbation: Perturbation::Flip,
                metrics: m(0.99, 0.985),
            }],
        }
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        for lp in [false, true] {
            let r = sample(lp);
            let table = CsvTable::from_report(&r);
            let text = table.to_csv();
            let back = CsvTable::parse(&text, "r.csv").unwrap();
            assert_eq!(back, table);
            assert_eq!(back.to_csv(), text);
            assert_eq!(back.rows[0].values[1], Some(1.0 / 3.0));
        }
    }

    #[test]
    fn delta_columns_only_for_loop_reports() {
        let plain = render(&sample(false), Format::Csv);
        assert!(plain.starts_with("name,level,accuracy,macro_f1\n"));
        assert!(!plain.contains("delta"));
        let lp = render(&sample(true), Format::Csv);
        assert!(lp.lines().next().unwrap().ends_with("delta_accuracy,delta_macro_f1"));
    }

    #[test]
    fn sweep_tags_patient_cells_are_absent() {
        let csv = render(&sample(false), Format::Csv);
        assert!(csv.contains("sweep_tags,patient,--,--\n"));
        let text = render_text(&sample(false));
        let line = text.lines().find(|l| l.starts_with("Sweep tags")).unwrap();
        assert!(line.trim_end().ends_with("--"));
        assert!(line.contains("10.00 / 33.33"));
    }

    #[test]
    fn unknown_format_rejected() {
        assert!(matches!("xml".parse::<Format>(), Err(Error::UnsupportedFormat(_))));
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
    }

    #[test]
    fn malformed_csv_reports_line() {
        let bad = "name,level,accuracy,macro_f1\nflip,sweep,0.5,abc\n";
        match CsvTable::parse(bad, "x.csv") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
