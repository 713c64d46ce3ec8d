//! Report emission: a machine-readable table (CSV, one row per case), a
//! human-readable grid with direction-aware best-per-column marking, and
//! per-fold/per-seed spread summaries for multi-instance plans.

use crate::store::{ResultRecord, Status};
use crate::RunnerError;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use step_core::metrics::{metric_by_id, Direction, MetricId};

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn status_text(status: &Status) -> String {
    match status {
        Status::Computed => "computed".into(),
        Status::Cached => "cached".into(),
        Status::Skipped { reason } => format!("skipped({reason})"),
        Status::Failed { error } => format!("failed({error})"),
    }
}

/// One row per case: the machine-readable table.
pub fn render_csv(records: &[ResultRecord]) -> String {
    let mut out = String::from(
        "case_hash,corpus,datasets,perturbations,source,n_input,n_output,dt,t0_policy,\
         split,fold,seed,model,metric,direction,status,value,n\n",
    );
    for r in records {
        let direction = MetricId::parse(&r.case.metric)
            .map(|id| match metric_by_id(id).direction {
                Direction::LowerIsBetter => "lower",
                Direction::HigherIsBetter => "higher",
            })
            .unwrap_or("");
        let (value, n) = match &r.metric {
            Some(m) => (format!("{:.12}", m.value), m.n.to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.case_hash,
            csv_escape(&r.case.corpus_id),
            csv_escape(&r.case.dataset_ids.join("+")),
            csv_escape(&r.case.perturbation_ids.join("+")),
            r.case.source.as_str(),
            r.case.n_input,
            r.case.n_output,
            r.case.dt,
            csv_escape(&r.case.t0_policy),
            csv_escape(&r.case.split_id),
            r.case.fold_index.map(|f| f.to_string()).unwrap_or_default(),
            r.case.seed,
            csv_escape(&r.case.model_id),
            r.case.metric,
            direction,
            csv_escape(&status_text(&r.status)),
            value,
            n,
        );
    }
    out
}

/// Condition key: everything that is neither model nor metric nor instance.
fn condition_of(r: &ResultRecord) -> String {
    format!(
        "corpus={} datasets={} perturbations={} n_input={} n_output={} dt={} split={}",
        r.case.corpus_id,
        r.case.dataset_ids.join("+"),
        if r.case.perturbation_ids.is_empty() {
            "none".to_string()
        } else {
            r.case.perturbation_ids.join("+")
        },
        r.case.n_input,
        r.case.n_output,
        r.case.dt,
        r.case.split_id,
    )
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// The human-readable grid: one block per condition, models as rows,
/// metrics as columns, the best value per column marked with `*`.
pub fn render_grid(records: &[ResultRecord]) -> String {
    // (condition, model+source) -> metric -> values over instances
    let mut conditions: BTreeMap<String, BTreeMap<String, BTreeMap<String, Vec<f64>>>> =
        BTreeMap::new();
    let mut statuses: BTreeMap<String, BTreeMap<String, BTreeMap<String, String>>> =
        BTreeMap::new();
    for r in records {
        let cond = condition_of(r);
        let row = match r.case.source {
            crate::cases::SourceLabel::Std => r.case.model_id.clone(),
            s => format!("{} [{}]", r.case.model_id, s.as_str()),
        };
        match (&r.status, &r.metric) {
            (Status::Computed | Status::Cached, Some(m)) => {
                conditions
                    .entry(cond)
                    .or_default()
                    .entry(row)
                    .or_default()
                    .entry(r.case.metric.clone())
                    .or_default()
                    .push(m.value);
            }
            _ => {
                statuses
                    .entry(cond)
                    .or_default()
                    .entry(row)
                    .or_default()
                    .insert(r.case.metric.clone(), status_text(&r.status));
            }
        }
    }

    let mut out = String::new();
    for (cond, rows) in &conditions {
        let _ = writeln!(out, "== {cond}");
        let mut metrics: Vec<String> = rows
            .values()
            .flat_map(|m| m.keys().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        if let Some(extra) = statuses.get(cond) {
            for m in extra.values().flat_map(|m| m.keys()) {
                if !metrics.contains(m) {
                    metrics.push(m.clone());
                }
            }
        }
        // mean over instances per cell; best per column marked
        let mut best: BTreeMap<&str, (f64, Direction)> = BTreeMap::new();
        let mut cells: BTreeMap<&String, BTreeMap<&str, f64>> = BTreeMap::new();
        for (row, per_metric) in rows {
            for metric in &metrics {
                if let Some(values) = per_metric.get(metric) {
                    let mean = values.iter().sum::<f64>() / values.len() as f64;
                    cells.entry(row).or_default().insert(metric.as_str(), mean);
                    let direction = MetricId::parse(metric)
                        .map(|id| metric_by_id(id).direction)
                        .unwrap_or(Direction::LowerIsBetter);
                    let entry =
                        best.entry(metric.as_str()).or_insert((mean, direction));
                    let better = match direction {
                        Direction::LowerIsBetter => mean < entry.0,
                        Direction::HigherIsBetter => mean > entry.0,
                    };
                    if better {
                        entry.0 = mean;
                    }
                }
            }
        }
        let width = rows.keys().map(|r| r.len()).max().unwrap_or(8).max(8);
        let _ = write!(out, "{:width$}", "model");
        for metric in &metrics {
            let _ = write!(out, " {metric:>16}");
        }
        out.push('\n');
        for (row, _) in rows {
            let _ = write!(out, "{row:width$}");
            for metric in &metrics {
                match cells.get(row).and_then(|c| c.get(metric.as_str())) {
                    Some(v) => {
                        let marker = match best.get(metric.as_str()) {
                            Some((b, _)) if (v - b).abs() < 1e-15 => "*",
                            _ => " ",
                        };
                        let _ = write!(out, " {:>15.4}{marker}", v);
                    }
                    None => {
                        let text = statuses
                            .get(cond)
                            .and_then(|m| m.get(row))
                            .and_then(|m| m.get(metric))
                            .cloned()
                            .unwrap_or_else(|| "-".into());
                        let short: String = text.chars().take(16).collect();
                        let _ = write!(out, " {short:>16}");
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Per-instance spreads: for every (condition, model, metric) with several
/// instances (seeds and folds), the per-instance values plus
/// min/median/max and the spread.
pub fn render_spreads(records: &[ResultRecord]) -> String {
    let mut groups: BTreeMap<(String, String, String), Vec<(u64, Option<usize>, f64)>> =
        BTreeMap::new();
    for r in records {
        if let (Status::Computed | Status::Cached, Some(m)) = (&r.status, &r.metric) {
            groups
                .entry((
                    condition_of(r),
                    format!("{} [{}]", r.case.model_id, r.case.source.as_str()),
                    r.case.metric.clone(),
                ))
                .or_default()
                .push((r.case.seed, r.case.fold_index, m.value));
        }
    }
    let mut out = String::from("condition,model,metric,instances,min,median,max,spread,values\n");
    for ((cond, model, metric), mut values) in groups {
        if values.len() < 2 {
            continue;
        }
        values.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut sorted: Vec<f64> = values.iter().map(|(_, _, v)| *v).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let listing = values
            .iter()
            .map(|(seed, fold, v)| match fold {
                Some(f) => format!("seed{seed}/fold{f}={v:.6}"),
                None => format!("seed{seed}={v:.6}"),
            })
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            out,
            "{},{},{},{},{:.9},{:.9},{:.9},{:.9},{}",
            csv_escape(&cond),
            csv_escape(&model),
            metric,
            values.len(),
            sorted.first().unwrap(),
            median(&sorted),
            sorted.last().unwrap(),
            sorted.last().unwrap() - sorted.first().unwrap(),
            csv_escape(&listing),
        );
    }
    out
}

/// Writes report.csv, report.txt, and spreads.csv under `output_dir`.
pub fn emit_report(records: &[ResultRecord], output_dir: &Path) -> Result<(), RunnerError> {
    if records.is_empty() {
        return Err(RunnerError::EmptyStore);
    }
    std::fs::create_dir_all(output_dir).map_err(|e| crate::io_err(e, output_dir))?;
    let csv_path = output_dir.join("report.csv");
    std::fs::write(&csv_path, render_csv(records)).map_err(|e| crate::io_err(e, &csv_path))?;
    let grid_path = output_dir.join("report.txt");
    std::fs::write(&grid_path, render_grid(records)).map_err(|e| crate::io_err(e, &grid_path))?;
    let spread_path = output_dir.join("spreads.csv");
    std::fs::write(&spread_path, render_spreads(records))
        .map_err(|e| crate::io_err(e, &spread_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::SourceLabel;
    use crate::store::{CaseDescriptor, Timings};
    use step_core::metrics::FinalMetric;

    fn record(model: &str, metric: MetricId, value: f64, seed: u64) -> ResultRecord {
        ResultRecord {
            case_hash: format!("{model}-{metric}-{seed}"),
            case: CaseDescriptor {
                corpus_id: "all".into(),
                dataset_ids: vec!["roads".into()],
                perturbation_ids: vec![],
                n_input: 4,
                n_output: 3,
                dt: 0.5,
                t0_policy: "FirstAvailable".into(),
                split_id: "rand".into(),
                fold_index: None,
                model_id: model.into(),
                metric: metric.as_str().into(),
                seed,
                source: SourceLabel::Std,
            },
            status: Status::Computed,
            metric: Some(FinalMetric { metric_id: metric, value, n: 10 }),
            versions: ResultRecord::versions_now(),
            timings: Timings::default(),
        }
    }

    #[test]
    fn csv_has_one_row_per_record() {
        let records = vec![
            record("cv", MetricId::MinAde, 1.0, 0),
            record("lin", MetricId::MinAde, 0.5, 0),
        ];
        let csv = render_csv(&records);
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn grid_marks_direction_aware_best() {
        let records = vec![
            record("cv", MetricId::MinAde, 1.0, 0),
            record("lin", MetricId::MinAde, 0.5, 0),
            record("cv", MetricId::Auc, 0.9, 0),
            record("lin", MetricId::Auc, 0.7, 0),
        ];
        let grid = render_grid(&records);
        let lin_line = grid.lines().find(|l| l.starts_with("lin")).unwrap();
        let cv_line = grid.lines().find(|l| l.starts_with("cv")).unwrap();
        // lower min_ade wins for lin, higher auc wins for cv
        assert!(lin_line.contains("0.5000*"), "{lin_line}");
        assert!(cv_line.contains("0.9000*"), "{cv_line}");
        assert!(!cv_line.contains("1.0000*"), "{cv_line}");
    }

    #[test]
    fn spreads_report_min_median_max() {
        let records = vec![
            record("lin", MetricId::MinAde, 0.4, 0),
            record("lin", MetricId::MinAde, 0.6, 1),
            record("lin", MetricId::MinAde, 0.5, 2),
        ];
        let spreads = render_spreads(&records);
        let line = spreads.lines().nth(1).unwrap();
        assert!(line.contains("0.400000000"), "{line}");
        assert!(line.contains("0.500000000"), "{line}");
        assert!(line.contains("0.600000000"), "{line}");
        assert!(line.contains("0.200000000"), "{line}");
    }
}
