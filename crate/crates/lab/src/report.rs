//! Output files for one experiment run.
//!
//! `report.csv`, `curves.csv` and `resolved_config.txt` depend only on the
//! configuration, so repeated runs produce identical bytes. Wall-clock time
//! goes to `summary.txt` alone.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use d2dce_core::experiments::{median, ExperimentReport, MoGSpec};
use d2dce_core::trainer::MetricsRow;

use crate::config::Resolved;
use crate::error::{io_err, Result};

pub const REPORT_FILE: &str = "report.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const CONFIG_FILE: &str = "resolved_config.txt";
pub const SUMMARY_FILE: &str = "summary.txt";

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().flexible(false).from_writer(out)
}

/// One row per cell: final distances or the divergence message.
pub fn write_report<W: Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let classes = report.spec.classes();
    let mut w = csv_writer(out);
    let mut header = vec![
        "experiment".to_string(),
        "label".into(),
        "seed".into(),
        "status".into(),
        "marginal_w1".into(),
    ];
    header.extend((0..classes).map(|k| format!("class_{k}_w1")));
    header.extend(["detail".to_string(), "note".into()]);
    w.write_record(&header)?;
    for cell in &report.cells {
        let mut row = vec![
            report.experiment.to_string(),
            cell.label.clone(),
            cell.seed.to_string(),
            if cell.diverged.is_some() {
                "diverged"
            } else {
                "ok"
            }
            .to_string(),
            cell.marginal_w1.map(|v| v.to_string()).unwrap_or_default(),
        ];
        for k in 0..classes {
            row.push(
                cell.per_class_w1
                    .get(k)
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
            );
        }
        row.push(cell.diverged.clone().unwrap_or_default());
        row.push(cell.note.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err("report"))?;
    Ok(())
}

/// Every logged metrics row of every cell.
pub fn write_curves<W: Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    let mut header = vec!["label", "seed"];
    header.extend(MetricsRow::HEADER);
    w.write_record(&header)?;
    for cell in &report.cells {
        for row in &cell.curves {
            let mut rec = vec![cell.label.clone(), cell.seed.to_string()];
            rec.extend(row.values().iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(io_err("curves"))?;
    Ok(())
}

fn describe_spec(spec: &MoGSpec) -> String {
    let parts: Vec<String> = spec
        .components()
        .iter()
        .map(|c| {
            let mean: Vec<String> = c.mean.iter().map(|m| format!("{m:.4}")).collect();
            format!("N(({}), {}^2) w={:.4}", mean.join(", "), c.std, c.weight)
        })
        .collect();
    if parts.len() <= 6 {
        parts.join("; ")
    } else {
        format!(
            "{}; ... ({} components)",
            parts[..3].join("; "),
            parts.len()
        )
    }
}

/// Human-readable digest: data description, per-label medians and timing.
pub fn summary_text(resolved: &Resolved, report: &ExperimentReport, elapsed: Duration) -> String {
    let mut s = String::new();
    let data = resolved
        .entries()
        .iter()
        .find(|(k, _)| *k == "data")
        .map_or("", |(_, v)| v.as_str());
    let _ = writeln!(s, "experiment: {}", report.experiment);
    let _ = writeln!(
        s,
        "data: {data} (toy stand-in mixture, {} classes in {} dimension(s))",
        report.spec.classes(),
        report.spec.dim()
    );
    let _ = writeln!(s, "components: {}", describe_spec(&report.spec));
    let seeds: Vec<String> = report.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(s, "seeds: {}", seeds.join(", "));
    let mut labels: Vec<&str> = Vec::new();
    for c in &report.cells {
        if !labels.contains(&c.label.as_str()) {
            labels.push(&c.label);
        }
    }
    for label in labels {
        let cells: Vec<_> = report.cells.iter().filter(|c| c.label == label).collect();
        let w1: Vec<f64> = cells.iter().filter_map(|c| c.marginal_w1).collect();
        let diverged = cells.iter().filter(|c| c.diverged.is_some()).count();
        let med = median(&w1).map_or_else(|| "n/a".to_string(), |m| format!("{m:.4}"));
        let _ = write!(
            s,
            "{label}: median marginal W1 {med} over {} run(s)",
            w1.len()
        );
        if diverged > 0 {
            let _ = write!(s, ", {diverged} diverged");
        }
        if let Some(note) = cells.iter().find_map(|c| c.note.as_deref()) {
            let _ = write!(s, " [{note}]");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "wall-clock: {:.1} s", elapsed.as_secs_f64());
    s
}

/// Writes all four files into `dir`, creating it if needed.
pub fn write_all(
    dir: &Path,
    resolved: &Resolved,
    report: &ExperimentReport,
    elapsed: Duration,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let open = |name: &str| {
        let path = dir.join(name);
        fs::File::create(&path).map_err(io_err(path))
    };
    write_report(report, open(REPORT_FILE)?)?;
    write_curves(report, open(CURVES_FILE)?)?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, resolved.to_text()).map_err(io_err(path))?;
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, summary_text(resolved, report, elapsed)).map_err(io_err(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use d2dce_core::experiments::CellResult;

    fn report() -> ExperimentReport {
        let cell = |label: &str, seed, w1: Option<f64>, diverged: Option<&str>| CellResult {
            label: label.into(),
            seed,
            marginal_w1: w1,
            per_class_w1: w1.map(|v| vec![v, 2.0 * v, 3.0 * v]).unwrap_or_default(),
            curves: Vec::new(),
            diverged: diverged.map(String::from),
            note: None,
        };
        ExperimentReport {
            experiment: "mog",
            spec: MoGSpec::overlapped(),
            seeds: vec![0, 1],
            cells: vec![
                cell("acgan", 0, Some(0.125), None),
                cell("acgan", 1, None, Some("diverged at iteration 3, x")),
            ],
        }
    }

    #[test]
    fn report_rows_carry_status_and_exact_values() {
        let mut buf = Vec::new();
        write_report(&report(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "experiment,label,seed,status,marginal_w1,class_0_w1,class_1_w1,class_2_w1,detail,note"
        );
        assert_eq!(lines[1], "mog,acgan,0,ok,0.125,0.125,0.25,0.375,,");
        assert_eq!(
            lines[2],
            "mog,acgan,1,diverged,,,,,\"diverged at iteration 3, x\","
        );
    }

    #[test]
    fn curves_header_matches_metrics() {
        let mut buf = Vec::new();
        write_curves(&report(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            format!("label,seed,{}", MetricsRow::HEADER.join(","))
        );
    }
}
