//! CSV writers and readers for every file this tool exchanges.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file
//! read back reproduces the original values bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use qflow::array::Array;
use qflow::losses::LossReport;
use qflow::metrics::EvalReport;
use qflow::ode::Trajectory;

use crate::error::CliError;

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// Data batches: header `x_1,…,x_d`, one row per sample.
pub fn render_data(batch: &Array) -> String {
    let mut out = String::new();
    let header: Vec<String> = (1..=batch.cols()).map(|j| format!("x_{j}")).collect();
    let _ = writeln!(out, "{}", header.join(","));
    for i in 0..batch.rows() {
        let row: Vec<String> = batch.row(i).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn write_data(path: &Path, batch: &Array) -> Result<(), CliError> {
    write_file(path, &render_data(batch))
}

/// Read a points CSV (the `render_data` schema; header mandatory).
pub fn read_points(path: &Path) -> Result<Array, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CliError::Config(format!("{}: empty CSV", path.display())))?;
    let cols = header.split(',').count();
    if cols == 0 || !header.starts_with("x_1") {
        return Err(CliError::Config(format!("{}: expected header x_1,…,x_d", path.display())));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| CliError::Config(format!("{}:{}: bad number '{tok}'", path.display(), lineno + 2)))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != cols {
            return Err(CliError::Config(format!(
                "{}:{}: expected {cols} columns, found {}",
                path.display(),
                lineno + 2,
                values.len()
            )));
        }
        data.extend(values);
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Config(format!("{}: no data rows", path.display())));
    }
    Ok(Array::from_vec(rows, cols, data))
}

/// Trajectories: `sample_id,t,x_1,…,x_d`, one row per (sample, fine time).
pub fn render_trajectory(traj: &Trajectory) -> String {
    let d = traj.states[0].cols();
    let mut out = String::new();
    let mut header = String::from("sample_id,t");
    for j in 1..=d {
        let _ = write!(header, ",x_{j}");
    }
    let _ = writeln!(out, "{header}");
    for sample in 0..traj.states[0].rows() {
        for (ti, t) in traj.times.iter().enumerate() {
            let mut line = format!("{sample},{t}");
            for v in traj.states[ti].row(sample) {
                let _ = write!(line, ",{v}");
            }
            let _ = writeln!(out, "{line}");
        }
    }
    out
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    write_file(path, &render_trajectory(traj))
}

/// Training log: `iter,phase,kl,w2,total,gamma`, one row per flow epoch.
pub fn render_losses(log: &[LossReport]) -> String {
    let mut out = String::from("iter,phase,kl,w2,total,gamma\n");
    for (i, report) in log.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            i + 1,
            report.phase,
            report.kl(),
            report.w2(),
            report.total,
            report.gamma
        );
    }
    out
}

pub fn write_losses(path: &Path, log: &[LossReport]) -> Result<(), CliError> {
    write_file(path, &render_losses(log))
}

/// Metric reports: `metric,value,samples,seed,config_digest`.
pub fn render_reports(reports: &[EvalReport]) -> String {
    let mut out = String::from("metric,value,samples,seed,config_digest\n");
    for r in reports {
        let _ = writeln!(out, "{},{},{},{},{}", r.metric, r.value, r.samples, r.seed, r.config_digest);
    }
    out
}

pub fn write_reports(path: &Path, reports: &[EvalReport]) -> Result<(), CliError> {
    write_file(path, &render_reports(reports))
}

/// Per-point ratio estimates: the input columns plus `log_ratio` and, when
/// an analytic reference exists, `true_log_ratio`.
pub fn render_ratio_estimates(points: &Array, estimates: &[f64], truth: Option<&[f64]>) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = (1..=points.cols()).map(|j| format!("x_{j}")).collect();
    header.push("log_ratio".into());
    if truth.is_some() {
        header.push("true_log_ratio".into());
    }
    let _ = writeln!(out, "{}", header.join(","));
    for i in 0..points.rows() {
        let mut row: Vec<String> = points.row(i).iter().map(|v| v.to_string()).collect();
        row.push(estimates[i].to_string());
        if let Some(t) = truth {
            row.push(t[i].to_string());
        }
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use qflow::ode::{fields, integrate, TimeGrid};

    #[test]
    fn data_round_trip_preserves_bits() {
        let batch = Array::from_vec(3, 2, vec![0.1, -2.5e-17, 1.0 / 3.0, f64::MIN_POSITIVE, 42.0, -0.0]);
        let dir = std::env::temp_dir().join(format!("qflow-csv-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("points.csv");
        write_data(&path, &batch).unwrap();
        let back = read_points(&path).unwrap();
        for (a, b) in batch.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn trajectory_schema_one_row_per_sample_time() {
        let x = Array::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let grid = TimeGrid::uniform(2, 2);
        let traj = integrate(&fields::Zero, &x, 0.0, 1.0, &grid).unwrap();
        let text = render_trajectory(&traj);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample_id,t,x_1,x_2");
        assert_eq!(lines.len(), 1 + 2 * 5); // 2 samples × 5 fine times
        // zero field: constant rows per sample
        assert!(lines[1].starts_with("0,0,1,2"));
        assert!(lines[5].ends_with(",1,2"));
    }

    #[test]
    fn read_points_validates() {
        let dir = std::env::temp_dir().join(format!("qflow-csv-test2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "x_1,x_2\n1.0\n").unwrap();
        assert!(read_points(&path).is_err());
        std::fs::write(&path, "wrong,header\n1.0,2.0\n").unwrap();
        assert!(read_points(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
