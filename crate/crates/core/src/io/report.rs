use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{json, Map, Value};

use crate::data::{EstimateResult, Method};
use crate::error::{invalid, Error, Result};
use crate::sim::SimulationReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(invalid(format!("unknown output format '{other}'"))),
        }
    }
}

/// Anything the command-line tool writes.
#[derive(Debug, Clone, Copy)]
pub enum Report<'a> {
    Estimates(&'a [EstimateResult]),
    Simulation(&'a SimulationReport),
    /// Named scalar diagnostics.
    Metrics(&'a [(String, f64)]),
}

/// Fixed notation with nine decimals in `[0.1, 1e9)`, scientific with nine
/// significant digits elsewhere.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x == 0.0 || (0.1..1e9).contains(&x.abs()) {
        format!("{x:.9}")
    } else {
        format!("{x:.8e}")
    }
}

fn json_number(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(format_number(x))
    }
}

/// `<stem>_lengths.<ext>` next to `path`.
pub fn lengths_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_lengths.{ext}"))
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let file = File::create(path).map_err(io_error(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).map_err(io_error(path))?;
    w.flush().map_err(io_error(path))
}

fn coordinate_label(r: &EstimateResult, j: usize) -> String {
    if r.beta.len() == 1 {
        r.method.name().to_string()
    } else {
        format!("{}[{}]", r.method.name(), j + 1)
    }
}

fn gamma_cell(r: &EstimateResult) -> String {
    match (r.method, r.gamma) {
        (Method::Dml1 | Method::Dml2, _) | (_, None) => String::new(),
        (_, Some(g)) => format_number(g),
    }
}

fn estimates_csv(results: &[EstimateResult]) -> String {
    let mut out = String::from("method,estimate,std_error,ci_lower,ci_upper,gamma_prime\n");
    for r in results {
        for j in 0..r.beta.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                coordinate_label(r, j),
                format_number(r.beta[j]),
                format_number(r.std_error(j)),
                format_number(r.ci_lower[j]),
                format_number(r.ci_upper[j]),
                gamma_cell(r)
            ));
        }
    }
    out
}

fn estimates_json(results: &[EstimateResult]) -> Value {
    let rows: Vec<Value> = results
        .iter()
        .flat_map(|r| {
            (0..r.beta.len()).map(move |j| {
                json!({
                    "method": coordinate_label(r, j),
                    "estimate": json_number(r.beta[j]),
                    "std_error": json_number(r.std_error(j)),
                    "ci_lower": json_number(r.ci_lower[j]),
                    "ci_upper": json_number(r.ci_upper[j]),
                    "gamma_prime": r.gamma.filter(|_| !matches!(r.method, Method::Dml1 | Method::Dml2)).map(json_number),
                    "n_obs": r.n_obs,
                    "level": r.level,
                })
            })
        })
        .collect();
    Value::Array(rows)
}

/// Counts are written as integers, rates and lengths through `format_number`.
fn simulation_rows(report: &SimulationReport) -> Vec<(String, &'static str, String)> {
    let mut rows = Vec::new();
    for s in &report.methods {
        rows.push((s.method.clone(), "runs", s.runs.to_string()));
        rows.push((s.method.clone(), "failures", s.failures.to_string()));
        rows.push((s.method.clone(), "coverage", format_number(s.coverage)));
        rows.push((s.method.clone(), "rejection_rate", format_number(s.rejection_rate)));
        rows.push((s.method.clone(), "median_scaled_length", format_number(s.median_scaled_length)));
    }
    rows
}

fn simulation_csv(report: &SimulationReport) -> (String, String) {
    let mut main = String::from("method,metric,value\n");
    for (m, metric, v) in simulation_rows(report) {
        main.push_str(&format!("{m},{metric},{v}\n"));
    }
    let mut lengths = String::from("method,run,scaled_length\n");
    for s in &report.methods {
        for (run, l) in &s.ci_length_scaled {
            lengths.push_str(&format!("{},{},{}\n", s.method, run + 1, format_number(*l)));
        }
    }
    (main, lengths)
}

fn simulation_json(report: &SimulationReport) -> (Value, Value) {
    let methods: Vec<Value> = report
        .methods
        .iter()
        .map(|s| {
            json!({
                "method": s.method,
                "runs": s.runs,
                "failures": s.failures,
                "coverage": json_number(s.coverage),
                "rejection_rate": json_number(s.rejection_rate),
                "median_scaled_length": json_number(s.median_scaled_length),
            })
        })
        .collect();
    let main = json!({
        "scenario": report.scenario,
        "beta0": report.beta0,
        "N": report.n,
        "M": report.m,
        "K": report.k,
        "S": report.s,
        "level": report.level,
        "methods": methods,
    });
    let lengths: Vec<Value> = report
        .methods
        .iter()
        .flat_map(|s| {
            s.ci_length_scaled
                .iter()
                .map(move |(run, l)| json!({"method": s.method, "run": run + 1, "scaled_length": json_number(*l)}))
        })
        .collect();
    (main, Value::Array(lengths))
}

fn to_json_text(v: &Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Serialized main document and, for simulations, the per-run length table.
pub fn render_report(report: Report<'_>, format: OutputFormat) -> Result<(String, Option<String>)> {
    Ok(match (report, format) {
        (Report::Estimates(r), OutputFormat::Csv) => (estimates_csv(r), None),
        (Report::Estimates(r), OutputFormat::Json) => (to_json_text(&estimates_json(r))?, None),
        (Report::Simulation(r), OutputFormat::Csv) => {
            let (main, lengths) = simulation_csv(r);
            (main, Some(lengths))
        }
        (Report::Simulation(r), OutputFormat::Json) => {
            let (main, lengths) = simulation_json(r);
            (to_json_text(&main)?, Some(to_json_text(&lengths)?))
        }
        (Report::Metrics(rows), OutputFormat::Csv) => {
            let mut out = String::from("metric,value\n");
            for (k, v) in rows {
                out.push_str(&format!("{k},{}\n", format_number(*v)));
            }
            (out, None)
        }
        (Report::Metrics(rows), OutputFormat::Json) => {
            let map: Map<String, Value> = rows.iter().map(|(k, v)| (k.clone(), json_number(*v))).collect();
            (to_json_text(&Value::Object(map))?, None)
        }
    })
}

/// Writes a report; simulations also produce the per-run length file at
/// [`lengths_path`].
pub fn emit_report(report: Report<'_>, path: impl AsRef<Path>, format: OutputFormat) -> Result<()> {
    let path = path.as_ref();
    let (main, lengths) = render_report(report, format)?;
    write_text(path, &main)?;
    if let Some(lengths) = lengths {
        write_text(&lengths_path(path), &lengths)?;
    }
    Ok(())
}
#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(format_number(1.0), "1.000000000");
        assert_eq!(format_number(0.0), "0.000000000");
        assert_eq!(format_number(-0.459), "-0.459000000");
        assert_eq!(format_number(0.01234), "1.23400000e-2");
        assert_eq!(format_number(f64::INFINITY), "inf");
    }

    #[test]
    fn lengths_file_name() {
        assert_eq!(lengths_path(Path::new("/tmp/r.csv")), PathBuf::from("/tmp/r_lengths.csv"));
    }
}
