//! CSV export of traces and aggregates with `%g`-style numbers.

use std::io::{self, Write};

use super::experiment::ExperimentResult;

pub const TRACE_HEADER: &str = "experiment,mode,snr_e_db,trial,iteration,nmse_db,clamps";
pub const AGGREGATE_HEADER: &str = "experiment,mode,snr_e_db,mean_nmse_db,trials,diverged";

/// Six significant digits, trailing zeros trimmed, scientific notation
/// outside `[1e-4, 1e6)` like C's `%g`.
pub fn format_g(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn write_trace_csv<W: Write>(mut out: W, result: &ExperimentResult) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    let name = escape(&result.name);
    for trial in &result.trials {
        for outcome in &trial.outcomes {
            for rec in &outcome.records {
                writeln!(
                    out,
                    "{name},{},{},{},{},{},{}",
                    outcome.mode.label(),
                    format_g(trial.snr_e_db),
                    trial.trial,
                    rec.iteration,
                    rec.nmse_db.map_or_else(|| "nan".into(), format_g),
                    rec.clamps
                )?;
            }
        }
    }
    out.flush()
}

pub fn write_aggregate_csv<W: Write>(mut out: W, result: &ExperimentResult) -> io::Result<()> {
    writeln!(out, "{AGGREGATE_HEADER}")?;
    let name = escape(&result.name);
    for row in &result.aggregate {
        writeln!(
            out,
            "{name},{},{},{},{},{}",
            row.mode.label(),
            format_g(row.snr_e_db),
            row.mean_nmse_db.map_or_else(|| "nan".into(), format_g),
            row.trials,
            row.diverged
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_c_style_g() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-12.5, "-12.5"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (999999.5, "1e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-27.123456789, "-27.1235"),
            (f64::NEG_INFINITY, "-inf"),
        ];
        for (v, want) in cases {
            assert_eq!(format_g(v), want, "{v}");
        }
    }

    #[test]
    fn escaping() {
        assert_eq!(escape("plain"), "plain");
        assert_eq!(escape("a,b"), "\"a,b\"");
    }
}
