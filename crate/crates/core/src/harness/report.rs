use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::metrics::RoundMetrics;
use super::runner::ExperimentReport;
use crate::error::Result;

pub const CSV_HEADER: [&str; 7] =
    ["round", "method", "accuracy", "trained_ratio", "comm_ratio", "interference", "mean_r_eff"];

/// Formats `x` with 10 significant digits. Zero prints as `0`, missing or
/// non-finite values as `NaN`.
pub fn fmt_sig10(x: Option<f64>) -> String {
    let Some(x) = x.filter(|v| v.is_finite()) else {
        return "NaN".to_string();
    };
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&exp) {
        return format!("{x:.9e}");
    }
    let decimals = (9 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Writes one CSV row per round of each report under a single header.
pub fn write_csv<W: Write>(reports: &[&ExperimentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for rep in reports {
        for r in &rep.rounds {
            w.write_record([
                r.round.to_string(),
                rep.method.name().to_string(),
                fmt_sig10(Some(r.test_accuracy)),
                fmt_sig10(Some(r.trained_param_ratio)),
                fmt_sig10(Some(r.communicated_param_ratio)),
                fmt_sig10(r.interference_fnorm),
                fmt_sig10(Some(r.mean_r_eff())),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(reports: &[&ExperimentReport]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is ascii"))
}

#[derive(Debug, Serialize)]
struct RoundDump<'a> {
    round: usize,
    weights: &'a [f64],
    r_eff: &'a [usize],
    delta_fnorm: f64,
    accuracy: f64,
}

pub fn round_dump_json(r: &RoundMetrics) -> String {
    let dump = RoundDump {
        round: r.round,
        weights: &r.weights,
        r_eff: &r.participant_r_eff,
        delta_fnorm: r.delta_fnorm,
        accuracy: r.test_accuracy,
    };
    serde_json::to_string_pretty(&dump).expect("round dump serializes")
}

/// Writes `round_0001.json`, `round_0002.json`, ... into `dir`.
pub fn dump_rounds(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for r in &report.rounds {
        fs::write(dir.join(format!("round_{:04}.json", r.round)), round_dump_json(r))?;
    }
    Ok(())
}
