use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bleu::{Bleu, MAX_ORDER};
use crate::error::{Error, Result};

/// Mean and sample standard deviation (n − 1 denominator).
pub fn aggregate_runs(scores: &[f64]) -> Result<(f64, f64)> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::Usage(format!("aggregation needs at least 2 runs, got {n}")));
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, var.sqrt()))
}

/// `"8.7 ± 0.3"`.
pub fn format_pm(mean: f64, std: f64) -> String {
    format!("{mean:.1} ± {std:.1}")
}

/// Identity of a reference set; reports are only comparable when equal.
pub fn test_set_hash<S: AsRef<str>>(references: &[S]) -> String {
    let mut h = Sha256::new();
    for r in references {
        h.update(r.as_ref().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub seed: u64,
    pub bleu: Bleu,
}

/// BLEU of one model type on one test set across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub label: String,
    pub direction: String,
    pub test_hash: String,
    pub runs: Vec<RunScore>,
    pub mean: f64,
    /// Absent for a single run.
    pub std: Option<f64>,
}

impl BleuReport {
    pub fn new(label: impl Into<String>, direction: impl Into<String>, test_hash: impl Into<String>, runs: Vec<RunScore>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Usage("a report needs at least one run".into()));
        }
        let scores: Vec<f64> = runs.iter().map(|r| r.bleu.score).collect();
        let (mean, std) = match aggregate_runs(&scores) {
            Ok((m, s)) => (m, Some(s)),
            Err(_) => (scores[0], None),
        };
        Ok(Self {
            label: label.into(),
            direction: direction.into(),
            test_hash: test_hash.into(),
            runs,
            mean,
            std,
        })
    }

    pub fn scores(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.bleu.score).collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }

    pub fn mean_precisions(&self) -> [f64; MAX_ORDER] {
        let mut p = [0.0; MAX_ORDER];
        for r in &self.runs {
            for (acc, x) in p.iter_mut().zip(r.bleu.precisions) {
                *acc += x / self.runs.len() as f64;
            }
        }
        p
    }

    pub fn mean_brevity_penalty(&self) -> f64 {
        self.runs.iter().map(|r| r.bleu.brevity_penalty).sum::<f64>() / self.runs.len() as f64
    }

    pub fn render(&self) -> String {
        match self.std {
            Some(s) => format_pm(self.mean, s),
            None => format!("{:.1}", self.mean),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub model: String,
    pub baseline: String,
    pub gain: f64,
    /// Quadrature sum of both standard deviations.
    pub gain_std: Option<f64>,
}

impl GainReport {
    pub fn render(&self) -> String {
        match self.gain_std {
            Some(s) => format_pm(self.gain, s),
            None => format!("{:.1}", self.gain),
        }
    }
}

/// `model − baseline` on the same test set, uncertainties in quadrature.
pub fn gain(model: &BleuReport, baseline: &BleuReport) -> Result<GainReport> {
    if model.test_hash != baseline.test_hash || model.direction != baseline.direction {
        return Err(Error::Usage(format!(
            "cannot compare {} on {} with {} on {}: different test sets",
            model.label, model.direction, baseline.label, baseline.direction
        )));
    }
    Ok(gain_from_stats(
        &model.label,
        &baseline.label,
        (model.mean, model.std),
        (baseline.mean, baseline.std),
    ))
}

/// Gain from bare `(mean, std)` pairs.
pub fn gain_from_stats(model: &str, baseline: &str, m: (f64, Option<f64>), b: (f64, Option<f64>)) -> GainReport {
    GainReport {
        model: model.to_string(),
        baseline: baseline.to_string(),
        gain: m.0 - b.0,
        gain_std: m.1.zip(b.1).map(|(x, y)| x.hypot(y)),
    }
}

/// One row of the final table; `report` is `None` for a cell whose runs
/// all failed or are missing.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub protocol: String,
    pub direction: String,
    pub report: Option<BleuReport>,
    pub gain: Option<GainReport>,
}

const MISSING: &str = "missing";

/// Aligned plain-text table: model, direction, BLEU, gain, seeds.
pub fn render_table(rows: &[ReportRow]) -> String {
    let header = ["Model", "Direction", "BLEU", "Gain", "Seeds"];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.protocol.clone(),
                r.direction.clone(),
                r.report.as_ref().map_or(MISSING.to_string(), BleuReport::render),
                r.gain.as_ref().map_or("-".to_string(), GainReport::render),
                r.report.as_ref().map_or("0".to_string(), |b| b.runs.len().to_string()),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for c in &cells {
        for (w, s) in widths.iter_mut().zip(c) {
            *w = (*w).max(s.chars().count());
        }
    }
    let line = |c: &[String]| {
        let mut s = c
            .iter()
            .zip(widths)
            .map(|(x, w)| format!("{x}{}", " ".repeat(w - x.chars().count())))
            .collect::<Vec<_>>()
            .join("  ");
        s.truncate(s.trim_end().len());
        s + "\n"
    };
    let mut out = line(&header.map(String::from));
    out.push_str(&line(&widths.map(|w| "-".repeat(w))));
    for c in &cells {
        out.push_str(&line(c));
    }
    out
}

/// `protocol,direction,mean,std,gain,gain_std,seeds` with seeds joined by
/// `;`. Unknown values are empty.
pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("protocol,direction,mean,std,gain,gain_std,seeds\n");
    let num = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.4}"));
    for r in rows {
        let b = r.report.as_ref();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.protocol,
            r.direction,
            num(b.map(|b| b.mean)),
            num(b.and_then(|b| b.std)),
            num(r.gain.as_ref().map(|g| g.gain)),
            num(r.gain.as_ref().and_then(|g| g.gain_std)),
            b.map_or(String::new(), |b| b
                .seeds()
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(";")),
        ));
    }
    out
}
