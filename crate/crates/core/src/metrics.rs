//! Dice and joint-error metrics, and per-domain aggregation into
//! `mean ± std` tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Mask;
use crate::kinematics::{JointConfig, JointKind};

/// `2|P∩G| / (|P|+|G|)`, with two empty masks scoring 1.
pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::DimensionMismatch(format!(
            "masks are {}x{} and {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        inter += (p && g) as usize;
        total += p as usize + g as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

fn check_lengths(kinds: &[JointKind], a: &JointConfig, b: &JointConfig) -> Result<()> {
    for n in [a.len(), b.len()] {
        if n != kinds.len() {
            return Err(Error::LengthMismatch {
                expected: kinds.len(),
                actual: n,
            });
        }
    }
    Ok(())
}

fn mean_abs_of(kinds: &[JointKind], want: JointKind, a: &JointConfig, b: &JointConfig, convert: fn(f64) -> f64) -> Result<f64> {
    check_lengths(kinds, a, b)?;
    let diffs: Vec<f64> = kinds
        .iter()
        .zip(a.values().iter().zip(b.values()))
        .filter(|(k, _)| **k == want)
        .map(|(_, (x, y))| convert((x - y).abs()))
        .collect();
    if diffs.is_empty() {
        return Ok(0.0);
    }
    Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
}

/// Mean absolute difference over revolute joints, in degrees. Zero when the
/// chain has no revolute joint.
pub fn joint_mae(kinds: &[JointKind], a: &JointConfig, b: &JointConfig) -> Result<f64> {
    mean_abs_of(kinds, JointKind::Revolute, a, b, f64::to_degrees)
}

/// Mean absolute difference over prismatic joints, in mm.
pub fn prismatic_mae_mm(kinds: &[JointKind], a: &JointConfig, b: &JointConfig) -> Result<f64> {
    mean_abs_of(kinds, JointKind::Prismatic, a, b, |m| m * 1e3)
}

/// Per-frame evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub frame_id: usize,
    pub dice_initial: f64,
    pub dice_final: f64,
    pub mae_initial_deg: f64,
    pub mae_final_deg: f64,
    pub prismatic_initial_mm: f64,
    pub prismatic_final_mm: f64,
    pub iterations: usize,
    pub domain: String,
}

impl EvalRecord {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("dice_initial", self.dice_initial), ("dice_final", self.dice_final)] {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::invalid(format!("{name} = {d} lies outside [0, 1]")));
            }
        }
        for (name, m) in [
            ("mae_initial_deg", self.mae_initial_deg),
            ("mae_final_deg", self.mae_final_deg),
            ("prismatic_initial_mm", self.prismatic_initial_mm),
            ("prismatic_final_mm", self.prismatic_final_mm),
        ] {
            if !(m >= 0.0) {
                return Err(Error::invalid(format!("{name} = {m} is negative")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyList);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub domain: String,
    pub frames: usize,
    pub dice_initial: Stat,
    pub dice_final: Stat,
    pub mae_initial_deg: Stat,
    pub mae_final_deg: Stat,
    pub prismatic_initial_mm: Stat,
    pub prismatic_final_mm: Stat,
    pub iterations: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// One row per domain, in order of first appearance.
    pub domains: Vec<DomainSummary>,
}

/// Per-domain mean ± population std of every metric.
pub fn aggregate(records: &[EvalRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.domain.as_str()) {
            order.push(&r.domain);
        }
    }
    let domains = order
        .into_iter()
        .map(|d| {
            let rs: Vec<&EvalRecord> = records.iter().filter(|r| r.domain == d).collect();
            let stat = |f: fn(&EvalRecord) -> f64| Stat::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            Ok(DomainSummary {
                domain: d.to_string(),
                frames: rs.len(),
                dice_initial: stat(|r| r.dice_initial)?,
                dice_final: stat(|r| r.dice_final)?,
                mae_initial_deg: stat(|r| r.mae_initial_deg)?,
                mae_final_deg: stat(|r| r.mae_final_deg)?,
                prismatic_initial_mm: stat(|r| r.prismatic_initial_mm)?,
                prismatic_final_mm: stat(|r| r.prismatic_final_mm)?,
                iterations: stat(|r| r.iterations as f64)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Summary { domains })
}

impl Summary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table; Dice is shown in percent like the usual tables.
    pub fn to_table(&self) -> String {
        let header = ["domain", "n", "Dice init", "Dice final", "MAE init (deg)", "MAE final (deg)", "ins. init (mm)", "ins. final (mm)", "iters"];
        let pm = |s: Stat, scale: f64, digits: usize| format!("{:.*} ± {:.*}", digits, s.mean * scale, digits, s.std * scale);
        let rows: Vec<Vec<String>> = self
            .domains
            .iter()
            .map(|d| {
                vec![
                    d.domain.clone(),
                    d.frames.to_string(),
                    pm(d.dice_initial, 100.0, 1),
                    pm(d.dice_final, 100.0, 1),
                    pm(d.mae_initial_deg, 1.0, 2),
                    pm(d.mae_final_deg, 1.0, 2),
                    pm(d.prismatic_initial_mm, 1.0, 2),
                    pm(d.prismatic_final_mm, 1.0, 2),
                    pm(d.iterations, 1.0, 1),
                ]
            })
            .collect();
        render_table(&header, &rows)
    }
}

/// Left-aligned first column, right-aligned others, two-space gutters.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len().saturating_sub(1));
    let _ = writeln!(out, "{}", "-".repeat(total));
    for row in rows {
        line(row.iter().map(|s| s.as_str()).collect(), &mut out);
    }
    out
}

pub const CSV_HEADER: &str = "frame_id,domain,dice_initial,dice_final,mae_initial_deg,mae_final_deg,prismatic_initial_mm,prismatic_final_mm,iterations";

/// One row per record, floats in shortest round-trip form.
pub fn records_to_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.frame_id,
            r.domain,
            r.dice_initial,
            r.dice_final,
            r.mae_initial_deg,
            r.mae_final_deg,
            r.prismatic_initial_mm,
            r.prismatic_final_mm,
            r.iterations
        );
    }
    out
}

pub fn write_csv(records: &[EvalRecord], path: &Path) -> Result<()> {
    std::fs::write(path, records_to_csv(records)).map_err(|e| Error::io(path, e))
}
