//! Binarization and the Percentage of Correct Skeletons (PCS).
//!
//! A prediction is correct at threshold `θ` when the Euclidean distance
//! between the binarized predicted image and the binarized ground truth is at
//! most `θ`. For binary images that distance is the square root of the number
//! of differing pixels.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::synth::Dataset;
use crate::tensor::Real;
use crate::training::predict_skeletons;

/// Thresholds reported by default.
pub const THRESHOLDS: [f64; 4] = [25.0, 30.0, 40.0, 50.0];
pub const STRICT_THRESHOLD: f64 = 30.0;
pub const LOOSE_THRESHOLD: f64 = 50.0;
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Binarize {
    /// Any nonzero pixel is on.
    GroundTruth,
    /// Pixels strictly above `tau` are on.
    Prediction { tau: f64 },
}

pub fn binarize(values: &[f64], rule: Binarize) -> Vec<u8> {
    match rule {
        Binarize::GroundTruth => values.iter().map(|&v| (v != 0.0) as u8).collect(),
        Binarize::Prediction { tau } => values.iter().map(|&v| (v > tau) as u8).collect(),
    }
}

pub fn euclidean_distance(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "euclidean_distance",
            a.len().to_string(),
            b.len().to_string(),
        ));
    }
    let sq: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sq.sqrt())
}

/// Fraction of distances at most `theta`.
pub fn pcs(distances: &[f64], theta: f64) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::InvalidArgument("PCS of an empty sample set".into()));
    }
    Ok(distances.iter().filter(|&&d| d <= theta).count() as f64 / distances.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Target,
    Source,
    Overall,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcsRow {
    /// `None` for the pooled row.
    pub subject: Option<u32>,
    pub role: Role,
    /// Percentages, aligned with [`PcsReport::thresholds`].
    pub pcs_percent: Vec<f64>,
    pub mean_distance: f64,
    pub sample_count: usize,
}

impl PcsRow {
    fn new(subject: Option<u32>, role: Role, distances: &[f64], thresholds: &[f64]) -> Result<Self> {
        Ok(PcsRow {
            subject,
            role,
            pcs_percent: thresholds
                .iter()
                .map(|&t| pcs(distances, t).map(|p| 100.0 * p))
                .collect::<Result<_>>()?,
            mean_distance: distances.iter().sum::<f64>() / distances.len() as f64,
            sample_count: distances.len(),
        })
    }

    pub fn label(&self) -> String {
        match (self.role, self.subject) {
            (Role::Target, Some(s)) => format!("target {s}"),
            (Role::Source, Some(s)) => format!("source {s}"),
            _ => "overall".into(),
        }
    }
}

/// Per-subject PCS, target subject first, then sources in id order, then
/// everything pooled.
#[derive(Clone, Debug, PartialEq)]
pub struct PcsReport {
    pub tau: f64,
    pub thresholds: Vec<f64>,
    pub rows: Vec<PcsRow>,
}

impl PcsReport {
    /// Builds a report from `(subject, distance)` pairs.
    pub fn from_distances(distances: &[(u32, f64)], target: u32, tau: f64, thresholds: &[f64]) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::InvalidArgument("no samples to evaluate".into()));
        }
        if thresholds.is_empty() {
            return Err(Error::InvalidArgument("no PCS thresholds".into()));
        }
        let mut by_subject: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for &(s, d) in distances {
            by_subject.entry(s).or_default().push(d);
        }
        let mut rows = Vec::new();
        if let Some(d) = by_subject.get(&target) {
            rows.push(PcsRow::new(Some(target), Role::Target, d, thresholds)?);
        }
        for (&s, d) in by_subject.iter().filter(|(&s, _)| s != target) {
            rows.push(PcsRow::new(Some(s), Role::Source, d, thresholds)?);
        }
        let all: Vec<f64> = distances.iter().map(|&(_, d)| d).collect();
        rows.push(PcsRow::new(None, Role::Overall, &all, thresholds)?);
        Ok(PcsReport {
            tau,
            thresholds: thresholds.to_vec(),
            rows,
        })
    }

    pub fn subject(&self, id: u32) -> Result<&PcsRow> {
        self.rows
            .iter()
            .find(|r| r.subject == Some(id))
            .ok_or_else(|| Error::InvalidArgument(format!("no evaluated samples for subject {id}")))
    }

    pub fn target(&self) -> Option<&PcsRow> {
        self.rows.iter().find(|r| r.role == Role::Target)
    }

    pub fn overall(&self) -> &PcsRow {
        self.rows.last().expect("report always has the pooled row")
    }

    /// PCS percentage of `row` at `theta`, if `theta` was evaluated.
    pub fn at(&self, row: &PcsRow, theta: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| t == theta)
            .map(|i| row.pcs_percent[i])
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("PCS (binarization tau = {}, ground truth nonzero)\n", self.tau);
        let _ = write!(out, "{:<12}", "subject");
        for &t in &self.thresholds {
            let tag = if t == STRICT_THRESHOLD {
                " strict"
            } else if t == LOOSE_THRESHOLD {
                " loose"
            } else {
                ""
            };
            let _ = write!(out, "{:>14}", format!("PCS@{t}{tag}"));
        }
        let _ = writeln!(out, "{:>10}{:>8}", "mean_dist", "n");
        for row in &self.rows {
            let _ = write!(out, "{:<12}", row.label());
            for p in &row.pcs_percent {
                let _ = write!(out, "{:>13.1}%", p);
            }
            let _ = writeln!(out, "{:>10.2}{:>8}", row.mean_distance, row.sample_count);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject,theta,pcs_percent,mean_distance,sample_count\n");
        for row in &self.rows {
            let subject = row.subject.map_or_else(|| "all".to_string(), |s| s.to_string());
            for (&t, p) in self.thresholds.iter().zip(&row.pcs_percent) {
                let _ = writeln!(out, "{subject},{t},{p},{},{}", row.mean_distance, row.sample_count);
            }
        }
        out
    }
}

/// Distance between the binarized prediction and the ground truth for each
/// listed sample.
pub fn skeleton_distances<T: Real>(
    params: &ModelParams<T>,
    data: &Dataset,
    indices: &[usize],
    tau: f64,
) -> Result<Vec<(u32, f64)>> {
    let predictions = predict_skeletons(params, data, indices)?;
    indices
        .iter()
        .zip(&predictions)
        .map(|(&i, pred)| {
            let sample = &data.samples[i];
            let truth: Vec<f64> = sample.skeleton.iter().map(|&v| v as f64).collect();
            let d = euclidean_distance(
                &binarize(pred, Binarize::Prediction { tau }),
                &binarize(&truth, Binarize::GroundTruth),
            )?;
            Ok((sample.subject, d))
        })
        .collect()
}

/// PCS report for the listed samples at the default thresholds.
pub fn evaluate<T: Real>(params: &ModelParams<T>, data: &Dataset, indices: &[usize], tau: f64) -> Result<PcsReport> {
    let distances = skeleton_distances(params, data, indices, tau)?;
    PcsReport::from_distances(&distances, data.target_subject(), tau, &THRESHOLDS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarization_rules() {
        let v = [0.0, 0.5, 0.5000001, 1.0, 0.2];
        assert_eq!(binarize(&v, Binarize::Prediction { tau: 0.5 }), [0, 0, 1, 1, 0]);
        assert_eq!(binarize(&v, Binarize::GroundTruth), [0, 1, 1, 1, 1]);
    }

    #[test]
    fn distance_counts_differing_pixels() {
        let a = vec![0u8; 19200];
        let mut b = a.clone();
        b[..625].fill(1);
        assert_eq!(euclidean_distance(&a, &b).unwrap(), 25.0);
        assert!(euclidean_distance(&a, &b[..10]).is_err());
    }

    #[test]
    fn pcs_threshold_is_inclusive() {
        let d = [25.0, 625f64.sqrt(), 626f64.sqrt(), 40.0];
        assert_eq!(pcs(&d, 25.0).unwrap(), 0.5);
        assert_eq!(pcs(&d, 50.0).unwrap(), 1.0);
        assert!(pcs(&[], 25.0).is_err());
    }

    #[test]
    fn report_orders_target_first() {
        let d = [(0, 10.0), (4, 60.0), (1, 30.0), (4, 20.0), (0, 45.0)];
        let r = PcsReport::from_distances(&d, 4, 0.5, &THRESHOLDS).unwrap();
        let labels: Vec<_> = r.rows.iter().map(|r| r.label()).collect();
        assert_eq!(labels, ["target 4", "source 0", "source 1", "overall"]);
        assert_eq!(r.target().unwrap().pcs_percent, [50.0, 50.0, 50.0, 50.0]);
        assert_eq!(r.overall().sample_count, 5);
        assert_eq!(r.at(r.overall(), 30.0), Some(60.0));
        assert!(r.subject(7).is_err());
        assert_eq!(r.subject(1).unwrap().mean_distance, 30.0);

        let text = r.to_text();
        assert!(text.contains("strict") && text.contains("loose") && text.contains("tau = 0.5"));
        let csv = r.to_csv();
        assert!(csv.starts_with("subject,theta,pcs_percent,mean_distance,sample_count\n"));
        assert_eq!(csv.lines().count(), 1 + 4 * 4);
        assert!(csv.contains("\nall,50,80,"));
    }
}
