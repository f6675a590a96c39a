//! Image metrics, per-task controllability and evaluation tables.

mod vl;

pub use vl::{parse_vl_response, vl_request_body, HttpEvaluator, MockEvaluator, VlEvaluator};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tasks::{apply_condition, edge_map, edges_from_condition, TaskKind, TaskSample, TaskSpec};

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean squared difference over all pixels and channels.
pub fn mse_metric(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n)
}

/// Mean SSIM over all sliding 8×8 windows (stride 1) and channels.
pub fn ssim_metric(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "{h}×{w} image is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"
        )));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        let p = a.pixel(y, x)[c] as f64;
                        let q = b.pixel(y, x)[c] as f64;
                        sa += p;
                        sb += q;
                        saa += p * p;
                        sbb += q * q;
                        sab += p * q;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = (saa / n - ma * ma).max(0.0);
                let vb = (sbb / n - mb * mb).max(0.0);
                let cov = sab / n - ma * mb;
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Pixel-classification F1. Two empty maps count as a perfect match.
pub fn edge_f1(pred: &[bool], truth: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::dim(format!(
            "edge maps of {} and {} pixels",
            pred.len(),
            truth.len()
        )));
    }
    let tp = pred.iter().zip(truth).filter(|(&p, &t)| p && t).count() as f64;
    let np = pred.iter().filter(|&&p| p).count() as f64;
    let nt = truth.iter().filter(|&&t| t).count() as f64;
    if np == 0.0 && nt == 0.0 {
        return Ok(1.0);
    }
    if tp == 0.0 {
        return Ok(0.0);
    }
    let (p, r) = (tp / np, tp / nt);
    Ok(2.0 * p * r / (p + r))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMetric {
    Mse,
    F1,
}

/// Metrics of one generated image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllabilityReport {
    pub task: TaskKind,
    pub metric: ControlMetric,
    /// Condition re-extracted from the output versus the given condition.
    pub controllability: f64,
    pub ssim: f64,
    pub mse: f64,
    /// Slots for scores computed by external networks.
    pub fid: Option<f64>,
    pub dino: Option<f64>,
    pub clip_i: Option<f64>,
    pub clip_t: Option<f64>,
    pub vl_score: Option<f64>,
}

/// Re-applies the task operator to `generated` and compares it with the
/// sample's condition. Depth and subject tasks, whose operator cannot be
/// re-applied to the output, compare against the target instead.
pub fn controllability_report(
    spec: &TaskSpec,
    generated: &Image,
    sample: &TaskSample,
) -> Result<ControllabilityReport> {
    let (metric, controllability) = match spec.kind {
        TaskKind::Edges => {
            let pred = edge_map(generated, spec.edge_threshold);
            (
                ControlMetric::F1,
                edge_f1(&pred, &edges_from_condition(&sample.condition))?,
            )
        }
        TaskKind::DepthPredict | TaskKind::SubjectToy => (ControlMetric::Mse, mse_metric(generated, &sample.target)?),
        _ => {
            let extracted = apply_condition(generated, spec, sample.draw)?;
            (ControlMetric::Mse, mse_metric(&extracted, &sample.condition)?)
        }
    };
    Ok(ControllabilityReport {
        task: spec.kind,
        metric,
        controllability,
        ssim: ssim_metric(generated, &sample.target)?,
        mse: mse_metric(generated, &sample.target)?,
        fid: None,
        dino: None,
        clip_i: None,
        clip_t: None,
        vl_score: None,
    })
}

/// One evaluated sample, written as a JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub index: usize,
    pub prompt: String,
    #[serde(flatten)]
    pub report: ControllabilityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub task: TaskKind,
    pub n: usize,
    pub mean_controllability: f64,
    pub mean_ssim: f64,
    pub mean_mse: f64,
}

pub fn aggregate(records: &[EvalRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<&str, Vec<&ControllabilityReport>> = BTreeMap::new();
    for r in records {
        groups.entry(r.report.task.as_str()).or_default().push(&r.report);
    }
    groups
        .into_values()
        .map(|g| {
            let n = g.len();
            let mean = |f: fn(&ControllabilityReport) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n as f64;
            AggregateRow {
                task: g[0].task,
                n,
                mean_controllability: mean(|r| r.controllability),
                mean_ssim: mean(|r| r.ssim),
                mean_mse: mean(|r| r.mse),
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("task,n,mean_controllability,mean_ssim,mean_mse\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            r.task, r.n, r.mean_controllability, r.mean_ssim, r.mean_mse
        ));
    }
    out
}
