//! Quality metrics, stage profiling and embedding diagnostics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{Clip, Frame};
use crate::data::frames_tensor;
use crate::drl::DrlModel;
use crate::net::StageTrace;
use crate::{Error, Result};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn check_same(a: &Frame, b: &Frame) -> Result<()> {
    if !a.same_size(b) {
        return Err(Error::Shape(format!(
            "frames are {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_same(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

pub fn psnr_with_peak(a: &Frame, b: &Frame, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP))
}

/// PSNR in dB for 8-bit content.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    psnr_with_peak(a, b, 255.0)
}

fn gaussian_1d() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filtering restricted to positions where the window fits.
fn filter_valid(v: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * v[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over every position where the 11x11
/// Gaussian window fits, constants for an 8-bit peak.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_same(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!("{w}x{h} frame is smaller than the {SSIM_WINDOW}px window")));
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let g = gaussian_1d();
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(f).collect::<Vec<_>>();
    let mx = filter_valid(x, w, h, &g);
    let my = filter_valid(y, w, h, &g);
    let sxx = filter_valid(&prod(&|i| x[i] * x[i]), w, h, &g);
    let syy = filter_valid(&prod(&|i| y[i] * y[i]), w, h, &g);
    let sxy = filter_valid(&prod(&|i| x[i] * y[i]), w, h, &g);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mx[i], my[i]);
            let va = sxx[i] - ma * ma;
            let vb = syy[i] - mb * mb;
            let cov = sxy[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr_degraded: f64,
    pub psnr_enhanced: f64,
    pub delta_psnr: f64,
    pub ssim_degraded: f64,
    pub ssim_enhanced: f64,
    pub delta_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qp: Option<i32>,
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr_degraded: f64,
    pub mean_psnr_enhanced: f64,
    pub mean_delta_psnr: f64,
    pub mean_ssim_degraded: f64,
    pub mean_ssim_enhanced: f64,
    pub mean_delta_ssim: f64,
}

impl MetricsReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Per-frame curve, one row per frame.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows(path.as_ref(), &self.frames)
    }
}

fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{other:?}")),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Degraded and enhanced quality against the raw clip, frame by frame.
pub fn delta_metrics(raw: &Clip, degraded: &Clip, enhanced: &Clip) -> Result<MetricsReport> {
    if raw.len() != degraded.len() || raw.len() != enhanced.len() {
        return Err(Error::Shape(format!(
            "clips have {}, {} and {} frames",
            raw.len(),
            degraded.len(),
            enhanced.len()
        )));
    }
    let frames = (0..raw.len())
        .map(|i| {
            let (r, d, e) = (raw.frame(i), degraded.frame(i), enhanced.frame(i));
            let (pd, pe) = (psnr(d, r)?, psnr(e, r)?);
            let (sd, se) = (ssim(d, r)?, ssim(e, r)?);
            Ok(FrameMetrics {
                frame: i,
                psnr_degraded: pd,
                psnr_enhanced: pe,
                delta_psnr: pe - pd,
                ssim_degraded: sd,
                ssim_enhanced: se,
                delta_ssim: se - sd,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        qp: degraded.qp,
        mean_psnr_degraded: mean(frames.iter().map(|f| f.psnr_degraded)),
        mean_psnr_enhanced: mean(frames.iter().map(|f| f.psnr_enhanced)),
        mean_delta_psnr: mean(frames.iter().map(|f| f.delta_psnr)),
        mean_ssim_degraded: mean(frames.iter().map(|f| f.ssim_degraded)),
        mean_ssim_enhanced: mean(frames.iter().map(|f| f.ssim_enhanced)),
        mean_delta_ssim: mean(frames.iter().map(|f| f.delta_ssim)),
        frames,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageProfile {
    pub qp: Option<i32>,
    pub frames: usize,
    pub mean_executed_stages: f64,
    pub mean_cost: f64,
    pub mean_htar_seconds: f64,
    pub mean_wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    /// Ordered by qp, unknown qp first.
    pub groups: Vec<StageProfile>,
    pub stages_monotone: bool,
    pub cost_monotone: bool,
    pub time_monotone: bool,
    /// Every trace's cost equals its stage count times one stage's cost.
    pub cost_proportional: bool,
    /// Mean cost of the lowest-qp group over the highest.
    pub cost_ratio: f64,
}

impl ProfileReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows(path.as_ref(), &self.groups)
    }
}

fn non_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1])
}

/// Mean depth, cost and time per qp group.
pub fn profile_stages(traces: &[StageTrace]) -> Result<ProfileReport> {
    if traces.is_empty() {
        return Err(Error::Validation("no traces to profile".into()));
    }
    let mut by_qp: BTreeMap<Option<i32>, Vec<&StageTrace>> = BTreeMap::new();
    for t in traces {
        by_qp.entry(t.qp).or_default().push(t);
    }
    let groups: Vec<StageProfile> = by_qp
        .into_iter()
        .map(|(qp, ts)| StageProfile {
            qp,
            frames: ts.len(),
            mean_executed_stages: mean(ts.iter().map(|t| t.executed_stages as f64)),
            mean_cost: mean(ts.iter().map(|t| t.total_cost() as f64)),
            mean_htar_seconds: mean(ts.iter().map(|t| t.htar_wall_time)),
            mean_wall_seconds: mean(ts.iter().map(|t| t.wall_time)),
        })
        .collect();
    let col = |f: fn(&StageProfile) -> f64| groups.iter().map(f).collect::<Vec<_>>();
    let cost_proportional = traces.iter().all(|t| {
        t.per_stage_cost.len() == t.executed_stages && t.per_stage_cost.iter().all(|&c| c == t.per_stage_cost[0])
    });
    let (first, last) = (&groups[0], &groups[groups.len() - 1]);
    Ok(ProfileReport {
        stages_monotone: non_decreasing(&col(|g| g.mean_executed_stages)),
        cost_monotone: non_decreasing(&col(|g| g.mean_cost)),
        time_monotone: non_decreasing(&col(|g| g.mean_htar_seconds)),
        cost_proportional,
        cost_ratio: if last.mean_cost > 0.0 { first.mean_cost / last.mean_cost } else { f64::NAN },
        groups,
    })
}

fn unit_rows(v: &[f64], dim: usize) -> Vec<Vec<f64>> {
    v.chunks(dim)
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter().map(|x| if n > 0.0 { x / n } else { 0.0 }).collect()
        })
        .collect()
}

fn cosine_distances(v: &[f64], dim: usize) -> Vec<Vec<f64>> {
    let u = unit_rows(v, dim);
    u.iter()
        .map(|a| u.iter().map(|b| 1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()).collect())
        .collect()
}

fn check_classes(labels: &[usize]) -> Result<BTreeMap<usize, usize>> {
    let mut counts = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    if let Some((c, n)) = counts.iter().find(|(_, &n)| n < 2) {
        return Err(Error::Validation(format!("class {c} has {n} sample; at least 2 needed")));
    }
    Ok(counts)
}

/// Leave-one-out nearest-neighbour accuracy under cosine similarity; ties
/// go to the lowest index.
pub fn knn_accuracy(embeddings: &[f64], dim: usize, labels: &[usize]) -> Result<f64> {
    check_classes(labels)?;
    let d = cosine_distances(embeddings, dim);
    let hits = (0..labels.len())
        .filter(|&i| {
            let mut best = usize::MAX;
            for j in (0..labels.len()).filter(|&j| j != i) {
                if best == usize::MAX || d[i][j] < d[i][best] {
                    best = j;
                }
            }
            labels[best] == labels[i]
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Silhouette under cosine distance, averaged within each class and then
/// across classes.
pub fn silhouette(embeddings: &[f64], dim: usize, labels: &[usize]) -> Result<f64> {
    let counts = check_classes(labels)?;
    if counts.len() < 2 {
        return Err(Error::Validation("silhouette needs at least two classes".into()));
    }
    let d = cosine_distances(embeddings, dim);
    let mut per_class: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for i in 0..labels.len() {
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        for j in (0..labels.len()).filter(|&j| j != i) {
            *sums.entry(labels[j]).or_insert(0.0) += d[i][j];
        }
        let own = labels[i];
        let a = sums[&own] / (counts[&own] - 1) as f64;
        let b = sums
            .iter()
            .filter(|(c, _)| **c != own)
            .map(|(c, s)| s / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        let s = if m > 0.0 { (b - a) / m } else { 0.0 };
        let e = per_class.entry(own).or_insert((0.0, 0));
        e.0 += s;
        e.1 += 1;
    }
    Ok(mean(per_class.values().map(|(s, n)| s / *n as f64)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub samples: usize,
    pub classifier_accuracy: f64,
    pub knn_accuracy: f64,
    pub silhouette: f64,
    #[serde(skip)]
    pub dim: usize,
    #[serde(skip)]
    pub embeddings: Vec<f64>,
    #[serde(skip)]
    pub labels: Vec<usize>,
}

impl EmbeddingReport {
    /// From precomputed `[n, dim]` embeddings and `[n, classes]` logits.
    pub fn from_parts(embeddings: Vec<f64>, dim: usize, logits: &[f64], classes: usize, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || embeddings.len() != labels.len() * dim || logits.len() != labels.len() * classes {
            return Err(Error::Shape("embeddings, logits and labels disagree in length".into()));
        }
        let predicted: Vec<usize> = logits.chunks(classes).map(crate::drl::argmax).collect();
        let correct = predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
        Ok(Self {
            samples: labels.len(),
            classifier_accuracy: correct as f64 / labels.len() as f64,
            knn_accuracy: knn_accuracy(&embeddings, dim, &labels)?,
            silhouette: silhouette(&embeddings, dim, &labels)?,
            dim,
            embeddings,
            labels,
        })
    }

    /// `label, e0, e1, ...` per sample.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Validation(e.to_string()))?;
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim).map(|i| format!("e{i}")));
        w.write_record(&header)?;
        for (l, row) in self.labels.iter().zip(self.embeddings.chunks(self.dim)) {
            let mut rec = vec![l.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Embeds labelled patches with a frozen encoder and scores the clustering.
pub fn embedding_report(drl: &DrlModel, patches: &[Frame], labels: &[usize]) -> Result<EmbeddingReport> {
    if patches.len() != labels.len() || patches.is_empty() {
        return Err(Error::Shape(format!("{} patches for {} labels", patches.len(), labels.len())));
    }
    if patches.iter().any(|p| !p.same_size(&patches[0])) {
        return Err(Error::Shape("patches differ in size".into()));
    }
    let mut emb = Vec::new();
    let mut logits = Vec::new();
    for chunk in patches.chunks(64) {
        let (v, l) = drl.embed(&frames_tensor(chunk))?;
        emb.extend(v.to_f64_vec());
        logits.extend(l.to_f64_vec());
    }
    let classes = drl.config().class_count;
    let dim = emb.len() / patches.len();
    EmbeddingReport::from_parts(emb, dim, &logits, classes, labels.to_vec())
}
