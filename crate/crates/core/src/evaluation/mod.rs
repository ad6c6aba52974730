//! Reference sets, tightness and coverage metrics, repeated-split PAC
//! validation and perturbation sensitivity.

mod grid;
mod pac;
mod sensitivity;

pub use grid::{
    build_reference_mask, iou_precision, missed_area, overlap, GridSpec, MembershipMask, Overlap, DEFAULT_CELLS,
    DEFAULT_INFLATION,
};
pub use pac::{pac_split, pac_validate, PacReport, SplitRecord};
pub use sensitivity::{sensitivity_curve, SensitivityPoint, DEFAULT_SIGMAS};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::calibration::{ReachPredictor, StateScorer};
use crate::datastore::Dataset;
use crate::error::{Error, Result};
use crate::rng::tag;

/// Rasterizes the predicted set at step `k` by testing every cell center.
/// Cell `c` uses query id `c` under the grid tag.
pub fn predict_mask<S: StateScorer>(predictor: &ReachPredictor<S>, k: usize, grid: &GridSpec) -> Result<MembershipMask> {
    if predictor.scorer.dim() != 2 {
        return Err(Error::Contract(format!(
            "cell-center rasterization needs a 2-D state, got {}; use a probe set",
            predictor.scorer.dim()
        )));
    }
    let ids: Vec<u64> = (0..grid.n_cells() as u64).collect();
    let (cells, _) = predictor.classify(&grid.centers(), k, tag::GRID, &ids)?;
    Ok(MembershipMask {
        grid: grid.clone(),
        k,
        cells,
    })
}

/// Full-dimensional probe states for a 2-D projection: for every cell, the
/// cell center on the projected axes completed with the remaining coordinates
/// of each of the `m` test states nearest to it in projection.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub dim: usize,
    pub axes: [usize; 2],
    pub per_cell: usize,
    /// `n_cells * per_cell` rows of length `dim`.
    pub states: Vec<f64>,
}

impl ProbeSet {
    pub fn nearest(states: &[f64], dim: usize, axes: [usize; 2], grid: &GridSpec, m: usize) -> Result<Self> {
        let n = states.len() / dim;
        if n == 0 || m == 0 {
            return Err(Error::Contract("probe set needs at least one state and one probe per cell".into()));
        }
        let m = m.min(n);
        let [w, h] = grid.cell_size();
        let proj: Vec<[f64; 2]> = states
            .chunks_exact(dim)
            .map(|s| [s[axes[0]] / w, s[axes[1]] / h])
            .collect();
        let probes: Vec<f64> = (0..grid.n_cells())
            .into_par_iter()
            .flat_map_iter(|c| {
                let ctr = grid.cell_center(c);
                let (cx, cy) = (ctr[0] / w, ctr[1] / h);
                let mut d: Vec<(f64, usize)> = proj
                    .iter()
                    .enumerate()
                    .map(|(i, p)| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2), i))
                    .collect();
                d.select_nth_unstable_by(m - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d.truncate(m);
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut out = Vec::with_capacity(m * dim);
                for (_, i) in d {
                    let mut s = states[i * dim..(i + 1) * dim].to_vec();
                    s[axes[0]] = ctr[0];
                    s[axes[1]] = ctr[1];
                    out.extend(s);
                }
                out
            })
            .collect();
        Ok(Self {
            dim,
            axes,
            per_cell: m,
            states: probes,
        })
    }
}

/// Rasterizes a projected predicted set: a cell is a member iff any of its
/// probes is accepted. Every probe of cell `c` uses query id `c`.
pub fn predict_mask_projected<S: StateScorer>(
    predictor: &ReachPredictor<S>,
    k: usize,
    grid: &GridSpec,
    probes: &ProbeSet,
) -> Result<MembershipMask> {
    if probes.states.len() != grid.n_cells() * probes.per_cell * probes.dim {
        return Err(Error::GridMismatch("probe set was built for a different grid".into()));
    }
    // probes of one cell share the cell's noise stream
    let ids: Vec<u64> = (0..grid.n_cells() as u64)
        .flat_map(|c| std::iter::repeat_n(c, probes.per_cell))
        .collect();
    let (accepted, _) = predictor.classify(&probes.states, k, tag::PROBE, &ids)?;
    Ok(MembershipMask {
        grid: grid.clone(),
        k,
        cells: accepted.chunks(probes.per_cell).map(|c| c.iter().any(|&a| a)).collect(),
    })
}

/// Per-step and horizon-max fraction of rejected states.
#[derive(Debug, Clone, PartialEq)]
pub struct FnrReport {
    pub per_step: Vec<f64>,
    pub max: f64,
}

impl FnrReport {
    pub fn from_scores(scores: &[Vec<f64>], thresholds: &[f64]) -> Result<Self> {
        if scores.len() != thresholds.len() {
            return Err(Error::Contract(format!(
                "{} steps of scores for {} thresholds",
                scores.len(),
                thresholds.len()
            )));
        }
        let per_step: Vec<f64> = scores
            .iter()
            .zip(thresholds)
            .map(|(s, &q)| s.iter().filter(|&&v| v > q).count() as f64 / s.len().max(1) as f64)
            .collect();
        let max = per_step.iter().copied().fold(0.0, f64::max);
        Ok(Self { per_step, max })
    }
}

/// FNR of trajectories `ids` under the test tag (query id = trajectory index).
pub fn fnr<S: StateScorer>(predictor: &ReachPredictor<S>, ds: &Dataset, ids: &[usize]) -> Result<FnrReport> {
    let scores = crate::calibration::score_split(ds, ids, &predictor.scorer, tag::TEST)?;
    FnrReport::from_scores(&scores, predictor.thresholds())
}

/// Constants of the missed-volume bound `alpha * exp(-c t) / c0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeBoundInput {
    /// Lower bound on the initial density.
    pub c0: f64,
    /// Contraction rate: the flow's Jacobian determinant is `exp(-c t)`.
    pub c: f64,
    pub t: f64,
    pub alpha: f64,
}

impl VolumeBoundInput {
    pub fn bound(&self) -> f64 {
        self.alpha * (-self.c * self.t).exp() / self.c0
    }
}

/// `(measured missed area, bound)`.
pub fn volume_bound_check(pred: &MembershipMask, reference: &MembershipMask, vb: &VolumeBoundInput) -> Result<(f64, f64)> {
    if !(vb.c0 > 0.0) {
        return Err(Error::Config(format!("initial density bound must be positive, got {}", vb.c0)));
    }
    Ok((missed_area(pred, reference)?, vb.bound()))
}

/// One row of the metrics table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub k: usize,
    pub t: f64,
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub fnr: f64,
    pub q: f64,
    pub bound: Option<f64>,
    pub measured: Option<f64>,
}

/// Writes `rows` as CSV, preceded by `# key=value` provenance lines.
pub fn write_metrics_csv(path: &Path, provenance: &[(&str, String)], rows: &[StepMetrics]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in provenance {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str("step,t,iou,precision,fnr,q,bound,measured\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.k,
            r.t,
            opt(r.iou),
            opt(r.precision),
            r.fnr,
            r.q,
            opt(r.bound),
            opt(r.measured)
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
