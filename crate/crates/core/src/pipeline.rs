//! Run configuration and the stages that connect data generation, training,
//! calibration and evaluation.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_all, score_split, CalibrationResult, ReachPredictor, RiskBudget, StateScorer};
use crate::checksum::{crc64, hex};
use crate::christoffel::{ChristoffelScorer, Ridge};
use crate::datastore::{fit_normalizer, split, Dataset, Normalizer, SplitIndex};
use crate::denoiser::{model_to_bytes, train, DenoiserConfig, DenoiserModel, TrainReport};
use crate::diffusion::{DiffusionScorer, ScheduleConfig, ScoreConfig};
use crate::dynamics::{generate_dataset, DatasetSpec, DuffingParams, SystemSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    build_reference_mask, fnr, overlap, pac_validate, predict_mask, predict_mask_projected, sensitivity_curve,
    volume_bound_check, FnrReport, GridSpec, MembershipMask, PacReport, ProbeSet, SensitivityPoint, StepMetrics,
    VolumeBoundInput, DEFAULT_SIGMAS,
};
use crate::rng::tag;

/// States with more dimensions than this get FNR only, no grid metrics.
pub const MAX_PROJECTED_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub cells: usize,
    pub inflation: f64,
    /// Steps that get grid metrics; `None` means all.
    pub steps: Option<Vec<usize>>,
    /// Projection axes for states of dimension above two.
    pub axes: [usize; 2],
    pub probes_per_cell: usize,
    pub grid_metrics: bool,
    pub pac_splits: usize,
    pub pac_seed: u64,
    pub sigmas: Vec<f64>,
    pub sensitivity_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cells: 128,
            inflation: 0.05,
            steps: None,
            axes: [0, 1],
            probes_per_cell: 8,
            grid_metrics: true,
            pac_splits: 100,
            pac_seed: 0,
            sigmas: DEFAULT_SIGMAS.to_vec(),
            sensitivity_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChristoffelConfig {
    pub degrees: Vec<usize>,
    pub ridge: Ridge,
}

impl Default for ChristoffelConfig {
    fn default() -> Self {
        Self {
            degrees: (2..=14).collect(),
            ridge: Ridge::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub dataset: DatasetSpec,
    /// Train / calibration / test fractions of the trajectories.
    pub split: [f64; 3],
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub score: ScoreConfig,
    pub score_seed: u64,
    pub alpha: f64,
    pub delta: f64,
    /// Number of candidate thresholds per step.
    pub grid_size: usize,
    pub evaluation: EvalConfig,
    pub christoffel: ChristoffelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemSpec::Duffing(DuffingParams::default()),
            dataset: DatasetSpec::default(),
            split: [0.6, 0.2, 0.2],
            schedule: ScheduleConfig::default(),
            denoiser: DenoiserConfig::default(),
            score: ScoreConfig::default(),
            score_seed: 0,
            alpha: 0.05,
            delta: 0.2,
            grid_size: 2000,
            evaluation: EvalConfig::default(),
            christoffel: ChristoffelConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Sets every seed (data, training, scoring, evaluation) to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.denoiser.seed = seed;
        self.score_seed = seed;
        self.evaluation.pac_seed = seed;
        self.evaluation.sensitivity_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.denoiser.validate()?;
        self.budget()?;
        self.score.validate(&self.schedule.build()?)?;
        if self.grid_size < 2 {
            return Err(Error::Config(format!("grid_size must be >= 2, got {}", self.grid_size)));
        }
        if self.evaluation.cells < 2 {
            return Err(Error::Config("evaluation grid needs >= 2 cells per axis".into()));
        }
        let dim = self.system.state_dim();
        if self.evaluation.axes.iter().any(|&a| a >= dim) || self.evaluation.axes[0] == self.evaluation.axes[1] {
            return Err(Error::Config(format!(
                "projection axes {:?} invalid for dimension {dim}",
                self.evaluation.axes
            )));
        }
        Ok(())
    }

    pub fn budget(&self) -> Result<RiskBudget> {
        RiskBudget::new(self.alpha, self.delta, self.dataset.steps)
    }

    /// CRC-64 of the canonical JSON form.
    pub fn hash(&self) -> u64 {
        crc64(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Physical time of recorded step `k`.
    pub fn step_time(&self, ds: &Dataset, k: usize) -> f64 {
        match &self.system {
            SystemSpec::Quadrotor(p) => p.t1,
            _ => k as f64 * ds.dt(),
        }
    }

    /// Missed-volume bound constants at time `t`, for systems with a
    /// constant-divergence vector field and a uniform initial density.
    pub fn volume_input(&self, t: f64) -> Option<VolumeBoundInput> {
        match &self.system {
            SystemSpec::Duffing(p) => Some(VolumeBoundInput {
                c0: 1.0 / p.x0_box.volume(),
                c: p.c,
                t,
                alpha: self.alpha,
            }),
            _ => None,
        }
    }
}

pub fn generate(cfg: &RunConfig) -> Result<Dataset> {
    generate_dataset(&cfg.system, &cfg.dataset)
}

/// Split of the trajectories and the training-split normalizer.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: SplitIndex,
    pub normalizer: Normalizer,
}

pub fn prepare(cfg: &RunConfig, ds: &Dataset) -> Result<Prepared> {
    if ds.steps() != cfg.dataset.steps {
        return Err(Error::Config(format!(
            "dataset has {} steps, config expects {}",
            ds.steps(),
            cfg.dataset.steps
        )));
    }
    let split = split(ds.n_traj(), cfg.split, cfg.dataset.seed)?;
    let normalizer = fit_normalizer(ds, &split.train)?;
    Ok(Prepared { split, normalizer })
}

pub fn train_model(cfg: &RunConfig, ds: &Dataset, prep: &Prepared) -> Result<(DenoiserModel, TrainReport)> {
    let schedule = cfg.schedule.build()?;
    let (mut model, report) = train(ds, &prep.split.train, &prep.normalizer, &schedule, &cfg.denoiser)?;
    model.dataset_checksum = Some(ds.checksum());
    Ok((model, report))
}

/// CRC of the checkpoint bytes without their trailing CRC (a CRC over a
/// message and its own CRC is a constant).
pub fn model_fingerprint(model: &DenoiserModel) -> Result<u64> {
    let bytes = model_to_bytes(model)?;
    Ok(crc64(&bytes[..bytes.len() - 8]))
}

pub fn diffusion_scorer(cfg: &RunConfig, model: DenoiserModel) -> Result<DiffusionScorer<DenoiserModel>> {
    let schedule = cfg.schedule.build()?;
    if schedule.fingerprint() != model.schedule_fingerprint {
        return Err(Error::Config("model was trained with a different noise schedule".into()));
    }
    let normalizer = model.normalizer.clone();
    DiffusionScorer::new(model, schedule, cfg.score.clone(), normalizer, cfg.score_seed)
}

pub fn calibrate<S: StateScorer>(cfg: &RunConfig, ds: &Dataset, prep: &Prepared, scorer: &S) -> Result<CalibrationResult> {
    calibrate_all(ds, &prep.split.cal, scorer, &cfg.budget()?, cfg.grid_size)
}

/// Diffusion predictor: calibrates `model` on the calibration split.
pub fn diffusion_predictor(
    cfg: &RunConfig,
    ds: &Dataset,
    prep: &Prepared,
    model: DenoiserModel,
) -> Result<ReachPredictor<DiffusionScorer<DenoiserModel>>> {
    let fp = model_fingerprint(&model)?;
    let scorer = diffusion_scorer(cfg, model)?;
    let mut cal = calibrate(cfg, ds, prep, &scorer)?;
    cal.model_fingerprint = Some(hex(fp));
    ReachPredictor::new(scorer, cal)
}

/// Christoffel baseline of `degree`: fitted on the training split, calibrated
/// on the calibration split.
pub fn christoffel_predictor(
    cfg: &RunConfig,
    ds: &Dataset,
    prep: &Prepared,
    degree: usize,
) -> Result<ReachPredictor<ChristoffelScorer>> {
    let scorer = ChristoffelScorer::fit(ds, &prep.split.train, degree, cfg.christoffel.ridge)?;
    let cal = calibrate(cfg, ds, prep, &scorer)?;
    ReachPredictor::new(scorer, cal)
}

/// Metrics on the test split, plus the masks of every grid-evaluated step.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub fnr: FnrReport,
    pub rows: Vec<StepMetrics>,
    /// `(predicted, reference)` per grid-evaluated step.
    pub masks: Vec<(MembershipMask, MembershipMask)>,
    pub seconds: f64,
}

impl Evaluation {
    /// Mean IoU over the grid-evaluated steps.
    pub fn mean_iou(&self) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter_map(|r| r.iou).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn grid_steps(cfg: &RunConfig, ds: &Dataset) -> Vec<usize> {
    match &cfg.evaluation.steps {
        Some(s) => s.iter().copied().filter(|&k| k < ds.steps()).collect(),
        None => (0..ds.steps()).collect(),
    }
}

/// Test-split masks at step `k`: the grid covers the projected test states.
pub fn step_masks<S: StateScorer>(
    cfg: &RunConfig,
    ds: &Dataset,
    test: &[usize],
    predictor: &ReachPredictor<S>,
    k: usize,
) -> Result<(MembershipMask, MembershipMask)> {
    let dim = ds.dim();
    let rows = ds.rows_at(test, k);
    let [a, b] = cfg.evaluation.axes;
    let proj: Vec<f64> = rows.chunks_exact(dim).flat_map(|s| [s[a], s[b]]).collect();
    let cells = cfg.evaluation.cells;
    let grid = GridSpec::covering(&proj, [cells, cells], cfg.evaluation.inflation)?;
    let reference = build_reference_mask(&proj, &grid, k)?;
    let pred = if dim == 2 && cfg.evaluation.axes == [0, 1] {
        predict_mask(predictor, k, &grid)?
    } else {
        let probes = ProbeSet::nearest(&rows, dim, cfg.evaluation.axes, &grid, cfg.evaluation.probes_per_cell)?;
        predict_mask_projected(predictor, k, &grid, &probes)?
    };
    Ok((pred, reference))
}

pub fn evaluate<S: StateScorer>(
    cfg: &RunConfig,
    ds: &Dataset,
    prep: &Prepared,
    predictor: &ReachPredictor<S>,
) -> Result<Evaluation> {
    let start = Instant::now();
    let test = &prep.split.test;
    let fnr = fnr(predictor, ds, test)?;
    let with_grid = cfg.evaluation.grid_metrics && ds.dim() <= MAX_PROJECTED_DIM;
    let grid_steps = if with_grid { grid_steps(cfg, ds) } else { Vec::new() };
    let mut rows = Vec::with_capacity(ds.steps());
    let mut masks = Vec::new();
    for k in 0..ds.steps() {
        let t = cfg.step_time(ds, k);
        let mut row = StepMetrics {
            k,
            t,
            iou: None,
            precision: None,
            fnr: fnr.per_step[k],
            q: predictor.threshold(k)?,
            bound: None,
            measured: None,
        };
        if grid_steps.contains(&k) {
            let (pred, reference) = step_masks(cfg, ds, test, predictor, k)?;
            let o = overlap(&pred, &reference)?;
            row.iou = Some(o.iou);
            row.precision = Some(o.precision);
            if let Some(vb) = cfg.volume_input(t) {
                let (m, b) = volume_bound_check(&pred, &reference, &vb)?;
                row.measured = Some(m);
                row.bound = Some(b);
            }
            masks.push((pred, reference));
        }
        rows.push(row);
    }
    Ok(Evaluation {
        fnr,
        rows,
        masks,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Repeated half/half re-splits of the pooled calibration and test
/// trajectories, scored once with a fixed scorer.
pub fn pac<S: StateScorer>(cfg: &RunConfig, ds: &Dataset, prep: &Prepared, scorer: &S) -> Result<PacReport> {
    let pool: Vec<usize> = prep.split.cal.iter().chain(&prep.split.test).copied().collect();
    let scores = score_split(ds, &pool, scorer, tag::PAC)?;
    pac_validate(
        &scores,
        &cfg.budget()?,
        cfg.grid_size,
        cfg.evaluation.pac_splits,
        cfg.evaluation.pac_seed,
    )
}

/// Acceptance of perturbed test states; noise scales are the training-split
/// standard deviations.
pub fn sensitivity<S: StateScorer>(
    cfg: &RunConfig,
    ds: &Dataset,
    prep: &Prepared,
    predictor: &ReachPredictor<S>,
) -> Result<Vec<SensitivityPoint>> {
    sensitivity_curve(
        predictor,
        ds,
        &prep.split.test,
        &prep.normalizer.std,
        &cfg.evaluation.sigmas,
        cfg.evaluation.sensitivity_seed,
    )
}
