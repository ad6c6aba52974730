use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use log::{info, warn};
use reachcal::calibration::{CalibrationResult, ReachPredictor, StateScorer};
use reachcal::checksum::hex;
use reachcal::datastore::{load_dataset, save_dataset, Dataset};
use reachcal::denoiser::{load_model, save_model, DenoiserModel};
use reachcal::diffusion::DiffusionScorer;
use reachcal::evaluation::write_metrics_csv;
use reachcal::pipeline::{self, RunConfig};
use reachcal::Error;

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

type Scorer = DiffusionScorer<DenoiserModel>;

impl Context {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self { cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn provenance(&self) -> Vec<(&'static str, String)> {
        vec![
            ("config_hash", hex(self.cfg.hash())),
            ("dataset_seed", self.cfg.dataset.seed.to_string()),
            ("train_seed", self.cfg.denoiser.seed.to_string()),
            ("score_seed", self.cfg.score_seed.to_string()),
        ]
    }

    fn dataset(&self) -> Result<Dataset> {
        let path = self.path("dataset.rchd");
        let ds = load_dataset(&path).context("stage input: dataset")?;
        let want = (self.cfg.dataset.trajectories, self.cfg.dataset.steps, self.cfg.system.state_dim());
        let have = (ds.n_traj(), ds.steps(), ds.dim());
        if want != have {
            return Err(Error::Stale {
                path,
                detail: format!("dataset shape (N, K, n) = {have:?}, configuration expects {want:?}; rerun generate"),
            }
            .into());
        }
        Ok(ds)
    }

    fn model(&self, ds: &Dataset) -> Result<DenoiserModel> {
        let path = self.path("model.ckpt");
        let model = load_model(&path).context("stage input: checkpoint")?;
        if model.dataset_checksum != Some(ds.checksum()) {
            return Err(Error::Stale {
                path,
                detail: format!(
                    "checkpoint was trained on dataset {}, current dataset is {}; rerun train",
                    model.dataset_checksum.map(hex).unwrap_or_else(|| "<unknown>".into()),
                    hex(ds.checksum())
                ),
            }
            .into());
        }
        if model.config != self.cfg.denoiser {
            return Err(Error::Stale {
                path,
                detail: "denoiser configuration changed since training; rerun train".into(),
            }
            .into());
        }
        Ok(model)
    }

    fn predictor(&self, ds: &Dataset) -> Result<ReachPredictor<Scorer>> {
        let model = self.model(ds)?;
        let fp = hex(pipeline::model_fingerprint(&model)?);
        let scorer = pipeline::diffusion_scorer(&self.cfg, model)?;
        let path = self.path("calibration.json");
        let cal = CalibrationResult::load(&path).context("stage input: calibration")?;
        let stale = |detail: String| Error::Stale {
            path: path.clone(),
            detail,
        };
        if cal.model_fingerprint.as_deref() != Some(fp.as_str()) {
            return Err(stale(format!(
                "calibrated against model {}, checkpoint is {fp}; rerun calibrate",
                cal.model_fingerprint.as_deref().unwrap_or("<unknown>")
            ))
            .into());
        }
        if cal.score_fingerprint != scorer.fingerprint().map(hex) {
            return Err(stale("score configuration or seed changed; rerun calibrate".into()).into());
        }
        if cal.budget != self.cfg.budget()? || cal.grid_size != self.cfg.grid_size {
            return Err(stale("risk budget or threshold grid changed; rerun calibrate".into()).into());
        }
        Ok(ReachPredictor::new(scorer, cal)?)
    }
}

pub fn generate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let ds = pipeline::generate(&ctx.cfg).context("stage generate")?;
    let path = ctx.path("dataset.rchd");
    save_dataset(&ds, &path)?;
    info!("{} trajectories x {} steps, checksum {}", ds.n_traj(), ds.steps(), hex(ds.checksum()));
    Ok(vec![path])
}

pub fn train(ctx: &Context) -> Result<Vec<PathBuf>> {
    let ds = ctx.dataset()?;
    let prep = pipeline::prepare(&ctx.cfg, &ds)?;
    let (model, report) = pipeline::train_model(&ctx.cfg, &ds, &prep).context("stage train")?;
    info!("trained in {:.1} s", report.seconds);
    let path = ctx.path("model.ckpt");
    save_model(&model, &path)?;
    let loss_path = ctx.path("train_loss.csv");
    let mut text = String::from("epoch,loss\n");
    for (e, l) in report.epoch_loss.iter().enumerate() {
        text.push_str(&format!("{e},{l}\n"));
    }
    fs::write(&loss_path, text).with_context(|| loss_path.display().to_string())?;
    Ok(vec![path, loss_path])
}

pub fn calibrate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let ds = ctx.dataset()?;
    let model = ctx.model(&ds)?;
    let prep = pipeline::prepare(&ctx.cfg, &ds)?;
    let p = pipeline::diffusion_predictor(&ctx.cfg, &ds, &prep, model).context("stage calibrate")?;
    let path = ctx.path("calibration.json");
    p.calibration.save(&path)?;
    Ok(vec![path])
}

fn write_masks(ctx: &Context, dir: &str, ev: &pipeline::Evaluation, out: &mut Vec<PathBuf>) -> Result<()> {
    let dir = ctx.path(dir);
    fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
    for (pred, reference) in &ev.masks {
        for (mask, name) in [(pred, "pred"), (reference, "ref")] {
            let pgm = dir.join(format!("k{:03}_{name}.pgm", mask.k));
            let csv = dir.join(format!("k{:03}_{name}.csv", mask.k));
            mask.write_pgm(&pgm)?;
            mask.write_cells_csv(&csv)?;
            out.extend([pgm, csv]);
        }
    }
    Ok(())
}

pub fn evaluate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let ds = ctx.dataset()?;
    let prep = pipeline::prepare(&ctx.cfg, &ds)?;
    let p = ctx.predictor(&ds)?;
    let ev = pipeline::evaluate(&ctx.cfg, &ds, &prep, &p).context("stage evaluate")?;
    info!("max FNR {:.4}, mean IoU {:?}", ev.fnr.max, ev.mean_iou());
    let path = ctx.path("metrics.csv");
    let mut prov = ctx.provenance();
    prov.push(("model", p.calibration.model_fingerprint.clone().unwrap_or_default()));
    write_metrics_csv(&path, &prov, &ev.rows)?;
    let mut out = vec![path];
    write_masks(ctx, "masks", &ev, &mut out)?;
    Ok(out)
}

pub fn pac_validate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let ds = ctx.dataset()?;
    let prep = pipeline::prepare(&ctx.cfg, &ds)?;
    let p = ctx.predictor(&ds)?;
    let report = pipeline::pac(&ctx.cfg, &ds, &prep, &p.scorer).context("stage pac-validate")?;
    info!(
        "pass rate {:.3} over {} splits (target >= {:.3})",
        report.pass_rate,
        report.splits.len(),
        1.0 - ctx.cfg.delta
    );
    let path = ctx.path("pac.json");
    let doc = serde_json::json!({
        "config_hash": hex(ctx.cfg.hash()),
        "model": p.calibration.model_fingerprint,
        "report": report,
    });
    fs::write(&path, serde_json::to_string_pretty(&doc)?).with_context(|| path.display().to_string())?;
    Ok(vec![path])
}

pub fn sensitivity(ctx: &Context) -> Result<Vec<PathBuf>> {
    let ds = ctx.dataset()?;
    let prep = pipeline::prepare(&ctx.cfg, &ds)?;
    let p = ctx.predictor(&ds)?;
    let curve = pipeline::sensitivity(&ctx.cfg, &ds, &prep, &p).context("stage sensitivity")?;
    let path = ctx.path("sensitivity.csv");
    let mut text = String::new();
    for (k, v) in ctx.provenance() {
        text.push_str(&format!("# {k}={v}\n"));
    }
    text.push_str(&format!("# sensitivity_seed={}\nsigma,acceptance\n", ctx.cfg.evaluation.sensitivity_seed));
    for pt in &curve {
        text.push_str(&format!("{},{}\n", pt.sigma, pt.acceptance));
    }
    fs::write(&path, text).with_context(|| path.display().to_string())?;
    Ok(vec![path])
}

pub fn baseline_christoffel(ctx: &Context) -> Result<Vec<PathBuf>> {
    let ds = ctx.dataset()?;
    let prep = pipeline::prepare(&ctx.cfg, &ds)?;
    let mut out = Vec::new();
    let mut summary = String::from("degree,mean_iou,max_fnr,error\n");
    for &d in &ctx.cfg.christoffel.degrees {
        let run = pipeline::christoffel_predictor(&ctx.cfg, &ds, &prep, d)
            .and_then(|p| pipeline::evaluate(&ctx.cfg, &ds, &prep, &p));
        match run {
            Ok(ev) => {
                let path = ctx.path(&format!("christoffel_d{d:02}.csv"));
                let mut prov = ctx.provenance();
                prov.push(("degree", d.to_string()));
                write_metrics_csv(&path, &prov, &ev.rows)?;
                out.push(path);
                let iou = ev.mean_iou().map(|v| v.to_string()).unwrap_or_default();
                summary.push_str(&format!("{d},{iou},{},\n", ev.fnr.max));
            }
            Err(e) => {
                warn!("degree {d}: {e}");
                summary.push_str(&format!("{d},,,\"{e}\"\n"));
            }
        }
    }
    let path = ctx.path("christoffel_summary.csv");
    fs::write(&path, summary).with_context(|| path.display().to_string())?;
    out.push(path);
    Ok(out)
}
