//! The subcommands as library functions. `main.rs` only parses arguments
//! and prints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use oled_core::detach::detach_echoes;
use oled_core::evalrep::{roi_stats, t2_error_report, RoiStat, T2ErrorReport};
use oled_core::oimg::{Oimg, OimgMeta};
use oled_core::{ComplexImage, Domain, Raster};
use oled_net::gradcheck::{self, GradCheckReport, Target};
use oled_net::train::TrainObserver;
use oled_net::{
    infer_t2, train, Checkpoint, CheckpointMeta, LogRow, Network, NetworkConfig, TrainConfig, TrainOutcome,
};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, EvalConfig, ReconstructConfig, SweepConfig, SweepKind, TrainRunConfig};
use crate::dataset::{pairs_of, split_assignment, synth_dataset, synth_sample, Split};
use crate::error::{CliError, Result};
use crate::files::{create_dir, csv_writer, load_oimg, save_oimg, write_json};
use crate::manifest::{write_sample, DatasetManifest, SampleRecord, MANIFEST_VERSION};
use crate::scene::BrainScene;

pub fn gen_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    create_dir(&out_dir.join("samples"))?;
    let split = split_assignment(cfg);
    let mut samples = Vec::with_capacity(cfg.count);
    for (i, s) in split.into_iter().enumerate() {
        let sample = synth_sample(cfg, i)?;
        write_sample(out_dir, &sample, cfg.seed)?;
        samples.push(SampleRecord::new(&sample, s));
    }
    let manifest = DatasetManifest { version: MANIFEST_VERSION, grid, config: cfg.clone(), samples };
    manifest.save(out_dir)?;
    Ok(manifest)
}

pub const TRAIN_LOG: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.olnc";

pub fn checkpoint_name(iteration: usize) -> String {
    format!("checkpoint_{iteration:06}.olnc")
}

/// Streams the log to CSV and writes a checkpoint whenever the loop asks.
struct FileObserver {
    dir: PathBuf,
    log: csv::Writer<std::fs::File>,
    cfg: TrainConfig,
    final_iter: usize,
}

impl FileObserver {
    fn checkpoint(&self, iteration: usize, net: &Network<f32>, rng_digest: &str) -> Checkpoint<f32> {
        Checkpoint {
            network: net.clone(),
            iteration: iteration as u64,
            meta: CheckpointMeta {
                t2_scale_ms: self.cfg.t2_scale_ms,
                rng_digest: rng_digest.to_string(),
                running_stats_initialized: net.is_initialized(),
                train_config: Some(self.cfg.clone()),
            },
        }
    }
}

fn net_err(e: CliError) -> oled_net::NetError {
    oled_net::NetError::Format(e.to_string())
}

impl TrainObserver<f32> for FileObserver {
    fn on_log(&mut self, row: &LogRow) -> oled_net::Result<()> {
        self.log.serialize(row).map_err(|e| net_err(e.into()))?;
        self.log.flush()?;
        Ok(())
    }

    fn on_checkpoint(&mut self, iteration: usize, net: &Network<f32>, rng_digest: &str) -> oled_net::Result<()> {
        let name = if iteration == self.final_iter { FINAL_CHECKPOINT.to_string() } else { checkpoint_name(iteration) };
        self.checkpoint(iteration, net, rng_digest).save(self.dir.join(name))
    }
}

/// Trains on the `train` split and validates on the `test` split of the
/// dataset named in the config (a path relative to the config file).
pub fn train_from_config(cfg_path: &Path, out_dir: &Path) -> Result<TrainOutcome<f32>> {
    let mut cfg: TrainRunConfig = crate::config::load_toml(cfg_path)?;
    cfg.dataset = cfg_path.parent().unwrap_or(Path::new(".")).join(&cfg.dataset);
    train_run(&cfg, out_dir)
}

pub fn train_run(cfg: &TrainRunConfig, out_dir: &Path) -> Result<TrainOutcome<f32>> {
    cfg.network.validate()?;
    let manifest = DatasetManifest::load(&cfg.dataset)?;
    manifest.validate_files(&cfg.dataset)?;
    let train_set = manifest.load_pairs(&cfg.dataset, Split::Train)?;
    let val_set = manifest.load_pairs(&cfg.dataset, Split::Test)?;
    let mut tc = cfg.train.clone();
    // record what the data actually contains
    tc.jitter_frac = manifest.config.jitter_frac;
    tc.noise_snr_db = manifest.config.snr_db;
    tc.validate()?;
    create_dir(out_dir)?;
    let mut obs = FileObserver {
        dir: out_dir.to_path_buf(),
        log: csv_writer(&out_dir.join(TRAIN_LOG))?,
        cfg: tc.clone(),
        final_iter: tc.max_iters,
    };
    Ok(train(&train_set, &val_set, &cfg.network, &tc, &mut obs)?)
}

/// In-memory counterpart of gen-dataset + train.
pub fn train_in_memory(dataset: &DatasetConfig, net: &NetworkConfig, tc: &TrainConfig) -> Result<TrainOutcome<f32>> {
    let samples = synth_dataset(dataset)?;
    let tc = TrainConfig { jitter_frac: dataset.jitter_frac, noise_snr_db: dataset.snr_db, ..tc.clone() };
    let train_set = pairs_of(&samples, Split::Train);
    let val_set = pairs_of(&samples, Split::Test);
    Ok(train(&train_set, &val_set, net, &tc, &mut oled_net::train::Quiet)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Detach,
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub warmup_runs: usize,
    pub runs_ms: Vec<f64>,
    pub median_ms: f64,
}

/// Runs `f` once untimed, then `runs` timed times; returns the last result.
pub fn timed<R>(runs: usize, mut f: impl FnMut() -> Result<R>) -> Result<(R, Timing)> {
    if runs == 0 {
        return Err(CliError::Config("runs must be >= 1".into()));
    }
    let mut out = f()?;
    let mut ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        out = f()?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = ms.clone();
    sorted.sort_by(f64::total_cmp);
    let median_ms = if runs % 2 == 1 { sorted[runs / 2] } else { 0.5 * (sorted[runs / 2 - 1] + sorted[runs / 2]) };
    Ok((out, Timing { warmup_runs: 1, runs_ms: ms, median_ms }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructReport {
    pub method: Method,
    pub rows: usize,
    pub cols: usize,
    pub timing: Timing,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_iteration: Option<u64>,
}

pub fn reconstruct(
    img: &ComplexImage<f32>,
    params: Option<&oled_core::SequenceParams>,
    method: Method,
    checkpoint: Option<&Checkpoint<f32>>,
    cfg: &ReconstructConfig,
) -> Result<(Raster<f32>, ReconstructReport)> {
    img.expect_domain(Domain::Image)?;
    let (rows, cols) = (img.grid.rows, img.grid.cols);
    match method {
        Method::Detach => {
            let params = params.cloned().unwrap_or_else(|| oled_core::SequenceParams::default_for(&img.grid));
            cfg.detach.validate()?;
            let x0 = img.cast::<f64>();
            let (res, timing) = timed(cfg.runs, || Ok(detach_echoes(&x0, &params, &cfg.detach)?))?;
            let report = ReconstructReport {
                method,
                rows,
                cols,
                timing,
                converged: Some(res.converged),
                iterations: Some(res.iterations),
                kappa: Some(res.kappa),
                checkpoint_iteration: None,
            };
            Ok((res.t2_ms.cast(), report))
        }
        Method::Network => {
            let ckpt = checkpoint.ok_or_else(|| CliError::Config("method network needs a checkpoint".into()))?;
            if let Some(expected) = &cfg.network {
                ckpt.expect_config(expected)?;
            }
            let scale = ckpt.meta.t2_scale_ms;
            let (t2, timing) = timed(cfg.runs, || Ok(infer_t2(img, &ckpt.network, scale, cfg.guided_filter)?))?;
            let report = ReconstructReport {
                method,
                rows,
                cols,
                timing,
                converged: None,
                iterations: None,
                kappa: None,
                checkpoint_iteration: Some(ckpt.iteration),
            };
            Ok((t2, report))
        }
    }
}

/// File-level reconstruct: reads an image-domain OIMG, writes a one-channel
/// `t2_ms` OIMG and the JSON report next to it.
pub fn reconstruct_files(
    input: &Path,
    method: Method,
    checkpoint: Option<&Path>,
    cfg: &ReconstructConfig,
    out: &Path,
    report_path: &Path,
) -> Result<ReconstructReport> {
    let file = load_oimg(input)?;
    let img = file.to_complex_image::<f32>().map_err(|source| CliError::File { path: input.into(), source })?;
    let ckpt = checkpoint.map(Checkpoint::<f32>::load).transpose()?;
    let (t2, report) = reconstruct(&img, file.meta.params.as_ref(), method, ckpt.as_ref(), cfg)?;
    let meta = OimgMeta { params: file.meta.params.clone(), seed: file.meta.seed, ..Default::default() };
    save_oimg(out, &Oimg::from_rasters(&[&t2], &["t2_ms"], meta)?)?;
    write_json(report_path, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Standard deviations are population (divide by n) values.
    pub std_convention: String,
    pub error: T2ErrorReport,
    pub roi_estimate: Vec<RoiStat>,
    pub roi_reference: Vec<RoiStat>,
}

pub fn evaluate(est: &Raster<f64>, reference: &oled_core::TissueMap<f64>, cfg: &EvalConfig) -> Result<EvalReport> {
    let grid = oled_core::GridSpec::square(reference.t2_ms.rows).resampled(reference.t2_ms.rows, reference.t2_ms.cols);
    let rois = cfg.rois(&grid);
    let mask = reference.support();
    Ok(EvalReport {
        std_convention: "population".into(),
        error: t2_error_report(est, &reference.t2_ms, &mask, &rois)?,
        roi_estimate: roi_stats(est, &mask, &rois)?,
        roi_reference: roi_stats(&reference.t2_ms, &mask, &rois)?,
    })
}

#[derive(Debug, Serialize)]
struct RoiRow {
    id: u32,
    n: usize,
    est_mean_ms: f64,
    est_std_ms: f64,
    ref_mean_ms: f64,
    ref_std_ms: f64,
    delta_ms: f64,
    delta_pct: f64,
}

/// Writes `report.json`, `rois.csv` and `error_map.oimg` into `out_dir`.
pub fn evaluate_files(estimate: &Path, reference: &Path, cfg: &EvalConfig, out_dir: &Path) -> Result<EvalReport> {
    let est_file = load_oimg(estimate)?;
    let est = est_file.to_rasters::<f64>().map_err(|source| CliError::File { path: estimate.into(), source })?;
    let reference_map = load_oimg(reference)?
        .to_tissue_map::<f64>()
        .map_err(|source| CliError::File { path: reference.into(), source })?;
    let est = est.into_iter().next().ok_or_else(|| CliError::Config("estimate has no channels".into()))?;
    if !est.same_shape(&reference_map.t2_ms) {
        return Err(CliError::Config("estimate and reference grids differ".into()));
    }
    let report = evaluate(&est, &reference_map, cfg)?;
    create_dir(out_dir)?;
    write_json(&out_dir.join("report.json"), &report)?;
    let mut w = csv_writer(&out_dir.join("rois.csv"))?;
    for (e, r) in report.roi_estimate.iter().zip(&report.roi_reference) {
        let delta = e.mean_ms - r.mean_ms;
        w.serialize(RoiRow {
            id: e.id,
            n: e.n,
            est_mean_ms: e.mean_ms,
            est_std_ms: e.std_ms,
            ref_mean_ms: r.mean_ms,
            ref_std_ms: r.std_ms,
            delta_ms: delta,
            delta_pct: 100.0 * delta / r.mean_ms,
        })?;
    }
    w.flush().map_err(CliError::io(out_dir))?;
    if let Some(map) = &report.error.error_map {
        save_oimg(&out_dir.join("error_map.oimg"), &Oimg::from_rasters(&[map], &["rel_error"], OimgMeta::default())?)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: String,
    pub mode: String,
    pub depth: usize,
    pub deviation: f64,
    pub roi_id: Option<u32>,
    pub est_mean_ms: Option<f64>,
    pub ref_mean_ms: Option<f64>,
    pub delta_ms: Option<f64>,
    pub delta_pct: Option<f64>,
    pub status: String,
}

fn cell_rows(cell: &str, mode: &str, depth: usize, deviation: f64, res: Result<T2ErrorReport>) -> Vec<SweepRow> {
    let base = SweepRow {
        cell: cell.to_string(),
        mode: mode.to_string(),
        depth,
        deviation,
        roi_id: None,
        est_mean_ms: None,
        ref_mean_ms: None,
        delta_ms: None,
        delta_pct: None,
        status: "ok".into(),
    };
    match res {
        Ok(rep) => rep
            .roi_deviations
            .iter()
            .map(|d| SweepRow {
                roi_id: Some(d.id),
                est_mean_ms: Some(d.est_mean_ms),
                ref_mean_ms: Some(d.ref_mean_ms),
                delta_ms: Some(d.delta_ms),
                delta_pct: Some(d.delta_pct),
                ..base.clone()
            })
            .collect(),
        Err(e) => vec![SweepRow { status: format!("error: {e}"), ..base }],
    }
}

/// Trains and evaluates every cell. A failing cell yields one row whose
/// status carries the error; the sweep carries on.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let scene = BrainScene::new(cfg.eval_size)?;
    let snr = cfg.eval_snr_db.is_finite().then_some(cfg.eval_snr_db);
    let noise_seed = cfg.dataset.seed;
    let mut rows = Vec::new();
    match cfg.kind {
        SweepKind::Depth => {
            for &depth in &cfg.depths {
                let net_cfg = NetworkConfig { n_param_layers: depth, ..cfg.network.clone() };
                let res = train_in_memory(&cfg.dataset, &net_cfg, &cfg.train).and_then(|out| {
                    scene.evaluate_network(&out.network, cfg.train.t2_scale_ms, cfg.guided_filter, 0.0, snr, noise_seed)
                });
                rows.extend(cell_rows(&format!("depth={depth}"), "multiple", depth, 0.0, res));
            }
        }
        SweepKind::Robustness => {
            let depth = cfg.network.n_param_layers;
            for (mode, jitter) in [("single", 0.0), ("multiple", cfg.dataset.jitter_frac)] {
                let ds = DatasetConfig { jitter_frac: jitter, ..cfg.dataset.clone() };
                let model = train_in_memory(&ds, &cfg.network, &cfg.train);
                for &dev in &cfg.deviations {
                    let res = match &model {
                        Ok(out) => scene.evaluate_network(
                            &out.network,
                            cfg.train.t2_scale_ms,
                            cfg.guided_filter,
                            dev,
                            snr,
                            noise_seed,
                        ),
                        Err(e) => Err(CliError::Failed(format!("training failed: {e}"))),
                    };
                    rows.extend(cell_rows(&format!("{mode}/{dev}"), mode, depth, dev, res));
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn gradcheck_all(targets: &[Target], seeds: u64) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for &t in targets {
        for seed in 0..seeds {
            out.push(gradcheck::check(t, seed)?);
        }
    }
    Ok(out)
}
