//! The four subcommands: case synthesis, single-observation deblurring,
//! hyperparameter sweeps, and batch evaluation.

use std::path::{Path, PathBuf};

use serde::Serialize;

use deblur_core::checkpoint::save_pair;
use deblur_core::degradation::{noise_preset, synthesize_case, NoiseSpec};
use deblur_core::forward_model::{plan_sizes, SizingPlan};
use deblur_core::image::{ImageGrid, Kernel};
use deblur_core::io::{
    list_pngs, read_case, read_image, read_kernel_csv, write_case, write_image, write_image_8bit,
    write_kernel_csv, write_kernel_png, write_trace_csv, Case, CaseSpec, CASE_SCHEMA_VERSION,
};
use deblur_core::localization::{locate_image, locate_kernel, Placement};
use deblur_core::metrics::{best_window_psnr, evaluate_pair, psnr, MetricReport};
use deblur_core::objective::ObjectiveConfig;
use deblur_core::solver::{es_gap_report, run, EsGapReport, RunOutput, SolverConfig};
use deblur_core::synthdata::{cartoon_scene, gaussian_kernel, motion_kernel};
use deblur_core::{DeblurError, Result};

use crate::config::{GeneratedKernel, RunConfig, SweepAxis};
use crate::svg;

fn io_err(path: &Path, e: std::io::Error) -> DeblurError {
    DeblurError::io(path.display().to_string(), e)
}

/// Synthesizes one degradation case into `<out>/case_<digest>/`.
pub fn cmd_synth(config: &RunConfig) -> Result<PathBuf> {
    let (clean, kernel) = load_synth_inputs(config)?;
    let noise = config
        .synth
        .noise
        .unwrap_or(NoiseSpec::none())
        .with_seed_if_unset(config.seed);
    let blurry = synthesize_case(&clean, &kernel, &noise)?;
    let spec = CaseSpec {
        schema_version: CASE_SCHEMA_VERSION,
        noise,
        clean_size: clean.size(),
        kernel_size: kernel.size(),
        observation_size: blurry.size(),
        groundtruth_offset: ((kernel.height() - 1) / 2, (kernel.width() - 1) / 2),
    };
    let case = Case {
        clean,
        kernel,
        blurry,
        spec,
    };
    let dir = config.out_dir.join(format!("case_{}", config.digest()));
    write_case(&dir, &case)?;
    config.emit_resolved(&dir)?;
    println!("synthesized case at {}", dir.display());
    Ok(dir)
}

trait WithSeed {
    fn with_seed_if_unset(self, seed: u64) -> Self;
}

impl WithSeed for NoiseSpec {
    fn with_seed_if_unset(mut self, seed: u64) -> Self {
        if self.seed == 0 {
            self.seed = seed.wrapping_add(0x9e3779b97f4a7c15);
        }
        self
    }
}

fn load_synth_inputs(config: &RunConfig) -> Result<(ImageGrid, Kernel)> {
    match (&config.synth.clean, &config.synth.generate) {
        (Some(path), None) => {
            let clean = read_image(path)?;
            let kernel_path = config.synth.kernel.as_ref().ok_or_else(|| {
                DeblurError::InvalidSpec("synth.kernel is required with synth.clean".into())
            })?;
            Ok((clean, read_kernel_csv(kernel_path)?))
        }
        (None, Some(generate)) => {
            let clean = cartoon_scene(generate.scene_height, generate.scene_width, generate.scene_seed);
            let kernel = match generate.kernel_kind {
                GeneratedKernel::Motion => motion_kernel(generate.kernel_size, generate.kernel_seed),
                GeneratedKernel::Gaussian => {
                    gaussian_kernel(generate.kernel_size, generate.kernel_size as f64 / 6.0)
                }
                GeneratedKernel::Delta => Kernel::delta(
                    generate.kernel_size,
                    generate.kernel_size,
                    (generate.kernel_size - 1) / 2,
                    (generate.kernel_size - 1) / 2,
                )?,
            };
            Ok((clean, kernel))
        }
        (Some(_), Some(_)) => Err(DeblurError::InvalidSpec(
            "synth.clean and synth.generate are mutually exclusive".into(),
        )),
        (None, None) => Err(DeblurError::InvalidSpec(
            "synth needs either synth.clean or synth.generate".into(),
        )),
    }
}

/// Resolved inputs of a deblur run.
struct DeblurInputs {
    blurry: ImageGrid,
    groundtruth: Option<ImageGrid>,
    groundtruth_kernel: Option<Kernel>,
    case_name: Option<String>,
    true_kernel_size: Option<(usize, usize)>,
}

fn load_deblur_inputs(config: &RunConfig) -> Result<DeblurInputs> {
    let blurry_path = config
        .input
        .blurry
        .as_ref()
        .ok_or_else(|| DeblurError::InvalidSpec("input.blurry is required".into()))?;
    if blurry_path.is_dir() {
        let case = read_case(blurry_path)?;
        let gt = case.groundtruth_crop();
        Ok(DeblurInputs {
            blurry: case.blurry,
            groundtruth: Some(gt),
            groundtruth_kernel: Some(case.kernel),
            case_name: blurry_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned()),
            true_kernel_size: Some(case.spec.kernel_size),
        })
    } else {
        let blurry = read_image(blurry_path)?;
        let groundtruth = config.input.clean.as_ref().map(|p| read_image(p)).transpose()?;
        if let Some(gt) = &groundtruth {
            if gt.size() != blurry.size() || gt.channels() != blurry.channels() {
                return Err(DeblurError::InvalidSpec(
                    "input.clean must match the observation size (a localized groundtruth crop)"
                        .into(),
                ));
            }
        }
        let groundtruth_kernel = config
            .input
            .kernel
            .as_ref()
            .map(|p| read_kernel_csv(p))
            .transpose()?;
        Ok(DeblurInputs {
            blurry,
            groundtruth,
            groundtruth_kernel,
            case_name: blurry_path
                .file_stem()
                .map(|n| n.to_string_lossy().into_owned()),
            true_kernel_size: None,
        })
    }
}

#[derive(Serialize)]
struct PlacementOut {
    offset: (usize, usize),
    score: f64,
}

/// `report.json` written beside the reconstruction outputs.
#[derive(Serialize)]
struct RunReport {
    schema_version: u32,
    config_digest: String,
    case: Option<String>,
    plan_kernel_size: (usize, usize),
    plan_canvas_size: (usize, usize),
    best_iter: usize,
    final_iter: usize,
    stopped_early: bool,
    placement: PlacementOut,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    es_gap: Option<EsGapReport>,
}

/// One deblur run's outputs in memory, shared by `run` and `sweep`.
pub struct DeblurOutcome {
    pub x_hat: ImageGrid,
    pub kernel: Kernel,
    pub placement: Placement,
    pub plan: SizingPlan,
    pub output: RunOutput,
    pub metrics: Option<MetricReport>,
    pub baseline_psnr: Option<f64>,
    pub es_gap: Option<EsGapReport>,
}

fn execute_deblur(
    blurry: &ImageGrid,
    groundtruth: Option<&ImageGrid>,
    groundtruth_kernel: Option<&Kernel>,
    plan: &SizingPlan,
    objective: &ObjectiveConfig,
    solver: &SolverConfig,
) -> Result<DeblurOutcome> {
    let probe_gt = groundtruth.cloned();
    let probe = probe_gt.map(|gt| {
        move |canvas: &ImageGrid| -> f64 { best_window_psnr(canvas, &gt) }
    });
    let probe_ref: Option<&deblur_core::solver::QualityProbe> = match &probe {
        Some(p) => Some(p),
        None => None,
    };
    let output = run(blurry, plan, objective, solver, probe_ref)?;
    let (x_hat, placement) = locate_image(&output.best_canvas, blurry)?;
    let kernel = locate_kernel(&output.best_kernel, &placement, plan.x_size, plan.y_size)?;
    let (metrics, baseline_psnr, es_gap) = match groundtruth {
        Some(gt) => {
            let report = evaluate_pair(&x_hat, gt, Some(&kernel), groundtruth_kernel)?;
            let baseline = psnr(blurry, gt)?;
            let gap = es_gap_report(&output.trace, output.best_iter).ok();
            (Some(report), Some(baseline), gap)
        }
        None => (None, None, None),
    };
    Ok(DeblurOutcome {
        x_hat,
        kernel,
        placement,
        plan: *plan,
        output,
        metrics,
        baseline_psnr,
        es_gap,
    })
}

/// Runs the full pipeline on one observation and writes
/// `x_hat.png`, `kernel.csv`, `kernel.png`, `trace.csv`, `report.json`,
/// `checkpoint.ckpt`, and the resolved configuration.
pub fn cmd_run(config: &RunConfig) -> Result<PathBuf> {
    let inputs = load_deblur_inputs(config)?;
    let plan = plan_sizes(inputs.blurry.size(), config.plan.kernel_size)?;
    let objective = config.objective.to_core();
    let solver = config.solver_config();
    let outcome = execute_deblur(
        &inputs.blurry,
        inputs.groundtruth.as_ref(),
        inputs.groundtruth_kernel.as_ref(),
        &plan,
        &objective,
        &solver,
    )?;

    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_image(&dir.join("x_hat.png"), &outcome.x_hat)?;
    write_kernel_csv(&dir.join("kernel.csv"), &outcome.kernel)?;
    write_kernel_png(&dir.join("kernel.png"), &outcome.kernel)?;
    write_trace_csv(&dir.join("trace.csv"), &outcome.output.trace)?;
    write_image_8bit(&dir.join("canvas_full.png"), &outcome.output.best_canvas)?;
    save_pair(
        &dir.join("checkpoint.ckpt"),
        &outcome.output.image_generator,
        &outcome.output.kernel_field,
    )?;
    let report = RunReport {
        schema_version: 1,
        config_digest: config.digest(),
        case: inputs.case_name.clone(),
        plan_kernel_size: plan.k_size,
        plan_canvas_size: plan.x_size,
        best_iter: outcome.output.best_iter,
        final_iter: outcome.output.final_iter,
        stopped_early: outcome.output.stopped_early,
        placement: PlacementOut {
            offset: outcome.placement.offset,
            score: outcome.placement.score,
        },
        metrics: outcome.metrics.clone(),
        baseline_psnr: outcome.baseline_psnr,
        es_gap: outcome.es_gap,
    };
    let report_path = dir.join("report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("serializable report"),
    )
    .map_err(|e| io_err(&report_path, e))?;
    config.emit_resolved(dir)?;
    match (&report.metrics, report.baseline_psnr) {
        (Some(m), Some(b)) => println!(
            "deblurred {}: PSNR {:.2} dB (baseline {:.2}, margin {:+.2}), SSIM {:.4}, best iter {}",
            inputs.case_name.as_deref().unwrap_or("input"),
            m.psnr,
            b,
            m.psnr - b,
            m.ssim,
            report.best_iter
        ),
        _ => println!(
            "deblurred {}: best iter {}, placement {:?}",
            inputs.case_name.as_deref().unwrap_or("input"),
            report.best_iter,
            report.placement.offset
        ),
    }
    Ok(dir.clone())
}

/// One sweep row result.
#[derive(Clone, Serialize)]
struct SweepRow {
    case: String,
    setting: String,
    seed: u64,
    status: String,
    psnr: Option<f64>,
    ssim: Option<f64>,
    vif: Option<f64>,
    baseline_psnr: Option<f64>,
    best_iter: Option<usize>,
    es_gap: Option<f64>,
    base_gap: Option<f64>,
    error: Option<String>,
}

struct SweepJob {
    case_dir: PathBuf,
    case_name: String,
    setting: String,
    setting_position: f64,
    seed: u64,
    kernel_size: Option<(usize, usize)>,
    reg_weight: Option<f64>,
    noise: Option<NoiseSpec>,
}

/// Kernel-size levels: level 1 is the true size, level 5 the half-size
/// default, levels 2–4 evenly spaced with ceiling rounding.
pub fn kernel_size_for_level(
    true_size: (usize, usize),
    y_size: (usize, usize),
    level: usize,
) -> (usize, usize) {
    assert!((1..=5).contains(&level));
    let half = (y_size.0.div_ceil(2), y_size.1.div_ceil(2));
    let lerp = |a: usize, b: usize| -> usize {
        let t = (level - 1) as f64 / 4.0;
        (a as f64 + (b as f64 - a as f64) * t).ceil() as usize
    };
    (lerp(true_size.0, half.0), lerp(true_size.1, half.1))
}

fn sweep_jobs(config: &RunConfig) -> Result<Vec<SweepJob>> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| DeblurError::InvalidSpec("sweep section missing".into()))?;
    if sweep.cases.is_empty() {
        return Err(DeblurError::InvalidSpec("sweep.cases is empty".into()));
    }
    let mut jobs = Vec::new();
    for case_dir in &sweep.cases {
        let case = read_case(case_dir)?;
        let case_name = case_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| case_dir.display().to_string());
        for &seed in &sweep.seeds {
            match sweep.axis {
                SweepAxis::Lambda => {
                    for (i, &lambda) in sweep.lambda_grid.iter().enumerate() {
                        jobs.push(SweepJob {
                            case_dir: case_dir.clone(),
                            case_name: case_name.clone(),
                            setting: format!("lambda={lambda:e}"),
                            setting_position: i as f64,
                            seed,
                            kernel_size: config.plan.kernel_size,
                            reg_weight: Some(lambda),
                            noise: None,
                        });
                    }
                }
                SweepAxis::KernelSizeLevel => {
                    for level in 1..=5usize {
                        let size = kernel_size_for_level(
                            case.spec.kernel_size,
                            case.spec.observation_size,
                            level,
                        );
                        jobs.push(SweepJob {
                            case_dir: case_dir.clone(),
                            case_name: case_name.clone(),
                            setting: format!("level={level}"),
                            setting_position: level as f64,
                            seed,
                            kernel_size: Some(size),
                            reg_weight: None,
                            noise: None,
                        });
                    }
                }
                SweepAxis::Noise => {
                    for (i, preset) in sweep.noise_presets.iter().enumerate() {
                        for spec in noise_preset(preset, 0)? {
                            let label = match spec.kind {
                                deblur_core::degradation::NoiseKind::Gaussian { .. } => "gaussian",
                                deblur_core::degradation::NoiseKind::Shot { .. } => "shot",
                                deblur_core::degradation::NoiseKind::Impulse { .. } => "impulse",
                                _ => "none",
                            };
                            jobs.push(SweepJob {
                                case_dir: case_dir.clone(),
                                case_name: case_name.clone(),
                                setting: format!("{preset}/{label}"),
                                setting_position: i as f64,
                                seed,
                                kernel_size: config.plan.kernel_size,
                                reg_weight: None,
                                noise: Some(spec),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(jobs)
}

fn run_sweep_job(config: &RunConfig, job: &SweepJob) -> SweepRow {
    let attempt = || -> Result<SweepRow> {
        let case = read_case(&job.case_dir)?;
        let gt = case.groundtruth_crop();
        let blurry = match &job.noise {
            // Noise-axis rows re-degrade the clean blur with the row's spec.
            Some(spec) => {
                let spec = NoiseSpec {
                    seed: spec.seed ^ job.seed.wrapping_mul(0x2545f4914f6cdd1d),
                    ..*spec
                };
                synthesize_case(&case.clean, &case.kernel, &spec)?
            }
            None => case.blurry.clone(),
        };
        let plan = plan_sizes(blurry.size(), job.kernel_size)?;
        let mut objective = config.objective.to_core();
        if let Some(lambda) = job.reg_weight {
            objective.reg_weight = lambda;
        }
        let mut solver = config.solver_config();
        solver.seed = job.seed;
        let outcome = execute_deblur(
            &blurry,
            Some(&gt),
            Some(&case.kernel),
            &plan,
            &objective,
            &solver,
        )?;
        let m = outcome.metrics.as_ref().expect("groundtruth present");
        Ok(SweepRow {
            case: job.case_name.clone(),
            setting: job.setting.clone(),
            seed: job.seed,
            status: "ok".into(),
            psnr: Some(m.psnr),
            ssim: Some(m.ssim),
            vif: Some(m.vif),
            baseline_psnr: outcome.baseline_psnr,
            best_iter: Some(outcome.output.best_iter),
            es_gap: outcome.es_gap.map(|g| g.es_gap),
            base_gap: outcome.es_gap.map(|g| g.base_gap),
            error: None,
        })
    };
    attempt().unwrap_or_else(|e| SweepRow {
        case: job.case_name.clone(),
        setting: job.setting.clone(),
        seed: job.seed,
        status: "error".into(),
        psnr: None,
        ssim: None,
        vif: None,
        baseline_psnr: None,
        best_iter: None,
        es_gap: None,
        base_gap: None,
        error: Some(e.to_string()),
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs the cross product of cases × settings × seeds, writing one
/// aggregate row per run plus mean±std summaries and chart/histogram SVGs.
pub fn cmd_sweep(config: &RunConfig) -> Result<PathBuf> {
    let jobs = sweep_jobs(config)?;
    let workers: usize = std::env::var("DEBLUR_NUM_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
        .max(1);

    let rows: Vec<SweepRow> = if workers <= 1 {
        jobs.iter().map(|j| run_sweep_job(config, j)).collect()
    } else {
        // Independent rows, bounded pool; results are reassembled in job
        // order so output files are deterministic.
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results: Vec<std::sync::Mutex<Option<SweepRow>>> =
            jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers.min(jobs.len()) {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if idx >= jobs.len() {
                        break;
                    }
                    let row = run_sweep_job(config, &jobs[idx]);
                    *results[idx].lock().unwrap() = Some(row);
                });
            }
        });
        results
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("worker filled row"))
            .collect()
    };

    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let mut csv = String::from(
        "case,config,setting,seed,status,psnr,ssim,vif,baseline_psnr,best_iter,es_gap,base_gap,error\n",
    );
    let digest = config.digest();
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.case,
            digest,
            row.setting,
            row.seed,
            row.status,
            fmt(row.psnr),
            fmt(row.ssim),
            fmt(row.vif),
            fmt(row.baseline_psnr),
            row.best_iter.map(|v| v.to_string()).unwrap_or_default(),
            fmt(row.es_gap),
            fmt(row.base_gap),
            row.error.clone().unwrap_or_default().replace(',', ";"),
        ));
    }
    let rows_path = dir.join("sweep_rows.csv");
    std::fs::write(&rows_path, csv).map_err(|e| io_err(&rows_path, e))?;

    // Per-setting aggregates.
    let mut settings: Vec<String> = Vec::new();
    for row in &rows {
        if !settings.contains(&row.setting) {
            settings.push(row.setting.clone());
        }
    }
    let mut summary = String::from("setting,n,psnr_mean,psnr_std,ssim_mean,ssim_std,vif_mean,vif_std,baseline_psnr_mean\n");
    let mut chart_points: Vec<(f64, f64)> = Vec::new();
    let mut baselines: Vec<f64> = Vec::new();
    for setting in &settings {
        let ok: Vec<&SweepRow> = rows
            .iter()
            .filter(|r| &r.setting == setting && r.status == "ok")
            .collect();
        let psnrs: Vec<f64> = ok.iter().filter_map(|r| r.psnr).collect();
        let ssims: Vec<f64> = ok.iter().filter_map(|r| r.ssim).collect();
        let vifs: Vec<f64> = ok.iter().filter_map(|r| r.vif).collect();
        let bases: Vec<f64> = ok.iter().filter_map(|r| r.baseline_psnr).collect();
        let (pm, ps) = mean_std(&psnrs);
        let (sm, ss) = mean_std(&ssims);
        let (vm, vs) = mean_std(&vifs);
        let (bm, _) = mean_std(&bases);
        summary.push_str(&format!(
            "{setting},{},{pm:.4},{ps:.4},{sm:.4},{ss:.4},{vm:.4},{vs:.4},{bm:.4}\n",
            ok.len()
        ));
        if let Some(job) = jobs.iter().find(|j| &j.setting == setting) {
            if pm.is_finite() {
                chart_points.push((job.setting_position, pm));
            }
        }
        baselines.extend(bases);
    }
    let summary_path = dir.join("sweep_summary.csv");
    std::fs::write(&summary_path, summary).map_err(|e| io_err(&summary_path, e))?;

    let ticks: Vec<(f64, String)> = {
        let mut seen = Vec::new();
        for job in &jobs {
            if !seen.iter().any(|(p, _): &(f64, String)| *p == job.setting_position) {
                seen.push((job.setting_position, job.setting.clone()));
            }
        }
        seen
    };
    let (baseline_mean, _) = mean_std(&baselines);
    svg::line_chart(
        &dir.join("sweep_psnr.svg"),
        "Mean PSNR per setting",
        "setting",
        "PSNR (dB)",
        &ticks,
        &[("psnr".to_string(), chart_points)],
        if baseline_mean.is_finite() {
            Some((baseline_mean, "blurry baseline"))
        } else {
            None
        },
    )?;

    let es_gaps: Vec<f64> = rows.iter().filter_map(|r| r.es_gap).collect();
    let base_gaps: Vec<f64> = rows.iter().filter_map(|r| r.base_gap).collect();
    if !es_gaps.is_empty() {
        svg::histogram_pair(
            &dir.join("sweep_es_gaps.svg"),
            "Stopping gaps across runs",
            "PSNR gap (dB)",
            ("es gap", &es_gaps),
            ("base gap", &base_gaps),
            12,
        )?;
    }
    config.emit_resolved(dir)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "sweep complete: {} rows ({} failed) -> {}",
        rows.len(),
        failed,
        rows_path.display()
    );
    Ok(dir.clone())
}

/// Evaluates matched estimate/groundtruth PNG pairs into a metrics CSV with
/// an aggregate row appended. Unmatched names are listed; no matches is an
/// error.
pub fn cmd_eval(config: &RunConfig) -> Result<PathBuf> {
    let estimates_dir = config
        .eval
        .estimates
        .as_ref()
        .ok_or_else(|| DeblurError::InvalidSpec("eval.estimates is required".into()))?;
    let groundtruth_dir = config
        .eval
        .groundtruth
        .as_ref()
        .ok_or_else(|| DeblurError::InvalidSpec("eval.groundtruth is required".into()))?;
    let estimates = list_pngs(estimates_dir)?;
    let groundtruth = list_pngs(groundtruth_dir)?;

    let mut rows = Vec::new();
    let mut unmatched = Vec::new();
    for (stem, est_path) in &estimates {
        match groundtruth.iter().find(|(g, _)| g == stem) {
            Some((_, gt_path)) => rows.push((stem.clone(), est_path.clone(), gt_path.clone())),
            None => unmatched.push(stem.clone()),
        }
    }
    for (stem, _) in &groundtruth {
        if !estimates.iter().any(|(e, _)| e == stem) {
            unmatched.push(format!("{stem} (groundtruth only)"));
        }
    }
    for name in &unmatched {
        eprintln!("unmatched: {name}");
    }
    if rows.is_empty() {
        return Err(DeblurError::InvalidSpec(
            "no matched estimate/groundtruth pairs".into(),
        ));
    }

    let digest = config.digest();
    let mut csv = String::from("case,config,status,psnr,ssim,vif,error\n");
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    let mut vifs = Vec::new();
    for (stem, est_path, gt_path) in &rows {
        let outcome = (|| -> Result<MetricReport> {
            let est = read_image(est_path)?;
            let gt = read_image(gt_path)?;
            evaluate_pair(&est, &gt, None, None)
        })();
        match outcome {
            Ok(m) => {
                psnrs.push(m.psnr);
                ssims.push(m.ssim);
                vifs.push(m.vif);
                csv.push_str(&format!(
                    "{stem},{digest},ok,{:.6},{:.6},{:.6},\n",
                    m.psnr, m.ssim, m.vif
                ));
            }
            Err(e) => {
                csv.push_str(&format!(
                    "{stem},{digest},error,,,,{}\n",
                    e.to_string().replace(',', ";")
                ));
            }
        }
    }
    let (pm, ps) = mean_std(&psnrs);
    let (sm, _) = mean_std(&ssims);
    let (vm, _) = mean_std(&vifs);
    csv.push_str(&format!(
        "__aggregate_mean__,{digest},ok,{pm:.6},{sm:.6},{vm:.6},std_psnr={ps:.6}\n"
    ));
    std::fs::create_dir_all(&config.out_dir).map_err(|e| io_err(&config.out_dir, e))?;
    let path = config.out_dir.join("metrics.csv");
    std::fs::write(&path, csv).map_err(|e| io_err(&path, e))?;
    config.emit_resolved(&config.out_dir)?;
    println!(
        "evaluated {} pairs (mean PSNR {:.2} dB) -> {}",
        psnrs.len(),
        pm,
        path.display()
    );
    Ok(path)
}
