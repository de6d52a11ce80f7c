//! The optimization loop: joint Adam updates of both generators with
//! dual learning rates and milestone decay, windowed-moving-variance early
//! stopping, and best-iterate checkpointing.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::forward_model::SizingPlan;
use crate::generators::{
    image_from_node, kernel_from_node, write_back, ImageGenerator, ImageGeneratorConfig,
    KernelField, KernelFieldConfig, KernelNormalize,
};
use crate::image::{ImageGrid, Kernel};
use crate::nn::{fl, Adam, Graph, Scalar};
use crate::objective::{emit_objective, ObjectiveConfig};

/// Early-stopping patience profile; the noise level is unknown at run time,
/// so the choice is explicit configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EsProfile {
    /// Patience 500.
    LowNoise,
    /// Patience 200.
    HighNoise,
}

impl EsProfile {
    pub fn patience(self) -> usize {
        match self {
            EsProfile::LowNoise => 500,
            EsProfile::HighNoise => 200,
        }
    }
}

/// Solver configuration. Defaults follow the synthetic-data profile:
/// learning rates 1e-2 (image) and 1e-4 (kernel), halved at iterations
/// 2000/3000/5000/8000, at most 10000 iterations, early-stopping window 100.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolverConfig {
    pub lr_image: f64,
    pub lr_kernel: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub max_iters: usize,
    pub window: usize,
    pub es_profile: EsProfile,
    pub seed: u64,
    pub trace_every: usize,
    pub image_config: ImageGeneratorConfig,
    pub kernel_config: KernelFieldConfig,
    pub kernel_normalize: KernelNormalize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lr_image: 1e-2,
            lr_kernel: 1e-4,
            milestones: vec![2000, 3000, 5000, 8000],
            decay: 0.5,
            max_iters: 10_000,
            window: 100,
            es_profile: EsProfile::LowNoise,
            seed: 0,
            trace_every: 25,
            image_config: ImageGeneratorConfig::default(),
            kernel_config: KernelFieldConfig::default(),
            kernel_normalize: KernelNormalize::Sum,
        }
    }
}

impl SolverConfig {
    /// The real-data profile: learning rates 1e-3 / 1e-5.
    pub fn real_profile() -> Self {
        SolverConfig {
            lr_image: 1e-3,
            lr_kernel: 1e-5,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_image > self.lr_kernel && self.lr_kernel > 0.0) {
            return Err(DeblurError::Parameter(format!(
                "learning rates must satisfy lr_image > lr_kernel > 0, got {} and {}",
                self.lr_image, self.lr_kernel
            )));
        }
        if !(0.0 < self.decay && self.decay < 1.0) {
            return Err(DeblurError::Parameter(format!(
                "decay must be in (0, 1), got {}",
                self.decay
            )));
        }
        if self.window < 2 {
            return Err(DeblurError::Parameter(format!(
                "window must be at least 2, got {}",
                self.window
            )));
        }
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(DeblurError::Parameter(
                "milestones must be strictly increasing".into(),
            ));
        }
        if self.trace_every == 0 {
            return Err(DeblurError::Parameter("trace_every must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rates at an iteration: base rates times decay^(milestones passed).
pub fn lr_at(iter: usize, cfg: &SolverConfig) -> (f64, f64) {
    let passed = cfg.milestones.iter().filter(|&&m| m <= iter).count() as i32;
    let factor = cfg.decay.powi(passed);
    (cfg.lr_image * factor, cfg.lr_kernel * factor)
}

/// Spatial pooling threshold: canvases larger than this (pixels per side
/// squared) enter the variance queue average-pooled by a factor of 4.
const POOL_LIMIT: usize = 512 * 512;
const POOL_FACTOR: usize = 4;

/// Early-stopping state: a sliding queue of recent reconstructions, the
/// minimum windowed variance, and the best-so-far checkpoint index.
pub struct EsState {
    window: usize,
    queue: std::collections::VecDeque<Array3<f64>>,
    sum: Array3<f64>,
    sum_sq: Array3<f64>,
    pooled: bool,
    /// Minimum windowed variance seen so far (+∞ until a window fills).
    pub var_min: f64,
    /// Iteration at which `var_min` was last lowered.
    pub best_iter: Option<usize>,
    /// Iterations since `var_min` last decreased.
    pub stall: usize,
    /// Variance of the most recent full window, if any.
    pub last_var: Option<f64>,
}

fn pool4(data: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = data.dim();
    let (ph, pw) = (h.div_ceil(POOL_FACTOR), w.div_ceil(POOL_FACTOR));
    let mut out = Array3::zeros((ph, pw, c));
    for ch in 0..c {
        for i in 0..ph {
            for j in 0..pw {
                let mut acc = 0.0;
                let mut count = 0.0;
                for di in 0..POOL_FACTOR {
                    for dj in 0..POOL_FACTOR {
                        let (ii, jj) = (i * POOL_FACTOR + di, j * POOL_FACTOR + dj);
                        if ii < h && jj < w {
                            acc += data[[ii, jj, ch]];
                            count += 1.0;
                        }
                    }
                }
                out[[i, j, ch]] = acc / count;
            }
        }
    }
    out
}

impl EsState {
    pub fn new(window: usize, shape: (usize, usize, usize)) -> Self {
        let pooled = shape.0 * shape.1 > POOL_LIMIT;
        let stored = if pooled {
            (
                shape.0.div_ceil(POOL_FACTOR),
                shape.1.div_ceil(POOL_FACTOR),
                shape.2,
            )
        } else {
            shape
        };
        EsState {
            window,
            queue: std::collections::VecDeque::with_capacity(window + 1),
            sum: Array3::zeros(stored),
            sum_sq: Array3::zeros(stored),
            pooled,
            var_min: f64::INFINITY,
            best_iter: None,
            stall: 0,
            last_var: None,
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn pooled(&self) -> bool {
        self.pooled
    }

    /// Pushes one reconstruction; once the queue holds a full window,
    /// computes the mean over pixels of the per-pixel variance across the
    /// window (population convention) and tracks its running minimum.
    /// Returns true when this iterate became the new best.
    pub fn update(&mut self, image: &ImageGrid, iter: usize) -> Result<bool> {
        let frame = if self.pooled {
            pool4(image.data())
        } else {
            image.data().clone()
        };
        if frame.dim() != self.sum.dim() {
            return Err(DeblurError::Dimension(format!(
                "reconstruction shape changed mid-run: {:?} vs {:?}",
                frame.dim(),
                self.sum.dim()
            )));
        }
        self.sum += &frame;
        self.sum_sq += &frame.mapv(|v| v * v);
        self.queue.push_back(frame);
        if self.queue.len() > self.window {
            let old = self.queue.pop_front().expect("non-empty queue");
            self.sum -= &old;
            self.sum_sq -= &old.mapv(|v| v * v);
        }
        if self.queue.len() < self.window {
            return Ok(false);
        }
        let n = self.window as f64;
        let pixels = self.sum.len() as f64;
        let mut var_total = 0.0;
        for (s, q) in self.sum.iter().zip(self.sum_sq.iter()) {
            let mean = s / n;
            var_total += (q / n - mean * mean).max(0.0);
        }
        let var = var_total / pixels;
        self.last_var = Some(var);
        if var < self.var_min {
            self.var_min = var;
            self.best_iter = Some(iter);
            self.stall = 0;
            Ok(true)
        } else {
            self.stall += 1;
            Ok(false)
        }
    }
}

/// One recorded trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub lr_image: f64,
    pub lr_kernel: f64,
    pub windowed_variance: Option<f64>,
    pub groundtruth_psnr: Option<f64>,
}

/// Objective and quality history of one run.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// True when the variance queue stored pooled copies.
    pub pooled_queue: bool,
}

impl RunTrace {
    fn push(&mut self, row: TraceRow) {
        if let Some(last) = self.rows.last() {
            debug_assert!(row.iter > last.iter, "trace iterations must increase");
        }
        self.rows.push(row);
    }

    /// Rows carrying a groundtruth metric.
    pub fn groundtruth_rows(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.groundtruth_psnr.map(|p| (r.iter, p)))
            .collect()
    }
}

/// Gap between the trace's quality peak and the detected / final iterates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsGapReport {
    pub peak_iter: usize,
    pub peak_value: f64,
    pub es_gap: f64,
    pub base_gap: f64,
}

/// Computes the early-stopping gap (peak minus value at the detected best
/// iterate) and the base gap (peak minus the final value) from a trace with
/// groundtruth quality. The detected value is read at the latest recorded
/// row not after `best_iter`.
pub fn es_gap_report(trace: &RunTrace, best_iter: usize) -> Result<EsGapReport> {
    let rows = trace.groundtruth_rows();
    if rows.is_empty() {
        return Err(DeblurError::Unavailable(
            "trace carries no groundtruth metric".into(),
        ));
    }
    let (peak_iter, peak_value) = rows
        .iter()
        .cloned()
        .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite metric"))
        .expect("non-empty");
    let at_best = rows
        .iter()
        .rev()
        .find(|(i, _)| *i <= best_iter)
        .map(|(_, v)| *v)
        .unwrap_or(rows[0].1);
    let at_last = rows.last().expect("non-empty").1;
    Ok(EsGapReport {
        peak_iter,
        peak_value,
        es_gap: peak_value - at_best,
        base_gap: peak_value - at_last,
    })
}

/// Callback evaluating a groundtruth quality metric on a rendered canvas.
pub type QualityProbe<'a> = dyn Fn(&ImageGrid) -> f64 + 'a;

/// Everything a finished run returns: the early-stopped checkpoint, the
/// final iterate, and the trace.
pub struct RunOutput {
    pub best_canvas: ImageGrid,
    pub best_kernel: Kernel,
    pub best_iter: usize,
    pub final_canvas: ImageGrid,
    pub final_kernel: Kernel,
    pub final_iter: usize,
    pub trace: RunTrace,
    pub image_generator: ImageGenerator<f32>,
    pub kernel_field: KernelField<f32>,
    pub stopped_early: bool,
}

/// Runs the full pipeline on one observation: initializes both generators
/// from the seed, takes joint Adam steps on the objective, applies the
/// windowed-variance stopper each iteration, and returns the checkpoint at
/// the variance minimum (falling back to the final iterate when no window
/// ever filled).
pub fn run(
    y: &ImageGrid,
    plan: &SizingPlan,
    objective: &ObjectiveConfig,
    cfg: &SolverConfig,
    probe: Option<&QualityProbe>,
) -> Result<RunOutput> {
    cfg.validate()?;
    objective.validate()?;
    if y.size() != plan.y_size {
        return Err(DeblurError::Dimension(format!(
            "observation is {:?}, plan expects {:?}",
            y.size(),
            plan.y_size
        )));
    }

    let mut generator: ImageGenerator<f32> = ImageGenerator::init(
        plan.x_size,
        y.channels(),
        cfg.seed,
        cfg.image_config.clone(),
    )?;
    let mut field: KernelField<f32> =
        KernelField::init(plan.k_size, cfg.seed.wrapping_add(1), cfg.kernel_config.clone())?;

    let mut graph: Graph<f32> = Graph::new();
    let img = generator.emit(&mut graph);
    let ker = field.emit(&mut graph, cfg.kernel_normalize);
    let nodes = emit_objective(&mut graph, img.output, ker.output, y, objective)?;

    let image_params = img.trainable_nodes(generator.store());
    let kernel_params = ker.trainable_nodes(field.store());
    let mut all_params = image_params.clone();
    all_params.extend(&kernel_params);
    let image_param_count = image_params.len();
    let mut adam = Adam::new(&graph, all_params);

    let mut es = EsState::new(
        cfg.window,
        (plan.x_size.0, plan.x_size.1, y.channels()),
    );
    let mut trace = RunTrace {
        pooled_queue: es.pooled(),
        ..RunTrace::default()
    };

    // Iteration 0 state (untrained render) is the fallback checkpoint.
    graph.forward();
    let mut best_canvas = image_from_node(&graph, img.output);
    let mut best_kernel = kernel_from_node(&graph, ker.output);
    let mut best_iter = 0usize;
    let mut have_best = false;
    let mut stopped_early = false;

    let mut iter = 0usize;
    while iter < cfg.max_iters {
        iter += 1;
        let (lr_x, lr_k) = lr_at(iter, cfg);
        // The graph still holds the previous iterate's forward values, so
        // the gradient comes free of an extra pass.
        graph.backward(nodes.total);
        let rates: Vec<f32> = (0..adam.params().len())
            .map(|i| {
                if i < image_param_count {
                    fl(lr_x)
                } else {
                    fl(lr_k)
                }
            })
            .collect();
        adam.step(&mut graph, &rates);

        // Render the updated iterate; this forward also serves the next
        // iteration's backward pass.
        graph.forward();
        let objective_value = graph.scalar(nodes.total) as f64;
        if !objective_value.is_finite() {
            return Err(DeblurError::RunAborted {
                iter,
                reason: format!("non-finite objective {objective_value}"),
            });
        }
        let rendered = image_from_node(&graph, img.output);
        let became_best = es.update(&rendered, iter)?;
        if became_best {
            best_canvas = rendered.clone();
            best_kernel = kernel_from_node(&graph, ker.output);
            best_iter = iter;
            have_best = true;
        }

        let scheduled = iter % cfg.trace_every == 0 || iter == cfg.max_iters;
        if scheduled || became_best {
            trace.push(TraceRow {
                iter,
                objective: objective_value,
                lr_image: lr_x,
                lr_kernel: lr_k,
                windowed_variance: es.last_var,
                groundtruth_psnr: probe.map(|p| p(&rendered)),
            });
        }

        if es.var_min.is_finite() && es.stall >= cfg.es_profile.patience() {
            stopped_early = true;
            break;
        }
    }

    graph.forward();
    let final_canvas = image_from_node(&graph, img.output);
    let final_kernel = kernel_from_node(&graph, ker.output);
    if !have_best {
        // No window ever filled; fall back to the final iterate.
        best_canvas = final_canvas.clone();
        best_kernel = final_kernel.clone();
        best_iter = iter;
    }

    write_back(generator.store_mut(), &graph, &img.entry_nodes);
    write_back(field.store_mut(), &graph, &ker.entry_nodes);

    Ok(RunOutput {
        best_canvas,
        best_kernel,
        best_iter,
        final_canvas,
        final_kernel,
        final_iter: iter,
        trace,
        image_generator: generator,
        kernel_field: field,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_matches_milestones() {
        let cfg = SolverConfig::default();
        assert_eq!(lr_at(0, &cfg), (1e-2, 1e-4));
        assert_eq!(lr_at(1999, &cfg), (1e-2, 1e-4));
        let (lx, lk) = lr_at(2000, &cfg);
        assert!((lx - 5e-3).abs() < 1e-15 && (lk - 5e-5).abs() < 1e-18);
        let (lx, _) = lr_at(9000, &cfg);
        assert!((lx - 1e-2 * 0.0625).abs() < 1e-15);
    }

    #[test]
    fn lr_schedule_non_increasing() {
        let cfg = SolverConfig::default();
        let mut prev = f64::INFINITY;
        for iter in 0..12000 {
            let (lx, _) = lr_at(iter, &cfg);
            assert!(lx <= prev);
            prev = lx;
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::default();
        cfg.lr_kernel = 2e-2;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::default();
        cfg.milestones = vec![100, 100];
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::default();
        cfg.window = 1;
        assert!(cfg.validate().is_err());
    }

    fn scalar_image(v: f64) -> ImageGrid {
        ImageGrid::constant(1, 1, 1, v).unwrap()
    }

    #[test]
    fn wmv_identical_stream() {
        let mut es = EsState::new(4, (1, 1, 1));
        let img = scalar_image(0.5);
        for iter in 1..=10 {
            es.update(&img, iter).unwrap();
        }
        assert_eq!(es.var_min, 0.0);
        assert_eq!(es.best_iter, Some(4));
        // Stall grows by one per iteration after the single minimum.
        assert_eq!(es.stall, 6);
    }

    #[test]
    fn wmv_hand_computed_window3() {
        // Stream 0, 0, 0, 1 with W = 3: first window variance 0, second
        // window {0,0,1} has population variance 2/9.
        let mut es = EsState::new(3, (1, 1, 1));
        es.update(&scalar_image(0.0), 1).unwrap();
        es.update(&scalar_image(0.0), 2).unwrap();
        assert_eq!(es.last_var, None);
        es.update(&scalar_image(0.0), 3).unwrap();
        assert_eq!(es.last_var, Some(0.0));
        es.update(&scalar_image(1.0), 4).unwrap();
        let var = es.last_var.unwrap();
        assert!((var - 2.0 / 9.0).abs() < 1e-12, "variance {var}");
        assert_eq!(es.var_min, 0.0);
        assert_eq!(es.best_iter, Some(3));
        assert_eq!(es.stall, 1);
    }

    #[test]
    fn wmv_queue_bounded() {
        let mut es = EsState::new(3, (1, 1, 1));
        for iter in 1..=20 {
            es.update(&scalar_image((iter as f64) / 20.0), iter).unwrap();
            assert!(es.queue_len() <= 3);
        }
    }

    #[test]
    fn wmv_detects_scripted_valley() {
        // Alternating ±a(t) stream: windowed variance tracks a(t)², with the
        // valley scripted at t = 500.
        let window = 100;
        let mut es = EsState::new(window, (1, 1, 1));
        for t in 1..=1000usize {
            let amp = 0.05 + 0.4 * ((t as f64 - 500.0) / 500.0).powi(2);
            let v = 0.5 + if t % 2 == 0 { amp } else { -amp } * 0.9;
            es.update(&scalar_image(v), t).unwrap();
        }
        let best = es.best_iter.unwrap();
        assert!(
            (best as isize - 500).unsigned_abs() <= window,
            "valley detected at {best}"
        );
    }

    #[test]
    fn wmv_rejects_shape_drift() {
        let mut es = EsState::new(3, (1, 1, 1));
        es.update(&scalar_image(0.1), 1).unwrap();
        let bigger = ImageGrid::constant(2, 2, 1, 0.1).unwrap();
        assert!(es.update(&bigger, 2).is_err());
    }

    #[test]
    fn gap_report_cases() {
        let mk = |vals: &[(usize, f64)]| RunTrace {
            rows: vals
                .iter()
                .map(|&(iter, p)| TraceRow {
                    iter,
                    objective: 0.0,
                    lr_image: 0.0,
                    lr_kernel: 0.0,
                    windowed_variance: None,
                    groundtruth_psnr: Some(p),
                })
                .collect(),
            pooled_queue: false,
        };
        // Monotone increasing, best at the end: both gaps zero.
        let trace = mk(&[(10, 20.0), (20, 21.0), (30, 22.0)]);
        let report = es_gap_report(&trace, 30).unwrap();
        assert_eq!(report.es_gap, 0.0);
        assert_eq!(report.base_gap, 0.0);

        // Bell with the best near the peak: es gap strictly smaller.
        let trace = mk(&[(10, 20.0), (20, 25.0), (30, 24.0), (40, 18.0)]);
        let report = es_gap_report(&trace, 22).unwrap();
        assert!((report.es_gap - 0.0).abs() < 1e-12); // row at iter 20
        assert!((report.base_gap - 7.0).abs() < 1e-12);
        assert!(report.es_gap < report.base_gap);

        // Flat trace: both gaps zero.
        let trace = mk(&[(10, 20.0), (20, 20.0), (30, 20.0)]);
        let report = es_gap_report(&trace, 20).unwrap();
        assert_eq!(report.es_gap, 0.0);
        assert_eq!(report.base_gap, 0.0);
    }

    #[test]
    fn gap_report_needs_groundtruth() {
        let trace = RunTrace::default();
        assert!(matches!(
            es_gap_report(&trace, 0),
            Err(DeblurError::Unavailable(_))
        ));
    }

    #[test]
    fn zero_iteration_run_returns_untrained_render() {
        let plan = crate::forward_model::plan_sizes((6, 6), Some((3, 3))).unwrap();
        let y = ImageGrid::constant(6, 6, 1, 0.5).unwrap();
        let cfg = SolverConfig {
            max_iters: 0,
            ..SolverConfig::default()
        };
        let out = run(&y, &plan, &ObjectiveConfig::default(), &cfg, None).unwrap();
        assert!(out.trace.rows.is_empty());
        assert_eq!(out.best_iter, 0);
        let untrained: ImageGenerator<f32> =
            ImageGenerator::init(plan.x_size, 1, cfg.seed, cfg.image_config.clone()).unwrap();
        assert_eq!(out.best_canvas.data(), untrained.render().data());
    }

    #[test]
    fn checkpoint_consistency_after_run() {
        // Rendering the written-back parameters reproduces the final canvas
        // bit-exactly.
        let plan = crate::forward_model::plan_sizes((8, 8), Some((3, 3))).unwrap();
        let y = ImageGrid::constant(8, 8, 1, 0.4).unwrap();
        let cfg = SolverConfig {
            max_iters: 5,
            window: 3,
            trace_every: 1,
            ..SolverConfig::default()
        };
        let out = run(&y, &plan, &ObjectiveConfig::default(), &cfg, None).unwrap();
        let rerendered = out.image_generator.render();
        assert_eq!(rerendered.data(), out.final_canvas.data());
        let rerendered_kernel = out.kernel_field.render();
        assert_eq!(rerendered_kernel.data(), out.final_kernel.data());
    }

    #[test]
    fn deterministic_runs() {
        let plan = crate::forward_model::plan_sizes((6, 6), Some((2, 2))).unwrap();
        let y = ImageGrid::constant(6, 6, 1, 0.3).unwrap();
        let cfg = SolverConfig {
            max_iters: 4,
            window: 2,
            trace_every: 1,
            ..SolverConfig::default()
        };
        let a = run(&y, &plan, &ObjectiveConfig::default(), &cfg, None).unwrap();
        let b = run(&y, &plan, &ObjectiveConfig::default(), &cfg, None).unwrap();
        assert_eq!(a.final_canvas.data(), b.final_canvas.data());
        assert_eq!(a.final_kernel.data(), b.final_kernel.data());
        assert_eq!(a.trace.rows, b.trace.rows);
    }
}
