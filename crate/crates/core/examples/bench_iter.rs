//! Times solver iterations at the desk-scale benchmark geometry.

use std::time::Instant;

use deblur_core::degradation::{synthesize_case, NoiseSpec};
use deblur_core::forward_model::plan_sizes;
use deblur_core::objective::ObjectiveConfig;
use deblur_core::solver::{run, SolverConfig};
use deblur_core::synthdata::{cartoon_scene, motion_kernel};

fn main() {
    let y_size = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(128usize);
    let iters = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(30usize);

    let kernel = motion_kernel(13, 3);
    let clean = cartoon_scene(y_size + 12, y_size + 12, 1);
    let y = synthesize_case(&clean, &kernel, &NoiseSpec::gaussian(0.01, 7)).unwrap();
    println!("observation {:?}", y.size());
    let plan = plan_sizes(y.size(), None).unwrap();
    println!("plan kernel {:?} canvas {:?}", plan.k_size, plan.x_size);

    let cfg = SolverConfig {
        max_iters: iters,
        trace_every: 10,
        ..SolverConfig::default()
    };
    let start = Instant::now();
    let out = run(&y, &plan, &ObjectiveConfig::default(), &cfg, None).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "{} iterations in {:.2}s -> {:.1} ms/iter (last objective {:.6})",
        out.final_iter,
        elapsed,
        1000.0 * elapsed / out.final_iter as f64,
        out.trace.rows.last().map(|r| r.objective).unwrap_or(f64::NAN)
    );
}
