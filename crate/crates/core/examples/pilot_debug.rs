//! Instrumented pilot: exposes the data/regularizer split, kernel
//! concentration, reconvolution fit, and groundtruth quality per phase.

use deblur_core::degradation::{synthesize_case, NoiseSpec};
use deblur_core::forward_model::{convolve_truncated, plan_sizes};
use deblur_core::generators::{
    image_from_node, kernel_from_node, ImageGenerator, ImageGeneratorConfig, KernelField,
    KernelFieldConfig, KernelNormalize,
};
use deblur_core::image::ImageGrid;
use deblur_core::metrics::{best_window_psnr, psnr};
use deblur_core::nn::{Adam, Graph};
use deblur_core::objective::{emit_objective, ObjectiveConfig};
use deblur_core::solver::{lr_at, SolverConfig};
use deblur_core::synthdata::{cartoon_scene, motion_kernel};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let iters: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3000);
    let y_side: usize = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(128);
    let sigma: f64 = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.01);
    let lr_kernel: f64 = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-4);

    let k_true = motion_kernel(13, 40 + seed);
    let clean = cartoon_scene(y_side + 12, y_side + 12, 7);
    let y = synthesize_case(&clean, &k_true, &NoiseSpec::gaussian(sigma, 100 + seed)).unwrap();
    let gt = ImageGrid::new(
        clean
            .data()
            .slice(ndarray::s![6..6 + y_side, 6..6 + y_side, ..])
            .to_owned(),
    )
    .unwrap();
    println!("baseline PSNR(y, gt) = {:.3}", psnr(&y, &gt).unwrap());

    let plan = plan_sizes(y.size(), None).unwrap();
    let cfg = SolverConfig {
        max_iters: iters,
        seed,
        lr_kernel,
        ..SolverConfig::default()
    };
    let objective = ObjectiveConfig::default();

    let generator: ImageGenerator<f32> =
        ImageGenerator::init(plan.x_size, 1, cfg.seed, cfg.image_config.clone()).unwrap();
    let field: KernelField<f32> =
        KernelField::init(plan.k_size, cfg.seed.wrapping_add(1), cfg.kernel_config.clone())
            .unwrap();
    let mut graph: Graph<f32> = Graph::new();
    let img = generator.emit(&mut graph);
    let ker = field.emit(&mut graph, KernelNormalize::Sum);
    let nodes = emit_objective(&mut graph, img.output, ker.output, &y, &objective).unwrap();
    let image_params = img.trainable_nodes(generator.store());
    let kernel_params = ker.trainable_nodes(field.store());
    let n_img = image_params.len();
    let mut all = image_params;
    all.extend(&kernel_params);
    let mut adam = Adam::new(&graph, all);

    graph.forward();
    for iter in 1..=iters {
        graph.backward(nodes.total);
        let (lx, lk) = lr_at(iter, &cfg);
        let rates: Vec<f32> = (0..adam.params().len())
            .map(|i| if i < n_img { lx as f32 } else { lk as f32 })
            .collect();
        adam.step(&mut graph, &rates);
        graph.forward();

        if iter % 250 == 0 || iter == 1 || iter == 50 {
            let data = graph.scalar(nodes.data_loss) as f64;
            let reg = nodes
                .regularizer
                .map(|r| graph.scalar(r) as f64)
                .unwrap_or(0.0);
            let kernel = kernel_from_node(&graph, ker.output);
            let canvas = image_from_node(&graph, img.output);
            let kmax = kernel.data().iter().cloned().fold(0.0f64, f64::max);
            // Mass of the best 3x3 window.
            let (kh, kw) = kernel.size();
            let mut best3 = 0.0f64;
            for i in 0..kh - 2 {
                for j in 0..kw - 2 {
                    let m: f64 = kernel
                        .data()
                        .slice(ndarray::s![i..i + 3, j..j + 3])
                        .sum();
                    best3 = best3.max(m);
                }
            }
            let reconv = convolve_truncated(&canvas, &kernel).unwrap();
            let fit = psnr(&reconv, &y).unwrap();
            let quality = best_window_psnr(&canvas, &gt);
            println!(
                "iter {iter:5}: data {data:.3e} reg*λ {:.3e} | fit(reconv,y) {fit:6.2} dB | best-window {quality:6.2} dB | kmax {kmax:.4} top3x3 {best3:.4}",
                reg * objective.reg_weight
            );
        }
    }
    let kernel = kernel_from_node(&graph, ker.output);
    let canvas = image_from_node(&graph, img.output);
    deblur_core::io::write_image_8bit(std::path::Path::new("/tmp/dbg_canvas.png"), &canvas)
        .unwrap();
    deblur_core::io::write_kernel_png(std::path::Path::new("/tmp/dbg_kernel.png"), &kernel)
        .unwrap();
    deblur_core::io::write_image_8bit(std::path::Path::new("/tmp/dbg_y.png"), &y).unwrap();
    deblur_core::io::write_image_8bit(std::path::Path::new("/tmp/dbg_gt.png"), &gt).unwrap();
}
