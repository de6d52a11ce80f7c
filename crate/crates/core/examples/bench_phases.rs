//! Splits one objective iteration into timed phases.

use std::time::Instant;

use deblur_core::forward_model::plan_sizes;
use deblur_core::generators::{
    ImageGenerator, ImageGeneratorConfig, KernelField, KernelFieldConfig, KernelNormalize,
};
use deblur_core::image::ImageGrid;
use deblur_core::nn::{Adam, Graph};
use deblur_core::objective::{emit_objective, ObjectiveConfig};

fn main() {
    let y_size = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(128usize);
    let reps = 20;

    let plan = plan_sizes((y_size, y_size), None).unwrap();
    let y = ImageGrid::constant(y_size, y_size, 1, 0.5).unwrap();
    let generator: ImageGenerator<f32> =
        ImageGenerator::init(plan.x_size, 1, 0, ImageGeneratorConfig::default()).unwrap();
    let field: KernelField<f32> =
        KernelField::init(plan.k_size, 1, KernelFieldConfig::default()).unwrap();

    let mut graph: Graph<f32> = Graph::new();
    let img = generator.emit(&mut graph);
    let ker = field.emit(&mut graph, KernelNormalize::Sum);
    let nodes = emit_objective(&mut graph, img.output, ker.output, &y, &ObjectiveConfig::default())
        .unwrap();
    let params: Vec<_> = img
        .trainable_nodes(generator.store())
        .into_iter()
        .chain(ker.trainable_nodes(field.store()))
        .collect();
    let n_params = params.len();
    let mut adam = Adam::new(&graph, params);

    graph.forward();
    let t = Instant::now();
    for _ in 0..reps {
        graph.forward();
    }
    println!("forward  {:7.1} ms", 1000.0 * t.elapsed().as_secs_f64() / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        graph.backward(nodes.total);
    }
    println!("backward {:7.1} ms", 1000.0 * t.elapsed().as_secs_f64() / reps as f64);

    let rates = vec![1e-9f32; n_params];
    let t = Instant::now();
    for _ in 0..reps {
        adam.step(&mut graph, &rates);
    }
    println!("adam     {:7.1} ms", 1000.0 * t.elapsed().as_secs_f64() / reps as f64);
}
