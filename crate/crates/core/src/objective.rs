//! The training objective: robust Huber data fitting of the reconvolved
//! observation plus a scale-invariant l1/l2 gradient-sparsity regularizer,
//! with MSE and plain-l1 ablation switches.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::generators::{ImageGenerator, KernelField, KernelNormalize};
use crate::image::ImageGrid;
use crate::nn::{Graph, NodeId, Scalar};

/// Data-fitting penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Huber,
    Mse,
}

/// Gradient-domain sparsity surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    L1OverL2,
    L1,
    None,
}

/// Objective configuration: loss family, Huber knee, regularizer family
/// and weight.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ObjectiveConfig {
    pub loss_kind: LossKind,
    pub huber_delta: f64,
    pub reg_kind: RegKind,
    pub reg_weight: f64,
    pub denom_epsilon: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            loss_kind: LossKind::Huber,
            huber_delta: 0.05,
            reg_kind: RegKind::L1OverL2,
            reg_weight: 1e-5,
            denom_epsilon: 1e-12,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.huber_delta <= 0.0 || !self.huber_delta.is_finite() {
            return Err(DeblurError::Parameter(format!(
                "huber delta must be positive, got {}",
                self.huber_delta
            )));
        }
        if self.reg_weight < 0.0 || !self.reg_weight.is_finite() {
            return Err(DeblurError::Parameter(format!(
                "regularization weight must be nonnegative, got {}",
                self.reg_weight
            )));
        }
        Ok(())
    }
}

/// Mean Huber penalty of a residual array: `u²/2` inside the knee,
/// `δ(|u| − δ/2)` outside.
pub fn huber_loss(residual: &[f64], delta: f64) -> Result<f64> {
    if delta <= 0.0 || !delta.is_finite() {
        return Err(DeblurError::Parameter(format!(
            "huber delta must be positive, got {delta}"
        )));
    }
    if residual.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = residual
        .iter()
        .map(|&u| {
            let a = u.abs();
            if a <= delta {
                0.5 * u * u
            } else {
                delta * (a - 0.5 * delta)
            }
        })
        .sum();
    Ok(total / residual.len() as f64)
}

/// Forward-difference gradients along both axes (replicate boundary),
/// pooled over channels into one vector.
pub fn gradient_field(x: &ImageGrid) -> Vec<f64> {
    let (h, w) = x.size();
    let c = x.channels();
    let mut g = Vec::with_capacity(2 * h * w * c);
    for ch in 0..c {
        let plane = x.channel(ch);
        for i in 0..h {
            for j in 0..w {
                let d = if j + 1 < w {
                    plane[[i, j + 1]] - plane[[i, j]]
                } else {
                    0.0
                };
                g.push(d);
            }
        }
        for i in 0..h {
            for j in 0..w {
                let d = if i + 1 < h {
                    plane[[i + 1, j]] - plane[[i, j]]
                } else {
                    0.0
                };
                g.push(d);
            }
        }
    }
    g
}

/// The gradient-sparsity value of an image under the chosen surrogate:
/// `‖g‖₁/(‖g‖₂ + ε)` for the ratio, `‖g‖₁` for plain l1, 0 for none.
pub fn grad_sparsity(x: &ImageGrid, kind: RegKind, denom_epsilon: f64) -> f64 {
    if kind == RegKind::None {
        return 0.0;
    }
    let g = gradient_field(x);
    let l1: f64 = g.iter().map(|v| v.abs()).sum();
    match kind {
        RegKind::L1 => l1,
        RegKind::L1OverL2 => {
            let l2 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            l1 / (l2 + denom_epsilon)
        }
        RegKind::None => unreachable!(),
    }
}

/// Node bundle of an assembled objective graph.
pub struct ObjectiveNodes {
    pub image: NodeId,
    pub kernel: NodeId,
    pub reconvolved: NodeId,
    pub data_loss: NodeId,
    pub regularizer: Option<NodeId>,
    pub total: NodeId,
}

/// Converts an observation into the graph's (c, h, w) constant layout.
pub fn observation_to_array<T: Scalar>(y: &ImageGrid) -> ArrayD<T> {
    let (h, w) = y.size();
    let c = y.channels();
    let mut target = ArrayD::zeros(ndarray::IxDyn(&[c, h, w]));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                target[[ch, i, j]] = crate::nn::fl(y.data()[[i, j, ch]]);
            }
        }
    }
    target
}

/// Wires the full objective on top of already-emitted image and kernel
/// nodes: `loss(y − k ⊛ image) + λ·sparsity(image gradients)`.
pub fn emit_objective<T: Scalar>(
    graph: &mut Graph<T>,
    image: NodeId,
    kernel: NodeId,
    y: &ImageGrid,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveNodes> {
    cfg.validate()?;
    let (n_y, m_y) = y.size();
    let img_shape = graph.value(image).shape().to_vec();
    let ker_shape = graph.value(kernel).shape().to_vec();
    if img_shape[1] != n_y + ker_shape[0] - 1 || img_shape[2] != m_y + ker_shape[1] - 1 {
        return Err(DeblurError::Dimension(format!(
            "canvas {}x{} with kernel {}x{} cannot reproduce a {}x{} observation",
            img_shape[1], img_shape[2], ker_shape[0], ker_shape[1], n_y, m_y
        )));
    }
    if img_shape[0] != y.channels() {
        return Err(DeblurError::Dimension(format!(
            "canvas has {} channels, observation {}",
            img_shape[0],
            y.channels()
        )));
    }
    let target = observation_to_array::<T>(y);
    let reconvolved = graph.conv_valid_xk(image, kernel);
    let data_loss = match cfg.loss_kind {
        LossKind::Huber => graph.huber_vs_const(reconvolved, target, cfg.huber_delta),
        LossKind::Mse => graph.mse_vs_const(reconvolved, target),
    };
    let regularizer = match cfg.reg_kind {
        RegKind::None => None,
        RegKind::L1 => {
            let g = graph.forward_diff(image);
            Some(graph.l1_norm(g))
        }
        RegKind::L1OverL2 => {
            let g = graph.forward_diff(image);
            let l1 = graph.l1_norm(g);
            let l2 = graph.l2_norm(g);
            Some(graph.ratio_eps(l1, l2, cfg.denom_epsilon))
        }
    };
    let total = match regularizer {
        Some(reg) => graph.weighted_sum(&[(data_loss, 1.0), (reg, cfg.reg_weight)]),
        None => graph.weighted_sum(&[(data_loss, 1.0)]),
    };
    Ok(ObjectiveNodes {
        image,
        kernel,
        reconvolved,
        data_loss,
        regularizer,
        total,
    })
}

/// Evaluates the full objective for a generator pair against an
/// observation, through a throwaway graph.
pub fn total_objective<T: Scalar>(
    y: &ImageGrid,
    generator: &ImageGenerator<T>,
    field: &KernelField<T>,
    cfg: &ObjectiveConfig,
    normalize: KernelNormalize,
) -> Result<f64> {
    let mut graph = Graph::new();
    let image = generator.emit(&mut graph);
    let kernel = field.emit(&mut graph, normalize);
    let nodes = emit_objective(&mut graph, image.output, kernel.output, y, cfg)?;
    graph.forward();
    Ok(graph.scalar(nodes.total).to_f64().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_model::plan_sizes;
    use crate::generators::{ImageGeneratorConfig, KernelFieldConfig};
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn huber_zero_residual() {
        assert_eq!(huber_loss(&[0.0; 16], 0.05).unwrap(), 0.0);
    }

    #[test]
    fn huber_knee_value() {
        // Both branches agree at |u| = δ: δ²/2 = 0.00125 for δ = 0.05.
        let delta = 0.05;
        let quad = huber_loss(&[delta], delta).unwrap();
        assert!((quad - 0.00125).abs() < 1e-15);
        let lin = delta * (delta - 0.5 * delta);
        assert!((quad - lin).abs() < 1e-15);
    }

    #[test]
    fn huber_linear_branch() {
        let v = huber_loss(&[1.0], 0.05).unwrap();
        assert!((v - 0.04875).abs() < 1e-15);
    }

    #[test]
    fn huber_rejects_bad_delta() {
        assert!(huber_loss(&[1.0], 0.0).is_err());
        assert!(huber_loss(&[1.0], -1.0).is_err());
    }

    #[test]
    fn huber_below_squared() {
        let delta = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let u: f64 = rng.gen_range(-2.0..2.0);
            let h = huber_loss(&[u], delta).unwrap();
            assert!(h <= 0.5 * u * u + 1e-15);
            if u.abs() <= delta {
                assert!((h - 0.5 * u * u).abs() < 1e-15);
            } else {
                assert!(h < 0.5 * u * u);
            }
        }
    }

    #[test]
    fn sparsity_one_hot_and_ones() {
        // A single nonzero gradient entry gives ratio 1; N equal entries √N.
        let mut data = Array3::zeros((1, 3, 1));
        data[[0, 1, 0]] = 1.0;
        let x = ImageGrid::new(data).unwrap();
        let g = gradient_field(&x);
        let nonzero: Vec<f64> = g.iter().cloned().filter(|v| *v != 0.0).collect();
        assert_eq!(nonzero.len(), 2);
        // Build the one-hot case directly on a 2-pixel image instead.
        let mut data = Array3::zeros((1, 2, 1));
        data[[0, 1, 0]] = 1.0;
        let x = ImageGrid::new(data).unwrap();
        let ratio = grad_sparsity(&x, RegKind::L1OverL2, 1e-12);
        assert!((ratio - 1.0).abs() < 1e-9, "ratio {ratio}");

        // Staircase rows: every vertical difference equals 1/(h−1).
        let h = 17;
        let mut data = Array3::zeros((h, 1, 1));
        for i in 0..h {
            data[[i, 0, 0]] = i as f64 / (h - 1) as f64;
        }
        let x = ImageGrid::new(data).unwrap();
        let n = (h - 1) as f64;
        let ratio = grad_sparsity(&x, RegKind::L1OverL2, 1e-12);
        assert!((ratio - n.sqrt()).abs() < 1e-9, "ratio {ratio}");
    }

    #[test]
    fn sparsity_constant_image_is_zero() {
        let x = ImageGrid::constant(8, 8, 1, 0.5).unwrap();
        assert_eq!(grad_sparsity(&x, RegKind::L1, 1e-12), 0.0);
        assert_eq!(grad_sparsity(&x, RegKind::L1OverL2, 1e-12), 0.0);
        assert_eq!(grad_sparsity(&x, RegKind::None, 1e-12), 0.0);
    }

    #[test]
    fn sparsity_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = Array3::from_shape_fn((12, 10, 1), |_| rng.gen::<f64>() * 0.3);
        let x = ImageGrid::new(data).unwrap();
        let base_ratio = grad_sparsity(&x, RegKind::L1OverL2, 1e-12);
        let base_l1 = grad_sparsity(&x, RegKind::L1, 1e-12);
        for alpha in [0.5, 3.0] {
            let scaled = ImageGrid::from_clipped(x.data() * alpha).unwrap();
            // from_clipped would break linearity; keep alpha·x inside [0,1]
            // by construction (entries ≤ 0.3, alpha ≤ 3).
            let r = grad_sparsity(&scaled, RegKind::L1OverL2, 1e-12);
            assert!((r - base_ratio).abs() < 1e-6, "alpha {alpha}: {r}");
            let l = grad_sparsity(&scaled, RegKind::L1, 1e-12);
            assert!((l - alpha * base_l1).abs() < 1e-9, "alpha {alpha}: {l}");
        }
    }

    #[test]
    fn objective_zero_for_exact_fit() {
        // Delta kernel and an observation equal to the rendered crop give a
        // zero data term; with λ = 0 the whole objective vanishes.
        let plan = plan_sizes((6, 6), Some((3, 3))).unwrap();
        let gen: ImageGenerator<f64> =
            ImageGenerator::init(plan.x_size, 1, 7, ImageGeneratorConfig::default()).unwrap();
        let rendered = gen.render();
        let k = crate::image::Kernel::delta(3, 3, 1, 1).unwrap();
        let y = crate::forward_model::convolve_truncated(&rendered, &k).unwrap();

        let mut graph: Graph<f64> = Graph::new();
        let img = gen.emit(&mut graph);
        let kconst = graph.constant(ndarray::ArrayD::from_shape_fn(
            ndarray::IxDyn(&[3, 3]),
            |ix| k.data()[[ix[0], ix[1]]],
        ));
        let cfg = ObjectiveConfig {
            reg_weight: 0.0,
            reg_kind: RegKind::None,
            ..ObjectiveConfig::default()
        };
        let nodes = emit_objective(&mut graph, img.output, kconst, &y, &cfg).unwrap();
        graph.forward();
        let v = graph.scalar(nodes.total);
        assert!(v.abs() < 1e-18, "objective {v}");
    }

    #[test]
    fn objective_linear_in_reg_weight() {
        let plan = plan_sizes((6, 6), Some((3, 3))).unwrap();
        let gen: ImageGenerator<f64> =
            ImageGenerator::init(plan.x_size, 1, 3, ImageGeneratorConfig::default()).unwrap();
        let field: KernelField<f64> =
            KernelField::init(plan.k_size, 4, KernelFieldConfig::default()).unwrap();
        let y = ImageGrid::constant(6, 6, 1, 0.5).unwrap();
        let a = 2e-4;
        let eval = |w: f64| {
            let cfg = ObjectiveConfig {
                reg_weight: w,
                ..ObjectiveConfig::default()
            };
            total_objective(&y, &gen, &field, &cfg, KernelNormalize::Sum).unwrap()
        };
        let at_a = eval(a);
        let at_2a = eval(2.0 * a);
        let sparsity = grad_sparsity(&gen.render(), RegKind::L1OverL2, 1e-12);
        assert!(
            ((at_2a - at_a) - a * sparsity).abs() < 1e-9,
            "difference {} vs {}",
            at_2a - at_a,
            a * sparsity
        );
    }

    /// Central finite differences of the full objective against the tape's
    /// gradients, in double precision.
    #[test]
    fn objective_gradients_match_finite_differences() {
        let plan = plan_sizes((8, 8), None).unwrap();
        assert_eq!(plan.k_size, (4, 4));
        let gen: ImageGenerator<f64> =
            ImageGenerator::init(plan.x_size, 1, 21, ImageGeneratorConfig::default()).unwrap();
        let field: KernelField<f64> =
            KernelField::init(plan.k_size, 22, KernelFieldConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let ydata = Array3::from_shape_fn((8, 8, 1), |_| rng.gen::<f64>());
        let y = ImageGrid::new(ydata).unwrap();
        let cfg = ObjectiveConfig {
            reg_weight: 1e-3,
            ..ObjectiveConfig::default()
        };

        let mut graph: Graph<f64> = Graph::new();
        let img = gen.emit(&mut graph);
        let ker = field.emit(&mut graph, KernelNormalize::Sum);
        let nodes = emit_objective(&mut graph, img.output, ker.output, &y, &cfg).unwrap();
        graph.forward();
        graph.backward(nodes.total);

        let param_nodes: Vec<_> = img
            .trainable_nodes(gen.store())
            .into_iter()
            .chain(ker.trainable_nodes(field.store()))
            .collect();

        let mut checked = 0usize;
        let mut worst: f64 = 0.0;
        for (pi, &param) in param_nodes.iter().enumerate() {
            // 20 sampled coordinates per network side are spread across the
            // parameter tensors by stepping through them round-robin.
            if pi % 3 != 0 && graph.value(param).len() < 64 {
                continue;
            }
            let len = graph.value(param).len();
            let probe = rng.gen_range(0..len);
            let analytic = graph.grad(param).as_slice().unwrap()[probe];
            let h = 1e-6;
            let orig = graph.value(param).as_slice().unwrap()[probe];

            let eval_at = |v: f64, graph: &mut Graph<f64>| {
                graph.value_mut(param).as_slice_mut().unwrap()[probe] = v;
                graph.forward();
                let out = graph.scalar(nodes.total);
                graph.value_mut(param).as_slice_mut().unwrap()[probe] = orig;
                out
            };
            let plus = eval_at(orig + h, &mut graph);
            let minus = eval_at(orig - h, &mut graph);
            let numeric = (plus - minus) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            worst = worst.max(rel);
            assert!(
                rel < 1e-3,
                "param {pi} coord {probe}: analytic {analytic:.3e} vs numeric {numeric:.3e}"
            );
            checked += 1;
        }
        // Restore the forward state and make sure enough coordinates ran.
        graph.forward();
        assert!(checked >= 40, "only {checked} coordinates checked");
        assert!(worst < 1e-3, "worst relative error {worst}");
    }
}
