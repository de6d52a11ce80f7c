//! The two trainable priors: a convolutional encoder–decoder image
//! generator fed a fixed random seed tensor, and a sinusoidal coordinate
//! network representing the kernel as a continuous field that is
//! discretized onto the kernel grid and normalized onto the simplex.

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::image::{ImageGrid, Kernel};
use crate::nn::{fl, Graph, NodeId, Scalar};

/// Named tensors of one module, in a fixed registration order.
#[derive(Debug, Clone)]
pub struct TensorStore<T: Scalar> {
    entries: Vec<StoreEntry<T>>,
}

#[derive(Debug, Clone)]
pub struct StoreEntry<T: Scalar> {
    pub name: String,
    pub value: ArrayD<T>,
    pub trainable: bool,
}

impl<T: Scalar> TensorStore<T> {
    fn new() -> Self {
        TensorStore { entries: Vec::new() }
    }

    fn add(&mut self, name: impl Into<String>, value: ArrayD<T>, trainable: bool) -> usize {
        self.entries.push(StoreEntry {
            name: name.into(),
            value,
            trainable,
        });
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[StoreEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [StoreEntry<T>] {
        &mut self.entries
    }

    /// Total element count of trainable tensors.
    pub fn parameter_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }
}

/// A module's subgraph: its output node plus one graph node per store entry.
pub struct Emitted {
    pub output: NodeId,
    pub entry_nodes: Vec<NodeId>,
}

impl Emitted {
    /// Node ids of the trainable entries, in store order.
    pub fn trainable_nodes<T: Scalar>(&self, store: &TensorStore<T>) -> Vec<NodeId> {
        self.entry_nodes
            .iter()
            .zip(store.entries())
            .filter(|(_, e)| e.trainable)
            .map(|(id, _)| *id)
            .collect()
    }
}

fn register<T: Scalar>(graph: &mut Graph<T>, store: &TensorStore<T>) -> Vec<NodeId> {
    store
        .entries()
        .iter()
        .map(|e| {
            if e.trainable {
                graph.parameter(e.value.clone())
            } else {
                graph.constant(e.value.clone())
            }
        })
        .collect()
}

/// Copies trained graph values back into the store.
pub fn write_back<T: Scalar>(store: &mut TensorStore<T>, graph: &Graph<T>, nodes: &[NodeId]) {
    for (entry, &node) in store.entries_mut().iter_mut().zip(nodes) {
        entry.value.assign(graph.value(node));
    }
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> ArrayD<T> {
    // Draws in f64 then converts, so equal seeds give the same parameters in
    // both precisions.
    ArrayD::from_shape_simple_fn(IxDyn(shape), || fl(rng.gen::<f64>() * (hi - lo) + lo))
}

fn conv_init<T: Scalar>(
    rng: &mut ChaCha8Rng,
    store: &mut TensorStore<T>,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
) -> (usize, usize) {
    let bound = 1.0 / ((cin * k * k) as f64).sqrt();
    let w = uniform(rng, &[cout, cin, k, k], -bound, bound);
    let b = uniform(rng, &[cout], -bound, bound);
    (
        store.add(format!("{name}.weight"), w, true),
        store.add(format!("{name}.bias"), b, true),
    )
}

fn bn_init<T: Scalar>(store: &mut TensorStore<T>, name: &str, channels: usize) -> (usize, usize) {
    let gamma = ArrayD::from_elem(IxDyn(&[channels]), T::one());
    let beta = ArrayD::zeros(IxDyn(&[channels]));
    (
        store.add(format!("{name}.gamma"), gamma, true),
        store.add(format!("{name}.beta"), beta, true),
    )
}

fn pad_to_multiple(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Architecture of the encoder–decoder image generator.
///
/// Five scales with stride-2 downsampling; the decoder mirrors them and
/// upsamples bilinearly at the end of each block, so no 3×3 convolution runs
/// at full canvas resolution. Defaults: channel widths (16, 32, 64, 128,
/// 128), skip width 4, 32-channel seed tensor drawn from U[0, 0.1].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ImageGeneratorConfig {
    pub widths: Vec<usize>,
    pub skip_width: usize,
    pub seed_channels: usize,
    pub seed_scale: f64,
    pub leaky_slope: f64,
}

impl Default for ImageGeneratorConfig {
    fn default() -> Self {
        ImageGeneratorConfig {
            widths: vec![16, 32, 64, 128, 128],
            skip_width: 4,
            seed_channels: 32,
            seed_scale: 0.1,
            leaky_slope: 0.2,
        }
    }
}

/// Untrained convolutional encoder–decoder with skip connections and a
/// sigmoid output head. The seed tensor is drawn once at init and never
/// changes; the canvas is padded internally to a multiple of the total
/// downsampling factor and the output cropped back.
pub struct ImageGenerator<T: Scalar> {
    config: ImageGeneratorConfig,
    out_size: (usize, usize),
    channels: usize,
    padded: (usize, usize),
    seed: u64,
    store: TensorStore<T>,
}

impl<T: Scalar> ImageGenerator<T> {
    pub fn init(
        out_size: (usize, usize),
        channels: usize,
        seed: u64,
        config: ImageGeneratorConfig,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(DeblurError::UnsupportedChannels(format!(
                "generator output channels must be 1 or 3, got {channels}"
            )));
        }
        if config.widths.is_empty() {
            return Err(DeblurError::Architecture("no scales configured".into()));
        }
        if out_size.0 < 2 || out_size.1 < 2 {
            return Err(DeblurError::Architecture(format!(
                "canvas {}x{} too small for the downsampling pyramid",
                out_size.0, out_size.1
            )));
        }
        let factor = 1usize << config.widths.len();
        let padded = (
            pad_to_multiple(out_size.0, factor),
            pad_to_multiple(out_size.1, factor),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = TensorStore::new();
        let z = uniform(
            &mut rng,
            &[config.seed_channels, padded.0, padded.1],
            0.0,
            config.seed_scale,
        );
        store.add("seed", z, false);

        let n = config.widths.len();
        let mut cin = config.seed_channels;
        for (i, &w) in config.widths.iter().enumerate() {
            conv_init(&mut rng, &mut store, &format!("down{i}.conv_a"), w, cin, 3);
            bn_init(&mut store, &format!("down{i}.bn_a"), w);
            conv_init(&mut rng, &mut store, &format!("down{i}.conv_b"), w, w, 3);
            bn_init(&mut store, &format!("down{i}.bn_b"), w);
            if i + 1 < n {
                conv_init(
                    &mut rng,
                    &mut store,
                    &format!("skip{i}.conv"),
                    config.skip_width,
                    w,
                    1,
                );
                bn_init(&mut store, &format!("skip{i}.bn"), config.skip_width);
            }
            cin = w;
        }
        for i in (0..n).rev() {
            let w = config.widths[i];
            let cin_up = if i + 1 == n {
                config.widths[n - 1]
            } else {
                config.skip_width + config.widths[i + 1]
            };
            bn_init(&mut store, &format!("up{i}.bn_in"), cin_up);
            conv_init(&mut rng, &mut store, &format!("up{i}.conv_a"), w, cin_up, 3);
            bn_init(&mut store, &format!("up{i}.bn_a"), w);
            conv_init(&mut rng, &mut store, &format!("up{i}.conv_b"), w, w, 3);
            bn_init(&mut store, &format!("up{i}.bn_b"), w);
        }
        conv_init(
            &mut rng,
            &mut store,
            "head.conv",
            channels,
            config.widths[0],
            1,
        );

        Ok(ImageGenerator {
            config,
            out_size,
            channels,
            padded,
            seed,
            store,
        })
    }

    pub fn config(&self) -> &ImageGeneratorConfig {
        &self.config
    }

    pub fn out_size(&self) -> (usize, usize) {
        self.out_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn store(&self) -> &TensorStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut TensorStore<T> {
        &mut self.store
    }

    /// Trainable parameter count (seed tensor excluded).
    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    /// Builds the generator subgraph; the output node is the cropped
    /// sigmoid image of shape (channels, height, width).
    pub fn emit(&self, graph: &mut Graph<T>) -> Emitted {
        let nodes = register(graph, &self.store);
        let mut idx = 0usize;
        let mut next = || {
            let id = nodes[idx];
            idx += 1;
            id
        };
        let slope = self.config.leaky_slope;
        let n = self.config.widths.len();

        let z = next();
        let mut cur = z;
        let mut skips: Vec<NodeId> = Vec::new();
        for i in 0..n {
            let (wa, ba) = (next(), next());
            let (ga, ha) = (next(), next());
            let (wb, bb) = (next(), next());
            let (gb, hb) = (next(), next());
            cur = graph.conv2d(cur, wa, ba, 2, 1);
            cur = graph.batchnorm(cur, ga, ha);
            cur = graph.leaky_relu(cur, slope);
            cur = graph.conv2d(cur, wb, bb, 1, 1);
            cur = graph.batchnorm(cur, gb, hb);
            cur = graph.leaky_relu(cur, slope);
            if i + 1 < n {
                let (ws, bs) = (next(), next());
                let (gs, hs) = (next(), next());
                let mut s = graph.conv2d(cur, ws, bs, 1, 0);
                s = graph.batchnorm(s, gs, hs);
                s = graph.leaky_relu(s, slope);
                skips.push(s);
            }
        }
        for i in (0..n).rev() {
            if i + 1 < n {
                cur = graph.concat_channels(skips[i], cur);
            }
            let (g0, h0) = (next(), next());
            let (wa, ba) = (next(), next());
            let (ga, ha) = (next(), next());
            let (wb, bb) = (next(), next());
            let (gb, hb) = (next(), next());
            cur = graph.batchnorm(cur, g0, h0);
            cur = graph.conv2d(cur, wa, ba, 1, 1);
            cur = graph.batchnorm(cur, ga, ha);
            cur = graph.leaky_relu(cur, slope);
            cur = graph.conv2d(cur, wb, bb, 1, 1);
            cur = graph.batchnorm(cur, gb, hb);
            cur = graph.leaky_relu(cur, slope);
            cur = graph.upsample_bilinear2x(cur);
        }
        let (wh, bh) = (next(), next());
        cur = graph.conv2d(cur, wh, bh, 1, 0);
        cur = graph.sigmoid(cur);
        let output = graph.crop_hw(cur, self.out_size.0, self.out_size.1);
        debug_assert_eq!(idx, nodes.len());
        let _ = self.padded;
        Emitted {
            output,
            entry_nodes: nodes,
        }
    }

    /// One forward pass through a fresh graph.
    pub fn render(&self) -> ImageGrid {
        let mut graph = Graph::new();
        let emitted = self.emit(&mut graph);
        graph.forward();
        image_from_node(&graph, emitted.output)
    }
}

/// Converts a (c, h, w) graph value into an [`ImageGrid`].
pub fn image_from_node<T: Scalar>(graph: &Graph<T>, node: NodeId) -> ImageGrid {
    let v = graph.value(node);
    let s = v.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut data = ndarray::Array3::<f64>::zeros((h, w, c));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                data[[i, j, ch]] = v[[ch, i, j]].to_f64().unwrap();
            }
        }
    }
    ImageGrid::from_clipped(data).expect("sigmoid output is in range")
}

/// Converts a (kh, kw) graph value into a simplex [`Kernel`].
pub fn kernel_from_node<T: Scalar>(graph: &Graph<T>, node: NodeId) -> Kernel {
    let v = graph.value(node);
    let s = v.shape();
    let mut data = ndarray::Array2::<f64>::zeros((s[0], s[1]));
    for i in 0..s[0] {
        for j in 0..s[1] {
            data[[i, j]] = v[[i, j]].to_f64().unwrap().max(0.0);
        }
    }
    Kernel::from_normalized(data).expect("sigmoid field has positive mass")
}

/// Activation family of the kernel coordinate network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelModel {
    /// Sinusoidal layers with the standard frequency-scaled initialization.
    Siren,
    /// Plain ReLU multilayer perceptron on the same coordinates.
    Mlp,
}

/// Whether the discretized field is renormalized onto the simplex inside
/// the training graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelNormalize {
    Sum,
    None,
}

/// Architecture of the kernel coordinate field: two hidden layers of width
/// 64, first-layer frequency scale 30, sigmoid output.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KernelFieldConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub omega: f64,
    pub model: KernelModel,
}

impl Default for KernelFieldConfig {
    fn default() -> Self {
        KernelFieldConfig {
            hidden_width: 64,
            hidden_layers: 2,
            omega: 30.0,
            model: KernelModel::Siren,
        }
    }
}

/// A continuous kernel field evaluated on a fixed lattice of pixel centers
/// mapped affinely onto [−1, 1]².
pub struct KernelField<T: Scalar> {
    config: KernelFieldConfig,
    k_size: (usize, usize),
    seed: u64,
    store: TensorStore<T>,
    coords: ArrayD<T>,
}

/// Row-major pixel-center coordinates on [−1, 1]²; a singleton dimension
/// maps to 0.
pub fn coordinate_grid(k_size: (usize, usize)) -> Vec<(f64, f64)> {
    let (kh, kw) = k_size;
    let axis = |i: usize, n: usize| {
        if n <= 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        }
    };
    let mut coords = Vec::with_capacity(kh * kw);
    for i in 0..kh {
        for j in 0..kw {
            coords.push((axis(i, kh), axis(j, kw)));
        }
    }
    coords
}

impl<T: Scalar> KernelField<T> {
    pub fn init(k_size: (usize, usize), seed: u64, config: KernelFieldConfig) -> Result<Self> {
        if k_size.0 == 0 || k_size.1 == 0 {
            return Err(DeblurError::InvalidSpec("empty kernel size".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = TensorStore::new();
        let width = config.hidden_width;
        let mut fan_in = 2usize;
        for layer in 0..config.hidden_layers {
            let w_bound = match (config.model, layer) {
                (KernelModel::Siren, 0) => 1.0 / fan_in as f64,
                (KernelModel::Siren, _) => (6.0 / fan_in as f64).sqrt() / config.omega,
                (KernelModel::Mlp, _) => (6.0 / fan_in as f64).sqrt(),
            };
            let b_bound = 1.0 / (fan_in as f64).sqrt();
            let w = uniform(&mut rng, &[fan_in, width], -w_bound, w_bound);
            let b = uniform(&mut rng, &[width], -b_bound, b_bound);
            store.add(format!("layer{layer}.weight"), w, true);
            store.add(format!("layer{layer}.bias"), b, true);
            fan_in = width;
        }
        let w_bound = match config.model {
            KernelModel::Siren => (6.0 / fan_in as f64).sqrt() / config.omega,
            KernelModel::Mlp => (6.0 / fan_in as f64).sqrt(),
        };
        let b_bound = 1.0 / (fan_in as f64).sqrt();
        let w = uniform(&mut rng, &[fan_in, 1], -w_bound, w_bound);
        let b = uniform(&mut rng, &[1], -b_bound, b_bound);
        store.add("out.weight", w, true);
        store.add("out.bias", b, true);

        let grid = coordinate_grid(k_size);
        let mut coords = ArrayD::<T>::zeros(IxDyn(&[grid.len(), 2]));
        for (idx, (r, c)) in grid.iter().enumerate() {
            coords[[idx, 0]] = fl(*r);
            coords[[idx, 1]] = fl(*c);
        }

        Ok(KernelField {
            config,
            k_size,
            seed,
            store,
            coords,
        })
    }

    pub fn config(&self) -> &KernelFieldConfig {
        &self.config
    }

    pub fn k_size(&self) -> (usize, usize) {
        self.k_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn store(&self) -> &TensorStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut TensorStore<T> {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    /// Builds the field subgraph; the output is the (kh, kw) discretized
    /// field, sum-normalized when requested.
    pub fn emit(&self, graph: &mut Graph<T>, normalize: KernelNormalize) -> Emitted {
        let nodes = register(graph, &self.store);
        let coords = graph.constant(self.coords.clone());
        let mut cur = coords;
        let mut idx = 0usize;
        let mut next = || {
            let id = nodes[idx];
            idx += 1;
            id
        };
        for _ in 0..self.config.hidden_layers {
            let (w, b) = (next(), next());
            cur = graph.linear(cur, w, b);
            cur = match self.config.model {
                KernelModel::Siren => graph.sin_scaled(cur, self.config.omega),
                KernelModel::Mlp => graph.relu(cur),
            };
        }
        let (w, b) = (next(), next());
        cur = graph.linear(cur, w, b);
        cur = graph.sigmoid(cur);
        cur = graph.reshape(cur, &[self.k_size.0, self.k_size.1]);
        if normalize == KernelNormalize::Sum {
            cur = graph.normalize_sum(cur);
        }
        debug_assert_eq!(idx, nodes.len());
        Emitted {
            output: cur,
            entry_nodes: nodes,
        }
    }

    /// Evaluates the field and discretizes onto the simplex.
    pub fn render(&self) -> Kernel {
        let mut graph = Graph::new();
        let emitted = self.emit(&mut graph, KernelNormalize::Sum);
        graph.forward();
        kernel_from_node(&graph, emitted.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;

    #[test]
    fn generator_shape_range_and_determinism() {
        let gen_a: ImageGenerator<f32> =
            ImageGenerator::init((45, 37), 1, 11, ImageGeneratorConfig::default()).unwrap();
        let gen_b: ImageGenerator<f32> =
            ImageGenerator::init((45, 37), 1, 11, ImageGeneratorConfig::default()).unwrap();
        let img_a = gen_a.render();
        let img_b = gen_b.render();
        assert_eq!(img_a.size(), (45, 37));
        assert_eq!(img_a.channels(), 1);
        assert!(img_a.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        assert_eq!(img_a.data(), img_b.data());

        let gen_c: ImageGenerator<f32> =
            ImageGenerator::init((45, 37), 1, 12, ImageGeneratorConfig::default()).unwrap();
        assert_ne!(img_a.data(), gen_c.render().data());
    }

    #[test]
    fn generator_seed_tensor_is_frozen() {
        let gen: ImageGenerator<f32> =
            ImageGenerator::init((33, 33), 1, 5, ImageGeneratorConfig::default()).unwrap();
        let entry = &gen.store().entries()[0];
        assert_eq!(entry.name, "seed");
        assert!(!entry.trainable);
        assert!(entry
            .value
            .iter()
            .all(|v| (0.0..=0.1).contains(&v.to_f64().unwrap())));
    }

    #[test]
    fn generator_rejects_degenerate_canvas() {
        assert!(matches!(
            ImageGenerator::<f32>::init((1, 64), 1, 0, ImageGeneratorConfig::default()),
            Err(DeblurError::Architecture(_))
        ));
    }

    #[test]
    fn generator_parameter_count_matches_design() {
        // Design target for widths (16, 32, 64, 128, 128) with skip width 4
        // is about 1.35M trainable parameters; assert within ±30%.
        let gen: ImageGenerator<f64> =
            ImageGenerator::init((64, 64), 1, 0, ImageGeneratorConfig::default()).unwrap();
        let count = gen.parameter_count();
        let target = 1_350_000f64;
        assert!(
            (count as f64) > 0.7 * target && (count as f64) < 1.3 * target,
            "parameter count {count}"
        );
    }

    #[test]
    fn field_shape_range_and_determinism() {
        let f1: KernelField<f32> =
            KernelField::init((13, 13), 3, KernelFieldConfig::default()).unwrap();
        let f2: KernelField<f32> =
            KernelField::init((13, 13), 3, KernelFieldConfig::default()).unwrap();
        let k1 = f1.render();
        let k2 = f2.render();
        assert_eq!(k1.size(), (13, 13));
        assert_eq!(k1.data(), k2.data());
        assert!((k1.data().sum() - 1.0).abs() < 1e-6);
        assert!(k1.data().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn coordinate_grid_spans_unit_square() {
        let grid = coordinate_grid((3, 5));
        assert_eq!(grid.len(), 15);
        assert_eq!(grid[0], (-1.0, -1.0));
        assert_eq!(grid[14], (1.0, 1.0));
        assert_eq!(grid[7], (0.0, 0.0));
        let singleton = coordinate_grid((1, 1));
        assert_eq!(singleton[0], (0.0, 0.0));
    }

    #[test]
    fn field_models_differ() {
        let siren: KernelField<f32> =
            KernelField::init((9, 9), 3, KernelFieldConfig::default()).unwrap();
        let mlp_cfg = KernelFieldConfig {
            model: KernelModel::Mlp,
            ..KernelFieldConfig::default()
        };
        let mlp: KernelField<f32> = KernelField::init((9, 9), 3, mlp_cfg).unwrap();
        assert_ne!(siren.render().data(), mlp.render().data());
    }
}
