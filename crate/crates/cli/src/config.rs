//! The JSON run-configuration bundle: every command reads one file, command
//! line flags override selected fields, and the fully resolved result is
//! re-emitted beside the outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use deblur_core::degradation::NoiseSpec;
use deblur_core::generators::{ImageGeneratorConfig, KernelFieldConfig, KernelModel, KernelNormalize};
use deblur_core::objective::{LossKind, ObjectiveConfig, RegKind};
use deblur_core::solver::{EsProfile, SolverConfig};
use deblur_core::{DeblurError, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}

/// Sizing policy: an explicit kernel size or the half-size default.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    #[serde(default)]
    pub kernel_size: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub loss_kind: LossKind,
    pub huber_delta: f64,
    pub reg_kind: RegKind,
    pub reg_weight: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        let cfg = ObjectiveConfig::default();
        ObjectiveSection {
            loss_kind: cfg.loss_kind,
            huber_delta: cfg.huber_delta,
            reg_kind: cfg.reg_kind,
            reg_weight: cfg.reg_weight,
        }
    }
}

impl ObjectiveSection {
    pub fn to_core(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            loss_kind: self.loss_kind,
            huber_delta: self.huber_delta,
            reg_kind: self.reg_kind,
            reg_weight: self.reg_weight,
            ..ObjectiveConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub lr_image: f64,
    pub lr_kernel: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub max_iters: usize,
    pub window: usize,
    pub trace_every: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let cfg = SolverConfig::default();
        SolverSection {
            lr_image: cfg.lr_image,
            lr_kernel: cfg.lr_kernel,
            milestones: cfg.milestones,
            decay: cfg.decay,
            max_iters: cfg.max_iters,
            window: cfg.window,
            trace_every: cfg.trace_every,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kernel_model: KernelModel,
    pub kernel_normalize: KernelNormalize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kernel_model: KernelModel::Siren,
            kernel_normalize: KernelNormalize::Sum,
        }
    }
}

/// Procedural inputs for `synth` when no files are given.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub scene_height: usize,
    pub scene_width: usize,
    #[serde(default)]
    pub scene_seed: u64,
    pub kernel_kind: GeneratedKernel,
    pub kernel_size: usize,
    #[serde(default)]
    pub kernel_seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum GeneratedKernel {
    Motion,
    Gaussian,
    Delta,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    /// Clean image path (PNG). Mutually exclusive with `generate`.
    pub clean: Option<PathBuf>,
    /// Groundtruth kernel path (exact-value CSV).
    pub kernel: Option<PathBuf>,
    pub generate: Option<GenerateSection>,
    pub noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct InputSection {
    /// Blurry observation: a PNG path or a synthesized case directory.
    pub blurry: Option<PathBuf>,
    /// Optional groundtruth image (enables metrics and trace quality).
    pub clean: Option<PathBuf>,
    /// Optional groundtruth kernel CSV.
    pub kernel: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda,
    KernelSizeLevel,
    Noise,
}

fn default_lambda_grid() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
}

fn default_noise_presets() -> Vec<String> {
    vec!["list_low".into(), "list_high".into()]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    /// Synthesized case directories (groundtruth required).
    pub cases: Vec<PathBuf>,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_noise_presets")]
    pub noise_presets: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub estimates: Option<PathBuf>,
    pub groundtruth: Option<PathBuf>,
}

/// The complete configuration bundle.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub seed: u64,
    pub es_profile: EsProfile,
    pub out_dir: PathBuf,
    pub plan: PlanSection,
    pub objective: ObjectiveSection,
    pub solver: SolverSection,
    pub model: ModelSection,
    pub synth: SynthSection,
    pub input: InputSection,
    pub sweep: Option<SweepSection>,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            es_profile: EsProfile::LowNoise,
            out_dir: PathBuf::from("out"),
            plan: PlanSection::default(),
            objective: ObjectiveSection::default(),
            solver: SolverSection::default(),
            model: ModelSection::default(),
            synth: SynthSection::default(),
            input: InputSection::default(),
            sweep: None,
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DeblurError::io(path.display().to_string(), e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| DeblurError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(DeblurError::InvalidSpec(format!(
                "unsupported config schema version {}",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Builds the core solver configuration from the bundle.
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            lr_image: self.solver.lr_image,
            lr_kernel: self.solver.lr_kernel,
            milestones: self.solver.milestones.clone(),
            decay: self.solver.decay,
            max_iters: self.solver.max_iters,
            window: self.solver.window,
            es_profile: self.es_profile,
            seed: self.seed,
            trace_every: self.solver.trace_every,
            image_config: ImageGeneratorConfig::default(),
            kernel_config: KernelFieldConfig {
                model: self.model.kernel_model,
                ..KernelFieldConfig::default()
            },
            kernel_normalize: self.model.kernel_normalize,
        }
    }

    /// Writes the fully resolved bundle beside the outputs.
    pub fn emit_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| DeblurError::io(dir.display().to_string(), e))?;
        let path = dir.join("resolved_config.json");
        let json = serde_json::to_string_pretty(self).expect("serializable config");
        std::fs::write(&path, json).map_err(|e| DeblurError::io(path.display().to_string(), e))
    }

    /// Short digest of the resolved configuration, for result bookkeeping.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("serializable config");
        let hash = Sha256::digest(&json);
        hash.iter()
            .take(6)
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_losslessly() {
        let mut cfg = RunConfig::default();
        cfg.seed = 42;
        cfg.plan.kernel_size = Some((13, 13));
        cfg.sweep = Some(SweepSection {
            axis: SweepAxis::Lambda,
            cases: vec![PathBuf::from("case_0")],
            lambda_grid: default_lambda_grid(),
            noise_presets: default_noise_presets(),
            seeds: vec![0, 1, 2],
        });
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn default_lambda_grid_includes_paper_values() {
        assert!(default_lambda_grid().contains(&1e-5));
        assert!(default_lambda_grid().contains(&1e-6));
    }

    #[test]
    fn digest_changes_with_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 12);
    }

    #[test]
    fn rejects_unknown_fields() {
        let json = r#"{"schema_version":1,"bogus":true}"#;
        assert!(serde_json::from_str::<RunConfig>(json).is_err());
    }
}
