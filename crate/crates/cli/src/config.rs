use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use srvrc::drivers::iterations_for_gap;
use srvrc::objectives::{
    read_libsvm_file, BinaryLogReg, MulticlassLogReg, MulticlassPenalty, SyntheticProblem, SyntheticSpec,
};
use srvrc::{Algorithm, FiniteSumProblem, SolverConfig};

/// Environment variable holding the root for relative dataset paths.
pub const DATA_ROOT_VAR: &str = "SRVRC_DATA_ROOT";

/// Where the objective comes from. Dataset paths are resolved against
/// `SRVRC_DATA_ROOT` when set, else against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Synthetic {
        seed: u64,
        n: usize,
        d: usize,
        nonconvexity: f64,
    },
    BinaryLogreg {
        path: PathBuf,
        lambda: f64,
        /// Scale every feature column into `[-1, 1]`.
        #[serde(default)]
        scale: bool,
    },
    MulticlassLogreg {
        path: PathBuf,
        lambda: f64,
        classes: usize,
        #[serde(default)]
        penalty: MulticlassPenalty,
        #[serde(default)]
        scale: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Estimate of `F(x_0) − inf F`. When set, replaces `solver.max_iters`
    /// with `⌈c·Δ_F·√ρ·ε^{−3/2}⌉`.
    #[serde(default)]
    pub delta_f: Option<f64>,
    /// Output directory, relative to the config file. Defaults to
    /// `<config stem>.out` next to the config.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// A parsed config together with the paths it was resolved against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub name: String,
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        let output_dir = match &config.output {
            Some(out) => base_dir.join(out),
            None => base_dir.join(format!("{name}.out")),
        };
        Ok(Self {
            name,
            config,
            base_dir,
            output_dir,
        })
    }

    pub fn dataset_path(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            return path.to_path_buf();
        }
        match std::env::var_os(DATA_ROOT_VAR) {
            Some(root) => PathBuf::from(root).join(path),
            None => self.base_dir.join(path),
        }
    }

    pub fn build_problem(&self) -> Result<Box<dyn FiniteSumProblem>> {
        Ok(match &self.config.problem {
            ProblemSpec::Synthetic {
                seed,
                n,
                d,
                nonconvexity,
            } => Box::new(SyntheticProblem::generate(&SyntheticSpec {
                seed: *seed,
                n: *n,
                d: *d,
                nonconvexity: *nonconvexity,
            })?),
            ProblemSpec::BinaryLogreg { path, lambda, scale } => {
                let path = self.dataset_path(path);
                let mut data = read_libsvm_file(&path).with_context(|| format!("loading {}", path.display()))?;
                if *scale {
                    data.scale_columns();
                }
                Box::new(BinaryLogReg::new(&data, *lambda)?)
            }
            ProblemSpec::MulticlassLogreg {
                path,
                lambda,
                classes,
                penalty,
                scale,
            } => {
                let path = self.dataset_path(path);
                let mut data = read_libsvm_file(&path).with_context(|| format!("loading {}", path.display()))?;
                if *scale {
                    data.scale_columns();
                }
                Box::new(MulticlassLogReg::with_penalty(&data, *lambda, *classes, *penalty)?)
            }
        })
    }

    /// Solver config with the `delta_f` budget helper applied.
    pub fn solver_config(&self, problem: &dyn FiniteSumProblem) -> Result<SolverConfig> {
        let mut solver = self.config.solver.clone();
        if let Some(delta_f) = self.config.delta_f {
            let rho = effective_rho(&solver, problem);
            solver.max_iters = iterations_for_gap(self.config.algorithm, delta_f, rho, solver.eps)?;
        }
        Ok(solver)
    }
}

/// `ρ` after the config override.
pub fn effective_rho(solver: &SolverConfig, problem: &dyn FiniteSumProblem) -> f64 {
    solver.lipschitz_hess.unwrap_or(problem.constants().lipschitz_hess)
}

/// Constant `c` of the `μ ≤ c·ε^{3/2}` guarantee for each algorithm.
pub fn guarantee_constant(algorithm: Algorithm) -> f64 {
    match algorithm {
        Algorithm::SrvrcFree => 1300.0,
        _ => 600.0,
    }
}
