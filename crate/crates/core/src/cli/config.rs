use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chaining::ExtraSamples;
use crate::emp_process::{Regime, SearchConfig};
use crate::error::{Error, Result};
use crate::oracle::OracleConfig;
use crate::solver::SolverConfig;

/// Top-level experiment file. Every payload is optional and falls back to
/// its defaults; only the one named on the command line is run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub solve: SolvePayload,
    #[serde(default)]
    pub simulate: SimulatePayload,
    #[serde(default)]
    pub check: CheckPayload,
    #[serde(default)]
    pub chain: ChainPayload,
    #[serde(default)]
    pub oracle: OraclePayload,
    #[serde(default)]
    pub scaling: ScalingPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LossSpec {
    Quadratic,
    Huber { kappa: f64 },
    Logistic,
}

/// Lasso fit on a simulated sparse regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolvePayload {
    pub n: usize,
    pub p: usize,
    pub s0: usize,
    pub signal: f64,
    pub sigma: f64,
    pub loss: LossSpec,
    /// Penalty level; when absent, `lambda_multiple`·√(2 log(2p)/n).
    pub lambda: Option<f64>,
    pub lambda_multiple: f64,
    pub solver: SolverConfig,
}

impl Default for SolvePayload {
    fn default() -> Self {
        Self {
            n: 100,
            p: 200,
            s0: 3,
            signal: 1.0,
            sigma: 1.0,
            loss: LossSpec::Quadratic,
            lambda: None,
            lambda_multiple: 2.0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatePayload {
    pub regime: Regime,
    pub n_grid: Vec<usize>,
    pub p_grid: Vec<usize>,
    pub m_grid: Vec<f64>,
    pub reps: usize,
    pub search: SearchConfig,
}

impl Default for SimulatePayload {
    fn default() -> Self {
        Self {
            regime: Regime::Linear,
            n_grid: vec![64, 256, 1024],
            p_grid: vec![2, 16, 128, 1024],
            m_grid: vec![1.0],
            reps: 2000,
            search: SearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckPayload {
    pub n: usize,
    pub p: usize,
    pub t_grid: Vec<f64>,
    pub reps: usize,
    /// Huber toy size for the contraction check.
    pub contraction_n: usize,
    pub contraction_p: usize,
    /// Mixture toy grid for the multivariate contraction ratio.
    pub mixture_n_grid: Vec<usize>,
    pub mixture_q: usize,
    pub mixture_reps: usize,
    pub search: SearchConfig,
    /// Search used by both contraction checks; a few restarts already reach
    /// the supremum on these low-dimensional toys.
    pub contraction_search: SearchConfig,
}

impl Default for CheckPayload {
    fn default() -> Self {
        Self {
            n: 256,
            p: 32,
            t_grid: vec![3.0],
            reps: 2000,
            contraction_n: 128,
            contraction_p: 16,
            mixture_n_grid: vec![64, 256, 1024],
            mixture_q: 4,
            mixture_reps: 500,
            search: SearchConfig::default(),
            contraction_search: SearchConfig {
                restarts: 8,
                ascent_steps: 30,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainPayload {
    pub p: usize,
    pub n_grid: Vec<usize>,
    pub extra: ExtraSamples,
    pub reps: usize,
    pub svg: bool,
}

impl Default for ChainPayload {
    fn default() -> Self {
        let d = crate::chaining::LogfactorConfig::default_grid(0);
        Self {
            p: d.p,
            n_grid: d.n_grid,
            extra: d.extra,
            reps: d.reps,
            svg: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OraclePayload {
    pub n: usize,
    pub p: usize,
    pub s0: usize,
    pub signal: f64,
    pub sigma: f64,
    pub delta: f64,
    pub lambda_multiple: f64,
    pub reps: usize,
    pub search: SearchConfig,
}

impl Default for OraclePayload {
    fn default() -> Self {
        let d = OracleConfig::default();
        Self {
            n: d.n,
            p: d.p,
            s0: d.s0,
            signal: d.signal,
            sigma: d.sigma,
            delta: d.delta,
            lambda_multiple: d.lambda_multiple,
            reps: d.reps,
            search: d.search,
        }
    }
}

impl OraclePayload {
    pub fn to_config(&self, seed: u64) -> OracleConfig {
        OracleConfig {
            n: self.n,
            p: self.p,
            s0: self.s0,
            signal: self.signal,
            sigma: self.sigma,
            delta: self.delta,
            lambda_multiple: self.lambda_multiple,
            reps: self.reps,
            seed,
            search: self.search,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingPayload {
    pub regime: Regime,
    pub n_grid: Vec<usize>,
    pub p_grid: Vec<usize>,
    pub radius: f64,
    pub reps: usize,
    /// Largest |observed/predicted − 1| accepted for the linear regime.
    pub tolerance: f64,
    pub search: SearchConfig,
}

impl Default for ScalingPayload {
    fn default() -> Self {
        Self {
            regime: Regime::Linear,
            n_grid: vec![64, 256, 1024],
            p_grid: vec![2, 16, 128, 1024],
            radius: 1.0,
            reps: 2000,
            tolerance: 0.15,
            search: SearchConfig::default(),
        }
    }
}

fn nonempty<T>(path: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::config(path, "grid must be nonempty"));
    }
    Ok(())
}

fn positive(path: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::config(path, "must be positive"));
    }
    Ok(())
}

fn at_least_two(path: &str, reps: usize) -> Result<()> {
    if reps < 2 {
        return Err(Error::config(path, "at least 2 replications are needed"));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses JSON, reporting the path of the offending key on schema errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Ok((Self::from_json(text)?, bytes))
    }

    /// Grid and count checks for every payload, so a broken file fails
    /// whichever subcommand is run.
    pub fn validate(&self) -> Result<()> {
        let s = &self.solve;
        positive("solve.n", s.n)?;
        positive("solve.p", s.p)?;
        let sim = &self.simulate;
        nonempty("simulate.n_grid", &sim.n_grid)?;
        nonempty("simulate.p_grid", &sim.p_grid)?;
        nonempty("simulate.m_grid", &sim.m_grid)?;
        at_least_two("simulate.reps", sim.reps)?;
        if sim.m_grid.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::config("simulate.m_grid", "radii must be positive"));
        }
        let c = &self.check;
        nonempty("check.t_grid", &c.t_grid)?;
        positive("check.n", c.n)?;
        positive("check.p", c.p)?;
        nonempty("check.mixture_n_grid", &c.mixture_n_grid)?;
        at_least_two("check.mixture_reps", c.mixture_reps)?;
        if c.mixture_q < 2 {
            return Err(Error::config("check.mixture_q", "the mixture toy needs at least two covariates"));
        }
        if c.reps < 100 {
            return Err(Error::config("check.reps", "tail checks need at least 100 replications"));
        }
        let ch = &self.chain;
        if ch.n_grid.len() < 2 {
            return Err(Error::config("chain.n_grid", "grid needs at least two values of n"));
        }
        positive("chain.p", ch.p)?;
        if ch.reps < 100 {
            return Err(Error::config("chain.reps", "the Gaussian supremum needs at least 100 replications"));
        }
        positive("oracle.reps", self.oracle.reps)?;
        let sc = &self.scaling;
        nonempty("scaling.n_grid", &sc.n_grid)?;
        nonempty("scaling.p_grid", &sc.p_grid)?;
        at_least_two("scaling.reps", sc.reps)?;
        if !(sc.radius > 0.0) {
            return Err(Error::config("scaling.radius", "must be positive"));
        }
        Ok(())
    }
}
