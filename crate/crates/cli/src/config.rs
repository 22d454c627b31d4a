//! Experiment configuration: a flat `key = value` file with command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Reconstruction methods compared by the benchmark figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    TwoStep,
    Nnm,
    Mf,
    /// GLS on a Gaussian map restricted to the true column subspace.
    GaussianMapReference,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::TwoStep => "two_step",
            Method::Nnm => "nnm",
            Method::Mf => "mf",
            Method::GaussianMapReference => "gaussian_map_reference",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two_step" => Ok(Method::TwoStep),
            "nnm" => Ok(Method::Nnm),
            "mf" => Ok(Method::Mf),
            "gaussian_map_reference" => Ok(Method::GaussianMapReference),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankModeSetting {
    True,
    Estimated,
}

impl FromStr for RankModeSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "true" => Ok(RankModeSetting::True),
            "estimated" => Ok(RankModeSetting::Estimated),
            other => Err(format!("expected `true` or `estimated`, got `{other}`")),
        }
    }
}

impl fmt::Display for RankModeSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankModeSetting::True => "true",
            RankModeSetting::Estimated => "estimated",
        })
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub m_rows: usize,
    pub n_cols: usize,
    pub rank: usize,
    /// Stage-one columns; `None` means `⌈1.5r⌉`.
    pub m: Option<usize>,
    pub sigma2_grid: Vec<f64>,
    pub p_grid: Vec<usize>,
    /// Stage powers; `None` means `M·N`.
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    /// Power of the subspace-restricted design in the optimal-rank figure; `None` means `M·N`.
    pub design_power: Option<f64>,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub rank_mode: RankModeSetting,
    pub nnm_max_iters: usize,
    pub mf_max_iters: usize,
    pub solver_tol: f64,
    /// Map draws averaged per point of the coherence figure.
    pub coherence_draws: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            m_rows: 20,
            n_cols: 50,
            rank: 6,
            m: None,
            sigma2_grid: vec![0.01, 0.1, 1.0],
            p_grid: vec![384, 426, 468],
            p1: None,
            p2: None,
            design_power: None,
            trials: 1000,
            seed: 1,
            methods: vec![Method::TwoStep, Method::Nnm, Method::Mf],
            rank_mode: RankModeSetting::True,
            nnm_max_iters: 1000,
            mf_max_iters: 1000,
            solver_tol: 1e-6,
            coherence_draws: 50,
            out_dir: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

/// Comma- or whitespace-separated list.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

impl ExperimentConfig {
    /// Reads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_str_contents(&text)
    }

    pub fn from_str_contents(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "M" => self.m_rows = parse_value(key, value)?,
            "N" => self.n_cols = parse_value(key, value)?,
            "r" => self.rank = parse_value(key, value)?,
            "m" => self.m = Some(parse_value(key, value)?),
            "sigma2" => self.sigma2_grid = parse_list(key, value)?,
            "p" => self.p_grid = parse_list(key, value)?,
            "P1" => self.p1 = Some(parse_value(key, value)?),
            "P2" => self.p2 = Some(parse_value(key, value)?),
            "design_power" => self.design_power = Some(parse_value(key, value)?),
            "trials" => self.trials = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "methods" => self.methods = parse_list(key, value)?,
            "rank_mode" => self.rank_mode = parse_value(key, value)?,
            "nnm_max_iters" => self.nnm_max_iters = parse_value(key, value)?,
            "mf_max_iters" => self.mf_max_iters = parse_value(key, value)?,
            "solver_tol" => self.solver_tol = parse_value(key, value)?,
            "coherence_draws" => self.coherence_draws = parse_value(key, value)?,
            "out" => self.out_dir = Some(PathBuf::from(value)),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.m_rows == 0 || self.n_cols == 0 {
            return invalid("M and N must be positive".into());
        }
        if self.rank == 0 || self.rank > self.m_rows.min(self.n_cols) {
            return invalid(format!("r = {} must lie in 1..=min(M, N)", self.rank));
        }
        if self.stage_one_columns() > self.n_cols {
            return invalid(format!("m = {} exceeds N = {}", self.stage_one_columns(), self.n_cols));
        }
        if self.trials == 0 {
            return invalid("trials must be >= 1".into());
        }
        if self.sigma2_grid.is_empty() || self.p_grid.is_empty() {
            return invalid("sigma2 and p grids must be nonempty".into());
        }
        if self.sigma2_grid.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return invalid("noise variances must be finite and >= 0".into());
        }
        if self.methods.is_empty() {
            return invalid("at least one method is required".into());
        }
        for (name, v) in [("P1", self.p1), ("P2", self.p2), ("design_power", self.design_power)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return invalid(format!("{name} must be positive"));
                }
            }
        }
        if self.nnm_max_iters == 0 || self.mf_max_iters == 0 || !(self.solver_tol > 0.0) {
            return invalid("solver iteration caps must be >= 1 and tolerance > 0".into());
        }
        if self.coherence_draws == 0 {
            return invalid("coherence_draws must be >= 1".into());
        }
        Ok(())
    }

    pub fn stage_one_columns(&self) -> usize {
        self.m.unwrap_or((3 * self.rank).div_ceil(2))
    }

    pub fn p1(&self) -> f64 {
        self.p1.unwrap_or((self.m_rows * self.n_cols) as f64)
    }

    pub fn p2(&self) -> f64 {
        self.p2.unwrap_or((self.m_rows * self.n_cols) as f64)
    }

    pub fn design_power(&self) -> f64 {
        self.design_power.unwrap_or((self.m_rows * self.n_cols) as f64)
    }

    /// Observation count `mM + r(N−m)` of the two-step method.
    pub fn two_step_observations(&self, m: usize) -> usize {
        m * self.m_rows + self.rank * (self.n_cols - m)
    }

    /// Stage-one column count giving exactly `p` two-step observations.
    pub fn columns_for_observations(&self, p: usize) -> Result<usize, ConfigError> {
        let base = self.rank * self.n_cols;
        let step = self.m_rows - self.rank;
        if p < base || step == 0 || (p - base) % step != 0 || (p - base) / step > self.n_cols {
            return Err(ConfigError::Invalid(format!(
                "p = {p} is not of the form mM + r(N-m) for an integer m in 0..=N"
            )));
        }
        Ok((p - base) / step)
    }

    /// `key = value` lines describing the resolved configuration.
    pub fn manifest(&self) -> String {
        let join = |v: &[String]| v.join(",");
        let sig: Vec<String> = self.sigma2_grid.iter().map(|v| v.to_string()).collect();
        let ps: Vec<String> = self.p_grid.iter().map(|v| v.to_string()).collect();
        let methods: Vec<String> = self.methods.iter().map(|m| m.name().to_string()).collect();
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("M", self.m_rows.to_string());
        line("N", self.n_cols.to_string());
        line("r", self.rank.to_string());
        line("m", self.stage_one_columns().to_string());
        line("sigma2", join(&sig));
        line("p", join(&ps));
        line("P1", self.p1().to_string());
        line("P2", self.p2().to_string());
        line("design_power", self.design_power().to_string());
        line("trials", self.trials.to_string());
        line("seed", self.seed.to_string());
        line("methods", join(&methods));
        line("rank_mode", self.rank_mode.to_string());
        line("nnm_max_iters", self.nnm_max_iters.to_string());
        line("mf_max_iters", self.mf_max_iters.to_string());
        line("solver_tol", self.solver_tol.to_string());
        line("coherence_draws", self.coherence_draws.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_with_comments() {
        let cfg = ExperimentConfig::from_str_contents(
            "# comment\nM = 10\nN=12 # trailing\nsigma2 = 0.1, 1\np = 100 110\nmethods = two_step,mf\nrank_mode = estimated\n",
        )
        .unwrap();
        assert_eq!(cfg.m_rows, 10);
        assert_eq!(cfg.n_cols, 12);
        assert_eq!(cfg.sigma2_grid, vec![0.1, 1.0]);
        assert_eq!(cfg.p_grid, vec![100, 110]);
        assert_eq!(cfg.methods, vec![Method::TwoStep, Method::Mf]);
        assert_eq!(cfg.rank_mode, RankModeSetting::Estimated);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            ExperimentConfig::from_str_contents("bogus = 1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_str_contents("M 10"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::from_str_contents("trials = many"),
            Err(ConfigError::Value { .. })
        ));
        let cfg = ExperimentConfig {
            rank: 30,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn observation_bookkeeping() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.stage_one_columns(), 9);
        assert_eq!(cfg.two_step_observations(6), 384);
        assert_eq!(cfg.two_step_observations(9), 426);
        assert_eq!(cfg.columns_for_observations(468).unwrap(), 12);
        assert!(cfg.columns_for_observations(490).is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let cfg = ExperimentConfig {
            sigma2_grid: vec![0.5, 2.0],
            seed: 99,
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::from_str_contents(&cfg.manifest()).unwrap();
        assert_eq!(back.sigma2_grid, cfg.sigma2_grid);
        assert_eq!(back.seed, 99);
        assert_eq!(back.p1(), cfg.p1());
    }
}
