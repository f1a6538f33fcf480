//! Experiment configuration read from a single TOML file.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use pcompliance_core::geometry::{CrackSet, ProblemSpec};
use pcompliance_core::solver::{Method, SolverConfig};
use pcompliance_core::source::Source;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub solve: Option<SolveSection>,
    pub capacity: Option<CapacitySection>,
    pub vanishing: Option<VanishingSection>,
    pub poincare: Option<PoincareSection>,
    pub stability: Option<StabilitySection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub p: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "one")]
    pub half_width: f64,
    #[serde(default)]
    pub lambda: f64,
    pub length_budget: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_tolerance")]
    pub grad_tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    pub regularization_eps: Option<f64>,
    #[serde(default = "default_method")]
    pub method: String,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            grad_tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
            regularization_eps: None,
            method: default_method(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    pub nodes_per_side: usize,
    #[serde(default = "default_source")]
    pub source: String,
    /// Crack file in the segment text format, relative to the config file.
    pub cracks_file: Option<PathBuf>,
    /// Inline segments, each `[x1, y1, ..., x2, y2, ...]`.
    #[serde(default)]
    pub cracks: Vec<Vec<f64>>,
    #[serde(default)]
    pub svg: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitySection {
    pub t: Vec<f64>,
    pub h: f64,
    pub box_half_width: Option<f64>,
    /// Expected log-log slope; when set the command fails outside the band.
    pub slope_target: Option<f64>,
    #[serde(default = "default_slope_tolerance")]
    pub slope_tolerance: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VanishingSection {
    pub n_list: Vec<usize>,
    pub epsilon: f64,
    #[serde(default = "default_cube_nodes")]
    pub nodes_per_side: usize,
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default = "default_divergence_samples")]
    pub divergence_samples: usize,
    #[serde(default = "default_safety")]
    pub safety_factor: f64,
    /// Grid for the connected-segment comparison; 0 skips it.
    #[serde(default = "default_baseline_nodes")]
    pub baseline_nodes_per_side: usize,
    #[serde(default)]
    pub svg: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoincareSection {
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
    pub nodes_per_side: usize,
    /// Allowed relative deviation from `2^p` under doubling of `delta`.
    #[serde(default = "default_doubling_tolerance")]
    pub doubling_tolerance: f64,
    /// Allowed max/min ratio of `constant * capacity` across the `a` sweep.
    #[serde(default = "two")]
    pub capacity_factor: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    #[serde(default = "default_stability_nodes")]
    pub nodes_per_side: usize,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_calibration_pairs")]
    pub calibration_pairs: usize,
    #[serde(default)]
    pub truncation_levels: Vec<f64>,
    #[serde(default = "default_truncation_source")]
    pub truncation_source: String,
}

fn default_dim() -> usize {
    2
}
fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_max_iterations() -> usize {
    50_000
}
fn default_method() -> String {
    "auto".into()
}
fn default_source() -> String {
    "constant:1".into()
}
fn default_slope_tolerance() -> f64 {
    0.15
}
fn default_cube_nodes() -> usize {
    65
}
fn default_divergence_samples() -> usize {
    20
}
fn default_safety() -> f64 {
    1.5
}
fn default_baseline_nodes() -> usize {
    257
}
fn default_doubling_tolerance() -> f64 {
    0.05
}
fn default_stability_nodes() -> usize {
    65
}
fn default_pairs() -> usize {
    10
}
fn default_calibration_pairs() -> usize {
    5
}
fn default_truncation_source() -> String {
    "bump:30:0.05:0.4:0.6".into()
}

/// 1-based line of the first `key =` assignment in `text`, if any.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Error pointing at the line of `key`.
fn at_key(text: &str, key: &str, msg: impl std::fmt::Display) -> anyhow::Error {
    match line_of_key(text, key) {
        Some(line) => anyhow!("line {line}: {key}: {msg}"),
        None => anyhow!("{key}: {msg}"),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Parses and validates; every error names a line when one can be found.
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            match line {
                Some(line) => anyhow!("line {line}: {}", e.message()),
                None => anyhow!("{}", e.message()),
            }
        })?;
        config.validate(text)?;
        Ok(config)
    }

    fn validate(&self, text: &str) -> Result<()> {
        let pr = &self.problem;
        ProblemSpec::new(pr.p, pr.dim, pr.half_width)
            .and_then(|s| s.with_lambda(pr.lambda))
            .map_err(|e| at_key(text, "p", e))?;
        if let Some(l) = pr.length_budget {
            if !(l > 0.0) {
                return Err(at_key(text, "length_budget", "must be positive"));
            }
        }
        self.solver_config()
            .and_then(|c| c.validate(pr.p).map_err(Into::into))
            .map_err(|e| at_key(text, "grad_tolerance", e))?;
        if let Some(s) = &self.solve {
            if s.nodes_per_side < 2 {
                return Err(at_key(text, "nodes_per_side", "must be at least 2"));
            }
            Source::parse(&s.source).map_err(|e| at_key(text, "source", e))?;
            for seg in &s.cracks {
                if seg.len() != 2 * pr.dim {
                    return Err(at_key(
                        text,
                        "cracks",
                        format!("each segment needs {} coordinates", 2 * pr.dim),
                    ));
                }
            }
        }
        if let Some(c) = &self.capacity {
            if !(c.h > 0.0) {
                return Err(at_key(text, "h", "must be positive"));
            }
            if c.t.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
                return Err(at_key(text, "t", "segment lengths must lie in (0, 1]"));
            }
        }
        if let Some(v) = &self.vanishing {
            if v.n_list.contains(&0) || v.n_list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(at_key(text, "n_list", "must be strictly increasing positive integers"));
            }
            if !(v.epsilon > 0.0 && v.epsilon < 1.0) {
                return Err(at_key(text, "epsilon", "must lie in (0, 1)"));
            }
            if v.nodes_per_side < 2 {
                return Err(at_key(text, "nodes_per_side", "must be at least 2"));
            }
            Source::parse(&v.source).map_err(|e| at_key(text, "source", e))?;
        }
        if let Some(pc) = &self.poincare {
            if pc.nodes_per_side < 3 {
                return Err(at_key(text, "nodes_per_side", "must be at least 3"));
            }
            if pc.delta.iter().any(|d| !(*d > 0.0)) {
                return Err(at_key(text, "delta", "must be positive"));
            }
            if pc.a.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
                return Err(at_key(text, "a", "relative crack lengths must lie in (0, 1]"));
            }
        }
        if let Some(st) = &self.stability {
            if pr.dim != 2 {
                return Err(at_key(text, "dim", "the stability experiment runs on the unit square"));
            }
            if st.nodes_per_side < 2 {
                return Err(at_key(text, "nodes_per_side", "must be at least 2"));
            }
            if st.pairs > 0 && (st.calibration_pairs == 0 || st.calibration_pairs > st.pairs) {
                return Err(at_key(text, "calibration_pairs", "must lie in 1..=pairs"));
            }
            if st.truncation_levels.iter().any(|m| !(*m > 0.0)) || st.truncation_levels.windows(2).any(|w| w[0] >= w[1])
            {
                return Err(at_key(text, "truncation_levels", "must be positive and increasing"));
            }
            Source::parse(&st.truncation_source).map_err(|e| at_key(text, "truncation_source", e))?;
        }
        Ok(())
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        let method = match s.method.as_str() {
            "auto" => Method::Auto,
            "descent" => Method::Descent,
            "linear" => Method::Linear,
            other => bail!("unknown solver method {other:?}; expected auto, descent or linear"),
        };
        Ok(SolverConfig {
            grad_tolerance: s.grad_tolerance,
            max_iterations: s.max_iterations,
            regularization_eps: s.regularization_eps,
            method,
            ..SolverConfig::default()
        })
    }

    /// Cracks of the `solve` section: the file (resolved against `base`)
    /// followed by the inline segments.
    pub fn solve_cracks(&self, base: &Path) -> Result<CrackSet> {
        let dim = self.problem.dim;
        let Some(s) = &self.solve else {
            return Ok(CrackSet::empty(dim));
        };
        let mut cracks = match &s.cracks_file {
            Some(file) => {
                let path = base.join(file);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                CrackSet::parse(&text).with_context(|| format!("in crack file {}", path.display()))?
            }
            None => CrackSet::empty(dim),
        };
        if cracks.dim() != dim && !cracks.is_empty() {
            bail!("crack file has dimension {}, the problem has {dim}", cracks.dim());
        }
        if cracks.is_empty() {
            cracks = CrackSet::empty(dim);
        }
        for seg in &s.cracks {
            cracks.push(pcompliance_core::Segment::new(
                seg[..dim].to_vec(),
                seg[dim..].to_vec(),
            )?)?;
        }
        Ok(cracks)
    }
}
