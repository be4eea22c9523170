//! Experiment configuration: command-line flags, TOML config files and the
//! canonical text form echoed into reports.

use std::fmt;
use std::path::Path;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

/// Every knob any subcommand reads. Unset fields take the subcommand's
/// documented default; the resolved configuration is echoed in the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Subcommand name (filled in from the command line).
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,

    /// Diffusion coefficient: unit, sqrt1pz2, sin2, const:<c> or table:<csv>.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,

    /// Drift: strat (Stratonovich-symmetric) or const:<b>.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<String>,

    /// Start point of the diffusion.
    #[arg(long, global = true, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,

    /// Distribution: delta@y, ddelta^k@y, heaviside@y, logabs, pv1x, xlogabs, smooth:<name>.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist: Option<String>,

    /// Sobolev index.
    #[arg(long, global = true, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,

    /// Hölder exponent.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,

    /// Evaluation time.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,

    /// Horizon.
    #[arg(long = "T", global = true)]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,

    /// Chaos truncation.
    #[arg(long = "N", global = true)]
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,

    /// Monte Carlo path count.
    #[arg(long = "M", global = true)]
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,

    /// Time steps of the simulation grid (even).
    #[arg(long = "K", global = true)]
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Mollification bandwidths, comma separated and decreasing.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<String>,

    /// Order (hermite, kv-kernel).
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,

    /// Evaluation point.
    #[arg(long, global = true, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,

    /// Level.
    #[arg(long, global = true, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,

    /// Target point of the transition kernel.
    #[arg(long, global = true, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,

    /// Integrability exponent (bessel-kernel).
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,

    /// Itô case: tanaka or pv.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case: Option<String>,

    /// Test functional: 1, wT, Hn, Hn@t or inc:a:b:k.
    #[arg(long = "J", global = true)]
    #[serde(rename = "J", skip_serializing_if = "Option::is_none")]
    pub functional: Option<String>,

    /// Report path; `-` for stdout. Defaults to `<command>.<format>` in
    /// `$CHAOSLAB_OUT_DIR` (or the working directory).
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,

    #[arg(long, global = true, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("bad config: {e}"))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    /// Canonical text form: TOML, fields in declaration order, unset fields omitted.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config fields are plain values")
    }

    /// Fields set here win over `base`.
    pub fn over(self, base: ExperimentConfig) -> ExperimentConfig {
        macro_rules! pick {
            ($($f:ident),*) => {
                ExperimentConfig { $($f: self.$f.or(base.$f)),* }
            };
        }
        pick!(
            command, model, drift, start, dist, s, beta, t, horizon, truncation, paths, steps, seed, eps, n, x, y, a, p,
            case, functional, output, format
        )
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trip() {
        let c = ExperimentConfig {
            command: Some("holder".into()),
            model: Some("sqrt1pz2".into()),
            s: Some(-0.2),
            beta: Some(0.6),
            horizon: Some(1.0),
            truncation: Some(256),
            seed: Some(7),
            eps: Some("0.05,0.025".into()),
            format: Some(Format::Csv),
            ..Default::default()
        };
        let text = c.canonical();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.canonical(), text);
        assert!(text.contains("N = 256"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("sigma = 1").is_err());
    }

    #[test]
    fn command_line_wins() {
        let file = ExperimentConfig { s: Some(0.1), seed: Some(1), ..Default::default() };
        let cli = ExperimentConfig { s: Some(0.3), ..Default::default() };
        let merged = cli.over(file);
        assert_eq!(merged.s, Some(0.3));
        assert_eq!(merged.seed, Some(1));
    }
}
