//! Flat `key = value` configuration with typed, documented defaults.
//!
//! Unknown keys are rejected, `#` starts a comment, later duplicates
//! override earlier ones, and every diagnostic carries its line number.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Kind {
    U64,
    F64,
    Str,
}

pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub doc: &'static str,
}

/// Every configuration key with its type, default, and one-line description.
pub const KEYS: &[KeySpec] = &[
    KeySpec { key: "seed", kind: Kind::U64, default: "0", doc: "master random seed" },
    KeySpec { key: "out", kind: Kind::Str, default: "runs", doc: "base directory for run outputs" },
    KeySpec { key: "problem.kind", kind: Kind::Str, default: "csmri", doc: "csmri | qis | cdp" },
    KeySpec { key: "problem.size", kind: Kind::U64, default: "32", doc: "image side length in pixels" },
    KeySpec { key: "problem.ratio", kind: Kind::F64, default: "0.25", doc: "CS-MRI k-space sampling ratio" },
    KeySpec { key: "problem.noise", kind: Kind::F64, default: "0.058823529411764705", doc: "CS-MRI noise sigma on [0,1] pixels (default 15/255)" },
    KeySpec { key: "problem.mask", kind: Kind::Str, default: "radial", doc: "CS-MRI mask family: radial | cartesian" },
    KeySpec { key: "problem.jots", kind: Kind::U64, default: "4", doc: "QIS jots per pixel per axis (K)" },
    KeySpec { key: "problem.cdp_alpha", kind: Kind::F64, default: "0.05", doc: "CDP intensity noise ratio" },
    KeySpec { key: "denoiser.kind", kind: Kind::Str, default: "tv", doc: "tv | gaussian | unet" },
    KeySpec { key: "denoiser.checkpoint", kind: Kind::Str, default: "", doc: "micro-unet checkpoint path (required for unet)" },
    KeySpec { key: "scheme", kind: Kind::Str, default: "admm", doc: "admm | pgm | apgm | hqs | red | damp" },
    KeySpec { key: "policy.kind", kind: Kind::Str, default: "fixed", doc: "fixed | handcrafted | fixed-optimal | greedy | oracle | learned" },
    KeySpec { key: "policy.checkpoint", kind: Kind::Str, default: "", doc: "learned-policy checkpoint path" },
    KeySpec { key: "handcrafted.sigma_start", kind: Kind::F64, default: "0.1568627450980392", doc: "handcrafted schedule start (default 40/255)" },
    KeySpec { key: "handcrafted.sigma_end", kind: Kind::F64, default: "0", doc: "schedule end; 0 means max(problem noise, 5/255)" },
    KeySpec { key: "env.m", kind: Kind::U64, default: "5", doc: "solver iterations per decision block" },
    KeySpec { key: "env.N", kind: Kind::U64, default: "6", doc: "maximum decision blocks per episode" },
    KeySpec { key: "env.eta", kind: Kind::F64, default: "0.05", doc: "per-block reward penalty" },
    KeySpec { key: "env.rho", kind: Kind::F64, default: "0.99", doc: "discount factor" },
    KeySpec { key: "buffer.capacity", kind: Kind::U64, default: "500", doc: "replay buffer capacity" },
    KeySpec { key: "damp.norm", kind: Kind::Str, default: "n", doc: "AMP noise-estimate denominator: n (pixels) | m (measured)" },
    KeySpec { key: "dataset.count", kind: Kind::U64, default: "8", doc: "instances for solve/benchmark/diagnose datasets" },
    KeySpec { key: "phantom.ellipses", kind: Kind::U64, default: "3", doc: "ellipses per phantom" },
    KeySpec { key: "phantom.rects", kind: Kind::U64, default: "2", doc: "rectangles per phantom" },
    KeySpec { key: "train.iterations", kind: Kind::U64, default: "300", doc: "policy training iterations" },
    KeySpec { key: "train.batch", kind: Kind::U64, default: "16", doc: "policy training batch size" },
    KeySpec { key: "train.grad_steps", kind: Kind::U64, default: "10", doc: "gradient steps per training iteration" },
    KeySpec { key: "train.lr_policy", kind: Kind::F64, default: "1e-4", doc: "policy learning rate" },
    KeySpec { key: "train.lr_value", kind: Kind::F64, default: "5e-5", doc: "value learning rate" },
    KeySpec { key: "train.beta", kind: Kind::F64, default: "1e-3", doc: "target-network soft-update mix" },
    KeySpec { key: "train_denoiser.steps", kind: Kind::U64, default: "2000", doc: "denoiser Adam steps" },
    KeySpec { key: "train_denoiser.batch", kind: Kind::U64, default: "16", doc: "denoiser batch size" },
    KeySpec { key: "train_denoiser.lr", kind: Kind::F64, default: "1e-3", doc: "denoiser learning rate" },
    KeySpec { key: "train_denoiser.patches", kind: Kind::U64, default: "3000", doc: "training patches drawn from phantoms" },
    KeySpec { key: "train_denoiser.patch_size", kind: Kind::U64, default: "32", doc: "denoiser patch side length" },
    KeySpec { key: "benchmark.schemes", kind: Kind::Str, default: "admm", doc: "comma-separated scheme list" },
    KeySpec { key: "benchmark.policies", kind: Kind::Str, default: "fixed,fixed-optimal,oracle", doc: "comma-separated policy list" },
];

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "config line {n}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug)]
pub struct Config {
    values: BTreeMap<&'static str, String>,
}

fn spec_for(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|s| s.key == key)
}

fn check_typed(spec: &KeySpec, value: &str, line: Option<usize>) -> Result<(), ConfigError> {
    let bad = |what: &str| ConfigError {
        line,
        message: format!("expected {what} for `{}`, got `{value}`", spec.key),
    };
    match spec.kind {
        Kind::U64 => value.parse::<u64>().map(|_| ()).map_err(|_| bad("integer")),
        Kind::F64 => value.parse::<f64>().map(|_| ()).map_err(|_| bad("number")),
        Kind::Str => Ok(()),
    }
}

impl Default for Config {
    fn default() -> Self {
        let values = KEYS.iter().map(|s| (s.key, s.default.to_string())).collect();
        Config { values }
    }
}

impl Config {
    /// Parse `key = value` lines over the defaults.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError {
                line: Some(line_no),
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set_checked(key.trim(), value.trim(), Some(line_no))?;
        }
        Ok(cfg)
    }

    pub fn set_checked(
        &mut self,
        key: &str,
        value: &str,
        line: Option<usize>,
    ) -> Result<(), ConfigError> {
        let spec = spec_for(key).ok_or_else(|| ConfigError {
            line,
            message: format!("unknown key `{key}`"),
        })?;
        check_typed(spec, value, line)?;
        self.values.insert(spec.key, value.to_string());
        Ok(())
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("unknown config key `{key}`"))
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.str(key).parse().expect("typed at insert time")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.u64(key) as usize
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.str(key).parse().expect("typed at insert time")
    }

    /// Resolved configuration as deterministic text (for run manifests).
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// One line per key: name, default, and description.
    pub fn describe() -> String {
        let mut out = String::new();
        for s in KEYS {
            out.push_str(&format!("{:<28} default {:<24} {}\n", s.key, s.default, s.doc));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_documented_defaults() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg.u64("env.m"), 5);
        assert_eq!(cfg.u64("env.N"), 6);
        assert_eq!(cfg.f64("env.eta"), 0.05);
        assert_eq!(cfg.str("scheme"), "admm");
    }

    #[test]
    fn single_override_leaves_rest_alone() {
        let cfg = Config::parse("env.eta = 0.1\n").unwrap();
        assert_eq!(cfg.f64("env.eta"), 0.1);
        assert_eq!(cfg.u64("env.m"), 5);
    }

    #[test]
    fn type_error_names_the_line() {
        let err = Config::parse("env.m = banana").unwrap_err();
        assert_eq!(err.line, Some(1));
        assert!(err.to_string().contains("banana"));
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = Config::parse("# comment\nnot.a.key = 3\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn later_duplicates_override_earlier() {
        let cfg = Config::parse("seed = 1\nseed = 9\n").unwrap();
        assert_eq!(cfg.u64("seed"), 9);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = Config::parse("\n# full comment\nenv.m = 3 # trailing\n\n").unwrap();
        assert_eq!(cfg.u64("env.m"), 3);
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = Config::parse("env.m 5").unwrap_err();
        assert_eq!(err.line, Some(1));
    }
}
