//! Run configuration: a flat `key = value` file plus overrides, checked
//! against a per-command schema.
//!
//! Lines starting with `#` are comments. Overrides beat file values, which
//! beat defaults. Unknown keys, malformed values and missing required keys
//! are errors naming the key.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Bool,
    Text,
    Choice(&'static [&'static str]),
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    /// `None` marks a required key.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(key: &'static str, kind: Kind, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        kind,
        default: Some(default),
        help,
    }
}

const fn required(key: &'static str, kind: Kind, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        kind,
        default: None,
        help,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    LatticeInfo,
    Oracle,
    Sample,
    CheckMarkov,
    TrainVariational,
    TrainData,
    TrainRbm,
    Reweight,
    Features,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::LatticeInfo,
        Command::Oracle,
        Command::Sample,
        Command::CheckMarkov,
        Command::TrainVariational,
        Command::TrainData,
        Command::TrainRbm,
        Command::Reweight,
        Command::Features,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::LatticeInfo => "lattice-info",
            Command::Oracle => "oracle",
            Command::Sample => "sample",
            Command::CheckMarkov => "check-markov",
            Command::TrainVariational => "train-variational",
            Command::TrainData => "train-data",
            Command::TrainRbm => "train-rbm",
            Command::Reweight => "reweight",
            Command::Features => "features",
        }
    }

    pub fn schema(self) -> Vec<KeySpec> {
        const BOUNDARY: Kind = Kind::Choice(&["periodic", "open"]);
        let mut s = vec![
            key("seed", Kind::Int, "1", "master random seed"),
            key("out", Kind::Text, "out", "output directory"),
        ];
        let lattice = |width: &'static str, boundary: &'static str| {
            [
                key("L", Kind::Int, width, "lattice width"),
                key("boundary", BOUNDARY, boundary, "boundary condition"),
            ]
        };
        let chain = [
            key("therm", Kind::Int, "200", "thermalization sweeps"),
            key("skip", Kind::Int, "2", "sweeps between measurements"),
            key("n", Kind::Int, "500", "measurements"),
            key("delta", Kind::Float, "1", "initial proposal half-width"),
            key("tune", Kind::Bool, "true", "tune the proposal width in a pilot phase"),
        ];
        let target = |g: [&'static str; 5]| {
            [
                key("g1", Kind::Float, g[0], "nearest-neighbour coupling"),
                key("g2", Kind::Float, g[1], "quadratic coupling"),
                key("g3", Kind::Float, g[2], "quartic coupling"),
                key("g4", Kind::Float, g[3], "next-nearest-neighbour coupling"),
                key("g5", Kind::Float, g[4], "imaginary quadratic coupling"),
            ]
        };
        const REFERENCE: [&str; 5] = ["-1", "1.52425", "0.175", "-1", "0.15"];
        let sgd = [
            key("eta", Kind::Float, "0.01", "learning rate"),
            key("epochs", Kind::Int, "100", "training epochs"),
            key("clip", Kind::Float, "10", "gradient norm clip (0 disables)"),
            key("quartic_floor", Kind::Float, "0.001", "lower bound on quartic couplings"),
        ];
        let trainer = [
            key("init", Kind::Choice(&["homogeneous-seeded", "small-random"]), "homogeneous-seeded", "coupling initialization"),
            key("persistent", Kind::Bool, "false", "resume each epoch's chain from the previous one"),
            key("train_r", Kind::Bool, "true", "learn the linear couplings"),
        ];
        let data = [
            key("dataset", Kind::Choice(&["gaussian", "pgm", "csv"]), "gaussian", "data source"),
            key("mu", Kind::Float, "-0.5", "synthetic mean"),
            key("sigma", Kind::Float, "0.05", "synthetic standard deviation"),
            key("count", Kind::Int, "100", "synthetic configurations"),
            key("path", Kind::Text, "", "comma-separated image files"),
            key("max_pixel", Kind::Float, "255", "pixel value mapped to +1 (csv)"),
            key("batch", Kind::Int, "16", "minibatch size"),
        ];
        match self {
            Command::LatticeInfo => s.extend(lattice("8", "periodic")),
            Command::Oracle => {
                s.extend(lattice("2", "open"));
                s.extend([
                    key("w", Kind::Float, "0.3", "hopping coupling"),
                    key("a", Kind::Float, "0.6", "quadratic coupling"),
                    key("b", Kind::Float, "0.1", "quartic coupling"),
                    key("r", Kind::Float, "0", "linear coupling"),
                    key("nodes", Kind::Int, "64", "Gauss-Legendre nodes per site"),
                    key("tail", Kind::Float, "45", "neglected log-weight at the cut"),
                ]);
            }
            Command::Sample => {
                s.extend(lattice("8", "periodic"));
                s.extend([
                    key("source", Kind::Choice(&["model", "target"]), "model", "action sampled"),
                    key("w", Kind::Float, "0.25", "hopping coupling"),
                    key("a", Kind::Float, "0.7", "quadratic coupling"),
                    key("b", Kind::Float, "0.2", "quartic coupling"),
                    key("r", Kind::Float, "0", "linear coupling"),
                    key("couplings", Kind::Text, "", "checkpoint with couplings (overrides w, a, b, r)"),
                    key("attach", Kind::Bool, "true", "cache target terms for reweighting"),
                    key("start", Kind::Choice(&["zero", "cold", "random"]), "zero", "initial configuration"),
                    key("chains", Kind::Int, "1", "independent chains (seeds seed..seed+chains-1)"),
                ]);
                s.extend(target(REFERENCE));
                s.extend(chain);
            }
            Command::CheckMarkov => {
                s.extend(lattice("4", "periodic"));
                s.push(key("cases", Kind::Int, "100", "random cases per suite"));
            }
            Command::TrainVariational => {
                s.extend(lattice("8", "periodic"));
                s.extend(target(["-0.25", "0.7", "0.2", "0", "0"]));
                s.extend(chain);
                s.extend(sgd);
                s.extend(trainer);
            }
            Command::TrainData => {
                s.extend(lattice("8", "periodic"));
                s.extend(data);
                s.extend(chain);
                s.extend(sgd);
                s.extend(trainer);
            }
            Command::TrainRbm => {
                s.extend(data);
                s.extend(sgd);
                s.extend([
                    key("visible", Kind::Int, "64", "visible units (synthetic data)"),
                    key("hidden", Kind::Int, "16", "hidden units"),
                    key("mode", Kind::Choice(&["quartic", "gaussian", "binary"]), "quartic", "hidden unit type"),
                    key("k", Kind::Int, "5", "contrastive divergence steps"),
                ]);
            }
            Command::Reweight => {
                s.push(required("ensemble", Kind::Text, "ensemble file written by `sample`"));
                s.extend(target(REFERENCE));
                s.extend([
                    key("j", Kind::Int, "4", "varied coupling index"),
                    key("from", Kind::Float, "-1.15", "first grid value"),
                    key("to", Kind::Float, "-0.85", "last grid value"),
                    key("points", Kind::Int, "31", "grid points"),
                    key("obs", Kind::Choice(&["m", "action"]), "m", "observable"),
                    key("floor", Kind::Float, "10", "effective sample size floor"),
                ]);
            }
            Command::Features => {
                s.push(required("checkpoint", Kind::Text, "network checkpoint written by `train-rbm`"));
                s.extend([
                    key("height", Kind::Int, "0", "feature image height (0: square)"),
                    key("width", Kind::Int, "0", "feature image width (0: square)"),
                ]);
            }
        }
        s
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn config_error(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Checks `raw` against `kind` and returns its canonical spelling.
fn canonical(spec: &KeySpec, raw: &str) -> Result<String> {
    let raw = raw.trim();
    match spec.kind {
        Kind::Int => raw
            .parse::<i64>()
            .map(|v| v.to_string())
            .map_err(|_| config_error(spec.key, format!("expected an integer, got `{raw}`"))),
        Kind::Float => match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v.to_string()),
            _ => Err(config_error(spec.key, format!("expected a finite number, got `{raw}`"))),
        },
        Kind::Bool => match raw {
            "true" | "1" | "yes" => Ok("true".into()),
            "false" | "0" | "no" => Ok("false".into()),
            _ => Err(config_error(spec.key, format!("expected true or false, got `{raw}`"))),
        },
        Kind::Text => Ok(raw.to_string()),
        Kind::Choice(options) => {
            if options.contains(&raw) {
                Ok(raw.to_string())
            } else {
                Err(config_error(spec.key, format!("expected one of {}, got `{raw}`", options.join(" | "))))
            }
        }
    }
}

/// Validated configuration of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` is not in the {} schema", self.command))
    }

    pub fn get_str(&self, key: &str) -> &str {
        self.raw(key)
    }

    pub fn get_f64(&self, key: &str) -> f64 {
        self.raw(key).parse().expect("validated float")
    }

    pub fn get_i64(&self, key: &str) -> i64 {
        self.raw(key).parse().expect("validated integer")
    }

    pub fn get_bool(&self, key: &str) -> bool {
        self.raw(key) == "true"
    }

    /// Non-negative integer; errors name the key.
    pub fn get_usize(&self, key: &str) -> Result<usize> {
        usize::try_from(self.get_i64(key)).map_err(|_| config_error(key, "must be non-negative"))
    }

    pub fn get_positive(&self, key: &str) -> Result<usize> {
        match self.get_usize(key)? {
            0 => Err(config_error(key, "must be positive")),
            v => Ok(v),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        u64::try_from(self.get_i64(key)).map_err(|_| config_error(key, "must be non-negative"))
    }

    /// The effective configuration, one `key = value` line per key, sorted.
    pub fn render(&self) -> String {
        self.render_filtered(|_| true)
    }

    /// Like [`render`](Self::render) without the output directory, so that
    /// documents embedding it do not depend on where they were written.
    pub fn render_settings(&self) -> String {
        self.render_filtered(|k| k != "out")
    }

    fn render_filtered(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut out = format!("# phi4 {}\n", self.command);
        for (k, v) in self.values.iter().filter(|(k, _)| keep(k)) {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Parses configuration text (the contents of a config file).
pub fn parse_config_text(command: Command, text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let schema = command.schema();
    let lookup = |k: &str| {
        schema
            .iter()
            .find(|s| s.key == k)
            .ok_or_else(|| config_error(k, format!("unknown key for `{command}`")))
    };
    let mut values = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_error(line, format!("line {} is not `key = value`", lineno + 1)))?;
        let k = k.trim();
        let spec = lookup(k)?;
        values.insert(k.to_string(), canonical(spec, v)?);
    }
    for (k, v) in overrides {
        let spec = lookup(k)?;
        values.insert(k.clone(), canonical(spec, v)?);
    }
    for spec in &schema {
        if !values.contains_key(spec.key) {
            match spec.default {
                Some(d) => {
                    values.insert(spec.key.to_string(), canonical(spec, d)?);
                }
                None => return Err(config_error(spec.key, "required key is missing")),
            }
        }
    }
    Ok(RunConfig { command, values })
}

/// Reads `path` (if any) and applies `overrides`.
pub fn parse_config(command: Command, path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    parse_config_text(command, &text, overrides)
}
