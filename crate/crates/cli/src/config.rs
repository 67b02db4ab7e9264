//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use fsdh::biqp::Solver;
use fsdh::eval::ZeroRetrieval;
use fsdh::{Method, NormMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Mnist,
    Csv,
    Synth,
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mnist" => Ok(Source::Mnist),
            "csv" => Ok(Source::Csv),
            "synth" => Ok(Source::Synth),
            other => Err(format!("unknown source {other:?}, expected mnist, csv or synth")),
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Source::Mnist => "mnist",
            Source::Csv => "csv",
            Source::Synth => "synth",
        })
    }
}

/// `none` or a [`NormMode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Normalization(pub Option<NormMode>);

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(Self(None));
        }
        s.parse::<NormMode>().map(|m| Self(Some(m))).map_err(|e| e.to_string())
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            None => f.write_str("none"),
            Some(m) => write!(f, "{m}"),
        }
    }
}

/// Comma-separated list of integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsizeList(pub Vec<usize>);

impl FromStr for UsizeList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .and_then(|v| if v.is_empty() { Err("empty list".into()) } else { Ok(Self(v)) })
    }
}

impl std::fmt::Display for UsizeList {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

macro_rules! run_config {
    ($( $key:ident : $ty:ty = $default:expr, $doc:literal; )*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( #[doc = $doc] pub $key: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $key: $default, )* }
            }
        }

        impl RunConfig {
            /// `(key, description)` for every setting.
            pub const SCHEMA: &'static [(&'static str, &'static str)] = &[ $( (stringify!($key), $doc), )* ];

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $( stringify!($key) => {
                        self.$key = parse_value(value).map_err(|e| format!("{key}: {e}"))?;
                        Ok(())
                    } )*
                    other => Err(format!("unknown setting {other:?}")),
                }
            }

            /// Canonical text form; parsing it back gives the same config.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $( let _ = writeln!(s, "{} = {}", stringify!($key), format_value(&self.$key)); )*
                s
            }
        }
    };
}

trait ConfigValue: Sized {
    fn parse_config(s: &str) -> Result<Self, String>;
    fn format_config(&self) -> String;
}

macro_rules! via_from_str {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_config(s: &str) -> Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn format_config(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

via_from_str!(usize, u32, u64, f64, bool, String, Source, Normalization, UsizeList, Method, Solver, ZeroRetrieval);

impl ConfigValue for PathBuf {
    fn parse_config(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn format_config(&self) -> String {
        self.display().to_string()
    }
}

impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_config(s: &str) -> Result<Self, String> {
        if s == "none" || s.is_empty() {
            Ok(None)
        } else {
            T::parse_config(s).map(Some)
        }
    }
    fn format_config(&self) -> String {
        match self {
            None => "none".into(),
            Some(v) => v.format_config(),
        }
    }
}

fn parse_value<T: ConfigValue>(s: &str) -> Result<T, String> {
    T::parse_config(s)
}

fn format_value<T: ConfigValue>(v: &T) -> String {
    v.format_config()
}

run_config! {
    source: Source = Source::Synth, "dataset source: mnist, csv or synth";
    train_images: Option<PathBuf> = None, "training features (IDX images or CSV rows)";
    train_labels: Option<PathBuf> = None, "training labels (IDX or one integer per line)";
    test_images: Option<PathBuf> = None, "query features";
    test_labels: Option<PathBuf> = None, "query labels";
    train_limit: Option<usize> = None, "use only the first N training samples";
    test_limit: Option<usize> = None, "use only the first N query samples";
    classes: Option<usize> = None, "class count for CSV labels (default: max label + 1)";
    normalize: Normalization = Normalization(Some(NormMode::UnitNorm)), "none, unit_norm or zero_mean_unit_norm";
    synth_classes: usize = 10, "synthetic: class count";
    synth_per_class: usize = 1000, "synthetic: training samples per class";
    synth_test_per_class: usize = 100, "synthetic: query samples per class";
    synth_dim: usize = 32, "synthetic: feature dimension";
    synth_spread: f64 = 1.25, "synthetic: within-class standard deviation";
    synth_seed: u64 = 11, "synthetic: generator seed";
    anchors: usize = 1000, "kernel anchor count M";
    sigma: f64 = 0.4, "kernel width (divides the squared distance)";
    seed: u64 = 0, "anchor sampling seed, also the SDH initialization seed";
    method: Method = Method::Fsdh, "fsdh or sdh";
    bits: usize = 32, "code length L";
    lambda: f64 = 1.0, "classifier ridge weight";
    nu: f64 = 1e-5, "SDH bias-term weight";
    iters: usize = 5, "SDH outer iterations";
    solver: Solver = Solver::default(), "SDH B-step solver: dcc, dcc:N, exhaustive, bnb or bnb:N";
    jitter: Option<f64> = None, "projection ridge (none: 1e-8 * trace(X X^T) / M)";
    radius: u32 = 2, "Hamming radius for precision and recall";
    zero_retrieval: ZeroRetrieval = ZeroRetrieval::CountAsZero, "queries retrieving nothing: zero or skip";
    per_query: bool = false, "eval: also write per-query metrics";
    bits_list: UsizeList = UsizeList(vec![32, 64, 128, 256, 512]), "figures/bench: code lengths to sweep";
    anchors_list: Option<UsizeList> = None, "bench: anchor counts to sweep (default: anchors)";
    repeats: usize = 3, "bench: repetitions per measurement";
    fig1_seeds: usize = 10, "fig1: number of random initializations";
    include_sdh: bool = true, "bitscale/bench: also run SDH";
    output: PathBuf = PathBuf::from("out"), "output directory";
}

impl RunConfig {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            let key = key.trim();
            if let Some(prev) = seen.insert(key.to_string(), n + 1) {
                return Err(format!("line {}: {key} already set on line {prev}", n + 1));
            }
            self.set(key, value.trim()).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), String> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| format!("override {pair:?}: expected key=value"))?;
        self.set(key.trim(), value.trim())
    }

    /// Precondition checks that need no data.
    pub fn validate(&self) -> Result<(), fsdh::Error> {
        use fsdh::Error;
        if self.bits == 0 {
            return Err(Error::InvalidArgument("bits must be at least 1".into()));
        }
        if self.method == Method::Fsdh && (self.bits < 2 || !self.bits.is_power_of_two()) {
            return Err(Error::NotPowerOfTwo(self.bits));
        }
        if self.anchors == 0 {
            return Err(Error::InvalidArgument("anchors must be at least 1".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !(self.nu >= 0.0) {
            return Err(Error::InvalidArgument("lambda and nu must be non-negative".into()));
        }
        if self.iters == 0 || self.repeats == 0 {
            return Err(Error::InvalidArgument("iters and repeats must be at least 1".into()));
        }
        if self.source != Source::Synth && (self.train_images.is_none() || self.train_labels.is_none()) {
            return Err(Error::InvalidArgument(format!(
                "source {} needs train_images and train_labels",
                self.source
            )));
        }
        Ok(())
    }
}
