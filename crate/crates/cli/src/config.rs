//! Flat `key = value` experiment configuration.
//!
//! A file is read first, then `--set` overrides are applied on top. Every key
//! must be known, and algorithm parameters must belong to the selected
//! algorithm. Parameters left unset take the tuned defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use supertomo_core::ScanGeometry;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Cg,
    Pcg,
    SupCg,
    SupPcg,
    SupTpcg,
    Art,
    SupArt,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Cg,
        Algorithm::Pcg,
        Algorithm::SupCg,
        Algorithm::SupPcg,
        Algorithm::SupTpcg,
        Algorithm::Art,
        Algorithm::SupArt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Cg => "cg",
            Algorithm::Pcg => "pcg",
            Algorithm::SupCg => "supcg",
            Algorithm::SupPcg => "suppcg",
            Algorithm::SupTpcg => "suptpcg",
            Algorithm::Art => "art",
            Algorithm::SupArt => "supart",
        }
    }

    pub fn superiorized(self) -> bool {
        matches!(
            self,
            Algorithm::SupCg | Algorithm::SupPcg | Algorithm::SupTpcg | Algorithm::SupArt
        )
    }

    pub fn preconditioned(self) -> bool {
        matches!(self, Algorithm::Pcg | Algorithm::SupPcg | Algorithm::SupTpcg)
    }

    pub fn row_action(self) -> bool {
        matches!(self, Algorithm::Art | Algorithm::SupArt)
    }

    fn accepts(self, key: &str) -> bool {
        match key {
            "K" | "a" | "gamma" => self.superiorized(),
            "mu" | "rho" => self.preconditioned(),
            "r" | "lambda" => self.row_action(),
            _ => true,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// Tuned parameter values used when a key is absent.
pub struct Defaults {
    pub k: usize,
    pub a: f64,
    pub gamma: f64,
    pub mu: f64,
    pub rho: f64,
    pub r: f64,
    pub lambda: f64,
}

pub fn defaults(alg: Algorithm) -> Defaults {
    let mut d = Defaults {
        k: 40,
        a: 1.0 - 1e-5,
        gamma: 1e-2,
        mu: 1e-3,
        rho: 0.6,
        r: 5.0,
        lambda: 1e-2,
    };
    match alg {
        Algorithm::SupCg => d.gamma = 5e-2,
        Algorithm::SupPcg | Algorithm::SupTpcg => (d.mu, d.rho) = (1e-5, 0.8),
        Algorithm::SupArt => (d.k, d.lambda) = (10, 5e-2),
        _ => {}
    }
    d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform image at the data-derived gray level.
    Prior,
    Zero,
}

const GEOMETRY_KEYS: [&str; 6] = [
    "grid_rows",
    "grid_cols",
    "n_angles",
    "n_rays",
    "pixel_size",
    "ray_spacing",
];
const SCENARIO_KEYS: [&str; 4] = ["phantom", "photons", "seed", "sinogram"];
const RUN_KEYS: [&str; 12] = [
    "algorithm", "K", "a", "gamma", "mu", "rho", "r", "lambda", "eps", "max_iter", "init",
    "label",
];

fn known(key: &str) -> bool {
    GEOMETRY_KEYS.contains(&key) || SCENARIO_KEYS.contains(&key) || RUN_KEYS.contains(&key)
}

/// Keys a sweep grid line may override.
pub fn is_run_key(key: &str) -> bool {
    RUN_KEYS.contains(&key)
}

/// Raw entries before validation, in key order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut raw = RawConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_pair(line).map_err(|e| CliError::Config(format!("line {}: {e}", n + 1)))?;
            if raw.entries.contains_key(k) {
                return Err(CliError::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
            raw.insert(k, v)?;
        }
        Ok(raw)
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = split_pair(pair).map_err(CliError::Config)?;
        self.insert(k, v)
    }

    fn insert(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !known(key) {
            return Err(CliError::Config(format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    pub fn resolve(&self) -> Result<Config, CliError> {
        let desk = ScanGeometry::desk_scale();
        let grid_rows = self.parsed("grid_rows")?.unwrap_or(desk.grid_rows);
        let grid_cols = self.parsed("grid_cols")?.unwrap_or(desk.grid_cols);
        // a resized grid keeps the desk-scale field of view by default
        let pixel_size = self
            .parsed("pixel_size")?
            .unwrap_or(desk.pixel_size * desk.grid_cols as f64 / grid_cols as f64);
        let geometry = ScanGeometry::new(
            self.parsed("n_angles")?.unwrap_or(desk.n_angles),
            self.parsed("n_rays")?.unwrap_or(desk.n_rays),
            self.parsed("ray_spacing")?.unwrap_or(pixel_size),
            pixel_size,
            grid_rows,
            grid_cols,
        )
        .map_err(|e| CliError::Config(format!("geometry: {e}")))?;

        let photons = match self.get("photons") {
            None => Some(DEFAULT_PHOTONS),
            Some("none") => None,
            Some(_) => Some(self.parsed::<f64>("photons")?.expect("present")),
        };
        if let Some(p) = photons {
            if !(p > 0.0 && p.is_finite()) {
                return Err(CliError::Config(format!("`photons` must be positive or `none`, got {p}")));
            }
        }

        let algorithm: Option<Algorithm> = self
            .get("algorithm")
            .map(|v| v.parse().map_err(|e| CliError::Config(format!("`algorithm`: {e}"))))
            .transpose()?;
        for key in ["K", "a", "gamma", "mu", "rho", "r", "lambda"] {
            if self.get(key).is_none() {
                continue;
            }
            match algorithm {
                None => {
                    return Err(CliError::Config(format!("`{key}` given without `algorithm`")));
                }
                Some(alg) if !alg.accepts(key) => {
                    return Err(CliError::Config(format!("`{key}` does not apply to {alg}")));
                }
                _ => {}
            }
        }
        let d = defaults(algorithm.unwrap_or(Algorithm::Cg));
        let params = AlgorithmParams {
            k: self.parsed("K")?.unwrap_or(d.k),
            a: self.parsed("a")?.unwrap_or(d.a),
            gamma: self.parsed("gamma")?.unwrap_or(d.gamma),
            mu: self.parsed("mu")?.unwrap_or(d.mu),
            rho: self.parsed("rho")?.unwrap_or(d.rho),
            r: self.parsed("r")?.unwrap_or(d.r),
            lambda: self.parsed("lambda")?.unwrap_or(d.lambda),
        };

        let eps: Option<f64> = self.parsed("eps")?;
        if let Some(e) = eps {
            if !(e > 0.0) {
                return Err(CliError::Config(format!("`eps` must be positive, got {e}")));
            }
        }
        let max_iter = self.parsed("max_iter")?.unwrap_or(DEFAULT_MAX_ITER);
        if max_iter == 0 {
            return Err(CliError::Config("`max_iter` must be at least 1".into()));
        }
        if self.get("init").is_some() && algorithm.is_some_and(Algorithm::row_action) {
            return Err(CliError::Config("`init` does not apply to ART; it always starts from the prior".into()));
        }
        let init = match self.get("init").unwrap_or("prior") {
            "prior" => Init::Prior,
            "zero" => Init::Zero,
            other => return Err(CliError::Config(format!("`init`: expected prior or zero, got `{other}`"))),
        };
        if self.get("label").is_some_and(|l| l.contains(',')) {
            return Err(CliError::Config("`label` must not contain commas".into()));
        }
        Ok(Config {
            geometry,
            phantom: self.get("phantom").map(PathBuf::from),
            photons,
            seed: self.parsed("seed")?.unwrap_or(DEFAULT_SEED),
            sinogram: self.get("sinogram").map(PathBuf::from),
            algorithm,
            params,
            eps,
            max_iter,
            init,
            label: self
                .get("label")
                .map(str::to_string)
                .or_else(|| algorithm.map(|a| a.name().to_string()))
                .unwrap_or_default(),
        })
    }

    /// `key=value` pairs joined by spaces, in key order.
    pub fn describe(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn split_pair(s: &str) -> Result<(&str, &str), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() || v.is_empty() {
        return Err(format!("expected key=value, got `{s}`"));
    }
    Ok((k, v))
}

pub const DEFAULT_PHOTONS: f64 = 1e5;
pub const DEFAULT_SEED: u64 = 7;
/// Algorithms are compared over their first 15 iterations.
pub const DEFAULT_MAX_ITER: usize = 15;

#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmParams {
    pub k: usize,
    pub a: f64,
    pub gamma: f64,
    pub mu: f64,
    pub rho: f64,
    pub r: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub geometry: ScanGeometry,
    /// Ellipse spec file; the built-in head phantom when absent.
    pub phantom: Option<PathBuf>,
    /// Mean photons per ray; `None` gives exact line integrals.
    pub photons: Option<f64>,
    pub seed: u64,
    /// Measured data to reconstruct instead of simulating.
    pub sinogram: Option<PathBuf>,
    pub algorithm: Option<Algorithm>,
    pub params: AlgorithmParams,
    /// Stop once `‖Rx − b‖² ≤ eps`; run `max_iter` iterations when absent.
    pub eps: Option<f64>,
    pub max_iter: usize,
    pub init: Init,
    pub label: String,
}

impl Config {
    pub fn require_algorithm(&self) -> Result<Algorithm, CliError> {
        self.algorithm
            .ok_or_else(|| CliError::Config("`algorithm` is required for this command".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<Config, CliError> {
        RawConfig::parse(text)?.resolve()
    }

    #[test]
    fn empty_config_is_desk_scale() {
        let c = resolve("").unwrap();
        assert_eq!(c.geometry, ScanGeometry::desk_scale());
        assert_eq!(c.photons, Some(DEFAULT_PHOTONS));
        assert_eq!(c.algorithm, None);
        assert_eq!(c.max_iter, 15);
    }

    #[test]
    fn table_defaults_per_algorithm() {
        let c = resolve("algorithm = supcg").unwrap();
        assert_eq!((c.params.k, c.params.a, c.params.gamma), (40, 1.0 - 1e-5, 5e-2));
        let c = resolve("algorithm = suppcg").unwrap();
        assert_eq!((c.params.gamma, c.params.mu, c.params.rho), (1e-2, 1e-5, 0.8));
        let c = resolve("algorithm = pcg").unwrap();
        assert_eq!((c.params.mu, c.params.rho), (1e-3, 0.6));
        let c = resolve("algorithm = art").unwrap();
        assert_eq!((c.params.r, c.params.lambda), (5.0, 1e-2));
        let c = resolve("algorithm = supart").unwrap();
        assert_eq!((c.params.k, c.params.gamma, c.params.r, c.params.lambda), (10, 1e-2, 5.0, 5e-2));
    }

    #[test]
    fn unknown_and_inapplicable_keys_are_rejected() {
        let err = resolve("colour = blue").unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
        let err = resolve("algorithm = cg\nK = 10").unwrap_err().to_string();
        assert!(err.contains("`K`"), "{err}");
        let err = resolve("algorithm = art\nmu = 1e-3").unwrap_err().to_string();
        assert!(err.contains("`mu`"), "{err}");
        assert!(resolve("gamma = 0.1").is_err());
        assert!(resolve("algorithm = sirt").is_err());
    }

    #[test]
    fn malformed_lines_name_their_line() {
        let err = resolve("algorithm = cg\nnonsense\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = resolve("seed = 1\nseed = 2\n").unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
        let err = resolve("max_iter = many").unwrap_err().to_string();
        assert!(err.contains("max_iter"), "{err}");
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut raw = RawConfig::parse("algorithm = pcg # tuned\nmu = 1e-4\n").unwrap();
        raw.set("mu=1e-5").unwrap();
        raw.set("photons=none").unwrap();
        let c = raw.resolve().unwrap();
        assert_eq!(c.params.mu, 1e-5);
        assert_eq!(c.photons, None);
        assert!(raw.set("bogus=1").is_err());
        assert!(raw.set("mu").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(resolve("eps = 0").is_err());
        assert!(resolve("photons = -3").is_err());
        assert!(resolve("max_iter = 0").is_err());
        assert!(resolve("grid_rows = 0").is_err());
        assert!(resolve("init = random").is_err());
        assert!(resolve("algorithm = art\ninit = zero").is_err());
    }

    #[test]
    fn smaller_grid_keeps_field_of_view() {
        let c = resolve("grid_rows = 32\ngrid_cols = 32").unwrap();
        let desk = ScanGeometry::desk_scale();
        assert!((c.geometry.half_width() - desk.half_width()).abs() < 1e-12);
    }
}
