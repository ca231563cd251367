//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use perturbvamp::harness::PerturbationKind;
use perturbvamp::solver::PcRoute;
use perturbvamp::Mode;

pub const KEYS: &[&str] = &[
    "name",
    "n",
    "ratio",
    "rho",
    "mu_x",
    "sigma_x2",
    "perturbation.kind",
    "snr_w_db",
    "snr_e_db",
    "trials",
    "seed",
    "modes",
    "max_iters",
    "gamma1_init",
    "damping",
    "stop_tol",
    "pc_route",
    "coeff_path",
];

pub const SCHEMA_HELP: &str = "\
Config file: one `key = value` per line, `#` starts a comment line.
  name               experiment label written to the CSVs   [experiment]
  n                  signal length N                       [512]
  ratio              measurement ratio M/N in (0, 1]       [0.5]
  rho                prior activity probability           [0.2]
  mu_x               prior slab mean                       [0]
  sigma_x2           prior slab variance                   [1]
  perturbation.kind  gaussian | iid | circulant | restricted [gaussian]
  snr_w_db           10 log10(|Ax|^2/|w|^2)                [30]
  snr_e_db           10 log10(|Ax|^2/|sum e_i E_i x|^2), scalar or comma
                     list; `off` disables the perturbation [10,15,...,40]
  trials             Monte-Carlo trials                    [50]
  seed               base seed; trial t uses seed + t      [0]
  modes              comma list of oracle, pi, pc          [oracle,pi,pc]
  max_iters          iterations per run                    [60]
  gamma1_init        initial precision of r1               [1e-4]
  damping            message damping in (0, 1]             [1]
  stop_tol           relative change that ends a run early [0 = never]
  pc_route           direct | whitened                     [direct]
  coeff_path         fixed signal file, one value per line [none: draw from prior]
Unset keys take the default shown and a notice is printed.";

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub name: String,
    pub n: usize,
    pub ratio: f64,
    pub rho: f64,
    pub mu_x: f64,
    pub sigma_x2: f64,
    pub kind: PerturbationKind,
    pub snr_w_db: f64,
    pub snr_e_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub modes: Vec<Mode>,
    pub max_iters: usize,
    pub gamma1_init: f64,
    pub damping: f64,
    pub stop_tol: f64,
    pub pc_route: PcRoute,
    pub coeff_path: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            n: 512,
            ratio: 0.5,
            rho: 0.2,
            mu_x: 0.0,
            sigma_x2: 1.0,
            kind: PerturbationKind::Gaussian,
            snr_w_db: 30.0,
            snr_e_db: vec![10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
            trials: 50,
            seed: 0,
            modes: Mode::ALL.to_vec(),
            max_iters: 60,
            gamma1_init: 1e-4,
            damping: 1.0,
            stop_tol: 0.0,
            pc_route: PcRoute::Direct,
            coeff_path: None,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {message}")]
    Syntax {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{source_name}: unknown key `{key}` (see `perturbvamp run --help`)")]
    UnknownKey { source_name: String, key: String },
    #[error("{source_name}: key `{key}` given twice")]
    Duplicate { source_name: String, key: String },
    #[error("{source_name}: bad value for `{key}`: {message}")]
    Value {
        source_name: String,
        key: String,
        message: String,
    },
}

fn parse_number<T: std::str::FromStr>(raw: &str) -> Result<T, String> {
    raw.parse().map_err(|_| format!("cannot parse `{raw}` as a number"))
}

fn parse_snr_e(raw: &str) -> Result<f64, String> {
    match raw.to_ascii_lowercase().as_str() {
        "off" | "inf" | "+inf" => Ok(f64::INFINITY),
        _ => parse_number(raw),
    }
}

pub fn parse_modes(raw: &str) -> Result<Vec<Mode>, String> {
    let mut modes = Vec::new();
    for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let mode: Mode = part.parse().map_err(|e: perturbvamp::Error| e.to_string())?;
        if modes.contains(&mode) {
            return Err(format!("mode `{part}` listed twice"));
        }
        modes.push(mode);
    }
    if modes.is_empty() {
        return Err("at least one mode is required".into());
    }
    Ok(modes)
}

impl Config {
    /// Parses `text`. Relative `coeff_path` values are resolved against
    /// `base_dir`. Returns the config and the keys that took defaults.
    pub fn parse(text: &str, source_name: &str, base_dir: &Path) -> Result<(Self, Vec<&'static str>), ConfigError> {
        let mut entries: BTreeMap<&'static str, String> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    source_name: source_name.into(),
                    line: idx + 1,
                    message: format!("expected `key = value`, found `{line}`"),
                });
            };
            let key = key.trim();
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(ConfigError::UnknownKey {
                    source_name: source_name.into(),
                    key: key.into(),
                });
            };
            if entries.insert(known, value.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    source_name: source_name.into(),
                    key: key.into(),
                });
            }
        }

        let mut config = Config::default();
        let defaulted: Vec<&'static str> = KEYS.iter().copied().filter(|k| !entries.contains_key(k)).collect();
        for (key, value) in entries {
            let bad = |message: String| ConfigError::Value {
                source_name: source_name.into(),
                key: key.into(),
                message,
            };
            match key {
                "name" => {
                    if value.is_empty() {
                        return Err(bad("must not be empty".into()));
                    }
                    config.name = value;
                }
                "n" => config.n = parse_number(&value).map_err(bad)?,
                "ratio" => config.ratio = parse_number(&value).map_err(bad)?,
                "rho" => config.rho = parse_number(&value).map_err(bad)?,
                "mu_x" => config.mu_x = parse_number(&value).map_err(bad)?,
                "sigma_x2" => config.sigma_x2 = parse_number(&value).map_err(bad)?,
                "perturbation.kind" => config.kind = value.parse().map_err(|e: perturbvamp::Error| bad(e.to_string()))?,
                "snr_w_db" => config.snr_w_db = parse_number(&value).map_err(bad)?,
                "snr_e_db" => {
                    config.snr_e_db = value
                        .split(',')
                        .map(|p| parse_snr_e(p.trim()))
                        .collect::<Result<_, _>>()
                        .map_err(bad)?
                }
                "trials" => config.trials = parse_number(&value).map_err(bad)?,
                "seed" => config.seed = parse_number(&value).map_err(bad)?,
                "modes" => config.modes = parse_modes(&value).map_err(bad)?,
                "max_iters" => config.max_iters = parse_number(&value).map_err(bad)?,
                "gamma1_init" => config.gamma1_init = parse_number(&value).map_err(bad)?,
                "damping" => config.damping = parse_number(&value).map_err(bad)?,
                "stop_tol" => config.stop_tol = parse_number(&value).map_err(bad)?,
                "pc_route" => config.pc_route = value.parse().map_err(|e: perturbvamp::Error| bad(e.to_string()))?,
                "coeff_path" => {
                    config.coeff_path = match value.as_str() {
                        "" | "none" => None,
                        path => Some(base_dir.join(path)),
                    }
                }
                _ => unreachable!("key list and match arms agree"),
            }
        }
        Ok((config, defaulted))
    }

    /// Every key with its resolved value, in a form [`Config::parse`] reads
    /// back to an identical config.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| if *x == f64::INFINITY { "off".to_string() } else { format!("{x:?}") })
                .collect::<Vec<_>>()
                .join(",")
        };
        let modes = self.modes.iter().map(|m| m.label()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("writing to a String");
        put("name", self.name.clone());
        put("n", self.n.to_string());
        put("ratio", format!("{:?}", self.ratio));
        put("rho", format!("{:?}", self.rho));
        put("mu_x", format!("{:?}", self.mu_x));
        put("sigma_x2", format!("{:?}", self.sigma_x2));
        put("perturbation.kind", self.kind.label().into());
        put("snr_w_db", format!("{:?}", self.snr_w_db));
        put("snr_e_db", list(&self.snr_e_db));
        put("trials", self.trials.to_string());
        put("seed", self.seed.to_string());
        put("modes", modes);
        put("max_iters", self.max_iters.to_string());
        put("gamma1_init", format!("{:?}", self.gamma1_init));
        put("damping", format!("{:?}", self.damping));
        put("stop_tol", format!("{:?}", self.stop_tol));
        put("pc_route", self.pc_route.label().into());
        put(
            "coeff_path",
            self.coeff_path
                .as_ref()
                .map_or_else(|| "none".into(), |p| p.display().to_string()),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(Config, Vec<&'static str>), ConfigError> {
        Config::parse(text, "test.cfg", Path::new("/base"))
    }

    #[test]
    fn empty_file_is_all_defaults() {
        let (c, defaulted) = parse("# nothing\n\n").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(defaulted.len(), KEYS.len());
    }

    #[test]
    fn values_are_applied() {
        let text = "n = 64\nratio=0.25\nsnr_e_db = 10, 20 ,off\nmodes = pc,oracle\nperturbation.kind = circulant\ncoeff_path = x.txt\npc_route = whitened\n";
        let (c, defaulted) = parse(text).unwrap();
        assert_eq!(c.n, 64);
        assert_eq!(c.ratio, 0.25);
        assert_eq!(c.snr_e_db, vec![10.0, 20.0, f64::INFINITY]);
        assert_eq!(c.modes, vec![Mode::PerturbationCorrected, Mode::Oracle]);
        assert_eq!(c.kind, PerturbationKind::Circulant);
        assert_eq!(c.pc_route, PcRoute::Whitened);
        assert_eq!(c.coeff_path.as_deref(), Some(Path::new("/base/x.txt")));
        assert!(!defaulted.contains(&"n"));
        assert!(defaulted.contains(&"rho"));
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        assert!(matches!(parse("bogus = 1\n"), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(parse("n = 1\nn = 2\n"), Err(ConfigError::Duplicate { .. })));
        assert!(matches!(parse("n 5\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse("n = five\n"), Err(ConfigError::Value { .. })));
        assert!(matches!(parse("modes = pc,pc\n"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn text_round_trips() {
        let c = Config {
            snr_e_db: vec![12.5, f64::INFINITY],
            gamma1_init: 0.1 + 0.2,
            coeff_path: Some(PathBuf::from("/data/coeffs.txt")),
            ..Config::default()
        };
        let (back, defaulted) = parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert!(defaulted.is_empty());
    }
}
