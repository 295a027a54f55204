//! Run configuration: `key = value` files with `include`, `SKIPDISK_*`
//! environment overrides, then command-line flags, in increasing priority.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use skipdisk::{IndexConfig, IoBackend, SearchParams, SimConfig, Variant};

use crate::CliError;

pub const ENV_PREFIX: &str = "SKIPDISK_";

/// Every key accepted in a config file, an environment override or a flag.
pub const KEYS: &[&str] = &[
    "dataset",
    "queries",
    "truth",
    "index",
    "store",
    "out",
    "variant",
    "k",
    "l",
    "b",
    "dlb",
    "ddade",
    "dpq",
    "pq_sub_dim",
    "pq_iters",
    "r",
    "l_build",
    "alpha",
    "keep_fraction",
    "ps",
    "epsilon",
    "seed",
    "io",
    "sim_mean_us",
    "sim_jitter_us",
    "threads",
];

/// Raw settings before typing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

fn check_key(key: &str, origin: &str) -> Result<(), CliError> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(CliError::Config(format!("unknown key '{key}' ({origin})")))
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        let key = normalize(key);
        check_key(&key, "flag")?;
        self.values.insert(key, value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Loads a config file, following `include = other.cfg` lines relative to
    /// the including file. Later lines override earlier ones.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let mut stack = HashSet::new();
        self.load_file_inner(path, &mut stack)
    }

    fn load_file_inner(&mut self, path: &Path, stack: &mut HashSet<PathBuf>) -> Result<(), CliError> {
        let canon = path
            .canonicalize()
            .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
        if !stack.insert(canon.clone()) {
            return Err(CliError::Config(format!("include cycle at {}", path.display())));
        }
        let text = std::fs::read_to_string(&canon)
            .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{}:{}: expected key = value", path.display(), no + 1))
            })?;
            let key = normalize(k);
            let value = v.trim().to_string();
            if key == "include" {
                let target = canon.parent().unwrap_or(Path::new(".")).join(&value);
                self.load_file_inner(&target, stack)?;
                continue;
            }
            check_key(&key, &format!("{}:{}", path.display(), no + 1))?;
            self.values.insert(key, value);
        }
        stack.remove(&canon);
        Ok(())
    }

    /// Applies `SKIPDISK_<KEY>` variables; unknown suffixes are rejected.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), CliError> {
        for (name, value) in vars {
            if let Some(rest) = name.strip_prefix(ENV_PREFIX) {
                let key = normalize(rest);
                check_key(&key, &format!("environment variable {name}"))?;
                self.values.insert(key, value);
            }
        }
        Ok(())
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Config(format!("bad value '{v}' for {key}: {e}")))
            })
            .transpose()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IoChoice {
    Real,
    Simulated { mean_us: f64, jitter_us: f64 },
}

/// Fully typed configuration for one command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub index: IndexConfig,
    pub search: SearchParams,
    pub l_values: Vec<usize>,
    pub variants: Vec<Variant>,
    pub dataset: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub index_path: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub io: IoChoice,
    pub threads: usize,
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| CliError::Config(format!("bad value '{s}' for {key}: {e}")))
        })
        .collect()
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self, CliError> {
        let d = IndexConfig::default();
        let variants: Vec<Variant> = match s.get("variant") {
            Some(v) => list("variant", v)?,
            None => Vec::new(),
        };
        let index = IndexConfig {
            d_pq: s.parse("dpq")?.unwrap_or(d.d_pq),
            d_lb: s.parse("dlb")?.unwrap_or(d.d_lb),
            d_dade: s.parse("ddade")?.unwrap_or(d.d_dade),
            pq_sub_dim: s.parse("pq_sub_dim")?.unwrap_or(d.pq_sub_dim),
            pq_iters: s.parse("pq_iters")?.unwrap_or(d.pq_iters),
            max_degree: s.parse("r")?.unwrap_or(d.max_degree),
            l_build: s.parse("l_build")?.unwrap_or(d.l_build),
            alpha: s.parse("alpha")?.unwrap_or(d.alpha),
            variant: variants.first().copied().unwrap_or(d.variant),
            keep_fraction: s.parse("keep_fraction")?.unwrap_or(d.keep_fraction),
            p_s: s.parse("ps")?.unwrap_or(d.p_s),
        };
        let sp = SearchParams::default();
        let l_values: Vec<usize> = match s.get("l") {
            Some(v) => list("l", v)?,
            None => vec![sp.l],
        };
        if l_values.is_empty() {
            return Err(CliError::Config("empty L list".into()));
        }
        let mut search = SearchParams::new(
            s.parse("k")?.unwrap_or(sp.k),
            l_values[0],
            s.parse("b")?.unwrap_or(sp.b),
        );
        search.epsilon_override = s.parse("epsilon")?;
        for &l in &l_values {
            SearchParams { l, ..search }
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        let io = match s.get("io").unwrap_or("sim") {
            "real" => IoChoice::Real,
            "sim" | "simulated" => {
                let def = SimConfig::default();
                let jitter_us = s.parse("sim_jitter_us")?.unwrap_or(def.jitter_mean_ns as f64 / 1e3);
                let mean_us = s
                    .parse("sim_mean_us")?
                    .unwrap_or((def.fixed_ns + def.jitter_mean_ns) as f64 / 1e3);
                if !(jitter_us >= 0.0 && mean_us >= jitter_us) {
                    return Err(CliError::Config(format!(
                        "need sim_mean_us >= sim_jitter_us >= 0, got {mean_us} and {jitter_us}"
                    )));
                }
                IoChoice::Simulated { mean_us, jitter_us }
            }
            other => return Err(CliError::Config(format!("io must be real or sim, got '{other}'"))),
        };
        Ok(RunConfig {
            index,
            search,
            l_values,
            variants,
            dataset: s.path("dataset"),
            queries: s.path("queries"),
            truth: s.path("truth"),
            index_path: s.path("index"),
            store: s.path("store"),
            out: s.path("out"),
            seed: s.parse("seed")?.unwrap_or(42),
            io,
            threads: s.parse("threads")?.unwrap_or(1).max(1),
        })
    }

    pub fn io_backend(&self) -> IoBackend {
        match self.io {
            IoChoice::Real => IoBackend::Real,
            IoChoice::Simulated { mean_us, jitter_us } => IoBackend::Simulated(SimConfig {
                fixed_ns: ((mean_us - jitter_us) * 1e3).round() as u64,
                jitter_mean_ns: (jitter_us * 1e3).round() as u64,
                seed: self.seed,
                ..SimConfig::default()
            }),
        }
    }

    /// Required path that must exist.
    pub fn input(&self, key: &str, p: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        let p = p
            .clone()
            .ok_or_else(|| CliError::Config(format!("missing required setting '{key}'")))?;
        if !p.exists() {
            return Err(CliError::Config(format!("{key} path {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn output(&self) -> Result<PathBuf, CliError> {
        self.out
            .clone()
            .ok_or_else(|| CliError::Config("missing required setting 'out'".into()))
    }

    /// Store file next to an index unless set explicitly.
    pub fn store_for(&self, index: &Path) -> PathBuf {
        self.store.clone().unwrap_or_else(|| {
            let mut s = index.as_os_str().to_owned();
            s.push(".vectors");
            PathBuf::from(s)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_include_env_and_flag_priority() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.cfg"), "k = 5\nl = 20, 40\nvariant = pbc\n").unwrap();
        std::fs::write(
            dir.path().join("run.cfg"),
            "# experiment\ninclude = base.cfg\nk = 7\nkeep-fraction = 0.25\n",
        )
        .unwrap();
        let mut s = Settings::default();
        s.load_file(&dir.path().join("run.cfg")).unwrap();
        s.apply_env([
            ("SKIPDISK_B".to_string(), "4".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
        ])
        .unwrap();
        s.set("seed", "9").unwrap();
        let c = RunConfig::from_settings(&s).unwrap();
        assert_eq!(c.search.k, 7);
        assert_eq!(c.search.b, 4);
        assert_eq!(c.l_values, vec![20, 40]);
        assert_eq!(c.index.variant, Variant::Pbc);
        assert_eq!(c.index.keep_fraction, 0.25);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.cfg");
        std::fs::write(&p, "include = a.cfg\n").unwrap();
        assert!(matches!(Settings::default().load_file(&p), Err(CliError::Config(_))));
        std::fs::write(&p, "colour = red\n").unwrap();
        assert!(Settings::default().load_file(&p).is_err());
        std::fs::write(&p, "no equals sign\n").unwrap();
        assert!(Settings::default().load_file(&p).is_err());
        assert!(Settings::default()
            .apply_env([("SKIPDISK_NOPE".to_string(), "1".to_string())])
            .is_err());

        let mut s = Settings::default();
        s.set("k", "ten").unwrap();
        assert!(RunConfig::from_settings(&s).is_err());
        let mut s = Settings::default();
        s.set("k", "10").unwrap();
        s.set("l", "5").unwrap();
        assert!(RunConfig::from_settings(&s).is_err());
        let mut s = Settings::default();
        s.set("io", "tape").unwrap();
        assert!(RunConfig::from_settings(&s).is_err());
    }

    #[test]
    fn simulated_latency_split() {
        let mut s = Settings::default();
        s.set("sim_mean_us", "150").unwrap();
        s.set("sim_jitter_us", "50").unwrap();
        let c = RunConfig::from_settings(&s).unwrap();
        match c.io_backend() {
            IoBackend::Simulated(sim) => {
                assert_eq!(sim.fixed_ns, 100_000);
                assert_eq!(sim.jitter_mean_ns, 50_000);
            }
            IoBackend::Real => panic!("expected simulated backend"),
        }
    }
}
