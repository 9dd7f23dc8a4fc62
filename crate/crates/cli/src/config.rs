//! Configuration resolution: a flat key = value config file, overridden by
//! command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use spillkit::estimators::BaselineMode;
use spillkit::propensity::{BoostOptions, LinearOptions, ModelKind, ModelOptions};
use spillkit::sim::{CasePreset, SimulationConfig};
use spillkit::{Error, Result};

/// Parsed config file: `key = value` lines, `#` comments, blank lines.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "{}:{}: expected key = value, found {line:?}",
                    path.display(),
                    i + 1
                )));
            };
            values.insert(key.trim().to_ascii_lowercase(), value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::config(format!("config key {key}: cannot parse {raw:?}"))
            }),
        }
    }
}

/// Merge precedence: explicit flag, then config file, then default.
pub fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Build the simulation config from case preset, config file, and overrides.
#[allow(clippy::too_many_arguments)]
pub fn resolve_sim_config(
    file: &FileConfig,
    case: Option<CasePreset>,
    seed: Option<u64>,
    n_players: Option<usize>,
    n_games: Option<usize>,
    truncate_at: Option<u32>,
    uniform_mass: Option<f64>,
    activity_exponent: Option<f64>,
) -> Result<SimulationConfig> {
    let file_case = match file.get("case") {
        Some(raw) => Some(
            CasePreset::parse(raw)
                .ok_or_else(|| Error::config(format!("config key case: unknown case {raw:?}")))?,
        ),
        None => None,
    };
    let seed = resolve(seed, file.parse("seed")?, 0);
    let mut sim = match case.or(file_case) {
        Some(preset) => preset.config(seed),
        None => SimulationConfig::new(seed),
    };
    sim.seed = seed;
    sim.n_players = resolve(n_players, file.parse("players")?, sim.n_players);
    sim.n_games = resolve(n_games, file.parse("games")?, sim.n_games);
    sim.team_size = file.parse("team-size")?.unwrap_or(sim.team_size);
    sim.p_treat = file.parse("p-treat")?.unwrap_or(sim.p_treat);
    sim.truncation_k = resolve(truncate_at, file.parse("truncate-at")?, sim.truncation_k);
    sim.matching.uniform_mass =
        resolve(uniform_mass, file.parse("uniform-mass")?, sim.matching.uniform_mass);
    sim.matching.activity_exponent = resolve(
        activity_exponent,
        file.parse("activity-exponent")?,
        sim.matching.activity_exponent,
    );
    sim.matching.low_activity_cutoff = file
        .parse("low-activity-cutoff")?
        .unwrap_or(sim.matching.low_activity_cutoff);
    if let Some(raw) = file.get("treated-count-probs") {
        let probs: std::result::Result<Vec<f64>, _> =
            raw.split(',').map(|p| p.trim().parse::<f64>()).collect();
        sim.treated_count_probs = probs.map_err(|_| {
            Error::config(format!("config key treated-count-probs: cannot parse {raw:?}"))
        })?;
    }
    if let (Some(a), Some(b)) = (file.parse("beta-a")?, file.parse("beta-b")?) {
        sim.covariate_params = (a, b);
    }
    sim.validate()?;
    Ok(sim)
}

/// Resolve the baseline mode.
pub fn resolve_baseline(
    file: &FileConfig,
    flag: Option<&str>,
    default: BaselineMode,
) -> Result<BaselineMode> {
    let raw = flag.or_else(|| file.get("baseline"));
    match raw {
        None => Ok(default),
        Some(raw) => BaselineMode::parse(raw)
            .ok_or_else(|| Error::config(format!("unknown baseline {raw:?} (known-mu, did-linear)"))),
    }
}

/// Resolve the propensity model options from kind plus tuning knobs.
pub fn resolve_propensity(
    file: &FileConfig,
    kind_flag: Option<&str>,
    default_kind: ModelKind,
) -> Result<ModelOptions> {
    let raw = kind_flag.or_else(|| file.get("propensity"));
    let kind = match raw {
        None => default_kind,
        Some(raw) => ModelKind::parse(raw).ok_or_else(|| {
            Error::config(format!("unknown propensity model {raw:?} (linear, boosted)"))
        })?,
    };
    Ok(match kind {
        ModelKind::MultinomialLinear => {
            let mut options = LinearOptions::default();
            options.degree = file.parse("degree")?.unwrap_or(options.degree);
            options.max_iters = file.parse("max-iters")?.unwrap_or(options.max_iters);
            ModelOptions::Linear(options)
        }
        ModelKind::BoostedTrees => {
            let mut options = BoostOptions::default();
            options.learning_rate = file.parse("learning-rate")?.unwrap_or(options.learning_rate);
            options.max_depth = file.parse("max-depth")?.unwrap_or(options.max_depth);
            options.n_rounds = file.parse("rounds")?.unwrap_or(options.n_rounds);
            ModelOptions::Boosted(options)
        }
    })
}

/// Parse an outlier cap that may be "none".
pub fn parse_outlier_cap(raw: &str) -> Result<Option<f64>> {
    if raw.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let cap: f64 = raw
        .parse()
        .map_err(|_| Error::config(format!("outlier cap: cannot parse {raw:?}")))?;
    if cap <= 0.0 {
        return Err(Error::config("outlier cap must be positive (or \"none\")"));
    }
    Ok(Some(cap))
}

/// Resolve an output directory, requiring it to be explicitly set somewhere.
pub fn resolve_out_dir(file: &FileConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    resolve(flag, file.get("out-dir").map(PathBuf::from), PathBuf::new())
        .into_os_string()
        .into_string()
        .ok()
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .ok_or_else(|| Error::config("an output directory is required (--out-dir)"))
}
