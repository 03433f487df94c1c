use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stembed::analysis::{KMeansConfig, PairConfig};
use stembed::crime::{ForestConfig, Thresholds};
use stembed::data::Clock;
use stembed::embed::TrainConfig;
use stembed::stes::StesConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub checkins: Option<PathBuf>,
    pub polygons: Option<PathBuf>,
    pub crimes: Option<PathBuf>,
    /// `category <TAB> top_level` lines.
    pub hierarchy: Option<PathBuf>,
    /// Directory holding `feature.txt` and `location.txt`.
    pub models: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    /// GeoJSON property carrying the neighborhood id.
    pub polygon_id_key: String,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            checkins: None,
            polygons: None,
            crimes: None,
            hierarchy: None,
            models: None,
            reports: None,
            polygon_id_key: "GEOID".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    pub workers: usize,
    /// IANA zone name, or `recorded` to use each timestamp's own offset.
    pub time_zone: String,
    pub min_posts: usize,
    pub paths: Paths,
    pub train: TrainConfig,
    pub stes: StesConfig,
    pub thresholds: Thresholds,
    pub kmeans: KMeansConfig,
    pub forest: ForestConfig,
    pub pairs: PairConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            seed: 42,
            workers: 1,
            time_zone: "recorded".into(),
            min_posts: 10,
            paths: Paths::default(),
            train: TrainConfig::default(),
            stes: StesConfig::default(),
            thresholds: Thresholds::default(),
            kmeans: KMeansConfig::default(),
            forest: ForestConfig::default(),
            pairs: PairConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(AppConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: AppConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let inputs = [
            ("paths.checkins", &cfg.paths.checkins),
            ("paths.polygons", &cfg.paths.polygons),
            ("paths.crimes", &cfg.paths.crimes),
            ("paths.hierarchy", &cfg.paths.hierarchy),
        ];
        for (key, p) in inputs {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{key} points to missing file {}", p.display());
                }
            }
        }
        Ok(cfg)
    }

    /// Pushes the top-level seed and worker count into every stage.
    pub fn apply(&mut self, seed: Option<u64>, workers: Option<usize>, time_zone: Option<&str>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(w) = workers {
            self.workers = w;
        }
        if let Some(tz) = time_zone {
            self.time_zone = tz.to_string();
        }
        self.train.seed = self.seed;
        self.train.workers = self.workers;
        self.kmeans.seed = self.seed;
        self.forest.seed = self.seed;
        self.pairs.seed = self.seed;
    }

    pub fn clock(&self) -> Result<Clock> {
        Ok(self.time_zone.parse()?)
    }

    pub fn model_path(&self, flag: Option<&Path>, name: &str) -> Option<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.paths.models.as_ref().map(|d| d.join(format!("{name}.txt"))))
    }
}

/// A flag value, else the config value, else an error naming both.
pub fn required(flag: Option<&Path>, cfg: &Option<PathBuf>, what: &str, key: &str) -> Result<PathBuf> {
    match flag.map(Path::to_path_buf).or_else(|| cfg.clone()) {
        Some(p) => Ok(p),
        None => bail!("no {what} given (use --{} or paths.{key})", key.replace('_', "-")),
    }
}
