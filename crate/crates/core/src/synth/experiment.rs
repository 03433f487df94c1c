//! End-to-end pipelines over synthetic or file-backed data, and the report
//! they produce.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{metric_suite, split_train_test, MetricTable, TestCase};
use super::world::{generate, SynthConfig, World};
use crate::analysis::{
    adjusted_rand, cluster_profiles, distance_correlation, ground_truth_profiles, heatmap_stats,
    silhouette, Axis, GroundTruth, KMeansConfig, PairConfig,
};
use crate::crime::{
    chronological_split, evaluate, label_instances, last_months, majority_baseline, mcnemar,
    write_crimes, CrimeRecord, Forest, ForestConfig, McNemar, Thresholds,
};
use crate::data::{
    build_sequences, preprocess, write_checkins, CategoryHierarchy, CheckIn, Clock, Grouping,
    NeighborhoodMap, PreprocessConfig, TokenSequence, WordKind,
};
use crate::embed::{train, train_cross, train_two_round, EmbeddingSpace, SoftmaxMode, TrainConfig};
use crate::error::{Error, Result};
use crate::profiles::{neighborhood_profiles, CheckInEmbedder, CheckInVectorMode, NeighborhoodProfile, SlotFilter};
use crate::stes::{Anchor, StesConfig, StesModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    #[default]
    Recommend,
    Zone,
    Crime,
    Correlate,
    Transfer,
}

impl Pipeline {
    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::Recommend => "recommend",
            Pipeline::Zone => "zone",
            Pipeline::Crime => "crime",
            Pipeline::Correlate => "correlate",
            Pipeline::Transfer => "transfer",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recommend" => Ok(Pipeline::Recommend),
            "zone" | "zones" => Ok(Pipeline::Zone),
            "crime" => Ok(Pipeline::Crime),
            "correlate" => Ok(Pipeline::Correlate),
            "transfer" => Ok(Pipeline::Transfer),
            _ => Err(Error::arg(format!("unknown pipeline `{s}`"))),
        }
    }
}

/// Recommendation methods compared by the recommend pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Summed feature and location vectors, centroid anchor.
    Stes,
    /// Feature words only.
    V1,
    /// Location words only.
    V2,
    /// Distance from the most recent check-in instead of the centroid.
    V3,
    /// Feature words trained to predict location words.
    V4,
    /// Feature words trained in two rounds.
    V5,
    /// Both spaces trained with the exact softmax.
    Exact,
    Concat,
    Average,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Stes,
        Method::V1,
        Method::V2,
        Method::V3,
        Method::V4,
        Method::V5,
        Method::Exact,
        Method::Concat,
        Method::Average,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Stes => "stes",
            Method::V1 => "v1",
            Method::V2 => "v2",
            Method::V3 => "v3",
            Method::V4 => "v4",
            Method::V5 => "v5",
            Method::Exact => "exact",
            Method::Concat => "concat",
            Method::Average => "average",
        }
    }

    pub fn vector_mode(self) -> CheckInVectorMode {
        match self {
            Method::V1 | Method::V4 | Method::V5 => CheckInVectorMode::FeatureOnly,
            Method::V2 => CheckInVectorMode::LocationOnly,
            Method::Concat => CheckInVectorMode::Concat,
            Method::Average => CheckInVectorMode::Average,
            Method::Stes | Method::V3 | Method::Exact => CheckInVectorMode::Sum,
        }
    }

    pub fn anchor(self) -> Anchor {
        match self {
            Method::V3 => Anchor::MostRecent,
            _ => Anchor::Centroid,
        }
    }

    fn spaces(self, softmax: SoftmaxMode) -> (Option<SpaceKey>, Option<SpaceKey>) {
        let mode = self.vector_mode();
        let softmax = if self == Method::Exact { SoftmaxMode::Exact } else { softmax };
        let feature = match self {
            Method::V4 => Some(SpaceKey::Cross),
            Method::V5 => Some(SpaceKey::TwoRound),
            _ => mode.needs_feature().then_some(SpaceKey::Plain(WordKind::Feature, softmax)),
        };
        let location = mode
            .needs_location()
            .then_some(SpaceKey::Plain(WordKind::Location, softmax));
        (feature, location)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::arg(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum SpaceKey {
    Plain(WordKind, SoftmaxMode),
    Cross,
    TwoRound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: Pipeline,
    pub min_posts: usize,
    pub split_ratio: f64,
    pub methods: Vec<Method>,
    /// How check-in vectors are formed for neighborhood profiles.
    pub profile_mode: CheckInVectorMode,
    /// Timeslots admitted into neighborhood profiles when zoning.
    pub zone_filter: SlotFilter,
    /// Final feature months held out for crime testing.
    pub test_months: usize,
    /// When set, crime labels are occurrence of this offense instead of
    /// the three-level rate.
    pub offense: Option<String>,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub stes: StesConfig,
    pub kmeans: KMeansConfig,
    pub forest: ForestConfig,
    pub thresholds: Thresholds,
    pub pairs: PairConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            pipeline: Pipeline::Recommend,
            min_posts: 10,
            split_ratio: 0.8,
            methods: vec![Method::Stes, Method::V1, Method::V2, Method::V3],
            profile_mode: CheckInVectorMode::FeatureOnly,
            zone_filter: SlotFilter::All,
            test_months: 1,
            offense: None,
            synth: SynthConfig::default(),
            train: TrainConfig {
                epochs: 10,
                ..Default::default()
            },
            stes: StesConfig::default(),
            kmeans: KMeansConfig::default(),
            forest: ForestConfig::default(),
            thresholds: Thresholds::default(),
            pairs: PairConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Sets every seed in the config.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.train.seed = seed;
        self.kmeans.seed = seed;
        self.forest.seed = seed;
        self.pairs.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.stes.validate()?;
        self.thresholds.validate()?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config("split_ratio must be in (0, 1)".into()));
        }
        if self.pipeline == Pipeline::Recommend && self.methods.is_empty() {
            return Err(Error::Config("no methods to compare".into()));
        }
        if self.test_months == 0 {
            return Err(Error::Config("test_months must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Everything a pipeline may read.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub checkins: Vec<CheckIn>,
    pub map: Option<NeighborhoodMap>,
    pub crimes: Option<Vec<CrimeRecord>>,
    pub hierarchy: CategoryHierarchy,
    pub clock: Clock,
    /// Known zone label per neighborhood id, when the data is synthetic.
    pub zone_truth: Option<HashMap<String, usize>>,
}

impl Dataset {
    pub fn from_world(world: World) -> Self {
        Dataset {
            zone_truth: Some(world.zone_truth()),
            checkins: world.checkins,
            map: Some(world.map),
            crimes: Some(world.crimes),
            hierarchy: world.hierarchy,
            clock: Clock::Recorded,
        }
    }

    /// Hex SHA-256 over the serialized inputs.
    pub fn digest(&self) -> Result<String> {
        let mut h = HashWriter(Sha256::new());
        write_checkins(&mut h, &self.checkins)?;
        if let Some(map) = &self.map {
            map.write_geojson(&mut h, "id", |_| Default::default())?;
        }
        if let Some(crimes) = &self.crimes {
            write_crimes(&mut h, crimes)?;
        }
        self.hierarchy.write(&mut h)?;
        writeln!(h, "{:?}", self.clock)?;
        Ok(hex(&h.0.finalize()))
    }

    fn map(&self) -> Result<&NeighborhoodMap> {
        self.map
            .as_ref()
            .ok_or_else(|| Error::Config("this pipeline needs a neighborhood map".into()))
    }
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn space_digest(space: &EmbeddingSpace) -> String {
    let mut h = Sha256::new();
    for t in space.vocabulary.tokens() {
        h.update(t.as_bytes());
        h.update([0]);
    }
    for w in &space.input_weights {
        h.update(w.to_le_bytes());
    }
    hex(&h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct McNemarRow {
    pub a: String,
    pub b: String,
    /// What the paired indicators measure, e.g. `acc@1`.
    pub on: String,
    pub test: McNemar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub pipeline: Pipeline,
    pub fingerprint: String,
    pub runtime: Duration,
    pub methods: BTreeMap<String, MetricTable>,
    pub mcnemar: Vec<McNemarRow>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn metric(&self, method: &str, metric: &str) -> Option<f64> {
        self.methods.get(method)?.get(metric).copied()
    }

    /// Human-readable summary.
    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "pipeline     {}", self.pipeline)?;
        writeln!(w, "fingerprint  {}", self.fingerprint)?;
        writeln!(w, "runtime      {:.2}s", self.runtime.as_secs_f64())?;
        for (method, table) in &self.methods {
            writeln!(w, "\n[{method}]")?;
            for (k, v) in table {
                writeln!(w, "  {k:<22} {v:.4}")?;
            }
        }
        if !self.mcnemar.is_empty() {
            writeln!(w, "\nmcnemar (mid-p)")?;
            for m in &self.mcnemar {
                writeln!(
                    w,
                    "  {} vs {} on {}: b={} c={} p={:.3e}",
                    m.a, m.b, m.on, m.test.b, m.test.c, m.test.mid_p
                )?;
            }
        }
        if !self.notes.is_empty() {
            writeln!(w)?;
            for n in &self.notes {
                writeln!(w, "note: {n}")?;
            }
        }
        Ok(())
    }

    /// Stable `key=value` lines. Runtime is left out so reruns compare equal.
    pub fn write_metrics(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "pipeline={}", self.pipeline)?;
        writeln!(w, "fingerprint={}", self.fingerprint)?;
        for (method, table) in &self.methods {
            for (k, v) in table {
                writeln!(w, "{method}.{k}={v}")?;
            }
        }
        for m in &self.mcnemar {
            let key = format!("mcnemar.{}.{}.{}", m.a, m.b, m.on);
            writeln!(w, "{key}.b={}", m.test.b)?;
            writeln!(w, "{key}.c={}", m.test.c)?;
            writeln!(w, "{key}.mid_p={}", m.test.mid_p)?;
        }
        Ok(())
    }
}

/// Trained spaces shared between methods of one run.
struct Spaces<'a> {
    cfg: &'a TrainConfig,
    sequences: &'a [TokenSequence],
    transfer: Option<&'a EmbeddingSpace>,
    cache: HashMap<SpaceKey, EmbeddingSpace>,
}

impl<'a> Spaces<'a> {
    fn new(cfg: &'a TrainConfig, sequences: &'a [TokenSequence], transfer: Option<&'a EmbeddingSpace>) -> Self {
        Spaces {
            cfg,
            sequences,
            transfer,
            cache: HashMap::new(),
        }
    }

    fn ensure(&mut self, key: SpaceKey) -> Result<()> {
        if self.cache.contains_key(&key) {
            return Ok(());
        }
        let cfg = self.cfg;
        let space = match key {
            SpaceKey::Plain(WordKind::Feature, m) if m == cfg.softmax && self.transfer.is_some() => {
                self.transfer.expect("checked").clone()
            }
            SpaceKey::Plain(kind, softmax) => {
                train(self.sequences, kind, &TrainConfig { softmax, ..cfg.clone() })?.space
            }
            SpaceKey::Cross => {
                train_cross(self.sequences, WordKind::Feature, WordKind::Location, cfg, None)?.space
            }
            SpaceKey::TwoRound => train_two_round(self.sequences, cfg)?.space,
        };
        self.cache.insert(key, space);
        Ok(())
    }

    fn embedder(&mut self, method: Method, clock: Clock) -> Result<CheckInEmbedder<'_>> {
        let (f, l) = method.spaces(self.cfg.softmax);
        self.embedder_for(f, l, method.vector_mode(), clock)
    }

    fn embedder_mode(&mut self, mode: CheckInVectorMode, clock: Clock) -> Result<CheckInEmbedder<'_>> {
        let softmax = self.cfg.softmax;
        let f = mode.needs_feature().then_some(SpaceKey::Plain(WordKind::Feature, softmax));
        let l = mode.needs_location().then_some(SpaceKey::Plain(WordKind::Location, softmax));
        self.embedder_for(f, l, mode, clock)
    }

    fn embedder_for(
        &mut self,
        f: Option<SpaceKey>,
        l: Option<SpaceKey>,
        mode: CheckInVectorMode,
        clock: Clock,
    ) -> Result<CheckInEmbedder<'_>> {
        for k in [f, l].into_iter().flatten() {
            self.ensure(k).map_err(|e| e.in_stage("train"))?;
        }
        CheckInEmbedder::new(f.map(|k| &self.cache[&k]), l.map(|k| &self.cache[&k]), mode, clock)
    }
}

fn cleaned(cfg: &ExperimentConfig, data: &Dataset, notes: &mut Vec<String>) -> Result<Vec<CheckIn>> {
    let pcfg = PreprocessConfig {
        min_posts: cfg.min_posts,
        ..Default::default()
    };
    let (out, rep) = preprocess(&data.checkins, &pcfg);
    notes.push(format!(
        "preprocess: {} check-ins in, {} repeats and {} sparse removed, {} kept",
        rep.input, rep.repeats_removed, rep.sparse_removed, rep.output
    ));
    if out.is_empty() {
        return Err(Error::arg("preprocessing removed every check-in").in_stage("preprocess"));
    }
    Ok(out)
}

fn user_sequences(checkins: &[CheckIn], clock: &Clock) -> Result<Vec<TokenSequence>> {
    build_sequences(checkins, Grouping::User, None, clock)
        .map(|s| s.sequences)
        .map_err(|e| e.in_stage("sequences"))
}

/// Runs one pipeline. `transfer` replaces the locally trained feature-word
/// space; the transfer pipeline requires it and compares against local
/// training.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &Dataset,
    transfer: Option<&EmbeddingSpace>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut fp = HashWriter(Sha256::new());
    fp.write_all(cfg.to_toml()?.as_bytes())?;
    fp.write_all(data.digest()?.as_bytes())?;
    if let Some(t) = transfer {
        fp.write_all(space_digest(t).as_bytes())?;
    }
    let mut report = ExperimentReport {
        pipeline: cfg.pipeline,
        fingerprint: hex(&fp.0.finalize()),
        runtime: Duration::ZERO,
        methods: BTreeMap::new(),
        mcnemar: Vec::new(),
        notes: Vec::new(),
    };
    match cfg.pipeline {
        Pipeline::Recommend => recommend_pipeline(cfg, data, transfer, &cfg.methods, &mut report)?,
        Pipeline::Transfer => {
            let source = transfer.ok_or_else(|| {
                Error::Config("the transfer pipeline needs a source feature-word model".into())
            })?;
            transfer_pipeline(cfg, data, source, &mut report)?
        }
        Pipeline::Zone => zone_pipeline(cfg, data, transfer, &mut report)?,
        Pipeline::Crime => crime_pipeline(cfg, data, transfer, &mut report)?,
        Pipeline::Correlate => correlate_pipeline(cfg, data, &mut report)?,
    }
    report.runtime = start.elapsed();
    Ok(report)
}

/// Generates the synthetic city (and, for transfer, a second city whose
/// feature words provide the source model) and runs the configured pipeline.
pub fn run_synthetic(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let world = generate(&cfg.synth).map_err(|e| e.in_stage("generate"))?;
    let data = Dataset::from_world(world);
    if cfg.pipeline == Pipeline::Transfer {
        let source = Dataset::from_world(
            generate(&cfg.synth.second_city()).map_err(|e| e.in_stage("generate"))?,
        );
        let space = source_feature_space(cfg, &source)?;
        return run_experiment(cfg, &data, Some(&space));
    }
    run_experiment(cfg, &data, None)
}

/// Feature-word space trained on all of a dataset's cleaned check-ins.
pub fn source_feature_space(cfg: &ExperimentConfig, data: &Dataset) -> Result<EmbeddingSpace> {
    let cs = cleaned(cfg, data, &mut Vec::new())?;
    let seqs = user_sequences(&cs, &data.clock)?;
    Ok(train(&seqs, WordKind::Feature, &cfg.train)
        .map_err(|e| e.in_stage("train"))?
        .space)
}

struct MethodRun {
    metrics: MetricTable,
    hits: Vec<usize>,
}

fn evaluate_method(
    cfg: &ExperimentConfig,
    spaces: &mut Spaces<'_>,
    method: Method,
    clock: Clock,
    train_set: &[CheckIn],
    test_set: &[CheckIn],
    notes: &mut Vec<String>,
) -> Result<MethodRun> {
    let embedder = spaces.embedder(method, clock)?;
    let (vectors, skipped) = embedder.embed_all(train_set);
    if skipped > 0 {
        notes.push(format!("{method}: {skipped} training check-ins had no vector"));
    }
    let model = StesModel::build(&vectors).map_err(|e| e.in_stage("profiles"))?;
    let k = cfg.stes.max_k();
    let queries: Vec<(String, _)> = test_set
        .iter()
        .map(|c| (c.user_id.clone(), c.timeslot(&clock)))
        .collect();
    let results = model.recommend_batch(&queries, k, &cfg.stes, method.anchor());
    let mut unreachable = 0;
    let mut fallbacks = 0;
    let mut cases = Vec::with_capacity(test_set.len());
    for (c, r) in test_set.iter().zip(results) {
        if !model.has_venue(&c.venue_id) {
            unreachable += 1;
        }
        let ranked = match r {
            Ok(rec) => {
                fallbacks += usize::from(rec.fallback);
                rec.venues.into_iter().map(|v| v.venue_id).collect()
            }
            Err(Error::Lookup(_)) => Vec::new(),
            Err(e) => return Err(e.in_stage("recommend")),
        };
        cases.push(TestCase {
            user_id: c.user_id.clone(),
            truth: c.venue_id.clone(),
            ranked,
        });
    }
    notes.push(format!(
        "{method}: {} test check-ins, {unreachable} at venues unseen in training, {fallbacks} fallback queries",
        cases.len()
    ));
    let hits = cases
        .iter()
        .map(|c| usize::from(c.ranked.first() == Some(&c.truth)))
        .collect();
    let metrics = metric_suite(&cases, &cfg.stes.ks).map_err(|e| e.in_stage("metrics"))?;
    Ok(MethodRun { metrics, hits })
}

fn recommend_pipeline(
    cfg: &ExperimentConfig,
    data: &Dataset,
    transfer: Option<&EmbeddingSpace>,
    methods: &[Method],
    report: &mut ExperimentReport,
) -> Result<()> {
    let cs = cleaned(cfg, data, &mut report.notes)?;
    let split = split_train_test(&cs, cfg.split_ratio).map_err(|e| e.in_stage("split"))?;
    report.notes.push(format!(
        "split: {} train, {} test, {} users train-only",
        split.train.len(),
        split.test.len(),
        split.train_only_users
    ));
    if split.test.is_empty() {
        return Err(Error::arg("no test check-ins").in_stage("split"));
    }
    let seqs = user_sequences(&split.train, &data.clock)?;
    let mut spaces = Spaces::new(&cfg.train, &seqs, transfer);
    let mut hits: Vec<(Method, Vec<usize>)> = Vec::new();
    for &m in methods {
        let run = evaluate_method(cfg, &mut spaces, m, data.clock, &split.train, &split.test, &mut report.notes)?;
        report.methods.insert(m.to_string(), run.metrics);
        hits.push((m, run.hits));
    }
    add_hit_tests(&hits.iter().map(|(m, h)| (m.to_string(), h.clone())).collect::<Vec<_>>(), report)
}

fn add_hit_tests(hits: &[(String, Vec<usize>)], report: &mut ExperimentReport) -> Result<()> {
    let Some((first, base)) = hits.first() else {
        return Ok(());
    };
    let truth = vec![1; base.len()];
    for (name, h) in &hits[1..] {
        report.mcnemar.push(McNemarRow {
            a: first.clone(),
            b: name.clone(),
            on: "acc@1".into(),
            test: mcnemar(base, h, &truth)?,
        });
    }
    Ok(())
}

fn transfer_pipeline(
    cfg: &ExperimentConfig,
    data: &Dataset,
    source: &EmbeddingSpace,
    report: &mut ExperimentReport,
) -> Result<()> {
    if source.kind != WordKind::Feature {
        return Err(Error::Config("transfer source must be a feature-word model".into()));
    }
    if source.dim != cfg.train.dim {
        return Err(Error::Config(format!(
            "transfer source has dim {}, config wants {}",
            source.dim, cfg.train.dim
        )));
    }
    let cs = cleaned(cfg, data, &mut report.notes)?;
    let split = split_train_test(&cs, cfg.split_ratio).map_err(|e| e.in_stage("split"))?;
    let seqs = user_sequences(&split.train, &data.clock)?;
    let mut local = Spaces::new(&cfg.train, &seqs, None);
    let a = evaluate_method(cfg, &mut local, Method::Stes, data.clock, &split.train, &split.test, &mut report.notes)?;
    let mut ported = Spaces::new(&cfg.train, &seqs, Some(source));
    // location words are always trained locally
    let loc = SpaceKey::Plain(WordKind::Location, cfg.train.softmax);
    local.ensure(loc)?;
    ported.cache.insert(loc, local.cache[&loc].clone());
    let b = evaluate_method(cfg, &mut ported, Method::Stes, data.clock, &split.train, &split.test, &mut report.notes)?;
    report.methods.insert("local".into(), a.metrics);
    report.methods.insert("transfer".into(), b.metrics);
    add_hit_tests(&[("local".into(), a.hits), ("transfer".into(), b.hits)], report)
}

fn zone_pipeline(
    cfg: &ExperimentConfig,
    data: &Dataset,
    transfer: Option<&EmbeddingSpace>,
    report: &mut ExperimentReport,
) -> Result<()> {
    let map = data.map()?;
    let cs = cleaned(cfg, data, &mut report.notes)?;
    let seqs = user_sequences(&cs, &data.clock)?;
    let mut spaces = Spaces::new(&cfg.train, &seqs, transfer);
    let embedder = spaces.embedder_mode(cfg.profile_mode, data.clock)?;
    let (vectors, _) = embedder.embed_all(&cs);
    let embedded = neighborhood_profiles(&vectors, map, false, cfg.zone_filter);
    let counts = |alt| {
        let kept: Vec<CheckIn> = cs
            .iter()
            .filter(|c| cfg.zone_filter.admits(c.timeslot(&data.clock)))
            .cloned()
            .collect();
        ground_truth_profiles(&kept, map, alt, &data.hierarchy, &data.clock, false).1
    };
    let sets = [
        ("embedding", embedded),
        ("counts_feature", counts(GroundTruth::FeatureWords)),
        ("counts_category", counts(GroundTruth::Categories)),
    ];
    for (name, profiles) in sets {
        let table = zone_metrics(cfg, data, &profiles).map_err(|e| e.in_stage("cluster"))?;
        report.methods.insert(name.into(), table);
    }
    Ok(())
}

fn zone_metrics(cfg: &ExperimentConfig, data: &Dataset, profiles: &[NeighborhoodProfile]) -> Result<MetricTable> {
    let (ids, clustering) = cluster_profiles(profiles, &cfg.kmeans)?;
    let points: Vec<Vec<f64>> = profiles.iter().map(|p| p.vector.clone()).collect();
    let mut t = MetricTable::new();
    t.insert("neighborhoods".into(), ids.len() as f64);
    t.insert("inertia".into(), clustering.inertia);
    if clustering.k >= 2 {
        t.insert("si".into(), silhouette(&points, &clustering.labels)?);
    }
    if let Some(truth) = &data.zone_truth {
        let planted: Vec<usize> = ids.iter().map(|id| truth.get(id).copied().unwrap_or(usize::MAX)).collect();
        if planted.iter().all(|&z| z != usize::MAX) {
            t.insert("ari".into(), adjusted_rand(&clustering.labels, &planted)?);
        }
    }
    Ok(t)
}

fn crime_pipeline(
    cfg: &ExperimentConfig,
    data: &Dataset,
    transfer: Option<&EmbeddingSpace>,
    report: &mut ExperimentReport,
) -> Result<()> {
    let map = data.map()?;
    let crimes = data
        .crimes
        .as_ref()
        .ok_or_else(|| Error::Config("the crime pipeline needs crime records".into()))?;
    let cs = cleaned(cfg, data, &mut report.notes)?;
    let seqs = user_sequences(&cs, &data.clock)?;
    let mut spaces = Spaces::new(&cfg.train, &seqs, transfer);
    let embedder = spaces.embedder_mode(cfg.profile_mode, data.clock)?;
    let (vectors, _) = embedder.embed_all(&cs);
    let sets = [
        ("embedding", neighborhood_profiles(&vectors, map, true, SlotFilter::All)),
        (
            "counts_feature",
            ground_truth_profiles(&cs, map, GroundTruth::FeatureWords, &data.hierarchy, &data.clock, true).1,
        ),
        (
            "counts_category",
            ground_truth_profiles(&cs, map, GroundTruth::Categories, &data.hierarchy, &data.clock, true).1,
        ),
    ];
    let mut preds: Vec<(String, Vec<usize>)> = Vec::new();
    let mut truth_all: Option<Vec<usize>> = None;
    for (name, profiles) in sets {
        let labels = label_instances(crimes, &profiles, map, &data.clock, &cfg.thresholds, cfg.offense.as_deref())
            .map_err(|e| e.in_stage("label"))?;
        let first_test = last_months(&labels.instances, cfg.test_months)
            .ok_or_else(|| Error::arg("no labeled instances").in_stage("label"))?;
        let (train_set, test_set) = chronological_split(&labels.instances, first_test);
        if train_set.is_empty() || test_set.is_empty() {
            return Err(Error::arg(format!(
                "{} training and {} test instances; need both",
                train_set.len(),
                test_set.len()
            ))
            .in_stage("split"));
        }
        let label = |i: &crate::crime::LabeledInstance| match i.occurrence {
            Some(o) => usize::from(o),
            None => i.rate.index(),
        };
        let classes = if cfg.offense.is_some() { 2 } else { 3 };
        let x: Vec<Vec<f64>> = train_set.iter().map(|i| i.features.clone()).collect();
        let y: Vec<usize> = train_set.iter().map(label).collect();
        let tx: Vec<Vec<f64>> = test_set.iter().map(|i| i.features.clone()).collect();
        let ty: Vec<usize> = test_set.iter().map(label).collect();
        let forest = Forest::fit(&x, &y, &cfg.forest).map_err(|e| e.in_stage("forest"))?;
        let pred = forest.predict_all(&tx)?;
        let ev = evaluate(&pred, &ty, classes)?;
        let mut t = eval_table(&ev);
        t.insert("train".into(), x.len() as f64);
        t.insert("test".into(), tx.len() as f64);
        report.methods.insert(name.into(), t);
        if truth_all.is_none() {
            let base = majority_baseline(&y, ty.len())?;
            let mut t = eval_table(&evaluate(&base, &ty, classes)?);
            t.insert("test".into(), ty.len() as f64);
            report.methods.insert("majority".into(), t);
            preds.push(("majority".into(), base));
            report.notes.push(format!(
                "crime: {} instances, {} neighborhood-months with crimes but no features, {} crimes outside the map, testing from {first_test}",
                labels.instances.len(),
                labels.skipped_without_features,
                labels.crimes_outside
            ));
            truth_all = Some(ty.clone());
        }
        if truth_all.as_ref() == Some(&ty) {
            preds.push((name.into(), pred));
        } else {
            report.notes.push(format!("{name}: test set differs from the embedding test set, no paired test"));
        }
    }
    let truth = truth_all.expect("at least one feature set");
    let (base_name, base) = &preds[0];
    for (name, p) in &preds[1..] {
        report.mcnemar.push(McNemarRow {
            a: name.clone(),
            b: base_name.clone(),
            on: "accuracy".into(),
            test: mcnemar(p, base, &truth)?,
        });
    }
    Ok(())
}

fn eval_table(ev: &crate::crime::Evaluation) -> MetricTable {
    let mut t = MetricTable::new();
    t.insert("accuracy".into(), ev.accuracy);
    t.insert("macro_f1".into(), ev.macro_f1);
    for (c, f) in ev.per_class_f1.iter().enumerate() {
        if let Some(f) = f {
            t.insert(format!("f1_class{c}"), *f);
        }
    }
    t
}

fn correlate_pipeline(cfg: &ExperimentConfig, data: &Dataset, report: &mut ExperimentReport) -> Result<()> {
    let cs = cleaned(cfg, data, &mut report.notes)?;
    let seqs = user_sequences(&cs, &data.clock)?;
    let loc = train(&seqs, WordKind::Location, &cfg.train)
        .map_err(|e| e.in_stage("train"))?
        .space;
    let mut coords = HashMap::new();
    for c in &cs {
        coords.entry(c.venue_id.clone()).or_insert(c.coords());
    }
    let (rep, _) = distance_correlation(&loc, &coords, &cfg.pairs).map_err(|e| e.in_stage("correlate"))?;
    let mut t = MetricTable::new();
    for (scope, s) in [("all", &rep.all), ("near", &rep.near)] {
        t.insert(format!("{scope}.pairs"), s.n as f64);
        for (series, c) in [("cosine", &s.cosine), ("euclidean", &s.euclidean)] {
            if let Some((r, p)) = c.pearson {
                t.insert(format!("{scope}.{series}.pearson"), r);
                t.insert(format!("{scope}.{series}.pearson_p"), p);
            }
            if let Some((r, p)) = c.spearman {
                t.insert(format!("{scope}.{series}.spearman"), r);
                t.insert(format!("{scope}.{series}.spearman_p"), p);
            }
        }
    }
    report.methods.insert("location".into(), t);

    let feat = train(&seqs, WordKind::Feature, &cfg.train)
        .map_err(|e| e.in_stage("train"))?
        .space;
    if let Ok(h) = heatmap_stats(&feat, Axis::Category, &cfg.pairs) {
        let (mut diag, mut off) = (Vec::new(), Vec::new());
        for (i, row) in h.cosine.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                if let Some(c) = c {
                    if i == j { diag.push(*c) } else { off.push(*c) }
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mut t = MetricTable::new();
        if !diag.is_empty() && !off.is_empty() {
            t.insert("category.diagonal_cosine".into(), mean(&diag));
            t.insert("category.off_diagonal_cosine".into(), mean(&off));
        }
        report.methods.insert("feature".into(), t);
    }
    report.notes.push(format!(
        "euclidean distances normalized by the global range [{:.4}, {:.4}]{}",
        rep.euclidean_range.0,
        rep.euclidean_range.1,
        if rep.sampled { ", pairs sampled" } else { "" }
    ));
    Ok(())
}
