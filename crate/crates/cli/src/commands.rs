use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use stembed::analysis::{
    cluster_composition, cluster_profiles, distance_correlation, ground_truth_profiles, heatmap_stats,
    pair_segments, silhouette, write_zones_geojson,
};
use stembed::crime::read_crimes;
use stembed::data::{
    build_sequences, preprocess, read_checkins, write_checkins, CategoryHierarchy, CheckIn, Clock,
    NeighborhoodMap, PreprocessConfig, Timeslot, Vocabulary, WordKind,
};
use stembed::embed::{io as model_io, train_cross, train_two_round, EmbeddingSpace};
use stembed::io_util::write_atomic;
use stembed::profiles::{
    location_profiles, neighborhood_profiles, overall_profile, user_profiles, write_profiles,
    CheckInEmbedder, CheckInVector, CheckInVectorMode, ProfileRecord,
};
use stembed::stes::StesModel;
use stembed::synth::{
    generate, run_experiment, run_synthetic, source_feature_space, Dataset, ExperimentConfig,
    ExperimentReport, Pipeline, SynthConfig, ZONES,
};

use crate::config::{required, AppConfig};
use crate::{Command, Common, Entity, Models, ReportOut};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { common, out, vocab_dir } => ingest(&common, &out, vocab_dir.as_deref()),
        Command::Train {
            common,
            kind,
            output_kind,
            two_round,
            softmax,
            dim,
            epochs,
            window_before,
            window_after,
            learning_rate,
            grouping,
            polygons,
            out,
            log,
        } => {
            let mut ctx = Ctx::new(&common)?;
            let t = &mut ctx.cfg.train;
            if let Some(s) = softmax {
                t.softmax = s;
            }
            if let Some(v) = dim {
                t.dim = v;
            }
            if let Some(v) = epochs {
                t.epochs = v;
            }
            if let Some(v) = window_before {
                t.window_before = v;
            }
            if let Some(v) = window_after {
                t.window_after = v;
            }
            if let Some(v) = learning_rate {
                t.learning_rate = v;
            }
            let cs = ctx.cleaned(&common)?;
            let map = match polygons.or_else(|| ctx.cfg.paths.polygons.clone()) {
                Some(p) => Some(ctx.map(&p)?),
                None => None,
            };
            let seqs = build_sequences(&cs, grouping, map.as_ref(), &ctx.clock)?.sequences;
            let trained = if two_round {
                if kind != WordKind::Feature {
                    bail!("--two-round trains feature words; drop --kind {kind}");
                }
                train_two_round(&seqs, &ctx.cfg.train)?
            } else {
                train_cross(&seqs, kind, output_kind.unwrap_or(kind), &ctx.cfg.train, None)?
            };
            trained.stats.write_log(io::stderr())?;
            if let Some(log) = log {
                write_atomic(&log, |w| trained.stats.write_log(w))?;
            }
            let out = match ctx.cfg.model_path(out.as_deref(), kind.as_str()) {
                Some(p) => p,
                None => bail!("no output path given (use --out or paths.models)"),
            };
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            model_io::save(&trained.space, &out)?;
            eprintln!(
                "wrote {} ({} words, dim {})",
                out.display(),
                trained.space.len(),
                trained.space.dim
            );
            Ok(())
        }
        Command::Profiles {
            common,
            models,
            entity,
            mode,
            monthly,
            filter,
            polygons,
            out,
        } => {
            let ctx = Ctx::new(&common)?;
            let cs = ctx.cleaned(&common)?;
            let spaces = ctx.spaces(&models, mode)?;
            let vectors = spaces.embed(mode, ctx.clock, &cs)?;
            let records: Vec<ProfileRecord> = match entity {
                Entity::Venue => location_profiles(&vectors).iter().map(ProfileRecord::from).collect(),
                Entity::User => {
                    let mut by_user: BTreeMap<&str, Vec<CheckInVector>> = BTreeMap::new();
                    for v in &vectors {
                        by_user.entry(v.user_id.as_str()).or_default().push(v.clone());
                    }
                    let mut out = Vec::new();
                    for (user, vs) in &by_user {
                        out.extend(user_profiles(user, vs).iter().map(ProfileRecord::from));
                        out.extend(overall_profile(user, vs).as_ref().map(ProfileRecord::from));
                    }
                    out
                }
                Entity::Neighborhood => {
                    let path = required(polygons.as_deref(), &ctx.cfg.paths.polygons, "polygon file", "polygons")?;
                    let map = ctx.map(&path)?;
                    neighborhood_profiles(&vectors, &map, monthly, filter)
                        .iter()
                        .map(ProfileRecord::from)
                        .collect()
                }
            };
            emit(out.as_deref(), |w| Ok(write_profiles(w, &records)?))
        }
        Command::Recommend {
            common,
            models,
            user,
            slot,
            k,
            queries,
            variant,
        } => {
            let ctx = Ctx::new(&common)?;
            let cs = ctx.cleaned(&common)?;
            let mode = variant.vector_mode();
            let spaces = ctx.spaces(&models, mode)?;
            let vectors = spaces.embed(mode, ctx.clock, &cs)?;
            let model = StesModel::build(&vectors)?;
            let anchor = variant.anchor();
            let mut out = io::stdout().lock();
            match queries {
                None => {
                    let (user, slot) = (user.expect("clap requires --user"), slot.expect("clap requires --slot"));
                    let rec = model.recommend(&user, slot, k, &ctx.cfg.stes, anchor)?;
                    if rec.fallback {
                        eprintln!("{user} has no check-ins in {slot}; using all of their check-ins");
                    }
                    for (i, v) in rec.venues.iter().enumerate() {
                        writeln!(out, "{}\t{}\t{}", i + 1, v.venue_id, v.score)?;
                    }
                }
                Some(path) => {
                    let qs = read_queries(&path)?;
                    let results = model.recommend_batch(&qs, k, &ctx.cfg.stes, anchor);
                    let mut failed = 0;
                    for ((user, slot), res) in qs.iter().zip(results) {
                        writeln!(out, "# {user}\t{slot}")?;
                        match res {
                            Ok(rec) => {
                                for (i, v) in rec.venues.iter().enumerate() {
                                    writeln!(out, "{}\t{}\t{}", i + 1, v.venue_id, v.score)?;
                                }
                            }
                            Err(e) => {
                                failed += 1;
                                writeln!(out, "# error: {e}")?;
                            }
                        }
                        writeln!(out)?;
                    }
                    if failed > 0 {
                        eprintln!("{failed} of {} queries failed", qs.len());
                    }
                }
            }
            Ok(())
        }
        Command::Zones {
            common,
            models,
            polygons,
            k,
            mode,
            filter,
            ground_truth,
            geojson,
            composition,
        } => {
            let mut ctx = Ctx::new(&common)?;
            if let Some(k) = k {
                ctx.cfg.kmeans.k = k;
            }
            let path = required(polygons.as_deref(), &ctx.cfg.paths.polygons, "polygon file", "polygons")?;
            let map = ctx.map(&path)?;
            let cs = ctx.cleaned(&common)?;
            let profiles = match ground_truth {
                Some(alt) => {
                    let kept: Vec<CheckIn> = cs
                        .iter()
                        .filter(|c| filter.admits(c.timeslot(&ctx.clock)))
                        .cloned()
                        .collect();
                    ground_truth_profiles(&kept, &map, alt, &ctx.hierarchy, &ctx.clock, false).1
                }
                None => {
                    let spaces = ctx.spaces(&models, mode)?;
                    let vectors = spaces.embed(mode, ctx.clock, &cs)?;
                    neighborhood_profiles(&vectors, &map, false, filter)
                }
            };
            let (ids, clustering) = cluster_profiles(&profiles, &ctx.cfg.kmeans)?;
            let points: Vec<Vec<f64>> = profiles.iter().map(|p| p.vector.clone()).collect();
            eprintln!("neighborhoods\t{}", ids.len());
            eprintln!("k\t{}", clustering.k);
            eprintln!("inertia\t{}", clustering.inertia);
            if clustering.k >= 2 {
                eprintln!("si\t{}", silhouette(&points, &clustering.labels)?);
            }
            let mut out = io::stdout().lock();
            for (id, l) in ids.iter().zip(&clustering.labels) {
                writeln!(out, "{id}\t{l}")?;
            }
            if let Some(p) = geojson {
                let key = &ctx.cfg.paths.polygon_id_key;
                write_atomic(&p, |w| write_zones_geojson(w, &map, key, &ids, &clustering.labels))?;
            }
            if let Some(p) = composition {
                let comp = cluster_composition(&ids, &clustering.labels, &cs, &map, &ctx.hierarchy)?;
                write_atomic(&p, |w| comp.write_tsv(w))?;
            }
            Ok(())
        }
        Command::Crime {
            common,
            polygons,
            crimes,
            offense,
            mode,
            test_months,
            report,
        } => {
            let ctx = Ctx::new(&common)?;
            let map_path = required(polygons.as_deref(), &ctx.cfg.paths.polygons, "polygon file", "polygons")?;
            let crime_path = required(crimes.as_deref(), &ctx.cfg.paths.crimes, "crime file", "crimes")?;
            let data = Dataset {
                checkins: ctx.raw(&common)?,
                map: Some(ctx.map(&map_path)?),
                crimes: Some(read_crimes(open(&crime_path)?, &ctx.clock)?),
                hierarchy: ctx.hierarchy.clone(),
                clock: ctx.clock,
                zone_truth: None,
            };
            let cfg = ExperimentConfig {
                pipeline: Pipeline::Crime,
                min_posts: ctx.cfg.min_posts,
                profile_mode: mode,
                test_months,
                offense,
                train: ctx.cfg.train.clone(),
                forest: ctx.cfg.forest.clone(),
                thresholds: ctx.cfg.thresholds,
                ..ExperimentConfig::default()
            };
            let rep = run_experiment(&cfg, &data, None)?;
            write_report(&rep, &report)
        }
        Command::Correlate {
            common,
            models,
            segments,
            heatmap,
            axis,
        } => {
            let ctx = Ctx::new(&common)?;
            let cs = ctx.cleaned(&common)?;
            let path = ctx
                .cfg
                .model_path(models.location_model.as_deref(), "location")
                .context("no location model given (use --location-model or paths.models)")?;
            let space = load_model(&path)?;
            let mut coords = HashMap::new();
            for c in &cs {
                coords.entry(c.venue_id.clone()).or_insert(c.coords());
            }
            let (rep, pairs) = distance_correlation(&space, &coords, &ctx.cfg.pairs)?;
            let mut out = io::stdout().lock();
            writeln!(out, "near_km\t{}", rep.near_km)?;
            writeln!(out, "sampled\t{}", rep.sampled)?;
            writeln!(out, "euclidean_range\t{}\t{}", rep.euclidean_range.0, rep.euclidean_range.1)?;
            for (scope, s) in [("all", &rep.all), ("near", &rep.near)] {
                writeln!(out, "{scope}.pairs\t{}", s.n)?;
                for (series, c) in [("cosine", &s.cosine), ("euclidean", &s.euclidean)] {
                    for (name, v) in [("pearson", c.pearson), ("spearman", c.spearman)] {
                        if let Some((r, p)) = v {
                            writeln!(out, "{scope}.{series}.{name}\t{r}\t{p}")?;
                        }
                    }
                }
            }
            if let Some(p) = segments {
                let segs = pair_segments(&pairs, ctx.cfg.pairs.segment);
                write_atomic(&p, |w| {
                    writeln!(w, "pairs\tgeo_km\tcosine\teuclidean")?;
                    for s in &segs {
                        writeln!(w, "{}\t{}\t{}\t{}", s.n, s.geo_km, s.cosine, s.euclidean)?;
                    }
                    Ok(())
                })?;
            }
            if let Some(p) = heatmap {
                let fpath = ctx
                    .cfg
                    .model_path(models.feature_model.as_deref(), "feature")
                    .context("the heatmap needs a feature model (use --feature-model or paths.models)")?;
                let h = heatmap_stats(&load_model(&fpath)?, axis, &ctx.cfg.pairs)?;
                write_atomic(&p, |w| h.write_tsv(w, true))?;
            }
            Ok(())
        }
        Command::Generate {
            config,
            seed,
            out,
            polygons,
            crimes,
            hierarchy,
            zones,
        } => {
            let mut cfg: SynthConfig = match &config {
                Some(p) => toml::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let world = generate(&cfg)?;
            write_atomic(&out, |w| write_checkins(w, &world.checkins))?;
            if let Some(p) = polygons {
                write_atomic(&p, |w| world.map.write_geojson(w, "GEOID", |_| Default::default()))?;
            }
            if let Some(p) = crimes {
                write_atomic(&p, |w| stembed::crime::write_crimes(w, &world.crimes))?;
            }
            if let Some(p) = hierarchy {
                write_atomic(&p, |w| world.hierarchy.write(w))?;
            }
            if let Some(p) = zones {
                write_atomic(&p, |w| {
                    for (r, &z) in world.map.regions().iter().zip(&world.zones) {
                        writeln!(w, "{}\t{}", r.id, ZONES[z].0)?;
                    }
                    Ok(())
                })?;
            }
            eprintln!(
                "{} check-ins, {} venues, {} users, {} crimes",
                world.checkins.len(),
                world.venues.len(),
                world.users.len(),
                world.crimes.len()
            );
            Ok(())
        }
        Command::Experiment {
            config,
            seed,
            pipeline,
            checkins,
            polygons,
            crimes,
            hierarchy,
            time_zone,
            polygon_id_key,
            transfer_from,
            report,
        } => {
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::from_toml(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            if let Some(p) = pipeline {
                cfg.pipeline = p;
            }
            let clock: Clock = time_zone.parse()?;
            let hierarchy = match &hierarchy {
                Some(p) => CategoryHierarchy::read(open(p)?)?,
                None => CategoryHierarchy::new(),
            };
            let source = match &transfer_from {
                Some(p) => {
                    let data = Dataset {
                        checkins: read_checkins(open(p)?, &clock)?,
                        hierarchy: hierarchy.clone(),
                        clock,
                        ..Dataset::default()
                    };
                    Some(source_feature_space(&cfg, &data)?)
                }
                None => None,
            };
            let rep = match checkins {
                Some(p) => {
                    let data = Dataset {
                        checkins: read_checkins(open(&p)?, &clock)?,
                        map: match &polygons {
                            Some(m) => Some(NeighborhoodMap::read_geojson(open(m)?, &polygon_id_key)?),
                            None => None,
                        },
                        crimes: match &crimes {
                            Some(c) => Some(read_crimes(open(c)?, &clock)?),
                            None => None,
                        },
                        hierarchy,
                        clock,
                        zone_truth: None,
                    };
                    run_experiment(&cfg, &data, source.as_ref())?
                }
                None if source.is_some() => {
                    let world = generate(&cfg.synth)?;
                    run_experiment(&cfg, &Dataset::from_world(world), source.as_ref())?
                }
                None => run_synthetic(&cfg)?,
            };
            write_report(&rep, &report)
        }
    }
}

/// Resolved config plus the inputs every data command shares.
struct Ctx {
    cfg: AppConfig,
    clock: Clock,
    hierarchy: CategoryHierarchy,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = AppConfig::load(common.config.as_deref())?;
        cfg.apply(common.seed, common.workers, common.time_zone.as_deref());
        if let Some(m) = common.min_posts {
            cfg.min_posts = m;
        }
        let clock = cfg.clock()?;
        let hierarchy = match common.hierarchy.clone().or_else(|| cfg.paths.hierarchy.clone()) {
            Some(p) => CategoryHierarchy::read(open(&p)?)?,
            None => CategoryHierarchy::new(),
        };
        Ok(Ctx { cfg, clock, hierarchy })
    }

    fn raw(&self, common: &Common) -> Result<Vec<CheckIn>> {
        let path = required(common.checkins.as_deref(), &self.cfg.paths.checkins, "check-in file", "checkins")?;
        read_checkins(open(&path)?, &self.clock).with_context(|| format!("reading {}", path.display()))
    }

    fn cleaned(&self, common: &Common) -> Result<Vec<CheckIn>> {
        let raw = self.raw(common)?;
        let (cs, rep) = preprocess(
            &raw,
            &PreprocessConfig {
                min_posts: self.cfg.min_posts,
                ..Default::default()
            },
        );
        eprintln!(
            "check-ins: {} read, {} repeats and {} sparse removed, {} kept",
            rep.input, rep.repeats_removed, rep.sparse_removed, rep.output
        );
        if rep.is_empty_result() {
            bail!("no check-ins left after cleaning with min_posts = {}", self.cfg.min_posts);
        }
        Ok(cs)
    }

    fn map(&self, path: &Path) -> Result<NeighborhoodMap> {
        NeighborhoodMap::read_geojson(open(path)?, &self.cfg.paths.polygon_id_key)
            .with_context(|| format!("reading {}", path.display()))
    }

    fn spaces(&self, models: &Models, mode: CheckInVectorMode) -> Result<Spaces> {
        let get = |flag: &Option<PathBuf>, name: &str, needed: bool| -> Result<Option<EmbeddingSpace>> {
            if !needed {
                return Ok(None);
            }
            let path = self
                .cfg
                .model_path(flag.as_deref(), name)
                .with_context(|| format!("mode `{mode}` needs a {name} model (use --{name}-model or paths.models)"))?;
            Ok(Some(load_model(&path)?))
        };
        Ok(Spaces {
            feature: get(&models.feature_model, "feature", mode.needs_feature())?,
            location: get(&models.location_model, "location", mode.needs_location())?,
        })
    }
}

struct Spaces {
    feature: Option<EmbeddingSpace>,
    location: Option<EmbeddingSpace>,
}

impl Spaces {
    fn embed(&self, mode: CheckInVectorMode, clock: Clock, cs: &[CheckIn]) -> Result<Vec<CheckInVector>> {
        let e = CheckInEmbedder::new(self.feature.as_ref(), self.location.as_ref(), mode, clock)?;
        let (vectors, skipped) = e.embed_all(cs);
        if skipped > 0 {
            eprintln!("{skipped} check-ins skipped: words missing from the model");
        }
        if vectors.is_empty() {
            bail!("no check-in could be embedded with the given models");
        }
        Ok(vectors)
    }
}

fn ingest(common: &Common, out: &Path, vocab_dir: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(common)?;
    let cs = ctx.cleaned(common)?;
    write_atomic(out, |w| write_checkins(w, &cs))?;
    if let Some(dir) = vocab_dir {
        fs::create_dir_all(dir)?;
        let seqs = build_sequences(&cs, stembed::data::Grouping::User, None, &ctx.clock)?.sequences;
        for kind in [WordKind::Feature, WordKind::Location] {
            let v = Vocabulary::build(&seqs, kind)?;
            write_atomic(&dir.join(format!("{}.vocab", kind.as_str())), |w| v.write_tsv(w))?;
        }
    }
    Ok(())
}

fn read_queries(path: &Path) -> Result<Vec<(String, Timeslot)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((user, slot)) = line.split_once('\t') else {
            bail!("{}:{}: expected `user_id<TAB>timeslot`", path.display(), i + 1);
        };
        let slot: Timeslot = slot
            .trim()
            .parse()
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push((user.to_string(), slot));
    }
    Ok(out)
}

fn write_report(rep: &ExperimentReport, out: &ReportOut) -> Result<()> {
    match &out.report {
        Some(p) => write_atomic(p, |w| rep.write_text(w))?,
        None => rep.write_text(io::stdout().lock())?,
    }
    if let Some(p) = &out.metrics {
        write_atomic(p, |w| rep.write_metrics(w))?;
    }
    Ok(())
}

fn emit(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut err = None;
            write_atomic(p, |w| {
                f(w).map_err(|e| {
                    let msg = format!("{e:#}");
                    err = Some(e);
                    stembed::Error::Io(io::Error::other(msg))
                })
            })
            .or_else(|e| match err.take() {
                Some(inner) => Err(inner),
                None => Err(e.into()),
            })
        }
        None => f(&mut io::stdout().lock()),
    }
}

fn load_model(path: &Path) -> Result<EmbeddingSpace> {
    model_io::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}
