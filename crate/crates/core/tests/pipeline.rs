use std::io::Cursor;

use stembed::crime::{read_crimes, write_crimes};
use stembed::data::{
    build_sequences, preprocess, read_checkins, write_checkins, Clock, Grouping, NeighborhoodMap,
    PreprocessConfig, Timeslot, WordKind,
};
use stembed::embed::{train, TrainConfig};
use stembed::profiles::{
    location_profiles, neighborhood_profiles, read_profiles, write_profiles, CheckInEmbedder,
    CheckInVectorMode, ProfileRecord, SlotFilter,
};
use stembed::stes::{Anchor, StesConfig, StesModel};
use stembed::synth::{generate, run_experiment, Dataset, ExperimentConfig, Pipeline, SynthConfig};

fn small() -> SynthConfig {
    SynthConfig {
        users: 60,
        venues: 160,
        grid: 4,
        months: 3,
        checkins_per_month: 20,
        seed: 17,
        ..Default::default()
    }
}

#[test]
fn written_files_reproduce_the_in_memory_run() {
    let world = generate(&small()).unwrap();
    let clock = Clock::Recorded;

    let mut buf = Vec::new();
    write_checkins(&mut buf, &world.checkins).unwrap();
    let checkins = read_checkins(Cursor::new(buf), &clock).unwrap();
    assert_eq!(checkins, world.checkins);

    let mut buf = Vec::new();
    write_crimes(&mut buf, &world.crimes).unwrap();
    let crimes = read_crimes(Cursor::new(buf), &clock).unwrap();
    assert_eq!(crimes, world.crimes);

    let mut buf = Vec::new();
    world.map.write_geojson(&mut buf, "GEOID", |_| Default::default()).unwrap();
    let map = NeighborhoodMap::read_geojson(Cursor::new(buf), "GEOID").unwrap();

    let mut cfg = ExperimentConfig::default().with_seed(17);
    cfg.pipeline = Pipeline::Crime;
    cfg.min_posts = 2;
    cfg.train.dim = 12;
    cfg.train.epochs = 2;
    cfg.forest.trees = 30;
    let from_files = Dataset {
        checkins,
        map: Some(map),
        crimes: Some(crimes),
        hierarchy: world.hierarchy.clone(),
        clock,
        zone_truth: None,
    };
    let a = run_experiment(&cfg, &from_files, None).unwrap();
    let b = run_experiment(&cfg, &Dataset::from_world(world), None).unwrap();
    assert_eq!(a.methods, b.methods);
}

#[test]
fn profile_export_round_trips() {
    let world = generate(&small()).unwrap();
    let clock = Clock::Recorded;
    let seqs = build_sequences(&world.checkins, Grouping::User, None, &clock).unwrap().sequences;
    let cfg = TrainConfig { dim: 6, epochs: 1, ..Default::default() };
    let f = train(&seqs, WordKind::Feature, &cfg).unwrap().space;
    let e = CheckInEmbedder::new(Some(&f), None, CheckInVectorMode::FeatureOnly, clock).unwrap();
    let (vectors, _) = e.embed_all(&world.checkins);

    let mut records: Vec<ProfileRecord> = location_profiles(&vectors).iter().map(Into::into).collect();
    records.extend(
        neighborhood_profiles(&vectors, &world.map, true, SlotFilter::Night)
            .iter()
            .map(ProfileRecord::from),
    );
    let mut buf = Vec::new();
    write_profiles(&mut buf, &records).unwrap();
    assert_eq!(read_profiles(Cursor::new(buf)).unwrap(), records);
}

#[test]
fn cleaned_synthetic_data_gives_full_recommendation_lists() {
    let world = generate(&small()).unwrap();
    let clock = Clock::Recorded;
    let (cs, report) = preprocess(&world.checkins, &PreprocessConfig { min_posts: 5, ..Default::default() });
    assert!(report.output > 0 && report.output <= report.input);

    let seqs = build_sequences(&cs, Grouping::User, None, &clock).unwrap().sequences;
    let cfg = TrainConfig { dim: 10, epochs: 2, ..Default::default() };
    let f = train(&seqs, WordKind::Feature, &cfg).unwrap().space;
    let l = train(&seqs, WordKind::Location, &cfg).unwrap().space;
    let e = CheckInEmbedder::new(Some(&f), Some(&l), CheckInVectorMode::Sum, clock).unwrap();
    let (vectors, skipped) = e.embed_all(&cs);
    assert_eq!(skipped, 0);

    let model = StesModel::build(&vectors).unwrap();
    let stes = StesConfig::default();
    for user in model.users().take(10).map(String::from).collect::<Vec<_>>() {
        for slot in [Timeslot::Morning, Timeslot::WeekendNight] {
            let rec = model.recommend(&user, slot, 10, &stes, Anchor::Centroid).unwrap();
            assert!(!rec.venues.is_empty());
            assert!(rec.venues.len() <= 10);
            assert!(rec.venues.windows(2).all(|w| w[0].score >= w[1].score));
            let ids: std::collections::HashSet<_> = rec.venues.iter().map(|v| &v.venue_id).collect();
            assert_eq!(ids.len(), rec.venues.len());
        }
    }
}
