use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::process::{Command, Output};

use stembed::data::{build_sequences, preprocess, read_checkins, Clock, Grouping, PreprocessConfig, Timeslot, WordKind};
use stembed::embed::{train, TrainConfig};
use stembed::profiles::{CheckInEmbedder, CheckInVectorMode};
use stembed::stes::{Anchor, StesConfig, StesModel};
use tempfile::TempDir;

const SYNTH: &str = "users = 40\nvenues = 150\ngrid = 4\nmonths = 3\ncheckins_per_month = 15\n";

fn stembed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stembed"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = stembed(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A generated city in a fresh directory.
fn city() -> TempDir {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("synth.toml");
    fs::write(&cfg, SYNTH).unwrap();
    ok(&[
        "generate",
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("checkins.tsv")),
        "--polygons",
        p(&dir.path().join("polygons.geojson")),
        "--crimes",
        p(&dir.path().join("crimes.tsv")),
    ]);
    dir
}

fn train_model(dir: &Path, kind: &str, dim: &str) -> std::path::PathBuf {
    let out = dir.join(format!("{kind}.txt"));
    ok(&[
        "train",
        "--checkins",
        p(&dir.join("checkins.tsv")),
        "--min-posts",
        "2",
        "--kind",
        kind,
        "--dim",
        dim,
        "--epochs",
        "2",
        "--out",
        p(&out),
    ]);
    out
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = stembed(&[]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "{text}");
}

#[test]
fn unknown_subcommand_and_flag_exit_2() {
    assert_eq!(stembed(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(stembed(&["train", "--bogus"]).status.code(), Some(2));
}

#[test]
fn version_prints_fingerprint() {
    let v = ok(&["--version"]);
    assert!(v.starts_with("stembed "));
    assert!(v.contains("model format"));
}

#[test]
fn trained_model_header() {
    let dir = city();
    let model = train_model(dir.path(), "feature", "200");
    let text = fs::read_to_string(&model).unwrap();
    let header = text.lines().next().unwrap();
    let f: Vec<&str> = header.split(' ').collect();
    assert_eq!(f.len(), 3);
    assert!(f[0].parse::<usize>().unwrap() > 1);
    assert_eq!(&f[1..], ["200", "feature"]);
    assert!(Path::new(&format!("{}.bin", model.display())).exists());
}

#[test]
fn training_is_deterministic() {
    let dir = city();
    let a = fs::read(train_model(dir.path(), "location", "8")).unwrap();
    let b = fs::read(train_model(dir.path(), "location", "8")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn saved_models_recommend_like_in_memory_ones() {
    let dir = city();
    let fm = train_model(dir.path(), "feature", "16");
    let lm = train_model(dir.path(), "location", "16");
    let cli = ok(&[
        "recommend",
        "--checkins",
        p(&dir.path().join("checkins.tsv")),
        "--min-posts",
        "2",
        "--feature-model",
        p(&fm),
        "--location-model",
        p(&lm),
        "--user",
        "u0003",
        "--slot",
        "Evening",
        "--k",
        "10",
    ]);

    let file = fs::File::open(dir.path().join("checkins.tsv")).unwrap();
    let raw = read_checkins(BufReader::new(file), &Clock::Recorded).unwrap();
    let (cs, _) = preprocess(
        &raw,
        &PreprocessConfig {
            min_posts: 2,
            ..Default::default()
        },
    );
    let seqs = build_sequences(&cs, Grouping::User, None, &Clock::Recorded).unwrap().sequences;
    let cfg = TrainConfig {
        dim: 16,
        epochs: 2,
        ..Default::default()
    };
    let f = train(&seqs, WordKind::Feature, &cfg).unwrap().space;
    let l = train(&seqs, WordKind::Location, &cfg).unwrap().space;
    let e = CheckInEmbedder::new(Some(&f), Some(&l), CheckInVectorMode::Sum, Clock::Recorded).unwrap();
    let model = StesModel::build(&e.embed_all(&cs).0).unwrap();
    let rec = model
        .recommend("u0003", Timeslot::Evening, 10, &StesConfig::default(), Anchor::Centroid)
        .unwrap();
    let expected: Vec<String> = rec
        .venues
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{}\t{}\t{}", i + 1, v.venue_id, v.score))
        .collect();
    let got: Vec<&str> = cli.lines().collect();
    assert!(!got.is_empty());
    assert_eq!(got, expected);
}

#[test]
fn batch_queries_emit_one_block_each() {
    let dir = city();
    let fm = train_model(dir.path(), "feature", "8");
    let lm = train_model(dir.path(), "location", "8");
    let q = dir.path().join("queries.tsv");
    fs::write(&q, "u0001\tMorning\nnobody\tNight\nu0002\tWeekendNoon\n").unwrap();
    let out = ok(&[
        "recommend",
        "--checkins",
        p(&dir.path().join("checkins.tsv")),
        "--min-posts",
        "2",
        "--feature-model",
        p(&fm),
        "--location-model",
        p(&lm),
        "--queries",
        p(&q),
        "--k",
        "3",
    ]);
    let blocks: Vec<&str> = out.split("\n\n").filter(|b| !b.trim().is_empty()).collect();
    assert_eq!(blocks.len(), 3);
    assert!(blocks[0].starts_with("# u0001\tMorning\n1\t"));
    assert!(blocks[1].contains("# error:"));
    assert_eq!(blocks[2].lines().count(), 4);
}

#[test]
fn unknown_user_is_a_one_line_error() {
    let dir = city();
    let fm = train_model(dir.path(), "feature", "8");
    let lm = train_model(dir.path(), "location", "8");
    let out = stembed(&[
        "recommend",
        "--checkins",
        p(&dir.path().join("checkins.tsv")),
        "--min-posts",
        "2",
        "--feature-model",
        p(&fm),
        "--location-model",
        p(&lm),
        "--user",
        "nobody",
        "--slot",
        "Noon",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    let last = err.lines().last().unwrap();
    assert!(last.starts_with("error: ") && last.contains("nobody"), "{err}");
}

#[test]
fn missing_input_names_the_flag() {
    let out = stembed(&["ingest", "--out", "/tmp/never-written.tsv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkins"));
}

#[test]
fn config_file_paths_must_exist() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("app.toml");
    fs::write(&cfg, "[paths]\ncheckins = \"/definitely/not/here.tsv\"\n").unwrap();
    let out = stembed(&["ingest", "--config", p(&cfg), "--out", p(&dir.path().join("o.tsv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.checkins"));
}

#[test]
fn config_supplies_paths_and_flags_win() {
    let dir = city();
    let models = dir.path().join("models");
    let cfg = dir.path().join("app.toml");
    fs::write(
        &cfg,
        format!(
            "min_posts = 2\n[paths]\ncheckins = \"{}\"\nmodels = \"{}\"\n[train]\ndim = 12\nepochs = 1\n",
            dir.path().join("checkins.tsv").display(),
            models.display()
        ),
    )
    .unwrap();
    ok(&["train", "--config", p(&cfg), "--kind", "location", "--dim", "6"]);
    let text = fs::read_to_string(models.join("location.txt")).unwrap();
    assert!(text.lines().next().unwrap().ends_with(" 6 location"));
}

#[test]
fn ingest_is_a_fixed_point() {
    let dir = city();
    let once = dir.path().join("once.tsv");
    let twice = dir.path().join("twice.tsv");
    ok(&["ingest", "--checkins", p(&dir.path().join("checkins.tsv")), "--min-posts", "3", "--out", p(&once)]);
    ok(&["ingest", "--checkins", p(&once), "--min-posts", "3", "--out", p(&twice)]);
    assert_eq!(fs::read(&once).unwrap(), fs::read(&twice).unwrap());
}

#[test]
fn zones_and_crime_run_on_generated_files() {
    let dir = city();
    let fm = train_model(dir.path(), "feature", "8");
    let gj = dir.path().join("zones.geojson");
    let out = ok(&[
        "zones",
        "--checkins",
        p(&dir.path().join("checkins.tsv")),
        "--min-posts",
        "2",
        "--polygons",
        p(&dir.path().join("polygons.geojson")),
        "--feature-model",
        p(&fm),
        "--mode",
        "feature_only",
        "--geojson",
        p(&gj),
    ]);
    assert_eq!(out.lines().count(), 16);
    assert!(fs::read_to_string(&gj).unwrap().contains("\"cluster\""));

    let metrics = dir.path().join("crime.metrics");
    ok(&[
        "crime",
        "--checkins",
        p(&dir.path().join("checkins.tsv")),
        "--min-posts",
        "2",
        "--polygons",
        p(&dir.path().join("polygons.geojson")),
        "--crimes",
        p(&dir.path().join("crimes.tsv")),
        "--test-months",
        "1",
        "--metrics",
        p(&metrics),
    ]);
    let m = fs::read_to_string(&metrics).unwrap();
    assert!(m.contains("pipeline=crime"));
    assert!(m.contains("majority.accuracy="));
}

#[test]
fn experiment_metrics_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, format!("pipeline = \"zone\"\nmin_posts = 2\n[train]\ndim = 8\nepochs = 1\n[synth]\n{SYNTH}")).unwrap();
    let run = |name: &str| {
        let m = dir.path().join(name);
        ok(&["experiment", "--config", p(&cfg), "--metrics", p(&m), "--report", p(&dir.path().join("r.txt"))]);
        fs::read_to_string(m).unwrap()
    };
    let a = run("a.metrics");
    assert!(a.contains("embedding.ari="));
    assert_eq!(a, run("b.metrics"));
}
