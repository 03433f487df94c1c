//! A synthetic city with planted, recoverable structure.
//!
//! Neighborhoods form a square grid. Each cell belongs to one of a few zone
//! types, and a zone type fixes the category mix of the venues placed in
//! it. Users have a home, per-timeslot category biases drawn around shared
//! priors, a taste for each kind of outing and a personal taste over
//! subcategories. Check-ins come in day outings: an outing has a zone type
//! and a district of that type near home, and each check-in in it picks a
//! time, a category from the slot bias reweighted by the zone's mix, and a
//! venue near the district (or a past venue of the same subcategory).
//! Monthly crime counts are Poisson with a log-linear intensity over each
//! neighborhood's observed activity mix.

use std::collections::HashMap;

use chrono::{Duration, FixedOffset, NaiveDate, TimeZone};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::crime::CrimeRecord;
use crate::data::{
    haversine_km, CategoryHierarchy, CheckIn, Neighborhood, NeighborhoodMap, Polygon, Timeslot,
    YearMonth,
};
use crate::error::{Error, Result};

/// Top-level categories and their subcategories.
pub const CATALOGUE: [(&str, [&str; 4]); 8] = [
    ("Residence", ["Home", "Apartment", "Residential Building", "Dormitory"]),
    ("Food", ["Coffee Shop", "Pizza Place", "Diner", "Sushi Restaurant"]),
    ("Shop", ["Grocery Store", "Clothing Store", "Mall", "Pharmacy"]),
    ("Office", ["Office", "Coworking Space", "Bank", "Government Building"]),
    ("Nightlife", ["Bar", "Nightclub", "Pub", "Lounge"]),
    ("Outdoors", ["Park", "Gym", "Playground", "Plaza"]),
    ("Education", ["University", "School", "Library", "Lecture Hall"]),
    ("Travel", ["Subway", "Bus Station", "Train Station", "Parking"]),
];

/// Zone types with their venue mixes over the catalogue's top levels.
pub const ZONES: [(&str, [f64; 8]); 4] = [
    ("residential", [0.55, 0.10, 0.10, 0.02, 0.03, 0.10, 0.05, 0.05]),
    ("business", [0.03, 0.20, 0.20, 0.40, 0.04, 0.03, 0.02, 0.08]),
    ("nightlife", [0.05, 0.30, 0.10, 0.05, 0.40, 0.04, 0.01, 0.05]),
    ("campus", [0.05, 0.10, 0.05, 0.05, 0.03, 0.35, 0.32, 0.05]),
];

/// How attractive each zone type is for homes.
const HOME_WEIGHT: [f64; 4] = [6.0, 0.5, 1.0, 1.5];

/// Mean share of outings spent in each zone type.
const OUTING_WEIGHT: [f64; 4] = [0.35, 0.3, 0.2, 0.15];

/// Default per-timeslot priors over the catalogue's top levels.
const SLOT_PRIORS: [[f64; 8]; 10] = [
    // Res   Food  Shop  Off   Night Out   Edu   Travel
    [0.10, 0.22, 0.03, 0.25, 0.01, 0.06, 0.13, 0.20], // Morning
    [0.03, 0.40, 0.12, 0.22, 0.02, 0.06, 0.10, 0.05], // Noon
    [0.04, 0.12, 0.18, 0.30, 0.03, 0.10, 0.15, 0.08], // Afternoon
    [0.20, 0.25, 0.12, 0.03, 0.22, 0.08, 0.02, 0.08], // Evening
    [0.45, 0.05, 0.02, 0.01, 0.40, 0.02, 0.01, 0.04], // Night
    [0.30, 0.20, 0.08, 0.02, 0.02, 0.25, 0.03, 0.10], // WeekendMorning
    [0.05, 0.35, 0.25, 0.02, 0.05, 0.20, 0.02, 0.06], // WeekendNoon
    [0.05, 0.15, 0.30, 0.02, 0.08, 0.30, 0.02, 0.08], // WeekendAfternoon
    [0.12, 0.30, 0.10, 0.01, 0.35, 0.05, 0.01, 0.06], // WeekendEvening
    [0.40, 0.04, 0.01, 0.01, 0.50, 0.01, 0.01, 0.02], // WeekendNight
];

/// Log-intensity weights per top-level category share.
const CRIME_WEIGHTS: [f64; 8] = [-3.0, 0.0, 1.0, 2.0, 6.0, -1.0, -1.0, 0.0];

/// Relative check-in frequency per hour of day.
const HOUR_WEIGHTS: [f64; 24] = [
    0.3, 0.2, 0.15, 0.1, 0.1, 0.2, 0.6, 1.0, 1.3, 1.2, 1.1, 1.3, 1.6, 1.4, 1.1, 1.0, 1.0, 1.1,
    1.4, 1.6, 1.5, 1.2, 0.9, 0.6,
];

const OFFENSES: [(&str, f64); 4] = [
    ("GRAND LARCENY", 0.35),
    ("ASSAULT", 0.25),
    ("BURGLARY", 0.2),
    ("ROBBERY", 0.2),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub users: usize,
    pub venues: usize,
    /// Top-level categories used, taken from the front of the catalogue.
    pub categories: usize,
    pub subcategories: usize,
    /// Neighborhood grid is `grid × grid` cells.
    pub grid: usize,
    pub cell_km: f64,
    pub zone_types: usize,
    /// Voronoi seeds per zone type when laying out districts.
    pub districts_per_zone: usize,
    pub months: usize,
    /// First month, `YYYY-MM`.
    pub start: String,
    pub checkins_per_month: usize,
    /// Mean number of check-ins a user makes on one active day.
    pub session_mean: f64,
    /// Distance scale of the venue-choice kernel.
    pub locality_km: f64,
    /// Exponent on how much more a venue attracts visitors when its
    /// category is typical of its zone; 0 disables the effect.
    pub agglomeration: f64,
    /// Standard deviation of venue positions around their cell center.
    pub dispersion_km: f64,
    /// Distance scale for picking the district of an outing from home.
    pub outing_km: f64,
    /// Exponent on the zone mix when it reweights the slot bias; 0 makes
    /// categories ignore where the outing goes.
    pub theme_strength: f64,
    /// Dirichlet concentration of user outing tastes around the shared
    /// weights.
    pub theme_concentration: f64,
    /// Probability of returning to a past venue of the chosen subcategory.
    pub revisit: f64,
    /// Dirichlet concentration of user slot preferences around the priors.
    pub preference_concentration: f64,
    /// Dirichlet concentration of user subcategory tastes.
    pub taste_concentration: f64,
    /// City center, `[lat, lon]`.
    pub center: [f64; 2],
    pub utc_offset_hours: i32,
    /// Rows are timeslots, columns top-level categories; `None` uses the
    /// built-in priors.
    pub slot_priors: Option<Vec<Vec<f64>>>,
    pub crime_base: f64,
    pub crime_weights: Option<Vec<f64>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            users: 500,
            venues: 1000,
            categories: 8,
            subcategories: 4,
            grid: 10,
            cell_km: 1.0,
            zone_types: 4,
            districts_per_zone: 3,
            months: 3,
            start: "2012-04".into(),
            checkins_per_month: 30,
            session_mean: 2.0,
            locality_km: 0.8,
            agglomeration: 2.0,
            dispersion_km: 0.3,
            outing_km: 1.0,
            theme_strength: 2.0,
            theme_concentration: 5.0,
            revisit: 0.4,
            preference_concentration: 5.0,
            taste_concentration: 0.3,
            center: [40.75, -73.98],
            utc_offset_hours: -4,
            slot_priors: None,
            crime_base: -0.7,
            crime_weights: None,
        }
    }
}

impl SynthConfig {
    pub fn start_month(&self) -> Result<YearMonth> {
        self.start
            .parse()
            .map_err(|_| Error::Config(format!("bad start month `{}`", self.start)))
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("users", self.users),
            ("venues", self.venues),
            ("categories", self.categories),
            ("subcategories", self.subcategories),
            ("grid", self.grid),
            ("zone_types", self.zone_types),
            ("districts_per_zone", self.districts_per_zone),
            ("months", self.months),
            ("checkins_per_month", self.checkins_per_month),
        ];
        for (name, n) in counts {
            if n < 1 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.categories > CATALOGUE.len() || self.subcategories > 4 {
            return Err(Error::Config(format!(
                "at most {} categories with 4 subcategories each",
                CATALOGUE.len()
            )));
        }
        if self.zone_types > ZONES.len() {
            return Err(Error::Config(format!("at most {} zone types", ZONES.len())));
        }
        let positive = [
            ("cell_km", self.cell_km),
            ("locality_km", self.locality_km),
            ("dispersion_km", self.dispersion_km),
            ("preference_concentration", self.preference_concentration),
            ("taste_concentration", self.taste_concentration),
            ("outing_km", self.outing_km),
            ("theme_concentration", self.theme_concentration),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("agglomeration", self.agglomeration), ("theme_strength", self.theme_strength)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        if !(self.session_mean >= 1.0 && self.session_mean.is_finite()) {
            return Err(Error::Config("session_mean must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.revisit) {
            return Err(Error::Config("revisit must be in [0, 1]".into()));
        }
        if let Some(p) = &self.slot_priors {
            if p.len() != 10 || p.iter().any(|r| r.len() != self.categories) {
                return Err(Error::Config(format!(
                    "slot_priors must be 10 rows of {} values",
                    self.categories
                )));
            }
            for r in p {
                if r.iter().any(|&x| x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                    return Err(Error::Config("each slot_priors row must sum to 1".into()));
                }
            }
        }
        if let Some(w) = &self.crime_weights {
            if w.len() != self.categories {
                return Err(Error::Config(format!(
                    "crime_weights needs {} values",
                    self.categories
                )));
            }
        }
        self.start_month()?;
        Ok(())
    }

    /// A second city for transfer experiments: same categories, priors and
    /// behavior, different seed, geography and population.
    pub fn second_city(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407),
            center: [self.center[0] + 1.0, self.center[1] - 1.5],
            ..self.clone()
        }
    }

    fn priors(&self) -> Vec<Vec<f64>> {
        match &self.slot_priors {
            Some(p) => p.clone(),
            None => SLOT_PRIORS
                .iter()
                .map(|r| normalized(&r[..self.categories]))
                .collect(),
        }
    }

    fn crime_weights(&self) -> Vec<f64> {
        self.crime_weights
            .clone()
            .unwrap_or_else(|| CRIME_WEIGHTS[..self.categories].to_vec())
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter().map(|x| x / s).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVenue {
    pub id: String,
    pub top: usize,
    pub sub: usize,
    pub category: String,
    pub coords: (f64, f64),
    pub neighborhood: usize,
    /// Relative pull of the venue, higher where its category is typical of
    /// the surrounding zone.
    pub appeal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUser {
    pub id: String,
    pub home: (f64, f64),
    /// Planted top-level category distribution per timeslot, averaged over
    /// the kinds of outing the user takes.
    pub preferences: Vec<Vec<f64>>,
    /// Category bias per timeslot before the outing's zone reweights it.
    pub slot_bias: Vec<Vec<f64>>,
    /// Probability of each zone type for an outing.
    pub outings: Vec<f64>,
    /// Planted subcategory distribution per top-level category.
    pub tastes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub checkins: Vec<CheckIn>,
    pub crimes: Vec<CrimeRecord>,
    pub map: NeighborhoodMap,
    /// Planted zone type per neighborhood, in map order.
    pub zones: Vec<usize>,
    pub venues: Vec<SynthVenue>,
    pub users: Vec<SynthUser>,
    pub hierarchy: CategoryHierarchy,
}

impl World {
    /// Planted zone type by neighborhood id.
    pub fn zone_truth(&self) -> HashMap<String, usize> {
        self.map
            .regions()
            .iter()
            .zip(&self.zones)
            .map(|(r, &z)| (r.id.clone(), z))
            .collect()
    }

    pub fn top_level_names(&self) -> Vec<&'static str> {
        CATALOGUE.iter().map(|c| c.0).collect()
    }
}

struct Frame {
    origin: (f64, f64),
    dlat: f64,
    dlon: f64,
}

impl Frame {
    fn new(cfg: &SynthConfig) -> Self {
        let [lat0, lon0] = cfg.center;
        let dlat = 1.0 / 111.32;
        let dlon = 1.0 / (111.32 * lat0.to_radians().cos());
        let half = cfg.grid as f64 * cfg.cell_km / 2.0;
        Frame {
            origin: (lat0 - half * dlat, lon0 - half * dlon),
            dlat,
            dlon,
        }
    }

    /// Degrees of a point given in km east/north of the origin.
    fn point(&self, x_km: f64, y_km: f64) -> (f64, f64) {
        (self.origin.0 + y_km * self.dlat, self.origin.1 + x_km * self.dlon)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn dirichlet(alpha: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    if alpha.len() == 1 {
        return vec![1.0];
    }
    let a: Vec<f64> = alpha.iter().map(|&x| x.max(1e-3)).collect();
    Dirichlet::new(&a).expect("valid alphas").sample(rng)
}

fn pick(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    WeightedIndex::new(weights).map_or(0, |w| w.sample(rng))
}

/// Generates the whole world. The same config always yields the same world.
pub fn generate(cfg: &SynthConfig) -> Result<World> {
    cfg.validate()?;
    let frame = Frame::new(cfg);
    let g = cfg.grid;
    let cells = g * g;
    let cell_center = |c: usize| ((c % g) as f64 + 0.5, (c / g) as f64 + 0.5);

    // districts: Voronoi over random seeds, each seed carrying a zone type
    let mut layout = rng_for(cfg.seed, 1);
    let seeds: Vec<((f64, f64), usize)> = (0..cfg.zone_types * cfg.districts_per_zone)
        .map(|i| {
            let p = (layout.gen::<f64>() * g as f64, layout.gen::<f64>() * g as f64);
            (p, i % cfg.zone_types)
        })
        .collect();
    let zones: Vec<usize> = (0..cells)
        .map(|c| {
            let (x, y) = cell_center(c);
            seeds
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 .0 - x).powi(2) + (a.0 .1 - y).powi(2);
                    let db = (b.0 .0 - x).powi(2) + (b.0 .1 - y).powi(2);
                    da.total_cmp(&db)
                })
                .expect("at least one seed")
                .1
        })
        .collect();
    let mixes: Vec<Vec<f64>> = ZONES[..cfg.zone_types]
        .iter()
        .map(|z| normalized(&z.1[..cfg.categories]))
        .collect();

    let regions: Vec<Neighborhood> = (0..cells)
        .map(|c| {
            let (col, row) = (c % g, c / g);
            let lo = frame.point(col as f64 * cfg.cell_km, row as f64 * cfg.cell_km);
            let hi = frame.point((col + 1) as f64 * cfg.cell_km, (row + 1) as f64 * cfg.cell_km);
            Neighborhood {
                id: format!("n{row:02}-{col:02}"),
                polygons: vec![Polygon::rect(lo.0, lo.1, hi.0, hi.1)],
            }
        })
        .collect();
    let map = NeighborhoodMap::new(regions)?;

    let mut hierarchy = CategoryHierarchy::new();
    for (top, subs) in &CATALOGUE[..cfg.categories] {
        for s in &subs[..cfg.subcategories] {
            hierarchy.insert(*s, *top);
        }
    }

    // venues: the first ones cover every subcategory so no choice can fail
    let mut vrng = rng_for(cfg.seed, 2);
    let jitter = Normal::new(0.0, cfg.dispersion_km).expect("positive dispersion");
    let n_sub = cfg.categories * cfg.subcategories;
    let width = cfg.venues.to_string().len().max(4);
    let mut venues = Vec::with_capacity(cfg.venues);
    for i in 0..cfg.venues {
        let (cell, top, sub) = if i < n_sub {
            let (top, sub) = (i / cfg.subcategories, i % cfg.subcategories);
            let w: Vec<f64> = (0..cells).map(|c| mixes[zones[c]][top]).collect();
            (pick(&w, &mut vrng), top, sub)
        } else {
            let cell = vrng.gen_range(0..cells);
            let top = pick(&mixes[zones[cell]], &mut vrng);
            (cell, top, vrng.gen_range(0..cfg.subcategories))
        };
        let (cx, cy) = cell_center(cell);
        let inset = 0.02 * cfg.cell_km;
        let clamp = |v: f64, c: f64| {
            v.clamp((c - 0.5) * cfg.cell_km + inset, (c + 0.5) * cfg.cell_km - inset)
        };
        let x = clamp(cx * cfg.cell_km + jitter.sample(&mut vrng), cx);
        let y = clamp(cy * cfg.cell_km + jitter.sample(&mut vrng), cy);
        venues.push(SynthVenue {
            id: format!("v{i:0width$}"),
            top,
            sub,
            category: CATALOGUE[top].1[sub].to_string(),
            coords: frame.point(x, y),
            neighborhood: cell,
            appeal: {
                let mean = mixes.iter().map(|m| m[top]).sum::<f64>() / mixes.len() as f64;
                (mixes[zones[cell]][top] / mean).powf(cfg.agglomeration)
            },
        });
    }
    if cfg.venues < n_sub {
        return Err(Error::Generation(format!(
            "{} venues cannot cover {} subcategories",
            cfg.venues, n_sub
        )));
    }
    let mut by_sub: Vec<Vec<usize>> = vec![Vec::new(); n_sub];
    for (i, v) in venues.iter().enumerate() {
        by_sub[v.top * cfg.subcategories + v.sub].push(i);
    }

    // users
    let priors = cfg.priors();
    let mut urng = rng_for(cfg.seed, 3);
    let home_w: Vec<f64> = zones.iter().map(|&z| HOME_WEIGHT[z]).collect();
    let outing_w: Vec<f64> = (0..cfg.zone_types)
        .map(|z| if zones.contains(&z) { OUTING_WEIGHT[z] } else { 0.0 })
        .collect();
    let outing_w = normalized(&outing_w);
    let uwidth = cfg.users.to_string().len().max(4);
    let users: Vec<SynthUser> = (0..cfg.users)
        .map(|i| {
            let c = pick(&home_w, &mut urng);
            let (cx, cy) = cell_center(c);
            let x = (cx - 0.5 + urng.gen::<f64>()) * cfg.cell_km;
            let y = (cy - 0.5 + urng.gen::<f64>()) * cfg.cell_km;
            let home = frame.point(x, y);
            let slot_bias: Vec<Vec<f64>> = priors
                .iter()
                .map(|p| {
                    let a: Vec<f64> = p.iter().map(|x| x * cfg.preference_concentration).collect();
                    dirichlet(&a, &mut urng)
                })
                .collect();
            let a: Vec<f64> = outing_w.iter().map(|w| w * cfg.theme_concentration).collect();
            let mut outings = dirichlet(&a, &mut urng);
            for (o, w) in outings.iter_mut().zip(&outing_w) {
                if *w == 0.0 {
                    *o = 0.0;
                }
            }
            let outings = normalized(&outings);
            let preferences = slot_bias
                .iter()
                .map(|b| {
                    let mut m = vec![0.0; cfg.categories];
                    for (z, &q) in outings.iter().enumerate() {
                        for (mi, x) in m.iter_mut().zip(outing_categories(b, &mixes[z], cfg.theme_strength)) {
                            *mi += q * x;
                        }
                    }
                    m
                })
                .collect();
            let tastes = (0..cfg.categories)
                .map(|_| dirichlet(&vec![cfg.taste_concentration; cfg.subcategories], &mut urng))
                .collect();
            SynthUser {
                id: format!("u{i:0uwidth$}"),
                home,
                preferences,
                slot_bias,
                outings,
                tastes,
            }
        })
        .collect();

    let offset = FixedOffset::east_opt(cfg.utc_offset_hours * 3600)
        .ok_or_else(|| Error::Config("utc offset out of range".into()))?;
    let start = cfg.start_month()?;
    let months: Vec<YearMonth> = std::iter::successors(Some(start), |m| Some(m.next()))
        .take(cfg.months)
        .collect();

    let centers: Vec<(f64, f64)> = (0..cells)
        .map(|c| {
            let (x, y) = cell_center(c);
            frame.point(x * cfg.cell_km, y * cfg.cell_km)
        })
        .collect();
    let city = City {
        zones: &zones,
        mixes: &mixes,
        centers: &centers,
        venues: &venues,
        by_sub: &by_sub,
    };
    let checkins = simulate_checkins(cfg, &city, &users, &months, offset);
    let crimes = simulate_crimes(cfg, &checkins, &map, &hierarchy, &months, offset, &frame)?;
    Ok(World {
        checkins,
        crimes,
        map,
        zones,
        venues,
        users,
        hierarchy,
    })
}

fn random_time(
    month: YearMonth,
    day: u32,
    offset: FixedOffset,
    rng: &mut ChaCha8Rng,
    hours: &WeightedIndex<f64>,
) -> chrono::DateTime<FixedOffset> {
    let secs = hours.sample(rng) as i64 * 3600 + rng.gen_range(0..3600);
    let naive = NaiveDate::from_ymd_opt(month.year, month.month, 1)
        .expect("valid month")
        .and_hms_opt(0, 0, 0)
        .expect("midnight")
        + Duration::days(day as i64)
        + Duration::seconds(secs);
    offset
        .from_local_datetime(&naive)
        .single()
        .expect("fixed offsets are unambiguous")
}

/// Category distribution of one check-in given the slot bias and the zone
/// mix of the outing.
fn outing_categories(bias: &[f64], mix: &[f64], strength: f64) -> Vec<f64> {
    let w: Vec<f64> = bias.iter().zip(mix).map(|(b, m)| b * m.powf(strength)).collect();
    normalized(&w)
}

struct City<'a> {
    zones: &'a [usize],
    mixes: &'a [Vec<f64>],
    centers: &'a [(f64, f64)],
    venues: &'a [SynthVenue],
    by_sub: &'a [Vec<usize>],
}

fn simulate_checkins(
    cfg: &SynthConfig,
    city: &City,
    users: &[SynthUser],
    months: &[YearMonth],
    offset: FixedOffset,
) -> Vec<CheckIn> {
    let hours = WeightedIndex::new(HOUR_WEIGHTS).expect("valid hour weights");
    let venues = city.venues;
    let mut out = Vec::with_capacity(users.len() * months.len() * cfg.checkins_per_month);
    for (ui, u) in users.iter().enumerate() {
        let mut rng = rng_for(cfg.seed, 1000 + ui as u64);
        // district weights per zone type, by distance from home
        let districts: Vec<Vec<f64>> = (0..cfg.zone_types)
            .map(|z| {
                city.centers
                    .iter()
                    .zip(city.zones)
                    .map(|(&c, &cz)| {
                        if cz == z {
                            (-haversine_km(u.home, c) / cfg.outing_km).exp().max(1e-300)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let mut plan = Vec::with_capacity(months.len() * cfg.checkins_per_month);
        for &m in months {
            let mut left = cfg.checkins_per_month;
            while left > 0 {
                let extra = if cfg.session_mean > 1.0 {
                    Poisson::new(cfg.session_mean - 1.0).expect("positive mean").sample(&mut rng) as usize
                } else {
                    0
                };
                let size = (1 + extra).min(left);
                left -= size;
                let day = rng.gen_range(0..m.days());
                let zone = pick(&u.outings, &mut rng);
                let cell = pick(&districts[zone], &mut rng);
                for _ in 0..size {
                    plan.push((random_time(m, day, offset, &mut rng, &hours), zone, cell));
                }
            }
        }
        plan.sort_by_key(|p| p.0);
        let mut history: Vec<Vec<usize>> = vec![Vec::new(); city.by_sub.len()];
        for (t, zone, cell) in plan {
            let slot = Timeslot::from_local(&t.naive_local());
            let cats = outing_categories(&u.slot_bias[slot.index()], &city.mixes[zone], cfg.theme_strength);
            let top = pick(&cats, &mut rng);
            let sub = pick(&u.tastes[top], &mut rng);
            let key = top * cfg.subcategories + sub;
            let past = &history[key];
            let anchor = city.centers[cell];
            let v = if !past.is_empty() && rng.gen::<f64>() < cfg.revisit {
                // favorites close to where the outing goes come back more
                let w: Vec<f64> = past
                    .iter()
                    .map(|&i| (-haversine_km(anchor, venues[i].coords) / cfg.locality_km).exp())
                    .collect();
                past[pick(&w, &mut rng)]
            } else {
                let options = &city.by_sub[key];
                let w: Vec<f64> = options
                    .iter()
                    .map(|&i| {
                        venues[i].appeal * (-haversine_km(anchor, venues[i].coords) / cfg.locality_km).exp()
                    })
                    .collect();
                let j = if w.iter().sum::<f64>() > 0.0 {
                    pick(&w, &mut rng)
                } else {
                    rng.gen_range(0..w.len())
                };
                options[j]
            };
            history[key].push(v);
            let venue = &venues[v];
            out.push(CheckIn {
                user_id: u.id.clone(),
                venue_id: venue.id.clone(),
                category: venue.category.clone(),
                timestamp: t,
                lat: venue.coords.0,
                lon: venue.coords.1,
            });
        }
    }
    out
}

fn simulate_crimes(
    cfg: &SynthConfig,
    checkins: &[CheckIn],
    map: &NeighborhoodMap,
    hierarchy: &CategoryHierarchy,
    months: &[YearMonth],
    offset: FixedOffset,
    frame: &Frame,
) -> Result<Vec<CrimeRecord>> {
    let tops: Vec<&str> = CATALOGUE[..cfg.categories].iter().map(|c| c.0).collect();
    let weights = cfg.crime_weights();
    let cells = map.len();
    let month_index: HashMap<YearMonth, usize> = months.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    let mut mix = vec![vec![vec![0.0; cfg.categories]; months.len()]; cells];
    for c in checkins {
        let Some(n) = map.locate(c.lat, c.lon) else {
            continue;
        };
        let m = YearMonth::of(&c.timestamp.naive_local());
        let top = hierarchy.top_level(&c.category);
        let t = tops.iter().position(|&x| x == top).expect("catalogue category");
        mix[n][month_index[&m]][t] += 1.0;
    }
    let hours = WeightedIndex::new(HOUR_WEIGHTS).expect("valid hour weights");
    let offense_w = WeightedIndex::new(OFFENSES.iter().map(|o| o.1)).expect("valid offense weights");
    let mut rng = rng_for(cfg.seed, 4);
    let mut out = Vec::new();
    let g = cfg.grid;
    for (n, per_month) in mix.iter().enumerate() {
        for (mi, counts) in per_month.iter().enumerate() {
            let shares = normalized(counts);
            let total: f64 = counts.iter().sum();
            let log_lambda = cfg.crime_base
                + if total > 0.0 {
                    shares.iter().zip(&weights).map(|(s, w)| s * w).sum::<f64>()
                } else {
                    0.0
                };
            let lambda = log_lambda.exp();
            let k = Poisson::new(lambda)
                .map_err(|e| Error::Generation(format!("crime intensity {lambda}: {e}")))?
                .sample(&mut rng) as usize;
            let (col, row) = (n % g, n / g);
            for _ in 0..k {
                let x = (col as f64 + rng.gen::<f64>()) * cfg.cell_km;
                let y = (row as f64 + rng.gen::<f64>()) * cfg.cell_km;
                let (lat, lon) = frame.point(x, y);
                out.push(CrimeRecord {
                    timestamp: {
                        let day = rng.gen_range(0..months[mi].days());
                        random_time(months[mi], day, offset, &mut rng, &hours)
                    },
                    lat,
                    lon,
                    offense: OFFENSES[offense_w.sample(&mut rng)].0.to_string(),
                });
            }
        }
    }
    out.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.lat.total_cmp(&b.lat)));
    Ok(out)
}
