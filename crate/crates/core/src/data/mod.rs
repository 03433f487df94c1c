//! Check-in ingestion, cleaning, time discretization and corpus building.

pub mod checkin;
pub mod geo;
pub mod preprocess;
pub mod sequence;
pub mod timeslot;
pub mod vocab;

pub use checkin::{
    feature_word, read_checkins, split_feature_word, write_checkins, CategoryHierarchy, CheckIn,
    Clock, YearMonth,
};
pub use geo::{haversine_km, Neighborhood, NeighborhoodMap, Polygon};
pub use preprocess::{preprocess, PreprocessConfig, PreprocessReport};
pub use sequence::{assign_neighborhoods, build_sequences, Grouping, SequenceSet, TokenSequence, WordKind};
pub use timeslot::Timeslot;
pub use vocab::Vocabulary;
