//! Seeded synthetic datasets with planted properties, batch schedules and
//! vocabulary restriction.

mod generate;
mod io;
mod schedule;

pub use generate::{feasible_correlation, generate, SynthMode, SynthSpec};
pub use io::{decode_records, encode_records, read_datasets, sha256_hex, write_datasets, DatasetManifest, ParticipantEntry};
pub use schedule::{
    partition_batches, property_quota, restrict_vocab, schedule_batches, split_into, BatchSchedule, CyclicSampler,
    VocabFilter,
};
