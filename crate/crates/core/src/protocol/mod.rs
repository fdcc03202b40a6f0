//! Multi-participant training simulators and the adversary's observation log.

mod defense;
mod log;
mod participant;
mod sim;

pub use defense::{apply_share_fraction, shared_count, DefenseConfig, Selection};
pub use log::{read_log, write_log, Protocol, RoundRecord, UpdateLog};
pub use participant::{validate_participants, Participant, Role};
pub use sim::{
    run_fed_avg, run_sync_sgd, AdversaryStrategy, AdversaryView, PassiveAdversary, SilentAdversary, SimConfig,
    SimOutput,
};
