//! Simulation and prediction toolkit for low-overhead mmWave beam alignment.
//!
//! The crate synthesizes time-varying geometric channels for a moving user,
//! drives a periodic alignment protocol that alternates between full beam
//! scanning and candidate-beam tracking, predicts the optimal beam at
//! arbitrary instants between pilot transmissions with an ODE-LSTM, and
//! compares that predictor against EKF, ARIMA and one-step LSTM baselines.
//!
//! Module map:
//!
//! * [`channel`] - ULA steering vectors, DFT codebook, gains, pilots.
//! * [`mobility`] - synthetic trajectories and channel traces, trace files.
//! * [`selection`] - candidate beam sets for tracking stages.
//! * [`nn`] - the small neural kernel used by the learned predictors.
//! * [`predictors`] - ODE-LSTM, one-step LSTM, EKF, ARIMA and oracle.
//! * [`protocol`] - the alignment controller and mode switching.
//! * [`harness`] - configuration, experiment commands and CSV metrics.

pub mod channel;
pub mod error;
pub mod harness;
pub mod mobility;
pub mod nn;
pub mod predictors;
pub mod protocol;
pub mod selection;

pub use channel::{ArrayConfig, ChannelSnapshot, Codebook, Path, PilotObservation};
pub use error::{Error, Result};
pub use mobility::{ChannelTrace, MobilityConfig, SceneConfig, Trajectory};
pub use protocol::{EpisodeLog, ProtocolConfig, StageLog};
pub use selection::{CandidateSet, DirectionEstimate, Strategy};

/// Random source used everywhere a draw is needed. Seeded explicitly so
/// every run is reproducible.
pub type RandomSource = rand_chacha::ChaCha8Rng;

/// Builds a [`RandomSource`] from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> RandomSource {
    use rand::SeedableRng;
    RandomSource::seed_from_u64(seed)
}
