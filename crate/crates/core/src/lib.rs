//! Distributed speech separation over ad-hoc microphone arrays.
//!
//! Each device (node) in a simulated meeting room runs a mask-driven
//! multichannel Wiener filter on its own microphones, broadcasts the
//! single-channel result, and then filters its microphones together with
//! the signals received from every other node.
//!
//! * [`scene`]: room/table/talker sampling, image-source RIRs, rendering
//! * [`signal`]: STFT analysis and synthesis
//! * [`mask`]: oracle ratio masks, mask files, mask providers
//! * [`beamform`]: covariance estimation and the Wiener solve
//! * [`danse`]: the two-round node protocol
//! * [`eval`]: SI-SDR and aggregation

pub mod audio;
pub mod beamform;
pub mod danse;
pub mod error;
pub mod eval;
pub mod exec;
pub mod mask;
pub mod scene;
pub mod signal;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
