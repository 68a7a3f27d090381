//! Sample-level link simulator for multicarrier mobile communications.
//!
//! The crate is organized around the building blocks of a physical-layer
//! transmission chain:
//!
//! * [`coding`] — channel coding (convolutional, turbo, LDPC, polar) with CRC
//!   attachment, rate matching and soft-input decoding.
//! * [`modem`] — QAM mapping and max-log LLR demapping.
//! * [`waveform`] — multicarrier modulation (CP-OFDM, WOLA, UFMC, f-OFDM,
//!   FBMC-OQAM) under freely parameterizable numerology.
//! * [`channel`] — tapped-delay-line fading with Jakes/uniform Doppler, TWDP
//!   fading and Kronecker spatial correlation, applied per sample.
//! * [`mimo`] — layer mapping, codebook precoding, Alamouti diversity and
//!   ZF/MMSE/sphere/ML detection.
//! * [`feedback`] — CQI/PMI/RI link adaptation with a FIFO feedback delay.
//! * [`topology`] — nodes, meshed links, scheduling and power-domain
//!   superposition of multiple users.
//! * [`engine`] — Monte Carlo frame loop, sweeps and result aggregation.
//! * [`scenario`] — declarative scenario files driving the whole chain.

pub mod channel;
pub mod coding;
pub mod engine;
pub mod error;
pub mod feedback;
pub mod mimo;
pub mod modem;
pub mod output;
pub mod rng;
pub mod scenario;
pub mod topology;
pub mod waveform;

pub use error::{Error, Result};
