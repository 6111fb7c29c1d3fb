//! Simulator and passive multi-session attack for the AM-SUEO-DBLTKM
//! matrix-encryption RFID protocol.

pub mod attack;
pub mod config;
pub mod experiment;
pub mod formats;
pub mod grade;
pub mod modmath;
pub mod params;
pub mod primes;
pub mod protocol;
pub mod report;
pub mod simulator;
pub mod system;
