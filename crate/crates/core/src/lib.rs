pub mod audiology;
pub mod config;
pub mod dsp;
pub mod enhancer;
pub mod metrics;
pub mod error;
pub mod harness;
pub mod prescription;
pub mod scene;
pub mod stats;
pub mod synth;
