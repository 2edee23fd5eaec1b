//! Signal conditioning and the synthetic trial source.

mod filter;
mod pipeline;
pub mod synth;

pub use filter::{cheby1_lowpass, cheby1_order, design_cheby1, filtfilt, sosfilt, Biquad, FilterSpec, Sos};
pub use pipeline::{
    antialias_filter, apply_filter_zero_phase, decimate, segment_and_normalize, PreprocessConfig,
    Preprocessor, SegmentSample, STD_FLOOR,
};
pub use synth::{synth_trial, SubjectProfile, SynthConfig};

use crate::numcore::Tensor;

/// `[channels, samples]` time series.
pub type SignalTensor = Tensor<f32>;

/// One recorded (or synthesized) trial at the acquisition rate.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub subject: u32,
    pub target: usize,
    pub block: u32,
    pub signal: SignalTensor,
    pub stimulus_freq: f64,
}
