//! Signal preprocessing: band-pass filtering, resampling, scaling, epoching
//! and sequence packing.

pub mod filter;
pub mod prep;
pub mod resample;

pub use filter::{bandpass, butter_bandpass, sosfiltfilt, Biquad};
pub use prep::{
    epochize, map_label, pack_sequences, preprocess, scale_epoch, standard_scale, Annotation, Channel, EpochRecord,
    EpochReport, MappedLabel, PrepConfig, Recording, ScaleMode, WakePolicy, EPOCH_SECONDS, TARGET_RATE,
};
pub use resample::resample;
