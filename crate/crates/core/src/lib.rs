//! Detecting whether an encrypted FPV video stream is filming a given target.
//!
//! A physical stimulus in the scene (a flickering film, an LED strip) is
//! switched on and off according to a binary watermark. A VBR encoder spends
//! more bytes on frames that change, so the watermark shows up in the
//! bitrate of the drone's traffic even though every payload is encrypted.
//! Only layer-2 metadata (timestamps, lengths and addresses) is needed.
//!
//! - [`trace`]: intercepted packet records and bitrate series
//! - [`sim`]: a calibrated traffic simulator with loss and padding
//! - [`watermark`]: patterns and on-off-keyed schedules
//! - [`detector`]: calibration, demodulation and the verdict
//! - [`eval`]: false-positive curves, detection rates and grid sweeps

pub mod detector;
pub mod eval;
pub mod sim;
pub mod trace;
pub mod watermark;

pub use detector::{under_detection, DetectError, DetectionConfig, DetectionResult};
pub use trace::{BitrateSeries, MacAddr, PacketRecord, PacketTrace};
pub use watermark::{StimulusSchedule, WatermarkPattern};

/// Derives an independent child seed (SplitMix64 finalizer over the pair).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
