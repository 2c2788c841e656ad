//! Data plumbing: the pose-sequence file format, window extraction,
//! synthetic motion generation, and model persistence.

mod checkpoint;
mod pseq;
mod synth;
mod window;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use pseq::{normalize_2d, PoseSequenceFile};
pub use synth::{synth_generate, SynthSpec};
pub use window::{input_batch, make_batch, make_input_windows, make_windows, Batch, PoseWindow};
