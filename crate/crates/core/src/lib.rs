pub mod archive;
pub mod error;
pub mod metrics;
pub mod motionspace;
pub mod nn;
pub mod pairgan;
pub mod raster;
pub mod scalar;
pub mod sequencer;
pub mod synthvideo;

pub use error::{Error, Result};
pub use scalar::{Dual, Real};

pub type PairGenerator32 = pairgan::PairGenerator<f32>;
pub type PairGenerator64 = pairgan::PairGenerator<f64>;
pub type PairDiscriminator32 = pairgan::PairDiscriminator<f32>;
pub type Sequencer32 = sequencer::Sequencer<f32>;
pub type Sequencer64 = sequencer::Sequencer<f64>;
pub type CodeBook32 = sequencer::CodeBook<f32>;
pub type VideoDiscriminator32 = sequencer::VideoDiscriminator<f32>;
pub type VideoClip32 = synthvideo::VideoClip<f32>;
