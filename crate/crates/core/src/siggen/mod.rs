//! Synthetic modulated signals: symbol mapping and pulse shaping, a
//! fading/CFO/SRO/AWGN channel, labeled dataset generation and the SIGF
//! on-disk format.

mod channel;
mod dataset;
mod scheme;
pub mod sigf;

pub use channel::{apply_channel, ChannelParams};
pub use dataset::{
    generate_dataset, ChannelRanges, Dataset, GenSpec, IqFrame, Labeled, Split, SplitRatios,
};
pub use scheme::{modulate, ModScheme, Pulse, SchemeKind};
