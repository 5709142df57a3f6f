//! Respiration sample sources: live sensor datagrams, playback of
//! pre-recorded breathing, and a synthetic generator.
//!
//! All sources present the same pull interface, [`SampleSource`]. Playback
//! and synth run on the caller's clock; the datagram listener pushes into a
//! channel that [`ChannelSource`] drains.

mod packet;
mod playback;
mod recording;
mod synth;
mod udp;

pub use packet::{parse_packet, IngestCounters, PacketError, PacketSequencer};
pub use playback::{
    build_playback_plan, build_playback_plans, build_playback_plans_sequential, PlanError, PlanSegment, Playback,
    PlaybackPlan, PlaybackSource, LOOP_S, SEGMENT_COUNT, SEGMENT_S,
};
pub use recording::{load_pool, Recording, RecordingError};
pub use synth::{SynthBreath, SynthError, SynthSource, Waveform};
pub use udp::{ChannelSource, UdpIngest, DEFAULT_UDP_PORT};

use crate::signal::RespirationSample;

pub trait SampleSource: Send {
    /// Every sample available at `now_ms` (source clock) not yet returned.
    fn poll(&mut self, now_ms: u64) -> Vec<RespirationSample>;
}
