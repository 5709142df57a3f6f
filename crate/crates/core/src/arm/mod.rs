//! Output side: wire frames, transports, the fixed-rate output loop and a
//! simulated arm that parses the same frames.

mod frame;
mod output;
mod sim;
mod transport;

pub use frame::{decode_frame, encode_frame, DecodedFrame, FrameDecoder, FrameError, WireFrame, MAX_LINE_LEN};
pub use output::{FrameTx, OutputLoop, OutputStats, OutputTicker, PoseSnapshot, SharedPose};
pub use sim::{ArmCounters, ArmEndpoint, ReceivedFrame, SimulatedArm};
pub use transport::{connect_tcp, loopback, LoopbackReader, LoopbackWriter, TransportConfig};
