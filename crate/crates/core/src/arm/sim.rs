//! Software stand-in for the servo arm.

use std::io::Read;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::frame::{FrameDecoder, WireFrame};
use crate::motion::{JointId, JointLimits, JointVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceivedFrame {
    pub t_ms: f64,
    pub frame: WireFrame,
}

/// Servo emulation: each joint slews toward its last command at a bounded rate.
#[derive(Debug, Clone)]
pub struct SimulatedArm {
    pose: JointVector,
    slew_rate_deg_per_s: f64,
    limits: JointLimits,
    frame_log: Vec<ReceivedFrame>,
}

impl SimulatedArm {
    pub fn new(limits: JointLimits, slew_rate_deg_per_s: f64) -> Self {
        Self {
            pose: limits.neutral(),
            slew_rate_deg_per_s,
            limits,
            frame_log: Vec::new(),
        }
    }

    pub fn pose(&self) -> JointVector {
        self.pose
    }

    pub fn frame_log(&self) -> &[ReceivedFrame] {
        &self.frame_log
    }

    pub fn record(&mut self, t_ms: f64, frame: WireFrame) {
        self.frame_log.push(ReceivedFrame { t_ms, frame });
    }

    /// Moves every joint at most `slew_rate * dt` toward the command.
    pub fn step(&mut self, command: &WireFrame, dt_s: f64) -> JointVector {
        let max_step = (self.slew_rate_deg_per_s * dt_s).max(0.0);
        for joint in JointId::ALL {
            let range = self.limits.range(joint);
            let target = range.clamp(f64::from(command.0[joint.index()]));
            let current = self.pose[joint];
            let diff = target - current;
            let next = if diff.abs() <= max_step {
                target
            } else {
                current + max_step.copysign(diff)
            };
            self.pose[joint] = range.clamp(next);
        }
        self.pose
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounters {
    pub frames_decoded: u64,
    pub frames_dropped: u64,
}

/// Runs a [`SimulatedArm`] on its own thread, consuming a byte stream.
pub struct ArmEndpoint {
    arm: Arc<Mutex<SimulatedArm>>,
    counters: Arc<Mutex<ArmCounters>>,
    handle: JoinHandle<()>,
}

impl ArmEndpoint {
    /// The arm advances by the wall time elapsed between received frames.
    /// The thread ends when the stream reaches EOF or fails.
    pub fn spawn<R>(mut reader: R, arm: SimulatedArm, limits: JointLimits) -> Self
    where
        R: Read + Send + 'static,
    {
        let arm = Arc::new(Mutex::new(arm));
        let counters = Arc::new(Mutex::new(ArmCounters::default()));
        let (arm_t, counters_t) = (Arc::clone(&arm), Arc::clone(&counters));
        let handle = thread::Builder::new()
            .name("arm-sim".into())
            .spawn(move || {
                let epoch = Instant::now();
                let mut decoder = FrameDecoder::new(limits);
                let mut last: Option<Instant> = None;
                let mut buf = [0u8; 512];
                loop {
                    let n = match reader.read(&mut buf) {
                        Ok(0) | Err(_) => break,
                        Ok(n) => n,
                    };
                    for result in decoder.feed(&buf[..n]) {
                        let Ok(decoded) = result else { continue };
                        let now = Instant::now();
                        let dt = last.map_or(0.0, |l| now.duration_since(l).as_secs_f64());
                        last = Some(now);
                        let mut arm = arm_t.lock().unwrap_or_else(|e| e.into_inner());
                        arm.record(now.duration_since(epoch).as_secs_f64() * 1000.0, decoded.frame);
                        arm.step(&decoded.frame, dt);
                    }
                    let mut c = counters_t.lock().unwrap_or_else(|e| e.into_inner());
                    c.frames_decoded = decoder.decoded();
                    c.frames_dropped = decoder.dropped();
                }
            })
            .expect("spawn arm thread");
        Self { arm, counters, handle }
    }

    pub fn pose(&self) -> JointVector {
        self.arm.lock().unwrap_or_else(|e| e.into_inner()).pose()
    }

    pub fn counters(&self) -> ArmCounters {
        self.counters.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Waits for EOF and returns the final arm state.
    pub fn join(self) -> (SimulatedArm, ArmCounters) {
        let _ = self.handle.join();
        let arm = self.arm.lock().unwrap_or_else(|e| e.into_inner()).clone();
        let counters = self.counters.lock().unwrap_or_else(|e| e.into_inner()).clone();
        (arm, counters)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::transport::loopback;
    use std::io::Write;

    fn arm() -> SimulatedArm {
        SimulatedArm::new(JointLimits::default(), 60.0)
    }

    #[test]
    fn command_equal_to_pose_is_still() {
        let mut a = arm();
        let before = a.pose();
        a.step(&WireFrame::from_pose(&before), 0.05);
        assert_eq!(a.pose(), before);
    }

    #[test]
    fn slew_limited_step() {
        let mut a = arm();
        a.step(&WireFrame([100, 90, 90, 90, 90, 40]), 0.05);
        assert!((a.pose()[JointId::Base] - 93.0).abs() < 1e-12);
    }

    #[test]
    fn converges_exactly() {
        let mut a = arm();
        let cmd = WireFrame([120, 60, 30, 170, 5, 70]);
        for _ in 0..200 {
            a.step(&cmd, 0.05);
        }
        assert_eq!(a.pose(), cmd.to_pose());
    }

    #[test]
    fn out_of_limit_command_stays_in_limits() {
        let mut a = arm();
        let limits = JointLimits::default();
        for _ in 0..100 {
            a.step(&WireFrame([-500, 900, -3, 181, 1000, 0]), 0.1);
            assert!(limits.contains(&a.pose()));
        }
    }

    #[test]
    fn endpoint_consumes_stream() {
        let (mut w, r) = loopback();
        let ep = ArmEndpoint::spawn(r, arm(), JointLimits::default());
        w.write_all(b"90,90,90,90,90,40\ngarbage\n91,90,90,90,90,40\n").unwrap();
        drop(w);
        let (a, c) = ep.join();
        assert_eq!(c.frames_decoded, 2);
        assert_eq!(c.frames_dropped, 1);
        assert_eq!(a.frame_log().len(), 2);
        assert_eq!(a.frame_log()[1].frame.0[0], 91);
    }
}
