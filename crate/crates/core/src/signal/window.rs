use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::SignalError;

/// How far the window advances between integrations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowStride {
    /// Non-overlapping windows: every `N` samples emit one integration.
    #[default]
    Tumbling,
    /// Overlapping windows advancing one sample at a time once full.
    Sliding,
}

/// Buffers filtered samples and emits windowed sums and their first differences.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowAccumulator {
    capacity: usize,
    stride: WindowStride,
    buffer: VecDeque<f64>,
    window_index: u64,
    prev_integration: Option<f64>,
}

impl WindowAccumulator {
    pub fn new(capacity: usize, stride: WindowStride) -> Result<Self, SignalError> {
        if capacity == 0 {
            return Err(SignalError::InvalidWindow(capacity));
        }
        Ok(Self {
            capacity,
            stride,
            buffer: VecDeque::with_capacity(capacity),
            window_index: 0,
            prev_integration: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of completed windows so far.
    pub fn window_index(&self) -> u64 {
        self.window_index
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn prev_integration(&self) -> Option<f64> {
        self.prev_integration
    }

    /// Accepts one filtered sample and returns `I_k` when a window completes.
    pub fn integrate(&mut self, filtered: f64) -> Option<f64> {
        if self.buffer.len() == self.capacity {
            // only reachable in sliding mode
            self.buffer.pop_front();
        }
        self.buffer.push_back(filtered);
        if self.buffer.len() < self.capacity {
            return None;
        }
        let sum = self.buffer.iter().sum::<f64>();
        if self.stride == WindowStride::Tumbling {
            self.buffer.clear();
        }
        self.window_index += 1;
        Some(sum)
    }

    /// Returns `I_k - I_{k-1}`, or nothing for the first window, and stores `I_k`.
    pub fn difference(&mut self, integration: f64) -> Option<f64> {
        let delta = self.prev_integration.map(|prev| integration - prev);
        self.prev_integration = Some(integration);
        delta
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
        self.window_index = 0;
        self.prev_integration = None;
    }
}
