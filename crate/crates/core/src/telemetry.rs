//! Telemetry fan-out for operator subscribers.
//!
//! Publishing never blocks: each subscriber has a bounded buffer and is
//! dropped the first time it overflows.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::autonomous::Interrupt;
use crate::clock::Nanos;
use crate::dps::{RoutingTable, Weights};
use crate::executive::Directive;

pub const DEFAULT_BUFFER: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TelemetryEvent {
    Weights {
        weights: Weights<f64>,
        routing: RoutingTable,
    },
    Interrupt {
        interrupt: Interrupt,
    },
    Directive {
        directive: Directive,
    },
}

/// One server-push frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    #[serde(rename = "type")]
    pub frame_type: String,
    pub seq: u64,
    pub at: Nanos,
    #[serde(flatten)]
    pub event: TelemetryEvent,
}

pub const TELEMETRY_FRAME_TYPE: &str = "telemetry";

#[derive(Debug)]
pub struct TelemetryHub {
    buffer: usize,
    seq: AtomicU64,
    subscribers: Mutex<Vec<SyncSender<TelemetryFrame>>>,
    dropped: AtomicU64,
}

impl Default for TelemetryHub {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER)
    }
}

impl TelemetryHub {
    pub fn new(buffer: usize) -> Self {
        Self {
            buffer: buffer.max(1),
            seq: AtomicU64::new(0),
            subscribers: Mutex::new(Vec::new()),
            dropped: AtomicU64::new(0),
        }
    }

    pub fn subscribe(&self) -> Receiver<TelemetryFrame> {
        let (tx, rx) = sync_channel(self.buffer);
        self.subscribers.lock().push(tx);
        rx
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers.lock().len()
    }

    /// Subscribers disconnected for overflowing or hanging up.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn published(&self) -> u64 {
        self.seq.load(Ordering::Relaxed)
    }

    pub fn publish(&self, at: Nanos, event: TelemetryEvent) {
        let seq = self.seq.fetch_add(1, Ordering::Relaxed) + 1;
        let frame = TelemetryFrame {
            frame_type: TELEMETRY_FRAME_TYPE.to_string(),
            seq,
            at,
            event,
        };
        let mut subs = self.subscribers.lock();
        subs.retain(|tx| match tx.try_send(frame.clone()) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                tracing::warn!(seq, "telemetry subscriber overflowed; disconnecting");
                self.dropped.fetch_add(1, Ordering::Relaxed);
                false
            }
            Err(TrySendError::Disconnected(_)) => {
                self.dropped.fetch_add(1, Ordering::Relaxed);
                false
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event() -> TelemetryEvent {
        TelemetryEvent::Interrupt {
            interrupt: Interrupt::test_value(),
        }
    }

    #[test]
    fn fan_out_in_order() {
        let hub = TelemetryHub::new(8);
        let a = hub.subscribe();
        let b = hub.subscribe();
        hub.publish(1, event());
        hub.publish(2, event());
        for rx in [a, b] {
            let got: Vec<u64> = rx.try_iter().map(|f| f.seq).collect();
            assert_eq!(got, [1, 2]);
        }
    }

    #[test]
    fn slow_subscriber_is_dropped() {
        let hub = TelemetryHub::new(2);
        let slow = hub.subscribe();
        let fast = hub.subscribe();
        for t in 0..3 {
            hub.publish(t, event());
            let _ = fast.try_iter().count();
        }
        assert_eq!(hub.subscriber_count(), 1);
        assert_eq!(hub.dropped(), 1);
        assert_eq!(slow.try_iter().count(), 2);
    }

    #[test]
    fn frame_json_shape() {
        let hub = TelemetryHub::new(1);
        let rx = hub.subscribe();
        hub.publish(5, event());
        let v = serde_json::to_value(rx.recv().unwrap()).unwrap();
        assert_eq!(v["type"], "telemetry");
        assert_eq!(v["event"], "interrupt");
        assert_eq!(v["seq"], 1);
        assert_eq!(v["interrupt"]["divergence"], 0.9);
        let back: TelemetryFrame = serde_json::from_value(v).unwrap();
        assert_eq!(back.at, 5);
    }
}
