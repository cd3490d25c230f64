//! Structured deny/exec event stream.
//!
//! Every deny on the local path and every drop at the gateway produces one
//! event carrying the eight audit fields (pid, command name, cgroup id,
//! principal index, destination ip, port, protocol, timestamp) plus the
//! event kind and verdict reason. Events queue in a bounded ring; overflow
//! drops the newest event and counts it, so producers on the decision path
//! never block. A drain appends events to a line sink, one JSON object per
//! line, fields in fixed order.

use std::collections::VecDeque;
use std::io::Write;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{Proto, Reason};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Deny,
    ExecEvent,
    GatewayDrop,
}

/// One audit record. Field order here is the wire order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub kind: EventKind,
    pub pid: u64,
    pub comm: String,
    pub cgroup_id: u64,
    pub app_index: u32,
    pub dst_ip: IpAddr,
    pub dst_port: u16,
    pub proto: Option<Proto>,
    pub timestamp: u64,
    pub reason: Option<Reason>,
}

impl AuditEvent {
    pub fn deny(
        pid: u64,
        comm: &str,
        cgroup_id: u64,
        app_index: u32,
        dst_ip: IpAddr,
        dst_port: u16,
        proto: Proto,
        timestamp: SimTime,
        reason: Reason,
    ) -> Self {
        AuditEvent {
            kind: EventKind::Deny,
            pid,
            comm: comm.to_string(),
            cgroup_id,
            app_index,
            dst_ip,
            dst_port,
            proto: Some(proto),
            timestamp: timestamp.millis(),
            reason: Some(reason),
        }
    }

    pub fn gateway_drop(
        app_index: u32,
        dst_ip: IpAddr,
        dst_port: u16,
        proto: Proto,
        timestamp: SimTime,
        reason: Reason,
    ) -> Self {
        AuditEvent {
            kind: EventKind::GatewayDrop,
            pid: 0,
            comm: String::new(),
            cgroup_id: 0,
            app_index,
            dst_ip,
            dst_port,
            proto: Some(proto),
            timestamp: timestamp.millis(),
            reason: Some(reason),
        }
    }

    pub fn exec_event(pid: u64, comm: &str, cgroup_id: u64, app_index: u32, timestamp: SimTime) -> Self {
        AuditEvent {
            kind: EventKind::ExecEvent,
            pid,
            comm: comm.to_string(),
            cgroup_id,
            app_index,
            dst_ip: IpAddr::from([0u8, 0, 0, 0]),
            dst_port: 0,
            proto: None,
            timestamp: timestamp.millis(),
            reason: None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("audit events serialize")
    }

    pub fn parse_line(line: &str) -> Result<Self, SinkError> {
        serde_json::from_str(line).map_err(|e| SinkError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("sink write failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed audit line: {0}")]
    Malformed(String),
}

/// Bounded ring of audit events. Overflow increments `dropped_count`
/// instead of blocking the producer.
#[derive(Debug, Clone)]
pub struct EventBuffer {
    ring: VecDeque<AuditEvent>,
    capacity: usize,
    dropped_count: u64,
    emitted_count: u64,
}

impl EventBuffer {
    pub const DEFAULT_CAPACITY: usize = 1 << 16;

    pub fn new(capacity: usize) -> Self {
        EventBuffer {
            ring: VecDeque::with_capacity(capacity.min(Self::DEFAULT_CAPACITY)),
            capacity,
            dropped_count: 0,
            emitted_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn dropped_count(&self) -> u64 {
        self.dropped_count
    }

    /// Total events accepted into the ring since construction (drops not
    /// included).
    pub fn emitted_count(&self) -> u64 {
        self.emitted_count
    }

    pub fn iter(&self) -> impl Iterator<Item = &AuditEvent> {
        self.ring.iter()
    }

    /// Enqueues an event, or drops it (newest-loses) when the ring is full.
    pub fn emit(&mut self, event: AuditEvent) {
        if self.ring.len() >= self.capacity {
            self.dropped_count += 1;
            return;
        }
        self.ring.push_back(event);
        self.emitted_count += 1;
    }

    /// Appends all queued events to the sink in order and empties the
    /// buffer. On a sink error the events are retained for a retry.
    pub fn drain(&mut self, sink: &mut dyn Write) -> Result<usize, SinkError> {
        let mut out = String::new();
        for ev in &self.ring {
            out.push_str(&ev.to_line());
            out.push('\n');
        }
        sink.write_all(out.as_bytes())?;
        let n = self.ring.len();
        self.ring.clear();
        Ok(n)
    }
}

impl Default for EventBuffer {
    fn default() -> Self {
        EventBuffer::new(Self::DEFAULT_CAPACITY)
    }
}
