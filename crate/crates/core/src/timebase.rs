//! Virtual and real time, global virtual time, and the fossil horizon.
//!
//! Virtual and real time share one integer tick unit so that the distance
//! between a logical process's local virtual time and the real clock
//! (the lookahead) is well defined.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("real time must advance by at least one tick")]
    ZeroAdvance,
    #[error("virtual time overflow: {base} + {delta}")]
    Overflow { base: u64, delta: u64 },
}

/// A point on the virtual time axis, in ticks.
///
/// `VirtualTime::INFINITY` is greater than every finite time and absorbs
/// addition only through [`VirtualTime::checked_add`] errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VirtualTime(u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);
    pub const INFINITY: VirtualTime = VirtualTime(u64::MAX);

    pub const fn new(ticks: u64) -> Self {
        VirtualTime(ticks)
    }

    pub const fn ticks(self) -> u64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self == Self::INFINITY
    }

    /// Adds a latency. Results that would reach the infinity sentinel are
    /// rejected along with genuine overflow.
    pub fn checked_add(self, delta: u64) -> Result<VirtualTime, TimeError> {
        match self.0.checked_add(delta) {
            Some(t) if t != u64::MAX => Ok(VirtualTime(t)),
            _ => Err(TimeError::Overflow {
                base: self.0,
                delta,
            }),
        }
    }

    /// Ticks elapsed from `earlier` to `self`, saturating at zero.
    pub fn since(self, earlier: VirtualTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }

    pub fn prev(self) -> VirtualTime {
        VirtualTime(self.0.saturating_sub(1))
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl From<RealClock> for VirtualTime {
    fn from(c: RealClock) -> Self {
        VirtualTime(c.now)
    }
}

/// Simulated wall clock. Only moves forward, via [`advance_real_time`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct RealClock {
    now: u64,
}

impl RealClock {
    pub const fn at(now: u64) -> Self {
        RealClock { now }
    }

    pub const fn now(self) -> u64 {
        self.now
    }

    pub fn as_virtual(self) -> VirtualTime {
        VirtualTime(self.now)
    }
}

pub fn advance_real_time(clock: RealClock, dt: u64) -> Result<RealClock, TimeError> {
    if dt == 0 {
        return Err(TimeError::ZeroAdvance);
    }
    let now = clock.now.checked_add(dt).ok_or(TimeError::Overflow {
        base: clock.now,
        delta: dt,
    })?;
    Ok(RealClock { now })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GvtSnapshot {
    pub gvt: VirtualTime,
    pub computed_at: u64,
}

/// Global virtual time: the minimum over all local virtual times and the
/// receive times of messages still in transit. With no virtual activity at
/// all it falls back to the real clock.
pub fn compute_gvt(
    lvts: &[VirtualTime],
    in_transit_receive_times: &[VirtualTime],
    real_now: RealClock,
) -> GvtSnapshot {
    let gvt = lvts
        .iter()
        .chain(in_transit_receive_times)
        .copied()
        .min()
        .unwrap_or(real_now.as_virtual());
    GvtSnapshot {
        gvt,
        computed_at: real_now.now,
    }
}
