use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The day's operating intervals: `intervals` slots of `dt_h` hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub intervals: usize,
    pub dt_h: f64,
}

impl TimeGrid {
    pub fn new(intervals: usize, dt_h: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::validation("time.intervals", "must be at least 1"));
        }
        if !(dt_h > 0.0 && dt_h.is_finite()) {
            return Err(Error::validation("time.dt_h", "must be positive"));
        }
        Ok(Self { intervals, dt_h })
    }

    pub fn horizon_h(&self) -> f64 {
        self.intervals as f64 * self.dt_h
    }

    /// Start of interval `t` in hours.
    pub fn hour(&self, t: usize) -> f64 {
        t as f64 * self.dt_h
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { intervals: 24, dt_h: 1.0 }
    }
}
