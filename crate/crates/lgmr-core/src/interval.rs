//! Temporal intervals in seconds, normalized [0,1] intervals, and the
//! (center, width) parametrization used by the prediction heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A time span in seconds, `start <= end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::invalid("interval endpoints must be finite"));
        }
        if start < 0.0 {
            return Err(Error::invalid(format!("interval start {start} < 0")));
        }
        if start > end {
            return Err(Error::invalid(format!(
                "interval start > end ({start} > {end})"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    /// Checks the interval lies inside `[0, duration]`.
    pub fn check_within(&self, duration: f64) -> Result<()> {
        if self.end > duration {
            return Err(Error::invalid(format!(
                "interval [{}, {}] exceeds duration {duration}",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

/// A time span as fractions of the video duration, `0 <= start <= end <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedInterval {
    pub start: f64,
    pub end: f64,
}

impl NormalizedInterval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || start > end {
            return Err(Error::invalid(format!(
                "normalized interval ({start}, {end}) outside 0 <= start <= end <= 1"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Interval parametrized by its central timestamp and duration, both as
/// fractions of the video length. Converting to a [`NormalizedInterval`]
/// clamps the endpoints into [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterWidth {
    pub center: f64,
    pub width: f64,
}

impl CenterWidth {
    /// start = center - width/2, end = center + width/2, clamped into [0,1].
    pub fn to_normalized(self) -> NormalizedInterval {
        let s = (self.center - self.width / 2.0).clamp(0.0, 1.0);
        let e = (self.center + self.width / 2.0).clamp(0.0, 1.0);
        NormalizedInterval { start: s, end: e }
    }

    /// center = (start+end)/2, width = end - start.
    pub fn from_normalized(iv: NormalizedInterval) -> Self {
        CenterWidth {
            center: (iv.start + iv.end) / 2.0,
            width: iv.end - iv.start,
        }
    }
}

/// Maps an interval in seconds to fractions of `duration`.
pub fn normalize_interval(iv: Interval, duration: f64) -> Result<NormalizedInterval> {
    if !(duration > 0.0) {
        return Err(Error::invalid(format!("duration {duration} must be > 0")));
    }
    iv.check_within(duration)?;
    Ok(NormalizedInterval {
        start: iv.start / duration,
        end: iv.end / duration,
    })
}

/// Inverse of [`normalize_interval`].
pub fn denormalize_interval(iv: NormalizedInterval, duration: f64) -> Result<Interval> {
    if !(duration > 0.0) {
        return Err(Error::invalid(format!("duration {duration} must be > 0")));
    }
    Ok(Interval {
        start: iv.start * duration,
        end: iv.end * duration,
    })
}
