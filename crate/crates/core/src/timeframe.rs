use std::fmt;

use serde::{Deserialize, Serialize};

/// Half-open time interval `[start, end)` in UTC seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeFrame {
    pub start: f64,
    pub end: f64,
}

impl TimeFrame {
    pub fn new(start: f64, end: f64) -> Self {
        assert!(
            start < end,
            "TimeFrame start {start} must precede end {end}"
        );
        TimeFrame { start, end }
    }

    pub fn duration_s(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }

    pub fn overlaps(&self, other: &TimeFrame) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn intersect(&self, other: &TimeFrame) -> Option<TimeFrame> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start < end).then_some(TimeFrame { start, end })
    }

    /// First fraction `f` of the frame, by time. Used for train/test splits.
    pub fn split_at_fraction(&self, f: f64) -> (TimeFrame, TimeFrame) {
        assert!(f > 0.0 && f < 1.0, "split fraction must be in (0,1)");
        let mid = self.start + self.duration_s() * f;
        (
            TimeFrame::new(self.start, mid),
            TimeFrame::new(mid, self.end),
        )
    }
}

impl fmt::Display for TimeFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Checks that `sections` are sorted ascending and pairwise disjoint.
pub fn validate_sections(sections: &[TimeFrame]) -> bool {
    sections.windows(2).all(|w| w[0].end <= w[1].start)
}

/// Intersection of two sorted disjoint section lists, itself sorted disjoint.
pub fn intersect_sections(a: &[TimeFrame], b: &[TimeFrame]) -> Vec<TimeFrame> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if let Some(x) = a[i].intersect(&b[j]) {
            out.push(x);
        }
        if a[i].end <= b[j].end {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}
