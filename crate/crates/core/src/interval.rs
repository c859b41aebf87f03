use std::fmt;

/// Open interval `(lower, upper)`; empty when `upper <= lower`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenInterval {
    pub lower: f64,
    pub upper: f64,
}

impl OpenInterval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn is_empty(&self) -> bool {
        self.upper <= self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }

    /// `true` when every point of `self` lies in `other` (an empty interval is
    /// contained in anything).
    pub fn is_subset_of(&self, other: &OpenInterval) -> bool {
        self.is_empty() || (self.lower >= other.lower && self.upper <= other.upper)
    }

    /// `count` evenly spaced interior points.
    pub fn interior_grid(&self, count: usize) -> Vec<f64> {
        let width = self.upper - self.lower;
        (1..=count)
            .map(|k| self.lower + width * k as f64 / (count + 1) as f64)
            .collect()
    }
}

impl fmt::Display for OpenInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lower, self.upper)
    }
}
