use serde::Serialize;

/// A closed interval of the extended line; `lo > hi` encodes the empty set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn empty() -> Self {
        Self {
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
        }
    }

    pub fn real_line() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    /// Affine image `(s - shift) / scale` with `scale > 0`.
    pub fn shift_scale(&self, shift: f64, scale: f64) -> Interval {
        if self.is_empty() {
            return *self;
        }
        Interval::new((self.lo - shift) / scale, (self.hi - shift) / scale)
    }

    /// Projection of `x` onto a nonempty interval.
    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }

    /// Endpoint distance; two empty intervals are at distance zero.
    pub fn endpoint_gap(&self, other: &Interval) -> f64 {
        match (self.is_empty(), other.is_empty()) {
            (true, true) => 0.0,
            (false, false) => endpoint_diff(self.lo, other.lo).max(endpoint_diff(self.hi, other.hi)),
            _ => f64::INFINITY,
        }
    }
}

fn endpoint_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}
