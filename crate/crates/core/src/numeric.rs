//! Small numeric helpers shared across modules.

/// Compensated (Neumaier) summation. Keeps absolute error near one ulp of
/// the running sum even for long, mixed-sign series.
pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Running compensated accumulator for callers that cannot hand over an
/// iterator in one piece.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_handles_cancellation() {
        // 1 + 1e100 - 1e100 must come back as exactly 1.
        let s = neumaier_sum([1.0, 1e100, -1e100]);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn accumulator_matches_batch_sum() {
        let xs = [0.1, -0.3, 1e15, 2.5, -1e15];
        let mut acc = Accumulator::new();
        for &x in &xs {
            acc.add(x);
        }
        assert_eq!(acc.value(), neumaier_sum(xs.iter().copied()));
    }
}
