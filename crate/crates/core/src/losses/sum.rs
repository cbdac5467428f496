//! Compensated summation for voxel reductions.
//!
//! Sequential Neumaier summation: deterministic for a fixed input order and accurate
//! to a few ulps of the result, which keeps central differences of loss values usable.

#[derive(Clone, Copy, Debug, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Neumaier::default();
    for v in values {
        acc.add(v);
    }
    acc.total()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_terms() {
        assert_eq!(sum([1e100, 1.0, -1e100]), 1.0);
        let naive: f64 = [0.1; 10].iter().sum();
        assert_ne!(naive, 1.0);
        assert_eq!(sum([0.1; 10]), 1.0);
    }
}
