//! Streaming accumulators shared by the simulator and the trace estimators.

/// Raw power sums up to fourth order; population-normalized moments.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PowerSums {
    pub n: u64,
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
}

impl PowerSums {
    #[inline]
    pub fn push(&mut self, x: f64) {
        let x2 = x * x;
        self.n += 1;
        self.s1 += x;
        self.s2 += x2;
        self.s3 += x2 * x;
        self.s4 += x2 * x2;
    }

    pub fn mean(&self) -> f64 {
        self.s1 / self.n as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        (self.s2 / self.n as f64 - m * m).max(0.0)
    }

    pub fn fourth_central(&self) -> f64 {
        let n = self.n as f64;
        let m = self.mean();
        self.s4 / n - 4.0 * m * self.s3 / n + 6.0 * m * m * self.s2 / n - 3.0 * m.powi(4)
    }

    pub fn kurtosis(&self) -> f64 {
        let v = self.variance();
        self.fourth_central() / (v * v)
    }
}

/// Sums for a Pearson correlation between paired samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairSums {
    pub n: u64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl PairSums {
    #[inline]
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.syy += y * y;
        self.sxy += x * y;
    }

    /// `None` when either column has zero variance.
    pub fn pearson(&self) -> Option<f64> {
        let n = self.n as f64;
        let (mx, my) = (self.sx / n, self.sy / n);
        let vx = self.sxx / n - mx * mx;
        let vy = self.syy / n - my * my;
        if !(vx > 0.0 && vy > 0.0) {
            return None;
        }
        Some(((self.sxy / n - mx * my) / (vx * vy).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Mean and standard error of the mean (sample standard deviation / √n).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_valued_series() {
        let mut p = PowerSums::default();
        for x in [-1.0, 1.0, -1.0, 1.0] {
            p.push(x);
        }
        assert_eq!(p.variance(), 1.0);
        assert_eq!(p.kurtosis(), 1.0);
    }

    #[test]
    fn pearson_of_identical_columns() {
        let mut s = PairSums::default();
        for i in 0..10 {
            let x = (i as f64 * 0.37).sin();
            s.push(x, x);
        }
        assert!((s.pearson().unwrap() - 1.0).abs() < 1e-12);
        let mut c = PairSums::default();
        c.push(1.0, 2.0);
        c.push(1.0, 3.0);
        assert_eq!(c.pearson(), None);
    }

    #[test]
    fn standard_error_of_constant_is_zero() {
        assert_eq!(mean_and_se(&[2.0, 2.0, 2.0]), (2.0, 0.0));
    }
}
