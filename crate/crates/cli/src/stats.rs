/// Sample mean and standard error `s/√n` (`NaN` error for a single value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                count: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, stderr, count: n }
    }

    /// `self.mean + k·stderr < other.mean − k·stderr`.
    pub fn clearly_below(&self, other: &Summary, k: f64) -> bool {
        self.mean + k * self.stderr < other.mean - k * other.stderr
    }
}
