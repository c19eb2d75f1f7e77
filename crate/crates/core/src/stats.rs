//! Sample mean and standard error.

/// Mean, sample standard deviation and standard error of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleStats {
    pub mean: f64,
    pub std_dev: f64,
    pub std_error: f64,
    pub count: usize,
}

impl SampleStats {
    /// Shifted-data two-pass estimate; a constant sample yields exactly its
    /// value as mean and exactly zero spread. Values are summed in slice order.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_dev: f64::NAN,
                std_error: f64::NAN,
                count: 0,
            };
        }
        let shift = samples[0];
        let sum: f64 = samples.iter().map(|v| v - shift).sum();
        let mean_dev = sum / n as f64;
        let mean = shift + mean_dev;
        if n == 1 {
            return Self {
                mean,
                std_dev: 0.0,
                std_error: 0.0,
                count: 1,
            };
        }
        let ss: f64 = samples.iter().map(|v| (v - shift - mean_dev).powi(2)).sum();
        let std_dev = (ss / (n - 1) as f64).sqrt();
        Self {
            mean,
            std_dev,
            std_error: std_dev / (n as f64).sqrt(),
            count: n,
        }
    }
}
