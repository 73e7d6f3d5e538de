use super::RegisterError;
use crate::volume::Volume;

/// Maps intensities to histogram bins.
#[derive(Clone, Debug, PartialEq)]
pub enum Binning {
    /// `bins` equal-width bins over `[lo, hi]`; values outside are clamped.
    Uniform { lo: f64, hi: f64, bins: usize },
    /// Explicit ascending edges (`bins + 1` of them).
    Edges(Vec<f64>),
}

impl Binning {
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Self {
        Binning::Uniform { lo, hi, bins }
    }

    /// Uniform bins over the min-max range of `values`.
    pub fn over(values: &[f64], bins: usize) -> Result<Self, RegisterError> {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if !(hi > lo) {
            return Err(RegisterError::DegenerateIntensity);
        }
        Ok(Binning::uniform(lo, hi, bins))
    }

    pub fn bins(&self) -> usize {
        match self {
            Binning::Uniform { bins, .. } => *bins,
            Binning::Edges(e) => e.len() - 1,
        }
    }

    pub fn edges(&self) -> Vec<f64> {
        match self {
            Binning::Uniform { lo, hi, bins } => (0..=*bins).map(|n| lo + (hi - lo) * n as f64 / *bins as f64).collect(),
            Binning::Edges(e) => e.clone(),
        }
    }

    #[inline]
    pub fn bin(&self, x: f64) -> usize {
        match self {
            Binning::Uniform { lo, hi, bins } => {
                let t = (x - lo) / (hi - lo) * *bins as f64;
                if t <= 0.0 || t.is_nan() {
                    0
                } else {
                    (t as usize).min(bins - 1)
                }
            }
            Binning::Edges(e) => {
                let b = e.partition_point(|&edge| edge <= x);
                b.saturating_sub(1).min(e.len() - 2)
            }
        }
    }
}

/// Joint intensity histogram `p(a, b)` of two equally sized samples.
#[derive(Clone, Debug, PartialEq)]
pub struct JointHistogram {
    bins_fixed: usize,
    bins_moving: usize,
    /// Row-major `[fixed_bin][moving_bin]`.
    counts: Vec<u64>,
    edges_fixed: Vec<f64>,
    edges_moving: Vec<f64>,
    total: u64,
}

impl JointHistogram {
    pub fn empty(fixed: &Binning, moving: &Binning) -> Self {
        JointHistogram {
            bins_fixed: fixed.bins(),
            bins_moving: moving.bins(),
            counts: vec![0; fixed.bins() * moving.bins()],
            edges_fixed: fixed.edges(),
            edges_moving: moving.edges(),
            total: 0,
        }
    }

    pub fn from_samples(fixed: &[f64], moving: &[f64], fb: &Binning, mb: &Binning) -> Self {
        assert_eq!(fixed.len(), moving.len());
        let mut h = JointHistogram::empty(fb, mb);
        for (&a, &b) in fixed.iter().zip(moving) {
            h.add_bins(fb.bin(a), mb.bin(b));
        }
        h
    }

    #[inline]
    pub fn add_bins(&mut self, fixed_bin: usize, moving_bin: usize) {
        self.counts[fixed_bin * self.bins_moving + moving_bin] += 1;
        self.total += 1;
    }

    /// Sums another histogram over the same binning into this one.
    pub fn merge(&mut self, other: &JointHistogram) {
        assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, fixed_bin: usize, moving_bin: usize) -> u64 {
        self.counts[fixed_bin * self.bins_moving + moving_bin]
    }

    pub fn edges_fixed(&self) -> &[f64] {
        &self.edges_fixed
    }

    pub fn edges_moving(&self) -> &[f64] {
        &self.edges_moving
    }

    pub fn marginal_fixed(&self) -> Vec<u64> {
        self.counts
            .chunks_exact(self.bins_moving)
            .map(|row| row.iter().sum())
            .collect()
    }

    pub fn marginal_moving(&self) -> Vec<u64> {
        let mut m = vec![0u64; self.bins_moving];
        for row in self.counts.chunks_exact(self.bins_moving) {
            for (acc, c) in m.iter_mut().zip(row) {
                *acc += c;
            }
        }
        m
    }

    pub fn transposed(&self) -> JointHistogram {
        let mut counts = vec![0u64; self.counts.len()];
        for a in 0..self.bins_fixed {
            for b in 0..self.bins_moving {
                counts[b * self.bins_fixed + a] = self.count(a, b);
            }
        }
        JointHistogram {
            bins_fixed: self.bins_moving,
            bins_moving: self.bins_fixed,
            counts,
            edges_fixed: self.edges_moving.clone(),
            edges_moving: self.edges_fixed.clone(),
            total: self.total,
        }
    }

    pub fn entropy_fixed(&self) -> f64 {
        entropy(&self.marginal_fixed(), self.total)
    }

    pub fn entropy_moving(&self) -> f64 {
        entropy(&self.marginal_moving(), self.total)
    }

    /// `Σ p(a,b) ln[p(a,b) / (p(a) p(b))]` in nats.
    pub fn mutual_information(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let n = self.total as f64;
        let pa = self.marginal_fixed();
        let pb = self.marginal_moving();
        let mut mi = 0.0;
        for (a, row) in self.counts.chunks_exact(self.bins_moving).enumerate() {
            for (b, &c) in row.iter().enumerate() {
                if c > 0 {
                    let c = c as f64;
                    mi += c * (c * n / (pa[a] as f64 * pb[b] as f64)).ln();
                }
            }
        }
        (mi / n).max(0.0)
    }
}

fn entropy(counts: &[u64], total: u64) -> f64 {
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information (nats) between two volumes on the same grid, each
/// binned over its own min-max range.
pub fn mutual_information(fixed: &Volume, moved: &Volume, bins: usize) -> Result<f64, RegisterError> {
    Ok(joint_histogram(fixed, moved, bins)?.mutual_information())
}

pub fn joint_histogram(fixed: &Volume, moved: &Volume, bins: usize) -> Result<JointHistogram, RegisterError> {
    if fixed.shape() != moved.shape() {
        return Err(RegisterError::GridMismatch(fixed.shape(), moved.shape()));
    }
    if bins < 2 {
        return Err(RegisterError::InvalidConfig(format!("need at least 2 bins, got {bins}")));
    }
    let a = fixed.to_f64_vec();
    let b = moved.to_f64_vec();
    let fb = Binning::over(&a, bins)?;
    let mb = Binning::over(&b, bins)?;
    Ok(JointHistogram::from_samples(&a, &b, &fb, &mb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_bin_edges() {
        let b = Binning::uniform(0.0, 1.0, 4);
        assert_eq!(b.bin(0.0), 0);
        assert_eq!(b.bin(0.2499), 0);
        assert_eq!(b.bin(0.25), 1);
        assert_eq!(b.bin(1.0), 3);
        assert_eq!(b.bin(-5.0), 0);
        assert_eq!(b.bin(9.0), 3);
        assert_eq!(b.edges(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn explicit_edges() {
        let b = Binning::Edges(vec![0.0, 1.0, 10.0, 100.0]);
        assert_eq!(b.bin(0.5), 0);
        assert_eq!(b.bin(1.0), 1);
        assert_eq!(b.bin(99.0), 2);
        assert_eq!(b.bin(100.0), 2);
        assert_eq!(b.bin(-1.0), 0);
    }

    #[test]
    fn independent_two_by_two_is_zero() {
        let a = [0.0, 0.0, 1.0, 1.0];
        let b = [0.0, 1.0, 0.0, 1.0];
        let bin = Binning::uniform(0.0, 1.0, 2);
        let h = JointHistogram::from_samples(&a, &b, &bin, &bin);
        assert!(h.mutual_information().abs() < 1e-15);
        let h = JointHistogram::from_samples(&a, &a, &bin, &bin);
        assert!((h.mutual_information() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn marginals_consistent() {
        let a = [0.1, 0.5, 0.9, 0.3, 0.7];
        let b = [0.9, 0.1, 0.5, 0.5, 0.2];
        let bin = Binning::uniform(0.0, 1.0, 3);
        let h = JointHistogram::from_samples(&a, &b, &bin, &bin);
        assert_eq!(h.marginal_fixed().iter().sum::<u64>(), h.total());
        assert_eq!(h.marginal_moving().iter().sum::<u64>(), h.total());
        assert_eq!(h.transposed().transposed(), h);
    }
}
