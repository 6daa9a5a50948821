//! Gradient-density binning.
//!
//! The unit interval of gradient norms is split into `M` equal-width bins;
//! the last edge is pushed out by `ε` so that a norm of exactly 1 is binned.
//! The gradient density of a sample is the population of its bin divided by
//! the bin width, and the sample weight is `β = N / GD(g)`.

use crate::error::{Error, Result};

/// Extension of the last bin edge.
pub const LAST_EDGE_EPS: f64 = 1e-6;

/// `|p - p*|`, the gradient norm of sigmoid cross-entropy w.r.t. the logit.
pub fn gradient_norm(p: f64, target: bool) -> f64 {
    let t = if target { 1.0 } else { 0.0 };
    (p - t).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientDensityBins {
    m_bins: usize,
    edges: Vec<f64>,
    counts: Vec<usize>,
    total_n: usize,
}

impl GradientDensityBins {
    /// Bins a batch of gradient norms into `m_bins` uniform bins over `[0, 1]`.
    pub fn build(gradient_norms: &[f64], m_bins: usize) -> Result<Self> {
        if m_bins == 0 {
            return Err(Error::OutOfRange {
                name: "m_bins",
                value: 0.0,
                expected: ">= 1",
            });
        }
        if gradient_norms.is_empty() {
            return Err(Error::EmptyBatch("weight"));
        }
        let mut edges: Vec<f64> = (0..=m_bins).map(|i| i as f64 / m_bins as f64).collect();
        edges[m_bins] += LAST_EDGE_EPS;

        let mut bins = Self {
            m_bins,
            edges,
            counts: vec![0; m_bins],
            total_n: gradient_norms.len(),
        };
        for &g in gradient_norms {
            let idx = bins.bin_index(g)?;
            bins.counts[idx] += 1;
        }
        Ok(bins)
    }

    pub fn m_bins(&self) -> usize {
        self.m_bins
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total_n(&self) -> usize {
        self.total_n
    }

    /// Index of the bin holding `g`, i.e. the `k` with `edges[k] <= g < edges[k + 1]`.
    pub fn bin_index(&self, g: f64) -> Result<usize> {
        if !(0.0..self.edges[self.m_bins]).contains(&g) {
            return Err(Error::OutOfRange {
                name: "gradient norm",
                value: g,
                expected: "[0, 1]",
            });
        }
        let m = self.m_bins;
        let mut idx = ((g * m as f64).floor() as usize).min(m - 1);
        // floor() can land one off the edge comparison near boundaries
        while idx > 0 && g < self.edges[idx] {
            idx -= 1;
        }
        while idx + 1 < m && g >= self.edges[idx + 1] {
            idx += 1;
        }
        Ok(idx)
    }

    /// Nominal bin width `l_ε = 1 / M`.
    pub fn bin_width(&self) -> f64 {
        1.0 / self.m_bins as f64
    }

    /// `GD(g)`: bin population over bin width.
    pub fn density(&self, g: f64) -> Result<f64> {
        let idx = self.bin_index(g)?;
        Ok(self.counts[idx] as f64 / self.bin_width())
    }

    /// `β = N / GD(g)`; errors if `g` lands in a bin nobody populated.
    pub fn beta(&self, g: f64) -> Result<f64> {
        let idx = self.bin_index(g)?;
        let count = self.counts[idx];
        if count == 0 {
            return Err(Error::EmptyBin { norm: g, bin: idx });
        }
        Ok(self.total_n as f64 / (count as f64 / self.bin_width()))
    }
}

/// Per-sample `β` weights for `gradient_norms` under `bins`.
pub fn beta_weights(bins: &GradientDensityBins, gradient_norms: &[f64]) -> Result<Vec<f64>> {
    gradient_norms.iter().map(|&g| bins.beta(g)).collect()
}
