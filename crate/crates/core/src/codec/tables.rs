use illm_entropy::{build_cdf, CdfTable, Density, FlatTables, TableParams};

use crate::error::Result;

/// Log-spaced scales shared by encoder and decoder; each latent symbol is coded
/// with the zero-mean Gaussian table of the grid scale nearest its predicted σ.
#[derive(Debug, Clone)]
pub struct ScaleGrid {
    scales: Vec<f64>,
    log_min: f64,
    log_step: f64,
}

impl ScaleGrid {
    pub fn new(min: f64, max: f64, n: usize) -> Self {
        assert!(n >= 2 && min > 0.0 && max > min);
        let log_min = min.ln();
        let log_step = (max.ln() - log_min) / (n - 1) as f64;
        let mut scales: Vec<f64> = (0..n).map(|i| (log_min + i as f64 * log_step).exp()).collect();
        scales[0] = min;
        scales[n - 1] = max;
        Self { scales, log_min, log_step }
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Nearest grid index in log space; out-of-range scales clamp to the ends.
    pub fn index(&self, scale: f32) -> u32 {
        let s = scale as f64;
        if !(s > 0.0) {
            return 0;
        }
        let i = ((s.ln() - self.log_min) / self.log_step).round();
        i.clamp(0.0, (self.scales.len() - 1) as f64) as u32
    }

    pub fn tables(&self, params: &TableParams) -> Result<Vec<CdfTable>> {
        Ok(self
            .scales
            .iter()
            .map(|&s| build_cdf(Density::Gaussian { mean: 0.0, scale: s }, params))
            .collect::<std::result::Result<Vec<_>, _>>()?)
    }
}

/// Latent tables in both structured and flat form.
pub struct LatentTables {
    pub grid: ScaleGrid,
    pub tables: Vec<CdfTable>,
    pub flat: FlatTables,
}

impl LatentTables {
    pub fn new(grid: ScaleGrid, params: &TableParams) -> Result<Self> {
        let tables = grid.tables(params)?;
        let flat = FlatTables::from_tables(&tables)?;
        Ok(Self { grid, tables, flat })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_and_nearest_index() {
        let g = ScaleGrid::new(0.11, 256.0, 64);
        assert_eq!(g.scales()[0], 0.11);
        assert_eq!(g.scales()[63], 256.0);
        assert_eq!(g.index(0.11), 0);
        assert_eq!(g.index(0.05), 0);
        assert_eq!(g.index(1e6), 63);
        for (i, s) in g.scales().iter().enumerate() {
            assert_eq!(g.index(*s as f32), i as u32);
        }
        let r = g.scales()[1] / g.scales()[0];
        assert!((r - (256.0f64 / 0.11).powf(1.0 / 63.0)).abs() < 1e-12);
    }
}
