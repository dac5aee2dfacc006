//! One structured-text (TOML) configuration shared by every CLI subcommand.
//!
//! Each section maps onto one family of operations; unknown keys are
//! rejected so that typos cannot silently fall back to defaults.  Every
//! report embeds `config_hash(...)` of the parsed configuration together
//! with the crate version, making artifacts reproducible from the config
//! alone.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// ρ: support radius, number of bump components, smoothness index.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    pub support_radius: f64,
    pub n_components: usize,
    pub smoothness: u32,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig { support_radius: 2.0, n_components: 4, smoothness: 1 }
    }
}

/// Spectral grid: N×N modes on [−L, L]².
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
    pub half_length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 256, half_length: 32.0 }
    }
}

/// Particle constants (m, I, M).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub mass: f64,
    pub inertia: f64,
    pub spin: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig { mass: 1.0, inertia: 1.0, spin: 1.0 }
    }
}

impl PhysicsConfig {
    pub fn params(&self) -> crate::grid::PhysParams {
        crate::grid::PhysParams { mass: self.mass, inertia: self.inertia, spin: self.spin }
    }
}

/// Soliton parameters σ = (b, v).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolitonConfig {
    pub b: [f64; 2],
    pub v: [f64; 2],
}

impl Default for SolitonConfig {
    fn default() -> Self {
        SolitonConfig { b: [0.0, 0.0], v: [0.3, 0.0] }
    }
}

/// μ grid of the spectral-condition scan (μ = 0 is excluded automatically).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub mu_min: f64,
    pub mu_max: f64,
    pub n_mu: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { mu_min: 0.15, mu_max: 3.9, n_mu: 26 }
    }
}

impl ScanConfig {
    pub fn mu_grid(&self) -> Vec<f64> {
        if self.n_mu < 2 {
            return vec![self.mu_min];
        }
        let step = (self.mu_max - self.mu_min) / (self.n_mu - 1) as f64;
        (0..self.n_mu).map(|i| self.mu_min + step * i as f64).collect()
    }
}

/// Nonlinear run: horizon, step, snapshot cadence, initial perturbation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub t_final: f64,
    pub dt: f64,
    pub snapshot_every: usize,
    /// Weighted amplitude ‖Z₀‖_β of the initial perturbation (0 = none).
    pub d_beta: f64,
    pub beta: f64,
    pub seed: u64,
    /// Perturbation bumps stay within this distance of the particle.
    pub r_max: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            t_final: 12.0,
            dt: 0.03125,
            snapshot_every: 32,
            d_beta: 0.0,
            beta: 4.5,
            seed: 7,
            r_max: 2.0,
        }
    }
}

/// Linearized run (moving frame).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearConfig {
    pub t_final: f64,
    pub dt: f64,
    pub beta: f64,
    pub record_every: usize,
    pub remove_secular: bool,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            t_final: 20.0,
            dt: 0.0625,
            beta: 4.5,
            record_every: 4,
            remove_secular: true,
            seed: 7,
        }
    }
}

/// Fourier–Laplace time response (Bromwich contour discretization).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResponseConfig {
    pub t_max: f64,
    pub n_t: usize,
    pub mu_max: f64,
    pub n_mu: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        ResponseConfig { t_max: 20.0, n_t: 80, mu_max: 48.0, n_mu: 4800, sigma: 0.1, seed: 11 }
    }
}

/// Stability experiment thresholds and fit window.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub d_beta: f64,
    pub beta: f64,
    pub seed: u64,
    pub t_final: f64,
    pub dt: f64,
    pub snapshot_every: usize,
    pub r_max: f64,
    /// Verify the spectral condition before integrating.
    pub check_spectral: bool,
    pub fit_t0: f64,
    pub fit_t1: f64,
    /// Pass band for the fitted decay exponent p of ‖Z(t)‖_{−β} ~ t^{−p}.
    pub min_p: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            d_beta: 1e-2,
            beta: 4.5,
            seed: 7,
            t_final: 12.0,
            dt: 0.03125,
            snapshot_every: 16,
            r_max: 2.0,
            check_spectral: false,
            fit_t0: 1.0,
            fit_t1: 9.0,
            min_p: 1.3,
        }
    }
}

/// The complete configuration; every section has working defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub density: DensityConfig,
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub soliton: SolitonConfig,
    pub scan: ScanConfig,
    pub simulate: SimulateConfig,
    pub linear: LinearConfig,
    pub response: ResponseConfig,
    pub stability: StabilityConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Config> {
        Config::from_toml(&std::fs::read_to_string(path)?)
    }

    /// FNV-1a hash of the canonical serialization — stable across runs and
    /// insensitive to key order or comments in the source file.
    pub fn hash(&self) -> u64 {
        let canonical = toml::to_string(self).unwrap_or_default();
        fnv1a(canonical.as_bytes())
    }
}

/// Crate version embedded in every report.
pub fn code_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let cfg = Config::default();
        let text = toml::to_string(&cfg).unwrap();
        let back = Config::from_toml(&text).unwrap();
        assert_eq!(cfg.hash(), back.hash());
        // Canonical text ignores formatting differences in the source.
        let spaced = text.replace(" = ", "   =   ");
        assert_eq!(Config::from_toml(&spaced).unwrap().hash(), cfg.hash());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = Config::from_toml("[grid]\nn = 128\n").unwrap();
        assert_eq!(cfg.grid.n, 128);
        assert_eq!(cfg.grid.half_length, 32.0);
        assert_eq!(cfg.density.n_components, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml("[grid]\nn_modes = 128\n").is_err());
        assert!(Config::from_toml("[typo_section]\nx = 1\n").is_err());
    }

    #[test]
    fn hash_distinguishes_configs() {
        let a = Config::default();
        let mut b = Config::default();
        b.stability.d_beta = 2e-2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn scan_grid_is_inclusive_and_uniform() {
        let grid = ScanConfig { mu_min: 1.0, mu_max: 2.0, n_mu: 5 }.mu_grid();
        assert_eq!(grid.len(), 5);
        assert!((grid[0] - 1.0).abs() < 1e-15);
        assert!((grid[4] - 2.0).abs() < 1e-15);
        assert!((grid[2] - 1.5).abs() < 1e-15);
    }
}
