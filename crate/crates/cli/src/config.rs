//! Run configuration. All frequency-like keys carry an explicit unit suffix:
//! `_hz` for cyclic frequencies and `_hz_over_2pi` for rates quoted as
//! frequency equivalents of angular rates. Unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;

use mmsc_core::model::{EnsembleParams, ResonatorParams, TAU};

use crate::error::CliError;

/// Cesium D2 dipole decay rate over 2 pi; the default atomic line.
pub const DEFAULT_GAMMA_HZ_OVER_2PI: f64 = 2.61e6;
/// Default fiber-mode emission fraction (a quarter of the per-atom OD).
pub const DEFAULT_BETA: f64 = 0.0055;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub resonator: ResonatorBlock,
    #[serde(default)]
    pub atoms: AtomsBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub drive: DriveBlock,
    #[serde(default)]
    pub g2: G2Block,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorBlock {
    pub fsr_hz: f64,
    pub kappa0_hz_over_2pi: f64,
    pub kappa_ext_hz_over_2pi: f64,
    #[serde(rename = "loop", default)]
    pub loop_setting: LoopSetting,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum LoopSetting {
    #[default]
    Closed,
    Open,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomsBlock {
    #[serde(default = "default_gamma")]
    pub gamma_hz_over_2pi: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Exactly one of `od` / `n_atoms` may be given; both absent means an
    /// empty resonator.
    pub od: Option<f64>,
    pub n_atoms: Option<f64>,
    #[serde(default)]
    pub delta_at_hz: f64,
    /// Probe saturation used by the single-pass OD fit (fixed, not fitted).
    #[serde(default)]
    pub probe_sat: f64,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA_HZ_OVER_2PI
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

impl Default for AtomsBlock {
    fn default() -> Self {
        Self {
            gamma_hz_over_2pi: DEFAULT_GAMMA_HZ_OVER_2PI,
            beta: DEFAULT_BETA,
            od: None,
            n_atoms: None,
            delta_at_hz: 0.0,
            probe_sat: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default = "default_span")]
    pub span_hz: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_span() -> f64 {
    40e6
}

fn default_points() -> usize {
    4001
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self { span_hz: default_span(), points: default_points() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveBlock {
    #[serde(default = "default_rabi")]
    pub rabi_hz_over_2pi: f64,
    #[serde(default)]
    pub detuning_hz: f64,
}

fn default_rabi() -> f64 {
    2.0 * DEFAULT_GAMMA_HZ_OVER_2PI
}

impl Default for DriveBlock {
    fn default() -> Self {
        Self { rabi_hz_over_2pi: default_rabi(), detuning_hz: 0.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G2Block {
    #[serde(default = "default_unit_interval")]
    pub mu0_bounds: [f64; 2],
    #[serde(default = "default_unit_interval")]
    pub mu_bounds: [f64; 2],
    /// Point values used for simulation; interval midpoints when absent.
    pub mu0: Option<f64>,
    pub mu: Option<f64>,
    #[serde(default = "default_tau_max")]
    pub tau_max_s: f64,
    #[serde(default = "default_g2_points")]
    pub points: usize,
}

fn default_unit_interval() -> [f64; 2] {
    [0.0, 1.0]
}

fn default_tau_max() -> f64 {
    10e-6
}

fn default_g2_points() -> usize {
    2001
}

impl Default for G2Block {
    fn default() -> Self {
        Self {
            mu0_bounds: default_unit_interval(),
            mu_bounds: default_unit_interval(),
            mu0: None,
            mu: None,
            tau_max_s: default_tau_max(),
            points: default_g2_points(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.atoms.od.is_some() && self.atoms.n_atoms.is_some() {
            return Err(CliError::config(
                "atoms: give exactly one of 'od' and 'n_atoms', not both".into(),
            ));
        }
        if self.sweep.points < 2 {
            return Err(CliError::config("sweep.points must be at least 2".into()));
        }
        if self.g2.points < 2 {
            return Err(CliError::config("g2.points must be at least 2".into()));
        }
        for (name, b) in [("g2.mu0_bounds", self.g2.mu0_bounds), ("g2.mu_bounds", self.g2.mu_bounds)]
        {
            if !(b[0].is_finite() && b[1].is_finite() && b[0] <= b[1]) {
                return Err(CliError::config(format!("{name} must be a finite interval")));
            }
        }
        Ok(())
    }

    pub fn resonator(&self) -> Result<ResonatorParams, CliError> {
        ResonatorParams::new(
            self.resonator.fsr_hz,
            TAU * self.resonator.kappa0_hz_over_2pi,
            TAU * self.resonator.kappa_ext_hz_over_2pi,
            self.resonator.loop_setting == LoopSetting::Open,
        )
        .map_err(|e| CliError::config(format!("resonator: {e}")))
    }

    pub fn gamma(&self) -> f64 {
        TAU * self.atoms.gamma_hz_over_2pi
    }

    pub fn ensemble(&self) -> Result<EnsembleParams, CliError> {
        let gamma = self.gamma();
        let delta_at = TAU * self.atoms.delta_at_hz;
        let ens = match (self.atoms.od, self.atoms.n_atoms) {
            (Some(od), None) => EnsembleParams::with_od(gamma, self.atoms.beta, od, delta_at),
            (None, Some(n)) => EnsembleParams::new(gamma, self.atoms.beta, n, delta_at),
            (None, None) => EnsembleParams::new(gamma, self.atoms.beta, 0.0, delta_at),
            (Some(_), Some(_)) => unreachable!("validated"),
        };
        ens.map_err(|e| CliError::config(format!("atoms: {e}")))
    }

    /// Tau grid for correlation synthesis and fits.
    pub fn tau_grid(&self) -> Vec<f64> {
        let n = self.g2.points;
        (0..n).map(|i| self.g2.tau_max_s * i as f64 / (n - 1) as f64).collect()
    }

    pub fn mu_values(&self) -> (f64, f64) {
        let mid = |b: [f64; 2]| 0.5 * (b[0] + b[1]);
        (
            self.g2.mu.unwrap_or_else(|| mid(self.g2.mu_bounds)),
            self.g2.mu0.unwrap_or_else(|| mid(self.g2.mu0_bounds)),
        )
    }
}
