//! Fusing sensitivity with hardware cost, and the exact 4/8-bit assignment.
//!
//! Each layer gets a merit `Ω = β·ω̂ − (γ/2)(ĉ + ê)` from min-max normalized
//! sensitivity, cycles and energy. The plan maximizes `Σ b_i Ω_i` over
//! `b_i ∈ {4, 8}` subject to the total weight storage fitting a limit. With
//! two candidates this is a 0/1 knapsack over "upgrade layer i to 8 bits",
//! solved by dynamic programming.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwsim::HwProfile;
use crate::quant::{layer_size_bits, PLAN_BITS};
use crate::sensitivity::SensitivityReport;

/// Cells above which the DP coarsens its size unit (and stops being exact).
pub const MAX_DP_CELLS: u64 = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeLimit {
    /// Absolute weight storage in bits.
    Bits(u64),
    /// `size4 + ratio * (size8 - size4)`, ratio in [0, 1].
    Ratio(f64),
}

impl SizeLimit {
    pub fn resolve(&self, size4: u64, size8: u64) -> Result<u64> {
        match *self {
            SizeLimit::Bits(b) => Ok(b),
            SizeLimit::Ratio(r) => {
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::config("planner.ratio", format!("{r} is outside [0, 1]")));
                }
                Ok(size4 + (r * (size8 - size4) as f64).floor() as u64)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub beta: f64,
    pub gamma: f64,
    pub limit: SizeLimit,
    pub candidates: Vec<u8>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            gamma: 0.5,
            limit: SizeLimit::Ratio(0.5),
            candidates: PLAN_BITS.to_vec(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        check_weights(self.beta, self.gamma)?;
        let mut c = self.candidates.clone();
        c.sort_unstable();
        if c != PLAN_BITS {
            return Err(Error::config(
                "planner.candidates",
                format!("{:?} unsupported; the solver handles exactly {{4, 8}}", self.candidates),
            ));
        }
        if let SizeLimit::Ratio(r) = self.limit {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config("planner.ratio", format!("{r} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn check_weights(beta: f64, gamma: f64) -> Result<()> {
    if !(beta >= 0.0 && gamma >= 0.0) {
        return Err(Error::config("planner.beta", "beta and gamma must be non-negative"));
    }
    if (beta + gamma - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "planner.gamma",
            format!("beta + gamma must equal 1, got {beta} + {gamma}"),
        ));
    }
    Ok(())
}

/// Min-max scaling to [0, 1]; a constant vector maps to zeros.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

pub fn omega(
    omega_hat: &[f64],
    cycles_hat: &[f64],
    energy_hat: &[f64],
    beta: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    check_weights(beta, gamma)?;
    if omega_hat.len() != cycles_hat.len() || omega_hat.len() != energy_hat.len() {
        return Err(Error::InvalidArgument("metric vectors differ in length".into()));
    }
    Ok(omega_hat
        .iter()
        .zip(cycles_hat.iter().zip(energy_hat))
        .map(|(w, (c, e))| beta * w - gamma / 2.0 * (c + e))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMetrics {
    pub omega_hat: Vec<f64>,
    pub cycles_hat: Vec<f64>,
    pub energy_hat: Vec<f64>,
    pub merit: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    /// DP table cells evaluated.
    pub cells: u64,
    /// Bits per DP capacity step.
    pub unit_bits: u64,
    /// False only when the table had to be coarsened past the exact unit.
    pub exact: bool,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub bits: Vec<u8>,
    /// `Σ b_i Ω_i`, summed in layer order.
    pub objective: f64,
    pub size_bits: u64,
    pub limit_bits: u64,
    pub size4_bits: u64,
    pub size8_bits: u64,
    pub stats: SolverStats,
}

pub fn objective(bits: &[u8], merit: &[f64]) -> f64 {
    bits.iter().zip(merit).map(|(&b, &m)| b as f64 * m).sum()
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Exact maximizer of `Σ b_i Ω_i` with `Σ size_i(b_i) <= limit`.
///
/// Only layers with `Ω_i > 0` are upgrade candidates; among plans of equal
/// objective the one upgrading lower layer indices wins.
pub fn solve_bitplan(merit: &[f64], sizes4: &[u64], sizes8: &[u64], limit: u64) -> Result<PlanResult> {
    let start = Instant::now();
    let n = merit.len();
    if sizes4.len() != n || sizes8.len() != n {
        return Err(Error::InvalidArgument("merit and size vectors differ in length".into()));
    }
    if let Some(i) = merit.iter().position(|m| !m.is_finite()) {
        return Err(Error::NumericFailure {
            layer: i,
            what: "non-finite merit".into(),
        });
    }
    if let Some(i) = (0..n).find(|&i| sizes8[i] < sizes4[i]) {
        return Err(Error::InvalidArgument(format!("layer {i}: 8-bit size below 4-bit size")));
    }
    let size4: u64 = sizes4.iter().sum();
    let size8: u64 = sizes8.iter().sum();
    if limit < size4 {
        return Err(Error::Infeasible(format!(
            "size limit {limit} bits is below the all-4-bit size {size4} bits"
        )));
    }
    let slack = limit - size4;

    let items: Vec<usize> = (0..n).filter(|&i| merit[i] > 0.0).collect();
    let deltas: Vec<u64> = items.iter().map(|&i| sizes8[i] - sizes4[i]).collect();
    let mut bits = vec![4u8; n];
    let mut stats = SolverStats {
        cells: 0,
        unit_bits: 1,
        exact: true,
        runtime_secs: 0.0,
    };

    if deltas.iter().sum::<u64>() <= slack {
        for &i in &items {
            bits[i] = 8;
        }
    } else {
        let mut unit = deltas.iter().fold(0, |g, &d| gcd(g, d)).max(1);
        let mut cap = slack / unit;
        while (cap + 1) * items.len() as u64 > MAX_DP_CELLS {
            unit *= 2;
            cap = slack / unit;
            stats.exact = false;
        }
        stats.unit_bits = unit;
        let weights: Vec<usize> = deltas.iter().map(|d| d.div_ceil(unit) as usize).collect();
        let gains: Vec<f64> = items.iter().map(|&i| 4.0 * merit[i]).collect();
        let cap = cap as usize;

        // best[c]: optimum over items k.. with capacity c; take[k][c] records
        // whether item k is upgraded there. Ties go to upgrading.
        let m = items.len();
        let mut best = vec![0.0f64; cap + 1];
        let mut take = vec![false; m * (cap + 1)];
        for k in (0..m).rev() {
            let w = weights[k];
            let row = &mut take[k * (cap + 1)..(k + 1) * (cap + 1)];
            for c in (w..=cap).rev() {
                let with = best[c - w] + gains[k];
                if with >= best[c] {
                    best[c] = with;
                    row[c] = true;
                }
            }
            stats.cells += (cap + 1) as u64;
        }
        let mut c = cap;
        for k in 0..m {
            if take[k * (cap + 1) + c] {
                bits[items[k]] = 8;
                c -= weights[k];
            }
        }
    }

    let size_bits = (0..n).map(|i| if bits[i] == 8 { sizes8[i] } else { sizes4[i] }).sum();
    stats.runtime_secs = start.elapsed().as_secs_f64();
    Ok(PlanResult {
        objective: objective(&bits, merit),
        bits,
        size_bits,
        limit_bits: limit,
        size4_bits: size4,
        size8_bits: size8,
        stats,
    })
}

/// Planner output with the metrics that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub config: PlannerConfig,
    /// Raw per-layer inputs: sensitivity, 8-bit cycles, 8-bit energy.
    pub sensitivity: Vec<f64>,
    pub cycles: Vec<u64>,
    pub energy: Vec<f64>,
    pub weight_counts: Vec<usize>,
    pub metrics: NormalizedMetrics,
    pub result: PlanResult,
}

impl Plan {
    pub fn bits(&self) -> &[u8] {
        &self.result.bits
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Normalizes the report and the 8-bit profile rows, fuses them and solves.
pub fn plan_pipeline(report: &SensitivityReport, profile: &HwProfile, config: &PlannerConfig) -> Result<Plan> {
    let start = Instant::now();
    config.validate()?;
    let rows = profile.rows_at(8)?;
    if rows.len() != report.omega.len() {
        return Err(Error::InvalidArgument(format!(
            "sensitivity report has {} layers, profile has {}",
            report.omega.len(),
            rows.len()
        )));
    }
    if let Some(i) = report.omega.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::NumericFailure {
            layer: report.layers.get(i).copied().unwrap_or(i),
            what: format!("sensitivity {} is not a finite non-negative value", report.omega[i]),
        });
    }
    let cycles: Vec<u64> = rows.iter().map(|r| r.cost.total).collect();
    let energy: Vec<f64> = rows.iter().map(|r| r.cost.energy).collect();
    let counts: Vec<usize> = rows.iter().map(|r| r.weight_count).collect();

    let omega_hat = normalize(&report.omega);
    let cycles_hat = normalize(&cycles.iter().map(|&c| c as f64).collect::<Vec<_>>());
    let energy_hat = normalize(&energy);
    let merit = omega(&omega_hat, &cycles_hat, &energy_hat, config.beta, config.gamma)?;

    let sizes4: Vec<u64> = counts.iter().map(|&c| layer_size_bits(c, 4)).collect();
    let sizes8: Vec<u64> = counts.iter().map(|&c| layer_size_bits(c, 8)).collect();
    let limit = config.limit.resolve(sizes4.iter().sum(), sizes8.iter().sum())?;
    let mut result = solve_bitplan(&merit, &sizes4, &sizes8, limit)?;
    result.stats.runtime_secs = start.elapsed().as_secs_f64();
    log::info!(
        "plan {:?}: {} / {} bits, objective {:.4}",
        result.bits,
        result.size_bits,
        limit,
        result.objective
    );

    Ok(Plan {
        config: config.clone(),
        sensitivity: report.omega.clone(),
        cycles,
        energy,
        weight_counts: counts,
        metrics: NormalizedMetrics {
            omega_hat,
            cycles_hat,
            energy_hat,
            merit,
        },
        result,
    })
}
