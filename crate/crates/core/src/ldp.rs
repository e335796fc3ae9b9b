//! Large-deviation machinery for blocks of gamma levels: block moment
//! functions, the Legendre transform, the Fenchel maximiser y, the
//! Chernoff-Cramer lower bound, and its empirical verification by sampling.

use crate::analytics::ARGMIN_TOL;
use crate::chromatic::{block_witness, chi_given, psi, Direction};
use crate::env::{EnvironmentSpec, Kind, MatrixFamily, MomentIndex, ScalarLaw};
use crate::error::{Error, Result};
use crate::numerics::golden_min;
use crate::rng::{stream, Domain};
use rayon::prelude::*;
use serde::Serialize;

/// Upper end of the inner minimisation domain for the Fenchel equality;
/// the discrete matrix families have finite moments for every x >= 0.
const INNER_X_MAX: f64 = 16.0;
const OUTER_LOG_Y_MIN: f64 = -40.0;

/// A block: rational direction, block length gamma, integer type counts
/// nu_ij = beta_ij * gamma, and the number of chained blocks k.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub beta_hat: Direction,
    pub gamma: u32,
    pub nu: Vec<Vec<u32>>,
    pub k: u32,
}

impl BlockSpec {
    pub fn new(beta_hat: Direction, gamma: u32, nu: Vec<Vec<u32>>, k: u32) -> Result<Self> {
        let total: u32 = nu.iter().flatten().sum();
        if total != gamma {
            return Err(Error::Config(format!(
                "block counts sum to {total}, expected gamma = {gamma}"
            )));
        }
        for (i, row) in nu.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let expect = beta_hat.beta[i][j] * gamma as f64;
                if (v as f64 - expect).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "nu_{}{} = {v} does not equal beta_hat * gamma = {expect}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(BlockSpec { beta_hat, gamma, nu, k })
    }

    /// Start colour admitting a block circuit, with its type sequence.
    pub fn witness(&self) -> Result<(u8, Vec<u8>)> {
        let d = self.nu.len();
        for c in 1..=d as u8 {
            if let Some(seq) = block_witness(&self.nu, c) {
                return Ok((c, seq));
            }
        }
        Err(Error::Config(
            "no admissible block path pattern for these counts".into(),
        ))
    }
}

fn require_matrix(spec: &EnvironmentSpec) -> Result<&Vec<Vec<ScalarLaw>>> {
    match &spec.kind {
        Kind::Matrix(MatrixFamily::BicolourLaws { laws }) => Ok(laws),
        _ => Err(Error::Precondition(
            "block machinery needs the matrix (coloured) model".into(),
        )),
    }
}

/// tau(x) = E A_1^x = prod_ij m_ij(x)^{nu_ij} = chi(x, beta_hat)^gamma for
/// independent-edge families.
pub fn block_log_mgf(spec: &EnvironmentSpec, block: &BlockSpec, x: f64) -> Result<f64> {
    let laws = require_matrix(spec)?;
    let mut log_tau = 0.0;
    for (i, row) in block.nu.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            if count > 0 {
                log_tau += count as f64 * laws[i][j].moment(x).ln();
            }
        }
    }
    Ok(log_tau.exp())
}

/// alpha = E log A_1 = sum_ij nu_ij E log eta_ij.
pub fn block_mean_log(spec: &EnvironmentSpec, block: &BlockSpec) -> Result<f64> {
    let mut alpha = 0.0;
    for (i, row) in block.nu.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            if count > 0 {
                let e_log = spec
                    .log_moment(0.0, MomentIndex::Bicolour(i as u8 + 1, j as u8 + 1))
                    .ok_or_else(|| {
                        Error::Precondition("block mean log needs closed-form laws".into())
                    })?;
                alpha += count as f64 * e_log;
            }
        }
    }
    Ok(alpha)
}

/// Monte Carlo oracle for tau(x): average of A^x over freshly sampled blocks.
pub fn mc_block_moment(
    spec: &EnvironmentSpec,
    block: &BlockSpec,
    x: f64,
    samples: usize,
) -> Result<(f64, f64)> {
    let laws = require_matrix(spec)?;
    let (start, seq) = block.witness()?;
    let draws: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream(spec.master_seed, Domain::LdpSamples, s as u64);
            let mut log_a = 0.0;
            let mut prev = start;
            for &c in &seq {
                let eta = laws[(prev - 1) as usize][(c - 1) as usize].sample(&mut rng);
                log_a += eta.ln();
                prev = c;
            }
            (x * log_a).exp()
        })
        .collect();
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Tabulated tau on [0,1] together with alpha = E log A_1.
#[derive(Debug, Clone)]
pub struct RateFunction {
    pub xs: Vec<f64>,
    pub log_tau: Vec<f64>,
    pub alpha: f64,
}

impl RateFunction {
    pub fn tabulate(spec: &EnvironmentSpec, block: &BlockSpec, points: usize) -> Result<Self> {
        let xs: Vec<f64> = (0..=points).map(|i| i as f64 / points as f64).collect();
        let log_tau = xs
            .iter()
            .map(|&x| Ok(block_log_mgf(spec, block, x)?.ln()))
            .collect::<Result<Vec<f64>>>()?;
        let alpha = block_mean_log(spec, block)?;
        Ok(RateFunction { xs, log_tau, alpha })
    }

    fn log_tau_at(&self, x: f64) -> f64 {
        // piecewise-linear interpolation on the tabulation grid
        let n = self.xs.len() - 1;
        let pos = (x.clamp(0.0, 1.0)) * n as f64;
        let i = (pos.floor() as usize).min(n - 1);
        let frac = pos - i as f64;
        self.log_tau[i] * (1.0 - frac) + self.log_tau[i + 1] * frac
    }

    /// Legendre transform I(theta) = sup_{x in [0,1]} (x theta - log tau(x)).
    pub fn legendre(&self, theta: f64) -> f64 {
        let (_, neg) = golden_min(|x| -(x * theta - self.log_tau_at(x)), 0.0, 1.0, 1e-10);
        let at_zero = 0.0; // objective at x = 0 is exactly 0
        (-neg).max(at_zero)
    }
}

/// Result of the nested optimisation behind Fenchel's equality.
#[derive(Debug, Clone, Serialize)]
pub struct FenchelResult {
    pub y: f64,
    /// sup_y inf_x y^(1-x) chi(x).
    pub lhs: f64,
    /// inf_{x in [0,1]} chi(x).
    pub rhs: f64,
    pub relative_residual: f64,
    /// Supremum attained at the boundary y = 1 (degenerate family).
    pub at_boundary: bool,
}

/// The maximising y in ]0,1] of inf_{x >= 0} y^(1-x) chi(x, beta_hat),
/// verified against inf_{x in [0,1]} chi.
pub fn fenchel_y(spec: &EnvironmentSpec, beta_hat: &Direction) -> Result<FenchelResult> {
    let laws = require_matrix(spec)?;
    let d = spec.d;
    let log_chi = |x: f64| -> f64 {
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                let b = beta_hat.beta[i][j];
                if b > 0.0 {
                    acc += b * laws[i][j].moment(x).ln();
                }
            }
        }
        acc
    };
    let inner = |t: f64| -> f64 {
        // inf over x >= 0 of (1-x) t + log chi(x)
        let (_, v) = golden_min(|x| (1.0 - x) * t + log_chi(x), 0.0, INNER_X_MAX, 1e-12);
        v
    };
    // outer maximisation over t = log y in [OUTER_LOG_Y_MIN, 0]
    let (t_star, neg_lhs) = golden_min(|t| -inner(t), OUTER_LOG_Y_MIN, 0.0, 1e-12);
    let lhs = (-neg_lhs).exp();
    let (_, rhs) = golden_min(|x: f64| log_chi(x).exp(), 0.0, 1.0, ARGMIN_TOL);
    let y = t_star.exp();
    let relative_residual = (lhs - rhs).abs() / rhs;
    Ok(FenchelResult {
        y,
        lhs,
        rhs,
        relative_residual,
        at_boundary: y >= 1.0 - 1e-9,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChernoffBound {
    pub k: u32,
    pub y: f64,
    /// Tail threshold y^(gamma k).
    pub threshold: f64,
    /// Lower bound (1 / (y psi(beta_hat)))^(gamma k).
    pub lower_bound: f64,
    /// Bound exceeds 1: parameters are vacuous for a probability.
    pub vacuous: bool,
    /// lambda > 1 as the proposition assumes.
    pub supercritical: bool,
}

/// The Chernoff-Cramer tail bound for k chained blocks.
pub fn chernoff_bound(
    spec: &EnvironmentSpec,
    block: &BlockSpec,
    lambda: f64,
) -> Result<ChernoffBound> {
    let fen = fenchel_y(spec, &block.beta_hat)?;
    let y = fen.y;
    let p = psi(&block.beta_hat);
    let exponent = (block.gamma * block.k) as f64;
    let lower_bound = (1.0 / (y * p)).powf(exponent);
    Ok(ChernoffBound {
        k: block.k,
        y,
        threshold: y.powf(exponent),
        lower_bound,
        vacuous: lower_bound > 1.0,
        supercritical: lambda > 1.0,
    })
}

/// Monte Carlo estimate of P(xi[u;v] > threshold) over `samples` independent
/// k-block paths inside the constrained subtree. Returns (estimate, se).
pub fn empirical_tail_prob(
    spec: &EnvironmentSpec,
    block: &BlockSpec,
    threshold: f64,
    samples: usize,
) -> Result<(f64, f64)> {
    let laws = require_matrix(spec)?;
    let (start, seq) = block.witness()?;
    let log_threshold = threshold.ln();
    let hits: u64 = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream(spec.master_seed, Domain::LdpSamples, s as u64);
            let mut log_prod = 0.0;
            let mut prev = start;
            for _ in 0..block.k {
                for &c in &seq {
                    let eta = laws[(prev - 1) as usize][(c - 1) as usize].sample(&mut rng);
                    log_prod += eta.ln();
                    prev = c;
                }
            }
            u64::from(log_prod > log_threshold)
        })
        .sum();
    let n = samples as f64;
    let p = hits as f64 / n;
    Ok((p, (p * (1.0 - p) / n).sqrt()))
}

/// One row of the k-scan emitted by the chernoff experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ChernoffRow {
    pub k: u32,
    pub threshold: f64,
    pub bound: f64,
    pub estimate: f64,
    pub stderr: f64,
}

/// Full orchestration: fixed direction (unless an explicit rational one is
/// supplied), rational approximation, Fenchel y, then the k-scan comparing
/// the analytic lower bound against sampled tail probabilities.
pub struct ChernoffExperiment {
    pub beta_hat: Direction,
    pub gamma: u32,
    pub nu: Vec<Vec<u32>>,
    pub y: f64,
    pub fenchel_residual: f64,
    pub lambda: f64,
    pub rows: Vec<ChernoffRow>,
    /// Smallest k whose estimate clears the bound at 3 standard errors.
    pub first_confident_k: Option<u32>,
}

pub fn chernoff_experiment(
    spec: &EnvironmentSpec,
    explicit: Option<(Direction, u32, Vec<Vec<u32>>)>,
    max_denominator: u32,
    k_range: std::ops::RangeInclusive<u32>,
    samples: usize,
) -> Result<ChernoffExperiment> {
    let (lambda, _) = crate::analytics::lambda_inf(spec)?;
    let (beta_hat, gamma, nu) = match explicit {
        Some(t) => t,
        None => {
            let fd = crate::chromatic::find_fixed_direction(spec, None)?;
            crate::chromatic::rational_approximation(&fd.beta, max_denominator)?
        }
    };
    let fen = fenchel_y(spec, &beta_hat)?;
    let mut rows = Vec::new();
    let mut first_confident_k = None;
    for k in k_range {
        let block = BlockSpec::new(beta_hat.clone(), gamma, nu.clone(), k)?;
        let bound = chernoff_bound(spec, &block, lambda)?;
        let (estimate, stderr) = empirical_tail_prob(spec, &block, bound.threshold, samples)?;
        if first_confident_k.is_none()
            && !bound.vacuous
            && estimate - 3.0 * stderr > bound.lower_bound
        {
            first_confident_k = Some(k);
        }
        rows.push(ChernoffRow {
            k,
            threshold: bound.threshold,
            bound: bound.lower_bound,
            estimate,
            stderr,
        });
    }
    Ok(ChernoffExperiment {
        beta_hat,
        gamma,
        nu,
        y: fen.y,
        fenchel_residual: fen.relative_residual,
        lambda,
        rows,
        first_confident_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chromatic::{find_fixed_direction, rational_approximation};
    use crate::env::Kind;

    fn constant_matrix_spec(c: f64) -> EnvironmentSpec {
        let law = ScalarLaw::Dirac { value: c };
        EnvironmentSpec::new(
            2,
            1,
            Kind::Matrix(MatrixFamily::BicolourLaws {
                laws: vec![vec![law.clone(), law.clone()], vec![law.clone(), law]],
            }),
            9,
        )
        .unwrap()
    }

    /// Supercritical family with a non-degenerate Fenchel y: every bicolour
    /// is {0.25 w.p. 0.6, 4 w.p. 0.4}, so E log eta < 0 while lambda ~ 1.96.
    fn drifted_matrix_spec() -> EnvironmentSpec {
        let law = ScalarLaw::Finite { values: vec![0.25, 4.0], probs: vec![0.6, 0.4] };
        EnvironmentSpec::new(
            2,
            1,
            Kind::Matrix(MatrixFamily::BicolourLaws {
                laws: vec![vec![law.clone(), law.clone()], vec![law.clone(), law]],
            }),
            9,
        )
        .unwrap()
    }

    fn uniform_block(k: u32) -> BlockSpec {
        BlockSpec::new(Direction::uniform(2), 4, vec![vec![1, 1], vec![1, 1]], k).unwrap()
    }

    #[test]
    fn tau_closed_forms() {
        let spec = constant_matrix_spec(0.7);
        let block = uniform_block(1);
        for x in [0.0, 0.5, 1.0] {
            let tau = block_log_mgf(&spec, &block, x).unwrap();
            assert!((tau - 0.7f64.powf(4.0 * x)).abs() < 1e-12);
        }
        assert!((block_log_mgf(&spec, &block, 0.0).unwrap() - 1.0).abs() < 1e-15);
        // tau = chi^gamma
        let chi_val = crate::chromatic::chi(&spec, 0.5, &block.beta_hat).unwrap();
        let tau = block_log_mgf(&spec, &block, 0.5).unwrap();
        assert!((tau - chi_val.powi(4)).abs() < 1e-12);
    }

    #[test]
    fn tau_against_mc_oracle() {
        let spec = drifted_matrix_spec();
        let block = uniform_block(1);
        let x = 0.5;
        let exact = block_log_mgf(&spec, &block, x).unwrap();
        let (mc, se) = mc_block_moment(&spec, &block, x, 1_000_000).unwrap();
        assert!(
            (mc - exact).abs() <= 4.0 * se,
            "mc {mc} vs exact {exact} (se {se})"
        );
    }

    #[test]
    fn legendre_zero_at_mean_log() {
        let spec = drifted_matrix_spec();
        let block = uniform_block(1);
        let rate = RateFunction::tabulate(&spec, &block, 2000).unwrap();
        let alpha = rate.alpha;
        // E log A1 = 4 * E log eta
        let e_log = 0.6 * 0.25f64.ln() + 0.4 * 4f64.ln();
        assert!((alpha - 4.0 * e_log).abs() < 1e-12);
        let i0 = rate.legendre(alpha);
        assert!(i0.abs() <= 1e-8, "I(alpha) = {i0}");
        assert!(i0 >= 0.0);
        // deterministic block: I(log c) = 0
        let det = constant_matrix_spec(0.7);
        let rate = RateFunction::tabulate(&det, &uniform_block(1), 2000).unwrap();
        let i0 = rate.legendre(4.0 * 0.7f64.ln());
        assert!(i0.abs() <= 1e-10);
    }

    #[test]
    fn legendre_matches_direct_two_point_optimisation() {
        let spec = drifted_matrix_spec();
        let block = uniform_block(1);
        let rate = RateFunction::tabulate(&spec, &block, 2000).unwrap();
        let theta = rate.alpha + 0.8;
        let from_tab = rate.legendre(theta);
        // direct optimisation on the closed-form objective
        let (_, neg) = golden_min(
            |x| -(x * theta - block_log_mgf(&spec, &block, x).unwrap().ln()),
            0.0,
            1.0,
            1e-12,
        );
        let direct = (-neg).max(0.0);
        assert!(
            (from_tab - direct).abs() <= 1e-6,
            "tabulated {from_tab} vs direct {direct}"
        );
        // convexity of log tau on the grid
        for w in rate.log_tau.windows(3) {
            assert!(w[1] <= 0.5 * (w[0] + w[2]) + 1e-9);
        }
    }

    #[test]
    fn fenchel_constant_matrix() {
        // chi(x) = mu^x with mu < 1: y = mu and both sides equal mu
        let spec = constant_matrix_spec(0.7);
        let f = fenchel_y(&spec, &Direction::uniform(2)).unwrap();
        assert!((f.y - 0.7).abs() < 1e-6, "y = {}", f.y);
        assert!((f.rhs - 0.7).abs() < 1e-9);
        assert!(f.relative_residual <= 1e-6, "residual {}", f.relative_residual);
        assert!(!f.at_boundary);
    }

    #[test]
    fn fenchel_drifted_family() {
        let spec = drifted_matrix_spec();
        let f = fenchel_y(&spec, &Direction::uniform(2)).unwrap();
        // inf chi on [0,1] is interior: m(x) = 0.6*4^-x*... min = 2 sqrt(0.24)
        let expect_rhs = 2.0 * 0.24f64.sqrt();
        assert!((f.rhs - expect_rhs).abs() < 1e-9, "rhs {}", f.rhs);
        assert!(f.relative_residual <= 1e-6, "residual {}", f.relative_residual);
        assert!(f.y < 1.0 && f.y > 0.0);
        assert!(!f.at_boundary);
    }

    #[test]
    fn chernoff_bound_scales_with_k() {
        let spec = drifted_matrix_spec();
        let b1 = chernoff_bound(&spec, &uniform_block(2), 1.96).unwrap();
        let b2 = chernoff_bound(&spec, &uniform_block(4), 1.96).unwrap();
        // doubling k squares the bound and the threshold exactly
        assert!((b2.lower_bound - b1.lower_bound * b1.lower_bound).abs() <= 1e-12);
        assert!((b2.threshold - b1.threshold * b1.threshold).abs() <= 1e-12);
        assert!(b1.supercritical);
        assert!(!b1.vacuous);
    }

    #[test]
    fn empirical_tail_deterministic_cases() {
        // deterministic weights above the threshold: estimate 1.0
        let spec = constant_matrix_spec(2.0);
        let block = uniform_block(2);
        let (p, _) = empirical_tail_prob(&spec, &block, 1.5, 2000).unwrap();
        assert_eq!(p, 1.0);
        // and below: 0.0 (product = 2^8 = 256)
        let (p, _) = empirical_tail_prob(&spec, &block, 300.0, 2000).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn chernoff_experiment_on_supercritical_family() {
        let spec = drifted_matrix_spec();
        let fd = find_fixed_direction(&spec, None).unwrap();
        let (bh, gamma, nu) = rational_approximation(&fd.beta, 8).unwrap();
        assert!(gamma <= 8);
        let exp = chernoff_experiment(&spec, Some((bh, gamma, nu)), 8, 1..=6, 30_000).unwrap();
        assert!(exp.lambda > 1.0);
        assert!(exp.fenchel_residual <= 1e-6);
        let first = exp.first_confident_k.expect("bound should be cleared");
        for row in exp.rows.iter().filter(|r| r.k >= first) {
            assert!(
                row.estimate - 3.0 * row.stderr > row.bound,
                "k = {}: estimate {} vs bound {}",
                row.k,
                row.estimate,
                row.bound
            );
        }
    }
}
