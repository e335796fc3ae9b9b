//! Classification functionals: f, g = log f, the moment matrix m(x) with its
//! Perron root rho(x), lambda = inf over [0,1], the tangent point beta_0 and
//! the regime verdict.

use crate::env::{EnvironmentSpec, Kind, MomentIndex, ScalarLaw, VectorFamily};
use crate::error::{Error, Result};
use crate::numerics::{bisect, golden_min};
use serde::Serialize;

/// Numerical contract constants. The critical band widens the exact
/// lambda = 1 condition of the theory into something a floating-point
/// pipeline can decide; it is reported with every verdict.
pub const CRITICAL_BAND: f64 = 1e-6;
pub const ARGMIN_TOL: f64 = 1e-8;
pub const PERRON_TOL: f64 = 1e-12;
pub const PERRON_MAX_ITER: usize = 10_000;
pub const DERIVATIVE_STEP: f64 = 1e-5;
/// |f'(1)| below this is treated as an ambiguous zero sign.
pub const DERIVATIVE_BAND: f64 = 1e-9;

/// The d x d matrix of E eta_ij^x.
#[derive(Debug, Clone)]
pub struct MomentMatrix {
    pub x: f64,
    pub entries: Vec<Vec<f64>>,
}

impl MomentMatrix {
    pub fn d(&self) -> usize {
        self.entries.len()
    }

    /// Regularity: some power N <= d^2 has strictly positive entries.
    /// Checked on the boolean support pattern.
    pub fn is_regular(&self) -> bool {
        let d = self.d();
        let support: Vec<Vec<bool>> = self
            .entries
            .iter()
            .map(|row| row.iter().map(|&e| e > 0.0).collect())
            .collect();
        let mut power = support.clone();
        for _ in 0..d * d {
            if power.iter().all(|row| row.iter().all(|&b| b)) {
                return true;
            }
            let mut next = vec![vec![false; d]; d];
            for i in 0..d {
                for j in 0..d {
                    next[i][j] = (0..d).any(|k| power[i][k] && support[k][j]);
                }
            }
            power = next;
        }
        false
    }
}

/// Perron data at one abscissa: the largest eigenvalue with left and right
/// eigenvectors normalised to l . r = 1 and sum r_i = 1.
#[derive(Debug, Clone)]
pub struct SpectralProfile {
    pub x: f64,
    pub rho: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Ergodic,
    NullRecurrent,
    Transient,
    CriticalUndetermined,
}

/// Diagnostics accompanying a verdict.
#[derive(Debug, Clone, Serialize)]
pub struct Evidence {
    /// f (vector) or rho (matrix) at the interval endpoints.
    pub value_at_0: f64,
    pub value_at_1: f64,
    /// f'(1) = sum_i E eta_i log eta_i (vector model only).
    pub fprime1: Option<f64>,
    /// g'(1) = f'(1)/f(1) (vector model only).
    pub gprime1: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationVerdict {
    pub lambda: f64,
    pub x0: f64,
    pub verdict: Verdict,
    pub evidence: Evidence,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    pub critical_band: f64,
    pub argmin_tol: f64,
    pub derivative_band: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            critical_band: CRITICAL_BAND,
            argmin_tol: ARGMIN_TOL,
            derivative_band: DERIVATIVE_BAND,
        }
    }
}

/// f(x) = E sum_i eta_i^x for the vector model.
pub fn f_of_x(spec: &EnvironmentSpec, x: f64) -> Result<f64> {
    match &spec.kind {
        Kind::Vector(_) => {
            let mut sum = 0.0;
            for i in 1..=spec.d {
                sum += spec.moment(x, MomentIndex::Child(i as u8))?;
            }
            Ok(sum)
        }
        Kind::Matrix(_) => Err(Error::Precondition(
            "f(x) is defined for the vector model; use the moment matrix".into(),
        )),
    }
}

/// g(x) = log f(x).
pub fn g_of_x(spec: &EnvironmentSpec, x: f64) -> Result<f64> {
    Ok(f_of_x(spec, x)?.ln())
}

/// f'(x) = sum_i E eta_i^x log eta_i; closed form for discrete families,
/// central difference with h = 1e-5 otherwise.
pub fn f_prime(spec: &EnvironmentSpec, x: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut closed = true;
    for i in 1..=spec.d {
        match spec.log_moment(x, MomentIndex::Child(i as u8)) {
            Some(t) => sum += t,
            None => {
                closed = false;
                break;
            }
        }
    }
    if closed {
        return Ok(sum);
    }
    let h = DERIVATIVE_STEP;
    Ok((f_of_x(spec, x + h)? - f_of_x(spec, x - h)?) / (2.0 * h))
}

/// g'(x) = f'(x)/f(x).
pub fn g_prime(spec: &EnvironmentSpec, x: f64) -> Result<f64> {
    Ok(f_prime(spec, x)? / f_of_x(spec, x)?)
}

/// Moment matrix m(x) for the coloured model.
pub fn moment_matrix(spec: &EnvironmentSpec, x: f64) -> Result<MomentMatrix> {
    match &spec.kind {
        Kind::Matrix(_) => {
            let d = spec.d;
            let mut entries = vec![vec![0.0; d]; d];
            for (i, row) in entries.iter_mut().enumerate() {
                for (j, e) in row.iter_mut().enumerate() {
                    *e = spec.moment(x, MomentIndex::Bicolour(i as u8 + 1, j as u8 + 1))?;
                }
            }
            Ok(MomentMatrix { x, entries })
        }
        Kind::Vector(_) => Err(Error::Precondition(
            "moment matrix is defined for the matrix model".into(),
        )),
    }
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn vec_mat(v: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
    (0..m.len())
        .map(|j| v.iter().zip(m).map(|(a, row)| a * row[j]).sum())
        .collect()
}

fn power_iterate(m: &[Vec<f64>], transpose: bool) -> Result<(f64, Vec<f64>)> {
    let d = m.len();
    let mut v = vec![1.0 / d as f64; d];
    let mut rho = 0.0;
    for _ in 0..PERRON_MAX_ITER {
        let w = if transpose { vec_mat(&v, m) } else { mat_vec(m, &v) };
        let s: f64 = w.iter().sum();
        if s <= 0.0 {
            return Err(Error::NotRegular("power iteration collapsed to zero".into()));
        }
        rho = s;
        let next: Vec<f64> = w.iter().map(|x| x / s).collect();
        // residual check against the un-normalised image
        let img = if transpose { vec_mat(&next, m) } else { mat_vec(m, &next) };
        let lambda: f64 = img.iter().sum();
        let resid = img
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - lambda * b).abs())
            .fold(0.0f64, f64::max);
        v = next;
        if resid <= PERRON_TOL * lambda {
            return Ok((lambda, v));
        }
    }
    Err(Error::NonConvergence(format!(
        "perron power iteration: residual above {PERRON_TOL:.0e} after {PERRON_MAX_ITER} iterations"
    )))
}

/// Perron root and eigenvectors of a regular moment matrix.
pub fn perron(m: &MomentMatrix) -> Result<SpectralProfile> {
    if !m.is_regular() {
        return Err(Error::NotRegular(
            "no power N <= d^2 of m(x) has all entries positive".into(),
        ));
    }
    let (rho, mut right) = power_iterate(&m.entries, false)?;
    let (_, mut left) = power_iterate(&m.entries, true)?;
    // normalise: sum r_i = 1, l . r = 1
    let rs: f64 = right.iter().sum();
    right.iter_mut().for_each(|r| *r /= rs);
    let lr: f64 = left.iter().zip(&right).map(|(l, r)| l * r).sum();
    left.iter_mut().for_each(|l| *l /= lr);
    Ok(SpectralProfile { x: m.x, rho, left, right })
}

/// rho(x) for the matrix model.
pub fn rho_of_x(spec: &EnvironmentSpec, x: f64) -> Result<f64> {
    Ok(perron(&moment_matrix(spec, x)?)?.rho)
}

/// The classification functional at x: f for the vector model, rho for the
/// matrix model.
pub fn criterion_value(spec: &EnvironmentSpec, x: f64) -> Result<f64> {
    match &spec.kind {
        Kind::Vector(_) => f_of_x(spec, x),
        Kind::Matrix(_) => rho_of_x(spec, x),
    }
}

/// lambda = inf over [0,1] of the classification functional, located by
/// golden-section search (the log of the functional is convex). Ties
/// resolve toward smaller x.
pub fn lambda_inf(spec: &EnvironmentSpec) -> Result<(f64, f64)> {
    // surface domain errors before searching
    criterion_value(spec, 0.0)?;
    criterion_value(spec, 1.0)?;
    let (x0, lambda) = golden_min(
        |x| criterion_value(spec, x).expect("moments finite on [0,1]"),
        0.0,
        1.0,
        ARGMIN_TOL,
    );
    Ok((lambda, x0))
}

/// Regime verdict following the trichotomy for the vector model and the
/// two-sided criterion for the matrix model. lambda within the critical
/// band of 1 is treated as lambda = 1.
pub fn classify(spec: &EnvironmentSpec) -> Result<ClassificationVerdict> {
    let (lambda, x0) = lambda_inf(spec)?;
    let value_at_0 = criterion_value(spec, 0.0)?;
    let value_at_1 = criterion_value(spec, 1.0)?;
    let (fprime1, gprime1) = if spec.is_vector() {
        let fp = f_prime(spec, 1.0)?;
        (Some(fp), Some(fp / value_at_1))
    } else {
        (None, None)
    };
    let critical = (lambda - 1.0).abs() <= CRITICAL_BAND;
    let verdict = if critical {
        match fprime1 {
            Some(fp) if fp < -DERIVATIVE_BAND => Verdict::NullRecurrent,
            _ => Verdict::CriticalUndetermined,
        }
    } else if lambda < 1.0 {
        Verdict::Ergodic
    } else {
        Verdict::Transient
    };
    Ok(ClassificationVerdict {
        lambda,
        x0,
        verdict,
        evidence: Evidence { value_at_0, value_at_1, fprime1, gprime1 },
        tolerances: Tolerances::default(),
    })
}

/// Result of the tangent-point search: the abscissa where the straight line
/// from the origin is tangent to the graph of g, i.e. the root of
/// x g'(x) - g(x) = 0 in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TangentPoint {
    Found { beta0: f64 },
    /// No root in (0, 1]; geometry degenerate (e.g. g affine, or the
    /// tangency lies beyond the unit interval).
    Absent,
}

pub fn tangent_point(spec: &EnvironmentSpec) -> Result<TangentPoint> {
    if !spec.is_vector() {
        return Err(Error::Precondition("tangent point needs the vector model".into()));
    }
    let h = |x: f64| -> f64 {
        let g = g_of_x(spec, x).expect("finite on search interval");
        let gp = g_prime(spec, x).expect("finite on search interval");
        x * gp - g
    };
    // h is strictly increasing for strictly convex g; bracket on a grid
    let lo = 1e-6;
    let grid = 64;
    let mut prev = (lo, h(lo));
    for k in 1..=grid {
        let x = lo + (1.0 - lo) * k as f64 / grid as f64;
        let hx = h(x);
        if prev.1 <= 0.0 && hx >= 0.0 {
            let root = bisect(h, prev.0, x, 1e-10).expect("bracketed");
            return Ok(TangentPoint::Found { beta0: root });
        }
        prev = (x, hx);
    }
    Ok(TangentPoint::Absent)
}

/// Derived spec whose ratio laws are eta^beta / f(beta); forces f(1) = 1.
/// Supported for the discrete vector families (power transforms of atoms).
pub fn renormalized_family(spec: &EnvironmentSpec, beta: f64) -> Result<EnvironmentSpec> {
    if !spec.is_vector() {
        return Err(Error::Precondition("renormalisation applies to the vector model".into()));
    }
    let fb = f_of_x(spec, beta)?;
    if !(fb.is_finite() && fb > 0.0) {
        return Err(Error::MomentDomain { x: beta, reason: "f(beta) must be finite and > 0".into() });
    }
    let transform_law = |law: &ScalarLaw| -> ScalarLaw {
        match law {
            ScalarLaw::Dirac { value } => ScalarLaw::Dirac { value: value.powf(beta) / fb },
            ScalarLaw::Finite { values, probs } => ScalarLaw::Finite {
                values: values.iter().map(|v| v.powf(beta) / fb).collect(),
                probs: probs.clone(),
            },
        }
    };
    let family = match &spec.kind {
        Kind::Vector(f) => match f {
            VectorFamily::DiracRatios { ratios } => VectorFamily::DiracRatios {
                ratios: ratios.iter().map(|c| c.powf(beta) / fb).collect(),
            },
            VectorFamily::DiracProbs { probs } => VectorFamily::DiracRatios {
                ratios: probs[1..].iter().map(|p| (p / probs[0]).powf(beta) / fb).collect(),
            },
            VectorFamily::IidRatio { law } => VectorFamily::IidRatio { law: transform_law(law) },
            VectorFamily::RatioLaws { laws } => {
                VectorFamily::RatioLaws { laws: laws.iter().map(transform_law).collect() }
            }
            VectorFamily::JointDiscrete { atoms } => {
                // power-transform each atom's ratio row
                let laws: Vec<ScalarLaw> = (1..=spec.d)
                    .map(|i| ScalarLaw::Finite {
                        values: atoms
                            .iter()
                            .map(|a| (a.probs[i] / a.probs[0]).powf(beta) / fb)
                            .collect(),
                        probs: atoms.iter().map(|a| a.weight).collect(),
                    })
                    .collect();
                VectorFamily::RatioLaws { laws }
            }
            VectorFamily::Dirichlet { .. } => {
                return Err(Error::Precondition(
                    "renormalisation of the dirichlet family is not closed-form; \
                     use a discrete family"
                        .into(),
                ))
            }
        },
        Kind::Matrix(_) => unreachable!(),
    };
    EnvironmentSpec::new(spec.d, spec.root_colour, Kind::Vector(family), spec.master_seed)
}
