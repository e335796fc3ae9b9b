//! Environment distribution families and quenched per-vertex sampling.
//!
//! The random environment assigns to every vertex of the rooted `d`-ary tree
//! a transition vector, and to every edge the ratio of outward to inward
//! transition probability. Sampling is keyed: the draw at a vertex is a pure
//! function of (master seed, path), so the infinite environment never needs
//! to be materialised and concurrent walkers see one consistent world.

use crate::error::{Error, Result};
use crate::rng::{Domain, Key};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

pub const NORMALIZATION_TOL: f64 = 1e-12;

/// A vertex of the rooted tree, identified by its letter sequence.
/// The empty sequence is the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexPath {
    letters: Vec<u8>,
}

impl VertexPath {
    pub fn root() -> Self {
        VertexPath { letters: Vec::new() }
    }

    /// Build a path, checking every letter lies in 1..=d.
    pub fn new(letters: Vec<u8>, d: usize) -> Result<Self> {
        if let Some(&bad) = letters.iter().find(|&&l| l == 0 || l as usize > d) {
            return Err(Error::Config(format!(
                "path letter {bad} out of range 1..={d}"
            )));
        }
        Ok(VertexPath { letters })
    }

    pub fn depth(&self) -> usize {
        self.letters.len()
    }

    pub fn is_root(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn letters(&self) -> &[u8] {
        &self.letters
    }

    /// First `k` letters of the path.
    pub fn truncated(&self, k: usize) -> Self {
        VertexPath { letters: self.letters[..k].to_vec() }
    }

    pub fn parent(&self) -> Option<Self> {
        if self.is_root() {
            None
        } else {
            Some(self.truncated(self.depth() - 1))
        }
    }

    pub fn child(&self, letter: u8) -> Self {
        let mut letters = self.letters.clone();
        letters.push(letter);
        VertexPath { letters }
    }

    pub fn last_letter(&self) -> Option<u8> {
        self.letters.last().copied()
    }

    /// Colour of the vertex: its last letter, or the root colour.
    pub fn colour(&self, root_colour: u8) -> u8 {
        self.last_letter().unwrap_or(root_colour)
    }
}

impl std::fmt::Display for VertexPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_root() {
            write!(f, "root")
        } else {
            let s: Vec<String> = self.letters.iter().map(|l| l.to_string()).collect();
            write!(f, "{}", s.join("."))
        }
    }
}

/// Scalar law for a single edge ratio. Strictly positive support
/// (no atom at zero) and closed-form moments E eta^x.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarLaw {
    Dirac { value: f64 },
    Finite { values: Vec<f64>, probs: Vec<f64> },
}

impl ScalarLaw {
    /// Two equiprobable atoms; the spec's recurring "TwoPoint" family.
    pub fn two_point(lo: f64, hi: f64) -> Self {
        ScalarLaw::Finite { values: vec![lo, hi], probs: vec![0.5, 0.5] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScalarLaw::Dirac { value } => {
                if !value.is_finite() || *value <= 0.0 {
                    return Err(Error::Config(format!(
                        "dirac ratio must be finite and > 0, got {value}"
                    )));
                }
            }
            ScalarLaw::Finite { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(Error::Config(
                        "finite law needs matching non-empty values/probs".into(),
                    ));
                }
                if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                    return Err(Error::Config(
                        "finite law values must be finite and > 0 (no atom at 0)".into(),
                    ));
                }
                if probs.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::Config("finite law probs must be >= 0".into()));
                }
                let s: f64 = probs.iter().sum();
                if (s - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::Config(format!(
                        "finite law probs sum to {s}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// E eta^x, defined for every real x.
    pub fn moment(&self, x: f64) -> f64 {
        match self {
            ScalarLaw::Dirac { value } => value.powf(x),
            ScalarLaw::Finite { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(v, p)| p * v.powf(x))
                .sum(),
        }
    }

    /// E eta^x log eta, the closed-form moment derivative.
    pub fn log_moment(&self, x: f64) -> f64 {
        match self {
            ScalarLaw::Dirac { value } => value.powf(x) * value.ln(),
            ScalarLaw::Finite { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(v, p)| p * v.powf(x) * v.ln())
                .sum(),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            ScalarLaw::Dirac { value } => *value,
            ScalarLaw::Finite { values, probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().unwrap()
            }
        }
    }
}

/// Distribution of the per-vertex data for the vector (uncoloured) model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorFamily {
    /// Constant transition vector (p_0, ..., p_d).
    DiracProbs { probs: Vec<f64> },
    /// Constant ratio vector (eta_1, ..., eta_d).
    DiracRatios { ratios: Vec<f64> },
    /// eta_i i.i.d. from one scalar law.
    IidRatio { law: ScalarLaw },
    /// Independent but not identically distributed ratios, one law per child.
    RatioLaws { laws: Vec<ScalarLaw> },
    /// Finite joint law over whole transition vectors (p_0, ..., p_d).
    JointDiscrete { atoms: Vec<ProbAtom> },
    /// Dirichlet(alpha_0, ..., alpha_d) over the transition vector.
    Dirichlet { alpha: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProbAtom {
    pub probs: Vec<f64>,
    pub weight: f64,
}

/// Distribution families for the coloured (matrix) model: one scalar law
/// per bicolour (i, j), independent across bicolours.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixFamily {
    BicolourLaws { laws: Vec<Vec<ScalarLaw>> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Vector(VectorFamily),
    Matrix(MatrixFamily),
}

/// Full description of the quenched randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    pub d: usize,
    pub root_colour: u8,
    pub kind: Kind,
    pub master_seed: u64,
}

/// Index of a moment: child colour for the vector model, bicolour for the
/// matrix model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentIndex {
    Child(u8),
    Bicolour(u8, u8),
}

/// Per-vertex environment. `probs` is (p_0, ..., p_d) away from the root and
/// (p_1, ..., p_d) at the root; `eta` is the ratio row governing the d
/// outgoing edges, which is what the chaos process multiplies along paths.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexEnvironment {
    pub probs: Vec<f64>,
    pub eta: Vec<f64>,
    pub is_root: bool,
}

impl VertexEnvironment {
    /// Non-root vertex from a full (p_0, ..., p_d) draw.
    fn from_probs(probs: Vec<f64>) -> Self {
        let eta = probs[1..].iter().map(|p| p / probs[0]).collect();
        VertexEnvironment { probs, eta, is_root: false }
    }

    /// Root vertex from a full (p_0, ..., p_d) draw: the walk only keeps the
    /// renormalised child probabilities, the chaos keeps the ratio row.
    fn root_from_probs(probs: &[f64]) -> Self {
        let tail = 1.0 - probs[0];
        VertexEnvironment {
            probs: probs[1..].iter().map(|p| p / tail).collect(),
            eta: probs[1..].iter().map(|p| p / probs[0]).collect(),
            is_root: true,
        }
    }

    fn from_eta(eta: Vec<f64>, is_root: bool) -> Self {
        let s: f64 = eta.iter().sum();
        let probs = if is_root {
            eta.iter().map(|e| e / s).collect()
        } else {
            let p0 = 1.0 / (1.0 + s);
            let mut p = Vec::with_capacity(eta.len() + 1);
            p.push(p0);
            p.extend(eta.iter().map(|e| e * p0));
            p
        };
        VertexEnvironment { probs, eta, is_root }
    }
}

impl EnvironmentSpec {
    pub fn new(d: usize, root_colour: u8, kind: Kind, master_seed: u64) -> Result<Self> {
        let spec = EnvironmentSpec { d, root_colour, kind, master_seed };
        spec.validate()?;
        Ok(spec)
    }

    /// Vector-model spec with constant ratios eta_i = c.
    pub fn dirac_ratio(d: usize, c: f64, master_seed: u64) -> Result<Self> {
        Self::new(
            d,
            1,
            Kind::Vector(VectorFamily::DiracRatios { ratios: vec![c; d] }),
            master_seed,
        )
    }

    /// Vector-model spec with eta_i i.i.d. from a scalar law.
    pub fn iid_ratio(d: usize, law: ScalarLaw, master_seed: u64) -> Result<Self> {
        Self::new(d, 1, Kind::Vector(VectorFamily::IidRatio { law }), master_seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config(format!("degree d must be >= 2, got {}", self.d)));
        }
        if self.root_colour == 0 || self.root_colour as usize > self.d {
            return Err(Error::Config(format!(
                "root colour {} out of range 1..={}",
                self.root_colour, self.d
            )));
        }
        match &self.kind {
            Kind::Vector(f) => self.validate_vector(f),
            Kind::Matrix(MatrixFamily::BicolourLaws { laws }) => {
                if laws.len() != self.d || laws.iter().any(|row| row.len() != self.d) {
                    return Err(Error::Config(format!(
                        "bicolour laws must form a {0}x{0} matrix",
                        self.d
                    )));
                }
                for row in laws {
                    for law in row {
                        law.validate()?;
                    }
                }
                Ok(())
            }
        }
    }

    fn validate_vector(&self, f: &VectorFamily) -> Result<()> {
        match f {
            VectorFamily::DiracProbs { probs } => validate_prob_vector(probs, self.d),
            VectorFamily::DiracRatios { ratios } => {
                if ratios.len() != self.d {
                    return Err(Error::Config(format!(
                        "expected {} ratios, got {}",
                        self.d,
                        ratios.len()
                    )));
                }
                if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
                    return Err(Error::Config("dirac ratios must be > 0".into()));
                }
                Ok(())
            }
            VectorFamily::IidRatio { law } => law.validate(),
            VectorFamily::RatioLaws { laws } => {
                if laws.len() != self.d {
                    return Err(Error::Config(format!(
                        "expected {} ratio laws, got {}",
                        self.d,
                        laws.len()
                    )));
                }
                laws.iter().try_for_each(|l| l.validate())
            }
            VectorFamily::JointDiscrete { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::Config("joint discrete family needs atoms".into()));
                }
                let w: f64 = atoms.iter().map(|a| a.weight).sum();
                if (w - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::Config(format!("atom weights sum to {w}, expected 1")));
                }
                for a in &atoms[..] {
                    if a.weight < 0.0 {
                        return Err(Error::Config("atom weights must be >= 0".into()));
                    }
                    validate_prob_vector(&a.probs, self.d)?;
                }
                Ok(())
            }
            VectorFamily::Dirichlet { alpha } => {
                if alpha.len() != self.d + 1 {
                    return Err(Error::Config(format!(
                        "dirichlet needs {} concentrations, got {}",
                        self.d + 1,
                        alpha.len()
                    )));
                }
                if alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
                    return Err(Error::Config("dirichlet concentrations must be > 0".into()));
                }
                Ok(())
            }
        }
    }

    pub fn is_vector(&self) -> bool {
        matches!(self.kind, Kind::Vector(_))
    }

    /// Chain key of the root in the environment namespace.
    pub(crate) fn root_key(&self) -> Key {
        Key::root(self.master_seed, Domain::EnvVertex)
    }

    /// Quenched draw at the vertex addressed by `key` with colour `colour`.
    pub(crate) fn draw(&self, key: Key, colour: u8, is_root: bool) -> VertexEnvironment {
        let mut rng = key.rng();
        match &self.kind {
            Kind::Vector(f) => match f {
                VectorFamily::DiracProbs { probs } => {
                    if is_root {
                        VertexEnvironment::root_from_probs(probs)
                    } else {
                        VertexEnvironment::from_probs(probs.clone())
                    }
                }
                VectorFamily::DiracRatios { ratios } => {
                    VertexEnvironment::from_eta(ratios.clone(), is_root)
                }
                VectorFamily::IidRatio { law } => {
                    let eta: Vec<f64> = (0..self.d).map(|_| law.sample(&mut rng)).collect();
                    VertexEnvironment::from_eta(eta, is_root)
                }
                VectorFamily::RatioLaws { laws } => {
                    let eta: Vec<f64> = laws.iter().map(|l| l.sample(&mut rng)).collect();
                    VertexEnvironment::from_eta(eta, is_root)
                }
                VectorFamily::JointDiscrete { atoms } => {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut chosen = &atoms[atoms.len() - 1];
                    for a in atoms {
                        acc += a.weight;
                        if u < acc {
                            chosen = a;
                            break;
                        }
                    }
                    if is_root {
                        VertexEnvironment::root_from_probs(&chosen.probs)
                    } else {
                        VertexEnvironment::from_probs(chosen.probs.clone())
                    }
                }
                VectorFamily::Dirichlet { alpha } => {
                    let g: Vec<f64> = alpha
                        .iter()
                        .map(|&a| Gamma::new(a, 1.0).expect("validated alpha").sample(&mut rng))
                        .collect();
                    let s: f64 = g.iter().sum();
                    let probs: Vec<f64> = g.iter().map(|x| x / s).collect();
                    if is_root {
                        VertexEnvironment::root_from_probs(&probs)
                    } else {
                        VertexEnvironment::from_probs(probs)
                    }
                }
            },
            Kind::Matrix(MatrixFamily::BicolourLaws { laws }) => {
                let row = &laws[(colour - 1) as usize];
                let eta: Vec<f64> = row.iter().map(|l| l.sample(&mut rng)).collect();
                VertexEnvironment::from_eta(eta, is_root)
            }
        }
    }

    /// Deterministic quenched sample of the transition data at vertex `v`.
    pub fn vertex_environment(&self, v: &VertexPath) -> Result<VertexEnvironment> {
        VertexPath::new(v.letters().to_vec(), self.d)?;
        let key = self.root_key().absorb(v.letters());
        Ok(self.draw(key, v.colour(self.root_colour), v.is_root()))
    }

    /// Edge weight xi_{a(v)} in the walk embedding: ratio of outward to
    /// inward probability at the parent, and plain p_{root,v_1} for the
    /// first generation.
    pub fn edge_weight(&self, v: &VertexPath) -> Result<f64> {
        if v.is_root() {
            return Err(Error::Precondition("edge weight needs |v| >= 1".into()));
        }
        let parent = v.parent().unwrap();
        let env = self.vertex_environment(&parent)?;
        let j = v.last_letter().unwrap() as usize;
        Ok(if env.is_root { env.probs[j - 1] } else { env.probs[j] / env.probs[0] })
    }

    /// Chaos weight of the edge a(v): a copy of eta at every generation,
    /// including the first. This is the multiplicative-chaos view of the
    /// same quenched draw.
    pub fn eta_weight(&self, v: &VertexPath) -> Result<f64> {
        if v.is_root() {
            return Err(Error::Precondition("eta weight needs |v| >= 1".into()));
        }
        let parent = v.parent().unwrap();
        let env = self.vertex_environment(&parent)?;
        Ok(env.eta[(v.last_letter().unwrap() - 1) as usize])
    }

    /// Closed-form E eta^x for the indexed edge ratio.
    pub fn moment(&self, x: f64, idx: MomentIndex) -> Result<f64> {
        match (&self.kind, idx) {
            (Kind::Vector(f), MomentIndex::Child(i)) => {
                let i = i as usize;
                if i == 0 || i > self.d {
                    return Err(Error::Precondition(format!("child index {i} out of range")));
                }
                match f {
                    VectorFamily::DiracProbs { probs } => Ok((probs[i] / probs[0]).powf(x)),
                    VectorFamily::DiracRatios { ratios } => Ok(ratios[i - 1].powf(x)),
                    VectorFamily::IidRatio { law } => Ok(law.moment(x)),
                    VectorFamily::RatioLaws { laws } => Ok(laws[i - 1].moment(x)),
                    VectorFamily::JointDiscrete { atoms } => Ok(atoms
                        .iter()
                        .map(|a| a.weight * (a.probs[i] / a.probs[0]).powf(x))
                        .sum()),
                    VectorFamily::Dirichlet { alpha } => {
                        // E (p_i/p_0)^x = Gamma(a_i+x) Gamma(a_0-x) / (Gamma(a_i) Gamma(a_0))
                        if x >= alpha[0] {
                            return Err(Error::MomentDomain {
                                x,
                                reason: format!(
                                    "dirichlet ratio moment requires x < alpha_0 = {}",
                                    alpha[0]
                                ),
                            });
                        }
                        let a0 = alpha[0];
                        let ai = alpha[i];
                        Ok((ln_gamma(ai + x) - ln_gamma(ai) + ln_gamma(a0 - x) - ln_gamma(a0))
                            .exp())
                    }
                }
            }
            (Kind::Matrix(MatrixFamily::BicolourLaws { laws }), MomentIndex::Bicolour(i, j)) => {
                let (i, j) = (i as usize, j as usize);
                if i == 0 || i > self.d || j == 0 || j > self.d {
                    return Err(Error::Precondition(format!(
                        "bicolour ({i},{j}) out of range"
                    )));
                }
                Ok(laws[i - 1][j - 1].moment(x))
            }
            _ => Err(Error::Precondition(
                "moment index does not match environment kind".into(),
            )),
        }
    }

    /// Closed-form E eta^x log eta where available (discrete families).
    pub fn log_moment(&self, x: f64, idx: MomentIndex) -> Option<f64> {
        match (&self.kind, idx) {
            (Kind::Vector(f), MomentIndex::Child(i)) => {
                let i = i as usize;
                match f {
                    VectorFamily::DiracProbs { probs } => {
                        let c = probs[i] / probs[0];
                        Some(c.powf(x) * c.ln())
                    }
                    VectorFamily::DiracRatios { ratios } => {
                        let c = ratios[i - 1];
                        Some(c.powf(x) * c.ln())
                    }
                    VectorFamily::IidRatio { law } => Some(law.log_moment(x)),
                    VectorFamily::RatioLaws { laws } => Some(laws[i - 1].log_moment(x)),
                    VectorFamily::JointDiscrete { atoms } => Some(
                        atoms
                            .iter()
                            .map(|a| {
                                let c = a.probs[i] / a.probs[0];
                                a.weight * c.powf(x) * c.ln()
                            })
                            .sum(),
                    ),
                    VectorFamily::Dirichlet { .. } => None,
                }
            }
            (Kind::Matrix(MatrixFamily::BicolourLaws { laws }), MomentIndex::Bicolour(i, j)) => {
                Some(laws[(i - 1) as usize][(j - 1) as usize].log_moment(x))
            }
            _ => None,
        }
    }

    /// Monte Carlo estimate of E eta^x with standard error; the independent
    /// oracle used to validate closed-form moments.
    pub fn mc_moment(&self, x: f64, idx: MomentIndex, samples: usize) -> Result<(f64, f64)> {
        // stream letters > d never collide with real vertex keys
        let mc_key = self.root_key().child(u64::MAX);
        let draws: Vec<f64> = (0..samples)
            .map(|s| {
                let key = mc_key.child(s as u64);
                let colour = match idx {
                    MomentIndex::Child(_) => 1,
                    MomentIndex::Bicolour(i, _) => i,
                };
                let env = self.draw(key, colour, false);
                let j = match idx {
                    MomentIndex::Child(i) => i,
                    MomentIndex::Bicolour(_, j) => j,
                };
                env.eta[(j - 1) as usize].powf(x)
            })
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        Ok((mean, (var / n).sqrt()))
    }
}

pub(crate) fn validate_prob_vector(probs: &[f64], d: usize) -> Result<()> {
    if probs.len() != d + 1 {
        return Err(Error::Config(format!(
            "transition vector needs {} entries (p_0..p_d), got {}",
            d + 1,
            probs.len()
        )));
    }
    if probs[0] <= 0.0 {
        return Err(Error::Config(format!("p_0 must be > 0, got {}", probs[0])));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Config("transition probabilities must be >= 0".into()));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Config(format!(
            "transition vector sums to {s}, expected 1"
        )));
    }
    Ok(())
}
