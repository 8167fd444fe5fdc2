//! Game parameters: dynamics, costs, horizon and initial law.
//!
//! Parameter files are JSON with matrices as row-major nested arrays:
//!
//! ```json
//! {
//!   "dims": {"n": 1, "n1": 1, "n2": 1},
//!   "dynamics": {"A0": [[1.0]], "A": [[0.5]], "B0": [[2.0]], ...},
//!   "cost": {"Q0": [[1.0]], "R0": [[0.5]], "Gamma0": [[0.8]], ...},
//!   "horizon": 12.0,
//!   "initial_law": {"mu0": [0.0], "Sigma0": [[0.0]], "mu": [0.0], "Sigma": [[0.0]]}
//! }
//! ```
//!
//! The η vectors and the whole `initial_law` block may be omitted; they
//! default to zero.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, min_eigenvalue, symmetrize};

/// Margin used for symmetry and semidefiniteness checks.
pub const SYM_EPS: f64 = 1e-12;

/// All model matrices of the `(N+1)`-player game plus the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct GameParams {
    pub n: usize,
    pub n1: usize,
    pub n2: usize,
    pub a0: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d0: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub f0: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub q0: DMatrix<f64>,
    pub r0: DMatrix<f64>,
    pub gamma0: DMatrix<f64>,
    pub eta0: DVector<f64>,
    pub q0f: DMatrix<f64>,
    pub gamma0f: DMatrix<f64>,
    pub eta0f: DVector<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub gamma1: DMatrix<f64>,
    pub gamma2: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub qf: DMatrix<f64>,
    pub gamma1f: DMatrix<f64>,
    pub gamma2f: DMatrix<f64>,
    pub etaf: DVector<f64>,
    pub horizon: f64,
}

/// Means and covariances of the initial states.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialLaw {
    pub mu0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl InitialLaw {
    pub fn zero(n: usize) -> Self {
        Self {
            mu0: DVector::zeros(n),
            sigma0: DMatrix::zeros(n, n),
            mu: DVector::zeros(n),
            sigma: DMatrix::zeros(n, n),
        }
    }

    /// Scalar-dimension law `X0(0) ~ (mu0, sigma0)`, `Xi(0) ~ (mu, sigma)`.
    pub fn scalar(mu0: f64, sigma0: f64, mu: f64, sigma: f64) -> Self {
        Self {
            mu0: DVector::from_element(1, mu0),
            sigma0: DMatrix::from_element(1, 1, sigma0),
            mu: DVector::from_element(1, mu),
            sigma: DMatrix::from_element(1, 1, sigma),
        }
    }
}

/// `M0 = B0 R0⁻¹ B0ᵀ`, `M = B R⁻¹ Bᵀ` and the weight inverses.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivedCoeffs {
    pub m0: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub r0_inv: DMatrix<f64>,
    pub r_inv: DMatrix<f64>,
}

/// One violated invariant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

/// Every violated invariant of a parameter set, by field name.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.to_string(),
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, field: &str) -> bool {
        self.violations.iter().any(|v| v.field == field)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  {}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

fn scalar_m(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

impl GameParams {
    /// All-zero parameter set of the given dimensions with identity control
    /// weights and the given horizon.
    pub fn zeros(n: usize, n1: usize, n2: usize, horizon: f64) -> Self {
        let z = || DMatrix::zeros(n, n);
        Self {
            n,
            n1,
            n2,
            a0: z(),
            a: z(),
            b0: DMatrix::zeros(n, n1),
            b: DMatrix::zeros(n, n1),
            d0: DMatrix::zeros(n, n2),
            d: DMatrix::zeros(n, n2),
            f0: z(),
            f: z(),
            g: z(),
            q0: z(),
            r0: DMatrix::identity(n1, n1),
            gamma0: z(),
            eta0: DVector::zeros(n),
            q0f: z(),
            gamma0f: z(),
            eta0f: DVector::zeros(n),
            q: z(),
            r: DMatrix::identity(n1, n1),
            gamma1: z(),
            gamma2: z(),
            eta: DVector::zeros(n),
            qf: z(),
            gamma1f: z(),
            gamma2f: z(),
            etaf: DVector::zeros(n),
            horizon,
        }
    }

    /// The scalar game of the first numerical example (asymptotically
    /// solvable on `[0, 12]`). Noise and η are zero.
    pub fn example1() -> Self {
        let mut p = Self::zeros(1, 1, 1, 12.0);
        p.a0 = scalar_m(1.0);
        p.b0 = scalar_m(2.0);
        p.f0 = scalar_m(0.5);
        p.a = scalar_m(0.5);
        p.b = scalar_m(1.0);
        p.f = scalar_m(0.2);
        p.g = scalar_m(0.4);
        p.q0 = scalar_m(1.0);
        p.r0 = scalar_m(0.5);
        p.q = scalar_m(2.0);
        p.r = scalar_m(1.0);
        p.gamma0 = scalar_m(0.8);
        p.gamma1 = scalar_m(0.3);
        p.gamma2 = scalar_m(0.5);
        p
    }

    /// The scalar game of the second numerical example (finite escape time
    /// between 0.5 and 1 on `[0, 2.5]`).
    pub fn example2() -> Self {
        let mut p = Self::zeros(1, 1, 1, 2.5);
        p.a0 = scalar_m(0.3);
        p.b0 = scalar_m(1.0);
        p.f0 = scalar_m(0.2);
        p.a = scalar_m(0.2);
        p.b = scalar_m(1.0);
        p.f = scalar_m(1.0);
        p.g = scalar_m(-0.2);
        p.q0 = scalar_m(2.0);
        p.r0 = scalar_m(1.0);
        p.q = scalar_m(1.0);
        p.r = scalar_m(1.0);
        p.gamma0 = scalar_m(0.8);
        p.gamma1 = scalar_m(0.1);
        p.gamma2 = scalar_m(1.2);
        p
    }

    /// Same game with noise intensities `D0`, `D` replaced.
    pub fn with_noise(mut self, d0: DMatrix<f64>, d: DMatrix<f64>) -> Self {
        self.n2 = d0.ncols();
        self.d0 = d0;
        self.d = d;
        self
    }

    pub fn with_scalar_noise(self, d0: f64, d: f64) -> Self {
        self.with_noise(scalar_m(d0), scalar_m(d))
    }

    /// Set all four η vectors.
    pub fn with_etas(mut self, eta0: DVector<f64>, eta: DVector<f64>, eta0f: DVector<f64>, etaf: DVector<f64>) -> Self {
        self.eta0 = eta0;
        self.eta = eta;
        self.eta0f = eta0f;
        self.etaf = etaf;
        self
    }

    fn shape_checks(&self) -> Vec<(&'static str, &DMatrix<f64>, usize, usize)> {
        let (n, n1, n2) = (self.n, self.n1, self.n2);
        vec![
            ("A0", &self.a0, n, n),
            ("A", &self.a, n, n),
            ("B0", &self.b0, n, n1),
            ("B", &self.b, n, n1),
            ("D0", &self.d0, n, n2),
            ("D", &self.d, n, n2),
            ("F0", &self.f0, n, n),
            ("F", &self.f, n, n),
            ("G", &self.g, n, n),
            ("Q0", &self.q0, n, n),
            ("R0", &self.r0, n1, n1),
            ("Gamma0", &self.gamma0, n, n),
            ("Q0f", &self.q0f, n, n),
            ("Gamma0f", &self.gamma0f, n, n),
            ("Q", &self.q, n, n),
            ("R", &self.r, n1, n1),
            ("Gamma1", &self.gamma1, n, n),
            ("Gamma2", &self.gamma2, n, n),
            ("Qf", &self.qf, n, n),
            ("Gamma1f", &self.gamma1f, n, n),
            ("Gamma2f", &self.gamma2f, n, n),
        ]
    }

    /// Check every invariant; return the parameters unchanged or a report
    /// naming each violation.
    pub fn validate(self) -> std::result::Result<Self, ValidationReport> {
        let mut report = ValidationReport::default();
        if self.n == 0 || self.n1 == 0 || self.n2 == 0 {
            report.push("dims", "n, n1, n2 must be positive");
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            report.push("horizon", "must be a positive finite number");
        }
        let mut shapes_ok = true;
        for (name, m, rows, cols) in self.shape_checks() {
            if m.shape() != (rows, cols) {
                shapes_ok = false;
                report.push(
                    name,
                    format!("dimension mismatch: expected {rows}x{cols}, got {}x{}", m.nrows(), m.ncols()),
                );
            } else if m.iter().any(|v| !v.is_finite()) {
                report.push(name, "contains non-finite entries");
            }
        }
        for (name, v) in [
            ("eta0", &self.eta0),
            ("eta0f", &self.eta0f),
            ("eta", &self.eta),
            ("etaf", &self.etaf),
        ] {
            if v.len() != self.n {
                report.push(name, format!("dimension mismatch: expected length {}, got {}", self.n, v.len()));
            } else if v.iter().any(|x| !x.is_finite()) {
                report.push(name, "contains non-finite entries");
            }
        }
        if shapes_ok {
            for (name, m) in [("Q0", &self.q0), ("Q0f", &self.q0f), ("Q", &self.q), ("Qf", &self.qf)] {
                check_psd(&mut report, name, m);
            }
            for (name, m) in [("R0", &self.r0), ("R", &self.r)] {
                check_pd(&mut report, name, m);
            }
        }
        if report.is_empty() {
            Ok(self)
        } else {
            Err(report)
        }
    }

    /// `M0`, `M` via Cholesky solves of `R0`, `R`.
    pub fn derive_coeffs(&self) -> Result<DerivedCoeffs> {
        let chol0 = symmetrize(&self.r0)
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("R0 not positive definite".into()))?;
        let chol = symmetrize(&self.r)
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("R not positive definite".into()))?;
        let m0 = symmetrize(&(&self.b0 * chol0.solve(&self.b0.transpose())));
        let m = symmetrize(&(&self.b * chol.solve(&self.b.transpose())));
        Ok(DerivedCoeffs {
            m0,
            m,
            r0_inv: symmetrize(&chol0.inverse()),
            r_inv: symmetrize(&chol.inverse()),
        })
    }
}

/// A random valid parameter set with entries of order one, for property
/// tests and demos. Weights are `LLᵀ` (plus the identity for `R0`, `R`).
pub fn random_params<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, horizon: f64) -> GameParams {
    let mut mat = |rows: usize, cols: usize, scale: f64| {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
    };
    let mut p = GameParams::zeros(n, n, n, horizon);
    p.a0 = mat(n, n, 0.8);
    p.a = mat(n, n, 0.8);
    p.b0 = mat(n, n, 1.0);
    p.b = mat(n, n, 1.0);
    p.d0 = mat(n, n, 0.5);
    p.d = mat(n, n, 0.5);
    p.f0 = mat(n, n, 0.5);
    p.f = mat(n, n, 0.5);
    p.g = mat(n, n, 0.5);
    let mut psd = |scale: f64| {
        let l = mat(n, n, scale);
        symmetrize(&(&l * l.transpose()))
    };
    p.q0 = psd(1.0);
    p.q = psd(1.0);
    p.q0f = psd(0.7);
    p.qf = psd(0.7);
    p.r0 = psd(0.5) + DMatrix::identity(n, n);
    p.r = psd(0.5) + DMatrix::identity(n, n);
    p.gamma0 = mat(n, n, 1.0);
    p.gamma1 = mat(n, n, 1.0);
    p.gamma2 = mat(n, n, 1.0);
    p.gamma0f = mat(n, n, 1.0);
    p.gamma1f = mat(n, n, 1.0);
    p.gamma2f = mat(n, n, 1.0);
    p.eta0 = mat(n, 1, 1.0).column(0).into_owned();
    p.eta = mat(n, 1, 1.0).column(0).into_owned();
    p.eta0f = mat(n, 1, 1.0).column(0).into_owned();
    p.etaf = mat(n, 1, 1.0).column(0).into_owned();
    p
}

fn check_symmetric(report: &mut ValidationReport, name: &str, m: &DMatrix<f64>) -> bool {
    let scale = m.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
    if asymmetry(m) > SYM_EPS * scale {
        report.push(name, "not symmetric");
        false
    } else {
        true
    }
}

fn check_psd(report: &mut ValidationReport, name: &str, m: &DMatrix<f64>) {
    if check_symmetric(report, name, m) && min_eigenvalue(m) < -SYM_EPS {
        report.push(name, format!("{name} not positive semidefinite"));
    }
}

fn check_pd(report: &mut ValidationReport, name: &str, m: &DMatrix<f64>) {
    if check_symmetric(report, name, m) && !(min_eigenvalue(m) > 0.0) {
        report.push(name, format!("{name} not positive definite"));
    }
}

impl InitialLaw {
    pub fn validate(self, n: usize) -> std::result::Result<Self, ValidationReport> {
        let mut report = ValidationReport::default();
        for (name, v) in [("mu0", &self.mu0), ("mu", &self.mu)] {
            if v.len() != n {
                report.push(name, format!("dimension mismatch: expected length {n}, got {}", v.len()));
            }
        }
        for (name, m) in [("Sigma0", &self.sigma0), ("Sigma", &self.sigma)] {
            if m.shape() != (n, n) {
                report.push(name, format!("dimension mismatch: expected {n}x{n}, got {}x{}", m.nrows(), m.ncols()));
            } else {
                check_psd(&mut report, name, m);
            }
        }
        if report.is_empty() {
            Ok(self)
        } else {
            Err(report)
        }
    }
}

// ---------------------------------------------------------------------------
// JSON schema

type RawMatrix = Vec<Vec<f64>>;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDims {
    n: usize,
    n1: usize,
    n2: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDynamics {
    #[serde(rename = "A0")]
    a0: RawMatrix,
    #[serde(rename = "A")]
    a: RawMatrix,
    #[serde(rename = "B0")]
    b0: RawMatrix,
    #[serde(rename = "B")]
    b: RawMatrix,
    #[serde(rename = "D0")]
    d0: RawMatrix,
    #[serde(rename = "D")]
    d: RawMatrix,
    #[serde(rename = "F0")]
    f0: RawMatrix,
    #[serde(rename = "F")]
    f: RawMatrix,
    #[serde(rename = "G")]
    g: RawMatrix,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    #[serde(rename = "Q0")]
    q0: RawMatrix,
    #[serde(rename = "R0")]
    r0: RawMatrix,
    #[serde(rename = "Gamma0")]
    gamma0: RawMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta0: Option<Vec<f64>>,
    #[serde(rename = "Q0f")]
    q0f: RawMatrix,
    #[serde(rename = "Gamma0f")]
    gamma0f: RawMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta0f: Option<Vec<f64>>,
    #[serde(rename = "Q")]
    q: RawMatrix,
    #[serde(rename = "R")]
    r: RawMatrix,
    #[serde(rename = "Gamma1")]
    gamma1: RawMatrix,
    #[serde(rename = "Gamma2")]
    gamma2: RawMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta: Option<Vec<f64>>,
    #[serde(rename = "Qf")]
    qf: RawMatrix,
    #[serde(rename = "Gamma1f")]
    gamma1f: RawMatrix,
    #[serde(rename = "Gamma2f")]
    gamma2f: RawMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    etaf: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLaw {
    #[serde(default)]
    mu0: Option<Vec<f64>>,
    #[serde(rename = "Sigma0", default)]
    sigma0: Option<RawMatrix>,
    #[serde(default)]
    mu: Option<Vec<f64>>,
    #[serde(rename = "Sigma", default)]
    sigma: Option<RawMatrix>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    dims: RawDims,
    dynamics: RawDynamics,
    cost: RawCost,
    horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_law: Option<RawLaw>,
}

/// A parameter file: game parameters plus the initial law.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub params: GameParams,
    pub law: InitialLaw,
}

fn to_matrix(report: &mut ValidationReport, name: &str, raw: &RawMatrix) -> DMatrix<f64> {
    let rows = raw.len();
    let cols = raw.first().map_or(0, Vec::len);
    if raw.iter().any(|r| r.len() != cols) {
        report.push(name, "ragged rows: dimension mismatch");
        return DMatrix::zeros(0, 0);
    }
    DMatrix::from_fn(rows, cols, |i, j| raw[i][j])
}

fn from_matrix(m: &DMatrix<f64>) -> RawMatrix {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn vec_or_zero(v: &Option<Vec<f64>>, n: usize) -> DVector<f64> {
    match v {
        Some(v) => DVector::from_vec(v.clone()),
        None => DVector::zeros(n),
    }
}

impl Scenario {
    pub fn new(params: GameParams, law: InitialLaw) -> Self {
        Self { params, law }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawScenario = serde_json::from_str(text)?;
        Self::from_raw(raw)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    fn from_raw(raw: RawScenario) -> Result<Self> {
        let mut report = ValidationReport::default();
        let n = raw.dims.n;
        let dy = &raw.dynamics;
        let c = &raw.cost;
        let mut m = |name: &str, x: &RawMatrix| to_matrix(&mut report, name, x);
        let params = GameParams {
            n,
            n1: raw.dims.n1,
            n2: raw.dims.n2,
            a0: m("A0", &dy.a0),
            a: m("A", &dy.a),
            b0: m("B0", &dy.b0),
            b: m("B", &dy.b),
            d0: m("D0", &dy.d0),
            d: m("D", &dy.d),
            f0: m("F0", &dy.f0),
            f: m("F", &dy.f),
            g: m("G", &dy.g),
            q0: m("Q0", &c.q0),
            r0: m("R0", &c.r0),
            gamma0: m("Gamma0", &c.gamma0),
            eta0: vec_or_zero(&c.eta0, n),
            q0f: m("Q0f", &c.q0f),
            gamma0f: m("Gamma0f", &c.gamma0f),
            eta0f: vec_or_zero(&c.eta0f, n),
            q: m("Q", &c.q),
            r: m("R", &c.r),
            gamma1: m("Gamma1", &c.gamma1),
            gamma2: m("Gamma2", &c.gamma2),
            eta: vec_or_zero(&c.eta, n),
            qf: m("Qf", &c.qf),
            gamma1f: m("Gamma1f", &c.gamma1f),
            gamma2f: m("Gamma2f", &c.gamma2f),
            etaf: vec_or_zero(&c.etaf, n),
            horizon: raw.horizon,
        };
        let raw_law = raw.initial_law.unwrap_or_default();
        let mat_or_zero = |report: &mut ValidationReport, name: &str, x: &Option<RawMatrix>| match x {
            Some(x) => to_matrix(report, name, x),
            None => DMatrix::zeros(n, n),
        };
        let law = InitialLaw {
            mu0: vec_or_zero(&raw_law.mu0, n),
            sigma0: mat_or_zero(&mut report, "Sigma0", &raw_law.sigma0),
            mu: vec_or_zero(&raw_law.mu, n),
            sigma: mat_or_zero(&mut report, "Sigma", &raw_law.sigma),
        };
        let params = match params.validate() {
            Ok(p) => Some(p),
            Err(r) => {
                report.violations.extend(r.violations);
                None
            }
        };
        let law = match law.validate(n) {
            Ok(l) => Some(l),
            Err(r) => {
                report.violations.extend(r.violations);
                None
            }
        };
        match (params, law) {
            (Some(params), Some(law)) if report.is_empty() => Ok(Self { params, law }),
            _ => Err(Error::Validation(report)),
        }
    }

    fn to_raw(&self) -> RawScenario {
        let p = &self.params;
        let v = |x: &DVector<f64>| Some(x.iter().copied().collect::<Vec<_>>());
        RawScenario {
            dims: RawDims {
                n: p.n,
                n1: p.n1,
                n2: p.n2,
            },
            dynamics: RawDynamics {
                a0: from_matrix(&p.a0),
                a: from_matrix(&p.a),
                b0: from_matrix(&p.b0),
                b: from_matrix(&p.b),
                d0: from_matrix(&p.d0),
                d: from_matrix(&p.d),
                f0: from_matrix(&p.f0),
                f: from_matrix(&p.f),
                g: from_matrix(&p.g),
            },
            cost: RawCost {
                q0: from_matrix(&p.q0),
                r0: from_matrix(&p.r0),
                gamma0: from_matrix(&p.gamma0),
                eta0: v(&p.eta0),
                q0f: from_matrix(&p.q0f),
                gamma0f: from_matrix(&p.gamma0f),
                eta0f: v(&p.eta0f),
                q: from_matrix(&p.q),
                r: from_matrix(&p.r),
                gamma1: from_matrix(&p.gamma1),
                gamma2: from_matrix(&p.gamma2),
                eta: v(&p.eta),
                qf: from_matrix(&p.qf),
                gamma1f: from_matrix(&p.gamma1f),
                gamma2f: from_matrix(&p.gamma2f),
                etaf: v(&p.etaf),
            },
            horizon: p.horizon,
            initial_law: Some(RawLaw {
                mu0: v(&self.law.mu0),
                sigma0: Some(from_matrix(&self.law.sigma0)),
                mu: v(&self.law.mu),
                sigma: Some(from_matrix(&self.law.sigma)),
            }),
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_raw())?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()? + "\n")?;
        Ok(())
    }
}
