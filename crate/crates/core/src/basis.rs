//! Candidate-function libraries: evaluation of Θ(X), directional derivatives Γ(X, Ẋ),
//! and analytic gradients of library expansions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KronicError, Result};

/// Trigonometric extra term `cos(freq·x_var)` or `sin(freq·x_var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrigTerm {
    Cos { var: usize, freq: f64 },
    Sin { var: usize, freq: f64 },
}

/// Multivariate monomials up to total degree `degree` in graded-lexicographic
/// order (degree ascending; within a degree, higher powers of earlier variables
/// first), optionally followed by trigonometric terms.
///
/// For `n = 2`, `degree = 2` the order is `[1, x1, x2, x1², x1·x2, x2²]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialLibrary {
    pub n: usize,
    pub degree: u32,
    pub terms: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trig: Vec<TrigTerm>,
}

fn push_exponents(n: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() + 1 == n {
        prefix.push(remaining);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for e in (0..=remaining).rev() {
        prefix.push(e);
        push_exponents(n, remaining - e, prefix, out);
        prefix.pop();
    }
}

fn superscript(k: u32) -> String {
    const DIGITS: [char; 10] = ['⁰', '¹', '²', '³', '⁴', '⁵', '⁶', '⁷', '⁸', '⁹'];
    k.to_string()
        .chars()
        .map(|c| DIGITS[c.to_digit(10).unwrap() as usize])
        .collect()
}

impl MonomialLibrary {
    pub fn new(n: usize, degree: u32, include_constant: bool) -> Result<Self> {
        if n == 0 {
            return Err(KronicError::DimensionMismatch(
                "library needs at least one variable".into(),
            ));
        }
        let mut terms = Vec::new();
        let start = if include_constant { 0 } else { 1 };
        for g in start..=degree {
            push_exponents(n, g, &mut Vec::with_capacity(n), &mut terms);
        }
        Ok(Self {
            n,
            degree,
            terms,
            trig: Vec::new(),
        })
    }

    /// Library with an explicit list of exponent multi-indices (kept in the given order).
    pub fn from_terms(n: usize, terms: Vec<Vec<u32>>) -> Result<Self> {
        if n == 0 || terms.iter().any(|t| t.len() != n) {
            return Err(KronicError::DimensionMismatch(format!(
                "every exponent multi-index must have length {n}"
            )));
        }
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(KronicError::InvalidConfig(format!("duplicate term {t:?}")));
            }
        }
        let degree = terms.iter().map(|t| t.iter().sum()).max().unwrap_or(0);
        Ok(Self {
            n,
            degree,
            terms,
            trig: Vec::new(),
        })
    }

    pub fn with_trig(mut self, term: TrigTerm) -> Result<Self> {
        let var = match term {
            TrigTerm::Cos { var, .. } | TrigTerm::Sin { var, .. } => var,
        };
        if var >= self.n {
            return Err(KronicError::DimensionMismatch(format!(
                "trig term variable {var} out of range for n = {}",
                self.n
            )));
        }
        self.trig.push(term);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.terms.len() + self.trig.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn includes_constant(&self) -> bool {
        self.terms.iter().any(|t| t.iter().all(|&e| e == 0))
    }

    /// Index of the monomial with the given exponents.
    pub fn index_of(&self, exponents: &[u32]) -> Option<usize> {
        self.terms.iter().position(|t| t.as_slice() == exponents)
    }

    pub fn index_of_trig(&self, term: TrigTerm) -> Option<usize> {
        self.trig
            .iter()
            .position(|t| *t == term)
            .map(|i| self.terms.len() + i)
    }

    pub fn term_name(&self, j: usize) -> String {
        if let Some(t) = self.terms.get(j) {
            let factors: Vec<String> = t
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, &e)| {
                    if e == 1 {
                        format!("x{}", i + 1)
                    } else {
                        format!("x{}{}", i + 1, superscript(e))
                    }
                })
                .collect();
            if factors.is_empty() {
                "1".into()
            } else {
                factors.join("·")
            }
        } else {
            let (f, var, freq) = match self.trig[j - self.terms.len()] {
                TrigTerm::Cos { var, freq } => ("cos", var, freq),
                TrigTerm::Sin { var, freq } => ("sin", var, freq),
            };
            if freq == 1.0 {
                format!("{f}(x{})", var + 1)
            } else {
                format!("{f}({freq}·x{})", var + 1)
            }
        }
    }

    pub fn term_names(&self) -> Vec<String> {
        (0..self.len()).map(|j| self.term_name(j)).collect()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(KronicError::DimensionMismatch(format!(
                "point has {} coordinates, library has n = {}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }

    fn check_xi(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.len() {
            return Err(KronicError::DimensionMismatch(format!(
                "coefficient vector has length {}, library has {} terms",
                xi.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// All library functions at a single point.
    pub fn eval_row(&self, x: &[f64]) -> Vec<f64> {
        let mut row: Vec<f64> = self
            .terms
            .iter()
            .map(|t| t.iter().zip(x).map(|(&e, &xi)| xi.powi(e as i32)).product())
            .collect();
        row.extend(self.trig.iter().map(|t| match *t {
            TrigTerm::Cos { var, freq } => (freq * x[var]).cos(),
            TrigTerm::Sin { var, freq } => (freq * x[var]).sin(),
        }));
        row
    }

    /// Jacobian of the library at `x`: a `p × n` matrix with rows ∇θ_j(x).
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let p = self.len();
        let mut jac = DMatrix::zeros(p, self.n);
        for (j, t) in self.terms.iter().enumerate() {
            for i in 0..self.n {
                if t[i] == 0 {
                    continue;
                }
                let mut d = t[i] as f64 * x[i].powi(t[i] as i32 - 1);
                for (l, &e) in t.iter().enumerate() {
                    if l != i {
                        d *= x[l].powi(e as i32);
                    }
                }
                jac[(j, i)] = d;
            }
        }
        let off = self.terms.len();
        for (k, t) in self.trig.iter().enumerate() {
            match *t {
                TrigTerm::Cos { var, freq } => jac[(off + k, var)] = -freq * (freq * x[var]).sin(),
                TrigTerm::Sin { var, freq } => jac[(off + k, var)] = freq * (freq * x[var]).cos(),
            }
        }
        jac
    }

    /// Θ(X): entry (k, j) is θ_j(x_k).
    pub fn eval_theta(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.n {
            return Err(KronicError::DimensionMismatch(format!(
                "data has {} columns, library has n = {}",
                x.ncols(),
                self.n
            )));
        }
        let m = x.nrows();
        let mut theta = DMatrix::zeros(m, self.len());
        let mut buf = vec![0.0; self.n];
        for k in 0..m {
            buf.iter_mut().zip(x.row(k).iter()).for_each(|(b, &v)| *b = v);
            for (j, v) in self.eval_row(&buf).into_iter().enumerate() {
                theta[(k, j)] = v;
            }
        }
        Ok(theta)
    }

    /// Γ(X, Ẋ): entry (k, j) is ∇θ_j(x_k)·ẋ_k.
    pub fn eval_gamma(&self, x: &DMatrix<f64>, xdot: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.n || x.shape() != xdot.shape() {
            return Err(KronicError::DimensionMismatch(format!(
                "states {:?} and derivatives {:?} must both be m×{}",
                x.shape(),
                xdot.shape(),
                self.n
            )));
        }
        let m = x.nrows();
        let mut gamma = DMatrix::zeros(m, self.len());
        let mut buf = vec![0.0; self.n];
        for k in 0..m {
            buf.iter_mut().zip(x.row(k).iter()).for_each(|(b, &v)| *b = v);
            let g = self.jacobian(&buf) * xdot.row(k).transpose();
            gamma.set_row(k, &g.transpose());
        }
        Ok(gamma)
    }

    /// φ(x) = Θ(x)ξ.
    pub fn eval_candidate(&self, xi: &[f64], x: &[f64]) -> Result<f64> {
        self.check_xi(xi)?;
        self.check_x(x)?;
        Ok(self.eval_row(x).iter().zip(xi).map(|(a, b)| a * b).sum())
    }

    /// ∇φ(x) = Σ ξ_j ∇θ_j(x).
    pub fn eval_candidate_gradient(&self, xi: &[f64], x: &[f64]) -> Result<DVector<f64>> {
        self.check_xi(xi)?;
        self.check_x(x)?;
        Ok(self.jacobian(x).transpose() * DVector::from_column_slice(xi))
    }

    /// Human-readable expansion, dropping coefficients with magnitude below `tol`.
    pub fn pretty_print(&self, xi: &[f64], tol: f64) -> String {
        let mut out = String::new();
        for (j, &c) in xi.iter().enumerate().take(self.len()) {
            if !(c.abs() >= tol) || c == 0.0 {
                continue;
            }
            let mag = format!("{:.4}", c.abs());
            let name = self.term_name(j);
            let body = if name == "1" { mag } else { format!("{mag}·{name}") };
            if out.is_empty() {
                if c < 0.0 {
                    out.push('−');
                }
            } else {
                out.push_str(if c < 0.0 { " − " } else { " + " });
            }
            out.push_str(&body);
        }
        if out.is_empty() {
            "0".into()
        } else {
            out
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let lib: Self = serde_json::from_str(s)?;
        if lib.terms.iter().any(|t| t.len() != lib.n) {
            return Err(KronicError::DimensionMismatch(
                "term length differs from n".into(),
            ));
        }
        Ok(lib)
    }
}

/// Binomial coefficient C(n, k).
pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}
