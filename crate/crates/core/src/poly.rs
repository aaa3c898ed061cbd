//! Sparse multivariate polynomials over lagged disturbance variables.
//!
//! A [`Variable`] names one scalar signal `w_{t-lag}^{(coord)}`. Polynomials
//! are kept in a single canonical form: like terms merged, coefficients with
//! magnitude below [`DROP_TOL`] removed, and terms sorted in graded
//! lexicographic order. Downstream code relies on that order to give every
//! monomial a stable index.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rustc_hash::FxHashMap;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Coefficients below this magnitude are pruned during canonicalization.
pub const DROP_TOL: f64 = 1e-12;

/// Default bound on the total degree produced by expansion.
pub const DEFAULT_MAX_DEGREE: u32 = 64;

/// One scalar signal: coordinate `coord` of the disturbance `lag` steps back.
///
/// The derived ordering (lag first, then coordinate) is the variable order
/// used by the canonical monomial ordering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Variable {
    pub lag: u16,
    pub coord: u16,
}

impl Variable {
    pub const fn new(lag: u16, coord: u16) -> Self {
        Variable { lag, coord }
    }

    /// Scalar-system variable `w_{t-lag}`.
    pub const fn scalar(lag: u16) -> Self {
        Variable { lag, coord: 0 }
    }

    fn shifted(self, by: u16) -> Self {
        Variable {
            lag: self.lag.checked_add(by).expect("lag overflow"),
            coord: self.coord,
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w[{},{}]", self.lag, self.coord)
    }
}

/// Exponent map of a monomial, stored sorted by variable with no zero powers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Exponents(SmallVec<[(Variable, u32); 4]>);

impl Exponents {
    /// The empty exponent map (the constant monomial).
    pub fn one() -> Self {
        Exponents(SmallVec::new())
    }

    pub fn var(v: Variable) -> Self {
        Exponents(smallvec::smallvec![(v, 1)])
    }

    /// Builds an exponent map from arbitrary pairs, summing repeated
    /// variables and dropping zero powers.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Variable, u32)>) -> Self {
        let mut map: BTreeMap<Variable, u32> = BTreeMap::new();
        for (v, p) in pairs {
            *map.entry(v).or_insert(0) += p;
        }
        Exponents(map.into_iter().filter(|&(_, p)| p > 0).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Variable, u32)> + '_ {
        self.0.iter().copied()
    }

    pub fn is_constant(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&(_, p)| p).sum()
    }

    /// Largest lag among the variables; 0 for the constant monomial.
    pub fn max_lag(&self) -> u16 {
        self.0.iter().map(|&(v, _)| v.lag).max().unwrap_or(0)
    }

    pub fn power_of(&self, v: Variable) -> u32 {
        self.0
            .iter()
            .find(|&&(w, _)| w == v)
            .map(|&(_, p)| p)
            .unwrap_or(0)
    }

    pub fn mul(&self, other: &Exponents) -> Exponents {
        let (a, b) = (&self.0, &other.0);
        let mut out = SmallVec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Exponents(out)
    }

    pub fn shift(&self, by: u16) -> Exponents {
        Exponents(self.0.iter().map(|&(v, p)| (v.shifted(by), p)).collect())
    }

    fn eval(&self, window: &Window) -> f64 {
        self.0
            .iter()
            .map(|&(v, p)| window.get(v.lag as usize, v.coord as usize).powi(p as i32))
            .product()
    }
}

/// Graded lexicographic order: lower total degree first; within a degree,
/// the monomial with the larger power of the earliest variable in
/// (lag, coord) order comes first.
impl Ord for Exponents {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| {
            for (&(va, pa), &(vb, pb)) in self.0.iter().zip(other.0.iter()) {
                if va != vb {
                    return va.cmp(&vb);
                }
                if pa != pb {
                    return pb.cmp(&pa);
                }
            }
            self.0.len().cmp(&other.0.len())
        })
    }
}

impl PartialOrd for Exponents {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Exponents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        for (i, (v, p)) in self.iter().enumerate() {
            if i > 0 {
                write!(f, "*")?;
            }
            if p == 1 {
                write!(f, "{v}")?;
            } else {
                write!(f, "{v}^{p}")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub coefficient: f64,
    pub exponents: Exponents,
}

impl Monomial {
    pub fn new(coefficient: f64, exponents: Exponents) -> Self {
        Monomial {
            coefficient,
            exponents,
        }
    }

    pub fn degree(&self) -> u32 {
        self.exponents.degree()
    }

    pub fn max_lag(&self) -> u16 {
        self.exponents.max_lag()
    }
}

/// Sum of monomials in canonical form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly {
    terms: Vec<Monomial>,
}

/// Merges like terms, prunes coefficients below [`DROP_TOL`] and sorts.
pub fn canonicalize(terms: impl IntoIterator<Item = Monomial>) -> Poly {
    let mut acc: FxHashMap<Exponents, f64> = FxHashMap::default();
    for m in terms {
        *acc.entry(m.exponents).or_insert(0.0) += m.coefficient;
    }
    Poly::from_map(acc)
}

impl Poly {
    pub fn zero() -> Self {
        Poly { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Poly::monomial(c, Exponents::one())
    }

    pub fn var(v: Variable) -> Self {
        Poly::monomial(1.0, Exponents::var(v))
    }

    pub fn monomial(c: f64, exponents: Exponents) -> Self {
        canonicalize([Monomial::new(c, exponents)])
    }

    pub fn from_terms(terms: impl IntoIterator<Item = Monomial>) -> Self {
        canonicalize(terms)
    }

    fn from_map(acc: FxHashMap<Exponents, f64>) -> Self {
        let mut terms: Vec<Monomial> = acc
            .into_iter()
            .filter(|(_, c)| c.abs() >= DROP_TOL)
            .map(|(e, c)| Monomial::new(c, e))
            .collect();
        terms.sort_unstable_by(|a, b| a.exponents.cmp(&b.exponents));
        Poly { terms }
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn into_terms(self) -> Vec<Monomial> {
        self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial reports 0.
    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn max_lag(&self) -> u16 {
        self.terms.iter().map(Monomial::max_lag).max().unwrap_or(0)
    }

    /// Largest coordinate index referenced, if any variable appears.
    pub fn max_coord(&self) -> Option<u16> {
        self.terms
            .iter()
            .flat_map(|m| m.exponents.iter().map(|(v, _)| v.coord))
            .max()
    }

    pub fn coefficient_of(&self, exponents: &Exponents) -> f64 {
        self.terms
            .binary_search_by(|m| m.exponents.cmp(exponents))
            .map(|i| self.terms[i].coefficient)
            .unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coefficient_of(&Exponents::one())
    }

    pub fn scale(&self, s: f64) -> Poly {
        canonicalize(
            self.terms
                .iter()
                .map(|m| Monomial::new(m.coefficient * s, m.exponents.clone())),
        )
    }

    pub fn add(&self, other: &Poly) -> Poly {
        self.merge(other, 1.0)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.merge(other, -1.0)
    }

    // Linear merge of two sorted term lists.
    fn merge(&self, other: &Poly, sign: f64) -> Poly {
        let (a, b) = (&self.terms, &other.terms);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let ord = match (a.get(i), b.get(j)) {
                (Some(x), Some(y)) => x.exponents.cmp(&y.exponents),
                (Some(_), None) => Ordering::Less,
                _ => Ordering::Greater,
            };
            let (c, e) = match ord {
                Ordering::Less => {
                    i += 1;
                    (a[i - 1].coefficient, &a[i - 1].exponents)
                }
                Ordering::Greater => {
                    j += 1;
                    (sign * b[j - 1].coefficient, &b[j - 1].exponents)
                }
                Ordering::Equal => {
                    i += 1;
                    j += 1;
                    (
                        a[i - 1].coefficient + sign * b[j - 1].coefficient,
                        &a[i - 1].exponents,
                    )
                }
            };
            if c.abs() >= DROP_TOL {
                out.push(Monomial::new(c, e.clone()));
            }
        }
        Poly { terms: out }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut acc: FxHashMap<Exponents, f64> = FxHashMap::default();
        acc.reserve(self.len() * other.len());
        for x in &self.terms {
            for y in &other.terms {
                *acc.entry(x.exponents.mul(&y.exponents)).or_insert(0.0) +=
                    x.coefficient * y.coefficient;
            }
        }
        Poly::from_map(acc)
    }

    /// Product that fails once the result would exceed `max_degree`.
    pub fn checked_mul(&self, other: &Poly, max_degree: u32) -> Result<Poly> {
        let degree = self.degree() + other.degree();
        if !self.is_zero() && !other.is_zero() && degree > max_degree {
            return Err(Error::ExpansionOverflow { degree, max_degree });
        }
        Ok(self.mul(other))
    }

    pub fn pow(&self, e: u32, max_degree: u32) -> Result<Poly> {
        let degree = self.degree().saturating_mul(e);
        if e > 0 && !self.is_zero() && degree > max_degree {
            return Err(Error::ExpansionOverflow { degree, max_degree });
        }
        let mut result = Poly::constant(1.0);
        let mut base = self.clone();
        let mut e = e;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        Ok(result)
    }

    /// Increases every variable's lag by `by`.
    pub fn shift(&self, by: u16) -> Poly {
        // Shifting preserves the relative order of monomials, so no re-sort.
        Poly {
            terms: self
                .terms
                .iter()
                .map(|m| Monomial::new(m.coefficient, m.exponents.shift(by)))
                .collect(),
        }
    }

    pub fn evaluate(&self, window: &Window) -> Result<f64> {
        self.check_window(window)?;
        Ok(self
            .terms
            .iter()
            .map(|m| m.coefficient * m.exponents.eval(window))
            .sum())
    }

    fn check_window(&self, window: &Window) -> Result<()> {
        if self.is_zero() {
            return Ok(());
        }
        let lag = self.max_lag() as usize;
        if lag >= window.lags() {
            return Err(Error::WindowTooShort {
                required: lag,
                available: window.lags(),
            });
        }
        if let Some(c) = self.max_coord() {
            if c as usize >= window.dim() {
                return Err(Error::DimensionMismatch {
                    what: "window coordinate",
                    expected: c as usize + 1,
                    found: window.dim(),
                });
            }
        }
        Ok(())
    }

    /// Groups terms by their maximum lag. The groups partition the input.
    pub fn split_by_max_lag(&self) -> BTreeMap<u16, Poly> {
        let mut groups: BTreeMap<u16, Poly> = BTreeMap::new();
        for m in &self.terms {
            groups.entry(m.max_lag()).or_default().terms.push(m.clone());
        }
        groups
    }

    /// Largest coefficient-wise absolute difference.
    pub fn max_abs_diff(&self, other: &Poly) -> f64 {
        self.sub_unpruned(other)
            .into_iter()
            .fold(0.0, |acc: f64, c| acc.max(c.abs()))
    }

    fn sub_unpruned(&self, other: &Poly) -> Vec<f64> {
        let mut acc: FxHashMap<&Exponents, f64> = FxHashMap::default();
        for m in &self.terms {
            *acc.entry(&m.exponents).or_insert(0.0) += m.coefficient;
        }
        for m in &other.terms {
            *acc.entry(&m.exponents).or_insert(0.0) -= m.coefficient;
        }
        acc.into_values().collect()
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms
            .iter()
            .fold(0.0, |acc: f64, m| acc.max(m.coefficient.abs()))
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, m) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{}*{}", m.coefficient, m.exponents)?;
        }
        Ok(())
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        Poly::add(self, rhs)
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        Poly::sub(self, rhs)
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        Poly::mul(self, rhs)
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}

#[derive(Serialize, Deserialize)]
struct MonomialDoc {
    coefficient: f64,
    exponents: Vec<[u32; 3]>,
}

impl Serialize for Poly {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let docs: Vec<MonomialDoc> = self
            .terms
            .iter()
            .map(|m| MonomialDoc {
                coefficient: m.coefficient,
                exponents: m
                    .exponents
                    .iter()
                    .map(|(v, p)| [v.lag as u32, v.coord as u32, p])
                    .collect(),
            })
            .collect();
        docs.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Poly {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let docs = Vec::<MonomialDoc>::deserialize(deserializer)?;
        let mut terms = Vec::with_capacity(docs.len());
        for doc in docs {
            let mut pairs = Vec::with_capacity(doc.exponents.len());
            for [lag, coord, power] in doc.exponents {
                let lag = u16::try_from(lag).map_err(|_| D::Error::custom("lag out of range"))?;
                let coord =
                    u16::try_from(coord).map_err(|_| D::Error::custom("coord out of range"))?;
                pairs.push((Variable::new(lag, coord), power));
            }
            if !doc.coefficient.is_finite() {
                return Err(D::Error::custom("non-finite coefficient"));
            }
            terms.push(Monomial::new(doc.coefficient, Exponents::from_pairs(pairs)));
        }
        Ok(canonicalize(terms))
    }
}

/// Disturbance window `w_{t:t-L}`, most recent lag first.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    dim: usize,
    values: Vec<f64>,
}

impl Window {
    pub fn zeros(lags: usize, dim: usize) -> Self {
        Window {
            dim,
            values: vec![0.0; lags * dim],
        }
    }

    /// Builds a window from per-lag vectors, `lags[0]` being `w_t`.
    pub fn from_lags<V: AsRef<[f64]>>(lags: &[V]) -> Result<Self> {
        let dim = lags.first().map(|l| l.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(lags.len() * dim);
        for l in lags {
            let l = l.as_ref();
            if l.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "window lag vector",
                    expected: dim,
                    found: l.len(),
                });
            }
            values.extend_from_slice(l);
        }
        Ok(Window { dim, values })
    }

    /// Scalar window: `values[k]` is `w_{t-k}`.
    pub fn from_scalars(values: &[f64]) -> Self {
        Window {
            dim: 1,
            values: values.to_vec(),
        }
    }

    /// Window from a flat lag-major buffer.
    pub fn from_flat(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                what: "flat window length",
                expected: dim,
                found: values.len(),
            });
        }
        Ok(Window { dim, values })
    }

    pub fn lags(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, lag: usize, coord: usize) -> f64 {
        self.values[lag * self.dim + coord]
    }

    pub fn lag(&self, lag: usize) -> &[f64] {
        &self.values[lag * self.dim..(lag + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// The window seen one step earlier: drops the `skip` most recent lags.
    pub fn tail(&self, skip: usize) -> Window {
        let start = (skip * self.dim).min(self.values.len());
        Window {
            dim: self.dim,
            values: self.values[start..].to_vec(),
        }
    }

    /// Inserts `w` as the new most recent lag, discarding the oldest one.
    pub fn push_front(&mut self, w: &[f64]) {
        debug_assert_eq!(w.len(), self.dim);
        let n = self.values.len();
        if n == 0 {
            return;
        }
        self.values.copy_within(0..n - self.dim, self.dim);
        self.values[..self.dim].copy_from_slice(w);
    }
}

/// One polynomial per state coordinate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolyVec {
    components: Vec<Poly>,
}

impl PolyVec {
    pub fn new(components: Vec<Poly>) -> Self {
        PolyVec { components }
    }

    pub fn zeros(n: usize) -> Self {
        PolyVec {
            components: vec![Poly::zero(); n],
        }
    }

    /// The vector `w_{t-lag}`: component `i` is the variable `(lag, i)`.
    pub fn variables_at_lag(n: usize, lag: u16) -> Self {
        PolyVec {
            components: (0..n)
                .map(|i| Poly::var(Variable::new(lag, i as u16)))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Poly] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Poly {
        &self.components[i]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut Poly {
        &mut self.components[i]
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Poly::is_zero)
    }

    pub fn degree(&self) -> u32 {
        self.components.iter().map(Poly::degree).max().unwrap_or(0)
    }

    pub fn max_lag(&self) -> u16 {
        self.components.iter().map(Poly::max_lag).max().unwrap_or(0)
    }

    pub fn term_count(&self) -> usize {
        self.components.iter().map(Poly::len).sum()
    }

    pub fn add(&self, other: &PolyVec) -> Result<PolyVec> {
        self.check_dim(other)?;
        Ok(PolyVec::new(
            self.components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.add(b))
                .collect(),
        ))
    }

    pub fn sub(&self, other: &PolyVec) -> Result<PolyVec> {
        self.check_dim(other)?;
        Ok(PolyVec::new(
            self.components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.sub(b))
                .collect(),
        ))
    }

    fn check_dim(&self, other: &PolyVec) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                what: "polynomial vector",
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> PolyVec {
        PolyVec::new(self.components.iter().map(|p| p.scale(s)).collect())
    }

    pub fn shift(&self, by: u16) -> PolyVec {
        PolyVec::new(self.components.iter().map(|p| p.shift(by)).collect())
    }

    pub fn evaluate(&self, window: &Window) -> Result<Vec<f64>> {
        self.components.iter().map(|p| p.evaluate(window)).collect()
    }

    /// Splits every component by maximum lag; missing components are zero.
    pub fn split_by_max_lag(&self) -> BTreeMap<u16, PolyVec> {
        let n = self.dim();
        let mut out: BTreeMap<u16, PolyVec> = BTreeMap::new();
        for (i, p) in self.components.iter().enumerate() {
            for (lag, group) in p.split_by_max_lag() {
                out.entry(lag)
                    .or_insert_with(|| PolyVec::zeros(n))
                    .components[i] = group;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &PolyVec) -> f64 {
        let zero = Poly::zero();
        (0..self.dim().max(other.dim()))
            .map(|i| {
                let a = self.components.get(i).unwrap_or(&zero);
                let b = other.components.get(i).unwrap_or(&zero);
                a.max_abs_diff(b)
            })
            .fold(0.0, f64::max)
    }
}

/// Substitutes `x_expr[i]` for state coordinate `i` in every component of
/// `f` and expands. Lags in `f`'s variables are ignored.
pub fn compose(f: &PolyVec, x_expr: &PolyVec, max_degree: u32) -> Result<PolyVec> {
    let n = x_expr.dim();
    for p in f.components() {
        if let Some(c) = p.max_coord() {
            if c as usize >= n {
                return Err(Error::DimensionMismatch {
                    what: "composition argument",
                    expected: c as usize + 1,
                    found: n,
                });
            }
        }
    }
    let mut powers = PowerCache::new(x_expr, max_degree);
    let mut out = Vec::with_capacity(f.dim());
    for p in f.components() {
        let mut acc: FxHashMap<Exponents, f64> = FxHashMap::default();
        for m in p.terms() {
            let mut factors = m.exponents.iter();
            let product = match factors.next() {
                None => Poly::constant(1.0),
                Some((v, e)) => {
                    let mut product = powers.get(v.coord as usize, e)?.clone();
                    for (v, e) in factors {
                        product =
                            product.checked_mul(powers.get(v.coord as usize, e)?, max_degree)?;
                    }
                    product
                }
            };
            for t in product.terms {
                *acc.entry(t.exponents).or_insert(0.0) += m.coefficient * t.coefficient;
            }
        }
        out.push(Poly::from_map(acc));
    }
    Ok(PolyVec::new(out))
}

struct PowerCache<'a> {
    base: &'a PolyVec,
    max_degree: u32,
    powers: Vec<Vec<Poly>>,
}

impl<'a> PowerCache<'a> {
    fn new(base: &'a PolyVec, max_degree: u32) -> Self {
        PowerCache {
            base,
            max_degree,
            powers: base
                .components()
                .iter()
                .map(|p| vec![Poly::constant(1.0), p.clone()])
                .collect(),
        }
    }

    fn get(&mut self, coord: usize, e: u32) -> Result<&Poly> {
        let e = e as usize;
        while self.powers[coord].len() <= e {
            let last = self.powers[coord]
                .last()
                .expect("power table is never empty");
            let next = last.checked_mul(self.base.component(coord), self.max_degree)?;
            self.powers[coord].push(next);
        }
        Ok(&self.powers[coord][e])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(lag: u16) -> Poly {
        Poly::var(Variable::scalar(lag))
    }

    fn mono(c: f64, pairs: &[(u16, u32)]) -> Monomial {
        Monomial::new(
            c,
            Exponents::from_pairs(pairs.iter().map(|&(l, p)| (Variable::scalar(l), p))),
        )
    }

    #[test]
    fn merges_like_terms() {
        let p = canonicalize([mono(2.0, &[(0, 1)]), mono(3.0, &[(0, 1)])]);
        assert_eq!(p.len(), 1);
        assert_eq!(p.terms()[0].coefficient, 5.0);
    }

    #[test]
    fn cancellation_yields_zero() {
        let p = canonicalize([mono(1.0, &[(0, 1), (1, 1)]), mono(-1.0, &[(0, 1), (1, 1)])]);
        assert!(p.is_zero());
    }

    #[test]
    fn graded_order_matches_naive_sort() {
        let p = canonicalize([
            mono(1.0, &[(1, 2)]),
            mono(1.0, &[(0, 1)]),
            mono(1.0, &[(1, 2)]),
        ]);
        let terms = p.terms();
        assert_eq!(terms.len(), 2);
        assert_eq!(terms[0].exponents, Exponents::var(Variable::scalar(0)));
        assert_eq!(terms[1].coefficient, 2.0);
        assert_eq!(terms[1].degree(), 2);

        // Naive oracle: dense exponent vectors over (w_t, w_{t-1}, w_{t-2}),
        // sorted by degree then descending lexicographic.
        let raw = [
            mono(1.0, &[(2, 1)]),
            mono(1.0, &[(0, 1), (2, 1)]),
            mono(1.0, &[(1, 2)]),
            mono(1.0, &[(0, 2)]),
            mono(1.0, &[(0, 1), (1, 1)]),
            mono(1.0, &[(0, 1)]),
            mono(1.0, &[(1, 1), (2, 1)]),
        ];
        let dense = |m: &Monomial| -> [u32; 3] {
            let mut d = [0; 3];
            for (v, p) in m.exponents.iter() {
                d[v.lag as usize] = p;
            }
            d
        };
        let mut expected: Vec<[u32; 3]> = raw.iter().map(dense).collect();
        expected.sort_by(|a, b| {
            let da: u32 = a.iter().sum();
            let db: u32 = b.iter().sum();
            da.cmp(&db).then_with(|| b.cmp(a))
        });
        let got: Vec<[u32; 3]> = canonicalize(raw.iter().cloned())
            .terms()
            .iter()
            .map(dense)
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn square_expansion_has_six_terms() {
        let (b1, b2) = (0.3, 0.7);
        let s = &(&w(0) - &w(1).scale(b1)) + &w(1).pow(2, 64).unwrap().scale(b2);
        let sq = s.pow(2, 64).unwrap();
        assert_eq!(sq.len(), 6);
        let cube = Exponents::from_pairs([(Variable::scalar(1), 3)]);
        assert!((sq.coefficient_of(&cube) - (-2.0 * b1 * b2)).abs() < 1e-15);
        let quartic = Exponents::from_pairs([(Variable::scalar(1), 4)]);
        assert!((sq.coefficient_of(&quartic) - b2 * b2).abs() < 1e-15);
    }

    #[test]
    fn pow_zero_and_mul_zero() {
        let p = &w(0) + &w(1);
        assert_eq!(p.pow(0, 64).unwrap(), Poly::constant(1.0));
        assert!(p.mul(&Poly::zero()).is_zero());
    }

    #[test]
    fn pow_overflow_is_reported() {
        let p = w(0).pow(10, 64).unwrap();
        let err = p.pow(7, 64).unwrap_err();
        assert!(matches!(
            err,
            Error::ExpansionOverflow {
                degree: 70,
                max_degree: 64
            }
        ));
        assert!(p.checked_mul(&p.pow(6, 64).unwrap(), 64).is_err());
    }

    #[test]
    fn shift_moves_lags() {
        assert_eq!(w(0).pow(2, 64).unwrap().shift(1), w(1).pow(2, 64).unwrap());
        assert_eq!((&w(0) * &w(2)).shift(2), &w(2) * &w(4));
    }

    #[test]
    fn compose_scalar_examples() {
        let x = Poly::var(Variable::scalar(0));
        let f = PolyVec::new(vec![&x.pow(2, 64).unwrap() - &x]);
        let g = compose(&f, &PolyVec::new(vec![w(0)]), 64).unwrap();
        assert_eq!(g.component(0), &(&w(0).pow(2, 64).unwrap() - &w(0)));

        let sq = PolyVec::new(vec![x.pow(2, 64).unwrap()]);
        let g = compose(&sq, &PolyVec::new(vec![&w(0) + &w(1)]), 64).unwrap();
        let expected = Poly::from_terms([
            mono(1.0, &[(0, 2)]),
            mono(2.0, &[(0, 1), (1, 1)]),
            mono(1.0, &[(1, 2)]),
        ]);
        assert_eq!(g.component(0), &expected);

        assert!(compose(&f, &PolyVec::zeros(1), 64).unwrap().is_zero());
    }

    #[test]
    fn compose_rejects_short_argument() {
        let f = PolyVec::new(vec![Poly::var(Variable::new(0, 2))]);
        assert!(matches!(
            compose(&f, &PolyVec::zeros(2), 64),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn split_groups_by_lag() {
        let b2 = 0.4;
        let p = &(&w(0).pow(2, 64).unwrap() - &w(0)) + &w(1).pow(4, 64).unwrap().scale(b2 * b2);
        let groups = p.split_by_max_lag();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[&0], &w(0).pow(2, 64).unwrap() - &w(0));
        assert_eq!(groups[&1], w(1).pow(4, 64).unwrap().scale(b2 * b2));
        assert!(Poly::zero().split_by_max_lag().is_empty());
    }

    #[test]
    fn evaluate_examples() {
        let p = &w(0).pow(2, 64).unwrap() - &w(0);
        assert_eq!(p.evaluate(&Window::from_scalars(&[2.0])).unwrap(), 2.0);
        let q = &w(0) * &w(1);
        assert_eq!(q.evaluate(&Window::from_scalars(&[1.0, 0.5])).unwrap(), 0.5);
        assert!(matches!(
            q.evaluate(&Window::from_scalars(&[1.0])),
            Err(Error::WindowTooShort {
                required: 1,
                available: 1
            })
        ));
    }

    #[test]
    fn window_push_and_tail() {
        let mut win = Window::from_scalars(&[3.0, 2.0, 1.0]);
        win.push_front(&[4.0]);
        assert_eq!(win.as_flat(), &[4.0, 3.0, 2.0]);
        assert_eq!(win.tail(1).as_flat(), &[3.0, 2.0]);
    }

    #[test]
    fn serde_round_trip_is_bit_identical() {
        let p = Poly::from_terms([
            mono(0.1 + 0.2, &[(0, 1)]),
            mono(-1.0 / 3.0, &[(1, 2), (0, 1)]),
            mono(std::f64::consts::PI, &[]),
        ]);
        let text = serde_json::to_string(&p).unwrap();
        let back: Poly = serde_json::from_str(&text).unwrap();
        assert_eq!(back.len(), p.len());
        for (a, b) in back.terms().iter().zip(p.terms()) {
            assert_eq!(a.coefficient.to_bits(), b.coefficient.to_bits());
            assert_eq!(a.exponents, b.exponents);
        }
    }
}
