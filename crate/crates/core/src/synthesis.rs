//! Construction of FIR closed-loop maps for polynomial dynamics.
//!
//! The dynamics `x_{t+1} = f(x_t) + u_t + w_t` are fully actuated. For a
//! horizon `T` the g-table holds, for every level `k = 0..=T`, the monomial
//! functions of the disturbance window whose maximum lag is exactly `k`.
//! They satisfy
//!
//! ```text
//! f(w_t + sum_{k<T} sum_j (1 - alpha_j^(k)) shift(g_j^(k), 1)) = sum_{m<=T} sum_j g_j^(m)
//! ```
//!
//! and level `m` only depends on the alpha values of levels below `m`, so
//! the table is built one level at a time.
//!
//! Vector systems are handled in collapsed form: each g-table entry is one
//! monomial in one state component, so a single alpha weights exactly one
//! scalar term. Entries are indexed from 1 in canonical monomial order, ties
//! broken by component.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::poly::{compose, Exponents, Monomial, Poly, PolyVec, Window, DEFAULT_MAX_DEGREE};

/// Residual bound every synthesized closed-loop map is expected to meet.
pub const ACHIEVABILITY_TOL: f64 = 1e-9;

const SUPPORT_RESIDUE_TOL: f64 = 1e-10;

/// Fully actuated polynomial dynamics `x_{t+1} = f(x_t) + u_t + w_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    name: String,
    dynamics: PolyVec,
}

impl SystemModel {
    /// `dynamics` has one component per state coordinate, written in the
    /// lag-0 variables `(0, i)`. It must vanish at the origin.
    pub fn new(name: impl Into<String>, dynamics: PolyVec) -> Result<Self> {
        let n = dynamics.dim();
        if n == 0 {
            return Err(Error::InvalidModel(
                "state dimension must be at least 1".into(),
            ));
        }
        for (i, p) in dynamics.components().iter().enumerate() {
            if p.constant_term() != 0.0 {
                return Err(Error::InvalidModel(format!(
                    "component {i} has a constant term; f(0) must be 0"
                )));
            }
            for m in p.terms() {
                for (v, _) in m.exponents.iter() {
                    if v.lag != 0 {
                        return Err(Error::InvalidModel(format!(
                            "component {i} references lag {}; dynamics are functions of x_t only",
                            v.lag
                        )));
                    }
                    if v.coord as usize >= n {
                        return Err(Error::InvalidModel(format!(
                            "component {i} references coordinate {} of a {n}-dimensional state",
                            v.coord
                        )));
                    }
                }
            }
        }
        Ok(SystemModel {
            name: name.into(),
            dynamics,
        })
    }

    /// Scalar dynamics `f(x) = sum c * x^p` from `(p, c)` pairs.
    pub fn scalar(name: impl Into<String>, terms: &[(u32, f64)]) -> Result<Self> {
        let x = crate::poly::Variable::scalar(0);
        let f = Poly::from_terms(
            terms
                .iter()
                .map(|&(p, c)| Monomial::new(c, Exponents::from_pairs([(x, p)]))),
        );
        SystemModel::new(name, PolyVec::new(vec![f]))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn dynamics(&self) -> &PolyVec {
        &self.dynamics
    }

    /// Stable identifier of the dynamics (not the name).
    pub fn fingerprint(&self) -> String {
        let doc = serde_json::to_string(&self.dynamics).expect("dynamics serialize");
        short_hash(doc.as_bytes())
    }

    /// Evaluates `f(x)`.
    pub fn step_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "state vector",
                expected: self.dim(),
                found: x.len(),
            });
        }
        self.dynamics
            .evaluate(&Window::from_flat(self.dim(), x.to_vec())?)
    }
}

pub(crate) fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Position of one alpha parameter: level `k` and 1-based index `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub level: usize,
    pub index: usize,
}

impl Slot {
    pub const fn new(level: usize, index: usize) -> Self {
        Slot { level, index }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.level, self.index)
    }
}

impl FromStr for Slot {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (k, j) = s
            .split_once(':')
            .ok_or_else(|| format!("slot `{s}` is not of the form k:j"))?;
        let level = k
            .trim()
            .parse()
            .map_err(|_| format!("bad level in slot `{s}`"))?;
        let index: usize = j
            .trim()
            .parse()
            .map_err(|_| format!("bad index in slot `{s}`"))?;
        if index == 0 {
            return Err(format!("slot `{s}`: indices start at 1"));
        }
        Ok(Slot { level, index })
    }
}

/// Partial feedback linearization weights, each clamped to `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlphaParams {
    values: BTreeMap<Slot, f64>,
}

impl AlphaParams {
    pub fn new() -> Self {
        AlphaParams::default()
    }

    pub fn uniform(slots: &[Slot], value: f64) -> Self {
        let mut a = AlphaParams::new();
        for &s in slots {
            a.set(s, value);
        }
        a
    }

    pub fn from_values(slots: &[Slot], values: &[f64]) -> Self {
        let mut a = AlphaParams::new();
        for (&s, &v) in slots.iter().zip(values) {
            a.set(s, v);
        }
        a
    }

    /// Stores `value` clamped to `[0, 1]`; NaN is stored as 0.
    pub fn set(&mut self, slot: Slot, value: f64) {
        let v = if value.is_nan() {
            0.0
        } else {
            value.clamp(0.0, 1.0)
        };
        self.values.insert(slot, v);
    }

    pub fn with(mut self, slot: Slot, value: f64) -> Self {
        self.set(slot, value);
        self
    }

    pub fn get(&self, slot: Slot) -> Option<f64> {
        self.values.get(&slot).copied()
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.values.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Slot, f64)> + '_ {
        self.values.iter().map(|(&s, &v)| (s, v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values in the order of `slots`; missing entries become `fill`.
    pub fn values_for(&self, slots: &[Slot], fill: f64) -> Vec<f64> {
        slots.iter().map(|&s| self.get(s).unwrap_or(fill)).collect()
    }

    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::with_capacity(self.values.len() * 24);
        for (s, v) in &self.values {
            bytes.extend_from_slice(&(s.level as u64).to_le_bytes());
            bytes.extend_from_slice(&(s.index as u64).to_le_bytes());
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        short_hash(&bytes)
    }
}

impl Serialize for AlphaParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_map(self.values.iter().map(|(s, v)| (s.to_string(), v)))
    }
}

impl<'de> Deserialize<'de> for AlphaParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(deserializer)?;
        let mut a = AlphaParams::new();
        for (k, v) in raw {
            let slot: Slot = k.parse().map_err(serde::de::Error::custom)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(serde::de::Error::custom(format!(
                    "alpha {slot} = {v} is outside [0, 1]"
                )));
            }
            a.set(slot, v);
        }
        Ok(a)
    }
}

/// How missing alpha slots are treated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaMode {
    Strict,
    /// Missing slots take this value.
    Lenient {
        default: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthesisOptions {
    pub max_degree: u32,
    pub alpha_mode: AlphaMode,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            max_degree: DEFAULT_MAX_DEGREE,
            alpha_mode: AlphaMode::Lenient { default: 1.0 },
        }
    }
}

/// One monomial function `g_j^(k)`: a single term in one state component.
#[derive(Clone, Debug, PartialEq)]
pub struct GEntry {
    pub index: usize,
    pub component: usize,
    pub monomial: Monomial,
}

impl GEntry {
    /// The entry as a vector function (zero outside its component).
    pub fn func(&self, n: usize) -> PolyVec {
        let mut v = PolyVec::zeros(n);
        *v.component_mut(self.component) =
            Poly::monomial(self.monomial.coefficient, self.monomial.exponents.clone());
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GTable {
    horizon: usize,
    dim: usize,
    levels: Vec<Vec<GEntry>>,
    alpha: AlphaParams,
}

impl GTable {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entries of level `k`; their indices run 1..=c_k.
    pub fn level(&self, k: usize) -> &[GEntry] {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[Vec<GEntry>] {
        &self.levels
    }

    /// The counts `c_0, …, c_T` of the structural support.
    pub fn counts(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    pub fn entry(&self, slot: Slot) -> Option<&GEntry> {
        self.levels.get(slot.level)?.get(slot.index.checked_sub(1)?)
    }

    /// Sum of all entries of level `k`.
    pub fn level_sum(&self, k: usize) -> PolyVec {
        let mut terms: Vec<Vec<Monomial>> = vec![Vec::new(); self.dim];
        for e in &self.levels[k] {
            terms[e.component].push(e.monomial.clone());
        }
        PolyVec::new(terms.into_iter().map(Poly::from_terms).collect())
    }

    /// The resolved alpha values the table was built with.
    pub fn alpha(&self) -> &AlphaParams {
        &self.alpha
    }

    /// Slots with a design parameter (levels below the horizon).
    pub fn slots(&self) -> Vec<Slot> {
        skeleton_slots(&self.levels, self.horizon)
    }
}

fn skeleton_slots<T>(levels: &[Vec<T>], horizon: usize) -> Vec<Slot> {
    levels
        .iter()
        .take(horizon)
        .enumerate()
        .flat_map(|(k, l)| (1..=l.len()).map(move |j| Slot::new(k, j)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
struct RawTerm {
    component: usize,
    exponents: Exponents,
    coefficient: f64,
}

type TermKey = (Exponents, usize);

/// Runs the level recursion on `dynamics`. `assign(m, terms)` receives
/// the level-`m` terms in canonical order and returns the terms to keep
/// together with their weight `1 - alpha` in the next partial sum.
fn expand_levels(
    dynamics: &PolyVec,
    horizon: usize,
    max_degree: u32,
    mut assign: impl FnMut(usize, Vec<RawTerm>) -> Result<Vec<(RawTerm, f64)>>,
) -> Result<Vec<Vec<RawTerm>>> {
    let n = dynamics.dim();
    let mut partial: Vec<Vec<Monomial>> = (0..n)
        .map(|i| {
            vec![Monomial::new(
                1.0,
                Exponents::var(crate::poly::Variable::new(0, i as u16)),
            )]
        })
        .collect();
    let mut levels = Vec::with_capacity(horizon + 1);
    for m in 0..=horizon {
        let arg = PolyVec::new(partial.iter().cloned().map(Poly::from_terms).collect());
        let composed = compose(dynamics, &arg, max_degree)?;
        let mut terms: Vec<RawTerm> = Vec::new();
        for (i, p) in composed.components().iter().enumerate() {
            for t in p.terms() {
                if t.max_lag() as usize == m {
                    terms.push(RawTerm {
                        component: i,
                        exponents: t.exponents.clone(),
                        coefficient: t.coefficient,
                    });
                }
            }
        }
        terms.sort_by(|a, b| {
            a.exponents
                .cmp(&b.exponents)
                .then(a.component.cmp(&b.component))
        });
        let kept = assign(m, terms)?;
        if m < horizon {
            for (t, weight) in &kept {
                let c = weight * t.coefficient;
                if c != 0.0 {
                    partial[t.component].push(Monomial::new(c, t.exponents.shift(1)));
                }
            }
        }
        levels.push(kept.into_iter().map(|(t, _)| t).collect());
    }
    Ok(levels)
}

/// Deterministic generic alpha in `[0.15, 0.85]` for one monomial.
fn probe_alpha(level: usize, key: &TermKey) -> f64 {
    let mut h: u64 = 0x5eed_a1fa ^ (level as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut mix = |x: u64| {
        h = (h ^ x).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    };
    mix(key.1 as u64);
    for (v, p) in key.0.iter() {
        mix(((v.lag as u64) << 48) | ((v.coord as u64) << 32) | p as u64);
    }
    0.15 + 0.7 * ((h >> 11) as f64 / (1u64 << 53) as f64)
}

fn abs_dynamics(dynamics: &PolyVec) -> PolyVec {
    PolyVec::new(
        dynamics
            .components()
            .iter()
            .map(|p| {
                Poly::from_terms(
                    p.terms()
                        .iter()
                        .map(|m| Monomial::new(m.coefficient.abs(), m.exponents.clone())),
                )
            })
            .collect(),
    )
}

fn weighted(levels: Vec<Vec<RawTerm>>) -> Vec<FxHashMap<TermKey, f64>> {
    levels
        .into_iter()
        .map(|l| {
            l.into_iter()
                .map(|t| ((t.exponents, t.component), t.coefficient))
                .collect()
        })
        .collect()
}

/// Monomials of each level present for generic alpha.
///
/// Candidates come from an expansion with all coefficients made positive
/// and every weight set to 1; no cancellation can happen there and its
/// coefficients bound the magnitude reachable for any alpha in `[0, 1]`.
/// A candidate is removed only when a signed expansion at generic alpha
/// cancels it relative to the matching positive expansion.
fn structural_support(
    dynamics: &PolyVec,
    horizon: usize,
    max_degree: u32,
) -> Result<Vec<Vec<TermKey>>> {
    let positive = abs_dynamics(dynamics);
    let bound = expand_levels(&positive, horizon, max_degree, |_, terms| {
        Ok(terms.into_iter().map(|t| (t, 1.0)).collect())
    })?;
    let probe_weights = |m: usize, terms: Vec<RawTerm>| -> Result<Vec<(RawTerm, f64)>> {
        Ok(terms
            .into_iter()
            .map(|t| {
                let a = probe_alpha(m, &(t.exponents.clone(), t.component));
                (t, 1.0 - a)
            })
            .collect())
    };
    let signed = weighted(expand_levels(dynamics, horizon, max_degree, probe_weights)?);
    let magnitude = weighted(expand_levels(
        &positive,
        horizon,
        max_degree,
        probe_weights,
    )?);
    Ok(bound
        .into_iter()
        .enumerate()
        .map(|(m, terms)| {
            terms
                .into_iter()
                .map(|t| (t.exponents, t.component))
                .filter(|key| {
                    let scale = magnitude[m].get(key).copied().unwrap_or(0.0);
                    let value = signed[m].get(key).copied().unwrap_or(0.0);
                    !(scale >= 1e-6 && value.abs() <= 1e-9 * scale)
                })
                .collect()
        })
        .collect())
}

/// Reusable synthesis context for one model and horizon.
///
/// Holds the structural support of the g-table, i.e. the monomials present
/// for generic alpha. Specific alpha values can make individual coefficients
/// vanish (alpha = 1 removes everything above level 0); those entries stay
/// in the table with a zero coefficient so indices never move.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    model: SystemModel,
    horizon: usize,
    options: SynthesisOptions,
    support: Vec<Vec<TermKey>>,
    index: Vec<FxHashMap<TermKey, usize>>,
}

impl Synthesizer {
    pub fn new(model: &SystemModel, horizon: usize, options: SynthesisOptions) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        let support = structural_support(model.dynamics(), horizon, options.max_degree)?;
        let index = support
            .iter()
            .map(|l| {
                l.iter()
                    .enumerate()
                    .map(|(j, k)| (k.clone(), j + 1))
                    .collect()
            })
            .collect();
        Ok(Synthesizer {
            model: model.clone(),
            horizon,
            options,
            support,
            index,
        })
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn options(&self) -> &SynthesisOptions {
        &self.options
    }

    /// Structural counts `c_0, …, c_T`.
    pub fn counts(&self) -> Vec<usize> {
        self.support.iter().map(Vec::len).collect()
    }

    /// All design slots in deterministic order.
    pub fn slots(&self) -> Vec<Slot> {
        skeleton_slots(&self.support, self.horizon)
    }

    pub fn skeleton(&self, fill: f64) -> AlphaParams {
        AlphaParams::uniform(&self.slots(), fill)
    }

    pub fn contains(&self, slot: Slot) -> bool {
        slot.level < self.horizon && slot.index >= 1 && slot.index <= self.support[slot.level].len()
    }

    /// Fills every slot from `alpha`, applying the configured mode.
    pub fn resolve(&self, alpha: &AlphaParams) -> Result<AlphaParams> {
        let mut out = AlphaParams::new();
        for slot in self.slots() {
            let v = match (alpha.get(slot), self.options.alpha_mode) {
                (Some(v), _) => v,
                (None, AlphaMode::Lenient { default }) => default,
                (None, AlphaMode::Strict) => {
                    return Err(Error::MissingAlpha {
                        level: slot.level,
                        index: slot.index,
                    })
                }
            };
            out.set(slot, v);
        }
        Ok(out)
    }

    pub fn g_table(&self, alpha: &AlphaParams) -> Result<GTable> {
        let resolved = self.resolve(alpha)?;
        let numeric = expand_levels(
            self.model.dynamics(),
            self.horizon,
            self.options.max_degree,
            |m, terms| {
                let mut kept = Vec::with_capacity(terms.len());
                for t in terms {
                    let key = (t.exponents.clone(), t.component);
                    match self.index[m].get(&key) {
                        Some(&j) => {
                            let weight = if m < self.horizon {
                                1.0 - resolved.get(Slot::new(m, j)).expect("resolved slot")
                            } else {
                                0.0
                            };
                            kept.push((t, weight));
                        }
                        // Cancellation residue of a structurally absent monomial.
                        None if t.coefficient.abs() <= SUPPORT_RESIDUE_TOL => {}
                        None => {
                            return Err(Error::SupportMismatch {
                                level: m,
                                monomial: format!("{}[{}]", t.exponents, t.component),
                            })
                        }
                    }
                }
                Ok(kept)
            },
        )?;
        let levels = self
            .support
            .iter()
            .zip(numeric)
            .map(|(keys, terms)| {
                let mut coeff: FxHashMap<TermKey, f64> = terms
                    .into_iter()
                    .map(|t| ((t.exponents, t.component), t.coefficient))
                    .collect();
                keys.iter()
                    .enumerate()
                    .map(|(j, key)| GEntry {
                        index: j + 1,
                        component: key.1,
                        monomial: Monomial::new(coeff.remove(key).unwrap_or(0.0), key.0.clone()),
                    })
                    .collect()
            })
            .collect();
        Ok(GTable {
            horizon: self.horizon,
            dim: self.model.dim(),
            levels,
            alpha: resolved,
        })
    }

    /// Builds the g-table and the closed-loop maps for `alpha`.
    pub fn synthesize(&self, alpha: &AlphaParams) -> Result<(GTable, ClosedLoopMaps)> {
        let table = self.g_table(alpha)?;
        let clms = build_clms(&self.model, &table, alpha)?;
        Ok((table, clms))
    }
}

/// Builds the g-table for one model, horizon and alpha assignment.
pub fn build_g_table(
    model: &SystemModel,
    horizon: usize,
    alpha: &AlphaParams,
    options: SynthesisOptions,
) -> Result<GTable> {
    Synthesizer::new(model, horizon, options)?.g_table(alpha)
}

/// Enumerates the design slots of `(model, horizon)`, each set to `fill`.
pub fn alpha_skeleton(model: &SystemModel, horizon: usize, fill: f64) -> Result<AlphaParams> {
    Ok(Synthesizer::new(model, horizon, SynthesisOptions::default())?.skeleton(fill))
}

/// State and input closed-loop maps over the window `w_{t:t-T}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopMaps {
    pub psi_x: PolyVec,
    pub psi_u: PolyVec,
    pub horizon: usize,
    pub alpha: AlphaParams,
    pub model_fingerprint: String,
}

impl ClosedLoopMaps {
    pub fn dim(&self) -> usize {
        self.psi_x.dim()
    }

    pub fn state(&self, window: &Window) -> Result<Vec<f64>> {
        self.psi_x.evaluate(window)
    }

    pub fn input(&self, window: &Window) -> Result<Vec<f64>> {
        self.psi_u.evaluate(window)
    }
}

/// Assembles
///
/// ```text
/// psi_x = w_t + sum_{k<T} sum_j (1 - alpha_j^(k)) shift(g_j^(k), 1)
/// psi_u = -sum_{k<T} sum_j alpha_j^(k) g_j^(k) - sum_j g_j^(T)
/// ```
pub fn build_clms(
    model: &SystemModel,
    table: &GTable,
    alpha: &AlphaParams,
) -> Result<ClosedLoopMaps> {
    let n = model.dim();
    if table.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "g-table",
            expected: n,
            found: table.dim(),
        });
    }
    let mut resolved = alpha.clone();
    for (slot, v) in table.alpha().iter() {
        if resolved.get(slot).is_none() {
            resolved.set(slot, v);
        }
    }
    let mut restricted = AlphaParams::new();
    for slot in table.slots() {
        restricted.set(slot, resolved.get(slot).unwrap_or(f64::NAN));
    }
    if restricted.fingerprint() != table.alpha().fingerprint() {
        return Err(Error::AlphaMismatch);
    }

    let horizon = table.horizon();
    let mut x_terms: Vec<Vec<Monomial>> = vec![Vec::new(); n];
    let mut u_terms: Vec<Vec<Monomial>> = vec![Vec::new(); n];
    for i in 0..n {
        x_terms[i].push(Monomial::new(
            1.0,
            Exponents::var(crate::poly::Variable::new(0, i as u16)),
        ));
    }
    for k in 0..horizon {
        for e in table.level(k) {
            let a = table
                .alpha()
                .get(Slot::new(k, e.index))
                .expect("resolved slot");
            let c = e.monomial.coefficient;
            x_terms[e.component].push(Monomial::new((1.0 - a) * c, e.monomial.exponents.shift(1)));
            u_terms[e.component].push(Monomial::new(-a * c, e.monomial.exponents.clone()));
        }
    }
    for e in table.level(horizon) {
        u_terms[e.component].push(Monomial::new(
            -e.monomial.coefficient,
            e.monomial.exponents.clone(),
        ));
    }
    Ok(ClosedLoopMaps {
        psi_x: PolyVec::new(x_terms.into_iter().map(Poly::from_terms).collect()),
        psi_u: PolyVec::new(u_terms.into_iter().map(Poly::from_terms).collect()),
        horizon,
        alpha: table.alpha().clone(),
        model_fingerprint: model.fingerprint(),
    })
}

/// Per-trial RNG stream derived from one seed.
pub(crate) fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Achievability residual of one window `w_{t:t-T-1}` (T + 2 lags).
pub fn achievability_residual(
    clms: &ClosedLoopMaps,
    model: &SystemModel,
    window: &Window,
) -> Result<f64> {
    let prev = window.tail(1);
    let x_now = clms.state(window)?;
    let x_prev = clms.state(&prev)?;
    let u_prev = clms.input(&prev)?;
    let fx = model.step_map(&x_prev)?;
    let w_now = window.lag(0);
    Ok((0..model.dim())
        .map(|i| (x_now[i] - fx[i] - u_prev[i] - w_now[i]).abs())
        .fold(
            0.0,
            |a: f64, r| if r.is_nan() { f64::INFINITY } else { a.max(r) },
        ))
}

/// Largest achievability residual over `trials` windows with iid
/// `U(-1, 1)` entries.
pub fn verify_achievability(
    clms: &ClosedLoopMaps,
    model: &SystemModel,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let n = model.dim();
    let lags = clms.horizon + 2;
    let residuals: Vec<f64> = (0..trials.max(1))
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial as u64);
            let values = (0..lags * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            achievability_residual(clms, model, &Window::from_flat(n, values)?)
        })
        .collect::<Result<_>>()?;
    Ok(residuals.into_iter().fold(0.0, f64::max))
}
