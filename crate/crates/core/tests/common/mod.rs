//! Independent reference arithmetic for the integration tests.
//!
//! `Naive` stores polynomials as a map from sorted `(lag, coord, power)`
//! lists to coefficients and multiplies term by term, with no pruning and
//! no shared code with the library's polynomial engine.
#![allow(dead_code)]

use std::collections::BTreeMap;

use polysls::poly::{Exponents, Monomial, Poly, PolyVec, Variable};
use polysls::synthesis::{GTable, Slot, SystemModel};

pub type Key = Vec<(u16, u16, u32)>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Naive(pub BTreeMap<Key, f64>);

fn merge(a: &Key, b: &Key) -> Key {
    let mut m: BTreeMap<(u16, u16), u32> = BTreeMap::new();
    for &(l, c, p) in a.iter().chain(b) {
        *m.entry((l, c)).or_default() += p;
    }
    m.into_iter().map(|((l, c), p)| (l, c, p)).collect()
}

impl Naive {
    pub fn constant(c: f64) -> Self {
        let mut m = BTreeMap::new();
        m.insert(Vec::new(), c);
        Naive(m)
    }

    pub fn var(lag: u16, coord: u16) -> Self {
        let mut m = BTreeMap::new();
        m.insert(vec![(lag, coord, 1)], 1.0);
        Naive(m)
    }

    pub fn from_poly(p: &Poly) -> Self {
        let mut m = BTreeMap::new();
        for t in p.terms() {
            *m.entry(key_of(&t.exponents)).or_insert(0.0) += t.coefficient;
        }
        Naive(m)
    }

    pub fn add(&self, o: &Naive) -> Naive {
        let mut m = self.0.clone();
        for (k, v) in &o.0 {
            *m.entry(k.clone()).or_insert(0.0) += v;
        }
        Naive(m)
    }

    pub fn scale(&self, s: f64) -> Naive {
        Naive(self.0.iter().map(|(k, v)| (k.clone(), v * s)).collect())
    }

    pub fn mul(&self, o: &Naive) -> Naive {
        let mut m = BTreeMap::new();
        for (ka, va) in &self.0 {
            for (kb, vb) in &o.0 {
                *m.entry(merge(ka, kb)).or_insert(0.0) += va * vb;
            }
        }
        Naive(m)
    }

    pub fn shift(&self, by: u16) -> Naive {
        Naive(
            self.0
                .iter()
                .map(|(k, v)| (k.iter().map(|&(l, c, p)| (l + by, c, p)).collect(), *v))
                .collect(),
        )
    }

    /// Part whose highest lag is exactly `lag`.
    pub fn with_max_lag(&self, lag: u16) -> Naive {
        Naive(
            self.0
                .iter()
                .filter(|(k, _)| k.iter().map(|t| t.0).max().unwrap_or(0) == lag)
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        )
    }

    pub fn get(&self, k: &Key) -> f64 {
        self.0.get(k).copied().unwrap_or(0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.values().fold(0.0, |a: f64, v| a.max(v.abs()))
    }

    pub fn evaluate(&self, w: &dyn Fn(u16, u16) -> f64) -> f64 {
        self.0
            .iter()
            .map(|(k, v)| {
                v * k
                    .iter()
                    .map(|&(l, c, p)| w(l, c).powi(p as i32))
                    .product::<f64>()
            })
            .sum()
    }
}

pub fn key_of(e: &Exponents) -> Key {
    e.iter().map(|(v, p)| (v.lag, v.coord, p)).collect()
}

pub fn exponents_of(k: &Key) -> Exponents {
    Exponents::from_pairs(k.iter().map(|&(l, c, p)| (Variable::new(l, c), p)))
}

/// Largest coefficient difference, keys missing on one side counting as 0.
pub fn max_diff(a: &Naive, b: &Naive) -> f64 {
    let mut worst = 0.0f64;
    for (k, v) in &a.0 {
        worst = worst.max((v - b.get(k)).abs());
    }
    for (k, v) in &b.0 {
        worst = worst.max((v - a.get(k)).abs());
    }
    worst
}

pub fn naive_vec(p: &PolyVec) -> Vec<Naive> {
    p.components().iter().map(Naive::from_poly).collect()
}

/// `f(s)` for dynamics `f` in lag-0 variables.
pub fn compose(f: &[Naive], s: &[Naive]) -> Vec<Naive> {
    f.iter()
        .map(|fi| {
            let mut acc = Naive::default();
            for (k, c) in &fi.0 {
                let mut term = Naive::constant(*c);
                for &(lag, coord, p) in k {
                    assert_eq!(lag, 0, "dynamics use lag-0 variables only");
                    for _ in 0..p {
                        term = term.mul(&s[coord as usize]);
                    }
                }
                acc = acc.add(&term);
            }
            acc
        })
        .collect()
}

/// Level-by-level recursion from scratch:
/// level m is the max-lag-m part of f(w_t + sum_{k<m} (1 - alpha) shift(level k, 1)),
/// with alpha looked up per (level, component, monomial).
pub fn oracle_levels(
    model: &SystemModel,
    horizon: usize,
    alpha: &dyn Fn(usize, usize, &Key) -> f64,
) -> Vec<Vec<Naive>> {
    let n = model.dim();
    let f = naive_vec(model.dynamics());
    let mut state: Vec<Naive> = (0..n).map(|i| Naive::var(0, i as u16)).collect();
    let mut levels = Vec::new();
    for m in 0..=horizon {
        let fx = compose(&f, &state);
        let level: Vec<Naive> = fx.iter().map(|p| p.with_max_lag(m as u16)).collect();
        for (i, comp) in level.iter().enumerate() {
            for (k, c) in &comp.0 {
                let beta = 1.0 - alpha(m, i, k);
                let mut single = BTreeMap::new();
                single.insert(k.clone(), c * beta);
                state[i] = state[i].add(&Naive(single).shift(1));
            }
        }
        levels.push(level);
    }
    levels
}

/// Alpha lookup closure backed by a library g-table.
pub fn table_alpha(table: &GTable) -> impl Fn(usize, usize, &Key) -> f64 + '_ {
    move |m, comp, key| {
        if m >= table.horizon() {
            return 0.0;
        }
        let e = exponents_of(key);
        table
            .level(m)
            .iter()
            .find(|g| g.component == comp && g.monomial.exponents == e)
            .and_then(|g| table.alpha().get(Slot::new(m, g.index)))
            .unwrap_or(0.0)
    }
}

pub fn table_level(table: &GTable, m: usize) -> Vec<Naive> {
    let mut out = vec![Naive::default(); table.dim()];
    for g in table.level(m) {
        *out[g.component]
            .0
            .entry(key_of(&g.monomial.exponents))
            .or_insert(0.0) += g.monomial.coefficient;
    }
    out
}

/// `f(S_{<T})` minus the sum of all table levels, as the largest coefficient.
pub fn master_identity_gap(model: &SystemModel, table: &GTable) -> (f64, f64) {
    let n = model.dim();
    let f = naive_vec(model.dynamics());
    let mut state: Vec<Naive> = (0..n).map(|i| Naive::var(0, i as u16)).collect();
    for k in 0..table.horizon() {
        for g in table.level(k) {
            let a = table.alpha().get(Slot::new(k, g.index)).expect("slot");
            let mut single = BTreeMap::new();
            single.insert(
                key_of(&g.monomial.exponents),
                (1.0 - a) * g.monomial.coefficient,
            );
            state[g.component] = state[g.component].add(&Naive(single).shift(1));
        }
    }
    let lhs = compose(&f, &state);
    let mut rhs = vec![Naive::default(); n];
    for m in 0..=table.horizon() {
        for (i, p) in table_level(table, m).into_iter().enumerate() {
            rhs[i] = rhs[i].add(&p);
        }
    }
    let gap = lhs
        .iter()
        .zip(&rhs)
        .map(|(a, b)| max_diff(a, b))
        .fold(0.0, f64::max);
    let scale = lhs.iter().map(Naive::max_abs).fold(1.0, f64::max);
    (gap, scale)
}

pub fn monomial(c: f64, pairs: &[(u16, u16, u32)]) -> Monomial {
    Monomial::new(c, exponents_of(&pairs.to_vec()))
}

pub fn linear(a: f64) -> SystemModel {
    SystemModel::scalar("linear", &[(1, a)]).unwrap()
}

pub fn cubic() -> SystemModel {
    SystemModel::scalar("cubic", &[(1, 0.5), (2, 0.3), (3, -0.2)]).unwrap()
}
