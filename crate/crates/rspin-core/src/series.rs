//! Sparse exact multivariate polynomials and truncated formal power series.
//!
//! A [`TSeries`] is a jet: every stored monomial has total degree at most the
//! cap, arithmetic drops anything above the cap deterministically, and reads
//! beyond the cap are errors ([`SeriesError::OutOfCap`]) rather than zeros —
//! silently confusing "known zero" with "truncated away" is the primary
//! correctness hazard in jet calculations.
//!
//! Terms are kept in a BTreeMap keyed by [`Mono`], whose ordering (ascending
//! total degree, descending lexicographic within a degree) is the canonical
//! serialization order, so iteration and Display are reproducible.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Mul, Neg, Sub};

use crate::scalar::{Coeff, Rational};

/// Errors from series construction and access.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SeriesError {
    SpaceMismatch,
    BadVar { var: usize, count: usize },
    /// A coefficient outside the cap was requested; the truth is unknown there.
    OutOfCap { degree: u32, cap: u32 },
    /// A computation provably needs terms beyond the cap.
    CapExceeded { needed: u32, cap: u32 },
}

impl fmt::Display for SeriesError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeriesError::SpaceMismatch => write!(f, "series live in different variable spaces"),
            SeriesError::BadVar { var, count } => {
                write!(f, "variable index {var} out of range (space has {count})")
            }
            SeriesError::OutOfCap { degree, cap } => {
                write!(f, "monomial of degree {degree} requested beyond the cap {cap}")
            }
            SeriesError::CapExceeded { needed, cap } => {
                write!(f, "computation needs degree {needed} but the cap is {cap}")
            }
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for SeriesError {}

/// Which family of formal variables a series lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    /// Hierarchy times T_1..T_N (slot i holds T_{i+1}).
    BigT,
    /// Correlator variables t^alpha_d; slot k-1 holds the variable with
    /// k = alpha + 1 + r*d (Ramond alpha = r-1 included as k = mr).
    LittleT,
    /// LittleT plus one trailing boundary variable s.
    LittleTS,
    /// v-coordinates v_1..v_{r-1} (slot i holds v_{i+1}).
    V,
    /// Lax coefficients f_0..f_{r-2} (slot i holds f_i).
    F,
}

/// A named, sized variable space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarSpace {
    kind: VarKind,
    n: usize,
    r: u32,
}

impl VarSpace {
    pub fn big_t(r: u32, n: usize) -> Self {
        VarSpace { kind: VarKind::BigT, n, r }
    }

    pub fn little_t(r: u32, n: usize) -> Self {
        VarSpace { kind: VarKind::LittleT, n, r }
    }

    /// n correlator slots plus the boundary variable s in the last slot.
    pub fn little_t_s(r: u32, n: usize) -> Self {
        VarSpace { kind: VarKind::LittleTS, n: n + 1, r }
    }

    pub fn v_vars(r: u32) -> Self {
        VarSpace { kind: VarKind::V, n: (r - 1) as usize, r }
    }

    pub fn f_vars(r: u32) -> Self {
        VarSpace { kind: VarKind::F, n: (r - 1) as usize, r }
    }

    pub fn kind(&self) -> VarKind {
        self.kind
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> u32 {
        self.r
    }

    /// Slot of T_k (or of the t-variable with combined index k).
    pub fn slot_of_index(&self, k: u32) -> usize {
        (k - 1) as usize
    }

    /// Slot of t^alpha_d: combined index k = alpha + 1 + r*d.
    pub fn slot_of_twist(&self, alpha: i32, d: u32) -> usize {
        debug_assert!(alpha >= 0 && (alpha as u32) < self.r);
        (alpha as usize) + (self.r as usize) * (d as usize)
    }

    /// (twist, descendent depth) of a LittleT slot.
    pub fn twist_of_slot(&self, slot: usize) -> (u32, u32) {
        let r = self.r as usize;
        ((slot % r) as u32, (slot / r) as u32)
    }

    /// Slot of the boundary variable s (LittleTS only).
    pub fn s_slot(&self) -> usize {
        debug_assert_eq!(self.kind, VarKind::LittleTS);
        self.n - 1
    }

    pub fn var_name(&self, slot: usize) -> String {
        use alloc::format;
        match self.kind {
            VarKind::BigT => format!("T{}", slot + 1),
            VarKind::LittleT => {
                let (a, d) = self.twist_of_slot(slot);
                format!("t{a}_{d}")
            }
            VarKind::LittleTS => {
                if slot == self.s_slot() {
                    String::from("s")
                } else {
                    let (a, d) = self.twist_of_slot(slot);
                    format!("t{a}_{d}")
                }
            }
            VarKind::V => format!("v{}", slot + 1),
            VarKind::F => format!("f{}", slot),
        }
    }
}

/// Exponent vector with the canonical ordering: ascending total degree,
/// then descending lexicographic (so T1^2 precedes T1*T2 precedes T2^2).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mono(pub Vec<u32>);

impl Mono {
    pub fn unit(n: usize) -> Self {
        Mono(alloc::vec![0; n])
    }

    pub fn var(n: usize, idx: usize) -> Self {
        let mut m = Self::unit(n);
        m.0[idx] = 1;
        m
    }

    pub fn from_exps(exps: &[u32]) -> Self {
        Mono(exps.to_vec())
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn add(&self, other: &Mono) -> Mono {
        Mono(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// self - var^k, if the exponent allows it.
    pub fn try_sub_var(&self, idx: usize, k: u32) -> Option<Mono> {
        if self.0[idx] < k {
            return None;
        }
        let mut m = self.clone();
        m.0[idx] -= k;
        Some(m)
    }

    pub fn exp(&self, idx: usize) -> u32 {
        self.0[idx]
    }

    pub fn is_unit(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// Extend with zero exponents to a larger space.
    pub fn extended(&self, n: usize) -> Mono {
        let mut v = self.0.clone();
        v.resize(n, 0);
        Mono(v)
    }
}

impl Ord for Mono {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Mono {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// One linear substitution rule: var |-> scale*var + shift_scale*shift_var.
#[derive(Clone, Debug)]
pub struct LinearRule<C: Coeff> {
    pub var: usize,
    pub scale: C,
    pub shift: Option<(usize, C)>,
}

/// Truncated multivariate formal power series over an exact coefficient ring.
#[derive(Clone, PartialEq)]
pub struct TSeries<C: Coeff> {
    space: VarSpace,
    cap: u32,
    unit: C,
    terms: BTreeMap<Mono, C>,
}

impl<C: Coeff> TSeries<C> {
    /// The zero series; `unit` is the coefficient ring's one, kept as a
    /// witness so zero/one elements of the right ring instance are available.
    pub fn zero(space: VarSpace, cap: u32, unit: C) -> Self {
        debug_assert!(unit.is_one() || unit.is_zero() == false);
        TSeries {
            space,
            cap,
            unit,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(space: VarSpace, cap: u32, unit: C, c: C) -> Self {
        let mut s = Self::zero(space, cap, unit);
        if !c.is_zero() {
            s.terms.insert(Mono::unit(space.count()), c);
        }
        s
    }

    pub fn one(space: VarSpace, cap: u32, unit: C) -> Self {
        let c = unit.clone();
        Self::constant(space, cap, unit, c)
    }

    /// The generator in the given slot (empty if the cap is 0).
    pub fn var(space: VarSpace, cap: u32, unit: C, idx: usize) -> Self {
        let mut s = Self::zero(space, cap, unit.clone());
        if cap >= 1 {
            s.terms.insert(Mono::var(space.count(), idx), unit);
        }
        s
    }

    pub fn monomial(space: VarSpace, cap: u32, unit: C, mono: Mono, c: C) -> Self {
        let mut s = Self::zero(space, cap, unit);
        if !c.is_zero() && mono.degree() <= cap {
            s.terms.insert(mono, c);
        }
        s
    }

    pub fn space(&self) -> &VarSpace {
        &self.space
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn unit(&self) -> &C {
        &self.unit
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Mono, &C)> {
        self.terms.iter()
    }

    /// Largest total degree present (None when zero).
    pub fn max_degree(&self) -> Option<u32> {
        self.terms.keys().next_back().map(Mono::degree)
    }

    pub(crate) fn insert_add(&mut self, mono: Mono, c: C) {
        if c.is_zero() || mono.degree() > self.cap {
            return;
        }
        match self.terms.get_mut(&mono) {
            Some(existing) => {
                let sum = existing.add_c(&c);
                if sum.is_zero() {
                    self.terms.remove(&mono);
                } else {
                    *existing = sum;
                }
            }
            None => {
                self.terms.insert(mono, c);
            }
        }
    }

    fn assert_same_space(&self, rhs: &Self) {
        assert_eq!(self.space, rhs.space, "series live in different variable spaces");
        assert_eq!(self.cap, rhs.cap, "series built with different caps");
    }

    pub fn checked_add(&self, rhs: &Self) -> Result<Self, SeriesError> {
        if self.space != rhs.space || self.cap != rhs.cap {
            return Err(SeriesError::SpaceMismatch);
        }
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.insert_add(m.clone(), c.clone());
        }
        Ok(out)
    }

    /// Exact product with monomials above the cap dropped.
    pub fn mul_truncated(&self, rhs: &Self) -> Result<Self, SeriesError> {
        if self.space != rhs.space || self.cap != rhs.cap {
            return Err(SeriesError::SpaceMismatch);
        }
        let mut out = Self::zero(self.space, self.cap, self.unit.clone());
        for (ma, ca) in &self.terms {
            let da = ma.degree();
            if da > self.cap {
                continue;
            }
            for (mb, cb) in &rhs.terms {
                if da + mb.degree() > self.cap {
                    continue;
                }
                out.insert_add(ma.add(mb), ca.mul_c(cb));
            }
        }
        Ok(out)
    }

    pub fn neg(&self) -> Self {
        TSeries {
            space: self.space,
            cap: self.cap,
            unit: self.unit.clone(),
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c.neg_c())).collect(),
        }
    }

    pub fn scale(&self, c: &C) -> Self {
        if c.is_zero() {
            return Self::zero(self.space, self.cap, self.unit.clone());
        }
        let mut out = Self::zero(self.space, self.cap, self.unit.clone());
        for (m, a) in &self.terms {
            out.insert_add(m.clone(), a.mul_c(c));
        }
        out
    }

    pub fn scale_rat(&self, q: &Rational) -> Self {
        if q.is_zero() {
            return Self::zero(self.space, self.cap, self.unit.clone());
        }
        let mut out = Self::zero(self.space, self.cap, self.unit.clone());
        for (m, a) in &self.terms {
            out.insert_add(m.clone(), a.mul_rat(q));
        }
        out
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Self::one(self.space, self.cap, self.unit.clone());
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// Formal partial derivative in one variable; the cap is unchanged.
    pub fn derivative(&self, var: usize) -> Result<Self, SeriesError> {
        if var >= self.space.count() {
            return Err(SeriesError::BadVar {
                var,
                count: self.space.count(),
            });
        }
        let mut out = Self::zero(self.space, self.cap, self.unit.clone());
        for (m, c) in &self.terms {
            let e = m.exp(var);
            if e == 0 {
                continue;
            }
            let lowered = m.try_sub_var(var, 1).unwrap();
            out.insert_add(lowered, c.mul_rat(&Rational::from_int(e as i64)));
        }
        Ok(out)
    }

    /// Exact stored coefficient, zero inside the cap, error beyond it.
    pub fn coefficient(&self, mono: &Mono) -> Result<C, SeriesError> {
        let d = mono.degree();
        if d > self.cap {
            return Err(SeriesError::OutOfCap { degree: d, cap: self.cap });
        }
        Ok(self
            .terms
            .get(mono)
            .cloned()
            .unwrap_or_else(|| self.unit.zero_like()))
    }

    /// Convenience: coefficient by exponent slice.
    pub fn coeff_of_exps(&self, exps: &[u32]) -> Result<C, SeriesError> {
        self.coefficient(&Mono::from_exps(exps))
    }

    fn c_pow(c: &C, e: u32) -> C {
        let mut acc = c.one_like();
        for _ in 0..e {
            acc = acc.mul_c(c);
        }
        acc
    }

    /// Linear change of variables var |-> scale*var + shift_scale*other_var.
    ///
    /// Unruled variables map to the same slot of the target space, which may
    /// have extra trailing slots (e.g. adjoining the boundary variable).
    /// Linearity keeps total degree, so no cap loss can occur.
    pub fn substitute_linear(
        &self,
        target: VarSpace,
        rules: &[LinearRule<C>],
    ) -> Result<Self, SeriesError> {
        if target.count() < self.space.count() {
            return Err(SeriesError::SpaceMismatch);
        }
        let mut rule_of: Vec<Option<&LinearRule<C>>> = alloc::vec![None; self.space.count()];
        for rule in rules {
            if rule.var >= self.space.count() {
                return Err(SeriesError::BadVar {
                    var: rule.var,
                    count: self.space.count(),
                });
            }
            if let Some((j, _)) = rule.shift {
                if j >= target.count() {
                    return Err(SeriesError::BadVar { var: j, count: target.count() });
                }
            }
            rule_of[rule.var] = Some(rule);
        }
        let mut out = Self::zero(target, self.cap, self.unit.clone());
        for (m, c) in &self.terms {
            // Expand the image of this monomial variable by variable.
            let mut parts: Vec<(Mono, C)> =
                alloc::vec![(Mono::unit(target.count()), c.clone())];
            for (idx, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                match rule_of[idx] {
                    None => {
                        for (pm, _) in parts.iter_mut() {
                            pm.0[idx] += e;
                        }
                    }
                    Some(rule) => match &rule.shift {
                        None => {
                            let f = Self::c_pow(&rule.scale, e);
                            for (pm, pc) in parts.iter_mut() {
                                pm.0[idx] += e;
                                *pc = pc.mul_c(&f);
                            }
                        }
                        Some((j, t)) => {
                            let mut next: Vec<(Mono, C)> = Vec::new();
                            for (pm, pc) in &parts {
                                for a in 0..=e {
                                    let coeff = pc
                                        .mul_c(&Self::c_pow(&rule.scale, a))
                                        .mul_c(&Self::c_pow(t, e - a))
                                        .mul_rat(&Rational::binomial(e as i64, a as i64));
                                    if coeff.is_zero() {
                                        continue;
                                    }
                                    let mut nm = pm.clone();
                                    nm.0[idx] += a;
                                    nm.0[*j] += e - a;
                                    next.push((nm, coeff));
                                }
                            }
                            parts = next;
                        }
                    },
                }
            }
            for (pm, pc) in parts {
                out.insert_add(pm, pc);
            }
        }
        Ok(out)
    }

    /// Compose a polynomial with one series per variable (all assignments in
    /// one common space). Under a shared total-degree cap the composition is
    /// exact: exponents only add, so every in-cap output term is assembled
    /// from in-cap input terms.
    pub fn substitute_series(&self, assign: &[Self]) -> Result<Self, SeriesError> {
        if assign.len() != self.space.count() {
            return Err(SeriesError::SpaceMismatch);
        }
        let Some(first) = assign.first() else {
            return Err(SeriesError::SpaceMismatch);
        };
        for a in assign {
            if a.space != first.space || a.cap != first.cap {
                return Err(SeriesError::SpaceMismatch);
            }
        }
        let target = first.space;
        let cap = first.cap;
        let mut powers: Vec<Vec<Self>> = assign
            .iter()
            .map(|a| alloc::vec![Self::one(target, cap, a.unit.clone()), a.clone()])
            .collect();
        let mut out = Self::zero(target, cap, self.unit.clone());
        for (m, c) in &self.terms {
            let mut acc = Self::one(target, cap, self.unit.clone());
            for (idx, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                while powers[idx].len() <= e as usize {
                    let next = &powers[idx][powers[idx].len() - 1] * &assign[idx];
                    powers[idx].push(next);
                }
                acc = &acc * &powers[idx][e as usize];
            }
            out = &out + &acc.scale(c);
        }
        Ok(out)
    }

    /// Map coefficients into another ring (promotion, layer extraction).
    pub fn map_coeffs<D: Coeff>(&self, unit: D, f: impl Fn(&C) -> D) -> TSeries<D> {
        let mut out = TSeries::zero(self.space, self.cap, unit);
        for (m, c) in &self.terms {
            out.insert_add(m.clone(), f(c));
        }
        out
    }

    /// Set one variable to zero (drop all terms containing it).
    pub fn set_var_zero(&self, idx: usize) -> Self {
        let mut out = Self::zero(self.space, self.cap, self.unit.clone());
        for (m, c) in &self.terms {
            if m.exp(idx) == 0 {
                out.terms.insert(m.clone(), c.clone());
            }
        }
        out
    }
}

impl<C: Coeff> Add for &TSeries<C> {
    type Output = TSeries<C>;
    fn add(self, rhs: Self) -> TSeries<C> {
        self.assert_same_space(rhs);
        self.checked_add(rhs).unwrap()
    }
}

impl<C: Coeff> Sub for &TSeries<C> {
    type Output = TSeries<C>;
    fn sub(self, rhs: Self) -> TSeries<C> {
        self.assert_same_space(rhs);
        self.checked_add(&rhs.neg()).unwrap()
    }
}

impl<C: Coeff> Mul for &TSeries<C> {
    type Output = TSeries<C>;
    fn mul(self, rhs: Self) -> TSeries<C> {
        self.assert_same_space(rhs);
        self.mul_truncated(rhs).unwrap()
    }
}

impl<C: Coeff> Neg for &TSeries<C> {
    type Output = TSeries<C>;
    fn neg(self) -> TSeries<C> {
        TSeries::neg(self)
    }
}

impl<C: Coeff> TSeries<C> {
    fn term_string(&self, mono: &Mono, c: &C) -> String {
        use alloc::format;
        use core::fmt::Write;
        let mut varpart = String::new();
        for (idx, &e) in mono.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !varpart.is_empty() {
                varpart.push('*');
            }
            let name = self.space.var_name(idx);
            if e == 1 {
                let _ = write!(varpart, "{name}");
            } else {
                let _ = write!(varpart, "{name}^{e}");
            }
        }
        if varpart.is_empty() {
            format!("{c}")
        } else if c.is_one() {
            varpart
        } else if c.neg_c().is_one() {
            format!("-{varpart}")
        } else if c.is_compound() {
            format!("({c})*{varpart}")
        } else {
            format!("{c}*{varpart}")
        }
    }
}

impl<C: Coeff> fmt::Display for TSeries<C> {
    /// Canonical text form: graded order, "p/q" rationals, "L^k" quotient
    /// powers, "e^k" eps powers; exactly reproducible across runs.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            let t = self.term_string(m, c);
            if first {
                write!(f, "{t}")?;
                first = false;
            } else if let Some(rest) = t.strip_prefix('-') {
                write!(f, " - {rest}")?;
            } else {
                write!(f, " + {t}")?;
            }
        }
        Ok(())
    }
}

impl<C: Coeff> fmt::Debug for TSeries<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TSeries[{:?}, cap {}]({})", self.space.kind(), self.cap, self)
    }
}
