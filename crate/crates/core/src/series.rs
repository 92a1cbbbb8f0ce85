//! Symbolic real series: term evaluation, partial sums, tail envelopes and
//! classical sums.
//!
//! Every spec is a finite description of an infinite sequence `a_0, a_1, ...`
//! built from signed power terms. The sign patterns are Rademacher patterns
//! `(-1)^floor(m / 2^level)`, so every spec has a sign period that is a power
//! of two and a monotone envelope bounding `|a_k|` for all `k >= m`.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

/// Sign patterns above this level have periods too large to be useful.
pub const MAX_LEVEL: u32 = 24;

/// Default number of terms `classical_sum` may evaluate.
pub const DEFAULT_TERM_BUDGET: usize = 100_000_000;

/// Atom coefficients below this magnitude are treated as cancelled.
pub const COEFFICIENT_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("invalid series spec: {0}")]
    InvalidSpec(String),
    #[error("index {0} appears more than once")]
    DuplicateIndex(usize),
    #[error("term budget of {budget} exhausted before reaching precision {precision:e}")]
    BudgetExhausted { budget: usize, precision: f64 },
    #[error("precision must be positive, got {0}")]
    BadPrecision(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeriesSpec {
    /// `(-1)^floor(m / 2^level) / (m+1)^exponent`, exponent in (0, 1].
    RademacherHarmonic { level: u32, exponent: f64 },
    /// `(-1)^m / (m+1)^exponent`, exponent in (0, 1].
    PowerAlternating { exponent: f64 },
    /// `scale * sign(m) / (m+1)^exponent` with exponent > 1; `sign_level`
    /// selects a Rademacher sign pattern, `None` means all terms share the
    /// sign of `scale`.
    AbsPower {
        exponent: f64,
        scale: f64,
        sign_level: Option<u32>,
    },
    /// Finite linear combination plus an optional absolutely convergent
    /// perturbation.
    Composite {
        terms: Vec<(f64, SeriesSpec)>,
        perturbation: Option<Box<SeriesSpec>>,
    },
}

/// Rademacher sign `(-1)^floor(m / 2^level)`.
#[inline]
pub fn rademacher_sign(level: u32, m: usize) -> f64 {
    if (m >> level) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn inv_pow(m: usize, exponent: f64) -> f64 {
    let x = (m + 1) as f64;
    if exponent == 1.0 {
        1.0 / x
    } else if exponent == 2.0 {
        1.0 / (x * x)
    } else {
        x.powf(-exponent)
    }
}

impl SeriesSpec {
    pub fn rademacher(level: u32, exponent: f64) -> Self {
        SeriesSpec::RademacherHarmonic { level, exponent }
    }

    pub fn alternating(exponent: f64) -> Self {
        SeriesSpec::PowerAlternating { exponent }
    }

    pub fn abs_power(exponent: f64, scale: f64) -> Self {
        SeriesSpec::AbsPower {
            exponent,
            scale,
            sign_level: None,
        }
    }

    pub fn composite(terms: Vec<(f64, SeriesSpec)>, perturbation: Option<SeriesSpec>) -> Self {
        SeriesSpec::Composite {
            terms,
            perturbation: perturbation.map(Box::new),
        }
    }

    /// Checks the documented parameter ranges recursively.
    pub fn validate(&self) -> Result<(), SeriesError> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(SeriesError::InvalidSpec(format!("{name} must be finite")))
            }
        };
        match self {
            SeriesSpec::RademacherHarmonic { level, exponent } => {
                if *level > MAX_LEVEL {
                    return Err(SeriesError::InvalidSpec(format!(
                        "level {level} exceeds maximum {MAX_LEVEL}"
                    )));
                }
                check_conditional_exponent(*exponent)
            }
            SeriesSpec::PowerAlternating { exponent } => check_conditional_exponent(*exponent),
            SeriesSpec::AbsPower {
                exponent,
                scale,
                sign_level,
            } => {
                finite("scale", *scale)?;
                if !(exponent.is_finite() && *exponent > 1.0) {
                    return Err(SeriesError::InvalidSpec(format!(
                        "abs_power exponent must be > 1, got {exponent}"
                    )));
                }
                if let Some(l) = sign_level {
                    if *l > MAX_LEVEL {
                        return Err(SeriesError::InvalidSpec(format!(
                            "level {l} exceeds maximum {MAX_LEVEL}"
                        )));
                    }
                }
                Ok(())
            }
            SeriesSpec::Composite {
                terms,
                perturbation,
            } => {
                for (c, s) in terms {
                    finite("coefficient", *c)?;
                    s.validate()?;
                }
                if let Some(p) = perturbation {
                    p.validate()?;
                    if p.linear_form().is_conditional() {
                        return Err(SeriesError::InvalidSpec(
                            "perturbation must be absolutely convergent".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    /// The term `a_m`.
    pub fn term(&self, m: usize) -> f64 {
        match self {
            SeriesSpec::RademacherHarmonic { level, exponent } => {
                rademacher_sign(*level, m) * inv_pow(m, *exponent)
            }
            SeriesSpec::PowerAlternating { exponent } => rademacher_sign(0, m) * inv_pow(m, *exponent),
            SeriesSpec::AbsPower {
                exponent,
                scale,
                sign_level,
            } => {
                let sign = sign_level.map_or(1.0, |l| rademacher_sign(l, m));
                scale * sign * inv_pow(m, *exponent)
            }
            SeriesSpec::Composite {
                terms,
                perturbation,
            } => {
                let mut acc = 0.0;
                for (c, s) in terms {
                    acc += c * s.term(m);
                }
                if let Some(p) = perturbation {
                    acc += p.term(m);
                }
                acc
            }
        }
    }

    /// Monotone envelope: `envelope(m) >= |a_k|` for every `k >= m`.
    pub fn envelope(&self, m: usize) -> f64 {
        match self {
            SeriesSpec::RademacherHarmonic { exponent, .. }
            | SeriesSpec::PowerAlternating { exponent } => inv_pow(m, *exponent),
            SeriesSpec::AbsPower { exponent, scale, .. } => scale.abs() * inv_pow(m, *exponent),
            SeriesSpec::Composite {
                terms,
                perturbation,
            } => {
                let mut acc = 0.0;
                for (c, s) in terms {
                    acc += c.abs() * s.envelope(m);
                }
                if let Some(p) = perturbation {
                    acc += p.envelope(m);
                }
                acc
            }
        }
    }

    /// Period of the sign pattern: the sign of every underlying power term is
    /// constant on residue classes modulo this value.
    pub fn sign_period(&self) -> usize {
        match self {
            SeriesSpec::RademacherHarmonic { level, .. } => 2usize << level,
            SeriesSpec::PowerAlternating { .. } => 2,
            SeriesSpec::AbsPower { sign_level, .. } => sign_level.map_or(1, |l| 2usize << l),
            SeriesSpec::Composite {
                terms,
                perturbation,
            } => terms
                .iter()
                .map(|(_, s)| s.sign_period())
                .chain(perturbation.iter().map(|p| p.sign_period()))
                .max()
                .unwrap_or(1),
        }
    }

    /// Expands the spec into conditionally convergent atoms and absolutely
    /// convergent parts.
    pub fn linear_form(&self) -> LinearForm {
        let mut form = LinearForm::default();
        self.accumulate(1.0, &mut form);
        form.atoms.retain(|_, c| c.abs() > COEFFICIENT_EPS);
        form
    }

    fn accumulate(&self, weight: f64, form: &mut LinearForm) {
        match self {
            SeriesSpec::RademacherHarmonic { level, exponent } => {
                *form.atoms.entry(Atom::new(*level, *exponent)).or_insert(0.0) += weight;
            }
            SeriesSpec::PowerAlternating { exponent } => {
                *form.atoms.entry(Atom::new(0, *exponent)).or_insert(0.0) += weight;
            }
            SeriesSpec::AbsPower {
                exponent,
                scale,
                sign_level,
            } => form.absolute.push(SignedPower {
                sign_level: *sign_level,
                exponent: *exponent,
                weight: weight * scale,
            }),
            SeriesSpec::Composite {
                terms,
                perturbation,
            } => {
                for (c, s) in terms {
                    s.accumulate(weight * c, form);
                }
                if let Some(p) = perturbation {
                    p.accumulate(weight, form);
                }
            }
        }
    }

    pub fn is_conditionally_convergent(&self) -> bool {
        self.linear_form().is_conditional()
    }
}

fn check_conditional_exponent(exponent: f64) -> Result<(), SeriesError> {
    if exponent.is_finite() && exponent > 0.0 && exponent <= 1.0 {
        Ok(())
    } else {
        Err(SeriesError::InvalidSpec(format!(
            "exponent must lie in (0, 1], got {exponent}"
        )))
    }
}

/// A conditionally convergent generator `(-1)^floor(m/2^level) / (m+1)^exponent`.
///
/// Distinct atoms are linearly independent modulo absolutely convergent
/// series, which is what makes the K-space computable from declared structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub level: u32,
    exponent_bits: u64,
}

impl Atom {
    pub fn new(level: u32, exponent: f64) -> Self {
        Atom {
            level,
            exponent_bits: exponent.to_bits(),
        }
    }

    pub fn exponent(&self) -> f64 {
        f64::from_bits(self.exponent_bits)
    }

    pub fn spec(&self) -> SeriesSpec {
        SeriesSpec::rademacher(self.level, self.exponent())
    }
}

/// `weight * sign(m) / (m+1)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedPower {
    pub sign_level: Option<u32>,
    pub exponent: f64,
    pub weight: f64,
}

impl SignedPower {
    pub fn term(&self, m: usize) -> f64 {
        let sign = self.sign_level.map_or(1.0, |l| rademacher_sign(l, m));
        self.weight * sign * inv_pow(m, self.exponent)
    }

    pub fn spec(&self) -> SeriesSpec {
        SeriesSpec::AbsPower {
            exponent: self.exponent,
            scale: self.weight,
            sign_level: self.sign_level,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearForm {
    pub atoms: BTreeMap<Atom, f64>,
    pub absolute: Vec<SignedPower>,
}

impl LinearForm {
    pub fn is_conditional(&self) -> bool {
        self.atoms.values().any(|c| c.abs() > COEFFICIENT_EPS)
    }

    /// The absolutely convergent remainder as a spec, `None` when empty.
    pub fn remainder_spec(&self) -> Option<SeriesSpec> {
        match self.absolute.as_slice() {
            [] => None,
            [one] => Some(one.spec()),
            many => Some(SeriesSpec::composite(
                many.iter().map(|p| (1.0, p.spec())).collect(),
                None,
            )),
        }
    }
}

/// Ordered list of series sharing the index set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FamilyVector {
    pub specs: Vec<SeriesSpec>,
}

impl FamilyVector {
    pub fn new(specs: Vec<SeriesSpec>) -> Self {
        FamilyVector { specs }
    }

    /// Rademacher levels `0..count`, all with the given exponent.
    pub fn rademacher_levels(count: usize, exponent: f64) -> Self {
        FamilyVector::new(
            (0..count as u32)
                .map(|l| SeriesSpec::rademacher(l, exponent))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// The first `d` series.
    pub fn truncated(&self, d: usize) -> FamilyVector {
        FamilyVector::new(self.specs[..d.min(self.len())].to_vec())
    }

    pub fn vector_term(&self, m: usize) -> Vec<f64> {
        self.specs.iter().map(|s| s.term(m)).collect()
    }

    /// Writes the first `out.len()` coordinates of `vector_term(m)`.
    pub fn vector_term_into(&self, m: usize, out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(&self.specs) {
            *o = s.term(m);
        }
    }

    /// Bound on the Euclidean norm of the first `d` coordinates of every
    /// `vector_term(k)` with `k >= m`.
    pub fn tail_sup_bound(&self, m: usize, d: usize) -> f64 {
        self.specs
            .iter()
            .take(d)
            .map(|s| {
                let e = s.envelope(m);
                e * e
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn tail_bound(&self, d: usize) -> TailBound<'_> {
        TailBound { family: self, d }
    }

    pub fn sign_period(&self) -> usize {
        self.specs.iter().map(|s| s.sign_period()).max().unwrap_or(1)
    }

    /// Coordinatewise sum of the first `d` coordinates over `indices`,
    /// accumulated in list order.
    pub fn partial_sum(&self, indices: &[usize], d: usize) -> Result<Vec<f64>, SeriesError> {
        check_distinct(indices)?;
        let d = d.min(self.len());
        let mut acc = vec![0.0; d];
        let mut buf = vec![0.0; d];
        for &m in indices {
            self.vector_term_into(m, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
        }
        Ok(acc)
    }
}

/// Monotone tail envelope of a family restricted to its first `d` series.
#[derive(Debug, Clone, Copy)]
pub struct TailBound<'a> {
    family: &'a FamilyVector,
    d: usize,
}

impl TailBound<'_> {
    pub fn bound_at(&self, m: usize) -> f64 {
        self.family.tail_sup_bound(m, self.d)
    }

    /// Smallest `m` with `bound_at(m) < threshold`, or `None` if no such
    /// `m <= limit` exists.
    pub fn first_below(&self, threshold: f64, limit: usize) -> Option<usize> {
        if self.bound_at(0) < threshold {
            return Some(0);
        }
        let mut hi = 1usize;
        while self.bound_at(hi) >= threshold {
            if hi >= limit {
                return None;
            }
            hi = (hi * 2).min(limit);
        }
        let mut lo = hi / 2;
        // bound_at(lo) >= threshold > bound_at(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.bound_at(mid) < threshold {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }
}

fn check_distinct(indices: &[usize]) -> Result<(), SeriesError> {
    let mut seen = HashSet::with_capacity(indices.len());
    for &m in indices {
        if !seen.insert(m) {
            return Err(SeriesError::DuplicateIndex(m));
        }
    }
    Ok(())
}

/// Sum of the terms at `indices`, accumulated in list order.
pub fn partial_sum(spec: &SeriesSpec, indices: &[usize]) -> Result<f64, SeriesError> {
    check_distinct(indices)?;
    Ok(indices.iter().map(|&m| spec.term(m)).sum())
}

pub fn classical_sum(spec: &SeriesSpec, precision: f64) -> Result<f64, SeriesError> {
    classical_sum_with_budget(spec, precision, DEFAULT_TERM_BUDGET)
}

/// The sum of the series in natural order to within `precision`.
///
/// The spec is split into signed power parts. Parts with a periodic sign are
/// grouped into blocks of constant sign; the block magnitudes are decreasing
/// and convex, so the tail after `K` blocks equals half the next block plus a
/// remainder in `[0, (b_K - b_{K+1}) / 2]`. Parts of constant sign use the
/// integral sandwich for the tail.
pub fn classical_sum_with_budget(
    spec: &SeriesSpec,
    precision: f64,
    budget: usize,
) -> Result<f64, SeriesError> {
    if !(precision > 0.0) {
        return Err(SeriesError::BadPrecision(precision));
    }
    let form = spec.linear_form();
    let parts: Vec<SignedPower> = form
        .atoms
        .iter()
        .map(|(atom, c)| SignedPower {
            sign_level: Some(atom.level),
            exponent: atom.exponent(),
            weight: *c,
        })
        .chain(form.absolute.iter().copied())
        .filter(|p| p.weight != 0.0)
        .collect();
    if parts.is_empty() {
        return Ok(0.0);
    }
    let share = precision / parts.len() as f64;
    let mut total = 0.0;
    for part in &parts {
        let unit_precision = share / part.weight.abs();
        let unit = match part.sign_level {
            Some(level) => block_alternating_sum(level, part.exponent, unit_precision, budget)?,
            None => positive_power_sum(part.exponent, unit_precision, budget)?,
        };
        total += part.weight * unit;
    }
    Ok(total)
}

fn block_magnitude(block: usize, len: usize, exponent: f64) -> f64 {
    let start = block * len;
    (start..start + len).map(|m| inv_pow(m, exponent)).sum()
}

fn block_alternating_sum(
    level: u32,
    exponent: f64,
    precision: f64,
    budget: usize,
) -> Result<f64, SeriesError> {
    let len = 1usize << level;
    let mut partial = 0.0;
    let mut sign = 1.0;
    let mut current = block_magnitude(0, len, exponent);
    let mut k = 0usize;
    loop {
        let next = block_magnitude(k + 1, len, exponent);
        let gap = current - next;
        if gap / 4.0 <= precision {
            return Ok(partial + sign * (current / 2.0 + gap / 4.0));
        }
        if (k + 2).saturating_mul(len) > budget {
            return Err(SeriesError::BudgetExhausted { budget, precision });
        }
        partial += sign * current;
        sign = -sign;
        current = next;
        k += 1;
    }
}

fn positive_power_sum(exponent: f64, precision: f64, budget: usize) -> Result<f64, SeriesError> {
    // tail after n terms lies in [(n+1)^(1-q), n^(1-q)] / (q-1)
    let tail_hi = |n: f64| n.powf(1.0 - exponent) / (exponent - 1.0);
    let mut n = 16usize;
    loop {
        let nf = n as f64;
        let width = tail_hi(nf) - tail_hi(nf + 1.0);
        if width / 2.0 <= precision {
            break;
        }
        if n >= budget {
            return Err(SeriesError::BudgetExhausted { budget, precision });
        }
        n = (n * 2).min(budget);
    }
    let nf = n as f64;
    // small terms first
    let head: f64 = (0..n).rev().map(|m| inv_pow(m, exponent)).sum();
    Ok(head + (tail_hi(nf) + tail_hi(nf + 1.0)) / 2.0)
}
