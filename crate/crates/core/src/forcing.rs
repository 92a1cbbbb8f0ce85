//! Conditions `(f, d, eps)`, the order between them, the extension step and
//! the driver producing a descending chain.
//!
//! A condition pairs a finite injection `f` with an active dimension `d` and a
//! rational tolerance `eps`. It is valid when the first `d` partial sums along
//! `f` are within `eps` of the targets and every term left out of `f` is
//! smaller than `eps / C_d` in the first `d` coordinates. A lower condition
//! `(g, e, delta)` extends `f`, keeps every intermediate block sum below
//! `2 eps`, and satisfies `2 delta + |block| <= 2 eps`.
//!
//! Tolerances are exact rationals; series sums are floating point, and every
//! strict inequality is checked against the bound minus [`ForcingConfig::slack`].

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::confinement::{ConfineError, ConstantSchedule};
use crate::rearranger::{
    confine_block, select_block, ChaseConfig, PrefixPlan, RearrangeError, UsedSet,
};
use crate::series::{FamilyVector, SeriesError};
use crate::vecops::{norm, sub};

pub type Rational = BigRational;

/// Largest exponent `t` tried when choosing `eta = eps (1 - 2^-t)`.
const MAX_ETA_STEPS: u32 = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForcingError {
    #[error("input is not a condition: {0} bullet fails")]
    InvalidCondition(Bullet),
    #[error("need {needed} series and targets, have {series} series and {targets} targets")]
    TooFewSeries {
        needed: usize,
        series: usize,
        targets: usize,
    },
    #[error("no eta < eps bounds the unused terms (largest unused norm {sup_unused:e}, eps/C_d {limit:e})")]
    InfeasibleEta { sup_unused: f64, limit: f64 },
    #[error("budget of {budget} exhausted while extending (best deviation {best_deviation:e})")]
    BudgetExhausted { budget: usize, best_deviation: f64 },
    #[error("constructed extension fails the {0} bullet")]
    ExtensionRejected(Bullet),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Confine(#[from] ConfineError),
    #[error(transparent)]
    Rearrange(#[from] RearrangeError),
}

/// The individually checkable requirements on conditions and links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bullet {
    Injection,
    Dimension,
    Tolerance,
    Accuracy,
    Tail,
    Extension,
    DimensionOrder,
    Envelope,
    Budget,
}

impl std::fmt::Display for Bullet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Bullet::Injection => "injection (f is injective)",
            Bullet::Dimension => "dimension (d >= 1)",
            Bullet::Tolerance => "tolerance (eps > 0)",
            Bullet::Accuracy => "accuracy (|sum - target| < eps)",
            Bullet::Tail => "tail (unused terms < eps/C_d)",
            Bullet::Extension => "extension (g extends f)",
            Bullet::DimensionOrder => "dimension order (e >= d)",
            Bullet::Envelope => "envelope (block prefixes < 2 eps)",
            Bullet::Budget => "budget (2 delta + |block| <= 2 eps)",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub f: Vec<usize>,
    pub d: usize,
    #[serde(serialize_with = "serialize_rational")]
    pub eps: Rational,
}

pub fn format_rational(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn parse_rational(text: &str) -> Option<Rational> {
    let (p, q) = text.trim().split_once('/')?;
    let p: BigInt = p.trim().parse().ok()?;
    let q: BigInt = q.trim().parse().ok()?;
    if q.is_zero() {
        return None;
    }
    Some(Rational::new(p, q))
}

fn serialize_rational<S: serde::Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_rational(r))
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone)]
pub struct ForcingConfig {
    pub schedule: ConstantSchedule,
    /// Margin subtracted from the right side of strict inequalities.
    pub slack: f64,
    /// Exact tail checks cover indices below `|f| + cutoff_margin` at least.
    pub cutoff_margin: usize,
    /// Hard cap on the exact-check cutoff.
    pub max_cutoff: usize,
    /// New conditions keep unused terms below `delta / (tail_margin C_{d+1})`.
    pub tail_margin: f64,
    pub restarts: usize,
}

impl Default for ForcingConfig {
    fn default() -> Self {
        ForcingConfig {
            schedule: ConstantSchedule::default(),
            slack: 1e-9,
            cutoff_margin: 10_000,
            max_cutoff: 1 << 28,
            tail_margin: 2.0,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionEvidence {
    pub injective: bool,
    pub duplicate: Option<usize>,
    pub dimension_ok: bool,
    pub eps_positive: bool,
    pub deviation: f64,
    pub accuracy_ok: bool,
    /// `eps / C_d`.
    pub tail_threshold: f64,
    pub cutoff: usize,
    pub max_unused_norm: f64,
    pub worst_unused: Option<usize>,
    pub tail_bound_at_cutoff: f64,
    pub tail_ok: bool,
}

impl ConditionEvidence {
    pub fn first_failure(&self) -> Option<Bullet> {
        if !self.injective {
            Some(Bullet::Injection)
        } else if !self.dimension_ok {
            Some(Bullet::Dimension)
        } else if !self.eps_positive {
            Some(Bullet::Tolerance)
        } else if !self.accuracy_ok {
            Some(Bullet::Accuracy)
        } else if !self.tail_ok {
            Some(Bullet::Tail)
        } else {
            None
        }
    }

    pub fn ok(&self) -> bool {
        self.first_failure().is_none()
    }

    /// Largest norm of any unused term, as far as the evidence shows.
    pub fn sup_unused(&self) -> f64 {
        self.max_unused_norm.max(self.tail_bound_at_cutoff)
    }
}

/// Checks the five condition bullets. The tail quantifier is discharged by an
/// exact scan below a cutoff of at least `|f| + cutoff_margin` (pushed further
/// out until the tail envelope drops under the threshold) plus the envelope
/// itself beyond the cutoff.
pub fn is_condition(
    c: &Condition,
    fam: &FamilyVector,
    targets: &[f64],
    cutoff: Option<usize>,
    cfg: &ForcingConfig,
) -> ConditionEvidence {
    let mut used = UsedSet::default();
    let mut duplicate = None;
    for &m in &c.f {
        if used.contains(m) && duplicate.is_none() {
            duplicate = Some(m);
        }
        used.insert(m);
    }
    let dimension_ok = c.d >= 1 && c.d <= fam.len() && c.d <= targets.len();
    let eps_positive = c.eps > Rational::zero();
    let mut evidence = ConditionEvidence {
        injective: duplicate.is_none(),
        duplicate,
        dimension_ok,
        eps_positive,
        deviation: f64::NAN,
        accuracy_ok: false,
        tail_threshold: f64::NAN,
        cutoff: 0,
        max_unused_norm: f64::NAN,
        worst_unused: None,
        tail_bound_at_cutoff: f64::NAN,
        tail_ok: false,
    };
    if !dimension_ok || !eps_positive {
        return evidence;
    }
    let d = c.d;
    let eps = to_f64(&c.eps);

    let mut acc = vec![0.0; d];
    let mut buf = vec![0.0; d];
    for &m in &c.f {
        fam.vector_term_into(m, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b;
        }
    }
    evidence.deviation = norm(&sub(&acc, &targets[..d]));
    evidence.accuracy_ok = evidence.deviation < eps - cfg.slack;

    let threshold = eps / cfg.schedule.value(d);
    evidence.tail_threshold = threshold;
    let limit = threshold - cfg.slack;
    let tail = fam.tail_bound(d);
    let base_cutoff = cutoff.unwrap_or(c.f.len() + cfg.cutoff_margin);
    let cutoff = match tail.first_below(limit, cfg.max_cutoff) {
        Some(m) => base_cutoff.max(m),
        None => base_cutoff.max(cfg.max_cutoff),
    };
    evidence.cutoff = cutoff;
    evidence.tail_bound_at_cutoff = tail.bound_at(cutoff);
    let mut worst = 0.0;
    let mut worst_index = None;
    for m in 0..cutoff {
        if used.contains(m) {
            continue;
        }
        fam.vector_term_into(m, &mut buf);
        let n = norm(&buf);
        if n > worst {
            worst = n;
            worst_index = Some(m);
        }
    }
    evidence.max_unused_norm = worst;
    evidence.worst_unused = worst_index;
    evidence.tail_ok = worst < limit && evidence.tail_bound_at_cutoff < limit;
    evidence
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkEvidence {
    pub extends: bool,
    pub dims_ok: bool,
    /// Largest norm of `Σ_{k in m \ dom f} a_{g(k)}` over `m <= |g|`, first `d` coordinates.
    pub max_block_prefix_norm: f64,
    pub envelope_ok: bool,
    /// Norm of the whole block sum, first `d` coordinates.
    pub block_sum_norm: f64,
    /// `2 eps - 2 delta`.
    pub budget: f64,
    pub budget_ok: bool,
}

impl LinkEvidence {
    pub fn first_failure(&self) -> Option<Bullet> {
        if !self.extends {
            Some(Bullet::Extension)
        } else if !self.dims_ok {
            Some(Bullet::DimensionOrder)
        } else if !self.envelope_ok {
            Some(Bullet::Envelope)
        } else if !self.budget_ok {
            Some(Bullet::Budget)
        } else {
            None
        }
    }

    pub fn ok(&self) -> bool {
        self.first_failure().is_none()
    }
}

/// Checks the four order bullets for `lower <= upper`.
pub fn leq(lower: &Condition, upper: &Condition, fam: &FamilyVector, cfg: &ForcingConfig) -> LinkEvidence {
    let extends = lower.f.len() >= upper.f.len() && lower.f[..upper.f.len()] == upper.f[..];
    let dims_ok = lower.d >= upper.d;
    let d = upper.d.min(fam.len());
    let eps = to_f64(&upper.eps);
    let block = if extends { &lower.f[upper.f.len()..] } else { &[][..] };
    let mut acc = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for &m in block {
        fam.vector_term_into(m, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b;
        }
        worst = worst.max(norm(&acc));
    }
    let block_sum_norm = norm(&acc);
    let two = Rational::from_integer(BigInt::from(2));
    let budget = to_f64(&(&two * &upper.eps - &two * &lower.eps));
    LinkEvidence {
        extends,
        dims_ok,
        max_block_prefix_norm: worst,
        envelope_ok: extends && worst < 2.0 * eps - cfg.slack,
        block_sum_norm,
        budget,
        budget_ok: extends && block_sum_norm <= budget,
    }
}

/// `(∅, 1, eps0)` with `eps0 = max(|x_0|, C_1 sup_m |a^0_m|) + 1`.
pub fn initial_condition(fam: &FamilyVector, targets: &[f64], cfg: &ForcingConfig) -> Condition {
    let sup = fam.tail_sup_bound(0, 1);
    let base = targets[0].abs().max(cfg.schedule.value(1) * sup);
    let eps = Rational::from_float(base).unwrap_or_else(Rational::zero) + Rational::one();
    Condition {
        f: Vec::new(),
        d: 1,
        eps,
    }
}

/// Quantities chosen while extending a condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtendReport {
    #[serde(serialize_with = "serialize_rational")]
    pub eta: Rational,
    #[serde(serialize_with = "serialize_rational")]
    pub delta: Rational,
    /// Length of the injection of the new condition.
    pub n_star: usize,
    pub mandatory: usize,
    pub chased: usize,
    pub excursion: f64,
}

fn pow2(t: u32) -> Rational {
    Rational::from_integer(BigInt::one() << t)
}

/// One extension step: from `(f, d, eps)` to `(g, d + 1, delta)` with
/// `delta < 1/n` and every index below `n` in the range of `g`.
///
/// Steps: pick `eta = eps (1 - 2^-t)` with the smallest `t` whose `eta / C_d`
/// exceeds every unused term; pick `delta = 1/q` below `1/n`,
/// `(eps - eta) / 2` and `(eps - |dev f|) / 2`; force in every index whose
/// term could exceed `delta / (2 C_{d+1})`; chase the `d + 1` targets to
/// within `delta / 2`; cut at the first stage where that holds and the block
/// sum is at most `eps - delta`; finally order the block by anchored
/// confinement. Cutting at `delta / 2` rather than `delta` leaves the next
/// round room to pick a `delta` of comparable size.
pub fn extend(
    c: &Condition,
    n: usize,
    fam: &FamilyVector,
    targets: &[f64],
    seed: u64,
    budget: usize,
    cfg: &ForcingConfig,
) -> Result<(Condition, ExtendReport), ForcingError> {
    let d = c.d;
    let dd = d + 1;
    if fam.len() < dd || targets.len() < dd {
        return Err(ForcingError::TooFewSeries {
            needed: dd,
            series: fam.len(),
            targets: targets.len(),
        });
    }
    let evidence = is_condition(c, fam, targets, None, cfg);
    if let Some(b) = evidence.first_failure() {
        return Err(ForcingError::InvalidCondition(b));
    }
    let c_d = cfg.schedule.value(d);
    let c_next = cfg.schedule.value(dd);

    let sup_unused = evidence.sup_unused();
    let eta = (1..=MAX_ETA_STEPS)
        .map(|t| &c.eps * (Rational::one() - Rational::one() / pow2(t)))
        .find(|eta| to_f64(eta) / c_d - cfg.slack > sup_unused)
        .ok_or(ForcingError::InfeasibleEta {
            sup_unused,
            limit: to_f64(&c.eps) / c_d,
        })?;

    let two = Rational::from_integer(BigInt::from(2));
    let eta_cap = (&c.eps - &eta) / &two;
    let eps_f = to_f64(&c.eps);
    let dev_cap = (eps_f - evidence.deviation - cfg.slack) / 2.0;
    let mut delta_max = to_f64(&eta_cap).min(dev_cap);
    if n > 0 {
        delta_max = delta_max.min(1.0 / n as f64);
    }
    let mut q = (1.0 / delta_max).floor() as u64 + 1;
    let delta = loop {
        let candidate = Rational::new(BigInt::one(), BigInt::from(q));
        let below_n = n == 0 || candidate < Rational::new(BigInt::one(), BigInt::from(n));
        if below_n && candidate < eta_cap && to_f64(&candidate) < dev_cap {
            break candidate;
        }
        q += 1;
    };
    let delta_f = to_f64(&delta);

    let tail_target = delta_f / (cfg.tail_margin * c_next);
    let required = fam
        .tail_bound(dd)
        .first_below(tail_target, budget)
        .ok_or(ForcingError::BudgetExhausted {
            budget,
            best_deviation: evidence.deviation,
        })?;
    let used_f = UsedSet::from_indices(&c.f);
    let mandatory: Vec<usize> = (0..required.max(n)).filter(|m| !used_f.contains(*m)).collect();

    let active = fam.truncated(dd);
    let mut prefix = c.f.clone();
    prefix.extend(&mandatory);
    let sum_before = active.partial_sum(&prefix, dd)?;
    let residual = sub(&targets[..dd], &sum_before);
    let block_cap = eps_f - delta_f - evidence.deviation;
    let chase_eps = delta_f.min(block_cap) / 2.0;
    let mut chase_cfg = ChaseConfig::new(chase_eps, seed, budget);
    chase_cfg.restarts = cfg.restarts;
    chase_cfg.schedule = cfg.schedule.clone();
    let used = UsedSet::from_indices(&prefix);
    let selection = if norm(&residual) < chase_eps {
        None
    } else {
        let s = select_block(&active, &used, &residual, &chase_cfg);
        if !s.reached {
            return Err(ForcingError::BudgetExhausted {
                budget,
                best_deviation: s.residual,
            });
        }
        Some(s)
    };
    let chased = selection.as_ref().map_or(0, |s| s.picks.len());
    if let Some(s) = &selection {
        prefix.extend(&s.picks);
    }

    // first stage after the forced indices meeting the chase target and block size
    let f_sum = active.partial_sum(&c.f, d)?;
    let start = c.f.len() + mandatory.len();
    let mut acc = sum_before.clone();
    let mut buf = vec![0.0; dd];
    let meets = |acc: &[f64]| {
        let dev = norm(&sub(acc, &targets[..dd]));
        let block = norm(&sub(&acc[..d], &f_sum));
        dev < chase_eps && block <= eps_f - delta_f - 2.0 * cfg.slack
    };
    let mut n_star = None;
    if meets(&acc) {
        n_star = Some(start);
    } else {
        for (i, &m) in prefix[start..].iter().enumerate() {
            active.vector_term_into(m, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
            if meets(&acc) {
                n_star = Some(start + i + 1);
                break;
            }
        }
    }
    let n_star = n_star.ok_or(ForcingError::BudgetExhausted {
        budget,
        best_deviation: norm(&sub(&acc, &targets[..dd])),
    })?;

    let block = &prefix[c.f.len()..n_star];
    let (ordered, excursion) = confine_block(&active, block, d, &cfg.schedule)?;
    let mut g = c.f.clone();
    g.extend(ordered);
    let next = Condition { f: g, d: dd, eps: delta.clone() };

    let check = is_condition(&next, fam, targets, None, cfg);
    if let Some(b) = check.first_failure() {
        return Err(ForcingError::ExtensionRejected(b));
    }
    let link = leq(&next, c, fam, cfg);
    if let Some(b) = link.first_failure() {
        return Err(ForcingError::ExtensionRejected(b));
    }
    Ok((
        next,
        ExtendReport {
            eta,
            delta,
            n_star,
            mandatory: mandatory.len(),
            chased,
            excursion,
        },
    ))
}

/// A descending chain with the evidence for every element and link.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateChain {
    pub conditions: Vec<Condition>,
    pub condition_checks: Vec<ConditionEvidence>,
    pub links: Vec<LinkEvidence>,
    pub reports: Vec<ExtendReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub chain: CertificateChain,
    pub plan: PrefixPlan,
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("round {round} failed: {source}")]
pub struct RunError {
    pub round: usize,
    pub partial: Box<CertificateChain>,
    #[source]
    pub source: ForcingError,
}

/// Builds `rounds + 1` conditions: the initial one, then one extension per
/// round `n = 1..=rounds` with `d_n = n + 1` and `eps_n < 1/n`.
pub fn run(
    fam: &FamilyVector,
    targets: &[f64],
    rounds: usize,
    seed: u64,
    budget: usize,
    cfg: &ForcingConfig,
) -> Result<RunOutput, RunError> {
    let fail = |round: usize, chain: &CertificateChain, source: ForcingError| RunError {
        round,
        partial: Box::new(chain.clone()),
        source,
    };
    let mut chain = CertificateChain {
        conditions: Vec::new(),
        condition_checks: Vec::new(),
        links: Vec::new(),
        reports: Vec::new(),
    };
    let needed = rounds + 1;
    if fam.len() < needed || targets.len() < needed {
        return Err(fail(
            0,
            &chain,
            ForcingError::TooFewSeries {
                needed,
                series: fam.len(),
                targets: targets.len(),
            },
        ));
    }
    let c0 = initial_condition(fam, targets, cfg);
    let ev = is_condition(&c0, fam, targets, None, cfg);
    if let Some(b) = ev.first_failure() {
        return Err(fail(0, &chain, ForcingError::InvalidCondition(b)));
    }
    chain.conditions.push(c0);
    chain.condition_checks.push(ev);
    for round in 1..=rounds {
        let prev = chain.conditions.last().expect("chain is nonempty");
        let round_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(round as u64);
        let (next, report) = extend(prev, round, fam, targets, round_seed, budget, cfg)
            .map_err(|e| fail(round, &chain, e))?;
        let link = leq(&next, prev, fam, cfg);
        let ev = is_condition(&next, fam, targets, None, cfg);
        chain.links.push(link);
        chain.condition_checks.push(ev);
        chain.reports.push(report);
        chain.conditions.push(next);
    }
    let last = chain.conditions.last().expect("chain is nonempty");
    let block_start = chain
        .conditions
        .len()
        .checked_sub(2)
        .map_or(0, |i| chain.conditions[i].f.len());
    let excursion_dims = chain
        .conditions
        .len()
        .checked_sub(2)
        .map_or(last.d, |i| chain.conditions[i].d);
    let plan = PrefixPlan::measure(
        &fam.truncated(last.d),
        last.f.clone(),
        &targets[..last.d],
        block_start,
        excursion_dims,
    )
    .map_err(|e| fail(rounds, &chain, e.into()))?;
    Ok(RunOutput { chain, plan })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::SeriesSpec;

    fn fam4() -> FamilyVector {
        FamilyVector::rademacher_levels(4, 1.0)
    }

    fn rational(p: i64, q: i64) -> Rational {
        Rational::new(BigInt::from(p), BigInt::from(q))
    }

    const TARGETS: [f64; 4] = [0.1, -0.2, 0.3, 0.0];

    #[test]
    fn initial_condition_is_valid() {
        let cfg = ForcingConfig::default();
        let c = initial_condition(&fam4(), &TARGETS, &cfg);
        assert_eq!(c.eps, rational(3, 1));
        assert!(is_condition(&c, &fam4(), &TARGETS, None, &cfg).ok());
    }

    #[test]
    fn empty_condition_fails_accuracy_when_eps_small() {
        let cfg = ForcingConfig::default();
        let c = Condition { f: vec![], d: 1, eps: rational(1, 20) };
        let ev = is_condition(&c, &fam4(), &TARGETS, None, &cfg);
        assert_eq!(ev.first_failure(), Some(Bullet::Accuracy));
    }

    #[test]
    fn omitted_first_term_fails_tail() {
        let cfg = ForcingConfig::default();
        let fam = FamilyVector::new(vec![SeriesSpec::alternating(1.0)]);
        // f = [1] sums to -1/2, target -1/2: accuracy holds, a_0 = 1 is unused
        let c = Condition { f: vec![1], d: 1, eps: rational(3, 2) };
        let ev = is_condition(&c, &fam, &[-0.5], None, &cfg);
        assert!(ev.accuracy_ok);
        assert!(!ev.tail_ok);
        assert_eq!(ev.worst_unused, Some(0));
    }

    #[test]
    fn duplicate_entries_fail_injection() {
        let cfg = ForcingConfig::default();
        let c = Condition { f: vec![0, 0], d: 1, eps: rational(3, 1) };
        let ev = is_condition(&c, &fam4(), &TARGETS, None, &cfg);
        assert_eq!(ev.first_failure(), Some(Bullet::Injection));
    }

    #[test]
    fn leq_is_reflexive_and_checks_dimension() {
        let cfg = ForcingConfig::default();
        let c = initial_condition(&fam4(), &TARGETS, &cfg);
        assert!(leq(&c, &c, &fam4(), &cfg).ok());
        let higher = Condition { f: vec![], d: 2, eps: c.eps.clone() };
        let ev = leq(&c, &higher, &fam4(), &cfg);
        assert_eq!(ev.first_failure(), Some(Bullet::DimensionOrder));
    }

    #[test]
    fn extend_two_series() {
        let cfg = ForcingConfig::default();
        let fam = FamilyVector::rademacher_levels(2, 1.0);
        let targets = [0.2, -0.3];
        let c0 = initial_condition(&fam, &targets, &cfg);
        let (c1, report) = extend(&c0, 2, &fam, &targets, 5, 10_000_000, &cfg).unwrap();
        assert_eq!(c1.d, 2);
        assert!(c1.eps < rational(1, 2));
        assert!(c1.f.contains(&0) && c1.f.contains(&1));
        assert!(is_condition(&c1, &fam, &targets, None, &cfg).ok());
        assert!(leq(&c1, &c0, &fam, &cfg).ok());
        assert_eq!(report.n_star, c1.f.len());

        let (again, _) = extend(&c0, 2, &fam, &targets, 5, 10_000_000, &cfg).unwrap();
        assert_eq!(again, c1);
    }

    #[test]
    fn extend_with_n_one() {
        let cfg = ForcingConfig::default();
        let fam = FamilyVector::rademacher_levels(2, 1.0);
        let targets = [0.2, -0.3];
        let c0 = initial_condition(&fam, &targets, &cfg);
        let (c1, _) = extend(&c0, 1, &fam, &targets, 0, 10_000_000, &cfg).unwrap();
        assert!(c1.eps < rational(1, 1));
        assert!(c1.f.contains(&0));
    }

    #[test]
    fn extend_needs_more_series() {
        let cfg = ForcingConfig::default();
        let fam = FamilyVector::rademacher_levels(1, 1.0);
        let c0 = initial_condition(&fam, &[0.1], &cfg);
        assert!(matches!(
            extend(&c0, 1, &fam, &[0.1], 0, 1000, &cfg),
            Err(ForcingError::TooFewSeries { .. })
        ));
    }

    #[test]
    fn run_with_zero_rounds() {
        let cfg = ForcingConfig::default();
        let out = run(&fam4(), &TARGETS, 0, 1, 1_000_000, &cfg).unwrap();
        assert_eq!(out.chain.conditions.len(), 1);
        assert!(out.chain.links.is_empty());
    }

    #[test]
    fn run_three_rounds() {
        let cfg = ForcingConfig::default();
        let out = run(&fam4(), &TARGETS, 3, 1, 10_000_000, &cfg).unwrap();
        let chain = &out.chain;
        assert_eq!(chain.conditions.len(), 4);
        for (n, c) in chain.conditions.iter().enumerate() {
            assert_eq!(c.d, n + 1);
            if n >= 1 {
                assert!(c.eps < rational(1, n as i64));
                for i in 0..n {
                    assert!(c.f.contains(&i));
                }
            }
        }
        for w in chain.conditions.windows(2) {
            assert!(w[1].eps < w[0].eps);
        }
        assert!(chain.links.iter().all(LinkEvidence::ok));
        assert!(chain.condition_checks.iter().all(ConditionEvidence::ok));
    }

    #[test]
    fn rationals_round_trip_text() {
        let r = rational(6, 4);
        assert_eq!(format_rational(&r), "3/2");
        assert_eq!(parse_rational("3/2"), Some(r));
        assert_eq!(format_rational(&rational(3, 1)), "3/1");
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("2"), None);
    }
}
