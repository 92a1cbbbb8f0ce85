//! Finite-precision rearrangements: injection prefixes whose partial sums
//! approach prescribed targets.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::confinement::{confine_with_anchor, ConfineError, ConstantSchedule};
use crate::series::{FamilyVector, SeriesError, SeriesSpec};
use crate::subspace::is_independent;
use crate::vecops::{norm, sub};

/// Upper bound on the number of residue classes scanned per chase step.
const MAX_CLASSES: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RearrangeError {
    #[error("series is not conditionally convergent")]
    NotConditionallyConvergent,
    #[error("family is not independent")]
    NotIndependent,
    #[error("eps must be positive, got {0}")]
    BadEps(f64),
    #[error("target has {found} coordinates, family has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("budget of {budget} exhausted; best deviation {:.6e}", best.deviation)]
    BudgetExhausted { budget: usize, best: Box<PrefixPlan> },
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Confine(#[from] ConfineError),
}

/// Target sums, one per series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetVector(pub Vec<f64>);

impl TargetVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn head(&self, d: usize) -> &[f64] {
        &self.0[..d.min(self.0.len())]
    }
}

impl From<Vec<f64>> for TargetVector {
    fn from(v: Vec<f64>) -> Self {
        TargetVector(v)
    }
}

/// A finite injection prefix with its measured accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefixPlan {
    pub injection: Vec<usize>,
    /// Norm of (partial sum - target) over the first `dims` coordinates.
    pub deviation: f64,
    pub dims: usize,
    /// Largest norm, over the first `excursion_dims` coordinates, of a partial
    /// sum of the block appended at position `block_start`.
    pub max_excursion: f64,
    pub excursion_dims: usize,
    pub block_start: usize,
}

impl PrefixPlan {
    pub fn empty(dims: usize) -> Self {
        PrefixPlan {
            injection: Vec::new(),
            deviation: 0.0,
            dims,
            max_excursion: 0.0,
            excursion_dims: dims,
            block_start: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.injection.len()
    }

    pub fn is_empty(&self) -> bool {
        self.injection.is_empty()
    }

    pub fn used_set(&self) -> BTreeSet<usize> {
        self.injection.iter().copied().collect()
    }

    /// Builds a plan over `injection`, recomputing deviation and excursion
    /// from the series terms.
    pub fn measure(
        fam: &FamilyVector,
        injection: Vec<usize>,
        target: &[f64],
        block_start: usize,
        excursion_dims: usize,
    ) -> Result<Self, SeriesError> {
        let dims = target.len().min(fam.len());
        let sum = fam.partial_sum(&injection, dims)?;
        let deviation = norm(&sub(&sum, &target[..dims]));
        let max_excursion = block_excursion(fam, &injection[block_start..], excursion_dims);
        Ok(PrefixPlan {
            injection,
            deviation,
            dims,
            max_excursion,
            excursion_dims,
            block_start,
        })
    }
}

/// Largest norm of the partial sums of `block` over the first `d` coordinates.
pub fn block_excursion(fam: &FamilyVector, block: &[usize], d: usize) -> f64 {
    let d = d.min(fam.len());
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
    worst
}

/// Riemann's greedy rearrangement of a single conditionally convergent series.
///
/// While the running sum is at most the target the next unused positive term
/// is appended, otherwise the next unused negative term. Stops as soon as the
/// sum is within `eps`. `budget` caps the largest index examined.
pub fn riemann_rearrange(
    spec: &SeriesSpec,
    target: f64,
    eps: f64,
    budget: usize,
) -> Result<PrefixPlan, RearrangeError> {
    if !(eps > 0.0) {
        return Err(RearrangeError::BadEps(eps));
    }
    if !spec.is_conditionally_convergent() {
        return Err(RearrangeError::NotConditionallyConvergent);
    }
    let fam = FamilyVector::new(vec![spec.clone()]);
    let mut positive = 0usize;
    let mut negative = 0usize;
    let mut sum = 0.0;
    let mut injection = Vec::new();
    while (sum - target).abs() >= eps {
        let (ptr, want_positive) = if sum <= target {
            (&mut positive, true)
        } else {
            (&mut negative, false)
        };
        loop {
            if *ptr >= budget {
                let best = PrefixPlan::measure(&fam, injection, &[target], 0, 1)?;
                return Err(RearrangeError::BudgetExhausted {
                    budget,
                    best: Box::new(best),
                });
            }
            let t = spec.term(*ptr);
            if (want_positive && t > 0.0) || (!want_positive && t < 0.0) {
                break;
            }
            *ptr += 1;
        }
        injection.push(*ptr);
        sum += spec.term(*ptr);
        *ptr += 1;
    }
    Ok(PrefixPlan::measure(&fam, injection, &[target], 0, 1)?)
}

#[derive(Debug, Clone)]
pub struct ChaseConfig {
    pub eps: f64,
    pub seed: u64,
    /// Largest admissible term index, also the cap on chase steps.
    pub budget: usize,
    /// Independent restarts; restart 0 is the plain greedy chase.
    pub restarts: usize,
    /// Coordinates over which excursions are measured and confined;
    /// `None` means all coordinates.
    pub excursion_dims: Option<usize>,
    pub schedule: ConstantSchedule,
}

impl ChaseConfig {
    pub fn new(eps: f64, seed: u64, budget: usize) -> Self {
        ChaseConfig {
            eps,
            seed,
            budget,
            restarts: 3,
            excursion_dims: None,
            schedule: ConstantSchedule::default(),
        }
    }
}

/// Growable membership bitmap over term indices.
#[derive(Debug, Clone, Default)]
pub(crate) struct UsedSet {
    bits: Vec<bool>,
}

impl UsedSet {
    pub(crate) fn from_indices(indices: &[usize]) -> Self {
        let mut set = UsedSet::default();
        for &m in indices {
            set.insert(m);
        }
        set
    }

    pub(crate) fn contains(&self, m: usize) -> bool {
        self.bits.get(m).copied().unwrap_or(false)
    }

    pub(crate) fn insert(&mut self, m: usize) {
        if m >= self.bits.len() {
            self.bits.resize((m + 1).max(self.bits.len() * 2), false);
        }
        self.bits[m] = true;
    }
}

/// Outcome of one chase: picked indices in chase order and the final residual.
#[derive(Debug, Clone)]
pub(crate) struct Selection {
    pub picks: Vec<usize>,
    pub residual: f64,
    pub reached: bool,
}

/// Greedy residue-class chase.
///
/// Indices are grouped by residue modulo the family's sign period; within a
/// class every coordinate keeps its sign, so the class head is the largest
/// remaining term along a fixed sign direction. Each step appends the head
/// whose term most reduces the residual. When no head improves the residual
/// the floor below which classes are not consulted doubles, which refines the
/// step size. Restarts after the first take a random improving head with
/// probability 1/4.
fn greedy_select(
    fam: &FamilyVector,
    used: &UsedSet,
    residual: &[f64],
    eps: f64,
    budget: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Selection {
    let dims = residual.len();
    let period = fam.sign_period().clamp(1, MAX_CLASSES);
    let mut used = used.clone();
    let mut r = residual.to_vec();
    let mut r2: f64 = r.iter().map(|x| x * x).sum();
    let mut pointers: Vec<usize> = (0..period).collect();
    let mut floor = 0usize;
    let mut picks = Vec::new();
    let mut term = vec![0.0; dims];
    let mut improving: Vec<(usize, usize)> = Vec::new();
    let mut rng = rng;
    let eps2 = eps * eps;

    while r2 >= eps2 {
        if picks.len() >= budget {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        improving.clear();
        for (c, ptr) in pointers.iter_mut().enumerate() {
            while used.contains(*ptr) {
                *ptr += period;
            }
            let h = *ptr;
            if h >= budget {
                continue;
            }
            fam.vector_term_into(h, &mut term);
            let score: f64 = r.iter().zip(&term).map(|(a, b)| (a - b) * (a - b)).sum();
            if score < r2 {
                improving.push((c, h));
            }
            let better = match best {
                None => true,
                Some((s, bh, _)) => score < s || (score == s && h < bh),
            };
            if better {
                best = Some((score, h, c));
            }
        }
        let Some((score, mut h, mut c)) = best else {
            break;
        };
        if score >= r2 {
            floor = (floor * 2).max(floor + period);
            if floor >= budget {
                break;
            }
            for (c, ptr) in pointers.iter_mut().enumerate() {
                if *ptr < floor {
                    *ptr = floor + (c + period - floor % period) % period;
                }
            }
            continue;
        }
        if let Some(rng) = rng.as_deref_mut() {
            if improving.len() > 1 && rng.gen_bool(0.25) {
                (c, h) = improving[rng.gen_range(0..improving.len())];
            }
        }
        fam.vector_term_into(h, &mut term);
        for (a, b) in r.iter_mut().zip(&term) {
            *a -= b;
        }
        r2 = r.iter().map(|x| x * x).sum();
        used.insert(h);
        picks.push(h);
        pointers[c] = h + period;
    }
    Selection {
        picks,
        residual: r2.sqrt(),
        reached: r2 < eps2,
    }
}

/// Runs the configured restarts and keeps the best by residual, then restart
/// ordinal.
pub(crate) fn select_block(
    fam: &FamilyVector,
    used: &UsedSet,
    residual: &[f64],
    cfg: &ChaseConfig,
) -> Selection {
    let restarts = cfg.restarts.max(1);
    let runs: Vec<Selection> = (0..restarts)
        .into_par_iter()
        .map(|k| {
            if k == 0 {
                greedy_select(fam, used, residual, cfg.eps, cfg.budget, None)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
                greedy_select(fam, used, residual, cfg.eps, cfg.budget, Some(&mut rng))
            }
        })
        .collect();
    runs.into_iter()
        .reduce(|best, next| {
            if next.residual < best.residual {
                next
            } else {
                best
            }
        })
        .expect("at least one restart")
}

/// Orders `block` so its partial sums over the first `d` coordinates stay
/// confined; returns the ordering and its excursion.
pub(crate) fn confine_block(
    fam: &FamilyVector,
    block: &[usize],
    d: usize,
    schedule: &ConstantSchedule,
) -> Result<(Vec<usize>, f64), ConfineError> {
    if block.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    let d = d.min(fam.len());
    let vectors: Vec<Vec<f64>> = block
        .iter()
        .map(|&m| {
            let mut v = vec![0.0; d];
            fam.vector_term_into(m, &mut v);
            v
        })
        .collect();
    let rho = vectors.iter().map(|v| norm(v)).fold(0.0, f64::max);
    if rho == 0.0 {
        return Ok((block.to_vec(), 0.0));
    }
    let b = crate::vecops::sum(&vectors, d);
    let result = confine_with_anchor(&vectors, &b, rho, schedule)?;
    let ordered = result.permutation.iter().map(|&i| block[i]).collect();
    Ok((ordered, result.max_prefix_norm))
}

/// Extends `base` until the partial sums of all series are within `eps` of
/// `target`. The appended block is chosen by the residue-class chase and then
/// ordered by anchored confinement.
pub fn chase_target(
    fam: &FamilyVector,
    base: &PrefixPlan,
    target: &TargetVector,
    cfg: &ChaseConfig,
) -> Result<PrefixPlan, RearrangeError> {
    if !(cfg.eps > 0.0) {
        return Err(RearrangeError::BadEps(cfg.eps));
    }
    if target.len() != fam.len() {
        return Err(RearrangeError::DimensionMismatch {
            expected: fam.len(),
            found: target.len(),
        });
    }
    if !fam.specs.iter().all(SeriesSpec::is_conditionally_convergent) || !is_independent(fam) {
        return Err(RearrangeError::NotIndependent);
    }
    let dims = fam.len();
    let exc = cfg.excursion_dims.unwrap_or(dims).min(dims);
    let current = fam.partial_sum(&base.injection, dims)?;
    let residual = sub(&target.0, &current);
    let start = base.len();
    if norm(&residual) < cfg.eps {
        return Ok(PrefixPlan::measure(fam, base.injection.clone(), &target.0, start, exc)?);
    }
    let used = UsedSet::from_indices(&base.injection);
    let selection = select_block(fam, &used, &residual, cfg);
    if !selection.reached {
        let mut injection = base.injection.clone();
        injection.extend(&selection.picks);
        let best = PrefixPlan::measure(fam, injection, &target.0, start, exc)?;
        return Err(RearrangeError::BudgetExhausted {
            budget: cfg.budget,
            best: Box::new(best),
        });
    }
    let (ordered, _) = confine_block(fam, &selection.picks, exc, &cfg.schedule)?;
    let mut injection = base.injection.clone();
    injection.extend(ordered);
    Ok(PrefixPlan::measure(fam, injection, &target.0, start, exc)?)
}

/// Appends every index below `n` missing from the plan, ordered by
/// confinement. The deviation is remeasured but not re-chased.
pub fn cover_indices(
    fam: &FamilyVector,
    plan: &PrefixPlan,
    target: &TargetVector,
    n: usize,
    schedule: &ConstantSchedule,
) -> Result<PrefixPlan, RearrangeError> {
    let used = UsedSet::from_indices(&plan.injection);
    let missing: Vec<usize> = (0..n).filter(|m| !used.contains(*m)).collect();
    if missing.is_empty() {
        return Ok(plan.clone());
    }
    let exc = plan.excursion_dims.min(fam.len()).max(1);
    let (ordered, _) = confine_block(fam, &missing, exc, schedule)?;
    let start = plan.len();
    let mut injection = plan.injection.clone();
    injection.extend(ordered);
    Ok(PrefixPlan::measure(fam, injection, &target.0, start, exc)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefixReport {
    pub ok: bool,
    pub injective: bool,
    pub duplicate: Option<usize>,
    pub deviation: f64,
    pub deviation_matches: bool,
    pub max_excursion: f64,
    pub excursion_matches: bool,
    pub flags: Vec<String>,
}

/// Recomputes a plan's claims from the series terms.
pub fn verify_prefix(fam: &FamilyVector, plan: &PrefixPlan, target: &TargetVector, d: usize) -> PrefixReport {
    let d = d.min(fam.len()).min(target.len());
    let mut flags = Vec::new();
    let mut seen = BTreeSet::new();
    let duplicate = plan.injection.iter().copied().find(|m| !seen.insert(*m));
    if let Some(m) = duplicate {
        flags.push(format!("injectivity: index {m} repeated"));
    }
    let mut acc = vec![0.0; d];
    let mut buf = vec![0.0; d];
    for &m in &plan.injection {
        fam.vector_term_into(m, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b;
        }
    }
    let deviation = norm(&sub(&acc, target.head(d)));
    let deviation_matches = d != plan.dims || (deviation - plan.deviation).abs() <= 1e-12 * (1.0 + deviation);
    if !deviation_matches {
        flags.push(format!(
            "deviation: recomputed {deviation:e}, plan claims {:e}",
            plan.deviation
        ));
    }
    let start = plan.block_start.min(plan.len());
    let max_excursion = block_excursion(fam, &plan.injection[start..], plan.excursion_dims);
    let excursion_matches = (max_excursion - plan.max_excursion).abs() <= 1e-12 * (1.0 + max_excursion);
    if !excursion_matches {
        flags.push(format!(
            "excursion: recomputed {max_excursion:e}, plan claims {:e}",
            plan.max_excursion
        ));
    }
    PrefixReport {
        ok: flags.is_empty(),
        injective: duplicate.is_none(),
        duplicate,
        deviation,
        deviation_matches,
        max_excursion,
        excursion_matches,
        flags,
    }
}
