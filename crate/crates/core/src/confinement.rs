//! Reordering finite vector lists so that every prefix sum stays small.
//!
//! The contract: given vectors of norm at most one that sum to zero, there is
//! an ordering, with the first vector held in place, whose prefix sums are all
//! bounded by a dimension constant `C_d`. The constants come from a
//! [`ConstantSchedule`]; the default is `C_d = d + 1`.
//!
//! The reorderer is a depth-first search whose first descent is the greedy
//! "pick the unused vector giving the smallest next prefix" rule. It only
//! backtracks when the bound would be exceeded, so for small inputs it is
//! exhaustive. Large inputs use a bucketed greedy pass first.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::vecops::{add_assign, dot, norm, norm_of_sum};

/// Environment variable overriding the schedule (comma-separated `C_1, C_2, ...`).
pub const SCHEDULE_ENV: &str = "RL_CONSTANT_SCHEDULE";

/// Above this many vectors the bucketed greedy pass runs before any search.
pub const EXACT_SCAN_LIMIT: usize = 1024;

pub const DEFAULT_NODE_LIMIT: usize = 5_000_000;

pub const BRUTE_FORCE_MAX: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfineError {
    #[error("vector at position {position} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        position: usize,
        expected: usize,
        found: usize,
    },
    #[error("vector sum has norm {norm:e}, exceeding tolerance {tol:e}")]
    SumMismatch { norm: f64, tol: f64 },
    #[error("vector at position {position} has norm {norm}, exceeding {limit}")]
    NormTooLarge {
        position: usize,
        norm: f64,
        limit: f64,
    },
    #[error("rho must be positive and finite, got {0}")]
    BadRho(f64),
    #[error("no ordering keeps prefix norms within {bound}")]
    BoundUnattainable { bound: f64 },
    #[error("search gave up after {nodes} nodes without meeting bound {bound}")]
    SearchLimit { nodes: usize, bound: f64 },
    #[error("brute force supports at most {max} vectors, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error("invalid constant schedule: {0}")]
    BadSchedule(String),
}

/// Nondecreasing constants `C_1 <= C_2 <= ...`, each at least one.
///
/// Explicit values cover a prefix of dimensions; past the last explicit value
/// the schedule continues with slope one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstantSchedule {
    values: Vec<f64>,
}

impl ConstantSchedule {
    pub fn from_values(values: Vec<f64>) -> Result<Self, ConfineError> {
        for (i, v) in values.iter().enumerate() {
            if !(v.is_finite() && *v >= 1.0) {
                return Err(ConfineError::BadSchedule(format!(
                    "C_{} = {v} must be finite and >= 1",
                    i + 1
                )));
            }
            if i > 0 && *v < values[i - 1] {
                return Err(ConfineError::BadSchedule(format!(
                    "C_{} = {v} is smaller than C_{} = {}",
                    i + 1,
                    i,
                    values[i - 1]
                )));
            }
        }
        Ok(ConstantSchedule { values })
    }

    pub fn parse(text: &str) -> Result<Self, ConfineError> {
        let values = text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| ConfineError::BadSchedule(format!("{s:?}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_values(values)
    }

    /// Reads [`SCHEDULE_ENV`], falling back to the default schedule.
    pub fn from_env() -> Result<Self, ConfineError> {
        match std::env::var(SCHEDULE_ENV) {
            Ok(text) if !text.trim().is_empty() => Self::parse(&text),
            _ => Ok(Self::default()),
        }
    }

    /// `C_d` for `d >= 1`.
    pub fn value(&self, d: usize) -> f64 {
        assert!(d >= 1, "constants are defined for d >= 1");
        match self.values.len() {
            0 => d as f64 + 1.0,
            k if d <= k => self.values[d - 1],
            k => self.values[k - 1] + (d - k) as f64,
        }
    }

    pub fn explicit_values(&self) -> &[f64] {
        &self.values
    }
}

/// `C_d` from the default schedule.
pub fn published_constant(d: usize) -> f64 {
    ConstantSchedule::default().value(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfinementResult {
    /// Input positions in output order; always starts with 0.
    pub permutation: Vec<usize>,
    /// Norm of each prefix sum, `prefix_norms[k]` covering the first `k + 1` vectors.
    pub prefix_norms: Vec<f64>,
    pub max_prefix_norm: f64,
    pub bound_used: f64,
}

fn dimension_of(vectors: &[Vec<f64>]) -> Result<usize, ConfineError> {
    let d = vectors.first().map_or(0, Vec::len);
    for (position, v) in vectors.iter().enumerate() {
        if v.len() != d {
            return Err(ConfineError::DimensionMismatch {
                position,
                expected: d,
                found: v.len(),
            });
        }
    }
    Ok(d)
}

/// Norms of the prefix sums of `vectors` taken in `ordering`.
pub fn prefix_norms(vectors: &[Vec<f64>], ordering: &[usize]) -> Vec<f64> {
    let d = vectors.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; d];
    ordering
        .iter()
        .map(|&i| {
            add_assign(&mut acc, &vectors[i]);
            norm(&acc)
        })
        .collect()
}

fn finish(vectors: &[Vec<f64>], permutation: Vec<usize>, bound_used: f64) -> ConfinementResult {
    let prefix_norms = prefix_norms(vectors, &permutation);
    let max_prefix_norm = prefix_norms.iter().copied().fold(0.0, f64::max);
    ConfinementResult {
        permutation,
        prefix_norms,
        max_prefix_norm,
        bound_used,
    }
}

/// Orders zero-sum vectors of norm at most one, first vector fixed, so that
/// every prefix sum has norm at most `C_d + tol`.
pub fn confine_zero_sum(
    vectors: &[Vec<f64>],
    tol: f64,
    schedule: &ConstantSchedule,
) -> Result<ConfinementResult, ConfineError> {
    let d = dimension_of(vectors)?;
    if vectors.is_empty() || d == 0 {
        return Ok(finish(vectors, (0..vectors.len()).collect(), 0.0));
    }
    let total = crate::vecops::sum(vectors, d);
    let total_norm = norm(&total);
    if total_norm > tol {
        return Err(ConfineError::SumMismatch {
            norm: total_norm,
            tol,
        });
    }
    for (position, v) in vectors.iter().enumerate() {
        let n = norm(v);
        if n > 1.0 + tol {
            return Err(ConfineError::NormTooLarge {
                position,
                norm: n,
                limit: 1.0 + tol,
            });
        }
    }
    let bound = schedule.value(d) + tol;
    let permutation = order_within(vectors, bound, DEFAULT_NODE_LIMIT)?;
    Ok(finish(vectors, permutation, bound))
}

/// Orders `vectors` (first fixed) so that every prefix has norm at most
/// `rho * C_d + |b|`, where `b` is their sum.
///
/// `-b` is split into `ceil(|b| / rho)` equal pieces, appended, and the
/// rescaled zero-sum list is confined; dropping the pieces afterwards moves
/// each prefix by a fraction of `b`.
pub fn confine_with_anchor(
    vectors: &[Vec<f64>],
    b: &[f64],
    rho: f64,
    schedule: &ConstantSchedule,
) -> Result<ConfinementResult, ConfineError> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(ConfineError::BadRho(rho));
    }
    let d = dimension_of(vectors)?;
    if vectors.is_empty() {
        return Ok(finish(vectors, Vec::new(), 0.0));
    }
    if b.len() != d {
        return Err(ConfineError::DimensionMismatch {
            position: vectors.len(),
            expected: d,
            found: b.len(),
        });
    }
    let mut magnitude = 0.0;
    for (position, v) in vectors.iter().enumerate() {
        let n = norm(v);
        magnitude += n;
        let limit = rho * (1.0 + 1e-12);
        if n > limit {
            return Err(ConfineError::NormTooLarge {
                position,
                norm: n,
                limit,
            });
        }
    }
    let sum_tol = 1e-9 * (1.0 + magnitude);
    let total = crate::vecops::sum(vectors, d);
    let mismatch = norm(&crate::vecops::sub(&total, b));
    if mismatch > sum_tol {
        return Err(ConfineError::SumMismatch {
            norm: mismatch,
            tol: sum_tol,
        });
    }
    let b_norm = norm(b);
    let pieces = if b_norm == 0.0 {
        0
    } else {
        (b_norm / rho).ceil().max(1.0) as usize
    };
    let n = vectors.len();
    let mut scaled: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| crate::vecops::scale(v, 1.0 / rho))
        .collect();
    let piece: Vec<f64> = b.iter().map(|x| -x / (rho * pieces.max(1) as f64)).collect();
    scaled.extend(std::iter::repeat_n(piece, pieces));

    let residual = norm(&crate::vecops::sum(&scaled, d));
    let tol = residual.max(1e-12) * 2.0 + 1e-12;
    let inner = confine_zero_sum(&scaled, tol, schedule)?;
    let permutation: Vec<usize> = inner.permutation.into_iter().filter(|&i| i < n).collect();
    let bound = rho * (schedule.value(d) + tol) + b_norm;
    Ok(finish(vectors, permutation, bound))
}

/// Exact minimum over all orderings (first fixed) of the largest prefix norm.
///
/// Returns the lexicographically first optimal ordering.
pub fn brute_force_confine(vectors: &[Vec<f64>]) -> Result<(Vec<usize>, f64), ConfineError> {
    let n = vectors.len();
    if n > BRUTE_FORCE_MAX {
        return Err(ConfineError::TooLarge {
            n,
            max: BRUTE_FORCE_MAX,
        });
    }
    let d = dimension_of(vectors)?;
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }

    struct Search<'a> {
        vectors: &'a [Vec<f64>],
        used: Vec<bool>,
        order: Vec<usize>,
        best: f64,
        best_order: Vec<usize>,
    }

    impl Search<'_> {
        fn go(&mut self, prefix: &[f64], current_max: f64) {
            if current_max >= self.best {
                return;
            }
            if self.order.len() == self.vectors.len() {
                self.best = current_max;
                self.best_order = self.order.clone();
                return;
            }
            for j in 1..self.vectors.len() {
                if self.used[j] {
                    continue;
                }
                let mut next = prefix.to_vec();
                add_assign(&mut next, &self.vectors[j]);
                let m = current_max.max(norm(&next));
                self.used[j] = true;
                self.order.push(j);
                self.go(&next, m);
                self.order.pop();
                self.used[j] = false;
            }
        }
    }

    let mut search = Search {
        vectors,
        used: vec![false; n],
        order: vec![0],
        best: f64::INFINITY,
        best_order: Vec::new(),
    };
    search.used[0] = true;
    let start = vectors[0].clone();
    debug_assert_eq!(start.len(), d);
    let m0 = norm(&start);
    search.go(&start, m0);
    Ok((search.best_order, search.best))
}

/// Finds an ordering (position 0 first) with all prefix norms `<= bound`.
fn order_within(
    vectors: &[Vec<f64>],
    bound: f64,
    node_limit: usize,
) -> Result<Vec<usize>, ConfineError> {
    if vectors.len() > EXACT_SCAN_LIMIT {
        let order = bucketed_greedy(vectors);
        let worst = prefix_norms(vectors, &order)
            .into_iter()
            .fold(0.0, f64::max);
        if worst <= bound {
            return Ok(order);
        }
    }
    backtracking_search(vectors, bound, node_limit)
}

struct Frame {
    candidates: Vec<usize>,
    next: usize,
}

fn ranked_candidates(vectors: &[Vec<f64>], used: &[bool], prefix: &[f64], bound: f64) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = vectors
        .iter()
        .enumerate()
        .filter(|(j, _)| !used[*j])
        .map(|(j, v)| (norm_of_sum(prefix, v), j))
        .filter(|(s, _)| *s <= bound)
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, j)| j).collect()
}

fn backtracking_search(
    vectors: &[Vec<f64>],
    bound: f64,
    node_limit: usize,
) -> Result<Vec<usize>, ConfineError> {
    let n = vectors.len();
    let mut prefix = vectors[0].clone();
    if norm(&prefix) > bound {
        return Err(ConfineError::BoundUnattainable { bound });
    }
    let mut order = vec![0];
    if n == 1 {
        return Ok(order);
    }
    let mut used = vec![false; n];
    used[0] = true;
    let mut stack = vec![Frame {
        candidates: ranked_candidates(vectors, &used, &prefix, bound),
        next: 0,
    }];
    let mut nodes = 0usize;
    while let Some(top) = stack.last_mut() {
        if top.next >= top.candidates.len() {
            stack.pop();
            if stack.is_empty() {
                break;
            }
            let last = order.pop().expect("a choice exists for every inner frame");
            used[last] = false;
            for (p, x) in prefix.iter_mut().zip(&vectors[last]) {
                *p -= x;
            }
            continue;
        }
        let choice = top.candidates[top.next];
        top.next += 1;
        nodes += 1;
        if nodes > node_limit {
            return Err(ConfineError::SearchLimit { nodes, bound });
        }
        used[choice] = true;
        order.push(choice);
        add_assign(&mut prefix, &vectors[choice]);
        if order.len() == n {
            return Ok(order);
        }
        stack.push(Frame {
            candidates: ranked_candidates(vectors, &used, &prefix, bound),
            next: 0,
        });
    }
    Err(ConfineError::BoundUnattainable { bound })
}

/// Greedy pass for long lists: vectors are bucketed by sign pattern and each
/// bucket is kept sorted by norm, so a step only inspects a few members per
/// bucket around the norm that best cancels the current prefix.
fn bucketed_greedy(vectors: &[Vec<f64>]) -> Vec<usize> {
    struct Bucket {
        direction: Vec<f64>,
        members: std::collections::BTreeSet<(u64, usize)>,
    }

    let mut buckets: BTreeMap<u64, Bucket> = BTreeMap::new();
    for (j, v) in vectors.iter().enumerate().skip(1) {
        let mask = v
            .iter()
            .enumerate()
            .fold(0u64, |m, (i, x)| if *x < 0.0 { m | (1 << i) } else { m });
        let n = norm(v);
        let bucket = buckets.entry(mask).or_insert_with(|| Bucket {
            direction: if n > 0.0 {
                v.iter().map(|x| x / n).collect()
            } else {
                vec![0.0; v.len()]
            },
            members: Default::default(),
        });
        bucket.members.insert((n.to_bits(), j));
    }

    let mut order = Vec::with_capacity(vectors.len());
    order.push(0);
    let mut prefix = vectors[0].clone();
    let mut picks: Vec<(u64, usize)> = Vec::with_capacity(4);
    while order.len() < vectors.len() {
        let mut best: Option<(f64, usize, u64, u64)> = None;
        for (mask, bucket) in &buckets {
            if bucket.members.is_empty() {
                continue;
            }
            let ideal = (-dot(&prefix, &bucket.direction)).max(0.0);
            let key = (ideal.to_bits(), 0usize);
            picks.clear();
            picks.extend(bucket.members.range(..key).next_back().copied());
            picks.extend(bucket.members.range(key..).next().copied());
            picks.extend(bucket.members.first().copied());
            picks.extend(bucket.members.last().copied());
            for &(bits, j) in &picks {
                let score = norm_of_sum(&prefix, &vectors[j]);
                let better = match best {
                    None => true,
                    Some((s, bj, _, _)) => score < s || (score == s && j < bj),
                };
                if better {
                    best = Some((score, j, *mask, bits));
                }
            }
        }
        let (_, j, mask, bits) = best.expect("unplaced vectors remain in some bucket");
        buckets
            .get_mut(&mask)
            .expect("bucket exists")
            .members
            .remove(&(bits, j));
        add_assign(&mut prefix, &vectors[j]);
        order.push(j);
    }
    order
}
