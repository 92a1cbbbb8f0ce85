//! Checks against values computed here by independent means.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};

use rearrange_core::confinement::brute_force_confine;
use rearrange_core::series::{classical_sum, FamilyVector, SeriesSpec};
use rearrange_core::subspace::{dependency_decompose, predicted_dependent_limit};

/// Mean of consecutive partial sums of the alternating harmonic series.
fn averaged_partial_sums(terms: usize) -> f64 {
    let mut s = 0.0;
    let mut prev = 0.0;
    for m in 0..terms {
        prev = s;
        let t = 1.0 / (m as f64 + 1.0);
        s += if m % 2 == 0 { t } else { -t };
    }
    0.5 * (s + prev)
}

fn basel_direct(terms: usize) -> f64 {
    // integral sandwich for the tail: 1/(N+1) < tail < 1/N
    let n = terms as f64;
    let head: f64 = (1..=terms).rev().map(|k| 1.0 / (k as f64 * k as f64)).sum();
    head + 0.5 * (1.0 / n + 1.0 / (n + 1.0))
}

#[test]
fn alternating_harmonic_sum() {
    let oracle = averaged_partial_sums(10_000_000);
    assert!((oracle - LN_2).abs() < 1e-12);
    let s = classical_sum(&SeriesSpec::alternating(1.0), 1e-6).unwrap();
    assert!((s - oracle).abs() <= 1e-6);
}

#[test]
fn squares_sum() {
    let oracle = basel_direct(1_000_000);
    assert!((oracle - PI * PI / 6.0).abs() < 1e-12);
    let s = classical_sum(&SeriesSpec::abs_power(2.0, 1.0), 1e-6).unwrap();
    assert!((s - oracle).abs() <= 1e-6);
}

#[test]
fn second_rademacher_level_sum() {
    // 1 + 1/2 - 1/3 - 1/4 + ... = pi/4 + ln(2)/2
    let oracle = PI / 4.0 + LN_2 / 2.0;
    let s = classical_sum(&SeriesSpec::rademacher(1, 1.0), 1e-8).unwrap();
    assert!((s - oracle).abs() <= 1e-8);
}

#[test]
fn dependent_limit_of_triple_family() {
    let a0 = SeriesSpec::rademacher(0, 1.0);
    let a1 = SeriesSpec::rademacher(1, 1.0);
    let a2 = SeriesSpec::composite(
        vec![(-1.0, a0.clone()), (-1.0, a1.clone())],
        Some(SeriesSpec::abs_power(2.0, 1.0)),
    );
    let fam = FamilyVector::new(vec![a0, a1, a2]);
    let structure = dependency_decompose(&fam).unwrap();
    assert_eq!(structure.independent, vec![0, 1]);
    let dep = structure.dependent(2).unwrap();
    assert!((dep.abs_sum - PI * PI / 6.0).abs() < 1e-9);

    let s0 = LN_2;
    let s1 = PI / 4.0 + LN_2 / 2.0;
    let s2 = -s0 - s1 + PI * PI / 6.0;
    let achieved = BTreeMap::from([(0, s0 + 0.2), (1, s1 + 0.3)]);
    let predicted = predicted_dependent_limit(&structure, &achieved, 2).unwrap();
    assert!((predicted - (s2 - 0.5)).abs() < 1e-9);
    let natural = BTreeMap::from([(0, s0), (1, s1)]);
    let predicted = predicted_dependent_limit(&structure, &natural, 2).unwrap();
    assert!((predicted - s2).abs() < 1e-9);
}

fn max_prefix(vectors: &[Vec<f64>], order: &[usize]) -> f64 {
    let d = vectors[0].len();
    let mut acc = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for &i in order {
        for (a, x) in acc.iter_mut().zip(&vectors[i]) {
            *a += x;
        }
        worst = worst.max(acc.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    worst
}

/// Heap's algorithm over positions 1.., position 0 kept first.
fn exhaustive_optimum(vectors: &[Vec<f64>]) -> f64 {
    let n = vectors.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = max_prefix(vectors, &order);
    let k = n - 1;
    let mut c = vec![0usize; k];
    let mut i = 0;
    while i < k {
        if c[i] < i {
            let (a, b) = if i % 2 == 0 { (0, i) } else { (c[i], i) };
            order.swap(1 + a, 1 + b);
            best = best.min(max_prefix(vectors, &order));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

#[test]
fn brute_force_matches_exhaustive_search() {
    // deterministic pseudo-random instances from a fixed linear congruential stream
    let mut state: u64 = 0x2545_F491_4F6C_DD1D;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    for case in 0..30 {
        let d = 1 + case % 3;
        let n = 2 + case % 6;
        let mut vectors: Vec<Vec<f64>> = (0..n - 1).map(|_| (0..d).map(|_| next() / d as f64).collect()).collect();
        let mut total = vec![0.0; d];
        for v in &vectors {
            for (t, x) in total.iter_mut().zip(v) {
                *t -= x;
            }
        }
        vectors.push(total);
        let (order, value) = brute_force_confine(&vectors).unwrap();
        let oracle = exhaustive_optimum(&vectors);
        assert!((value - oracle).abs() < 1e-12, "case {case}: {value} vs {oracle}");
        assert!((max_prefix(&vectors, &order) - value).abs() < 1e-12);
        assert_eq!(order[0], 0);
    }
}

#[test]
fn walsh_pairs_are_not_absolutely_summable() {
    let grid = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let fam = FamilyVector::rademacher_levels(2, 1.0);
    let n = 1_000_000;
    let terms: Vec<Vec<f64>> = (0..n).map(|m| fam.vector_term(m)).collect();
    for &a in &grid {
        for &b in &grid {
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let total: f64 = terms.iter().map(|t| (a * t[0] + b * t[1]).abs()).sum();
            let scale = f64::max(f64::abs(a), f64::abs(b));
            assert!(total / scale > 10.0, "({a}, {b}) gives {total}");
        }
    }
}

#[test]
fn positive_and_negative_parts_diverge() {
    // exponent 1/2: both parts pass 20 within a few hundred terms
    for spec in [SeriesSpec::alternating(0.5), SeriesSpec::rademacher(2, 0.5)] {
        let (mut pos, mut neg) = (0.0, 0.0);
        let mut m = 0;
        while pos <= 20.0 || neg >= -20.0 {
            let t = spec.term(m);
            if t > 0.0 { pos += t } else { neg += t }
            m += 1;
            assert!(m < 10_000);
        }
    }
    // exponent 1: parts grow like ln(N)/2, so 20 is out of reach; check the
    // growth per doubling instead
    let spec = SeriesSpec::rademacher(1, 1.0);
    let part = |n: usize| -> (f64, f64) {
        (0..n).map(|m| spec.term(m)).fold((0.0, 0.0), |(p, q), t| if t > 0.0 { (p + t, q) } else { (p, q + t) })
    };
    let (p1, n1) = part(1 << 20);
    let (p2, n2) = part(1 << 21);
    assert!(p2 - p1 > 0.3 && n1 - n2 > 0.3);
    assert!(p2 > 7.0 && n2 < -7.0);
}
