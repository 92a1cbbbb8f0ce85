//! The coefficient space `K` of absolutely convergent combinations, its
//! orthogonal complement `R`, and the decomposition of a family into an
//! independent core plus dependents.
//!
//! Authority rests with declared structure: every spec expands into a linear
//! form over independent conditionally convergent atoms, and a coefficient
//! vector lies in `K` exactly when the atom parts cancel. A numerical growth
//! test runs alongside as a cross-check.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::series::{classical_sum, Atom, FamilyVector, SeriesError, SeriesSpec};
use crate::vecops::{dot, norm};

/// Pivot tolerance for elimination on atom coefficient matrices.
const PIVOT_EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubspaceError {
    #[error("declared structure and growth test disagree for {coefficients:?}: {detail}")]
    Disagreement {
        coefficients: Vec<f64>,
        detail: String,
    },
    #[error("dimension {d} exceeds family length {len}")]
    DimensionTooLarge { d: usize, len: usize },
    #[error("series {0} is not a dependent member of the family")]
    NotDependent(usize),
    #[error("no achieved value supplied for independent series {0}")]
    MissingAchieved(usize),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// Finitely supported coefficient vector; values are nonzero on the support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientVector {
    pub support: Vec<usize>,
    pub values: Vec<f64>,
}

impl CoefficientVector {
    pub fn from_dense(dense: &[f64]) -> Self {
        let (support, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        CoefficientVector { support, values }
    }

    pub fn to_dense(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        for (i, v) in self.support.iter().zip(&self.values) {
            if *i < d {
                out[*i] = *v;
            }
        }
        out
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.values)
            .map(|(i, v)| v * x.get(*i).copied().unwrap_or(0.0))
            .sum()
    }
}

/// Atom coefficient columns of the first `d` series.
fn atom_columns(fam: &FamilyVector, d: usize) -> (Vec<Atom>, Vec<Vec<f64>>) {
    let forms: Vec<_> = fam.specs[..d].iter().map(SeriesSpec::linear_form).collect();
    let mut atoms: Vec<Atom> = forms.iter().flat_map(|f| f.atoms.keys().copied()).collect();
    atoms.sort();
    atoms.dedup();
    let columns = forms
        .iter()
        .map(|f| {
            atoms
                .iter()
                .map(|a| f.atoms.get(a).copied().unwrap_or(0.0))
                .collect()
        })
        .collect();
    (atoms, columns)
}

/// Null space of the `rows x cols` matrix by reduced row echelon form.
/// Each basis vector has a one in its free column, then is sign-normalized so
/// its first nonzero entry is positive.
fn null_space(matrix: &[Vec<f64>], cols: usize) -> Vec<Vec<f64>> {
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let rows = a.len();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (best, val) = (r..rows)
            .map(|i| (i, a[i][c].abs()))
            .fold((r, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= PIVOT_EPS {
            continue;
        }
        a.swap(r, best);
        let p = a[r][c];
        for x in a[r].iter_mut() {
            *x /= p;
        }
        for i in 0..rows {
            if i != r && a[i][c] != 0.0 {
                let f = a[i][c];
                for k in 0..cols {
                    a[i][k] -= f * a[r][k];
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![0.0; cols];
            v[f] = 1.0;
            for (row, &pc) in pivots.iter().enumerate() {
                let x = -a[row][f];
                v[pc] = if x.abs() <= PIVOT_EPS { 0.0 } else { x };
            }
            if let Some(first) = v.iter().find(|x| **x != 0.0) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            v
        })
        .collect()
}

/// Analytic basis of `K` for the first `d` series.
pub fn declared_k_basis(fam: &FamilyVector, d: usize) -> Result<Vec<CoefficientVector>, SubspaceError> {
    if d > fam.len() {
        return Err(SubspaceError::DimensionTooLarge { d, len: fam.len() });
    }
    let (atoms, columns) = atom_columns(fam, d);
    let matrix: Vec<Vec<f64>> = (0..atoms.len())
        .map(|a| columns.iter().map(|col| col[a]).collect())
        .collect();
    Ok(null_space(&matrix, d)
        .iter()
        .map(|v| CoefficientVector::from_dense(v))
        .collect())
}

/// True when no nonzero combination of the series is absolutely convergent.
pub fn is_independent(fam: &FamilyVector) -> bool {
    declared_k_basis(fam, fam.len()).is_ok_and(|b| b.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthConfig {
    /// Number of terms `N` in the absolute partial sums.
    pub truncation: usize,
    /// Minimum increment `G(N) - G(N/2)` of a unit coefficient vector
    /// classified as divergent. Increments at most a tenth of this count as
    /// members of `K`.
    pub threshold: f64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            truncation: 100_000,
            threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthVerdict {
    Member,
    Divergent,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthDiagnostic {
    pub coefficients: Vec<f64>,
    pub expected_member: bool,
    pub half_sum: f64,
    pub full_sum: f64,
    pub increment: f64,
    pub ratio: f64,
    pub verdict: GrowthVerdict,
}

impl GrowthDiagnostic {
    pub fn disagrees(&self) -> bool {
        matches!(
            (self.expected_member, self.verdict),
            (true, GrowthVerdict::Divergent) | (false, GrowthVerdict::Member)
        )
    }
}

/// Evaluates `Σ_{m<N} |<s, a_m>|` at `N/2` and `N` for unit-normalized `s`.
fn growth_test(terms: &[Vec<f64>], s: &[f64], expected_member: bool, cfg: &GrowthConfig) -> GrowthDiagnostic {
    let n = terms.len();
    let scale = norm(s);
    let unit: Vec<f64> = s.iter().map(|x| x / scale).collect();
    let mut half_sum = 0.0;
    let mut full_sum = 0.0;
    for (m, t) in terms.iter().enumerate() {
        full_sum += dot(&unit, t).abs();
        if m + 1 == n / 2 {
            half_sum = full_sum;
        }
    }
    let increment = full_sum - half_sum;
    let verdict = if increment >= cfg.threshold {
        GrowthVerdict::Divergent
    } else if increment <= cfg.threshold / 10.0 {
        GrowthVerdict::Member
    } else {
        GrowthVerdict::Inconclusive
    };
    GrowthDiagnostic {
        coefficients: s.to_vec(),
        expected_member,
        half_sum,
        full_sum,
        increment,
        ratio: if half_sum > 0.0 { full_sum / half_sum } else { f64::INFINITY },
        verdict,
    }
}

/// Probe vectors for the complement side of the growth test.
fn probe_grid(d: usize) -> Vec<Vec<f64>> {
    if d <= 4 {
        let total = 3usize.pow(d as u32);
        (1..total)
            .map(|mut code| {
                (0..d)
                    .map(|_| {
                        let digit = code % 3;
                        code /= 3;
                        digit as f64 - 1.0
                    })
                    .collect()
            })
            .collect()
    } else {
        let mut grid = Vec::new();
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            grid.push(e);
        }
        grid.push(vec![1.0; d]);
        'pairs: for i in 0..d {
            for j in i + 1..d {
                for sign in [1.0, -1.0] {
                    if grid.len() >= 64 {
                        break 'pairs;
                    }
                    let mut e = vec![0.0; d];
                    e[i] = 1.0;
                    e[j] = sign;
                    grid.push(e);
                }
            }
        }
        grid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSpace {
    pub basis: Vec<CoefficientVector>,
    pub diagnostics: Vec<GrowthDiagnostic>,
}

/// Basis of `K` for the first `d` series, with the growth cross-check.
///
/// Every declared basis vector must look convergent and every probe vector
/// projected onto the complement must look divergent; a contrary verdict is an
/// error. Inconclusive verdicts are reported but tolerated.
pub fn k_space_basis(fam: &FamilyVector, d: usize, cfg: &GrowthConfig) -> Result<KSpace, SubspaceError> {
    let basis = declared_k_basis(fam, d)?;
    let sub = fam.truncated(d);
    let terms: Vec<Vec<f64>> = (0..cfg.truncation).map(|m| sub.vector_term(m)).collect();
    let dense: Vec<Vec<f64>> = basis.iter().map(|b| b.to_dense(d)).collect();
    let complement = r_space(&basis, d);

    let mut diagnostics = Vec::new();
    for v in &dense {
        diagnostics.push(growth_test(&terms, v, true, cfg));
    }
    for probe in probe_grid(d) {
        // component of the probe inside R
        let mut p = vec![0.0; d];
        for r in &complement {
            let c = dot(&probe, r);
            for (x, y) in p.iter_mut().zip(r) {
                *x += c * y;
            }
        }
        if norm(&p) > 1e-9 {
            diagnostics.push(growth_test(&terms, &p, false, cfg));
        }
    }
    if let Some(bad) = diagnostics.iter().find(|g| g.disagrees()) {
        return Err(SubspaceError::Disagreement {
            coefficients: bad.coefficients.clone(),
            detail: format!(
                "expected {} but increment {:.3e} gives {:?}",
                if bad.expected_member { "member of K" } else { "divergence" },
                bad.increment,
                bad.verdict
            ),
        });
    }
    Ok(KSpace { basis, diagnostics })
}

/// Orthonormal basis of the orthogonal complement of `span(k_basis)` in `R^d`.
pub fn r_space(k_basis: &[CoefficientVector], d: usize) -> Vec<Vec<f64>> {
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    let push_orthogonal = |v: Vec<f64>, ortho: &mut Vec<Vec<f64>>| -> bool {
        let mut w = v;
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in ortho.iter() {
                let c = dot(&w, q);
                for (x, y) in w.iter_mut().zip(q) {
                    *x -= c * y;
                }
            }
        }
        let n = norm(&w);
        if n > 1e-10 {
            ortho.push(w.into_iter().map(|x| x / n).collect());
            true
        } else {
            false
        }
    };
    for b in k_basis {
        let v = b.to_dense(d);
        let n = norm(&v);
        if n > 0.0 {
            push_orthogonal(v.iter().map(|x| x / n).collect(), &mut ortho);
        }
    }
    let k_dim = ortho.len();
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        push_orthogonal(e, &mut ortho);
    }
    ortho.split_off(k_dim)
}

/// How a dependent series is pinned down by earlier independent ones:
/// `a^j + Σ_k d_k a^k` is absolutely convergent with sum `c_j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dependent {
    pub index: usize,
    /// `(k, d^j_k)` for `k` in the independent set below `j`.
    pub coefficients: Vec<(usize, f64)>,
    pub abs_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependencyStructure {
    pub independent: Vec<usize>,
    pub dependents: Vec<Dependent>,
}

impl DependencyStructure {
    pub fn dependent(&self, j: usize) -> Option<&Dependent> {
        self.dependents.iter().find(|d| d.index == j)
    }
}

/// Solves `A x = y` in the least-squares sense for a full-column-rank `A`
/// given as columns.
fn least_squares(columns: &[&Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = columns.len();
    let mut normal = vec![vec![0.0; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            normal[i][j] = dot(columns[i], columns[j]);
        }
        normal[i][k] = dot(columns[i], y);
    }
    for c in 0..k {
        let p = (c..k)
            .max_by(|a, b| normal[*a][c].abs().total_cmp(&normal[*b][c].abs()))
            .expect("nonempty pivot range");
        normal.swap(c, p);
        let pivot = normal[c][c];
        for x in normal[c].iter_mut() {
            *x /= pivot;
        }
        for r in 0..k {
            if r != c {
                let f = normal[r][c];
                if f != 0.0 {
                    for x in 0..=k {
                        normal[r][x] -= f * normal[c][x];
                    }
                }
            }
        }
    }
    normal.iter().map(|row| row[k]).collect()
}

/// Precision used for the absolute sums `c_j`.
pub const ABS_SUM_PRECISION: f64 = 1e-10;

/// Picks the independent set greedily in family order and expresses every
/// other series through the independent ones before it.
pub fn dependency_decompose(fam: &FamilyVector) -> Result<DependencyStructure, SubspaceError> {
    let (_, columns) = atom_columns(fam, fam.len());
    let mut independent: Vec<usize> = Vec::new();
    let mut dependents = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let basis: Vec<&Vec<f64>> = independent.iter().map(|&k| &columns[k]).collect();
        let lambda = if basis.is_empty() {
            Vec::new()
        } else {
            least_squares(&basis, col)
        };
        let mut fitted = vec![0.0; col.len()];
        for (l, b) in lambda.iter().zip(&basis) {
            for (f, x) in fitted.iter_mut().zip(b.iter()) {
                *f += l * x;
            }
        }
        let residual = norm(&crate::vecops::sub(col, &fitted));
        if residual > 1e-9 * (1.0 + norm(col)) {
            independent.push(j);
            continue;
        }
        let coefficients: Vec<(usize, f64)> = independent
            .iter()
            .zip(&lambda)
            .filter(|(_, l)| l.abs() > 1e-12)
            .map(|(&k, l)| (k, -l))
            .collect();
        let combination = absolutely_convergent_combination(fam, j, &coefficients);
        let abs_sum = classical_sum(&combination, ABS_SUM_PRECISION)?;
        dependents.push(Dependent {
            index: j,
            coefficients,
            abs_sum,
        });
    }
    Ok(DependencyStructure {
        independent,
        dependents,
    })
}

/// `a^j + Σ_k d_k a^k` as a composite spec.
fn absolutely_convergent_combination(
    fam: &FamilyVector,
    j: usize,
    coefficients: &[(usize, f64)],
) -> SeriesSpec {
    let mut terms = vec![(1.0, fam.specs[j].clone())];
    terms.extend(coefficients.iter().map(|(k, c)| (*c, fam.specs[*k].clone())));
    SeriesSpec::composite(terms, None)
}

/// Rebuilds a dependent series as `-Σ_k d_k a^k + remainder`, where the
/// remainder is the absolutely convergent part of the relation.
pub fn recompose(fam: &FamilyVector, dep: &Dependent) -> SeriesSpec {
    let combination = absolutely_convergent_combination(fam, dep.index, &dep.coefficients);
    let remainder = combination.linear_form().remainder_spec();
    SeriesSpec::composite(
        dep.coefficients
            .iter()
            .map(|(k, c)| (-c, fam.specs[*k].clone()))
            .collect(),
        remainder,
    )
}

/// Limit of dependent series `j` when each independent `k` sums to
/// `achieved[k]`: `c_j - Σ_k d^j_k achieved(k)`.
pub fn predicted_dependent_limit(
    structure: &DependencyStructure,
    achieved: &BTreeMap<usize, f64>,
    j: usize,
) -> Result<f64, SubspaceError> {
    let dep = structure.dependent(j).ok_or(SubspaceError::NotDependent(j))?;
    let mut value = dep.abs_sum;
    for (k, c) in &dep.coefficients {
        let a = achieved.get(k).ok_or(SubspaceError::MissingAchieved(*k))?;
        value -= c * a;
    }
    Ok(value)
}

/// Whether `xbar` is orthogonal, within `tol`, to every generator of `K`.
pub fn membership_check(xbar: &[f64], k_basis: &[CoefficientVector], tol: f64) -> bool {
    k_basis.iter().all(|s| s.dot(xbar).abs() <= tol)
}

/// Attainable sums of a finite family: classical sums plus `R`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineSumRange {
    pub offset: Vec<f64>,
    pub subspace_basis: Vec<Vec<f64>>,
    pub k_generators: Vec<CoefficientVector>,
}

pub fn sum_range(fam: &FamilyVector, precision: f64) -> Result<AffineSumRange, SubspaceError> {
    let offset = fam
        .specs
        .iter()
        .map(|s| classical_sum(s, precision))
        .collect::<Result<Vec<_>, _>>()?;
    let k_generators = declared_k_basis(fam, fam.len())?;
    let subspace_basis = r_space(&k_generators, fam.len());
    Ok(AffineSumRange {
        offset,
        subspace_basis,
        k_generators,
    })
}

impl AffineSumRange {
    /// Whether `x - offset` lies in `R` within `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let dev = crate::vecops::sub(x, &self.offset);
        membership_check(&dev, &self.k_generators, tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rad(l: u32) -> SeriesSpec {
        SeriesSpec::rademacher(l, 1.0)
    }

    fn triple() -> FamilyVector {
        FamilyVector::new(vec![
            rad(0),
            rad(1),
            SeriesSpec::composite(
                vec![(-1.0, rad(0)), (-1.0, rad(1))],
                Some(SeriesSpec::abs_power(2.0, 1.0)),
            ),
        ])
    }

    fn quick() -> GrowthConfig {
        GrowthConfig {
            truncation: 20_000,
            ..GrowthConfig::default()
        }
    }

    #[test]
    fn independent_pair_has_trivial_k() {
        let fam = FamilyVector::rademacher_levels(2, 1.0);
        let k = k_space_basis(&fam, 2, &quick()).unwrap();
        assert!(k.basis.is_empty());
        assert!(k.diagnostics.iter().all(|g| g.verdict == GrowthVerdict::Divergent));
        assert_eq!(r_space(&k.basis, 2).len(), 2);
    }

    #[test]
    fn triple_family_k_basis() {
        let k = k_space_basis(&triple(), 3, &quick()).unwrap();
        assert_eq!(k.basis.len(), 1);
        assert_eq!(k.basis[0].to_dense(3), vec![1.0, 1.0, 1.0]);
        let r = r_space(&k.basis, 3);
        assert_eq!(r.len(), 2);
        for v in &r {
            assert!((v.iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_copy_k_basis() {
        let spec = SeriesSpec::alternating(1.0);
        let fam = FamilyVector::new(vec![spec.clone(), SeriesSpec::composite(vec![(2.0, spec)], None)]);
        let k = k_space_basis(&fam, 2, &quick()).unwrap();
        assert_eq!(k.basis.len(), 1);
        assert_eq!(k.basis[0].to_dense(2), vec![2.0, -1.0]);
    }

    #[test]
    fn r_space_edge_cases() {
        assert_eq!(r_space(&[], 2).len(), 2);
        let full = vec![
            CoefficientVector::from_dense(&[1.0, 0.0]),
            CoefficientVector::from_dense(&[0.0, 1.0]),
        ];
        assert!(r_space(&full, 2).is_empty());
    }

    #[test]
    fn growth_test_catches_false_declarations() {
        // declaring rad0 absolutely convergent contradicts the numerics
        let terms: Vec<Vec<f64>> = (0..20_000).map(|m| vec![rad(0).term(m)]).collect();
        let g = growth_test(&terms, &[1.0], true, &quick());
        assert!(g.disagrees());
    }

    #[test]
    fn decompositions() {
        let d = dependency_decompose(&FamilyVector::rademacher_levels(2, 1.0)).unwrap();
        assert_eq!(d.independent, vec![0, 1]);
        assert!(d.dependents.is_empty());

        let d = dependency_decompose(&triple()).unwrap();
        assert_eq!(d.independent, vec![0, 1]);
        let dep = d.dependent(2).unwrap();
        assert_eq!(dep.coefficients, vec![(0, 1.0), (1, 1.0)]);
        assert!((dep.abs_sum - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-9);

        let spec = SeriesSpec::alternating(1.0);
        let fam = FamilyVector::new(vec![spec.clone(), SeriesSpec::composite(vec![(2.0, spec)], None)]);
        let d = dependency_decompose(&fam).unwrap();
        assert_eq!(d.independent, vec![0]);
        let dep = d.dependent(1).unwrap();
        assert_eq!(dep.coefficients, vec![(0, -2.0)]);
        assert_eq!(dep.abs_sum, 0.0);
    }

    #[test]
    fn recompose_reproduces_terms() {
        let fam = triple();
        let d = dependency_decompose(&fam).unwrap();
        let rebuilt = recompose(&fam, d.dependent(2).unwrap());
        for m in 0..1000 {
            assert_eq!(rebuilt.term(m), fam.specs[2].term(m));
        }
    }

    #[test]
    fn predicted_limits() {
        let fam = triple();
        let d = dependency_decompose(&fam).unwrap();
        let s: Vec<f64> = fam
            .specs
            .iter()
            .map(|x| classical_sum(x, 1e-10).unwrap())
            .collect();
        let identity: BTreeMap<usize, f64> = [(0, s[0]), (1, s[1])].into();
        let p = predicted_dependent_limit(&d, &identity, 2).unwrap();
        assert!((p - s[2]).abs() < 1e-9);

        let shifted: BTreeMap<usize, f64> = [(0, s[0] + 0.2), (1, s[1] + 0.3)].into();
        let p = predicted_dependent_limit(&d, &shifted, 2).unwrap();
        assert!((p - (s[2] - 0.5)).abs() < 1e-9);

        assert_eq!(
            predicted_dependent_limit(&d, &identity, 0),
            Err(SubspaceError::NotDependent(0))
        );
        let partial: BTreeMap<usize, f64> = [(0, s[0])].into();
        assert_eq!(
            predicted_dependent_limit(&d, &partial, 2),
            Err(SubspaceError::MissingAchieved(1))
        );
    }

    #[test]
    fn membership_examples() {
        let k = vec![CoefficientVector::from_dense(&[1.0, 1.0, 1.0])];
        assert!(membership_check(&[0.1, -0.1, 0.0], &k, 1e-12));
        assert!(!membership_check(&[1.0, 0.0, 0.0], &k, 1e-12));
        assert!(membership_check(&[0.0; 3], &k, 0.0));
    }

    #[test]
    fn independence_flags() {
        assert!(is_independent(&FamilyVector::rademacher_levels(4, 1.0)));
        assert!(!is_independent(&triple()));
    }
}
