//! Independent certificate checker.
//!
//! Recomputes every condition and link bullet from the series terms and the
//! constant schedule alone; nothing here calls into the forcing engine.

use std::collections::HashSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::confinement::ConstantSchedule;
use crate::io::{Certificate, CERTIFICATE_FORMAT};
use crate::series::FamilyVector;

pub const DEFAULT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub subject: String,
    pub bullet: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| !c.passed)
    }

    fn push(&mut self, subject: &str, bullet: &'static str, passed: bool, detail: String) {
        self.checks.push(CheckOutcome {
            subject: subject.to_string(),
            bullet,
            passed,
            detail,
        });
    }
}

fn parse_fraction(text: &str) -> Option<BigRational> {
    let (p, q) = text.split_once('/')?;
    let p: BigInt = p.parse().ok()?;
    let q: BigInt = q.parse().ok()?;
    (!q.is_zero()).then(|| BigRational::new(p, q))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sum of the first `d` coordinates of the terms at `indices`, ascending position.
fn sum_terms(fam: &FamilyVector, indices: &[usize], d: usize, mut visit: impl FnMut(&[f64])) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    for &m in indices {
        for (i, a) in acc.iter_mut().enumerate() {
            *a += fam.specs[i].term(m);
        }
        visit(&acc);
    }
    acc
}

struct Parsed {
    d: usize,
    eps: BigRational,
}

fn check_condition(
    report: &mut VerifyReport,
    k: usize,
    cert: &Certificate,
    fam: &FamilyVector,
    targets: &[f64],
    schedule: &ConstantSchedule,
    slack: f64,
) -> Option<Parsed> {
    let subject = format!("condition {k}");
    let rec = &cert.conditions[k];

    let mut seen = HashSet::with_capacity(rec.f.len());
    let duplicate = rec.f.iter().find(|m| !seen.insert(**m));
    report.push(
        &subject,
        "injection",
        duplicate.is_none(),
        match duplicate {
            Some(m) => format!("index {m} appears twice"),
            None => format!("{} distinct indices", rec.f.len()),
        },
    );

    let d = rec.d;
    let dim_ok = d >= 1 && d <= fam.len() && d <= targets.len();
    report.push(
        &subject,
        "dimension",
        dim_ok,
        format!("d = {d}, {} series, {} targets", fam.len(), targets.len()),
    );

    let eps = parse_fraction(&rec.eps);
    let eps_ok = eps.as_ref().is_some_and(|e| *e > BigRational::zero());
    report.push(&subject, "tolerance", eps_ok, format!("eps = {}", rec.eps));
    if duplicate.is_some() || !dim_ok || !eps_ok {
        return None;
    }
    let eps = eps.expect("checked above");
    let eps_f = eps.to_f64().unwrap_or(f64::NAN);

    let sum = sum_terms(fam, &rec.f, d, |_| {});
    let dev: Vec<f64> = sum.iter().zip(targets).map(|(s, x)| s - x).collect();
    let deviation = norm(&dev);
    report.push(
        &subject,
        "accuracy",
        deviation < eps_f - slack,
        format!("deviation {deviation:e} against eps {eps_f:e}"),
    );

    let threshold = eps_f / schedule.value(d) - slack;
    let base = rec.f.len() + cert.cutoff_margin;
    let tail = fam.tail_bound(d);
    let cutoff = tail.first_below(threshold, 1 << 28).map_or(base, |m| base.max(m));
    let beyond = tail.bound_at(cutoff);
    let mut worst = (0.0, None);
    let mut term = vec![0.0; d];
    for m in 0..cutoff {
        if seen.contains(&m) {
            continue;
        }
        for (i, t) in term.iter_mut().enumerate() {
            *t = fam.specs[i].term(m);
        }
        let n = norm(&term);
        if n > worst.0 {
            worst = (n, Some(m));
        }
    }
    report.push(
        &subject,
        "tail",
        worst.0 < threshold && beyond < threshold,
        format!(
            "largest unused term {:e} at {:?} below {cutoff}, envelope {beyond:e} beyond, limit {threshold:e}",
            worst.0, worst.1
        ),
    );
    Some(Parsed { d, eps })
}

fn check_link(
    report: &mut VerifyReport,
    k: usize,
    cert: &Certificate,
    fam: &FamilyVector,
    upper: &Parsed,
    lower: &Parsed,
    slack: f64,
) {
    let subject = format!("link {k} -> {}", k + 1);
    let f = &cert.conditions[k].f;
    let g = &cert.conditions[k + 1].f;
    let extends = g.len() >= f.len() && g[..f.len()] == f[..];
    report.push(
        &subject,
        "extension",
        extends,
        format!("|f| = {}, |g| = {}", f.len(), g.len()),
    );
    report.push(
        &subject,
        "dimension order",
        lower.d >= upper.d,
        format!("e = {}, d = {}", lower.d, upper.d),
    );
    if !extends {
        return;
    }
    let d = upper.d;
    let eps_f = upper.eps.to_f64().unwrap_or(f64::NAN);
    let mut worst: f64 = 0.0;
    let block = sum_terms(fam, &g[f.len()..], d, |acc| worst = worst.max(norm(acc)));
    report.push(
        &subject,
        "envelope",
        worst < 2.0 * eps_f - slack,
        format!("largest block prefix {worst:e} against 2 eps {:e}", 2.0 * eps_f),
    );
    let two = BigRational::from_integer(BigInt::from(2));
    let budget = (&two * &upper.eps - &two * &lower.eps).to_f64().unwrap_or(f64::NAN);
    let block_norm = norm(&block);
    report.push(
        &subject,
        "budget",
        block_norm <= budget,
        format!("block sum {block_norm:e} against 2 eps - 2 delta {budget:e}"),
    );
}

/// Checks every condition and every consecutive pair of the certificate.
pub fn verify_certificate(
    cert: &Certificate,
    fam: &FamilyVector,
    targets: &[f64],
    schedule: &ConstantSchedule,
    slack: f64,
) -> VerifyReport {
    let mut report = VerifyReport { checks: Vec::new() };
    report.push(
        "certificate",
        "format",
        cert.format == CERTIFICATE_FORMAT,
        format!("format {:?}", cert.format),
    );
    let n = targets.len().min(cert.targets.len());
    let targets_ok = cert.targets.len() <= targets.len() && cert.targets[..n] == targets[..n];
    report.push(
        "certificate",
        "targets",
        targets_ok,
        format!("certificate {:?}, supplied {:?}", cert.targets, targets),
    );
    let schedule_ok = cert
        .schedule
        .iter()
        .enumerate()
        .all(|(i, c)| *c == schedule.value(i + 1));
    report.push(
        "certificate",
        "schedule",
        schedule_ok,
        format!("certificate {:?}", cert.schedule),
    );
    report.push(
        "certificate",
        "slack",
        cert.slack <= slack,
        format!("certificate slack {:e}, verifier slack {slack:e}", cert.slack),
    );
    report.push(
        "certificate",
        "nonempty",
        !cert.conditions.is_empty(),
        format!("{} conditions", cert.conditions.len()),
    );

    let parsed: Vec<Option<Parsed>> = (0..cert.conditions.len())
        .map(|k| check_condition(&mut report, k, cert, fam, targets, schedule, slack))
        .collect();
    for k in 0..parsed.len().saturating_sub(1) {
        match (&parsed[k], &parsed[k + 1]) {
            (Some(upper), Some(lower)) => check_link(&mut report, k, cert, fam, upper, lower, slack),
            _ => report.push(
                &format!("link {k} -> {}", k + 1),
                "well-formed endpoints",
                false,
                "an endpoint is not a condition".into(),
            ),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::ConditionRecord;

    fn record(f: Vec<usize>, d: usize, eps: &str) -> ConditionRecord {
        ConditionRecord {
            f,
            d,
            eps: eps.into(),
            deviation: 0.0,
            tail_threshold: 0.0,
            cutoff: 0,
            max_unused_norm: 0.0,
            tail_bound_at_cutoff: 0.0,
        }
    }

    fn cert(conditions: Vec<ConditionRecord>) -> Certificate {
        Certificate {
            format: CERTIFICATE_FORMAT.into(),
            targets: vec![0.2, -0.3],
            schedule: vec![2.0, 3.0],
            slack: DEFAULT_SLACK,
            cutoff_margin: 100,
            conditions,
            links: Vec::new(),
        }
    }

    #[test]
    fn initial_condition_alone_passes() {
        let fam = FamilyVector::rademacher_levels(2, 1.0);
        let c = cert(vec![record(vec![], 1, "3/1")]);
        let r = verify_certificate(&c, &fam, &[0.2, -0.3], &ConstantSchedule::default(), DEFAULT_SLACK);
        assert!(r.ok(), "{:?}", r.first_failure());
    }

    #[test]
    fn names_the_failing_bullet() {
        let fam = FamilyVector::rademacher_levels(2, 1.0);
        let schedule = ConstantSchedule::default();
        let c = cert(vec![record(vec![], 1, "1/10")]);
        let r = verify_certificate(&c, &fam, &[0.2, -0.3], &schedule, DEFAULT_SLACK);
        assert_eq!(r.first_failure().unwrap().bullet, "accuracy");

        let c = cert(vec![record(vec![0, 0], 1, "3/1")]);
        let r = verify_certificate(&c, &fam, &[0.2, -0.3], &schedule, DEFAULT_SLACK);
        assert_eq!(r.first_failure().unwrap().bullet, "injection");

        let c = cert(vec![record(vec![], 1, "3/1"), record(vec![], 1, "4/1")]);
        let r = verify_certificate(&c, &fam, &[0.2, -0.3], &schedule, DEFAULT_SLACK);
        assert_eq!(r.first_failure().unwrap().bullet, "budget");
    }

    #[test]
    fn fractions() {
        assert_eq!(parse_fraction("6/4"), Some(BigRational::new(3.into(), 2.into())));
        assert_eq!(parse_fraction("1/0"), None);
        assert_eq!(parse_fraction("0.5"), None);
    }
}
