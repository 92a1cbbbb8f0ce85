//! File formats: series spec documents, vector lists, CSV traces and
//! certificates.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confinement::ConstantSchedule;
use crate::forcing::{format_rational, CertificateChain, ForcingConfig};
use crate::series::{FamilyVector, SeriesError, SeriesSpec};

#[derive(Debug, Error)]
pub enum InputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("family entry {entry}: {source}")]
    Validation {
        entry: usize,
        #[source]
        source: SeriesError,
    },
    #[error("family entry {entry}: {message}")]
    Malformed { entry: usize, message: String },
    #[error("family entry {entry}: combo references entry {reference}, which is not an earlier entry")]
    Reference { entry: usize, reference: usize },
    #[error("{path}: line {line}: {message}")]
    BadLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Error)]
#[error("{path}: {source}")]
pub struct OutputError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

fn read_text(path: &Path) -> Result<String, InputError> {
    fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDocument {
    families: Vec<EntryDocument>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryDocument {
    kind: String,
    level: Option<u32>,
    exponent: Option<f64>,
    scale: Option<f64>,
    combo: Option<Vec<ComboDocument>>,
    perturbation: Option<Box<EntryDocument>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComboDocument {
    coefficient: f64,
    #[serde(rename = "ref")]
    reference: usize,
}

fn build_entry(entry: usize, doc: &EntryDocument, earlier: &[SeriesSpec]) -> Result<SeriesSpec, InputError> {
    let need = |field: Option<f64>, name: &str| {
        field.ok_or_else(|| InputError::Malformed {
            entry,
            message: format!("kind {} requires {name}", doc.kind),
        })
    };
    let spec = match doc.kind.as_str() {
        "rademacher_harmonic" => SeriesSpec::rademacher(
            doc.level.ok_or_else(|| InputError::Malformed {
                entry,
                message: "kind rademacher_harmonic requires level".into(),
            })?,
            need(doc.exponent, "exponent")?,
        ),
        "power_alternating" => SeriesSpec::alternating(need(doc.exponent, "exponent")?),
        "abs_power" => SeriesSpec::AbsPower {
            exponent: need(doc.exponent, "exponent")?,
            scale: doc.scale.unwrap_or(1.0),
            sign_level: doc.level,
        },
        "composite" => {
            let combo = doc.combo.as_deref().unwrap_or_default();
            let mut terms = Vec::with_capacity(combo.len());
            for c in combo {
                let spec = earlier.get(c.reference).ok_or(InputError::Reference {
                    entry,
                    reference: c.reference,
                })?;
                terms.push((c.coefficient, spec.clone()));
            }
            let perturbation = doc
                .perturbation
                .as_deref()
                .map(|p| build_entry(entry, p, earlier))
                .transpose()?;
            SeriesSpec::composite(terms, perturbation)
        }
        other => {
            return Err(InputError::Malformed {
                entry,
                message: format!("unknown kind {other:?}"),
            })
        }
    };
    spec.validate()
        .map_err(|source| InputError::Validation { entry, source })?;
    Ok(spec)
}

/// Parses a spec document. `origin` only labels parse errors.
pub fn parse_spec_str(text: &str, origin: &Path) -> Result<FamilyVector, InputError> {
    let doc: SpecDocument = serde_json::from_str(text).map_err(|e| InputError::Parse {
        path: origin.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut specs = Vec::with_capacity(doc.families.len());
    for (entry, d) in doc.families.iter().enumerate() {
        let spec = build_entry(entry, d, &specs)?;
        specs.push(spec);
    }
    Ok(FamilyVector::new(specs))
}

pub fn parse_spec_file(path: &Path) -> Result<FamilyVector, InputError> {
    parse_spec_str(&read_text(path)?, path)
}

/// One comma-separated vector per line; blank lines and `#` comments skipped.
pub fn parse_vector_file(path: &Path) -> Result<Vec<Vec<f64>>, InputError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| InputError::BadLine {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let v = line
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| bad(format!("{x:?}: {e}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        if let Some(first) = out.first() {
            let first: &Vec<f64> = first;
            if first.len() != v.len() {
                return Err(bad(format!("expected {} coordinates, found {}", first.len(), v.len())));
            }
        }
        out.push(v);
    }
    Ok(out)
}

/// The condition in force at a trace step.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveCondition {
    pub d: usize,
    pub eps: String,
}

/// One row per position of `injection`: the index, its terms and the running
/// sums over the first `d` series.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub index: usize,
    pub terms: Vec<f64>,
    pub sums: Vec<f64>,
    pub active: Option<ActiveCondition>,
}

pub fn trace_rows(fam: &FamilyVector, injection: &[usize], d: usize) -> Vec<TraceRow> {
    let mut sums = vec![0.0; d];
    let mut terms = vec![0.0; d];
    let sub = fam.truncated(d);
    injection
        .iter()
        .enumerate()
        .map(|(step, &index)| {
            sub.vector_term_into(index, &mut terms);
            for (s, t) in sums.iter_mut().zip(&terms) {
                *s += t;
            }
            TraceRow {
                step,
                index,
                terms: terms.clone(),
                sums: sums.clone(),
                active: None,
            }
        })
        .collect()
}

/// Trace rows for a chain: each row carries the condition whose block
/// contains the step.
pub fn chain_trace_rows(fam: &FamilyVector, chain: &CertificateChain) -> Vec<TraceRow> {
    let Some(last) = chain.conditions.last() else {
        return Vec::new();
    };
    let mut rows = trace_rows(fam, &last.f, last.d);
    for row in &mut rows {
        let owner = chain
            .conditions
            .iter()
            .find(|c| row.step < c.f.len())
            .unwrap_or(last);
        row.active = Some(ActiveCondition {
            d: owner.d,
            eps: format_rational(&owner.eps),
        });
    }
    rows
}

/// Writes `rows` as CSV with columns `step, index, term_i.., sum_i..` and,
/// when rows carry a condition, `d, eps`. An empty trace is header only.
pub fn write_trace<W: Write>(out: W, rows: &[TraceRow], d: usize) -> Result<(), csv::Error> {
    let with_active = rows.first().is_some_and(|r| r.active.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string(), "index".to_string()];
    header.extend((0..d).map(|i| format!("term_{i}")));
    header.extend((0..d).map(|i| format!("sum_{i}")));
    if with_active {
        header.extend(["d".to_string(), "eps".to_string()]);
    }
    w.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.step.to_string(), row.index.to_string()];
        record.extend(row.terms.iter().map(f64::to_string));
        record.extend(row.sums.iter().map(f64::to_string));
        if let Some(a) = &row.active {
            record.extend([a.d.to_string(), a.eps.clone()]);
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Confinement output: `step, input_position, prefix_norm`.
pub fn write_confinement<W: Write>(out: W, permutation: &[usize], prefix_norms: &[f64]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "input_position", "prefix_norm"])?;
    for (step, (p, n)) in permutation.iter().zip(prefix_norms).enumerate() {
        w.write_record([step.to_string(), p.to_string(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub const CERTIFICATE_FORMAT: &str = "rearrangement-chain/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub f: Vec<usize>,
    pub d: usize,
    pub eps: String,
    pub deviation: f64,
    pub tail_threshold: f64,
    pub cutoff: usize,
    pub max_unused_norm: f64,
    pub tail_bound_at_cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub upper: usize,
    pub lower: usize,
    pub extends: bool,
    pub dims_ok: bool,
    pub max_block_prefix_norm: f64,
    pub block_sum_norm: f64,
    pub budget: f64,
}

/// Certificate document. Tolerances are exact `p/q` strings; the recorded
/// norms are informational and every bullet is recomputed on verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub format: String,
    pub targets: Vec<f64>,
    pub schedule: Vec<f64>,
    pub slack: f64,
    pub cutoff_margin: usize,
    pub conditions: Vec<ConditionRecord>,
    pub links: Vec<LinkRecord>,
}

impl Certificate {
    pub fn from_chain(chain: &CertificateChain, targets: &[f64], cfg: &ForcingConfig) -> Self {
        let max_d = chain.conditions.iter().map(|c| c.d).max().unwrap_or(1);
        let schedule = (1..=max_d).map(|d| cfg.schedule.value(d)).collect();
        let conditions = chain
            .conditions
            .iter()
            .zip(&chain.condition_checks)
            .map(|(c, ev)| ConditionRecord {
                f: c.f.clone(),
                d: c.d,
                eps: format_rational(&c.eps),
                deviation: ev.deviation,
                tail_threshold: ev.tail_threshold,
                cutoff: ev.cutoff,
                max_unused_norm: ev.max_unused_norm,
                tail_bound_at_cutoff: ev.tail_bound_at_cutoff,
            })
            .collect();
        let links = chain
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| LinkRecord {
                upper: i,
                lower: i + 1,
                extends: l.extends,
                dims_ok: l.dims_ok,
                max_block_prefix_norm: l.max_block_prefix_norm,
                block_sum_norm: l.block_sum_norm,
                budget: l.budget,
            })
            .collect();
        Certificate {
            format: CERTIFICATE_FORMAT.to_string(),
            targets: targets.to_vec(),
            schedule,
            slack: cfg.slack,
            cutoff_margin: cfg.cutoff_margin,
            conditions,
            links,
        }
    }

    pub fn schedule(&self) -> Option<ConstantSchedule> {
        ConstantSchedule::from_values(self.schedule.clone()).ok()
    }
}

pub fn certificate_text(cert: &Certificate) -> String {
    let mut text = serde_json::to_string_pretty(cert).expect("certificate fields serialize");
    text.push('\n');
    text
}

pub fn write_certificate(path: &Path, cert: &Certificate) -> Result<(), OutputError> {
    fs::write(path, certificate_text(cert)).map_err(|source| OutputError {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_certificate(path: &Path) -> Result<Certificate, InputError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| InputError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<FamilyVector, InputError> {
        parse_spec_str(text, Path::new("test.json"))
    }

    #[test]
    fn two_rademacher_levels() {
        let fam = parse(
            r#"{"families": [
                {"kind": "rademacher_harmonic", "level": 0, "exponent": 1},
                {"kind": "rademacher_harmonic", "level": 1, "exponent": 1}
            ]}"#,
        )
        .unwrap();
        assert_eq!(fam, FamilyVector::rademacher_levels(2, 1.0));
    }

    #[test]
    fn composite_with_refs_and_perturbation() {
        let fam = parse(
            r#"{"families": [
                {"kind": "rademacher_harmonic", "level": 0, "exponent": 1},
                {"kind": "rademacher_harmonic", "level": 1, "exponent": 1},
                {"kind": "composite",
                 "combo": [{"coefficient": -1, "ref": 0}, {"coefficient": -1, "ref": 1}],
                 "perturbation": {"kind": "abs_power", "exponent": 2, "scale": 1}}
            ]}"#,
        )
        .unwrap();
        assert_eq!(fam.len(), 3);
        let t = fam.vector_term(3);
        assert!((t[2] - (-t[0] - t[1] + 1.0 / 16.0)).abs() < 1e-15);
    }

    #[test]
    fn exponent_out_of_range_is_a_validation_error() {
        let err = parse(r#"{"families": [{"kind": "power_alternating", "exponent": 1.5}]}"#).unwrap_err();
        assert!(matches!(err, InputError::Validation { entry: 0, .. }), "{err}");
    }

    #[test]
    fn forward_reference_is_rejected() {
        let err = parse(
            r#"{"families": [
                {"kind": "composite", "combo": [{"coefficient": 1, "ref": 1}]},
                {"kind": "power_alternating", "exponent": 1}
            ]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, InputError::Reference { entry: 0, reference: 1 }), "{err}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse("{\"families\": [\n  {\"kind\": }\n]}").unwrap_err();
        match err {
            InputError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            parse(r#"{"families": [{"kind": "power_alternating", "exponent": 1, "expnent": 2}]}"#),
            Err(InputError::Parse { .. })
        ));
    }

    #[test]
    fn empty_trace_is_header_only() {
        let mut out = Vec::new();
        write_trace(&mut out, &[], 2).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "step,index,term_0,term_1,sum_0,sum_1\n");
    }

    #[test]
    fn trace_sums_accumulate() {
        let fam = FamilyVector::rademacher_levels(2, 1.0);
        let rows = trace_rows(&fam, &[2, 0], 2);
        assert_eq!(rows[0].terms, vec![1.0 / 3.0, -1.0 / 3.0]);
        assert_eq!(rows[1].sums, vec![1.0 / 3.0 + 1.0, -1.0 / 3.0 + 1.0]);
    }

    #[test]
    fn vector_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        fs::write(&path, "# two vectors\n1, 0\n-1,0\n\n").unwrap();
        assert_eq!(parse_vector_file(&path).unwrap(), vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        fs::write(&path, "1,0\n1\n").unwrap();
        assert!(matches!(parse_vector_file(&path), Err(InputError::BadLine { line: 2, .. })));
    }
}
