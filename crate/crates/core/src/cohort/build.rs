//! Long-format CSV ingestion and the wide analysis file.
//!
//! Input: one row per subject-wave with columns
//! `id, household_id, stratum, interview_age, respondent_kind, self_score,
//! proxy_score, vital_status, base_weight, [event_override], <raw covariates...>`.
//! Missing cells are empty. A `dead` row's interview_age is the death age.
//!
//! Output: one row per subject with coded covariates, plus a JSON manifest
//! recording the covariate specs, exclusions, and warnings.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    classify_langa_weir, derive_event, encode_binary, filter_missingness, is_missing,
    residualize_pgs, standardize, CodingKind, CognitionRecord, CohortError, CovariateSpec, Domain,
    EventKind, Stratum, Subject, VitalStatus, Wave, MISSING,
};

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("input is missing required column '{0}'")]
    MissingColumn(String),
    #[error("row {row}: cannot parse {column}='{value}'")]
    BadCell { row: usize, column: String, value: String },
    #[error("coding column '{column}': {source}")]
    Coding { column: String, source: CohortError },
    #[error("no subjects survived exclusion")]
    NoSubjects,
}

/// How a raw input column is turned into a coded covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawCoding {
    Binary,
    Continuous,
    Pgs,
}

/// One configured raw covariate column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawColumn {
    pub name: String,
    pub domain: Domain,
    pub coding: RawCoding,
    #[serde(default)]
    pub reverse: bool,
    #[serde(default)]
    pub zero_fill_missing: bool,
    #[serde(default)]
    pub female_only: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodingManifest {
    pub n_input_rows: usize,
    pub n_subjects: usize,
    pub exclusions: ExclusionCounts,
    pub retained: Vec<CovariateSpec>,
    pub excluded: Vec<CovariateSpec>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExclusionCounts {
    pub baseline_dementia: usize,
    pub no_followup: usize,
    pub bad_weight: usize,
    pub unknown_stratum: usize,
    pub inconsistent_ages: usize,
    pub bad_scores: usize,
}

pub struct BuildOutput {
    pub subjects: Vec<Subject>,
    pub specs: Vec<CovariateSpec>,
    pub manifest: CodingManifest,
}

struct RawWave {
    interview_age: f64,
    respondent_kind: Option<String>,
    self_score: Option<u32>,
    proxy_score: Option<u32>,
    dead: bool,
    event_override: Option<bool>,
}

struct RawSubject {
    id: String,
    household_id: String,
    stratum_raw: String,
    base_weight: Option<f64>,
    waves: Vec<RawWave>,
    covariates: Vec<f64>,
    pcs: Vec<f64>,
}

fn parse_opt_f64(s: &str, row: usize, column: &str) -> Result<f64, BuildError> {
    let t = s.trim();
    if t.is_empty() {
        return Ok(MISSING);
    }
    t.parse::<f64>().map_err(|_| BuildError::BadCell {
        row,
        column: column.to_string(),
        value: s.to_string(),
    })
}

fn parse_opt_u32(s: &str, row: usize, column: &str) -> Result<Option<u32>, BuildError> {
    let t = s.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<u32>().map(Some).map_err(|_| BuildError::BadCell {
        row,
        column: column.to_string(),
        value: s.to_string(),
    })
}

fn parse_binary_cell(s: &str, row: usize, column: &str) -> Result<Option<bool>, BuildError> {
    let t = s.trim().to_ascii_lowercase();
    match t.as_str() {
        "" => Ok(None),
        "yes" | "y" | "true" | "1" | "+1" => Ok(Some(true)),
        "no" | "n" | "false" | "0" | "-1" => Ok(Some(false)),
        _ => Err(BuildError::BadCell { row, column: column.to_string(), value: s.to_string() }),
    }
}

/// Read the long file, derive events, code covariates, and apply the
/// missingness filter. Subjects failing the inclusion rules are dropped and
/// counted, not fatal; malformed cells are fatal.
pub fn build_cohort<R: Read>(
    reader: R,
    columns: &[RawColumn],
    pc_columns: &[String],
    missingness_threshold: f64,
) -> Result<BuildOutput, BuildError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col_idx: HashMap<&str, usize> =
        headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let need = |name: &str| -> Result<usize, BuildError> {
        col_idx.get(name).copied().ok_or_else(|| BuildError::MissingColumn(name.to_string()))
    };

    let c_id = need("id")?;
    let c_house = need("household_id")?;
    let c_stratum = need("stratum")?;
    let c_age = need("interview_age")?;
    let c_kind = need("respondent_kind")?;
    let c_self = need("self_score")?;
    let c_proxy = need("proxy_score")?;
    let c_vital = need("vital_status")?;
    let c_weight = need("base_weight")?;
    let c_override = col_idx.get("event_override").copied();

    let needs_pcs = columns.iter().any(|c| c.coding == RawCoding::Pgs);
    let mut cov_idx = Vec::with_capacity(columns.len());
    for c in columns {
        cov_idx.push(need(&c.name)?);
    }
    let mut pc_idx = Vec::new();
    if needs_pcs {
        for p in pc_columns {
            pc_idx.push(need(p)?);
        }
    }

    // group rows by subject id, preserving first-seen order
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, RawSubject> = HashMap::new();
    let mut n_rows = 0usize;
    let mut warnings: Vec<String> = Vec::new();
    let mut missing_score_waves = 0usize;

    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let rownum = i + 2; // 1-based plus header
        n_rows += 1;
        let id = rec.get(c_id).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(BuildError::BadCell { row: rownum, column: "id".into(), value: String::new() });
        }
        let age = parse_opt_f64(rec.get(c_age).unwrap_or(""), rownum, "interview_age")?;
        if is_missing(age) {
            return Err(BuildError::BadCell {
                row: rownum,
                column: "interview_age".into(),
                value: String::new(),
            });
        }
        let vital_raw = rec.get(c_vital).unwrap_or("").trim().to_ascii_lowercase();
        let dead = match vital_raw.as_str() {
            "dead" | "deceased" => true,
            "alive" | "" => false,
            other => {
                return Err(BuildError::BadCell {
                    row: rownum,
                    column: "vital_status".into(),
                    value: other.to_string(),
                })
            }
        };
        let event_override = match c_override {
            Some(c) => parse_binary_cell(rec.get(c).unwrap_or(""), rownum, "event_override")?,
            None => None,
        };
        let wave = RawWave {
            interview_age: age,
            respondent_kind: {
                let k = rec.get(c_kind).unwrap_or("").trim().to_ascii_lowercase();
                if k.is_empty() { None } else { Some(k) }
            },
            self_score: parse_opt_u32(rec.get(c_self).unwrap_or(""), rownum, "self_score")?,
            proxy_score: parse_opt_u32(rec.get(c_proxy).unwrap_or(""), rownum, "proxy_score")?,
            dead,
            event_override,
        };

        let entry = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            RawSubject {
                id,
                household_id: rec.get(c_house).unwrap_or("").to_string(),
                stratum_raw: rec.get(c_stratum).unwrap_or("").to_string(),
                base_weight: None,
                waves: Vec::new(),
                covariates: Vec::new(),
                pcs: Vec::new(),
            }
        });
        if entry.waves.is_empty() {
            // baseline row: weight and raw covariates come from here
            let w = parse_opt_f64(rec.get(c_weight).unwrap_or(""), rownum, "base_weight")?;
            entry.base_weight = if is_missing(w) { None } else { Some(w) };
            for (ci, col) in cov_idx.iter().zip(columns) {
                let cell = rec.get(*ci).unwrap_or("");
                let v = match col.coding {
                    RawCoding::Binary => encode_binary(parse_binary_cell(cell, rownum, &col.name)?),
                    RawCoding::Continuous | RawCoding::Pgs => {
                        parse_opt_f64(cell, rownum, &col.name)?
                    }
                };
                entry.covariates.push(v);
            }
            for (pi, pname) in pc_idx.iter().zip(pc_columns) {
                entry.pcs.push(parse_opt_f64(rec.get(*pi).unwrap_or(""), rownum, pname)?);
            }
        }
        entry.waves.push(wave);
    }

    // derive events and apply subject-level inclusion rules
    let mut excl = ExclusionCounts::default();
    let mut kept: Vec<(RawSubject, Stratum, f64, f64, EventKind)> = Vec::new();
    for id in &order {
        let mut raw = by_id.remove(id).unwrap();
        let stratum = match Stratum::parse(&raw.stratum_raw) {
            Some(s) => s,
            None => {
                excl.unknown_stratum += 1;
                continue;
            }
        };
        let weight = match raw.base_weight {
            Some(w) if w > 0.0 => w,
            _ => {
                excl.bad_weight += 1;
                continue;
            }
        };
        raw.waves.sort_by(|a, b| a.interview_age.total_cmp(&b.interview_age));
        let mut waves = Vec::with_capacity(raw.waves.len());
        let mut ok = true;
        for w in &raw.waves {
            let dementia = if w.dead {
                false
            } else if let Some(flag) = w.event_override {
                flag
            } else {
                match (w.respondent_kind.as_deref(), w.self_score, w.proxy_score) {
                    (Some("self"), Some(s), _) => {
                        match classify_langa_weir(&CognitionRecord::SelfReport {
                            score: s,
                            interview_age: w.interview_age,
                        }) {
                            Ok(d) => d,
                            Err(_) => {
                                ok = false;
                                excl.bad_scores += 1;
                                warnings.push(format!("subject {}: score out of range", raw.id));
                                break;
                            }
                        }
                    }
                    (Some("proxy"), _, Some(p)) => {
                        match classify_langa_weir(&CognitionRecord::Proxy {
                            score: p,
                            interview_age: w.interview_age,
                        }) {
                            Ok(d) => d,
                            Err(_) => {
                                ok = false;
                                excl.bad_scores += 1;
                                warnings.push(format!("subject {}: score out of range", raw.id));
                                break;
                            }
                        }
                    }
                    _ => {
                        missing_score_waves += 1;
                        false
                    }
                }
            };
            waves.push(Wave {
                interview_age: w.interview_age,
                dementia,
                vital: if w.dead {
                    VitalStatus::Dead { age: w.interview_age }
                } else {
                    VitalStatus::Alive
                },
            });
        }
        if !ok {
            continue;
        }
        let (exit, event) = match derive_event(&waves) {
            Ok(v) => v,
            Err(CohortError::BaselineDemented) => {
                excl.baseline_dementia += 1;
                continue;
            }
            Err(CohortError::NonMonotoneAges { .. }) => {
                excl.inconsistent_ages += 1;
                continue;
            }
            Err(_) => {
                excl.inconsistent_ages += 1;
                continue;
            }
        };
        let entry_age = waves[0].interview_age;
        if !(exit > entry_age) {
            excl.no_followup += 1;
            continue;
        }
        raw.base_weight = Some(weight);
        kept.push((raw, stratum, entry_age, exit, event));
    }
    if kept.is_empty() {
        return Err(BuildError::NoSubjects);
    }
    if missing_score_waves > 0 {
        warnings.push(format!(
            "{missing_score_waves} waves lacked a usable cognition score; treated as dementia-negative follow-up"
        ));
    }

    // column-wise missingness over included subjects (zero-fill columns are
    // complete by construction)
    let n = kept.len();
    let mut specs: Vec<CovariateSpec> = Vec::with_capacity(columns.len());
    for (j, col) in columns.iter().enumerate() {
        let miss = if col.zero_fill_missing {
            0.0
        } else {
            kept.iter().filter(|(r, ..)| is_missing(r.covariates[j])).count() as f64 / n as f64
        };
        specs.push(CovariateSpec {
            name: col.name.clone(),
            domain: col.domain,
            kind: match col.coding {
                RawCoding::Binary => CodingKind::BinaryPm1,
                _ => CodingKind::StandardizedContinuous,
            },
            reverse_coded: col.reverse,
            missing_fraction: miss,
            female_only: col.female_only,
            zero_fill_missing: col.zero_fill_missing,
        });
    }
    let retained = filter_missingness(&specs, missingness_threshold);
    let retained_names: Vec<&str> = retained.iter().map(|s| s.name.as_str()).collect();
    let excluded: Vec<CovariateSpec> = specs
        .iter()
        .filter(|s| !retained_names.contains(&s.name.as_str()))
        .cloned()
        .collect();

    // code the retained columns over the full sample
    let mut coded: Vec<Vec<f64>> = Vec::with_capacity(retained.len());
    for spec in &retained {
        let j = columns.iter().position(|c| c.name == spec.name).unwrap();
        let raw_col: Vec<f64> = kept.iter().map(|(r, ..)| r.covariates[j]).collect();
        let mut col = match columns[j].coding {
            RawCoding::Binary => {
                if spec.reverse_coded {
                    raw_col.iter().map(|v| if is_missing(*v) { MISSING } else { -v }).collect()
                } else {
                    raw_col
                }
            }
            RawCoding::Continuous => standardize(&raw_col, spec.reverse_coded)
                .map_err(|e| BuildError::Coding { column: spec.name.clone(), source: e })?,
            RawCoding::Pgs => {
                let pcs: Vec<Vec<f64>> = (0..pc_idx.len())
                    .map(|p| kept.iter().map(|(r, ..)| r.pcs[p]).collect())
                    .collect();
                residualize_pgs(&raw_col, &pcs, spec.reverse_coded)
                    .map_err(|e| BuildError::Coding { column: spec.name.clone(), source: e })?
            }
        };
        if spec.zero_fill_missing {
            for v in &mut col {
                if is_missing(*v) {
                    *v = 0.0;
                }
            }
        }
        coded.push(col);
    }

    let subjects: Vec<Subject> = kept
        .iter()
        .enumerate()
        .map(|(i, (raw, stratum, entry, exit, event))| Subject {
            id: raw.id.clone(),
            household_id: raw.household_id.clone(),
            stratum: *stratum,
            entry_age: *entry,
            exit_age: *exit,
            event: *event,
            covariates: coded.iter().map(|c| c[i]).collect(),
            base_weight: raw.base_weight.unwrap(),
            analysis_weight: raw.base_weight.unwrap(),
        })
        .collect();

    let manifest = CodingManifest {
        n_input_rows: n_rows,
        n_subjects: subjects.len(),
        exclusions: excl,
        retained: retained.clone(),
        excluded,
        warnings,
    };
    Ok(BuildOutput { subjects, specs: retained, manifest })
}

/// Write the wide analysis CSV: one row per subject, missing cells empty.
/// Floats use the shortest representation that parses back bit-identically.
pub fn write_subjects<P: AsRef<Path>>(
    path: P,
    subjects: &[Subject],
    names: &[String],
) -> Result<(), BuildError> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec![
        "id".to_string(),
        "household_id".to_string(),
        "stratum".to_string(),
        "entry_age".to_string(),
        "exit_age".to_string(),
        "event".to_string(),
        "base_weight".to_string(),
        "analysis_weight".to_string(),
    ];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for s in subjects {
        let mut rec = vec![
            s.id.clone(),
            s.household_id.clone(),
            s.stratum.label().to_string(),
            format!("{}", s.entry_age),
            format!("{}", s.exit_age),
            s.event.label().to_string(),
            format!("{}", s.base_weight),
            format!("{}", s.analysis_weight),
        ];
        for v in &s.covariates {
            rec.push(if is_missing(*v) { String::new() } else { format!("{v}") });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a wide analysis CSV back. Returns subjects plus the covariate
/// column names in file order.
pub fn read_subjects<P: AsRef<Path>>(path: P) -> Result<(Vec<Subject>, Vec<String>), BuildError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    let fixed = [
        "id",
        "household_id",
        "stratum",
        "entry_age",
        "exit_age",
        "event",
        "base_weight",
        "analysis_weight",
    ];
    for (i, name) in fixed.iter().enumerate() {
        if headers.get(i) != Some(*name) {
            return Err(BuildError::MissingColumn(name.to_string()));
        }
    }
    let names: Vec<String> = headers.iter().skip(fixed.len()).map(|s| s.to_string()).collect();
    let mut subjects = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let rownum = i + 2;
        let get = |j: usize| rec.get(j).unwrap_or("");
        let stratum = Stratum::parse(get(2)).ok_or_else(|| BuildError::BadCell {
            row: rownum,
            column: "stratum".into(),
            value: get(2).to_string(),
        })?;
        let event = EventKind::parse(get(5)).ok_or_else(|| BuildError::BadCell {
            row: rownum,
            column: "event".into(),
            value: get(5).to_string(),
        })?;
        let mut covariates = Vec::with_capacity(names.len());
        for (k, _) in names.iter().enumerate() {
            covariates.push(parse_opt_f64(get(fixed.len() + k), rownum, &names[k])?);
        }
        subjects.push(Subject {
            id: get(0).to_string(),
            household_id: get(1).to_string(),
            stratum,
            entry_age: parse_opt_f64(get(3), rownum, "entry_age")?,
            exit_age: parse_opt_f64(get(4), rownum, "exit_age")?,
            event,
            covariates,
            base_weight: parse_opt_f64(get(6), rownum, "base_weight")?,
            analysis_weight: parse_opt_f64(get(7), rownum, "analysis_weight")?,
        });
    }
    Ok((subjects, names))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols() -> Vec<RawColumn> {
        vec![
            RawColumn {
                name: "diabetes".into(),
                domain: Domain::Health,
                coding: RawCoding::Binary,
                reverse: false,
                zero_fill_missing: false,
                female_only: false,
            },
            RawColumn {
                name: "education_years".into(),
                domain: Domain::Sociodemographic,
                coding: RawCoding::Continuous,
                reverse: true,
                zero_fill_missing: false,
                female_only: false,
            },
        ]
    }

    const RAW: &str = "\
id,household_id,stratum,interview_age,respondent_kind,self_score,proxy_score,vital_status,base_weight,diabetes,education_years
s1,h1,NHW-men,60,self,20,,alive,1.5,yes,12
s1,h1,NHW-men,62,self,5,,alive,1.5,yes,12
s2,h1,NHW-men,61,self,20,,alive,2.0,no,16
s2,h1,NHW-men,64,self,21,,alive,2.0,no,16
s3,h2,NHW-women,59,self,22,,alive,1.0,,8
s3,h2,NHW-women,63,,,,dead,1.0,,8
s4,h3,NHB-women,66,proxy,,3,alive,0.8,no,10
s4,h3,NHB-women,68,proxy,,4,alive,0.8,no,10
s5,h4,NHW-men,70,self,3,,alive,1.2,yes,11
";

    #[test]
    fn builds_small_cohort() {
        let out = build_cohort(RAW.as_bytes(), &cols(), &[], 0.20).unwrap();
        // s5 is demented at baseline and must be excluded
        assert_eq!(out.manifest.exclusions.baseline_dementia, 1);
        assert_eq!(out.subjects.len(), 4);
        let s1 = &out.subjects[0];
        assert_eq!(s1.id, "s1");
        assert_eq!(s1.event, EventKind::Dementia);
        assert_eq!(s1.exit_age, 62.0);
        let s3 = &out.subjects[2];
        assert_eq!(s3.event, EventKind::Death);
        assert_eq!(s3.exit_age, 63.0);
        let s4 = &out.subjects[3];
        assert_eq!(s4.event, EventKind::Censored);
        assert_eq!(s4.exit_age, 68.0);
    }

    #[test]
    fn binary_coding_and_missing() {
        let out = build_cohort(RAW.as_bytes(), &cols(), &[], 0.99).unwrap();
        let diabetes: Vec<f64> =
            out.subjects.iter().map(|s| s.covariates[0]).collect();
        assert_eq!(diabetes[0], 1.0);
        assert_eq!(diabetes[1], -1.0);
        assert!(is_missing(diabetes[2]));
    }

    #[test]
    fn wide_roundtrip_is_lossless() {
        let out = build_cohort(RAW.as_bytes(), &cols(), &[], 0.99).unwrap();
        let names: Vec<String> = out.specs.iter().map(|s| s.name.clone()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.csv");
        write_subjects(&path, &out.subjects, &names).unwrap();
        let (back, names2) = read_subjects(&path).unwrap();
        assert_eq!(names, names2);
        assert_eq!(back.len(), out.subjects.len());
        for (a, b) in out.subjects.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.entry_age.to_bits(), b.entry_age.to_bits());
            assert_eq!(a.exit_age.to_bits(), b.exit_age.to_bits());
            for (x, y) in a.covariates.iter().zip(&b.covariates) {
                if is_missing(*x) {
                    assert!(is_missing(*y));
                } else {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
