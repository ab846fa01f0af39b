//! CSV ingestion and emission for raw booked-revenue series.
//!
//! Expected schema, one row per (company, period):
//!
//! ```text
//! company_id,date,revenue,sector,customer_focus
//! acme,2018-01,12.5,Fintech,B2B
//! ```
//!
//! Dates are ISO `YYYY-MM` (monthly) or `YYYY` (yearly); one file must not
//! mix the two. Lines starting with `#` are comments (the synthetic
//! generator embeds its config that way) and blank lines are skipped.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::calendar::{CalendarDate, Granularity};
use crate::dataset::{CompanyId, CompanyProfile, DataError, RawCompany};

const HEADER: &str = "company_id,date,revenue,sector,customer_focus";

/// Parses the raw-series CSV. Rows are grouped by company and sorted by
/// date; companies are returned in id order.
pub fn ingest_csv(reader: impl BufRead) -> Result<(Vec<RawCompany>, Granularity), DataError> {
    let mut granularity: Option<Granularity> = None;
    let mut companies: BTreeMap<CompanyId, RawCompany> = BTreeMap::new();

    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DataError::MalformedRow {
            line: line_no,
            message: format!("read error: {e}"),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !saw_header {
            if trimmed != HEADER {
                return Err(DataError::MalformedRow {
                    line: line_no,
                    message: format!("expected header {HEADER:?}, found {trimmed:?}"),
                });
            }
            saw_header = true;
            continue;
        }

        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 {
            return Err(DataError::MalformedRow {
                line: line_no,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let (id, date_str, revenue_str, sector, focus) =
            (fields[0], fields[1], fields[2], fields[3], fields[4]);
        if id.is_empty() {
            return Err(DataError::MalformedRow {
                line: line_no,
                message: "empty company_id".to_string(),
            });
        }
        let date: CalendarDate = date_str.parse().map_err(|e| DataError::MalformedRow {
            line: line_no,
            message: format!("{e}"),
        })?;
        match granularity {
            None => granularity = Some(date.granularity()),
            Some(g) if g != date.granularity() => {
                return Err(DataError::MixedGranularity {
                    line: line_no,
                    date: date_str.to_string(),
                    expected: g,
                });
            }
            Some(_) => {}
        }
        let revenue: f64 = revenue_str.parse().map_err(|_| DataError::MalformedRow {
            line: line_no,
            message: format!("invalid revenue {revenue_str:?}"),
        })?;
        if revenue <= 0.0 || !revenue.is_finite() {
            return Err(DataError::NonPositiveRevenue {
                company: id.to_string(),
                date: date_str.to_string(),
                value: revenue,
            });
        }

        let company_id = CompanyId::new(id);
        let entry = companies.entry(company_id.clone()).or_insert_with(|| RawCompany {
            profile: CompanyProfile::new(id, sector, focus),
            series: Vec::new(),
        });
        if entry.profile.sector != sector {
            return Err(DataError::InconsistentProfile {
                line: line_no,
                company: id.to_string(),
                field: "sector",
                first: entry.profile.sector.clone(),
                second: sector.to_string(),
            });
        }
        if entry.profile.customer_focus != focus {
            return Err(DataError::InconsistentProfile {
                line: line_no,
                company: id.to_string(),
                field: "customer_focus",
                first: entry.profile.customer_focus.clone(),
                second: focus.to_string(),
            });
        }
        if entry.series.iter().any(|(d, _)| *d == date) {
            return Err(DataError::DuplicateDate {
                line: line_no,
                company: id.to_string(),
                date: date_str.to_string(),
            });
        }
        entry.series.push((date, revenue));
    }

    let granularity = granularity.ok_or(DataError::EmptyInput)?;
    let mut raw: Vec<RawCompany> = companies.into_values().collect();
    for company in &mut raw {
        company.series.sort_by_key(|(d, _)| *d);
    }
    Ok((raw, granularity))
}

/// Writes raw series in the ingest schema. `comments` are emitted first as
/// `#`-prefixed lines (artifact provenance); the writer refuses field
/// values that would corrupt the unquoted CSV.
pub fn write_csv(
    raw: &[RawCompany],
    comments: &[String],
    mut writer: impl Write,
) -> std::io::Result<()> {
    let check = |s: &str| -> std::io::Result<()> {
        if s.contains(',') || s.contains('\n') || s.contains('#') {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("field {s:?} contains characters unsupported by the CSV schema"),
            ));
        }
        Ok(())
    };
    for comment in comments {
        writeln!(writer, "# {comment}")?;
    }
    writeln!(writer, "{HEADER}")?;
    for company in raw {
        check(company.profile.company_id.as_str())?;
        check(&company.profile.sector)?;
        check(&company.profile.customer_focus)?;
        for (date, revenue) in &company.series {
            writeln!(
                writer,
                "{},{},{},{},{}",
                company.profile.company_id,
                date,
                revenue,
                company.profile.sector,
                company.profile.customer_focus
            )?;
        }
    }
    Ok(())
}
