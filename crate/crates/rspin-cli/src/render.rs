//! Serializers: values, tables, and verification reports in JSON, CSV, or
//! plain text. All three are deterministic; JSON carries a schema_version.

use serde::Serialize;

use rspin_core::correlators::Sector;

use crate::config::Format;
use crate::engine::{SuiteReport, TableRow, ValueOut};
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub fn sector_name(sector: Sector) -> &'static str {
    match sector {
        Sector::Closed => "closed",
        Sector::Extended => "ext",
        Sector::Open => "open",
    }
}

#[derive(Serialize)]
struct InsDoc {
    twist: i64,
    desc: u32,
}

#[derive(Serialize)]
struct ValueDoc {
    num: String,
    den: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_exp: Option<i64>,
}

#[derive(Serialize)]
struct EntryDoc {
    insertions: Vec<InsDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    boundary: Option<u32>,
    value: ValueDoc,
    provenance: String,
}

#[derive(Serialize)]
struct TableDoc {
    schema_version: u32,
    r: u32,
    sector: String,
    entries: Vec<EntryDoc>,
}

#[derive(Serialize)]
struct SingleDoc {
    num: String,
    den: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_exp: Option<i64>,
    provenance: String,
}

#[derive(Serialize)]
struct SuiteDoc {
    name: String,
    checked: usize,
    pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_failure: Option<String>,
}

#[derive(Serialize)]
struct ReportDoc {
    schema_version: u32,
    r: u32,
    suites: Vec<SuiteDoc>,
}

/// Insertion list of a table row, with the implicit -1 of extended keys
/// made explicit in front of the sorted named insertions.
fn insertions_doc(row: &TableRow) -> Vec<InsDoc> {
    let mut out = Vec::new();
    if row.key.sector() == Sector::Extended {
        out.push(InsDoc { twist: -1, desc: 0 });
    }
    for &(a, d) in row.key.insertions() {
        out.push(InsDoc { twist: a as i64, desc: d });
    }
    out
}

/// Quote a CSV field when it holds a delimiter, quote, or newline.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::{csv_field, value_text};

    #[test]
    fn csv_fields_quote_only_when_needed() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn value_text_forms() {
        assert_eq!(value_text("1", "1", None), "1");
        assert_eq!(value_text("-1", "3", None), "-1/3");
        assert_eq!(value_text("2", "1", Some(3)), "2*L^3");
    }
}

/// Compact human form of a value: num, num/den, with a lambda factor when
/// one is present.
fn value_text(num: &str, den: &str, lambda_exp: Option<i64>) -> String {
    let mut s = if den == "1" { num.to_string() } else { format!("{num}/{den}") };
    if let Some(k) = lambda_exp {
        s.push_str(&format!("*L^{k}"));
    }
    s
}

/// Space-separated a:d list for CSV and text rows.
fn insertions_text(row: &TableRow) -> String {
    let parts: Vec<String> = insertions_doc(row)
        .iter()
        .map(|i| format!("{}:{}", i.twist, i.desc))
        .collect();
    parts.join(" ")
}

/// A single correlator value in the requested format.
pub fn render_value(v: &ValueOut, format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => {
            let doc = SingleDoc {
                num: v.num.clone(),
                den: v.den.clone(),
                lambda_exp: v.lambda_exp,
                provenance: v.provenance.to_string(),
            };
            Ok(format!("{}\n", serde_json::to_string(&doc)?))
        }
        Format::Csv => {
            let lam = v.lambda_exp.map(|k| k.to_string()).unwrap_or_default();
            Ok(format!(
                "num,den,lambda_exp,provenance\n{},{},{},{}\n",
                csv_field(&v.num),
                csv_field(&v.den),
                lam,
                v.provenance
            ))
        }
        Format::Text => Ok(format!(
            "{} = {} [{}]\n",
            v.key_text,
            value_text(&v.num, &v.den, v.lambda_exp),
            v.provenance
        )),
    }
}

/// A whole table in the requested format.
pub fn render_table(
    r: u32,
    sector: Sector,
    rows: &[TableRow],
    format: Format,
) -> Result<String, CliError> {
    match format {
        Format::Json => {
            let doc = TableDoc {
                schema_version: SCHEMA_VERSION,
                r,
                sector: sector_name(sector).to_string(),
                entries: rows
                    .iter()
                    .map(|row| EntryDoc {
                        insertions: insertions_doc(row),
                        boundary: (row.key.sector() == Sector::Open)
                            .then(|| row.key.boundary()),
                        value: ValueDoc {
                            num: row.num.clone(),
                            den: row.den.clone(),
                            lambda_exp: row.lambda_exp,
                        },
                        provenance: row.provenance.to_string(),
                    })
                    .collect(),
            };
            Ok(format!("{}\n", serde_json::to_string(&doc)?))
        }
        Format::Csv => {
            let mut out = format!("# schema_version {SCHEMA_VERSION}\n");
            out.push_str("r,sector,insertions,boundary,num,den,lambda_exp,provenance\n");
            for row in rows {
                let boundary = if row.key.sector() == Sector::Open {
                    row.key.boundary().to_string()
                } else {
                    String::new()
                };
                let lam = row.lambda_exp.map(|k| k.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r,
                    sector_name(sector),
                    csv_field(&insertions_text(row)),
                    boundary,
                    csv_field(&row.num),
                    csv_field(&row.den),
                    lam,
                    row.provenance
                ));
            }
            Ok(out)
        }
        Format::Text => {
            let mut out = format!("# r = {r}, sector = {}\n", sector_name(sector));
            for row in rows {
                out.push_str(&format!(
                    "{} = {} [{}]\n",
                    row.key,
                    value_text(&row.num, &row.den, row.lambda_exp),
                    row.provenance
                ));
            }
            Ok(out)
        }
    }
}

/// A verification report in the requested format.
pub fn render_report(r: u32, reports: &[SuiteReport], format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => {
            let doc = ReportDoc {
                schema_version: SCHEMA_VERSION,
                r,
                suites: reports
                    .iter()
                    .map(|s| SuiteDoc {
                        name: s.name.clone(),
                        checked: s.checked,
                        pass: s.pass,
                        first_failure: s.first_failure.clone(),
                    })
                    .collect(),
            };
            Ok(format!("{}\n", serde_json::to_string(&doc)?))
        }
        Format::Csv => {
            let mut out = format!("# schema_version {SCHEMA_VERSION}\n");
            out.push_str("suite,checked,pass,first_failure\n");
            for s in reports {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    s.name,
                    s.checked,
                    s.pass,
                    csv_field(s.first_failure.as_deref().unwrap_or(""))
                ));
            }
            Ok(out)
        }
        Format::Text => {
            let mut out = String::new();
            for s in reports {
                if s.pass {
                    out.push_str(&format!("suite {}: pass ({} checks)\n", s.name, s.checked));
                } else {
                    out.push_str(&format!(
                        "suite {}: FAIL ({} checks; first counterexample: {})\n",
                        s.name,
                        s.checked,
                        s.first_failure.as_deref().unwrap_or("unreported")
                    ));
                }
            }
            Ok(out)
        }
    }
}
