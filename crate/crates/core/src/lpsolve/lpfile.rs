//! CPLEX LP text format: writer and a minimal reader for files it produced.
//!
//! Every column is listed in the objective (zero costs included) so that a
//! re-read model keeps the original column order.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use super::{LpError, MilpModel, Sense};

const MAX_LINE: usize = 200;
const RESERVED: &[&str] = &[
    "free", "inf", "infinity", "st", "s.t.", "subject", "to", "bounds", "bound", "binary", "binaries", "bin",
    "general", "generals", "gen", "end", "minimize", "maximize", "min", "max",
];

/// Formats a number exactly: integers plainly, everything else with 17
/// significant digits.
pub fn format_number(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        return format!("{}", v as i64);
    }
    let s = format!("{:.16e}", v);
    let (mant, exp) = s.split_once('e').expect("exponent");
    let mant = if mant.contains('.') { mant.trim_end_matches('0').trim_end_matches('.') } else { mant };
    let exp: i32 = exp.parse().expect("exponent digits");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}

fn sanitize_names<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for raw in names {
        let mut s: String = raw.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
        let starts_badly = s.chars().next().is_none_or(|c| c.is_ascii_digit());
        let lowered = s.to_ascii_lowercase();
        if starts_badly || RESERVED.contains(&lowered.as_str()) {
            s = format!("n_{s}");
        }
        let mut candidate = s.clone();
        let mut k = 2;
        while !seen.insert(candidate.to_ascii_lowercase()) {
            candidate = format!("{s}_{k}");
            k += 1;
        }
        out.push(candidate);
    }
    out
}

fn push_terms(out: &mut String, line: &mut String, terms: &[(f64, &str)]) {
    for (k, &(a, name)) in terms.iter().enumerate() {
        let piece = if k == 0 {
            if a < 0.0 { format!(" - {} {}", format_number(-a), name) } else { format!(" {} {}", format_number(a), name) }
        } else if a < 0.0 || (a == 0.0 && a.is_sign_negative()) {
            format!(" - {} {}", format_number(-a), name)
        } else {
            format!(" + {} {}", format_number(a), name)
        };
        if line.len() + piece.len() > MAX_LINE {
            out.push_str(line);
            out.push('\n');
            line.clear();
        }
        line.push_str(&piece);
    }
}

/// Renders a model as LP text.
pub fn write_lp_string(model: &MilpModel) -> String {
    let cols = sanitize_names(model.columns.iter().map(|c| c.name.as_str()));
    let rows = sanitize_names(model.rows.iter().map(|r| r.name.as_str()));
    let mut out = String::new();
    out.push_str("Minimize\n");
    let mut line = String::from(" obj:");
    let obj: Vec<(f64, &str)> = model.columns.iter().zip(&cols).map(|(c, n)| (c.cost, n.as_str())).collect();
    push_terms(&mut out, &mut line, &obj);
    out.push_str(&line);
    out.push('\n');

    out.push_str("Subject To\n");
    for (r, name) in model.rows.iter().zip(&rows) {
        let mut line = format!(" {name}:");
        let mut terms: Vec<(f64, &str)> = r.coeffs.iter().map(|&(j, a)| (a, cols[j].as_str())).collect();
        if terms.is_empty() {
            match cols.first() {
                Some(c) => terms.push((0.0, c.as_str())),
                None => continue,
            }
        }
        push_terms(&mut out, &mut line, &terms);
        let op = match r.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let _ = write!(line, " {op} {}", format_number(r.rhs));
        out.push_str(&line);
        out.push('\n');
    }

    out.push_str("Bounds\n");
    for (j, (c, name)) in model.columns.iter().zip(&cols).enumerate() {
        if model.is_binary(j) {
            continue;
        }
        let line = match (c.lower.is_finite(), c.upper.is_finite()) {
            (true, true) => format!(" {} <= {name} <= {}", format_number(c.lower), format_number(c.upper)),
            (false, false) => format!(" {name} free"),
            (false, true) => format!(" -inf <= {name} <= {}", format_number(c.upper)),
            (true, false) => format!(" {name} >= {}", format_number(c.lower)),
        };
        out.push_str(&line);
        out.push('\n');
    }

    out.push_str("Binaries\n");
    for (j, name) in cols.iter().enumerate() {
        if model.is_binary(j) {
            let _ = writeln!(out, " {name}");
        }
    }
    out.push_str("Generals\n");
    for (j, name) in cols.iter().enumerate() {
        if model.columns[j].integer && !model.is_binary(j) {
            let _ = writeln!(out, " {name}");
        }
    }
    out.push_str("End\n");
    out
}

pub fn export_lp(model: &MilpModel, path: impl AsRef<Path>) -> Result<(), LpError> {
    std::fs::write(path, write_lp_string(model))?;
    Ok(())
}

pub fn read_lp(path: impl AsRef<Path>) -> Result<MilpModel, LpError> {
    let text = std::fs::read_to_string(path)?;
    read_lp_str(&text)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    Binaries,
    Generals,
    End,
}

fn section_of(line: &str) -> Option<Section> {
    match line.to_ascii_lowercase().as_str() {
        "minimize" | "minimise" | "min" => Some(Section::Objective),
        "subject to" | "such that" | "st" | "s.t." => Some(Section::Constraints),
        "bounds" | "bound" => Some(Section::Bounds),
        "binaries" | "binary" | "bin" => Some(Section::Binaries),
        "generals" | "general" | "gen" => Some(Section::Generals),
        "end" => Some(Section::End),
        _ => None,
    }
}

fn parse_number(tok: &str, line: usize) -> Result<f64, LpError> {
    match tok.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        t => t.parse().map_err(|_| LpError::Parse { line, msg: format!("expected a number, found `{tok}`") }),
    }
}

struct Reader {
    model: MilpModel,
    index: HashMap<String, usize>,
}

impl Reader {
    fn column(&mut self, name: &str) -> usize {
        if let Some(&j) = self.index.get(name) {
            return j;
        }
        let j = self.model.add_continuous(name, 0.0, f64::INFINITY, 0.0);
        self.index.insert(name.to_string(), j);
        j
    }

    /// Parses `[label:] terms [op rhs]` from a token stream.
    fn linear(&mut self, toks: &[(usize, String)]) -> Result<(Option<String>, Vec<(usize, f64)>, Option<(Sense, f64)>), LpError> {
        let mut k = 0;
        let mut label = None;
        if let Some((_, t)) = toks.first() {
            if let Some(l) = t.strip_suffix(':') {
                label = Some(l.to_string());
                k = 1;
            }
        }
        let mut terms = Vec::new();
        let mut sign = 1.0;
        let mut coef: Option<f64> = None;
        while k < toks.len() {
            let (line, t) = (&toks[k].0, toks[k].1.as_str());
            match t {
                "+" => sign = 1.0,
                "-" => sign = -sign,
                "<=" | "=<" | ">=" | "=>" | "=" | "<" | ">" => {
                    let sense = match t {
                        "<=" | "=<" | "<" => Sense::Le,
                        ">=" | "=>" | ">" => Sense::Ge,
                        _ => Sense::Eq,
                    };
                    let rhs_tok = toks.get(k + 1).ok_or(LpError::Parse { line: *line, msg: "missing right-hand side".into() })?;
                    let mut rhs_str = rhs_tok.1.clone();
                    let mut extra = 2;
                    if rhs_str == "-" || rhs_str == "+" {
                        let next = toks.get(k + 2).ok_or(LpError::Parse { line: *line, msg: "missing right-hand side".into() })?;
                        rhs_str = format!("{}{}", rhs_str, next.1);
                        extra = 3;
                    }
                    let rhs = parse_number(&rhs_str, rhs_tok.0)?;
                    if k + extra != toks.len() {
                        return Err(LpError::Parse { line: *line, msg: "trailing tokens after right-hand side".into() });
                    }
                    return Ok((label, terms, Some((sense, rhs))));
                }
                _ => {
                    if let Ok(v) = t.parse::<f64>() {
                        coef = Some(v);
                    } else {
                        let j = self.column(t);
                        terms.push((j, sign * coef.unwrap_or(1.0)));
                        sign = 1.0;
                        coef = None;
                    }
                }
            }
            k += 1;
        }
        Ok((label, terms, None))
    }

    fn bound_line(&mut self, line_no: usize, line: &str) -> Result<(), LpError> {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: &str| LpError::Parse { line: line_no, msg: msg.to_string() };
        match toks.as_slice() {
            [name, free] if free.eq_ignore_ascii_case("free") => {
                let j = self.column(name);
                self.model.columns[j].lower = f64::NEG_INFINITY;
                self.model.columns[j].upper = f64::INFINITY;
            }
            [lo, "<=", name, "<=", hi] => {
                let (lo, hi) = (parse_number(lo, line_no)?, parse_number(hi, line_no)?);
                let j = self.column(name);
                self.model.columns[j].lower = lo;
                self.model.columns[j].upper = hi;
            }
            [name, op, v] => {
                let v = parse_number(v, line_no)?;
                let j = self.column(name);
                match *op {
                    ">=" => self.model.columns[j].lower = v,
                    "<=" => self.model.columns[j].upper = v,
                    "=" => {
                        self.model.columns[j].lower = v;
                        self.model.columns[j].upper = v;
                    }
                    _ => return Err(err("unknown bound operator")),
                }
            }
            _ => return Err(err("unrecognised bound")),
        }
        Ok(())
    }
}

/// Parses LP text of the subset produced by [`write_lp_string`].
pub fn read_lp_str(text: &str) -> Result<MilpModel, LpError> {
    let mut rd = Reader { model: MilpModel::new(), index: HashMap::new() };
    let mut section = Section::None;
    let mut pending: Vec<(usize, String)> = Vec::new();

    let flush = |rd: &mut Reader, section: Section, pending: &mut Vec<(usize, String)>| -> Result<(), LpError> {
        if pending.is_empty() {
            return Ok(());
        }
        let line = pending[0].0;
        let (label, terms, rel) = rd.linear(pending)?;
        match section {
            Section::Objective => {
                if rel.is_some() {
                    return Err(LpError::Parse { line, msg: "relation in objective".into() });
                }
                for (j, a) in terms {
                    rd.model.columns[j].cost += a;
                }
            }
            Section::Constraints => {
                let (sense, rhs) = rel.ok_or(LpError::Parse { line, msg: "constraint without relation".into() })?;
                let name = label.unwrap_or_else(|| format!("R{}", rd.model.num_rows() + 1));
                rd.model.add_row(name, terms, sense, rhs);
            }
            _ => {}
        }
        pending.clear();
        Ok(())
    };

    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.split('\\').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(s) = section_of(line) {
            flush(&mut rd, section, &mut pending)?;
            section = s;
            continue;
        }
        match section {
            Section::Objective | Section::Constraints => {
                let starts_new = line.split_whitespace().next().is_some_and(|t| t.ends_with(':'));
                if starts_new {
                    flush(&mut rd, section, &mut pending)?;
                }
                pending.extend(line.split_whitespace().map(|t| (line_no, t.to_string())));
            }
            Section::Bounds => rd.bound_line(line_no, line)?,
            Section::Binaries | Section::Generals => {
                for name in line.split_whitespace() {
                    let j = rd.column(name);
                    let c = &mut rd.model.columns[j];
                    c.integer = true;
                    if section == Section::Binaries {
                        c.lower = 0.0;
                        c.upper = 1.0;
                    }
                }
            }
            Section::None => return Err(LpError::Parse { line: line_no, msg: "content before the objective section".into() }),
            Section::End => return Err(LpError::Parse { line: line_no, msg: "content after End".into() }),
        }
    }
    flush(&mut rd, section, &mut pending)?;
    if section != Section::End {
        return Err(LpError::Parse { line: text.lines().count(), msg: "missing End".into() });
    }
    Ok(rd.model)
}
