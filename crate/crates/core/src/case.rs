//! MATPOWER case ingestion.
//!
//! Only the columns the DC model needs are read: bus id/type/Pd, generator
//! bus/status/Pmax/Pmin, branch endpoints/r/x/rateA/status, and the linear
//! term of `gencost`. Everything is converted to per-unit exactly once.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing table `mpc.{table}`")]
    MissingTable { table: &'static str },
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("{element} references unknown bus {bus}")]
    UnknownBus { element: String, bus: u32 },
    #[error("generator {index} has p_min {p_min} > p_max {p_max}")]
    GeneratorLimits { index: usize, p_min: f64, p_max: f64 },
    #[error("branch {index} has zero or non-finite susceptance")]
    Susceptance { index: usize },
    #[error("network is disconnected: bus {0} unreachable from bus {1}")]
    Disconnected(u32, u32),
    #[error("base MVA must be positive, got {0}")]
    BaseMva(f64),
    #[error("case has no {0}")]
    Empty(&'static str),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid case json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    /// Active load, p.u.
    pub load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    /// Series susceptance magnitude `x / (r² + x²)`, p.u.
    pub susceptance: f64,
    /// Symmetric flow limit, p.u.; `None` when the case leaves it unbounded.
    pub limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: u32,
    pub p_min: f64,
    pub p_max: f64,
    /// Linear cost coefficient per p.u.
    pub cost: f64,
}

impl Generator {
    pub fn range(&self) -> f64 {
        self.p_max - self.p_min
    }
}

/// Parsed, validated grid in per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    /// Modeling notes, e.g. ignored phase shifters.
    #[serde(default)]
    pub notes: Vec<String>,
}

impl NetworkCase {
    /// Validates the invariants every downstream module relies on.
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self, CaseError> {
        let case = Self {
            name: name.into(),
            base_mva,
            buses,
            branches,
            generators,
            notes: Vec::new(),
        };
        case.validate()?;
        Ok(case)
    }

    pub fn bus_index_map(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn total_load(&self) -> f64 {
        self.buses.iter().map(|b| b.load).sum()
    }

    pub fn validate(&self) -> Result<(), CaseError> {
        if !(self.base_mva > 0.0) {
            return Err(CaseError::BaseMva(self.base_mva));
        }
        if self.buses.is_empty() {
            return Err(CaseError::Empty("buses"));
        }
        if self.generators.is_empty() {
            return Err(CaseError::Empty("in-service generators"));
        }
        let mut index = HashMap::with_capacity(self.buses.len());
        for (i, bus) in self.buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return Err(CaseError::DuplicateBus(bus.id));
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            for bus in [br.from, br.to] {
                if !index.contains_key(&bus) {
                    return Err(CaseError::UnknownBus { element: format!("branch {k}"), bus });
                }
            }
            if !(br.susceptance.is_finite() && br.susceptance != 0.0) {
                return Err(CaseError::Susceptance { index: k });
            }
        }
        for (k, g) in self.generators.iter().enumerate() {
            if !index.contains_key(&g.bus) {
                return Err(CaseError::UnknownBus { element: format!("generator {k}"), bus: g.bus });
            }
            if g.p_min > g.p_max {
                return Err(CaseError::GeneratorLimits { index: k, p_min: g.p_min, p_max: g.p_max });
            }
        }
        self.check_connected(&index)
    }

    fn check_connected(&self, index: &HashMap<u32, usize>) -> Result<(), CaseError> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            let (f, t) = (index[&br.from], index[&br.to]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(j) => Err(CaseError::Disconnected(self.buses[j].id, self.buses[0].id)),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String, CaseError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CaseError> {
        let case: NetworkCase = serde_json::from_str(text)?;
        case.validate()?;
        Ok(case)
    }
}

/// Loads a case from a `.m` (MATPOWER) or `.json` (canonical) file.
pub fn load_case(path: impl AsRef<Path>) -> Result<NetworkCase, CaseError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        return NetworkCase::from_json(&text);
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("case");
    let mut case = parse_case(&text)?;
    if case.name.is_empty() {
        case.name = stem.to_string();
    }
    Ok(case)
}

struct Table {
    rows: Vec<Vec<f64>>,
    lines: Vec<usize>,
}

impl Table {
    fn require_cols(&self, name: &str, cols: usize) -> Result<(), CaseError> {
        for (row, &line) in self.rows.iter().zip(&self.lines) {
            if row.len() < cols {
                return Err(CaseError::Parse {
                    line,
                    message: format!("`{name}` row has {} columns, need at least {cols}", row.len()),
                });
            }
        }
        Ok(())
    }
}

fn parse_number(tok: &str, line: usize) -> Result<f64, CaseError> {
    match tok {
        "Inf" | "inf" | "+Inf" => Ok(f64::INFINITY),
        "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok.parse::<f64>().map_err(|_| CaseError::Parse {
            line,
            message: format!("expected a number, found `{tok}`"),
        }),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Parses MATPOWER text into a validated per-unit case.
pub fn parse_case(source: &str) -> Result<NetworkCase, CaseError> {
    let mut name = String::new();
    let mut base_mva = None;
    let mut tables: HashMap<String, Table> = HashMap::new();

    let lines: Vec<&str> = source.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let line_no = i + 1;
        let line = strip_comment(lines[i]).trim();
        i += 1;
        if let Some(rest) = line.strip_prefix("function") {
            if let Some((_, fname)) = rest.split_once('=') {
                name = fname.trim().trim_end_matches(';').to_string();
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else { continue };
        let Some((key, value)) = rest.split_once('=') else { continue };
        let key = key.trim();
        let value = value.trim();
        if key == "baseMVA" {
            let v = value.trim_end_matches(';').trim();
            base_mva = Some(parse_number(v, line_no)?);
            continue;
        }
        let Some(body) = value.strip_prefix('[') else { continue };
        let mut table = Table { rows: Vec::new(), lines: Vec::new() };
        let mut chunk = body.to_string();
        let mut chunk_line = line_no;
        loop {
            let closed = chunk.find(']');
            let content = match closed {
                Some(end) => &chunk[..end],
                None => chunk.as_str(),
            };
            for row in content.split(';') {
                let toks: Vec<&str> = row.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect();
                if toks.is_empty() {
                    continue;
                }
                let vals = toks.iter().map(|t| parse_number(t, chunk_line)).collect::<Result<Vec<_>, _>>()?;
                table.rows.push(vals);
                table.lines.push(chunk_line);
            }
            if closed.is_some() {
                break;
            }
            if i >= lines.len() {
                return Err(CaseError::Parse { line: line_no, message: format!("unterminated table `mpc.{key}`") });
            }
            chunk = strip_comment(lines[i]).to_string();
            chunk_line = i + 1;
            i += 1;
        }
        tables.insert(key.to_string(), table);
    }

    let base_mva = base_mva.ok_or(CaseError::MissingTable { table: "baseMVA" })?;
    if !(base_mva > 0.0) {
        return Err(CaseError::BaseMva(base_mva));
    }
    let take = |t: &'static str| tables.get(t).ok_or(CaseError::MissingTable { table: t });
    let bus_t = take("bus")?;
    let gen_t = take("gen")?;
    let branch_t = take("branch")?;
    bus_t.require_cols("bus", 3)?;
    gen_t.require_cols("gen", 10)?;
    branch_t.require_cols("branch", 11)?;

    let mut notes = Vec::new();
    let mut isolated = Vec::new();
    let mut buses = Vec::with_capacity(bus_t.rows.len());
    for row in &bus_t.rows {
        let id = row[0] as u32;
        if row[1] as i64 == 4 {
            isolated.push(id);
            continue;
        }
        buses.push(Bus { id, load: row[2] / base_mva });
    }
    if !isolated.is_empty() {
        notes.push(format!("{} isolated bus(es) dropped", isolated.len()));
    }

    let mut branches = Vec::with_capacity(branch_t.rows.len());
    let (mut taps, mut shifts) = (0usize, 0usize);
    for row in &branch_t.rows {
        if row[10] == 0.0 {
            continue;
        }
        let (f, t) = (row[0] as u32, row[1] as u32);
        if isolated.contains(&f) || isolated.contains(&t) {
            continue;
        }
        let (r, x) = (row[2], row[3]);
        if row[8] != 0.0 && row[8] != 1.0 {
            taps += 1;
        }
        if row[9] != 0.0 {
            shifts += 1;
        }
        let z2 = r * r + x * x;
        let susceptance = if z2 > 0.0 { x / z2 } else { f64::INFINITY };
        let rate = row[5];
        let limit = (rate > 0.0 && rate.is_finite()).then(|| rate / base_mva);
        branches.push(Branch { from: f, to: t, susceptance, limit });
    }
    if taps > 0 {
        notes.push(format!("{taps} transformer tap ratio(s) ignored"));
    }
    if shifts > 0 {
        notes.push(format!("{shifts} phase-shift angle(s) ignored"));
    }

    let costs = tables.get("gencost");
    let mut generators = Vec::with_capacity(gen_t.rows.len());
    for (k, row) in gen_t.rows.iter().enumerate() {
        if row[7] <= 0.0 || isolated.contains(&(row[0] as u32)) {
            continue;
        }
        let cost = match costs.and_then(|c| c.rows.get(k)) {
            Some(c) => linear_cost(c, base_mva),
            None => 0.0,
        };
        generators.push(Generator {
            bus: row[0] as u32,
            p_min: row[9] / base_mva,
            p_max: row[8] / base_mva,
            cost,
        });
    }

    let mut case = NetworkCase::new(name, base_mva, buses, branches, generators)?;
    case.notes = notes;
    Ok(case)
}

/// Linear cost coefficient per p.u. from a `gencost` row.
fn linear_cost(row: &[f64], base_mva: f64) -> f64 {
    if row.len() < 4 {
        return 0.0;
    }
    let model = row[0] as i64;
    let n = row[3] as usize;
    let coeffs = &row[4.min(row.len())..];
    let per_mw = match model {
        // polynomial: c(n-1) ... c1 c0
        2 if n >= 2 && coeffs.len() >= n => coeffs[n - 2],
        // piecewise linear: slope of the first segment
        1 if n >= 2 && coeffs.len() >= 4 => {
            let dx = coeffs[2] - coeffs[0];
            if dx != 0.0 {
                (coeffs[3] - coeffs[1]) / dx
            } else {
                0.0
            }
        }
        _ => 0.0,
    };
    per_mw * base_mva
}
