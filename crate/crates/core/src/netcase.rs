//! Network model: per-unit buses, generators and branches, the case-file
//! reader/writer, and the complex bus admittance matrix.
//!
//! The accepted text format is a restricted subset of the MATPOWER case
//! format (version 2):
//!
//! ```text
//! function mpc = name          (optional)
//! mpc.version = '2';           (optional)
//! mpc.baseMVA = 100;
//! mpc.bus = [ ... ];           13 columns (extra solved-case columns ignored)
//! mpc.gen = [ ... ];           at least 10 columns
//! mpc.branch = [ ... ];        11 or 13 columns
//! mpc.gencost = [ ... ];       polynomial rows of degree <= 2
//! mpc.bus_name = { ... };      (optional)
//! ```
//!
//! Anything else (other `mpc.*` fields, piecewise-linear costs, reactive
//! cost rows, isolated buses) is rejected.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angle-difference limit applied when a branch row has no ANGMIN/ANGMAX columns.
pub const DEFAULT_ANGLE_LIMIT: f64 = PI / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    Pq,
    Pv,
    Slack,
}

impl BusType {
    fn from_code(code: f64, line: usize) -> Result<Self> {
        match code as i64 {
            1 => Ok(BusType::Pq),
            2 => Ok(BusType::Pv),
            3 => Ok(BusType::Slack),
            4 => Err(Error::parse(line, "isolated buses (type 4) are not supported")),
            other => Err(Error::parse(line, format!("unknown bus type {other}"))),
        }
    }

    fn code(self) -> u8 {
        match self {
            BusType::Pq => 1,
            BusType::Pv => 2,
            BusType::Slack => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External bus number from the case file.
    pub id: usize,
    pub kind: BusType,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    pub vmin: f64,
    pub vmax: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gen {
    /// Internal (0-based) bus index.
    pub bus: usize,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    /// Cost coefficients for per-unit active power: c2*p^2 + c1*p + c0 in $/h.
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl Gen {
    pub fn cost(&self, p: f64) -> f64 {
        self.c2 * p * p + self.c1 * p + self.c0
    }

    pub fn marginal_cost(&self, p: f64) -> f64 {
        2.0 * self.c2 * p + self.c1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Internal (0-based) bus indices.
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance.
    pub b: f64,
    /// Apparent-power limit in per-unit; 0 means unconstrained.
    pub rate: f64,
    /// Off-nominal tap ratio (1 for lines).
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
    /// Angle-difference bounds in radians; `None` is unconstrained.
    pub angmin: Option<f64>,
    pub angmax: Option<f64>,
}

impl Branch {
    pub fn has_flow_limit(&self) -> bool {
        self.rate > 0.0
    }
}

/// Series and shunt two-port parameters of a branch:
/// `I_from = yff*V_from + yft*V_to`, `I_to = ytf*V_from + ytt*V_to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPort {
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaseData {
    name: String,
    base_mva: f64,
    buses: Vec<Bus>,
    gens: Vec<Gen>,
    branches: Vec<Branch>,
}

/// Validated per-unit network model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "CaseData", into = "CaseData")]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub gens: Vec<Gen>,
    pub branches: Vec<Branch>,
    ref_bus: usize,
    index_of_id: HashMap<usize, usize>,
    gen_at_bus: Vec<Option<usize>>,
}

impl PartialEq for NetworkCase {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.base_mva == other.base_mva
            && self.buses == other.buses
            && self.gens == other.gens
            && self.branches == other.branches
    }
}

impl TryFrom<CaseData> for NetworkCase {
    type Error = Error;

    fn try_from(data: CaseData) -> Result<Self> {
        NetworkCase::new(data.name, data.base_mva, data.buses, data.gens, data.branches)
    }
}

impl From<NetworkCase> for CaseData {
    fn from(case: NetworkCase) -> Self {
        CaseData {
            name: case.name,
            base_mva: case.base_mva,
            buses: case.buses,
            gens: case.gens,
            branches: case.branches,
        }
    }
}

impl NetworkCase {
    /// Builds a case from per-unit data with internal indices, checking all invariants.
    pub fn new(
        name: String,
        base_mva: f64,
        buses: Vec<Bus>,
        gens: Vec<Gen>,
        branches: Vec<Branch>,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::Validation(msg));
        if !(base_mva > 0.0) {
            return invalid(format!("baseMVA must be positive, got {base_mva}"));
        }
        if buses.is_empty() {
            return invalid("case has no buses".into());
        }
        let n = buses.len();
        let mut index_of_id = HashMap::with_capacity(n);
        for (i, bus) in buses.iter().enumerate() {
            if index_of_id.insert(bus.id, i).is_some() {
                return invalid(format!("duplicate bus id {}", bus.id));
            }
            if !(bus.vmin <= bus.vmax) || bus.vmin < 0.0 {
                return invalid(format!("bus {}: voltage bounds {} > {}", bus.id, bus.vmin, bus.vmax));
            }
        }
        let slacks: Vec<usize> = (0..n).filter(|&i| buses[i].kind == BusType::Slack).collect();
        if slacks.len() != 1 {
            return invalid(format!("expected exactly one slack bus, found {}", slacks.len()));
        }
        let mut gen_at_bus = vec![None; n];
        for (g, gen) in gens.iter().enumerate() {
            if gen.bus >= n {
                return invalid(format!("generator {g} references missing bus index {}", gen.bus));
            }
            if gen_at_bus[gen.bus].replace(g).is_some() {
                return invalid(format!(
                    "bus {} has more than one generator; merge them before loading",
                    buses[gen.bus].id
                ));
            }
            if !(gen.pmin <= gen.pmax) || !(gen.qmin <= gen.qmax) {
                return invalid(format!("generator at bus {}: inconsistent limits", buses[gen.bus].id));
            }
            if gen.c2 < 0.0 {
                return invalid(format!("generator at bus {}: c2 < 0", buses[gen.bus].id));
            }
        }
        for (l, br) in branches.iter().enumerate() {
            if br.from >= n || br.to >= n {
                return invalid(format!("branch {l} references a missing bus"));
            }
            if br.from == br.to {
                return invalid(format!("branch {l} is a self loop"));
            }
            if br.angmin.is_some_and(|a| a > 0.0) || br.angmax.is_some_and(|a| a < 0.0) {
                return invalid(format!("branch {l}: angle bounds must bracket zero"));
            }
            if br.rate < 0.0 {
                return invalid(format!("branch {l}: negative rating"));
            }
        }
        Ok(NetworkCase {
            name,
            base_mva,
            buses,
            gens,
            branches,
            ref_bus: slacks[0],
            index_of_id,
            gen_at_bus,
        })
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Internal index of the reference (slack) bus.
    pub fn ref_bus(&self) -> usize {
        self.ref_bus
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.index_of_id.get(&id).copied()
    }

    /// Generator attached to an internal bus index, if any.
    pub fn gen_at(&self, bus: usize) -> Option<&Gen> {
        self.gen_at_bus[bus].map(|g| &self.gens[g])
    }

    pub fn gen_index_at(&self, bus: usize) -> Option<usize> {
        self.gen_at_bus[bus]
    }

    /// Active generation bounds at a bus (zero for buses without generators).
    pub fn p_limits(&self, bus: usize) -> (f64, f64) {
        self.gen_at(bus).map_or((0.0, 0.0), |g| (g.pmin, g.pmax))
    }

    pub fn q_limits(&self, bus: usize) -> (f64, f64) {
        self.gen_at(bus).map_or((0.0, 0.0), |g| (g.qmin, g.qmax))
    }

    /// Cost coefficients (c2, c1, c0) at a bus (zero without a generator).
    pub fn cost_at(&self, bus: usize) -> (f64, f64, f64) {
        self.gen_at(bus).map_or((0.0, 0.0, 0.0), |g| (g.c2, g.c1, g.c0))
    }

    /// Distinct undirected bus pairs joined by at least one branch, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .branches
            .iter()
            .map(|b| (b.from.min(b.to), b.from.max(b.to)))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Reads a case in the supported text format.
    pub fn parse(text: &str) -> Result<Self> {
        parse_case(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serialization cannot fail")
    }

    /// Writes the case back in the supported text format (MW/MVAr/degrees).
    pub fn to_case_text(&self) -> String {
        write_case(self)
    }
}

/// Two-port parameters of a branch under the standard pi model with an
/// ideal transformer on the from side.
pub fn two_port(branch: &Branch) -> Result<TwoPort> {
    let z = Complex64::new(branch.r, branch.x);
    if z.norm() == 0.0 {
        return Err(Error::DegenerateBranch {
            from: branch.from,
            to: branch.to,
        });
    }
    let ys = z.inv();
    let ytt = ys + Complex64::new(0.0, branch.b / 2.0);
    let t = Complex64::from_polar(branch.tap, branch.shift);
    Ok(TwoPort {
        yff: ytt / (t * t.conj()),
        yft: -ys / t.conj(),
        ytf: -ys / t,
        ytt,
    })
}

/// Complex bus admittance matrix stored by rows.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    n: usize,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|p| self.rows[i][p].1)
            .unwrap_or_default()
    }

    /// Nonzero entries of row `i`, sorted by column.
    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).re
    }

    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).im
    }

    /// Injected currents `I = Y V`.
    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, y)| y * v[j]).sum())
            .collect()
    }

    /// Complex power injections `S_k = V_k conj((Y V)_k)`.
    pub fn injections(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.mul(v)
            .into_iter()
            .zip(v)
            .map(|(i, vk)| vk * i.conj())
            .collect()
    }
}

pub fn build_admittance(case: &NetworkCase) -> Result<AdmittanceMatrix> {
    let n = case.n_bus();
    let mut acc: Vec<HashMap<usize, Complex64>> = vec![HashMap::new(); n];
    let mut add = |i: usize, j: usize, y: Complex64| *acc[i].entry(j).or_default() += y;
    for br in &case.branches {
        let tp = two_port(br)?;
        add(br.from, br.from, tp.yff);
        add(br.from, br.to, tp.yft);
        add(br.to, br.from, tp.ytf);
        add(br.to, br.to, tp.ytt);
    }
    for (k, bus) in case.buses.iter().enumerate() {
        add(k, k, Complex64::new(bus.gs, bus.bs));
    }
    let rows = acc
        .into_iter()
        .map(|m| {
            let mut r: Vec<(usize, Complex64)> = m.into_iter().collect();
            r.sort_unstable_by_key(|&(j, _)| j);
            r
        })
        .collect();
    Ok(AdmittanceMatrix { n, rows })
}

// ---------------------------------------------------------------------------
// Case-file reader

#[derive(Default)]
struct RawBlocks {
    name: Option<String>,
    base_mva: Option<f64>,
    bus: Option<(usize, Vec<Vec<f64>>)>,
    gen: Option<(usize, Vec<Vec<f64>>)>,
    branch: Option<(usize, Vec<Vec<f64>>)>,
    gencost: Option<(usize, Vec<Vec<f64>>)>,
    bus_name: Option<Vec<String>>,
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '\'' => in_quote = !in_quote,
            '%' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_case(text: &str) -> Result<NetworkCase> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip_comment(l).trim()))
        .collect();
    let mut raw = RawBlocks::default();
    let mut i = 0;
    while i < lines.len() {
        let (ln, line) = lines[i];
        i += 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("function") {
            let name = rest.split('=').nth(1).unwrap_or(rest).trim().trim_end_matches(';');
            raw.name = Some(name.to_string());
            continue;
        }
        let Some(assign) = line.strip_prefix("mpc.") else {
            return Err(Error::parse(ln, format!("unexpected statement `{line}`")));
        };
        let (field, value) = assign
            .split_once('=')
            .ok_or_else(|| Error::parse(ln, "expected `mpc.<field> = ...`"))?;
        let field = field.trim();
        let value = value.trim();
        match field {
            "version" => {
                let v = value.trim_end_matches(';').trim().trim_matches('\'');
                if v != "2" {
                    return Err(Error::parse(ln, format!("unsupported case format version {v}")));
                }
            }
            "baseMVA" => {
                let v = value.trim_end_matches(';').trim();
                raw.base_mva = Some(
                    v.parse()
                        .map_err(|_| Error::parse(ln, format!("bad baseMVA `{v}`")))?,
                );
            }
            "bus" | "gen" | "branch" | "gencost" => {
                let rows = read_matrix(value, ln, &lines, &mut i)?;
                let slot = match field {
                    "bus" => &mut raw.bus,
                    "gen" => &mut raw.gen,
                    "branch" => &mut raw.branch,
                    _ => &mut raw.gencost,
                };
                if slot.replace((ln, rows)).is_some() {
                    return Err(Error::parse(ln, format!("duplicate mpc.{field} block")));
                }
            }
            "bus_name" => raw.bus_name = Some(read_cell(value, ln, &lines, &mut i)?),
            other => {
                return Err(Error::parse(ln, format!("unsupported field mpc.{other}")));
            }
        }
    }
    assemble(raw)
}

fn read_matrix(
    first: &str,
    ln: usize,
    lines: &[(usize, &str)],
    i: &mut usize,
) -> Result<Vec<Vec<f64>>> {
    let body = first
        .strip_prefix('[')
        .ok_or_else(|| Error::parse(ln, "expected `[` to open a matrix"))?;
    let mut rows = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let mut segment = body.to_string();
    let mut seg_line = ln;
    loop {
        let (content, closed) = match segment.find(']') {
            Some(p) => {
                let tail = segment[p + 1..].trim();
                if !(tail.is_empty() || tail == ";") {
                    return Err(Error::parse(seg_line, "trailing text after matrix"));
                }
                (segment[..p].to_string(), true)
            }
            None => (segment.clone(), false),
        };
        for (k, part) in content.split(';').enumerate() {
            if k > 0 && !current.is_empty() {
                rows.push(std::mem::take(&mut current));
            }
            for tok in part.split(|c: char| c.is_whitespace() || c == ',') {
                if tok.is_empty() {
                    continue;
                }
                let v = parse_number(tok)
                    .ok_or_else(|| Error::parse(seg_line, format!("bad number `{tok}`")))?;
                current.push(v);
            }
        }
        // A newline also ends a row.
        if !current.is_empty() {
            rows.push(std::mem::take(&mut current));
        }
        if closed {
            return Ok(rows);
        }
        if *i >= lines.len() {
            return Err(Error::parse(ln, "unterminated matrix"));
        }
        let (l, text) = lines[*i];
        *i += 1;
        seg_line = l;
        segment = text.to_string();
    }
}

fn parse_number(tok: &str) -> Option<f64> {
    match tok {
        "Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        _ => tok.parse().ok(),
    }
}

fn read_cell(first: &str, ln: usize, lines: &[(usize, &str)], i: &mut usize) -> Result<Vec<String>> {
    let mut text = first
        .strip_prefix('{')
        .ok_or_else(|| Error::parse(ln, "expected `{` to open a cell array"))?
        .to_string();
    while !text.contains('}') {
        if *i >= lines.len() {
            return Err(Error::parse(ln, "unterminated cell array"));
        }
        text.push('\n');
        text.push_str(lines[*i].1);
        *i += 1;
    }
    let body = &text[..text.find('}').unwrap()];
    let mut names = Vec::new();
    for item in body.split([';', '\n']) {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let name = item
            .strip_prefix('\'')
            .and_then(|s| s.strip_suffix('\''))
            .ok_or_else(|| Error::parse(ln, format!("bad cell entry `{item}`")))?;
        names.push(name.trim().to_string());
    }
    Ok(names)
}

fn angle_limit(deg: f64) -> Option<f64> {
    // Zero, |angle| >= 360 and |angle| >= 90 all mean "no usable limit": the
    // tangent form of the constraint needs |angle| < 90 degrees.
    if deg == 0.0 || deg.abs() >= 90.0 || !deg.is_finite() {
        return None;
    }
    Some(deg.to_radians())
}

fn assemble(raw: RawBlocks) -> Result<NetworkCase> {
    let base = raw.base_mva.ok_or_else(|| Error::parse(0, "missing mpc.baseMVA"))?;
    let (bus_ln, bus_rows) = raw.bus.ok_or_else(|| Error::parse(0, "missing mpc.bus"))?;
    let (gen_ln, gen_rows) = raw.gen.ok_or_else(|| Error::parse(0, "missing mpc.gen"))?;
    let (br_ln, br_rows) = raw.branch.ok_or_else(|| Error::parse(0, "missing mpc.branch"))?;
    let gencost = raw.gencost;

    if let Some(names) = &raw.bus_name {
        if names.len() != bus_rows.len() {
            return Err(Error::parse(bus_ln, "mpc.bus_name length differs from mpc.bus"));
        }
    }
    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut index_of_id = HashMap::new();
    for (k, row) in bus_rows.iter().enumerate() {
        if row.len() < 13 {
            return Err(Error::parse(bus_ln, format!("bus row {} has {} columns, need 13", k + 1, row.len())));
        }
        let id = row[0] as usize;
        if row[0] < 1.0 || row[0].fract() != 0.0 {
            return Err(Error::parse(bus_ln, format!("bad bus number {}", row[0])));
        }
        index_of_id.insert(id, k);
        buses.push(Bus {
            id,
            kind: BusType::from_code(row[1], bus_ln)?,
            pd: row[2] / base,
            qd: row[3] / base,
            gs: row[4] / base,
            bs: row[5] / base,
            vmax: row[11],
            vmin: row[12],
            name: raw.bus_name.as_ref().map(|n| n[k].clone()),
        });
    }
    let lookup = |id: f64, ln: usize| -> Result<usize> {
        index_of_id
            .get(&(id as usize))
            .copied()
            .ok_or_else(|| Error::parse(ln, format!("reference to unknown bus {id}")))
    };

    let cost_rows = match &gencost {
        Some((ln, rows)) => {
            if rows.len() != gen_rows.len() {
                return Err(Error::parse(
                    *ln,
                    "mpc.gencost must have one row per generator (reactive costs unsupported)",
                ));
            }
            Some((*ln, rows))
        }
        None => None,
    };

    let mut gens = Vec::new();
    for (g, row) in gen_rows.iter().enumerate() {
        if row.len() < 10 {
            return Err(Error::parse(gen_ln, format!("gen row {} has {} columns, need 10", g + 1, row.len())));
        }
        let (c2, c1, c0) = match cost_rows {
            Some((ln, rows)) => poly_cost(&rows[g], ln, base)?,
            None => (0.0, 0.0, 0.0),
        };
        if row[7] <= 0.0 {
            continue;
        }
        gens.push(Gen {
            bus: lookup(row[0], gen_ln)?,
            qmax: row[3] / base,
            qmin: row[4] / base,
            pmax: row[8] / base,
            pmin: row[9] / base,
            c2,
            c1,
            c0,
        });
    }

    let mut branches = Vec::new();
    for (l, row) in br_rows.iter().enumerate() {
        if row.len() != 11 && row.len() < 13 {
            return Err(Error::parse(br_ln, format!("branch row {} has {} columns, need 11 or 13", l + 1, row.len())));
        }
        if row[10] <= 0.0 {
            continue;
        }
        let (angmin, angmax) = if row.len() >= 13 {
            (angle_limit(row[11]), angle_limit(row[12]))
        } else {
            (Some(-DEFAULT_ANGLE_LIMIT), Some(DEFAULT_ANGLE_LIMIT))
        };
        branches.push(Branch {
            from: lookup(row[0], br_ln)?,
            to: lookup(row[1], br_ln)?,
            r: row[2],
            x: row[3],
            b: row[4],
            rate: row[5] / base,
            tap: if row[8] == 0.0 { 1.0 } else { row[8] },
            shift: row[9].to_radians(),
            angmin,
            angmax,
        });
    }
    NetworkCase::new(raw.name.unwrap_or_default(), base, buses, gens, branches)
}

/// Converts a polynomial cost row in $/h over MW into per-unit coefficients.
fn poly_cost(row: &[f64], ln: usize, base: f64) -> Result<(f64, f64, f64)> {
    if row.len() < 4 {
        return Err(Error::parse(ln, "short gencost row"));
    }
    match row[0] as i64 {
        1 => return Err(Error::parse(ln, "piecewise-linear costs are not supported")),
        2 => {}
        m => return Err(Error::parse(ln, format!("unknown cost model {m}"))),
    }
    let ncost = row[3] as usize;
    if row.len() < 4 + ncost {
        return Err(Error::parse(ln, "gencost row shorter than its NCOST"));
    }
    let c = &row[4..4 + ncost];
    let (c2, c1, c0) = match ncost {
        0 => (0.0, 0.0, 0.0),
        1 => (0.0, 0.0, c[0]),
        2 => (0.0, c[0], c[1]),
        3 => (c[0], c[1], c[2]),
        _ => {
            if c[..ncost - 3].iter().any(|&v| v != 0.0) {
                return Err(Error::parse(ln, "cost polynomials above degree 2 are not supported"));
            }
            (c[ncost - 3], c[ncost - 2], c[ncost - 1])
        }
    };
    Ok((c2 * base * base, c1 * base, c0))
}

fn fmt_angle(limit: Option<f64>, lower: bool) -> String {
    match limit {
        Some(a) => format!("{:?}", a.to_degrees()),
        None if lower => "-360".into(),
        None => "360".into(),
    }
}

fn write_case(case: &NetworkCase) -> String {
    let base = case.base_mva;
    let mut s = String::new();
    let name = if case.name.is_empty() { "case" } else { &case.name };
    let _ = writeln!(s, "function mpc = {name}");
    let _ = writeln!(s, "mpc.version = '2';");
    let _ = writeln!(s, "mpc.baseMVA = {:?};", base);
    let _ = writeln!(s, "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin");
    let _ = writeln!(s, "mpc.bus = [");
    for (k, b) in case.buses.iter().enumerate() {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t1\t1\t0\t0\t1\t{:?}\t{:?};",
            b.id,
            b.kind.code(),
            b.pd * base,
            b.qd * base,
            b.gs * base,
            b.bs * base,
            b.vmax,
            b.vmin
        );
        debug_assert_eq!(case.bus_index(b.id), Some(k));
    }
    let _ = writeln!(s, "];");
    let _ = writeln!(s, "mpc.gen = [");
    for g in &case.gens {
        let _ = writeln!(
            s,
            "\t{}\t0\t0\t{:?}\t{:?}\t1\t{:?}\t1\t{:?}\t{:?};",
            case.buses[g.bus].id,
            g.qmax * base,
            g.qmin * base,
            base,
            g.pmax * base,
            g.pmin * base
        );
    }
    let _ = writeln!(s, "];");
    let _ = writeln!(s, "mpc.branch = [");
    for br in &case.branches {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t0\t0\t{:?}\t{:?}\t1\t{}\t{};",
            case.buses[br.from].id,
            case.buses[br.to].id,
            br.r,
            br.x,
            br.b,
            br.rate * base,
            br.tap,
            br.shift.to_degrees(),
            fmt_angle(br.angmin, true),
            fmt_angle(br.angmax, false)
        );
    }
    let _ = writeln!(s, "];");
    let _ = writeln!(s, "mpc.gencost = [");
    for g in &case.gens {
        let _ = writeln!(
            s,
            "\t2\t0\t0\t3\t{:?}\t{:?}\t{:?};",
            g.c2 / (base * base),
            g.c1 / base,
            g.c0
        );
    }
    let _ = writeln!(s, "];");
    if case.buses.iter().all(|b| b.name.is_some()) {
        let _ = writeln!(s, "mpc.bus_name = {{");
        for b in &case.buses {
            let _ = writeln!(s, "\t'{}';", b.name.as_deref().unwrap_or_default());
        }
        let _ = writeln!(s, "}};");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "\
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0  0  0 0 1 1 0 230 1 1.1 0.9;
  2 1 50 10 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 100 -100 1 100 1 200 0 ];
mpc.branch = [ 1 2 0 0.1 0 0 0 0 0 0 1 -360 360 ];
";

    #[test]
    fn pure_reactance_branch() {
        let case = NetworkCase::parse(TWO_BUS).unwrap();
        let y = build_admittance(&case).unwrap();
        assert!((y.get(0, 0) - Complex64::new(0.0, -10.0)).norm() < 1e-12);
        assert!((y.get(0, 1) - Complex64::new(0.0, 10.0)).norm() < 1e-12);
        assert!((y.get(1, 0) - Complex64::new(0.0, 10.0)).norm() < 1e-12);
        assert!((y.get(1, 1) - Complex64::new(0.0, -10.0)).norm() < 1e-12);
    }

    #[test]
    fn missing_gencost_means_zero_cost() {
        let case = NetworkCase::parse(TWO_BUS).unwrap();
        let g = &case.gens[0];
        assert_eq!((g.c2, g.c1, g.c0), (0.0, 0.0, 0.0));
        assert_eq!(case.branches[0].angmin, None);
    }

    #[test]
    fn buses_without_generators_have_zero_limits_and_cost() {
        let case = NetworkCase::parse(TWO_BUS).unwrap();
        assert_eq!(case.p_limits(1), (0.0, 0.0));
        assert_eq!(case.q_limits(1), (0.0, 0.0));
        assert_eq!(case.cost_at(1), (0.0, 0.0, 0.0));
        assert_eq!(case.p_limits(0), (0.0, 2.0));
    }

    #[test]
    fn rejects_two_slacks() {
        let text = TWO_BUS.replace("2 1 50", "2 3 50");
        assert!(matches!(NetworkCase::parse(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_unknown_bus_reference() {
        let text = TWO_BUS.replace("1 2 0 0.1", "1 7 0 0.1");
        assert!(matches!(NetworkCase::parse(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn rejects_unsupported_fields_and_pwl_costs() {
        let text = format!("{TWO_BUS}mpc.areas = [1 1];\n");
        assert!(matches!(NetworkCase::parse(&text), Err(Error::Parse { .. })));
        let text = format!("{TWO_BUS}mpc.gencost = [1 0 0 2 0 0 100 1000];\n");
        let err = NetworkCase::parse(&text).unwrap_err();
        assert!(err.to_string().contains("piecewise"), "{err}");
    }

    #[test]
    fn zero_impedance_is_degenerate() {
        let text = TWO_BUS.replace("1 2 0 0.1", "1 2 0 0");
        let case = NetworkCase::parse(&text).unwrap();
        assert!(matches!(build_admittance(&case), Err(Error::DegenerateBranch { .. })));
    }

    #[test]
    fn eleven_column_branches_get_default_angle_limits() {
        let text = TWO_BUS.replace("0 0 1 -360 360", "0 0 1");
        let case = NetworkCase::parse(&text).unwrap();
        assert_eq!(case.branches[0].angmin, Some(-DEFAULT_ANGLE_LIMIT));
        assert_eq!(case.branches[0].angmax, Some(DEFAULT_ANGLE_LIMIT));
    }

    #[test]
    fn cost_rescaled_to_per_unit() {
        let text = format!("{TWO_BUS}mpc.gencost = [2 0 0 3 0.01 20 5];\n");
        let case = NetworkCase::parse(&text).unwrap();
        let g = &case.gens[0];
        // 0.01 $/MW^2h * (100 MW/pu)^2, 20 $/MWh * 100 MW/pu
        assert!((g.c2 - 100.0).abs() < 1e-12 && (g.c1 - 2000.0).abs() < 1e-12 && g.c0 == 5.0);
        // cost of 50 MW either way
        assert!((g.cost(0.5) - (0.01 * 2500.0 + 20.0 * 50.0 + 5.0)).abs() < 1e-9);
    }
}
