//! Files in and out: scenario configs, density and weight tables, field snapshots, reports.
//!
//! Every writer is deterministic. Floats are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::history::DensityHistory;
use crate::norms::WeightTable;
use crate::report::{Check, CheckLabel};
use crate::scenario::{GridSpec, ScenarioParams};
use crate::vlasov::SpectralField;
use crate::C64;

pub const DENSITY_HEADER: [&str; 5] = ["t", "k", "re", "im", "abs"];

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn parse_err(line: Option<usize>, key: Option<&str>, msg: impl Into<String>) -> LabError {
    LabError::Parse {
        line,
        key: key.map(str::to_owned),
        msg: msg.into(),
    }
}

// ---------------------------------------------------------------- scenario

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<String>,
    #[serde(default)]
    physics: PhysicsSection,
    #[serde(default)]
    cascade: CascadeSection,
    #[serde(default)]
    norms: NormsSection,
    #[serde(default)]
    grid: GridSection,
    #[serde(default)]
    checks: ChecksSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhysicsSection {
    epsilon: Option<f64>,
    delta: Option<f64>,
    zeta: Option<i32>,
    gamma0: Option<f64>,
    sigma: Option<f64>,
    big_r: Option<f64>,
    p: Option<f64>,
    q: Option<f64>,
    eta0: Option<f64>,
    coupling: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CascadeSection {
    km: Option<f64>,
    km_prime: Option<f64>,
    km_double_prime: Option<f64>,
    kappa: Option<f64>,
    kappa_prime: Option<f64>,
    kappa_double_prime: Option<f64>,
    alpha: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormsSection {
    knorm: Option<f64>,
    mu_infinity: Option<f64>,
    b_exp: Option<f64>,
    c_r: Option<f64>,
    r_norm: Option<f64>,
    gamma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    k_max: Option<u32>,
    k_max_backward: Option<u32>,
    eta_max: Option<f64>,
    d_eta: Option<f64>,
    dt: Option<f64>,
    t_end: Option<f64>,
    rtol: Option<f64>,
    h_max: Option<f64>,
    floor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChecksSection {
    envelope_bound: Option<f64>,
    lower_bound_c: Option<f64>,
    fitted_c: Option<f64>,
    r_tilde: Option<f64>,
    approx_ratio: Option<f64>,
    correlation: Option<f64>,
    lower_gamma: Option<f64>,
    samples: Option<usize>,
    seed: Option<u64>,
}

macro_rules! take {
    ($dst:expr, $src:expr, $($f:ident),*) => {
        $( if let Some(v) = $src.$f { $dst.$f = v; } )*
    };
}

macro_rules! take_opt {
    ($dst:expr, $src:expr, $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl ConfigFile {
    fn apply(self) -> Result<ScenarioParams> {
        let mut s = match self.preset.as_deref() {
            None | Some("desk") => ScenarioParams::desk(),
            Some("desk-electrostatic") => ScenarioParams::desk_electrostatic(),
            Some(other) => {
                return Err(parse_err(
                    None,
                    Some("preset"),
                    format!("unknown preset `{other}`, expected `desk` or `desk-electrostatic`"),
                ))
            }
        };
        let ph = self.physics;
        take!(s, ph, epsilon, delta, zeta, gamma0, sigma, big_r, p, q, coupling);
        take_opt!(s, ph, eta0);
        let c = self.cascade;
        take!(s, c, km, km_prime, km_double_prime, kappa, kappa_prime, kappa_double_prime, alpha);
        let n = self.norms;
        take!(s, n, knorm, mu_infinity, b_exp, c_r, r_norm);
        take_opt!(s, n, gamma);
        let g = self.grid;
        take!(s.grid, g, k_max, d_eta, dt, rtol, h_max, floor);
        take_opt!(s.grid, g, k_max_backward, eta_max, t_end);
        let ch = self.checks;
        take!(
            s.checks,
            ch,
            envelope_bound,
            lower_bound_c,
            fitted_c,
            r_tilde,
            approx_ratio,
            correlation,
            lower_gamma,
            samples,
            seed
        );
        Ok(s)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn key_in(msg: &str) -> Option<String> {
    let a = msg.find('`')?;
    let b = msg[a + 1..].find('`')?;
    Some(msg[a + 1..a + 1 + b].to_owned())
}

fn toml_err(text: &str, e: toml::de::Error) -> LabError {
    let line = e.span().map(|s| line_of(text, s.start));
    let msg = e.message().trim().to_owned();
    let key = key_in(&msg);
    LabError::Parse { line, key, msg }
}

/// Parses `section.key=value` and writes it into the table; `value` is read as TOML, falling
/// back to a bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| parse_err(None, None, format!("override `{spec}` is not key=value")))?;
    let path = path.trim();
    let value: toml::Value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_owned()));
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| parse_err(None, Some(path), "empty key"))?;
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| parse_err(None, Some(path), format!("`{part}` is not a section")))?;
    }
    cur.insert(last.to_owned(), value);
    Ok(())
}

/// Parses and validates a scenario from config text with `section.key=value` overrides.
pub fn parse_scenario_with(text: &str, overrides: &[String]) -> Result<ScenarioParams> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| toml_err(text, e))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: ConfigFile = if overrides.is_empty() {
        toml::from_str(text).map_err(|e| toml_err(text, e))?
    } else {
        ConfigFile::deserialize(toml::Value::Table(table)).map_err(|e| toml_err("", e))?
    };
    let s = cfg.apply()?;
    s.validate()?;
    Ok(s)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioParams> {
    parse_scenario_with(text, &[])
}

/// Reads and validates a scenario file. Missing keys take the desk preset values.
pub fn read_scenario(path: &Path) -> Result<ScenarioParams> {
    parse_scenario(&fs::read_to_string(path)?)
}

/// Hex SHA-256 of the config bytes followed by each override on its own line.
pub fn scenario_hash(config: &[u8], overrides: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(config);
    for o in overrides {
        h.update(b"\n--set ");
        h.update(o.as_bytes());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

// ---------------------------------------------------------------- densities

pub fn write_density<W: Write>(rho: &DensityHistory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DENSITY_HEADER)?;
    let mut order: Vec<usize> = (0..rho.modes.len()).collect();
    order.sort_by_key(|&i| rho.modes[i]);
    let mut rows: Vec<usize> = (0..rho.times.len()).collect();
    rows.sort_by(|&a, &b| rho.times[a].total_cmp(&rho.times[b]));
    for i in rows {
        let t = num(rho.times[i]);
        for &m in &order {
            let v = rho.values[m][i];
            w.write_record([t.clone(), rho.modes[m].to_string(), num(v.re), num(v.im), num(v.norm())])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `t,k,re,im,abs` sorted by `(t, k)`.
pub fn write_density_csv(rho: &DensityHistory, path: &Path) -> Result<()> {
    write_density(rho, fs::File::create(path)?)
}

/// Reads a density table; the rows must cover the same mode set at every time, sorted by `(t, k)`.
pub fn parse_density<R: Read>(input: R) -> Result<DensityHistory> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(DENSITY_HEADER) {
        return Err(parse_err(Some(1), None, format!("expected header t,k,re,im,abs, got {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut times: Vec<f64> = Vec::new();
    let mut modes: Vec<i64> = Vec::new();
    let mut cols: Vec<Vec<C64>> = Vec::new();
    let mut cur: Vec<(i64, C64)> = Vec::new();
    let mut cur_t: Option<f64> = None;
    let mut flush = |t: f64, row: &mut Vec<(i64, C64)>, line: usize| -> Result<()> {
        if times.is_empty() {
            modes = row.iter().map(|r| r.0).collect();
            cols = vec![Vec::new(); modes.len()];
        } else if row.len() != modes.len() || row.iter().zip(&modes).any(|(r, &m)| r.0 != m) {
            return Err(parse_err(Some(line), Some("k"), format!("mode set at t = {t} differs from the first time")));
        }
        times.push(t);
        for (c, (_, v)) in cols.iter_mut().zip(row.drain(..)) {
            c.push(v);
        }
        Ok(())
    };
    let mut line = 1;
    for rec in r.records() {
        let rec = rec?;
        line = rec.position().map_or(line + 1, |p| p.line() as usize);
        if rec.len() != 5 {
            return Err(parse_err(Some(line), None, format!("expected 5 fields, got {}", rec.len())));
        }
        let f = |i: usize| -> Result<f64> {
            let v: f64 = rec[i]
                .trim()
                .parse()
                .map_err(|_| parse_err(Some(line), Some(DENSITY_HEADER[i]), format!("not a number: `{}`", &rec[i])))?;
            if v.is_nan() {
                return Err(parse_err(Some(line), Some(DENSITY_HEADER[i]), "NaN"));
            }
            Ok(v)
        };
        let t = f(0)?;
        let k: i64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(Some(line), Some("k"), format!("not an integer: `{}`", &rec[1])))?;
        let v = C64::new(f(2)?, f(3)?);
        match cur_t {
            Some(ct) if ct == t => {
                if cur.last().is_some_and(|&(pk, _)| pk >= k) {
                    return Err(parse_err(Some(line), Some("k"), "modes not strictly increasing"));
                }
            }
            Some(ct) => {
                if !(t > ct) {
                    return Err(parse_err(Some(line), Some("t"), "times not increasing"));
                }
                flush(ct, &mut cur, line)?;
            }
            None => {}
        }
        cur_t = Some(t);
        cur.push((k, v));
    }
    if let Some(ct) = cur_t {
        flush(ct, &mut cur, line)?;
    }
    Ok(DensityHistory { times, modes, values: cols })
}

pub fn read_density_csv(path: &Path) -> Result<DensityHistory> {
    parse_density(fs::File::open(path)?)
}

// ---------------------------------------------------------------- weights and fields

/// Writes `t,eta,w_tilde,w`, one row per grid point, frequencies outermost.
pub fn write_weight_table(table: &WeightTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "eta", "w_tilde", "w"])?;
    for (i, &eta) in table.etas.iter().enumerate() {
        for (j, &t) in table.times.iter().enumerate() {
            w.write_record([num(t), num(eta), num(table.tilde[i][j]), num(table.mollified[i][j])])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Stored coefficients of a field as `k,eta,re,im`.
pub fn write_field_csv(field: &SpectralField, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "eta", "re", "im"])?;
    for k in field.modes() {
        let r = field.row(k);
        for j in r.start..r.end() {
            let v = r.get(j);
            w.write_record([k.to_string(), num(field.eta(j)), num(v.re), num(v.im)])?;
        }
    }
    w.flush()?;
    Ok(())
}

const FIELD_MAGIC: &[u8; 8] = b"ECHOFLD1";

/// Little-endian snapshot: magic, `t, eta_max, d_eta`, `k_max`, then per mode `start, len, values`.
pub fn write_field_binary<W: Write>(field: &SpectralField, mut out: W) -> Result<()> {
    out.write_all(FIELD_MAGIC)?;
    for x in [field.t, field.eta_max, field.d_eta] {
        out.write_all(&x.to_le_bytes())?;
    }
    out.write_all(&field.k_max.to_le_bytes())?;
    for r in &field.rows {
        out.write_all(&(r.start as u64).to_le_bytes())?;
        out.write_all(&(r.values.len() as u64).to_le_bytes())?;
        for v in &r.values {
            out.write_all(&v.re.to_le_bytes())?;
            out.write_all(&v.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_field_binary<R: BufRead>(mut input: R) -> Result<SpectralField> {
    let bad = |m: &str| parse_err(None, None, format!("field snapshot: {m}"));
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut f8 = || -> Result<f64> {
        let mut b = [0u8; 8];
        input.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let (t, eta_max, d_eta) = (f8()?, f8()?, f8()?);
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let k_max = u32::from_le_bytes(b4);
    if !(eta_max > 0.0 && d_eta > 0.0 && eta_max / d_eta < 1e9 && k_max < 1 << 20) {
        return Err(bad("grid out of range"));
    }
    let mut field = SpectralField::zeros(t, k_max, eta_max, d_eta);
    let mut u8b = [0u8; 8];
    for k in -(k_max as i64)..=k_max as i64 {
        input.read_exact(&mut u8b)?;
        let start = u64::from_le_bytes(u8b) as usize;
        input.read_exact(&mut u8b)?;
        let len = u64::from_le_bytes(u8b) as usize;
        if start.checked_add(len).is_none_or(|e| e > field.n_eta) {
            return Err(bad("row exceeds grid"));
        }
        let mut values = Vec::with_capacity(len.min(1 << 16));
        for _ in 0..len {
            input.read_exact(&mut u8b)?;
            let re = f64::from_le_bytes(u8b);
            input.read_exact(&mut u8b)?;
            values.push(C64::new(re, f64::from_le_bytes(u8b)));
        }
        field.set_row(k, start, values);
    }
    Ok(field)
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub scenario_hash: String,
    pub version: String,
    pub grid: GridSpec,
    /// Paths relative to the output directory.
    pub files: Vec<FileEntry>,
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(scenario_hash: String, grid: GridSpec) -> Self {
        RunManifest {
            scenario_hash,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            grid,
            files: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn add_file(&mut self, dir: &Path, rel: &str) -> Result<()> {
        let p = dir.join(rel);
        let bytes = fs::metadata(&p)?.len();
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry {
            path: rel.to_owned(),
            bytes,
            sha256: file_sha256(&p)?,
        });
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(())
    }

    /// Every listed file exists under `dir` with the recorded digest.
    pub fn verify_files(&self, dir: &Path) -> Result<()> {
        for f in &self.files {
            let p: PathBuf = dir.join(&f.path);
            if file_sha256(&p)? != f.sha256 {
                return Err(LabError::Validation(format!("{} does not match its recorded digest", f.path)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub checks: BTreeMap<CheckLabel, Check>,
    pub manifest: RunManifest,
}

impl Report {
    pub fn new(manifest: RunManifest) -> Self {
        Report {
            checks: BTreeMap::new(),
            manifest,
        }
    }

    pub fn push(&mut self, c: Check) {
        self.checks.insert(c.label, c);
    }

    pub fn all_pass(&self) -> bool {
        self.checks.values().all(|c| c.pass || c.label.is_informational())
    }
}

pub fn report_to_string(report: &Report) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn write_report_json(report: &Report, path: &Path) -> Result<()> {
    fs::write(path, report_to_string(report)?)?;
    Ok(())
}

/// Parses a report; each check must sit under its own label.
pub fn parse_report(text: &str) -> Result<Report> {
    let r: Report = serde_json::from_str(text)?;
    for (label, c) in &r.checks {
        if *label != c.label {
            return Err(parse_err(None, Some(&label.as_str()), format!("entry holds a `{}` check", c.label)));
        }
    }
    Ok(r)
}

pub fn read_report_json(path: &Path) -> Result<Report> {
    parse_report(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_desk() {
        assert_eq!(parse_scenario("").unwrap(), ScenarioParams::desk());
        assert_eq!(
            parse_scenario("preset = \"desk-electrostatic\"").unwrap(),
            ScenarioParams::desk_electrostatic()
        );
    }

    #[test]
    fn unknown_key_names_line_and_key() {
        let e = parse_scenario("[grid]\nd_eta = 0.5\nbogus = 1\n").unwrap_err();
        match e {
            LabError::Parse { line, key, .. } => {
                assert_eq!(line, Some(3));
                assert_eq!(key.as_deref(), Some("bogus"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn invariant_violations_are_named() {
        let e = parse_scenario("[physics]\nq = 0.6\n").unwrap_err();
        assert!(e.to_string().contains("q < min(1/4,p)"), "{e}");
        let e = parse_scenario("[cascade]\nkappa = 0.6\n").unwrap_err();
        assert!(matches!(e, LabError::Validation(_)));
    }

    #[test]
    fn overrides_apply_and_change_hash() {
        let s = parse_scenario_with("", &["grid.k_max=3".into(), "physics.delta = 0.002".into()]).unwrap();
        assert_eq!(s.grid.k_max, 3);
        assert_eq!(s.delta, 0.002);
        assert_ne!(scenario_hash(b"", &[]), scenario_hash(b"", &["grid.k_max=3".into()]));
        assert!(parse_scenario_with("", &["grid.nope=1".into()]).is_err());
    }

    #[test]
    fn empty_history_is_header_only() {
        let mut buf = Vec::new();
        write_density(&DensityHistory::empty(vec![1, 2]), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,k,re,im,abs\n");
    }

    #[test]
    fn binary_field_round_trip() {
        let mut f = SpectralField::zeros(1.5, 2, 3.0, 0.5);
        f.set_row(-2, 3, vec![C64::new(0.1, -2.0), C64::new(1e-300, 7.0)]);
        let mut buf = Vec::new();
        write_field_binary(&f, &mut buf).unwrap();
        assert_eq!(read_field_binary(&buf[..]).unwrap(), f);
        assert!(read_field_binary(&buf[..20]).is_err());
    }
}
