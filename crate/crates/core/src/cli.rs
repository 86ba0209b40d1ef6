//! Command-line front end: validation, single runs, parameter sweeps and the
//! CSV/key-value outputs they write.
//!
//! Output of `run` (one directory per config hash and seed):
//!
//! * `trajectory.csv`: one row per control step, columns in this order
//!   (`n` generalized DoFs, indices from 0):
//!   `t, q_0..q_{n-1}, zeta_0..zeta_{n-1}, x_e_x, x_e_y, x_e_z, chi, f,
//!   e_f, e_y, e_z, e_o1, e_o2, e_o3, b_f, b_y, b_z, b_o1, b_o2, b_o3,
//!   b_k, b_vel, b_d, tau_0.., tau_des_0.., xstar_0..xstar_5, zeta_r_0..,
//!   kin_active_f..kin_active_o3, energy_active, velocity_active,
//!   velocity_row, feasible, contact_lost, delta_norm, delta_excess`.
//!   Barriers and errors are those of the true state; flags are 0/1.
//! * `events.csv`: `t, kind, detail`, one row per onset.
//! * `summary.txt`: `key = value` lines, see [`summary_text`].
//! * `manifest.txt` and a verbatim copy of the config as `config.toml`.
//!
//! Floats are written with 17 significant digits.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha1::{Digest, Sha1};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::sim::{run_scenario, SimLog, Summary};
use crate::CHANNELS;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FLOATCBF_OUT";
/// Output root when neither `--out` nor [`OUT_ENV`] is given.
pub const DEFAULT_OUT_ROOT: &str = "runs";

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Git blob hash of `bytes` (`sha1("blob <len>\0" ++ bytes)`), lowercase hex.
pub fn config_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub config_hash: String,
}

impl RunManifest {
    /// `<root>/<first 12 hex digits of the hash>-seed<seed>`.
    pub fn default_dir(root: &Path, hash: &str, seed: u64) -> PathBuf {
        root.join(format!("{}-seed{seed}", &hash[..12]))
    }

    pub fn to_text(&self) -> String {
        format!(
            "config_path = {}\nseed = {}\nout_dir = {}\nconfig_hash = {}\n",
            self.config_path.display(),
            self.seed,
            self.out_dir.display(),
            self.config_hash
        )
    }
}

pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    let series = |h: &mut Vec<String>, name: &str, len: usize| h.extend((0..len).map(|i| format!("{name}_{i}")));
    series(&mut h, "q", n);
    series(&mut h, "zeta", n);
    h.extend(["x_e_x", "x_e_y", "x_e_z", "chi", "f"].map(String::from));
    h.extend(CHANNELS.iter().map(|c| format!("e_{c}")));
    h.extend(CHANNELS.iter().map(|c| format!("b_{c}")));
    h.extend(["b_k", "b_vel", "b_d"].map(String::from));
    series(&mut h, "tau", n);
    series(&mut h, "tau_des", n);
    series(&mut h, "xstar", 6);
    series(&mut h, "zeta_r", n);
    h.extend(CHANNELS.iter().map(|c| format!("kin_active_{c}")));
    h.extend(
        ["energy_active", "velocity_active", "velocity_row", "feasible", "contact_lost", "delta_norm", "delta_excess"]
            .map(String::from),
    );
    h
}

pub fn write_trajectory<W: Write>(w: W, log: &SimLog, n: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trajectory_header(n)).map_err(csv_error)?;
    for r in &log.records {
        let mut row: Vec<String> = vec![fmt_f64(r.t)];
        row.extend(r.q.iter().chain(r.zeta.iter()).chain(r.x_e.iter()).map(|&x| fmt_f64(x)));
        row.push(fmt_f64(r.chi));
        row.push(fmt_f64(r.f));
        row.extend(r.e.iter().chain(r.barriers.channels.iter()).map(|&x| fmt_f64(x)));
        row.extend([r.barriers.b_k, r.barriers.b_vel, r.barriers.b_d].map(fmt_f64));
        row.extend(
            r.tau.iter().chain(r.tau_des.iter()).chain(r.x_star.iter()).chain(r.zeta_r.iter()).map(|&x| fmt_f64(x)),
        );
        row.extend(r.kin_active.iter().map(|&b| flag(b).to_string()));
        row.extend(
            [r.torque_active[0], r.torque_active[1], r.velocity_row, r.feasible, r.contact_lost]
                .map(|b| flag(b).to_string()),
        );
        row.push(fmt_f64(r.delta_norm));
        row.push(fmt_f64(r.delta_excess));
        out.write_record(&row).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_events<W: Write>(w: W, log: &SimLog) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "kind", "detail"]).map_err(csv_error)?;
    for e in &log.events {
        out.write_record([fmt_f64(e.t), e.kind.label(), e.detail.clone()]).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Key-value rendering of a run summary. Keys are fixed and ordered.
pub fn summary_text(s: &Summary) -> String {
    let mut lines: Vec<(String, String)> = vec![
        ("safe".into(), s.is_safe().to_string()),
        ("steps".into(), s.steps.to_string()),
        ("aborted".into(), s.aborted.to_string()),
        ("violations".into(), s.violations.to_string()),
        ("contact_lost".into(), s.contact_lost.to_string()),
        ("infeasible".into(), s.infeasible.to_string()),
        ("min_f".into(), fmt_f64(s.min_force)),
        ("max_f".into(), fmt_f64(s.max_force)),
    ];
    for (i, c) in CHANNELS.iter().enumerate() {
        lines.push((format!("max_abs_e_{c}"), fmt_f64(s.max_error[i].abs().max(s.min_error[i].abs()))));
    }
    for (i, c) in CHANNELS.iter().enumerate() {
        lines.push((format!("min_e_{c}"), fmt_f64(s.min_error[i])));
        lines.push((format!("max_e_{c}"), fmt_f64(s.max_error[i])));
    }
    for (i, c) in CHANNELS.iter().enumerate() {
        lines.push((format!("kinematic_active_{c}"), s.kinematic_active[i].to_string()));
    }
    lines.extend([
        ("energy_active".into(), s.energy_active.to_string()),
        ("velocity_active".into(), s.velocity_active.to_string()),
        ("min_b_k".into(), fmt_f64(s.min_b_k)),
        ("min_b_vel".into(), fmt_f64(s.min_b_vel)),
        ("min_b_d".into(), fmt_f64(s.min_b_d)),
        ("max_delta_norm".into(), fmt_f64(s.max_delta)),
        ("max_delta_excess".into(), fmt_f64(s.max_delta_excess)),
    ]);
    lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Prints one line per check; `Ok(true)` iff all pass.
pub fn cmd_validate<W: Write>(config_path: &Path, out: &mut W) -> Result<bool> {
    let cfg = ScenarioConfig::load(config_path)?;
    let mut ok = true;
    for c in cfg.checks() {
        ok &= c.passed;
        writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
    }
    Ok(ok)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub summary: Summary,
    pub abort: Option<String>,
}

/// Runs one scenario and writes the output files into `out_dir`, or into
/// the default per-(hash, seed) directory under `out_root`.
pub fn cmd_run(config_path: &Path, seed: Option<u64>, out_dir: Option<&Path>, out_root: &Path) -> Result<RunOutcome> {
    let bytes = std::fs::read(config_path)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| Error::Parse { path: config_path.display().to_string(), message: e.to_string() })?;
    let cfg = ScenarioConfig::from_toml_str(&text, &config_path.display().to_string())?;
    cfg.validate()?;
    let seed = seed.unwrap_or(cfg.seed);
    let hash = config_hash(&bytes);
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => RunManifest::default_dir(out_root, &hash, seed),
    };
    let manifest = RunManifest { config_path: config_path.to_path_buf(), seed, out_dir: dir.clone(), config_hash: hash };

    let log = run_scenario(&cfg, seed)?;
    let summary = Summary::from_log(&log, &cfg.bounds);

    std::fs::create_dir_all(&dir)?;
    let n = cfg.robot.dof();
    write_trajectory(std::io::BufWriter::new(std::fs::File::create(dir.join("trajectory.csv"))?), &log, n)?;
    write_events(std::io::BufWriter::new(std::fs::File::create(dir.join("events.csv"))?), &log)?;
    let mut text_summary = summary_text(&summary);
    if let Some(reason) = &log.abort {
        text_summary.push_str(&format!("abort = {reason}\n"));
    }
    std::fs::write(dir.join("summary.txt"), text_summary)?;
    std::fs::write(dir.join("manifest.txt"), manifest.to_text())?;
    std::fs::write(dir.join("config.toml"), &bytes)?;
    Ok(RunOutcome { manifest, summary, abort: log.abort })
}

/// Parameter grid: dotted config keys mapped to candidate values.
///
/// File format (TOML):
///
/// ```toml
/// [grid]
/// "plant.contact.stiffness" = [100.0, 300.0, 900.0]
/// "plant.current.amplitude" = [0.0, 0.1, 0.2]
/// ```
///
/// Keys must name existing numeric entries (or numeric arrays; a scalar
/// candidate is then broadcast to every element). Combinations are the
/// cartesian product, keys in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grid {
    pub axes: BTreeMap<String, Vec<toml::Value>>,
}

impl Grid {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let parse_err = |message: String| Error::Parse { path: origin.to_string(), message };
        let table: toml::Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let mut axes = BTreeMap::new();
        for (k, v) in &table {
            if k != "grid" {
                return Err(parse_err(format!("unknown top-level key `{k}`")));
            }
            let grid = v.as_table().ok_or_else(|| parse_err("`grid` must be a table".into()))?;
            for (key, values) in grid {
                let values = values.as_array().ok_or_else(|| parse_err(format!("`{key}` needs an array of values")))?;
                for v in values {
                    if !is_numeric(v) {
                        return Err(parse_err(format!("`{key}`: non-numeric candidate {v}")));
                    }
                }
                axes.insert(key.clone(), values.clone());
            }
        }
        Ok(Self { axes })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    /// All combinations; none when the grid has no keys.
    pub fn combinations(&self) -> Vec<Vec<(String, toml::Value)>> {
        if self.axes.is_empty() {
            return Vec::new();
        }
        let mut out: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
        for (k, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((k.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        out
    }
}

fn is_numeric(v: &toml::Value) -> bool {
    match v {
        toml::Value::Integer(_) | toml::Value::Float(_) => true,
        toml::Value::Array(a) => a.iter().all(is_numeric),
        _ => false,
    }
}

fn coerce(existing: &toml::Value, new: &toml::Value, key: &str) -> Result<toml::Value> {
    use toml::Value as V;
    match (existing, new) {
        (V::Float(_), V::Integer(i)) => Ok(V::Float(*i as f64)),
        (V::Float(_), V::Float(_)) | (V::Integer(_), V::Integer(_)) => Ok(new.clone()),
        (V::Array(old), V::Array(items)) if old.len() == items.len() => {
            old.iter().zip(items).map(|(o, n)| coerce(o, n, key)).collect::<Result<Vec<_>>>().map(V::Array)
        }
        (V::Array(old), V::Integer(_) | V::Float(_)) => {
            old.iter().map(|o| coerce(o, new, key)).collect::<Result<Vec<_>>>().map(V::Array)
        }
        _ => Err(Error::Config(format!("`{key}`: cannot replace {existing} with {new}"))),
    }
}

/// Replaces the numeric entry at dotted `key` in `doc`.
pub fn apply_override(doc: &mut toml::Table, key: &str, value: &toml::Value) -> Result<()> {
    let missing = || Error::Config(format!("unknown config key `{key}`"));
    let parts: Vec<&str> = key.split('.').collect();
    let (leaf, path) = parts.split_last().ok_or_else(missing)?;
    let mut table = doc;
    for p in path {
        table = table.get_mut(*p).and_then(|v| v.as_table_mut()).ok_or_else(missing)?;
    }
    let slot = table.get_mut(*leaf).ok_or_else(missing)?;
    if !is_numeric(slot) {
        return Err(Error::Config(format!("`{key}` is not numeric")));
    }
    *slot = coerce(slot, value, key)?;
    Ok(())
}

/// One aggregated sweep row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub params: Vec<(String, toml::Value)>,
    pub runs: usize,
    pub failed_runs: usize,
    pub unsafe_runs: usize,
    /// Violating steps over all steps of the completed runs.
    pub violation_rate: f64,
    pub min_force: f64,
    pub max_force: f64,
    pub max_abs_error: [f64; 6],
    pub kinematic_activations: usize,
    pub energy_activations: usize,
    pub velocity_activations: usize,
    pub infeasible_steps: usize,
    pub contact_lost_steps: usize,
    pub max_delta_excess: f64,
    pub first_error: String,
}

pub fn sweep_header(keys: &[String]) -> Vec<String> {
    let mut h: Vec<String> = keys.to_vec();
    h.extend(["runs", "failed_runs", "unsafe_runs", "violation_rate", "min_f", "max_f"].map(String::from));
    h.extend(CHANNELS.iter().map(|c| format!("max_abs_e_{c}")));
    h.extend(
        [
            "kinematic_activations",
            "energy_activations",
            "velocity_activations",
            "infeasible_steps",
            "contact_lost_steps",
            "max_delta_excess",
            "first_error",
        ]
        .map(String::from),
    );
    h
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::Float(x) => fmt_f64(*x),
        toml::Value::Array(a) => a.iter().map(value_text).collect::<Vec<_>>().join(" "),
        other => other.to_string(),
    }
}

fn run_one(doc: &toml::Table, params: &[(String, toml::Value)], seed: u64) -> Result<(Summary, ScenarioConfig)> {
    let mut doc = doc.clone();
    for (k, v) in params {
        apply_override(&mut doc, k, v)?;
    }
    let cfg: ScenarioConfig = toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let log = run_scenario(&cfg, seed)?;
    let s = Summary::from_log(&log, &cfg.bounds);
    Ok((s, cfg))
}

/// Runs every grid combination for seeds `base, base+1, .., base+seeds-1`
/// (base from the config), concurrently, and aggregates per combination.
pub fn cmd_sweep(config_path: &Path, grid: &Grid, seeds: usize) -> Result<Vec<SweepRow>> {
    let text = std::fs::read_to_string(config_path)?;
    let origin = config_path.display().to_string();
    let doc: toml::Table = toml::from_str(&text).map_err(|e| Error::Parse { path: origin.clone(), message: e.to_string() })?;
    let base = ScenarioConfig::from_toml_str(&text, &origin)?.seed;

    let combos = grid.combinations();
    let jobs: Vec<(usize, u64)> =
        (0..combos.len()).flat_map(|c| (0..seeds as u64).map(move |s| (c, base + s))).collect();
    let results: Vec<(usize, Result<Summary>)> = jobs
        .par_iter()
        .map(|&(c, seed)| (c, run_one(&doc, &combos[c], seed).map(|(s, _)| s)))
        .collect();

    let mut rows: Vec<SweepRow> = combos
        .into_iter()
        .map(|params| SweepRow {
            params,
            runs: 0,
            failed_runs: 0,
            unsafe_runs: 0,
            violation_rate: 0.0,
            min_force: f64::INFINITY,
            max_force: f64::NEG_INFINITY,
            max_abs_error: [0.0; 6],
            kinematic_activations: 0,
            energy_activations: 0,
            velocity_activations: 0,
            infeasible_steps: 0,
            contact_lost_steps: 0,
            max_delta_excess: f64::NEG_INFINITY,
            first_error: String::new(),
        })
        .collect();
    let mut steps = vec![0usize; rows.len()];
    let mut violations = vec![0usize; rows.len()];
    for (c, r) in results {
        let row = &mut rows[c];
        row.runs += 1;
        match r {
            Ok(s) => {
                row.unsafe_runs += !s.is_safe() as usize;
                steps[c] += s.steps;
                violations[c] += s.violations;
                row.min_force = row.min_force.min(s.min_force);
                row.max_force = row.max_force.max(s.max_force);
                for i in 0..6 {
                    row.max_abs_error[i] = row.max_abs_error[i].max(s.max_error[i].abs()).max(s.min_error[i].abs());
                }
                row.kinematic_activations += s.kinematic_active.iter().sum::<usize>();
                row.energy_activations += s.energy_active;
                row.velocity_activations += s.velocity_active;
                row.infeasible_steps += s.infeasible;
                row.contact_lost_steps += s.contact_lost;
                row.max_delta_excess = row.max_delta_excess.max(s.max_delta_excess);
            }
            Err(e) => {
                row.failed_runs += 1;
                if row.first_error.is_empty() {
                    row.first_error = e.to_string();
                }
            }
        }
    }
    for (c, row) in rows.iter_mut().enumerate() {
        row.violation_rate = if steps[c] > 0 { violations[c] as f64 / steps[c] as f64 } else { f64::NAN };
    }
    Ok(rows)
}

pub fn write_sweep<W: Write>(w: W, grid: &Grid, rows: &[SweepRow]) -> Result<()> {
    let keys: Vec<String> = grid.axes.keys().cloned().collect();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(sweep_header(&keys)).map_err(csv_error)?;
    for r in rows {
        let mut rec: Vec<String> = r.params.iter().map(|(_, v)| value_text(v)).collect();
        rec.extend([r.runs, r.failed_runs, r.unsafe_runs].map(|x| x.to_string()));
        rec.extend([r.violation_rate, r.min_force, r.max_force].map(fmt_f64));
        rec.extend(r.max_abs_error.map(fmt_f64));
        rec.extend(
            [r.kinematic_activations, r.energy_activations, r.velocity_activations, r.infeasible_steps, r.contact_lost_steps]
                .map(|x| x.to_string()),
        );
        rec.push(fmt_f64(r.max_delta_excess));
        rec.push(r.first_error.clone());
        out.write_record(&rec).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}
