//! Flat text formats for windows, features and normalization statistics.
//!
//! Every matrix file starts with one `# key=value,key=value` header line
//! followed by plain CSV rows. Floats are written in shortest round-trip
//! form, so reading a file back reproduces the values bit for bit.
//!
//! | file             | header keys                                              | rows                                   |
//! |------------------|----------------------------------------------------------|----------------------------------------|
//! | window           | `T, n_c, sample_rate, activity, subject, room, member`   | `timestamp, re_0, im_0, …`             |
//! | bounded feature  | `frames, bins, norm_stats_id`                            | one row per frame                      |
//! | released feature | as above plus `mode, partition, seed_id, sigma`          | one row per frame                      |
//! | norm stats       | (none)                                                   | two rows: per-bin min, per-bin max     |
//! | grid             | `frames, bins, kind`                                     | one row per frame                      |
//!
//! Window files may also carry `resp_rate_hz, resp_phase, resp_depth` when
//! the respiration component is enabled. The `sigma` value is a
//! `;`-separated list with one entry per block.

use num_complex::Complex64;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mechanism::{MechanismMode, NoisyFeature};
use crate::signal::{CsiWindow, Respiration, WindowLabels};
use crate::spectrogram::{BoundedFeature, NormStats};
use crate::Shape;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn header_line(pairs: &[(&str, String)]) -> String {
    let body: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("# {}\n", body.join(","))
}

struct Header {
    path: PathBuf,
    fields: BTreeMap<String, String>,
}

impl Header {
    fn parse(path: &Path, line: Option<&str>) -> Result<Self> {
        let line = line.ok_or_else(|| Error::parse(path, "empty file"))?;
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| Error::parse(path, "missing '#' header line"))?;
        let mut fields = BTreeMap::new();
        for part in body.trim().split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::parse(path, format!("bad header field {part:?}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self {
            path: path.to_path_buf(),
            fields,
        })
    }

    fn str(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::parse(&self.path, format!("header is missing {key}")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.str(key)?;
        v.parse()
            .map_err(|_| Error::parse(&self.path, format!("bad value for {key}: {v:?}")))
    }

    fn opt_num<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        if self.fields.contains_key(key) {
            self.num(key).map(Some)
        } else {
            Ok(None)
        }
    }
}

fn parse_row(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(path, format!("line {line_no}: bad number {v:?}")))
        })
        .collect()
}

fn join(values: &[f64], sep: &str) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push_str(sep);
        }
        write!(s, "{v}").unwrap();
    }
    s
}

fn matrix_body(values: &[f64], cols: usize) -> String {
    let mut s = String::with_capacity(values.len() * 12);
    for row in values.chunks(cols) {
        s.push_str(&join(row, ","));
        s.push('\n');
    }
    s
}

fn read_matrix(path: &Path, lines: std::str::Lines<'_>, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(rows * cols);
    let mut n = 0;
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = parse_row(path, i + 2, line)?;
        if row.len() != cols {
            return Err(Error::parse(
                path,
                format!("line {}: expected {cols} values, got {}", i + 2, row.len()),
            ));
        }
        values.extend(row);
        n += 1;
    }
    if n != rows {
        return Err(Error::parse(path, format!("expected {rows} rows, got {n}")));
    }
    Ok(values)
}

pub fn window_to_string(w: &CsiWindow) -> String {
    let l = &w.labels;
    let mut pairs = vec![
        ("T", w.len().to_string()),
        ("n_c", w.num_subcarriers.to_string()),
        ("sample_rate", w.sample_rate.to_string()),
        ("activity", l.activity.to_string()),
        ("subject", l.subject.to_string()),
        ("room", l.room.to_string()),
        ("member", u8::from(l.member).to_string()),
    ];
    if let Some(r) = &w.respiration {
        pairs.push(("resp_rate_hz", r.rate_hz.to_string()));
        pairs.push(("resp_phase", r.phase.to_string()));
        pairs.push(("resp_depth", r.depth.to_string()));
    }
    let mut s = header_line(&pairs);
    let mut row = Vec::with_capacity(1 + 2 * w.num_subcarriers);
    for i in 0..w.len() {
        row.clear();
        row.push(w.timestamps[i]);
        for z in w.row(i) {
            row.push(z.re);
            row.push(z.im);
        }
        s.push_str(&join(&row, ","));
        s.push('\n');
    }
    s
}

pub fn window_from_str(path: &Path, text: &str) -> Result<CsiWindow> {
    let mut lines = text.lines();
    let h = Header::parse(path, lines.next())?;
    let t: usize = h.num("T")?;
    let n_c: usize = h.num("n_c")?;
    let labels = WindowLabels {
        activity: h.num("activity")?,
        subject: h.num("subject")?,
        room: h.num("room")?,
        member: h.num::<u8>("member")? != 0,
    };
    let flat = read_matrix(path, lines, t, 1 + 2 * n_c)?;
    let mut timestamps = Vec::with_capacity(t);
    let mut samples = Vec::with_capacity(t * n_c);
    for row in flat.chunks_exact(1 + 2 * n_c) {
        timestamps.push(row[0]);
        for c in 0..n_c {
            samples.push(Complex64::new(row[1 + 2 * c], row[2 + 2 * c]));
        }
    }
    let mut w = CsiWindow::new(samples, timestamps, n_c, h.num("sample_rate")?, labels)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    if let Some(rate_hz) = h.opt_num("resp_rate_hz")? {
        w.respiration = Some(Respiration {
            rate_hz,
            phase: h.num("resp_phase")?,
            depth: h.num("resp_depth")?,
        });
    }
    Ok(w)
}

pub fn write_window(path: &Path, w: &CsiWindow) -> Result<()> {
    write(path, &window_to_string(w))
}

pub fn read_window(path: &Path) -> Result<CsiWindow> {
    window_from_str(path, &read(path)?)
}

pub fn feature_to_string(x: &BoundedFeature) -> String {
    let mut s = header_line(&[
        ("frames", x.shape.frames.to_string()),
        ("bins", x.shape.bins.to_string()),
        ("norm_stats_id", x.norm_stats_id.clone()),
    ]);
    s.push_str(&matrix_body(&x.values, x.shape.bins));
    s
}

pub fn feature_from_str(path: &Path, text: &str) -> Result<BoundedFeature> {
    let mut lines = text.lines();
    let h = Header::parse(path, lines.next())?;
    let shape = Shape::new(h.num("frames")?, h.num("bins")?);
    let values = read_matrix(path, lines, shape.frames, shape.bins)?;
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::parse(path, "bounded feature has values outside [0, 1]"));
    }
    Ok(BoundedFeature {
        shape,
        values,
        norm_stats_id: h.str("norm_stats_id")?.to_string(),
    })
}

pub fn write_feature(path: &Path, x: &BoundedFeature) -> Result<()> {
    write(path, &feature_to_string(x))
}

pub fn read_feature(path: &Path) -> Result<BoundedFeature> {
    feature_from_str(path, &read(path)?)
}

pub fn noisy_to_string(x: &NoisyFeature) -> String {
    let mut s = header_line(&[
        ("frames", x.shape.frames.to_string()),
        ("bins", x.shape.bins.to_string()),
        ("norm_stats_id", x.norm_stats_id.clone()),
        ("mode", x.mode.to_string()),
        ("partition", x.partition_id.clone()),
        ("seed_id", x.rng_seed_id.clone()),
        ("sigma", join(&x.sigma_per_block, ";")),
    ]);
    s.push_str(&matrix_body(&x.values, x.shape.bins));
    s
}

pub fn noisy_from_str(path: &Path, text: &str) -> Result<NoisyFeature> {
    let mut lines = text.lines();
    let h = Header::parse(path, lines.next())?;
    let shape = Shape::new(h.num("frames")?, h.num("bins")?);
    let sigma_per_block = h
        .str("sigma")?
        .split(';')
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::parse(path, "bad sigma list"))?;
    let mode: MechanismMode = h.str("mode")?.parse().map_err(|e: Error| Error::parse(path, e.to_string()))?;
    let values = read_matrix(path, lines, shape.frames, shape.bins)?;
    Ok(NoisyFeature {
        shape,
        values,
        sigma_per_block,
        partition_id: h.str("partition")?.to_string(),
        mode,
        rng_seed_id: h.str("seed_id")?.to_string(),
        norm_stats_id: h.str("norm_stats_id")?.to_string(),
    })
}

pub fn write_noisy(path: &Path, x: &NoisyFeature) -> Result<()> {
    write(path, &noisy_to_string(x))
}

pub fn read_noisy(path: &Path) -> Result<NoisyFeature> {
    noisy_from_str(path, &read(path)?)
}

pub fn norm_stats_to_string(s: &NormStats) -> String {
    format!("{}\n{}\n", join(&s.min, ","), join(&s.max, ","))
}

pub fn norm_stats_from_str(path: &Path, text: &str) -> Result<NormStats> {
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != 2 {
        return Err(Error::parse(path, format!("expected 2 rows, got {}", rows.len())));
    }
    let min = parse_row(path, 1, rows[0])?;
    let max = parse_row(path, 2, rows[1])?;
    if min.len() != max.len() || min.iter().zip(&max).any(|(a, b)| a > b) {
        return Err(Error::parse(path, "min and max rows disagree"));
    }
    Ok(NormStats { min, max })
}

pub fn write_norm_stats(path: &Path, s: &NormStats) -> Result<()> {
    write(path, &norm_stats_to_string(s))
}

pub fn read_norm_stats(path: &Path) -> Result<NormStats> {
    norm_stats_from_str(path, &read(path)?)
}

/// A named per-cell matrix: an importance map, the public feature mean or
/// the published per-cell noise scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub kind: String,
    pub shape: Shape,
    pub values: Vec<f64>,
}

pub fn grid_to_string(g: &Grid) -> String {
    let mut s = header_line(&[
        ("frames", g.shape.frames.to_string()),
        ("bins", g.shape.bins.to_string()),
        ("kind", g.kind.clone()),
    ]);
    s.push_str(&matrix_body(&g.values, g.shape.bins));
    s
}

pub fn grid_from_str(path: &Path, text: &str) -> Result<Grid> {
    let mut lines = text.lines();
    let h = Header::parse(path, lines.next())?;
    let shape = Shape::new(h.num("frames")?, h.num("bins")?);
    Ok(Grid {
        kind: h.str("kind")?.to_string(),
        shape,
        values: read_matrix(path, lines, shape.frames, shape.bins)?,
    })
}

pub fn write_grid(path: &Path, g: &Grid) -> Result<()> {
    write(path, &grid_to_string(g))
}

/// Read a grid and check its kind.
pub fn read_grid(path: &Path, kind: &str) -> Result<Grid> {
    let g = grid_from_str(path, &read(path)?)?;
    if g.kind != kind {
        return Err(Error::parse(path, format!("expected a {kind} grid, found {}", g.kind)));
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    /// Held by the attacker, never released by the producer.
    Attacker,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Attacker => "attacker",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "attacker" => Ok(Split::Attacker),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub file: String,
    pub labels: WindowLabels,
    pub split: Split,
}

const MANIFEST_COLUMNS: &str = "file,activity,subject,room,member,split";

pub fn write_window_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut s = format!("{MANIFEST_COLUMNS}\n");
    for e in entries {
        let l = &e.labels;
        writeln!(
            s,
            "{},{},{},{},{},{}",
            e.file,
            l.activity,
            l.subject,
            l.room,
            u8::from(l.member),
            e.split.as_str()
        )
        .unwrap();
    }
    write(path, &s)
}

pub fn read_window_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = read(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MANIFEST_COLUMNS) {
        return Err(Error::parse(path, format!("expected header {MANIFEST_COLUMNS}")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |what: &str| Error::parse(path, format!("line {}: {what}", i + 2));
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad label"));
        out.push(ManifestEntry {
            file: f[0].to_string(),
            labels: WindowLabels {
                activity: num(f[1])?,
                subject: num(f[2])?,
                room: num(f[3])?,
                member: num(f[4])? != 0,
            },
            split: f[5].parse().map_err(|_| bad("bad split"))?,
        });
    }
    Ok(out)
}
