//! File formats.
//!
//! * Sparse matrices: MatrixMarket coordinate, 1-based indices.
//! * Dense matrices: CSV, one row per line, optional header row.
//! * Models: a line-oriented text container (see [`write_model`]).
//! * Evaluation splits: a line-oriented text file (see [`write_split`]).
//! * Manifests and hyperparameter overrides: flat `key = value` files.
//!
//! Every reader rejects NaN and infinite values and reports the offending
//! line. Every writer goes through a temporary file and a rename, so a
//! reader never sees a partial file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalSplit;
use crate::sparse::SparseMatrix;
use crate::types::{FactorModel, FeatureMatrix, Hyperparams, TaggingMatrix};

pub const MODEL_VERSIONS: &[u32] = &[1];
pub const SPLIT_VERSIONS: &[u32] = &[1];
pub const MANIFEST_VERSIONS: &[u32] = &[1];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Shortest text that parses back to exactly `x`.
pub fn format_f64(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn parse_f64(tok: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

fn parse_usize(tok: &str, path: &Path, line: usize) -> Result<usize> {
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("not a non-negative integer: {tok:?}")))
}

/// Writes `path` atomically through a sibling temporary file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(path))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))?;
    }
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

/// Numbered, newline-trimmed lines of a file.
fn numbered_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    open(path)?
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(io_err(path)))
        .collect()
}

// ---------------------------------------------------------------------------
// MatrixMarket

pub fn read_sparse_matrix(path: &Path) -> Result<SparseMatrix> {
    let lines = numbered_lines(path)?;
    let mut it = lines.iter();
    let (hline, header) = it.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let fields: Vec<String> = header.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" || fields[2] != "coordinate" {
        return Err(parse_err(
            path,
            *hline,
            "expected header '%%MatrixMarket matrix coordinate real general'",
        ));
    }
    let pattern = match fields[3].as_str() {
        "real" | "integer" => false,
        "pattern" => true,
        other => return Err(parse_err(path, *hline, format!("unsupported field type {other:?}"))),
    };
    if fields[4] != "general" {
        return Err(parse_err(path, *hline, format!("unsupported symmetry {:?}", fields[4])));
    }

    let mut body = it.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (sline, size) = body
        .next()
        .ok_or_else(|| parse_err(path, *hline + 1, "missing size line"))?;
    let dims: Vec<&str> = size.split_whitespace().collect();
    if dims.len() != 3 {
        return Err(parse_err(path, *sline, "size line must be 'rows cols entries'"));
    }
    let n_rows = parse_usize(dims[0], path, *sline)?;
    let n_cols = parse_usize(dims[1], path, *sline)?;
    let nnz = parse_usize(dims[2], path, *sline)?;

    let mut trips = Vec::with_capacity(nnz);
    let mut last_line = *sline;
    for (ln, line) in body {
        last_line = *ln;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let want = if pattern { 2 } else { 3 };
        if toks.len() != want {
            return Err(parse_err(path, *ln, format!("expected {want} fields, found {}", toks.len())));
        }
        let r = parse_usize(toks[0], path, *ln)?;
        let c = parse_usize(toks[1], path, *ln)?;
        if r == 0 || c == 0 || r > n_rows || c > n_cols {
            return Err(parse_err(
                path,
                *ln,
                format!("index ({r}, {c}) outside 1..={n_rows} x 1..={n_cols}"),
            ));
        }
        let v = if pattern { 1.0 } else { parse_f64(toks[2], path, *ln)? };
        trips.push((r - 1, c - 1, v));
        if trips.len() > nnz {
            return Err(parse_err(path, *ln, format!("more than the declared {nnz} entries")));
        }
    }
    if trips.len() != nnz {
        return Err(parse_err(
            path,
            last_line,
            format!("declared {nnz} entries, found {}", trips.len()),
        ));
    }
    SparseMatrix::from_triplets(n_rows, n_cols, trips)
}

pub fn write_sparse_matrix(path: &Path, m: &SparseMatrix) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", m.n_rows(), m.n_cols(), m.nnz())?;
        for (r, c, v) in m.iter() {
            writeln!(w, "{} {} {}", r + 1, c + 1, format_f64(v))?;
        }
        Ok(())
    })
}

pub fn read_tagging_matrix(path: &Path) -> Result<TaggingMatrix> {
    TaggingMatrix::from_sparse(read_sparse_matrix(path)?)
}

// ---------------------------------------------------------------------------
// CSV

pub fn read_dense_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|t| t.parse::<f64>()).collect();
        let vals = match parsed {
            Ok(v) => v,
            // a non-numeric first record is a header
            Err(_) if i == 0 => continue,
            Err(_) => {
                let bad = rec.iter().find(|t| t.parse::<f64>().is_err()).unwrap_or_default();
                return Err(parse_err(path, line, format!("not a number: {bad:?}")));
            }
        };
        if let Some(pos) = vals.iter().position(|v| !v.is_finite()) {
            return Err(parse_err(path, line, format!("non-finite value in column {}", pos + 1)));
        }
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(parse_err(path, line, format!("ragged row: {} fields, expected {w}", vals.len())));
            }
            _ => {}
        }
        rows.push(vals);
    }
    let width = width.ok_or_else(|| parse_err(path, 1, "no data rows"))?;
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), width), flat).expect("rows checked rectangular"))
}

pub fn write_dense_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    write_atomic(path, |w| {
        for row in m.rows() {
            let line: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    })
}

pub fn read_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    FeatureMatrix::new(read_dense_matrix(path)?)
}

/// Reads a score matrix from `.mtx` (MatrixMarket) or CSV, by extension.
pub fn read_scores(path: &Path) -> Result<Array2<f64>> {
    if path.extension().is_some_and(|e| e == "mtx") {
        Ok(read_sparse_matrix(path)?.to_dense())
    } else {
        read_dense_matrix(path)
    }
}

// ---------------------------------------------------------------------------
// Model container

/// Everything persisted after a completion run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: FactorModel,
    pub hyperparams: Hyperparams,
    pub trace: Vec<f64>,
}

/// Layout:
///
/// ```text
/// %%TagCompleteModel 1
/// dims N M K
/// hyperparams <lines>
/// <key = value lines>
/// trace <len>
/// <one value per line>
/// U
/// <N lines of K values>
/// V <nnz>
/// <row col value>        (0-based)
/// E <nnz>
/// <row col value>
/// end
/// ```
pub fn write_model(path: &Path, file: &ModelFile) -> Result<()> {
    let hp = toml::to_string(&file.hyperparams).map_err(|e| Error::invalid(e.to_string()))?;
    let hp_lines: Vec<&str> = hp.lines().collect();
    let model = &file.model;
    write_atomic(path, |w| {
        writeln!(w, "%%TagCompleteModel 1")?;
        writeln!(w, "dims {} {} {}", model.n_images(), model.n_tags(), model.n_basis())?;
        writeln!(w, "hyperparams {}", hp_lines.len())?;
        for l in &hp_lines {
            writeln!(w, "{l}")?;
        }
        writeln!(w, "trace {}", file.trace.len())?;
        for &t in &file.trace {
            writeln!(w, "{}", format_f64(t))?;
        }
        writeln!(w, "U")?;
        for row in model.u.rows() {
            let line: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        for (name, m) in [("V", &model.v), ("E", &model.e)] {
            let nz: Vec<_> = m.indexed_iter().filter(|(_, v)| **v != 0.0).collect();
            writeln!(w, "{name} {}", nz.len())?;
            for ((r, c), v) in nz {
                writeln!(w, "{r} {c} {}", format_f64(*v))?;
            }
        }
        writeln!(w, "end")?;
        Ok(())
    })
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::vec::IntoIter<(usize, String)>,
    last: usize,
}

impl Lines<'_> {
    fn next(&mut self, what: &str) -> Result<String> {
        match self.inner.next() {
            Some((n, l)) => {
                self.last = n;
                Ok(l)
            }
            None => Err(parse_err(self.path, self.last + 1, format!("truncated file: expected {what}"))),
        }
    }

    /// Reads a `<keyword> <numbers...>` line.
    fn keyed(&mut self, keyword: &str, n_args: usize) -> Result<Vec<usize>> {
        let line = self.next(keyword)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.first() != Some(&keyword) || toks.len() != n_args + 1 {
            return Err(self.err(format!("expected '{keyword}' line with {n_args} value(s)")));
        }
        toks[1..].iter().map(|t| parse_usize(t, self.path, self.last)).collect()
    }

    fn err(&self, message: impl Into<String>) -> Error {
        parse_err(self.path, self.last, message)
    }
}

fn read_version(lines: &mut Lines, magic: &str, supported: &'static [u32]) -> Result<()> {
    let header = lines.next("header")?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 2 || toks[0] != magic {
        return Err(lines.err(format!("expected '{magic} <version>' header")));
    }
    let found: u32 = toks[1].parse().map_err(|_| lines.err("bad version number"))?;
    if !supported.contains(&found) {
        return Err(Error::UnsupportedVersion { found, supported });
    }
    Ok(())
}

fn read_coords(lines: &mut Lines, name: &str, shape: (usize, usize)) -> Result<Array2<f64>> {
    let nnz = lines.keyed(name, 1)?[0];
    let mut out = Array2::zeros(shape);
    for _ in 0..nnz {
        let line = lines.next(&format!("{name} entry"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(lines.err(format!("{name} entry must be 'row col value'")));
        }
        let r = parse_usize(toks[0], lines.path, lines.last)?;
        let c = parse_usize(toks[1], lines.path, lines.last)?;
        if r >= shape.0 || c >= shape.1 {
            return Err(lines.err(format!("{name} index ({r}, {c}) outside {shape:?}")));
        }
        out[[r, c]] = parse_f64(toks[2], lines.path, lines.last)?;
    }
    Ok(out)
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let mut lines = Lines {
        path,
        inner: numbered_lines(path)?.into_iter(),
        last: 0,
    };
    read_version(&mut lines, "%%TagCompleteModel", MODEL_VERSIONS)?;
    let dims = lines.keyed("dims", 3)?;
    let (n, m, k) = (dims[0], dims[1], dims[2]);

    let hp_count = lines.keyed("hyperparams", 1)?[0];
    let mut hp_text = String::new();
    for _ in 0..hp_count {
        hp_text.push_str(&lines.next("hyperparameter line")?);
        hp_text.push('\n');
    }
    let hyperparams: Hyperparams = toml::from_str(&hp_text).map_err(|e| lines.err(e.to_string()))?;

    let trace_len = lines.keyed("trace", 1)?[0];
    let mut trace = Vec::with_capacity(trace_len);
    for _ in 0..trace_len {
        let l = lines.next("trace value")?;
        trace.push(parse_f64(l.trim(), path, lines.last)?);
    }

    lines.keyed("U", 0)?;
    let mut u = Array2::zeros((n, k));
    for r in 0..n {
        let l = lines.next("U row")?;
        let vals: Vec<&str> = l.split_whitespace().collect();
        if vals.len() != k {
            return Err(lines.err(format!("U row has {} values, expected {k}", vals.len())));
        }
        for (c, tok) in vals.iter().enumerate() {
            u[[r, c]] = parse_f64(tok, path, lines.last)?;
        }
    }
    let v = read_coords(&mut lines, "V", (k, m))?;
    let e = read_coords(&mut lines, "E", (n, m))?;
    if lines.next("end marker")?.trim() != "end" {
        return Err(lines.err("expected 'end'"));
    }
    Ok(ModelFile {
        model: FactorModel::new(u, v, e)?,
        hyperparams,
        trace,
    })
}

// ---------------------------------------------------------------------------
// Evaluation splits

/// Layout:
///
/// ```text
/// %%TagSplit 1
/// N M
/// <image> <observed tags...> | <deleted tags...>     (N lines, 0-based)
/// test <count>
/// <test image ids, space separated>
/// ```
pub fn write_split(path: &Path, split: &EvalSplit) -> Result<()> {
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    write_atomic(path, |w| {
        writeln!(w, "%%TagSplit 1")?;
        writeln!(w, "{} {}", split.n_images(), split.n_tags())?;
        for img in 0..split.n_images() {
            let obs = join(split.observed().tags_of(img));
            let del = join(split.deleted(img));
            writeln!(w, "{img} {obs} | {del}")?;
        }
        writeln!(w, "test {}", split.test_images().len())?;
        writeln!(w, "{}", join(split.test_images()))?;
        Ok(())
    })
}

pub fn read_split(path: &Path) -> Result<EvalSplit> {
    let mut lines = Lines {
        path,
        inner: numbered_lines(path)?.into_iter(),
        last: 0,
    };
    read_version(&mut lines, "%%TagSplit", SPLIT_VERSIONS)?;
    let dims_line = lines.next("dimensions")?;
    let dims: Vec<usize> = dims_line
        .split_whitespace()
        .map(|t| parse_usize(t, path, lines.last))
        .collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(lines.err("dimension line must be 'N M'"));
    }
    let (n, m) = (dims[0], dims[1]);
    let mut pairs = Vec::new();
    let mut deleted = Vec::with_capacity(n);
    for img in 0..n {
        let line = lines.next("image line")?;
        let (left, right) = line
            .split_once('|')
            .ok_or_else(|| lines.err("image line needs '|' between observed and deleted tags"))?;
        let mut left = left.split_whitespace();
        let id = parse_usize(left.next().unwrap_or(""), path, lines.last)?;
        if id != img {
            return Err(lines.err(format!("expected image {img}, found {id}")));
        }
        for t in left {
            let j = parse_usize(t, path, lines.last)?;
            if j >= m {
                return Err(lines.err(format!("tag {j} out of range ({m} tags)")));
            }
            pairs.push((img, j));
        }
        deleted.push(
            right
                .split_whitespace()
                .map(|t| parse_usize(t, path, lines.last))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let count = lines.keyed("test", 1)?[0];
    let ids_line = if count > 0 { lines.next("test image ids")? } else { String::new() };
    let test: Vec<usize> = ids_line
        .split_whitespace()
        .map(|t| parse_usize(t, path, lines.last))
        .collect::<Result<_>>()?;
    if test.len() != count {
        return Err(lines.err(format!("declared {count} test images, found {}", test.len())));
    }
    let observed = TaggingMatrix::from_pairs(n, m, pairs)?;
    EvalSplit::new(observed, deleted, test).map_err(|e| lines.err(e.to_string()))
}

// ---------------------------------------------------------------------------
// Manifest and overrides

/// Applies `overrides` on top of `base`; `K` is accepted for `n_basis`.
pub fn merge_hyperparams(base: &Hyperparams, overrides: toml::Table) -> std::result::Result<Hyperparams, String> {
    let mut merged = toml::Table::try_from(base).map_err(|e| e.to_string())?;
    for (k, v) in overrides {
        let key = if k == "K" { "n_basis".to_string() } else { k };
        merged.insert(key, v);
    }
    merged.try_into().map_err(|e: toml::de::Error| e.to_string())
}

/// Applies a flat `key = value` file on top of `base`.
pub fn read_hyperparams(path: &Path, base: &Hyperparams) -> Result<Hyperparams> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let overrides: toml::Table = toml::from_str(&text).map_err(|e| parse_err(path, 0, e.to_string()))?;
    let hp = merge_hyperparams(base, overrides).map_err(|m| parse_err(path, 0, m))?;
    hp.validate()?;
    Ok(hp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub tags: PathBuf,
    pub features: Option<PathBuf>,
    pub s: Option<PathBuf>,
    pub t: Option<PathBuf>,
    pub hyperparams: Option<PathBuf>,
}

/// The parsed contents of everything a manifest references.
#[derive(Debug, Clone)]
pub struct ManifestInputs {
    pub tags: TaggingMatrix,
    pub features: Option<FeatureMatrix>,
    pub s: Option<SparseMatrix>,
    pub t: Option<SparseMatrix>,
    pub hyperparams: Hyperparams,
}

impl Manifest {
    /// Reads a manifest; relative paths are resolved against its directory.
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut m: Manifest = toml::from_str(&text).map_err(|e| parse_err(path, 0, e.to_string()))?;
        if !MANIFEST_VERSIONS.contains(&m.version) {
            return Err(Error::UnsupportedVersion {
                found: m.version,
                supported: MANIFEST_VERSIONS,
            });
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut m.tags);
        for p in [&mut m.features, &mut m.s, &mut m.t, &mut m.hyperparams].into_iter().flatten() {
            resolve(p);
        }
        Ok(m)
    }

    /// Parses every referenced file.
    pub fn load(&self) -> Result<ManifestInputs> {
        Ok(ManifestInputs {
            tags: read_tagging_matrix(&self.tags)?,
            features: self.features.as_deref().map(read_feature_matrix).transpose()?,
            s: self.s.as_deref().map(read_sparse_matrix).transpose()?,
            t: self.t.as_deref().map(read_sparse_matrix).transpose()?,
            hyperparams: match &self.hyperparams {
                Some(p) => read_hyperparams(p, &Hyperparams::default())?,
                None => Hyperparams::default(),
            },
        })
    }
}
