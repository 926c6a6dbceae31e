//! Input files, CSV matrices and atomic output.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mixedergo::ergodicity::Layout;
use mixedergo::{GlmmDesign, PriorSpec};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Anything that makes the inputs or outputs unusable. Always exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub type CliResult<T> = Result<T, InputError>;

pub fn input_err(msg: impl Into<String>) -> InputError {
    InputError(msg.into())
}

impl From<mixedergo::Error> for InputError {
    fn from(e: mixedergo::Error) -> Self {
        InputError(e.to_string())
    }
}

impl From<serde_json::Error> for InputError {
    fn from(e: serde_json::Error) -> Self {
        InputError(format!("JSON: {e}"))
    }
}

fn with_path<E: fmt::Display>(path: &Path) -> impl FnOnce(E) -> InputError + '_ {
    move |e| InputError(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayoutHint {
    Oneway { group_sizes: Vec<usize> },
    Twoway { m: usize, n: usize },
}

impl LayoutHint {
    pub fn to_layout(&self) -> Layout {
        match self {
            LayoutHint::Oneway { group_sizes } => Layout::OneWay { group_sizes: group_sizes.clone() },
            LayoutHint::Twoway { m, n } => Layout::TwoWay { m: *m, n: *n },
        }
    }
}

/// Design manifest: headerless numeric CSV files, paths relative to the
/// manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub y: PathBuf,
    pub x: PathBuf,
    pub z_blocks: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<LayoutHint>,
}

pub struct LoadedDesign {
    pub design: GlmmDesign,
    pub layout: Option<Layout>,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(with_path(path))?;
    serde_json::from_str(&text).map_err(with_path(path))
}

pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(with_path(path))?;
    let mut values = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(with_path(path))?;
        if ncols.is_some_and(|c| c != rec.len()) {
            return Err(input_err(format!("{}: row {} has {} fields, expected {}", path.display(), i + 1, rec.len(), ncols.unwrap())));
        }
        ncols = Some(rec.len());
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| input_err(format!("{}: row {}, column {}: {field:?} is not a number", path.display(), i + 1, j + 1)))?;
            values.push(v);
        }
        nrows += 1;
    }
    let ncols = ncols.ok_or_else(|| input_err(format!("{}: no rows", path.display())))?;
    Ok(DMatrix::from_row_slice(nrows, ncols, &values))
}

/// A single column or a single row.
pub fn read_vector(path: &Path) -> CliResult<DVector<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() == 1 {
        Ok(m.column(0).into_owned())
    } else if m.nrows() == 1 {
        Ok(m.row(0).transpose())
    } else {
        Err(input_err(format!("{}: expected a single row or column, got {}×{}", path.display(), m.nrows(), m.ncols())))
    }
}

pub fn load_design(manifest_path: &Path) -> CliResult<LoadedDesign> {
    let manifest: Manifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let y = read_vector(&base.join(&manifest.y))?;
    let x = read_matrix(&base.join(&manifest.x))?;
    let z_blocks = manifest
        .z_blocks
        .iter()
        .map(|p| read_matrix(&base.join(p)))
        .collect::<CliResult<Vec<_>>>()?;
    let design = GlmmDesign::new(y, x, z_blocks).map_err(with_path(manifest_path))?;
    Ok(LoadedDesign { design, layout: manifest.layout.as_ref().map(LayoutHint::to_layout) })
}

/// Prior file: {"a_e", "b_e", "a", "b"}, every field required.
pub fn load_prior(path: &Path) -> CliResult<PriorSpec> {
    let p: PriorSpec = read_json(path)?;
    PriorSpec::new(p.a_e, p.b_e, p.a, p.b).map_err(with_path(path))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(with_path(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(with_path(dir))?;
    tmp.write_all(bytes).map_err(with_path(path))?;
    tmp.as_file().sync_all().map_err(with_path(path))?;
    tmp.persist(path).map_err(|e| input_err(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Reads a draws CSV into columns.
pub fn read_columns(path: &Path, n_cols: usize) -> CliResult<Vec<Vec<f64>>> {
    let m = read_matrix(path)?;
    if m.ncols() != n_cols {
        return Err(input_err(format!("{}: {} columns, sidecar names {n_cols}", path.display(), m.ncols())));
    }
    Ok((0..n_cols).map(|j| m.column(j).iter().copied().collect()).collect())
}
