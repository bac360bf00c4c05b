//! Plain-text readers and writers for the on-disk artifacts: dense tensors,
//! Kruskal models, sparse observation sets, multitask datasets, and fit
//! traces. All indices are 1-based on disk; floats are printed with Rust's
//! shortest round-trip formatting, so write → read is lossless and rerunning
//! a deterministic pipeline reproduces files byte for byte.
//!
//! Every reader reports failures with the offending line number. Blank lines
//! and lines starting with `#` are ignored everywhere.

use crate::completion::SparseObservations;
use crate::mat::Mat;
use crate::mlmtl::{Task, TaskSet};
use crate::solver::FitTrace;
use crate::tensor::{DenseTensor, KruskalModel, RankOneAtom};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// Structurally valid input describing a problem with no content to work
    /// on (e.g. an observation file with zero observations). Kept apart from
    /// `Parse` so callers can report degenerate data distinctly from malformed
    /// data.
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

fn parse_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Line-oriented scanner that skips blanks and `#` comments while keeping
/// track of 1-based line numbers for error reporting.
struct Scanner<R: BufRead> {
    input: R,
    line: usize,
}

impl<R: BufRead> Scanner<R> {
    fn new(input: R) -> Self {
        Scanner { input, line: 0 }
    }

    /// Next non-blank, non-comment line with its line number, or `None` at
    /// end of input.
    fn next_content(&mut self) -> Result<Option<(usize, String)>, FormatError> {
        loop {
            let mut buf = String::new();
            if self.input.read_line(&mut buf)? == 0 {
                return Ok(None);
            }
            self.line += 1;
            let trimmed = buf.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Ok(Some((self.line, trimmed.to_string())));
        }
    }

    fn require_content(&mut self, what: &str) -> Result<(usize, String), FormatError> {
        let at = self.line + 1;
        self.next_content()?
            .ok_or_else(|| parse_err(at, format!("unexpected end of file, expected {what}")))
    }
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize, FormatError> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("{what}: `{tok}` is not a nonnegative integer")))
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64, FormatError> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("{what}: `{tok}` is not a number")))
}

fn expect_tokens<'a>(
    line_text: &'a str,
    line: usize,
    n: usize,
    what: &str,
) -> Result<Vec<&'a str>, FormatError> {
    let toks: Vec<&str> = line_text.split_whitespace().collect();
    if toks.len() != n {
        return Err(parse_err(
            line,
            format!("expected {n} field(s) for {what}, found {}", toks.len()),
        ));
    }
    Ok(toks)
}

/// 1-based index from disk → 0-based, bounds-checked against its dimension.
fn parse_index(tok: &str, line: usize, mode: usize, dim: usize) -> Result<usize, FormatError> {
    let i = parse_usize(tok, line, "index")?;
    if i == 0 || i > dim {
        return Err(parse_err(
            line,
            format!("index {i} for mode {} out of range 1..={dim}", mode + 1),
        ));
    }
    Ok(i - 1)
}

fn read_dims_line<R: BufRead>(sc: &mut Scanner<R>, order: usize) -> Result<Vec<usize>, FormatError> {
    let (lno, text) = sc.require_content("dimension line")?;
    let toks = expect_tokens(&text, lno, order, "dimensions")?;
    let mut dims = Vec::with_capacity(order);
    for t in toks {
        let d = parse_usize(t, lno, "dimension")?;
        if d == 0 {
            return Err(parse_err(lno, "dimensions must be positive"));
        }
        dims.push(d);
    }
    Ok(dims)
}

fn write_float_row(out: &mut String, vals: &[f64]) {
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

// ---------------------------------------------------------------------------
// Dense tensor: order line, dimension line, then entries in lexicographic
// order with the last index fastest.
// ---------------------------------------------------------------------------

pub fn write_dense_tensor<W: Write>(w: &mut W, t: &DenseTensor) -> Result<(), FormatError> {
    let mut out = String::new();
    let _ = writeln!(out, "{}", t.order());
    write_dims(&mut out, t.dims());
    for chunk in t.data().chunks(8) {
        write_float_row(&mut out, chunk);
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

fn write_dims(out: &mut String, dims: &[usize]) {
    for (i, d) in dims.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{d}");
    }
    out.push('\n');
}

pub fn read_dense_tensor<R: Read>(r: R) -> Result<DenseTensor, FormatError> {
    let mut sc = Scanner::new(BufReader::new(r));
    let (lno, text) = sc.require_content("tensor order")?;
    let order = parse_usize(expect_tokens(&text, lno, 1, "tensor order")?[0], lno, "order")?;
    if order == 0 {
        return Err(parse_err(lno, "tensor order must be positive"));
    }
    let dims = read_dims_line(&mut sc, order)?;
    let total: usize = dims.iter().product();
    let mut data = Vec::with_capacity(total);
    let mut last_line = sc.line;
    while let Some((lno, text)) = sc.next_content()? {
        last_line = lno;
        for tok in text.split_whitespace() {
            data.push(parse_f64(tok, lno, "entry")?);
        }
        if data.len() > total {
            return Err(parse_err(lno, format!("more than {total} entries")));
        }
    }
    if data.len() != total {
        return Err(parse_err(
            last_line,
            format!("expected {total} entries, found {}", data.len()),
        ));
    }
    DenseTensor::from_vec(dims, data).map_err(|e| parse_err(last_line, e.to_string()))
}

// ---------------------------------------------------------------------------
// Kruskal model: `order num_terms` line, dimension line, then per term one
// weight line followed by one factor line per mode.
// ---------------------------------------------------------------------------

pub fn write_kruskal<W: Write>(w: &mut W, model: &KruskalModel) -> Result<(), FormatError> {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", model.order(), model.num_terms());
    write_dims(&mut out, model.dims());
    for (weight, atom) in model.weights().iter().zip(model.atoms()) {
        let _ = writeln!(out, "{weight}");
        for mode in 0..atom.order() {
            write_float_row(&mut out, atom.factor(mode));
        }
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_kruskal<R: Read>(r: R) -> Result<KruskalModel, FormatError> {
    let mut sc = Scanner::new(BufReader::new(r));
    let (lno, text) = sc.require_content("`order num_terms` header")?;
    let toks = expect_tokens(&text, lno, 2, "`order num_terms` header")?;
    let order = parse_usize(toks[0], lno, "order")?;
    let terms = parse_usize(toks[1], lno, "number of terms")?;
    if order == 0 {
        return Err(parse_err(lno, "model order must be positive"));
    }
    let dims = read_dims_line(&mut sc, order)?;
    let mut model =
        KruskalModel::new(&dims).map_err(|e| parse_err(lno, e.to_string()))?;
    for term in 0..terms {
        let (wl, wt) = sc.require_content("term weight")?;
        let weight = parse_f64(
            expect_tokens(&wt, wl, 1, "term weight")?[0],
            wl,
            "weight",
        )?;
        let mut factors = Vec::with_capacity(order);
        for (mode, &dim) in dims.iter().enumerate() {
            let (fl, ft) = sc.require_content("factor vector")?;
            let toks = expect_tokens(&ft, fl, dim, "factor vector")?;
            let mut f = Vec::with_capacity(dim);
            for t in toks {
                f.push(parse_f64(t, fl, "factor entry")?);
            }
            let _ = mode;
            factors.push(f);
        }
        let atom = RankOneAtom::new(factors)
            .map_err(|e| parse_err(wl, format!("term {}: {e}", term + 1)))?;
        model
            .push_term(weight, atom)
            .map_err(|e| parse_err(wl, format!("term {}: {e}", term + 1)))?;
    }
    if let Some((lno, _)) = sc.next_content()? {
        return Err(parse_err(lno, "trailing content after the last term"));
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// Sparse observations: order line, dimension line, then one observation per
// line as `i_1 ... i_N value` with 1-based indices.
// ---------------------------------------------------------------------------

pub fn write_observations<W: Write>(
    w: &mut W,
    obs: &SparseObservations,
) -> Result<(), FormatError> {
    let mut out = String::new();
    let _ = writeln!(out, "{}", obs.dims().len());
    write_dims(&mut out, obs.dims());
    for p in 0..obs.len() {
        for i in obs.index(p) {
            let _ = write!(out, "{} ", i + 1);
        }
        let _ = writeln!(out, "{}", obs.values()[p]);
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_observations<R: Read>(r: R) -> Result<SparseObservations, FormatError> {
    let mut sc = Scanner::new(BufReader::new(r));
    let (lno, text) = sc.require_content("tensor order")?;
    let order = parse_usize(expect_tokens(&text, lno, 1, "tensor order")?[0], lno, "order")?;
    if order == 0 {
        return Err(parse_err(lno, "tensor order must be positive"));
    }
    let dims = read_dims_line(&mut sc, order)?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut entry_lines = Vec::new();
    let mut last_line = sc.line;
    while let Some((lno, text)) = sc.next_content()? {
        last_line = lno;
        let toks = expect_tokens(&text, lno, order + 1, "observation")?;
        for (mode, tok) in toks[..order].iter().enumerate() {
            indices.push(parse_index(tok, lno, mode, dims[mode])?);
        }
        values.push(parse_f64(toks[order], lno, "observed value")?);
        entry_lines.push(lno);
    }
    SparseObservations::new(dims, indices, values).map_err(|e| {
        use crate::completion::CompletionError::*;
        match e {
            DuplicateIndex { first, second } => parse_err(
                entry_lines[second],
                format!(
                    "duplicate observation index (first seen on line {})",
                    entry_lines[first]
                ),
            ),
            NoObservations => FormatError::Degenerate("the file lists no observations".into()),
            other => parse_err(last_line, other.to_string()),
        }
    })
}

// ---------------------------------------------------------------------------
// Multitask dataset: `feature_dim order` line, task-dimension line, then one
// sample per line as `i_1 ... i_N y x_1 ... x_D` with 1-based task indices.
// ---------------------------------------------------------------------------

pub fn write_taskset<W: Write>(w: &mut W, tasks: &TaskSet) -> Result<(), FormatError> {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", tasks.input_dim(), tasks.task_dims().len());
    write_dims(&mut out, tasks.task_dims());
    let mut idx = vec![0usize; tasks.task_dims().len()];
    for (t, task) in tasks.tasks().iter().enumerate() {
        decompose_task_index(tasks.task_dims(), t, &mut idx);
        for row in 0..task.samples() {
            for i in &idx {
                let _ = write!(out, "{} ", i + 1);
            }
            let _ = write!(out, "{}", task.targets()[row]);
            for v in task.features().row(row) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

fn decompose_task_index(dims: &[usize], mut off: usize, out: &mut [usize]) {
    for (slot, &d) in out.iter_mut().zip(dims).rev() {
        *slot = off % d;
        off /= d;
    }
}

pub fn read_taskset<R: Read>(r: R) -> Result<TaskSet, FormatError> {
    let mut sc = Scanner::new(BufReader::new(r));
    let (lno, text) = sc.require_content("`feature_dim order` header")?;
    let toks = expect_tokens(&text, lno, 2, "`feature_dim order` header")?;
    let d = parse_usize(toks[0], lno, "feature dimension")?;
    let order = parse_usize(toks[1], lno, "task-grid order")?;
    if d == 0 {
        return Err(parse_err(lno, "feature dimension must be positive"));
    }
    if order == 0 {
        return Err(parse_err(lno, "task-grid order must be positive"));
    }
    let header_line = lno;
    let task_dims = read_dims_line(&mut sc, order)?;
    let t_count: usize = task_dims.iter().product();
    let mut features: Vec<Vec<f64>> = vec![Vec::new(); t_count];
    let mut targets: Vec<Vec<f64>> = vec![Vec::new(); t_count];
    while let Some((lno, text)) = sc.next_content()? {
        let toks = expect_tokens(&text, lno, order + 1 + d, "sample")?;
        let mut t = 0usize;
        for (mode, tok) in toks[..order].iter().enumerate() {
            t = t * task_dims[mode] + parse_index(tok, lno, mode, task_dims[mode])?;
        }
        targets[t].push(parse_f64(toks[order], lno, "target")?);
        for tok in &toks[order + 1..] {
            features[t].push(parse_f64(tok, lno, "feature")?);
        }
    }
    let mut tasks = Vec::with_capacity(t_count);
    for (f, y) in features.into_iter().zip(targets) {
        let rows = y.len();
        let task = Task::new(Mat::from_vec(rows, d, f), y)
            .map_err(|e| parse_err(header_line, e.to_string()))?;
        tasks.push(task);
    }
    TaskSet::new(d, task_dims, tasks).map_err(|e| parse_err(header_line, e.to_string()))
}

// ---------------------------------------------------------------------------
// Fit trace: `# key = value` comment lines, a fixed CSV header, one row per
// recorded iteration.
// ---------------------------------------------------------------------------

pub const TRACE_HEADER: &str = "k,objective,atom_value,grad12_norm_est,ratio,elapsed_ms";

/// One parsed row of a trace CSV. Mirrors the serialized columns only; the
/// in-memory trace also carries weight snapshots that do not go to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub objective: f64,
    pub atom_value: f64,
    pub grad12_norm_est: f64,
    pub ratio: f64,
    pub elapsed_ms: f64,
}

/// Writes a trace as CSV. `comments` become `# key = value` lines above the
/// header (run metadata: strategy, seed, and so on). The stop reason is
/// always recorded as a comment.
pub fn write_trace<W: Write>(
    w: &mut W,
    trace: &FitTrace,
    comments: &[(String, String)],
) -> Result<(), FormatError> {
    let mut out = String::new();
    for (k, v) in comments {
        let _ = writeln!(out, "# {k} = {v}");
    }
    let _ = writeln!(out, "# stop = {:?}", trace.stop);
    let _ = writeln!(out, "{TRACE_HEADER}");
    for rec in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            rec.k, rec.objective, rec.atom_value, rec.grad12_norm_est, rec.ratio, rec.elapsed_ms
        );
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRow>, FormatError> {
    let mut sc = Scanner::new(BufReader::new(r));
    let (lno, text) = sc.require_content("trace header")?;
    if text != TRACE_HEADER {
        return Err(parse_err(lno, format!("expected header `{TRACE_HEADER}`")));
    }
    let mut rows = Vec::new();
    while let Some((lno, text)) = sc.next_content()? {
        let toks: Vec<&str> = text.split(',').collect();
        if toks.len() != 6 {
            return Err(parse_err(lno, format!("expected 6 columns, found {}", toks.len())));
        }
        rows.push(TraceRow {
            k: parse_usize(toks[0], lno, "iteration")?,
            objective: parse_f64(toks[1], lno, "objective")?,
            atom_value: parse_f64(toks[2], lno, "atom_value")?,
            grad12_norm_est: parse_f64(toks[3], lno, "grad12_norm_est")?,
            ratio: parse_f64(toks[4], lno, "ratio")?,
            elapsed_ms: parse_f64(toks[5], lno, "elapsed_ms")?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Path conveniences.
// ---------------------------------------------------------------------------

macro_rules! path_io {
    ($save:ident, $load:ident, $write:ident, $read:ident, $ty:ty, $out:ty) => {
        pub fn $save(path: impl AsRef<Path>, value: $ty) -> Result<(), FormatError> {
            let mut w = BufWriter::new(File::create(path)?);
            $write(&mut w, value)?;
            w.flush()?;
            Ok(())
        }

        pub fn $load(path: impl AsRef<Path>) -> Result<$out, FormatError> {
            $read(File::open(path)?)
        }
    };
}

path_io!(save_dense_tensor, load_dense_tensor, write_dense_tensor, read_dense_tensor, &DenseTensor, DenseTensor);
path_io!(save_kruskal, load_kruskal, write_kruskal, read_kruskal, &KruskalModel, KruskalModel);
path_io!(save_observations, load_observations, write_observations, read_observations, &SparseObservations, SparseObservations);
path_io!(save_taskset, load_taskset, write_taskset, read_taskset, &TaskSet, TaskSet);

pub fn save_trace(
    path: impl AsRef<Path>,
    trace: &FitTrace,
    comments: &[(String, String)],
) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trace(&mut w, trace, comments)?;
    w.flush()?;
    Ok(())
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRow>, FormatError> {
    read_trace(File::open(path)?)
}
