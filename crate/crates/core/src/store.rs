//! On-disk workspace: runs, hypothesis units, codebook versions and code
//! assignments, kept as JSON-lines files under one directory.
//!
//! Assignments are an append-only event log. The current code matrix is the
//! last event per (hypothesis, code), with code names carried forward through
//! codebook renames. Every write replaces the target file through a rename,
//! so readers always see a whole file.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{stage_two_run_id, HypothesisUnit, PromptSetting};
use crate::orchestrator::{PlanResult, RunRecord, StageOneRecord};

const TABLE1: &str = include_str!("../../../fixtures/table1_codebook.csv");
const TABLE3: &str = include_str!("../../../fixtures/table3_counts.csv");

pub const RUNS: &str = "runs.jsonl";
pub const HYPOTHESES: &str = "hypotheses.jsonl";
pub const ASSIGNMENTS: &str = "assignments.jsonl";
pub const CODEBOOKS: &str = "codebooks.jsonl";
pub const STAGE_ONE: &str = "stage1.jsonl";
pub const SEEDS: &str = "seeds.jsonl";
const LOCK: &str = ".lock";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file}:{line}: {message}")]
    Corrupt {
        file: String,
        line: usize,
        message: String,
    },
    #[error("no code assignments have been stored")]
    NoMatrix,
    #[error("unknown hypothesis {0:?}")]
    UnknownHypothesis(String),
    #[error("unknown code {0:?}")]
    UnknownCode(String),
    #[error("unknown run {0:?}")]
    UnknownRun(String),
    #[error("cell ({hypothesis_id}, {code}) must be 0 or 1, got {value:?}")]
    NonBinaryCell {
        hypothesis_id: String,
        code: String,
        value: String,
    },
    #[error("hypothesis {0:?} appears more than once")]
    DuplicateRow(String),
    #[error("{code} in {setting}: count {count} exceeds the {rows} rows of the cell")]
    CountExceedsRows {
        code: String,
        setting: String,
        count: usize,
        rows: usize,
    },
    #[error("codebook version {given} is stale, current is {current}")]
    StaleCodebook { given: u32, current: u32 },
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
    #[error("run {0} has code assignments and cannot be deleted")]
    RunReferenced(String),
    #[error("CSV: {0}")]
    Csv(String),
    #[error("store at {0} is locked by another process")]
    Locked(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Code {
    pub name: String,
    pub description: String,
    /// Set only in the version that introduced the rename.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renamed_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    pub version: u32,
    pub codes: Vec<Code>,
}

impl Codebook {
    pub fn names(&self) -> Vec<&str> {
        self.codes.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.codes.iter().any(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let mut seen = HashSet::new();
        for c in &self.codes {
            if c.name.trim().is_empty() || c.name.trim() != c.name {
                return Err(StoreError::InvalidCodebook(format!("bad code name {:?}", c.name)));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(StoreError::InvalidCodebook(format!("duplicate code {:?}", c.name)));
            }
        }
        Ok(())
    }

    /// Derives the next version. Rename markers from this version are dropped.
    pub fn apply(&self, change: &CodebookChange) -> Result<Codebook, StoreError> {
        let mut codes: Vec<Code> = self
            .codes
            .iter()
            .map(|c| Code { renamed_from: None, ..c.clone() })
            .collect();
        match change {
            CodebookChange::Add { name, description } => {
                if self.contains(name) {
                    return Err(StoreError::InvalidCodebook(format!("code {name:?} already exists")));
                }
                codes.push(Code { name: name.clone(), description: description.clone(), renamed_from: None });
            }
            CodebookChange::Rename { from, to } => {
                if self.contains(to) {
                    return Err(StoreError::InvalidCodebook(format!("code {to:?} already exists")));
                }
                let c = codes
                    .iter_mut()
                    .find(|c| &c.name == from)
                    .ok_or_else(|| StoreError::UnknownCode(from.clone()))?;
                c.renamed_from = Some(from.clone());
                c.name = to.clone();
            }
            CodebookChange::Describe { name, description } => {
                let c = codes
                    .iter_mut()
                    .find(|c| &c.name == name)
                    .ok_or_else(|| StoreError::UnknownCode(name.clone()))?;
                c.description = description.clone();
            }
        }
        let next = Codebook { version: self.version + 1, codes };
        next.validate()?;
        Ok(next)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum CodebookChange {
    Add { name: String, description: String },
    Rename { from: String, to: String },
    Describe { name: String, description: String },
}

/// The 21 codes with their descriptions, in decreasing frequency.
pub fn default_codebook() -> Codebook {
    let mut rdr = csv::Reader::from_reader(TABLE1.as_bytes());
    let codes = rdr
        .records()
        .map(|r| {
            let r = r.expect("embedded codebook parses");
            Code { name: r[0].to_string(), description: r[1].to_string(), renamed_from: None }
        })
        .collect();
    Codebook { version: 1, codes }
}

/// Reference frequencies (N and rounded percent of 450) per code.
pub fn table1_reference() -> Vec<(String, usize, u32)> {
    let mut rdr = csv::Reader::from_reader(TABLE1.as_bytes());
    rdr.records()
        .map(|r| {
            let r = r.expect("embedded codebook parses");
            (r[0].to_string(), r[2].parse().unwrap(), r[3].parse().unwrap())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCount {
    pub count: usize,
    pub denominator: usize,
}

/// Per-setting counts for one code, in canonical setting order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub code: String,
    pub cells: [CellCount; 6],
}

impl CellCounts {
    pub fn get(&self, setting: PromptSetting) -> CellCount {
        self.cells[setting.ordinal()]
    }

    pub fn total(&self) -> usize {
        self.cells.iter().map(|c| c.count).sum()
    }
}

/// Counts out of 75 per setting for each of the 21 codes.
pub fn table3_counts() -> Vec<CellCounts> {
    let mut rdr = csv::Reader::from_reader(TABLE3.as_bytes());
    let header = rdr.headers().expect("embedded table has a header").clone();
    let order: Vec<PromptSetting> = header
        .iter()
        .skip(1)
        .map(|h| PromptSetting::parse_label(h).expect("embedded header labels"))
        .collect();
    rdr.records()
        .map(|r| {
            let r = r.expect("embedded table parses");
            let mut cells = [CellCount { count: 0, denominator: 75 }; 6];
            for (setting, v) in order.iter().zip(r.iter().skip(1)) {
                cells[setting.ordinal()].count = v.parse().expect("integer count");
            }
            CellCounts { code: r[0].to_string(), cells }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub hypothesis_id: String,
    pub code: String,
    pub value: u8,
    pub codebook_version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub hypothesis_id: String,
    pub run_id: String,
    pub setting: PromptSetting,
}

impl From<&HypothesisUnit> for MatrixRow {
    fn from(u: &HypothesisUnit) -> Self {
        MatrixRow { hypothesis_id: u.id(), run_id: u.run_id.clone(), setting: u.setting }
    }
}

/// Binary hypothesis x code matrix; `cells[row][column]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeMatrix {
    pub codebook_version: u32,
    pub columns: Vec<String>,
    pub rows: Vec<MatrixRow>,
    pub cells: Vec<Vec<u8>>,
}

impl CodeMatrix {
    pub fn column_index(&self, code: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == code)
    }

    pub fn column(&self, code: &str) -> Result<Vec<u8>, StoreError> {
        let j = self.column_index(code).ok_or_else(|| StoreError::UnknownCode(code.into()))?;
        Ok(self.cells.iter().map(|row| row[j]).collect())
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.codebook_version.to_le_bytes());
        for c in &self.columns {
            h.update(c.as_bytes());
            h.update([0]);
        }
        for (row, cells) in self.rows.iter().zip(&self.cells) {
            h.update(row.hypothesis_id.as_bytes());
            h.update([0]);
            h.update(row.run_id.as_bytes());
            h.update([0]);
            h.update(row.setting.label().as_bytes());
            h.update([0]);
            h.update(cells);
        }
        hex::encode(h.finalize())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["hypothesis_id"];
        header.extend(self.columns.iter().map(String::as_str));
        w.write_record(&header).unwrap();
        for (row, cells) in self.rows.iter().zip(&self.cells) {
            let mut rec = vec![row.hypothesis_id.clone()];
            rec.extend(cells.iter().map(u8::to_string));
            w.write_record(&rec).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

pub fn cell_counts(matrix: &CodeMatrix, code: &str) -> Result<CellCounts, StoreError> {
    let col = matrix.column(code)?;
    let mut cells = [CellCount { count: 0, denominator: 0 }; 6];
    for (row, v) in matrix.rows.iter().zip(col) {
        let c = &mut cells[row.setting.ordinal()];
        c.denominator += 1;
        c.count += usize::from(v);
    }
    Ok(CellCounts { code: code.into(), cells })
}

/// Which rows exist in each design cell, in row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub rows: Vec<MatrixRow>,
}

impl Layout {
    /// `runs` runs of `per_run` rows in every setting, named the way the
    /// orchestrator names runs for seeds `01..=runs`.
    pub fn balanced(runs: usize, per_run: u8) -> Layout {
        let mut rows = Vec::new();
        for seed in 0..runs {
            for (s, &setting) in PromptSetting::ALL.iter().enumerate() {
                let run_id = stage_two_run_id(&format!("{:02}", seed + 1), setting, seed * 6 + s + 1);
                for i in 1..=per_run {
                    rows.push(MatrixRow {
                        hypothesis_id: crate::domain::hypothesis_id(&run_id, i),
                        run_id: run_id.clone(),
                        setting,
                    });
                }
            }
        }
        Layout { rows }
    }

    pub fn from_units(units: &[HypothesisUnit]) -> Layout {
        Layout { rows: units.iter().map(MatrixRow::from).collect() }
    }
}

/// Builds a matrix whose per-cell counts equal `counts` by setting the first
/// `count` rows of each cell (in layout order) to 1.
pub fn synthesize_matrix_from_counts(
    counts: &[CellCounts],
    layout: &Layout,
    codebook_version: u32,
) -> Result<CodeMatrix, StoreError> {
    let mut by_cell: [Vec<usize>; 6] = Default::default();
    for (i, row) in layout.rows.iter().enumerate() {
        by_cell[row.setting.ordinal()].push(i);
    }
    let mut cells = vec![vec![0u8; counts.len()]; layout.rows.len()];
    for (j, cc) in counts.iter().enumerate() {
        for setting in PromptSetting::ALL {
            let rows = &by_cell[setting.ordinal()];
            let count = cc.get(setting).count;
            if count > rows.len() {
                return Err(StoreError::CountExceedsRows {
                    code: cc.code.clone(),
                    setting: setting.label(),
                    count,
                    rows: rows.len(),
                });
            }
            for &i in &rows[..count] {
                cells[i][j] = 1;
            }
        }
    }
    Ok(CodeMatrix {
        codebook_version,
        columns: counts.iter().map(|c| c.code.clone()).collect(),
        rows: layout.rows.clone(),
        cells,
    })
}

fn percent(count: usize, denom: usize) -> u32 {
    if denom == 0 {
        return 0;
    }
    // half-up on integers
    ((200 * count + denom) / (2 * denom)) as u32
}

/// `code,N,percent` with percent of all rows.
pub fn table1_csv(matrix: &CodeMatrix) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["code", "N", "percent"]).unwrap();
    let n = matrix.rows.len();
    for (j, code) in matrix.columns.iter().enumerate() {
        let count: usize = matrix.cells.iter().map(|r| usize::from(r[j])).sum();
        w.write_record([code.clone(), count.to_string(), percent(count, n).to_string()]).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// `code,setting,count,percent`, one line per code and setting.
pub fn table3_csv(matrix: &CodeMatrix) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["code", "setting", "count", "percent"]).unwrap();
    for code in &matrix.columns {
        let cc = cell_counts(matrix, code).expect("column exists");
        for setting in PromptSetting::ALL {
            let c = cc.get(setting);
            w.write_record([
                code.clone(),
                setting.label(),
                c.count.to_string(),
                percent(c.count, c.denominator).to_string(),
            ])
            .unwrap();
        }
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Held for as long as a process owns the store for writing.
#[derive(Debug)]
pub struct StoreLock {
    _file: fs::File,
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    writer: Mutex<()>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                file: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("serializable");
        out.push(b'\n');
    }
    out
}

fn replace_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("jsonl.tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Store {
    /// Opens (creating if needed) a store; a fresh store gets the default
    /// codebook as version 1.
    pub fn open(root: impl AsRef<Path>) -> Result<Store, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let store = Store { root, writer: Mutex::new(()) };
        if !store.path(CODEBOOKS).exists() {
            replace_file(&store.path(CODEBOOKS), &jsonl(&[default_codebook()]))?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Takes the cross-process writer lock.
    pub fn lock(&self) -> Result<StoreLock, StoreError> {
        let file = fs::OpenOptions::new().create(true).truncate(false).write(true).open(self.path(LOCK))?;
        match file.try_lock() {
            Ok(()) => Ok(StoreLock { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(StoreError::Locked(self.root.display().to_string())),
            Err(fs::TryLockError::Error(e)) => Err(e.into()),
        }
    }

    /// Digest over every data file, for detecting mutation.
    pub fn digest(&self) -> Result<String, StoreError> {
        let mut h = Sha256::new();
        for name in [RUNS, HYPOTHESES, ASSIGNMENTS, CODEBOOKS, STAGE_ONE, SEEDS] {
            h.update(name.as_bytes());
            match fs::read(self.path(name)) {
                Ok(bytes) => {
                    h.update((bytes.len() as u64).to_le_bytes());
                    h.update(&bytes);
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => h.update(u64::MAX.to_le_bytes()),
                Err(e) => return Err(e.into()),
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Persists a plan's records, replacing earlier plan output.
    pub fn record_plan(&self, plan: &PlanResult) -> Result<(), StoreError> {
        self.save_stage_one(&plan.stage_one)?;
        self.save_seeds(&plan.seeds)?;
        self.save_runs(&plan.runs)
    }

    pub fn save_stage_one(&self, records: &[StageOneRecord]) -> Result<(), StoreError> {
        let _w = self.writer.lock().unwrap();
        replace_file(&self.path(STAGE_ONE), &jsonl(records))
    }

    pub fn save_seeds(&self, seeds: &[String]) -> Result<(), StoreError> {
        let _w = self.writer.lock().unwrap();
        replace_file(&self.path(SEEDS), &jsonl(seeds))
    }

    pub fn save_runs(&self, runs: &[RunRecord]) -> Result<(), StoreError> {
        let _w = self.writer.lock().unwrap();
        let units: Vec<HypothesisUnit> = runs
            .iter()
            .filter_map(RunRecord::result)
            .flat_map(|r| r.hypothesis_units())
            .collect();
        replace_file(&self.path(HYPOTHESES), &jsonl(&units))?;
        replace_file(&self.path(RUNS), &jsonl(runs))
    }

    pub fn stage_one(&self) -> Result<Vec<StageOneRecord>, StoreError> {
        read_jsonl(&self.path(STAGE_ONE))
    }

    pub fn seeds(&self) -> Result<Vec<String>, StoreError> {
        read_jsonl(&self.path(SEEDS))
    }

    pub fn runs(&self) -> Result<Vec<RunRecord>, StoreError> {
        read_jsonl(&self.path(RUNS))
    }

    pub fn hypotheses(&self) -> Result<Vec<HypothesisUnit>, StoreError> {
        read_jsonl(&self.path(HYPOTHESES))
    }

    pub fn hypotheses_for_run(&self, run_id: &str) -> Result<Vec<HypothesisUnit>, StoreError> {
        if !self.runs()?.iter().any(|r| r.run_id == run_id) {
            return Err(StoreError::UnknownRun(run_id.into()));
        }
        Ok(self.hypotheses()?.into_iter().filter(|u| u.run_id == run_id).collect())
    }

    pub fn codebooks(&self) -> Result<Vec<Codebook>, StoreError> {
        read_jsonl(&self.path(CODEBOOKS))
    }

    pub fn codebook(&self) -> Result<Codebook, StoreError> {
        self.codebooks()?
            .pop()
            .ok_or_else(|| StoreError::InvalidCodebook("store has no codebook".into()))
    }

    pub fn change_codebook(&self, change: &CodebookChange) -> Result<Codebook, StoreError> {
        let _w = self.writer.lock().unwrap();
        let mut books = self.codebooks()?;
        let next = books
            .last()
            .ok_or_else(|| StoreError::InvalidCodebook("store has no codebook".into()))?
            .apply(change)?;
        books.push(next.clone());
        replace_file(&self.path(CODEBOOKS), &jsonl(&books))?;
        Ok(next)
    }

    pub fn assignments(&self) -> Result<Vec<Assignment>, StoreError> {
        read_jsonl(&self.path(ASSIGNMENTS))
    }

    /// Current value of every coded cell, keyed by (hypothesis, current code name).
    fn resolved(
        books: &[Codebook],
        events: &[Assignment],
    ) -> HashMap<(String, String), u8> {
        let current = books.last().expect("at least one codebook");
        let mut out = HashMap::new();
        for e in events {
            let mut name = e.code.clone();
            for book in books.iter().filter(|b| b.version > e.codebook_version) {
                if let Some(c) = book.codes.iter().find(|c| c.renamed_from.as_deref() == Some(&name)) {
                    name = c.name.clone();
                }
            }
            if current.contains(&name) {
                out.insert((e.hypothesis_id.clone(), name), e.value);
            }
        }
        out
    }

    fn build_matrix(
        units: &[HypothesisUnit],
        books: &[Codebook],
        events: &[Assignment],
    ) -> CodeMatrix {
        let current = books.last().expect("at least one codebook");
        let state = Self::resolved(books, events);
        let columns: Vec<String> = current.codes.iter().map(|c| c.name.clone()).collect();
        let rows: Vec<MatrixRow> = units.iter().map(MatrixRow::from).collect();
        let cells = rows
            .iter()
            .map(|r| {
                columns
                    .iter()
                    .map(|c| state.get(&(r.hypothesis_id.clone(), c.clone())).copied().unwrap_or(0))
                    .collect()
            })
            .collect();
        CodeMatrix { codebook_version: current.version, columns, rows, cells }
    }

    /// The current code matrix over all stored hypothesis units.
    pub fn matrix(&self) -> Result<CodeMatrix, StoreError> {
        let events = self.assignments()?;
        let units = self.hypotheses()?;
        if events.is_empty() || units.is_empty() {
            return Err(StoreError::NoMatrix);
        }
        Ok(Self::build_matrix(&units, &self.codebooks()?, &events))
    }

    fn append_events(&self, new: &[Assignment]) -> Result<(), StoreError> {
        if new.is_empty() {
            return Ok(());
        }
        let path = self.path(ASSIGNMENTS);
        let mut bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        bytes.extend(jsonl(new));
        replace_file(&path, &bytes)
    }

    /// Sets one cell. `codebook_version`, when given, must be current.
    pub fn assign(
        &self,
        hypothesis_id: &str,
        code: &str,
        value: &str,
        codebook_version: Option<u32>,
    ) -> Result<Assignment, StoreError> {
        let _w = self.writer.lock().unwrap();
        let book = self.codebook()?;
        if let Some(given) = codebook_version {
            if given != book.version {
                return Err(StoreError::StaleCodebook { given, current: book.version });
            }
        }
        if !book.contains(code) {
            return Err(StoreError::UnknownCode(code.into()));
        }
        if !self.hypotheses()?.iter().any(|u| u.id() == hypothesis_id) {
            return Err(StoreError::UnknownHypothesis(hypothesis_id.into()));
        }
        let value = binary(hypothesis_id, code, value)?;
        let a = Assignment {
            hypothesis_id: hypothesis_id.into(),
            code: code.into(),
            value,
            codebook_version: book.version,
        };
        self.append_events(std::slice::from_ref(&a))?;
        Ok(a)
    }

    /// Imports a `hypothesis_id,<code>,...` CSV of 0/1 cells. Nothing is
    /// written unless every row and column validates; cells equal to the
    /// stored value produce no event, so re-imports are no-ops.
    pub fn import_code_matrix(&self, csv_text: &str) -> Result<CodeMatrix, StoreError> {
        let _w = self.writer.lock().unwrap();
        let books = self.codebooks()?;
        let book = books.last().expect("at least one codebook");
        let units = self.hypotheses()?;
        let known: HashSet<String> = units.iter().map(HypothesisUnit::id).collect();

        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_text.as_bytes());
        let header = rdr.headers().map_err(|e| StoreError::Csv(e.to_string()))?.clone();
        if header.get(0) != Some("hypothesis_id") {
            return Err(StoreError::Csv("first column must be hypothesis_id".into()));
        }
        let codes: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut seen_cols = HashSet::new();
        for c in &codes {
            if !book.contains(c) {
                return Err(StoreError::UnknownCode(c.clone()));
            }
            if !seen_cols.insert(c) {
                return Err(StoreError::Csv(format!("column {c:?} repeated")));
            }
        }

        let existing = self.assignments()?;
        let state = Self::resolved(&books, &existing);
        let mut seen_rows = HashSet::new();
        let mut new = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| StoreError::Csv(e.to_string()))?;
            let id = rec.get(0).unwrap_or_default().to_string();
            if !known.contains(&id) {
                return Err(StoreError::UnknownHypothesis(id));
            }
            if !seen_rows.insert(id.clone()) {
                return Err(StoreError::DuplicateRow(id));
            }
            for (code, raw) in codes.iter().zip(rec.iter().skip(1)) {
                let value = binary(&id, code, raw)?;
                let stored = state.get(&(id.clone(), code.clone())).copied();
                if stored != Some(value) {
                    new.push(Assignment {
                        hypothesis_id: id.clone(),
                        code: code.clone(),
                        value,
                        codebook_version: book.version,
                    });
                }
            }
        }
        self.append_events(&new)?;
        let mut all = existing;
        all.extend(new);
        Ok(Self::build_matrix(&units, &books, &all))
    }

    /// Removes a run and its units, unless any unit has been coded.
    pub fn delete_run(&self, run_id: &str) -> Result<(), StoreError> {
        let _w = self.writer.lock().unwrap();
        let mut runs = self.runs()?;
        let before = runs.len();
        runs.retain(|r| r.run_id != run_id);
        if runs.len() == before {
            return Err(StoreError::UnknownRun(run_id.into()));
        }
        let mut units = self.hypotheses()?;
        let ids: HashSet<String> = units.iter().filter(|u| u.run_id == run_id).map(HypothesisUnit::id).collect();
        if self.assignments()?.iter().any(|a| ids.contains(&a.hypothesis_id)) {
            return Err(StoreError::RunReferenced(run_id.into()));
        }
        units.retain(|u| u.run_id != run_id);
        replace_file(&self.path(HYPOTHESES), &jsonl(&units))?;
        replace_file(&self.path(RUNS), &jsonl(&runs))
    }

    /// Per-setting count of stored units, for quick summaries.
    pub fn units_per_setting(&self) -> Result<BTreeMap<String, usize>, StoreError> {
        let mut out = BTreeMap::new();
        for u in self.hypotheses()? {
            *out.entry(u.setting.label()).or_default() += 1;
        }
        Ok(out)
    }
}

fn binary(hypothesis_id: &str, code: &str, raw: &str) -> Result<u8, StoreError> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(StoreError::NonBinaryCell {
            hypothesis_id: hypothesis_id.into(),
            code: code.into(),
            value: other.into(),
        }),
    }
}
