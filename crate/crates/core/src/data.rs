//! Mixed-type tabular data: schema, loading, and preprocessing.
//!
//! Variables are held in canonical order: every continuous variable first,
//! then binary, then nominal, each group keeping its schema order. The latent
//! layout relies on this so that the first `A` latent columns are the observed
//! continuous values.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Continuous,
    Binary,
    Nominal,
}

/// Meaning of a categorical variable's level order.
///
/// `Genotype` marks a three-level SNP whose levels are listed as
/// (dominant homozygous, recessive homozygous, heterozygous).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelRole {
    #[default]
    None,
    Genotype,
}

impl LevelRole {
    fn is_none(&self) -> bool {
        matches!(self, LevelRole::None)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    #[serde(default, skip_serializing_if = "LevelRole::is_none")]
    pub role: LevelRole,
}

impl VariableSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VariableKind::Continuous,
            levels: Vec::new(),
            role: LevelRole::None,
        }
    }

    pub fn binary(name: impl Into<String>, levels: [&str; 2]) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VariableKind::Binary,
            levels: levels.iter().map(|s| s.to_string()).collect(),
            role: LevelRole::None,
        }
    }

    pub fn nominal<S: AsRef<str>>(name: impl Into<String>, levels: &[S]) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VariableKind::Nominal,
            levels: levels.iter().map(|s| s.as_ref().to_string()).collect(),
            role: LevelRole::None,
        }
    }

    pub fn genotype(name: impl Into<String>, levels: [&str; 3]) -> Self {
        let mut spec = Self::nominal(name, &levels);
        spec.role = LevelRole::Genotype;
        spec
    }

    /// Number of levels; zero for continuous variables.
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Number of latent dimensions this variable occupies.
    pub fn latent_width(&self) -> usize {
        match self.kind {
            VariableKind::Continuous | VariableKind::Binary => 1,
            VariableKind::Nominal => self.levels.len() - 1,
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind != VariableKind::Continuous
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Schema(format!("variable `{}`: {msg}", self.name)));
        if self.name.is_empty() {
            return Err(Error::Schema("empty variable name".into()));
        }
        match self.kind {
            VariableKind::Continuous if !self.levels.is_empty() => return fail("continuous variables take no levels"),
            VariableKind::Binary if self.levels.len() != 2 => return fail("binary variables need exactly 2 levels"),
            VariableKind::Nominal if self.levels.len() < 3 => return fail("nominal variables need at least 3 levels"),
            _ => {}
        }
        let distinct: HashSet<&str> = self.levels.iter().map(String::as_str).collect();
        if distinct.len() != self.levels.len() {
            return fail("duplicate level labels");
        }
        if self.levels.iter().any(|l| is_missing_token(l)) {
            return fail("a level label collides with a missing-value token");
        }
        if self.role == LevelRole::Genotype && !(self.kind == VariableKind::Nominal && self.levels.len() == 3) {
            return fail("genotype role requires a 3-level nominal variable");
        }
        Ok(())
    }

    fn code_of(&self, label: &str) -> Option<u32> {
        self.levels.iter().position(|l| l == label).map(|p| p as u32)
    }
}

/// Schema sidecar: the explicit type of every column in a data file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    /// Optional column holding observation identifiers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
    #[serde(rename = "variable", default)]
    pub variables: Vec<VariableSpec>,
}

impl Schema {
    pub fn new(variables: Vec<VariableSpec>) -> Self {
        Schema {
            id_column: None,
            variables,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let schema: Schema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.variables.is_empty() {
            return Err(Error::Schema("schema lists no variables".into()));
        }
        let mut seen = HashSet::new();
        for v in &self.variables {
            v.validate()?;
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Schema(format!("duplicate variable `{}`", v.name)));
            }
        }
        if let Some(id) = &self.id_column {
            if seen.contains(id.as_str()) {
                return Err(Error::Schema(format!("id column `{id}` is also a variable")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentSlot {
    pub offset: usize,
    pub width: usize,
}

impl LatentSlot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.width
    }
}

/// Map from observed variables to the latent vector underlying them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentLayout {
    slots: Vec<LatentSlot>,
    dim: usize,
}

impl LatentLayout {
    pub fn new(variables: &[VariableSpec]) -> Self {
        let mut offset = 0;
        let slots = variables
            .iter()
            .map(|v| {
                let slot = LatentSlot {
                    offset,
                    width: v.latent_width(),
                };
                offset += slot.width;
                slot
            })
            .collect();
        LatentLayout { slots, dim: offset }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slot(&self, variable: usize) -> LatentSlot {
        self.slots[variable]
    }

    pub fn slots(&self) -> &[LatentSlot] {
        &self.slots
    }

    /// Owning variable of each latent dimension.
    pub fn owners(&self) -> Vec<usize> {
        let mut owners = vec![0; self.dim];
        for (j, slot) in self.slots.iter().enumerate() {
            for d in slot.range() {
                owners[d] = j;
            }
        }
        owners
    }
}

/// One variable's observed values, in row order.
#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Continuous(Vec<f64>),
    Codes(Vec<u32>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Continuous(v) => v.len(),
            ColumnData::Codes(v) => v.len(),
        }
    }
}

/// Complete-case mixed data in canonical variable order.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedDataset {
    variables: Vec<VariableSpec>,
    row_ids: Vec<String>,
    continuous: DMatrix<f64>,
    codes: Vec<Vec<u32>>,
    layout: LatentLayout,
}

impl MixedDataset {
    /// Builds a dataset from per-variable columns given in any variable order.
    /// Row ids default to `1..=N` when `row_ids` is `None`.
    pub fn new(variables: Vec<VariableSpec>, columns: Vec<ColumnData>, row_ids: Option<Vec<String>>) -> Result<Self> {
        if variables.len() != columns.len() {
            return Err(Error::Dimension(format!(
                "{} variables but {} columns",
                variables.len(),
                columns.len()
            )));
        }
        Schema::new(variables.clone()).validate()?;
        let n = columns.first().map_or(0, ColumnData::len);
        if n == 0 {
            return Err(Error::EmptyDataset { dropped: 0 });
        }
        let row_ids = match row_ids {
            Some(ids) if ids.len() != n => return Err(Error::Dimension(format!("{} row ids for {n} rows", ids.len()))),
            Some(ids) => ids,
            None => (1..=n).map(|i| i.to_string()).collect(),
        };

        let mut order: Vec<usize> = (0..variables.len()).collect();
        order.sort_by_key(|&j| kind_rank(variables[j].kind));

        let mut sorted_vars = Vec::with_capacity(variables.len());
        let mut cont_cols: Vec<f64> = Vec::new();
        let mut n_cont = 0;
        let mut codes = Vec::new();
        let mut columns: Vec<Option<ColumnData>> = columns.into_iter().map(Some).collect();
        for j in order {
            let spec = variables[j].clone();
            let column = columns[j].take().expect("each column taken once");
            if column.len() != n {
                return Err(Error::Dimension(format!(
                    "column `{}` has {} rows, expected {n}",
                    spec.name,
                    column.len()
                )));
            }
            match (spec.kind, column) {
                (VariableKind::Continuous, ColumnData::Continuous(values)) => {
                    if values.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Dimension(format!("non-finite value in `{}`", spec.name)));
                    }
                    cont_cols.extend(values);
                    n_cont += 1;
                }
                (VariableKind::Binary | VariableKind::Nominal, ColumnData::Codes(c)) => {
                    let k = spec.n_levels() as u32;
                    if let Some(&bad) = c.iter().find(|&&code| code >= k) {
                        return Err(Error::UnknownLevel {
                            variable: spec.name.clone(),
                            value: bad.to_string(),
                        });
                    }
                    codes.push(c);
                }
                _ => {
                    return Err(Error::Dimension(format!(
                        "column type does not match kind of `{}`",
                        spec.name
                    )))
                }
            }
            sorted_vars.push(spec);
        }
        let layout = LatentLayout::new(&sorted_vars);
        Ok(MixedDataset {
            variables: sorted_vars,
            row_ids,
            continuous: DMatrix::from_vec(n, n_cont, cont_cols),
            codes,
            layout,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_variables(&self) -> usize {
        self.variables.len()
    }

    /// A: number of continuous variables.
    pub fn n_continuous(&self) -> usize {
        self.continuous.ncols()
    }

    /// B: number of binary variables.
    pub fn n_binary(&self) -> usize {
        self.count_kind(VariableKind::Binary)
    }

    /// C: number of nominal variables.
    pub fn n_nominal(&self) -> usize {
        self.count_kind(VariableKind::Nominal)
    }

    fn count_kind(&self, kind: VariableKind) -> usize {
        self.variables.iter().filter(|v| v.kind == kind).count()
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn variable(&self, j: usize) -> &VariableSpec {
        &self.variables[j]
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn layout(&self) -> &LatentLayout {
        &self.layout
    }

    pub fn schema(&self) -> Schema {
        Schema::new(self.variables.clone())
    }

    /// N×A matrix of continuous observations.
    pub fn continuous(&self) -> &DMatrix<f64> {
        &self.continuous
    }

    pub fn continuous_column(&self, j: usize) -> &[f64] {
        assert!(j < self.n_continuous(), "variable {j} is not continuous");
        let n = self.n_obs();
        &self.continuous.as_slice()[j * n..(j + 1) * n]
    }

    /// Level codes of categorical variable `j` (global variable index).
    pub fn codes(&self, j: usize) -> &[u32] {
        let a = self.n_continuous();
        assert!(j >= a, "variable {j} is not categorical");
        &self.codes[j - a]
    }

    pub fn column(&self, j: usize) -> ColumnData {
        if self.variables[j].is_categorical() {
            ColumnData::Codes(self.codes(j).to_vec())
        } else {
            ColumnData::Continuous(self.continuous_column(j).to_vec())
        }
    }

    /// Per-level counts of categorical variable `j`.
    pub fn level_counts(&self, j: usize) -> Vec<usize> {
        let mut counts = vec![0; self.variables[j].n_levels()];
        for &c in self.codes(j) {
            counts[c as usize] += 1;
        }
        counts
    }

    /// Copy keeping only the listed variables (any order; output is canonical).
    pub fn select_variables(&self, keep: &[usize]) -> Result<Self> {
        let vars = keep.iter().map(|&j| self.variables[j].clone()).collect();
        let cols = keep.iter().map(|&j| self.column(j)).collect();
        MixedDataset::new(vars, cols, Some(self.row_ids.clone()))
    }

    /// Writes the data as CSV with level labels, in canonical column order.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend(self.variables.iter().map(|v| v.name.clone()));
        out.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_obs() {
            record.clear();
            record.push(self.row_ids[i].clone());
            for (j, v) in self.variables.iter().enumerate() {
                if v.is_categorical() {
                    record.push(v.levels[self.codes(j)[i] as usize].clone());
                } else {
                    record.push(format!("{}", self.continuous[(i, j)]));
                }
            }
            out.write_record(&record)?;
        }
        out.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Schema matching [`MixedDataset::write_csv`] output.
    pub fn written_schema(&self) -> Schema {
        Schema {
            id_column: Some("id".into()),
            variables: self.variables.clone(),
        }
    }
}

fn kind_rank(kind: VariableKind) -> u8 {
    match kind {
        VariableKind::Continuous => 0,
        VariableKind::Binary => 1,
        VariableKind::Nominal => 2,
    }
}

pub fn is_missing_token(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "N/A" | "NaN" | "nan" | ".")
}

/// Optional cohort-specific filters applied at load time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadOptions {
    /// Drop categorical variables with more than this many missing cells
    /// before complete-case filtering.
    pub max_missing_per_categorical: Option<usize>,
    /// Drop categorical variables with a level that is never observed.
    pub drop_unobserved_levels: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_missing_per_categorical: None,
            drop_unobserved_levels: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DroppedVariable {
    pub name: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Loaded {
    pub dataset: MixedDataset,
    pub dropped_rows: usize,
    pub dropped_variables: Vec<DroppedVariable>,
}

pub fn load_csv(path: &Path, schema: &Schema, options: &LoadOptions) -> Result<Loaded> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, options)
}

enum Cell {
    Missing,
    Value(f64),
    Code(u32),
}

/// Parses CSV text against a schema. Rows with a missing or unparseable cell
/// are dropped; an unknown categorical label is an error.
pub fn read_csv<R: Read>(reader: R, schema: &Schema, options: &LoadOptions) -> Result<Loaded> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let mut column_of: HashMap<&str, usize> = HashMap::new();
    for (c, h) in header.iter().enumerate() {
        if column_of.insert(h.as_str(), c).is_some() {
            return Err(Error::SchemaMismatch(format!("duplicate column `{h}`")));
        }
    }
    let mut expected: HashSet<&str> = schema.variables.iter().map(|v| v.name.as_str()).collect();
    if let Some(id) = &schema.id_column {
        expected.insert(id.as_str());
    }
    if let Some(extra) = header.iter().find(|h| !expected.contains(h.as_str())) {
        return Err(Error::SchemaMismatch(format!("column `{extra}` not in schema")));
    }
    if let Some(missing) = expected.iter().find(|e| !column_of.contains_key(*e)) {
        return Err(Error::SchemaMismatch(format!(
            "schema variable `{missing}` not in header"
        )));
    }
    let var_cols: Vec<usize> = schema.variables.iter().map(|v| column_of[v.name.as_str()]).collect();
    let id_col = schema.id_column.as_ref().map(|id| column_of[id.as_str()]);

    let mut rows: Vec<Vec<Cell>> = Vec::new();
    let mut ids = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(var_cols.len());
        for (spec, &c) in schema.variables.iter().zip(&var_cols) {
            let raw = record.get(c).unwrap_or("").trim();
            let cell = if is_missing_token(raw) {
                Cell::Missing
            } else if spec.is_categorical() {
                match spec.code_of(raw) {
                    Some(code) => Cell::Code(code),
                    None => {
                        return Err(Error::UnknownLevel {
                            variable: spec.name.clone(),
                            value: raw.to_string(),
                        })
                    }
                }
            } else {
                match raw.parse::<f64>() {
                    Ok(x) if x.is_finite() => Cell::Value(x),
                    _ => Cell::Missing,
                }
            };
            row.push(cell);
        }
        ids.push(match id_col {
            Some(c) => record.get(c).unwrap_or("").trim().to_string(),
            None => (r + 1).to_string(),
        });
        rows.push(row);
    }

    let mut dropped_variables = Vec::new();
    let mut keep_var = vec![true; schema.variables.len()];
    if let Some(limit) = options.max_missing_per_categorical {
        for (j, spec) in schema.variables.iter().enumerate() {
            let missing = rows.iter().filter(|r| matches!(r[j], Cell::Missing)).count();
            if spec.is_categorical() && missing > limit {
                keep_var[j] = false;
                dropped_variables.push(DroppedVariable {
                    name: spec.name.clone(),
                    reason: format!("{missing} missing cells exceeds limit {limit}"),
                });
            }
        }
    }

    let complete: Vec<usize> = (0..rows.len())
        .filter(|&r| {
            rows[r]
                .iter()
                .zip(&keep_var)
                .all(|(cell, &keep)| !keep || !matches!(cell, Cell::Missing))
        })
        .collect();
    let dropped_rows = rows.len() - complete.len();
    if complete.is_empty() {
        return Err(Error::EmptyDataset { dropped: dropped_rows });
    }

    let mut variables = Vec::new();
    let mut columns = Vec::new();
    for (j, spec) in schema.variables.iter().enumerate() {
        if !keep_var[j] {
            continue;
        }
        let column = if spec.is_categorical() {
            let codes: Vec<u32> = complete
                .iter()
                .map(|&r| match rows[r][j] {
                    Cell::Code(c) => c,
                    _ => unreachable!("complete rows hold codes in categorical columns"),
                })
                .collect();
            if options.drop_unobserved_levels {
                let mut seen = vec![false; spec.n_levels()];
                for &c in &codes {
                    seen[c as usize] = true;
                }
                if let Some(level) = seen.iter().position(|s| !s) {
                    log::warn!(
                        "dropping `{}`: level `{}` is never observed",
                        spec.name,
                        spec.levels[level]
                    );
                    dropped_variables.push(DroppedVariable {
                        name: spec.name.clone(),
                        reason: format!("level `{}` unobserved", spec.levels[level]),
                    });
                    continue;
                }
            }
            ColumnData::Codes(codes)
        } else {
            ColumnData::Continuous(
                complete
                    .iter()
                    .map(|&r| match rows[r][j] {
                        Cell::Value(x) => x,
                        _ => unreachable!("complete rows hold values in continuous columns"),
                    })
                    .collect(),
            )
        };
        variables.push(spec.clone());
        columns.push(column);
    }
    if variables.is_empty() {
        return Err(Error::Schema("every variable was dropped".into()));
    }
    let row_ids = complete.iter().map(|&r| ids[r].clone()).collect();
    let dataset = MixedDataset::new(variables, columns, Some(row_ids))?;
    Ok(Loaded {
        dataset,
        dropped_rows,
        dropped_variables,
    })
}

/// Per-column transform applied by [`standardize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    pub fn invert(&self, column: usize, value: f64) -> f64 {
        value * self.sds[column] + self.means[column]
    }
}

/// Centres every continuous column and scales it to unit sample sd.
pub fn standardize(ds: &MixedDataset) -> Result<(MixedDataset, Standardization)> {
    let a = ds.n_continuous();
    if a == 0 {
        return Err(Error::Dimension("no continuous variables to standardize".into()));
    }
    let n = ds.n_obs();
    if n < 2 {
        return Err(Error::ZeroVariance(ds.variable(0).name.clone()));
    }
    let mut out = ds.clone();
    let mut means = Vec::with_capacity(a);
    let mut sds = Vec::with_capacity(a);
    for j in 0..a {
        let col = ds.continuous_column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if !(sd > 1e-300) || sd <= 1e-12 * mean.abs() {
            return Err(Error::ZeroVariance(ds.variable(j).name.clone()));
        }
        for i in 0..n {
            out.continuous[(i, j)] = (col[i] - mean) / sd;
        }
        means.push(mean);
        sds.push(sd);
    }
    let names = ds.variables[..a].iter().map(|v| v.name.clone()).collect();
    Ok((out, Standardization { names, means, sds }))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MergeRecord {
    pub variable: String,
    pub counts: Vec<usize>,
    pub action: String,
}

/// Collapses sparsely observed recessive homozygous genotypes into the
/// heterozygous level, turning the SNP into a binary variable.
///
/// Only 3-level nominal variables with the [`LevelRole::Genotype`] role are
/// considered; a variable merges when its recessive count is below
/// `threshold * N`.
pub fn merge_rare_levels(ds: &MixedDataset, threshold: f64) -> Result<(MixedDataset, Vec<MergeRecord>)> {
    let n = ds.n_obs() as f64;
    let mut log = Vec::new();
    let mut variables = Vec::with_capacity(ds.n_variables());
    let mut columns = Vec::with_capacity(ds.n_variables());
    for (j, spec) in ds.variables.iter().enumerate() {
        let mergeable = spec.kind == VariableKind::Nominal && spec.role == LevelRole::Genotype && spec.n_levels() == 3;
        if mergeable {
            let counts = ds.level_counts(j);
            if (counts[1] as f64) < threshold * n {
                let merged = format!("{}/{}", spec.levels[2], spec.levels[1]);
                let codes = ds.codes(j).iter().map(|&c| u32::from(c != 0)).collect();
                let new_spec = VariableSpec {
                    name: spec.name.clone(),
                    kind: VariableKind::Binary,
                    levels: vec![spec.levels[0].clone(), merged.clone()],
                    role: LevelRole::None,
                };
                log.push(MergeRecord {
                    variable: spec.name.clone(),
                    counts,
                    action: format!("merged to binary ({} | {merged})", spec.levels[0]),
                });
                variables.push(new_spec);
                columns.push(ColumnData::Codes(codes));
                continue;
            }
        }
        variables.push(spec.clone());
        columns.push(ds.column(j));
    }
    let merged = MixedDataset::new(variables, columns, Some(ds.row_ids.clone()))?;
    Ok((merged, log))
}

pub fn write_merge_log<W: Write>(log: &[MergeRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["variable", "count_0", "count_1", "count_2", "action"])?;
    for rec in log {
        let mut row = vec![rec.variable.clone()];
        row.extend(rec.counts.iter().map(|c| c.to_string()));
        row.push(rec.action.clone());
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema3() -> Schema {
        Schema::new(vec![
            VariableSpec::continuous("x"),
            VariableSpec::binary("b", ["no", "yes"]),
            VariableSpec::genotype("snp", ["GG", "CC", "CG"]),
        ])
    }

    #[test]
    fn loads_complete_file() {
        let text = "x,b,snp\n1.5,no,GG\n2.0,yes,CC\n-1,yes,CG\n";
        let loaded = read_csv(text.as_bytes(), &schema3(), &LoadOptions::default()).unwrap();
        assert_eq!(loaded.dataset.n_obs(), 3);
        assert_eq!(loaded.dropped_rows, 0);
        assert_eq!(loaded.dataset.codes(2), &[0, 1, 2]);
    }

    #[test]
    fn drops_incomplete_rows() {
        let text = "x,b,snp\n1.5,no,GG\n,yes,CC\n-1,yes,CG\n2,no,CC\n";
        let loaded = read_csv(text.as_bytes(), &schema3(), &LoadOptions::default()).unwrap();
        assert_eq!(loaded.dataset.n_obs(), 3);
        assert_eq!(loaded.dropped_rows, 1);
        assert_eq!(loaded.dataset.row_ids(), &["1", "3", "4"]);
    }

    #[test]
    fn unknown_level_is_an_error() {
        let text = "x,b,snp\n1.5,maybe,GG\n";
        let err = read_csv(text.as_bytes(), &schema3(), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownLevel { ref variable, .. } if variable == "b"));
    }

    #[test]
    fn header_mismatch() {
        let text = "x,b,other\n1,no,GG\n";
        let err = read_csv(text.as_bytes(), &schema3(), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch(_)));
    }

    #[test]
    fn all_rows_dropped() {
        let text = "x,b,snp\nNA,no,GG\n";
        let err = read_csv(text.as_bytes(), &schema3(), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset { dropped: 1 }));
    }

    #[test]
    fn unobserved_level_drops_variable() {
        let text = "x,b,snp\n1,no,GG\n2,yes,CG\n3,no,GG\n";
        let loaded = read_csv(text.as_bytes(), &schema3(), &LoadOptions::default()).unwrap();
        assert_eq!(loaded.dataset.n_variables(), 2);
        assert_eq!(loaded.dropped_variables[0].name, "snp");
    }

    #[test]
    fn missing_limit_drops_variable_not_rows() {
        let text = "x,b,snp\n1,no,GG\n2,NA,CC\n3,NA,CG\n4,yes,CG\n";
        let opts = LoadOptions {
            max_missing_per_categorical: Some(1),
            ..Default::default()
        };
        let loaded = read_csv(text.as_bytes(), &schema3(), &opts).unwrap();
        assert_eq!(loaded.dataset.n_obs(), 4);
        assert_eq!(loaded.dropped_variables[0].name, "b");
    }

    #[test]
    fn lipgene_shaped_layout() {
        let mut vars = Vec::new();
        vars.extend((0..26).map(|j| VariableSpec::continuous(format!("c{j}"))));
        vars.extend((0..371).map(|j| VariableSpec::binary(format!("b{j}"), ["0", "1"])));
        vars.extend((0..341).map(|j| VariableSpec::nominal(format!("n{j}"), &["0", "1", "2"])));
        let layout = LatentLayout::new(&vars);
        assert_eq!(layout.dim(), 26 + 371 + 2 * 341);
        assert_eq!(layout.dim(), 1079);
    }

    #[test]
    fn canonical_order_and_layout() {
        let vars = vec![
            VariableSpec::nominal("n", &["a", "b", "c", "d"]),
            VariableSpec::continuous("x"),
            VariableSpec::binary("b", ["0", "1"]),
        ];
        let cols = vec![
            ColumnData::Codes(vec![3, 0]),
            ColumnData::Continuous(vec![1.0, 2.0]),
            ColumnData::Codes(vec![1, 0]),
        ];
        let ds = MixedDataset::new(vars, cols, None).unwrap();
        let names: Vec<_> = ds.variables().iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["x", "b", "n"]);
        assert_eq!(ds.layout().dim(), 1 + 1 + 3);
        assert_eq!(ds.layout().slot(2), LatentSlot { offset: 2, width: 3 });
        assert_eq!(ds.codes(2), &[3, 0]);
    }

    #[test]
    fn standardize_simple_column() {
        let ds = MixedDataset::new(
            vec![VariableSpec::continuous("x")],
            vec![ColumnData::Continuous(vec![1.0, 2.0, 3.0])],
            None,
        )
        .unwrap();
        let (out, tr) = standardize(&ds).unwrap();
        assert_eq!(out.continuous_column(0), &[-1.0, 0.0, 1.0]);
        assert_eq!(tr.means, vec![2.0]);
        assert_eq!(tr.invert(0, 1.0), 3.0);
        let (again, _) = standardize(&out).unwrap();
        for (a, b) in again.continuous_column(0).iter().zip(out.continuous_column(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_constant_column() {
        let ds = MixedDataset::new(
            vec![VariableSpec::continuous("flat")],
            vec![ColumnData::Continuous(vec![10.0, 10.0, 10.0])],
            None,
        )
        .unwrap();
        assert!(matches!(standardize(&ds), Err(Error::ZeroVariance(v)) if v == "flat"));
    }

    fn genotype_dataset(counts: [usize; 3]) -> MixedDataset {
        let mut codes = Vec::new();
        for (level, &c) in counts.iter().enumerate() {
            codes.extend(std::iter::repeat_n(level as u32, c));
        }
        let n = codes.len();
        MixedDataset::new(
            vec![
                VariableSpec::continuous("x"),
                VariableSpec::genotype("snp", ["GG", "CC", "CG"]),
            ],
            vec![
                ColumnData::Continuous((0..n).map(|i| i as f64).collect()),
                ColumnData::Codes(codes),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn rare_recessive_merges_to_binary() {
        let ds = genotype_dataset([300, 30, 175]);
        assert_eq!(ds.n_obs(), 505);
        let (merged, log) = merge_rare_levels(&ds, 0.10).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].counts, vec![300, 30, 175]);
        let v = merged.variable(1);
        assert_eq!(v.kind, VariableKind::Binary);
        assert_eq!(v.levels, vec!["GG", "CG/CC"]);
        assert_eq!(merged.level_counts(1), vec![300, 205]);
        assert_eq!(merged.layout().dim(), 2);
        assert_eq!(merged.n_obs(), 505);
        assert_eq!(merged.continuous(), ds.continuous());
    }

    #[test]
    fn common_recessive_is_unchanged() {
        let ds = genotype_dataset([300, 100, 105]);
        let (merged, log) = merge_rare_levels(&ds, 0.10).unwrap();
        assert!(log.is_empty());
        assert_eq!(merged, ds);
    }

    #[test]
    fn merge_log_csv() {
        let ds = genotype_dataset([300, 30, 175]);
        let (_, log) = merge_rare_levels(&ds, 0.10).unwrap();
        let mut buf = Vec::new();
        write_merge_log(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("variable,count_0,count_1,count_2,action\nsnp,300,30,175,"));
    }

    #[test]
    fn schema_rejects_bad_kinds() {
        assert!(Schema::parse("[[variable]]\nname='b'\nkind='binary'\nlevels=['a']\n").is_err());
        assert!(Schema::parse("[[variable]]\nname='n'\nkind='nominal'\nlevels=['a','b']\n").is_err());
        assert!(Schema::parse("[[variable]]\nname='n'\nkind='nominal'\nlevels=['a','a','b']\n").is_err());
        let ok = Schema::parse(
            "id_column = 'pid'\n[[variable]]\nname='n'\nkind='nominal'\nlevels=['a','b','c']\nrole='genotype'\n",
        )
        .unwrap();
        assert_eq!(ok.variables[0].role, LevelRole::Genotype);
        assert_eq!(Schema::parse(&ok.to_toml_string()).unwrap(), ok);
    }
}
