use std::io::{Read, Write};
use std::path::Path;

use crate::data::DataError;
use crate::smiles::{parse_directional, write_smiles, MolecularGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    pub id: String,
    pub graph: MolecularGraph,
    pub smiles: String,
}

/// Molecules with a sparse `molecules × tasks` binary label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskDataset {
    molecules: Vec<Molecule>,
    labels: Vec<Vec<Option<bool>>>,
    task_names: Vec<String>,
}

impl MultiTaskDataset {
    /// Every molecule needs one label cell per task and at least one non-missing label.
    pub fn new(
        molecules: Vec<Molecule>,
        labels: Vec<Vec<Option<bool>>>,
        task_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if molecules.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        if labels.len() != molecules.len() {
            return Err(DataError::Malformed(format!(
                "{} label rows for {} molecules",
                labels.len(),
                molecules.len()
            )));
        }
        for (m, row) in molecules.iter().zip(&labels) {
            if row.len() != task_names.len() {
                return Err(DataError::Malformed(format!(
                    "molecule {} has {} labels for {} tasks",
                    m.id,
                    row.len(),
                    task_names.len()
                )));
            }
            if row.iter().all(Option::is_none) {
                return Err(DataError::Malformed(format!(
                    "molecule {} has no labels",
                    m.id
                )));
            }
        }
        Ok(MultiTaskDataset {
            molecules,
            labels,
            task_names,
        })
    }

    pub fn molecules(&self) -> &[Molecule] {
        &self.molecules
    }

    pub fn molecule(&self, i: usize) -> &Molecule {
        &self.molecules[i]
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn task_names(&self) -> &[String] {
        &self.task_names
    }

    pub fn task_count(&self) -> usize {
        self.task_names.len()
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.task_names.iter().position(|t| t == name)
    }

    pub fn label(&self, molecule: usize, task: usize) -> Option<bool> {
        self.labels[molecule][task]
    }

    /// Indices of molecules labeled `class` for `task`, ascending.
    pub fn class_members(&self, task: usize, class: bool) -> Vec<usize> {
        (0..self.molecules.len())
            .filter(|&m| self.labels[m][task] == Some(class))
            .collect()
    }

    /// CSV with `id`, `smiles` and one column per task (`0`, `1` or empty).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string(), "smiles".to_string()];
        header.extend(self.task_names.iter().cloned());
        w.write_record(&header)?;
        for (m, row) in self.molecules.iter().zip(&self.labels) {
            let mut rec = vec![m.id.clone(), m.smiles.clone()];
            rec.extend(row.iter().map(|l| match l {
                Some(true) => "1".to_string(),
                Some(false) => "0".to_string(),
                None => String::new(),
            }));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| DataError::Io {
            path: "<csv output>".into(),
            source: e,
        })
    }
}

/// Rebuilds a SMILES string for a generated graph.
pub(crate) fn smiles_of(graph: &MolecularGraph) -> Result<String, DataError> {
    write_smiles(graph).ok_or_else(|| DataError::Malformed("disconnected graph".into()))
}

/// Column selection for [`load_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadOptions {
    pub smiles_column: String,
    /// Explicit task columns; `None` takes every column whose cells are all `0`, `1` or empty.
    pub task_columns: Option<Vec<String>>,
    /// Identifier column; `None` uses `mol_id` or `id` when present, else `row<N>`.
    pub id_column: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            smiles_column: "smiles".into(),
            task_columns: None,
            id_column: None,
        }
    }
}

/// A row that was not turned into a molecule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowFailure {
    /// 1-based line number in the file, header being line 1.
    pub line: usize,
    pub reason: String,
}

/// Accounting of one ingestion: `rows == retained + failures + all_missing`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IngestReport {
    pub rows: usize,
    pub retained: usize,
    pub failures: Vec<RowFailure>,
    /// Rows that parsed but had no label in any task column.
    pub all_missing: usize,
}

impl IngestReport {
    pub fn is_conserved(&self) -> bool {
        self.rows == self.retained + self.failures.len() + self.all_missing
    }
}

fn parse_label(cell: &str) -> Result<Option<bool>, ()> {
    match cell.trim() {
        "" => Ok(None),
        "0" | "0.0" => Ok(Some(false)),
        "1" | "1.0" => Ok(Some(true)),
        _ => Err(()),
    }
}

pub fn load_dataset(
    path: &Path,
    opts: &LoadOptions,
) -> Result<(MultiTaskDataset, IngestReport), DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_dataset(file, opts)
}

/// [`load_dataset`] over any reader.
pub fn read_dataset<R: Read>(
    input: R,
    opts: &LoadOptions,
) -> Result<(MultiTaskDataset, IngestReport), DataError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let smiles_col = column(&opts.smiles_column)?;
    let id_col = match &opts.id_column {
        Some(name) => Some(column(name)?),
        None => header.iter().position(|h| h == "mol_id" || h == "id"),
    };
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;

    let task_cols: Vec<usize> = match &opts.task_columns {
        Some(names) => names.iter().map(|n| column(n)).collect::<Result<_, _>>()?,
        None => (0..header.len())
            .filter(|&c| c != smiles_col && Some(c) != id_col)
            .filter(|&c| {
                records
                    .iter()
                    .all(|r| parse_label(r.get(c).unwrap_or("")).is_ok())
            })
            .collect(),
    };
    let task_names: Vec<String> = task_cols.iter().map(|&c| header[c].clone()).collect();

    let mut report = IngestReport {
        rows: records.len(),
        ..IngestReport::default()
    };
    let mut molecules = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let line = i + 2;
        let fail = |reason: String| RowFailure { line, reason };
        let smiles = rec.get(smiles_col).unwrap_or("").trim();
        let graph = match parse_directional(smiles) {
            Ok(g) => g,
            Err(e) => {
                report.failures.push(fail(format!("{smiles:?}: {e}")));
                continue;
            }
        };
        let row: Result<Vec<Option<bool>>, String> = task_cols
            .iter()
            .map(|&c| {
                let cell = rec.get(c).unwrap_or("");
                parse_label(cell).map_err(|_| format!("column {}: bad label {cell:?}", header[c]))
            })
            .collect();
        let row = match row {
            Ok(r) => r,
            Err(reason) => {
                report.failures.push(fail(reason));
                continue;
            }
        };
        if row.iter().all(Option::is_none) {
            report.all_missing += 1;
            continue;
        }
        let id = match id_col.and_then(|c| rec.get(c)) {
            Some(id) if !id.trim().is_empty() => id.trim().to_string(),
            _ => format!("row{}", i + 1),
        };
        molecules.push(Molecule {
            id,
            graph,
            smiles: smiles.to_string(),
        });
        labels.push(row);
    }
    report.retained = molecules.len();
    let dataset = MultiTaskDataset::new(molecules, labels, task_names)?;
    Ok((dataset, report))
}

/// Train and test task indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSplit {
    pub train_task_ids: Vec<usize>,
    pub test_task_ids: Vec<usize>,
}

/// Tasks named in `test_names` become test tasks; all others train.
pub fn split_tasks<S: AsRef<str>>(
    dataset: &MultiTaskDataset,
    test_names: &[S],
) -> Result<TaskSplit, DataError> {
    let mut test = Vec::new();
    for name in test_names {
        let name = name.as_ref();
        let id = dataset
            .task_index(name)
            .ok_or_else(|| DataError::UnknownTaskName(name.to_string()))?;
        if !test.contains(&id) {
            test.push(id);
        }
    }
    if test.is_empty() {
        return Err(DataError::Malformed("test split is empty".into()));
    }
    let train = (0..dataset.task_count())
        .filter(|t| !test.contains(t))
        .collect();
    Ok(TaskSplit {
        train_task_ids: train,
        test_task_ids: test,
    })
}
