//! Long-format CSV ingestion: one `group,value` record per row, groups
//! ordered by first appearance.

use std::fs;
use std::path::{Path, PathBuf};

use warpfit::{Sample, SampleSet};

use crate::CliError;

/// A parsed input file: the group ids in first-appearance order and the
/// grouped samples in the same order.
#[derive(Debug)]
pub struct Dataset {
    pub groups: Vec<String>,
    pub data: SampleSet,
    pub source: PathBuf,
    pub rows: usize,
}

impl Dataset {
    pub fn group_index(&self, id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == id)
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, path)
}

fn parse_dataset(text: &str, source: &Path) -> Result<Dataset, CliError> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Format("empty file, expected header `group,value`".to_string()))?
        .1
        .trim();
    if header != "group,value" {
        return Err(CliError::Format(format!(
            "expected header `group,value`, found `{header}`"
        )));
    }

    let mut groups: Vec<String> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut rows = 0usize;
    for (index, raw) in lines {
        let line = index + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let (group, value_text) = row.split_once(',').ok_or_else(|| CliError::Parse {
            line,
            message: format!("expected `group,value`, found `{row}`"),
        })?;
        let group = group.trim();
        if group.is_empty() {
            return Err(CliError::Parse {
                line,
                message: "empty group id".to_string(),
            });
        }
        let value: f64 = value_text.trim().parse().map_err(|_| CliError::Parse {
            line,
            message: format!("cannot parse value `{}`", value_text.trim()),
        })?;
        if !value.is_finite() {
            return Err(CliError::Parse {
                line,
                message: format!("value `{}` is not finite", value_text.trim()),
            });
        }
        let slot = match groups.iter().position(|g| g == group) {
            Some(i) => i,
            None => {
                groups.push(group.to_string());
                values.push(Vec::new());
                groups.len() - 1
            }
        };
        values[slot].push(value);
        rows += 1;
    }

    if groups.len() < 2 {
        return Err(CliError::Domain(format!(
            "need at least 2 groups, found {}",
            groups.len()
        )));
    }
    let samples = values
        .into_iter()
        .map(Sample::new)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        groups,
        data: SampleSet::new(samples)?,
        source: source.to_path_buf(),
        rows,
    })
}
