//! CSV datasets (`time,event,center,x0..x{P-1}`) and atomic file output.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::federated::FederatedPartition;
use crate::survival::{Dataset, Individual};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("`{}` is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn csv_error(row: usize, message: impl Into<String>) -> Error {
    Error::Csv {
        row,
        message: message.into(),
    }
}

/// Parses a dataset; rows are numbered from 1 for the first line after
/// the header. Center ids are arbitrary strings, numbered in sorted order
/// (numerically when they are all integers).
pub fn parse_csv_dataset(text: &str) -> Result<(Dataset, FederatedPartition, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(0, e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| csv_error(0, format!("missing column `{name}`")))
    };
    let time_col = column("time")?;
    let event_col = column("event")?;
    let center_col = column("center")?;
    let mut covariate_cols = Vec::new();
    while let Some(pos) = headers.iter().position(|h| h == format!("x{}", covariate_cols.len())) {
        covariate_cols.push(pos);
    }
    if covariate_cols.is_empty() {
        return Err(csv_error(0, "missing column `x0`"));
    }
    if let Some(extra) = headers
        .iter()
        .enumerate()
        .find(|(i, _)| *i != time_col && *i != event_col && *i != center_col && !covariate_cols.contains(i))
    {
        return Err(csv_error(0, format!("unexpected column `{}`", extra.1)));
    }

    let mut individuals = Vec::new();
    let mut center_labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| csv_error(row, e.to_string()))?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let parse = |col: usize, what: &str| -> Result<f64> {
            let raw = field(col);
            let value: f64 = raw
                .parse()
                .map_err(|_| csv_error(row, format!("non-numeric {what} `{raw}`")))?;
            if !value.is_finite() {
                return Err(csv_error(row, format!("non-finite {what} `{raw}`")));
            }
            Ok(value)
        };
        let time = parse(time_col, "time")?;
        if time < 0.0 {
            return Err(csv_error(row, format!("negative time {time}")));
        }
        let event = match field(event_col) {
            "0" => false,
            "1" => true,
            other => return Err(csv_error(row, format!("event must be 0 or 1, got `{other}`"))),
        };
        let center = field(center_col);
        if center.is_empty() {
            return Err(csv_error(row, "empty center id"));
        }
        let covariates = covariate_cols
            .iter()
            .enumerate()
            .map(|(j, &col)| parse(col, &format!("covariate x{j}")))
            .collect::<Result<Vec<_>>>()?;
        individuals.push(Individual::new(covariates, time, event).map_err(|e| csv_error(row, e.to_string()))?);
        center_labels.push(center.to_string());
    }
    if individuals.is_empty() {
        return Err(csv_error(0, "no data rows"));
    }
    let names: Vec<String> = {
        let mut names: Vec<&str> = center_labels.iter().map(String::as_str).collect();
        // numeric ids sort numerically so that written files read back unchanged
        if names.iter().all(|n| n.parse::<u64>().is_ok()) {
            names.sort_unstable_by_key(|n| (n.parse::<u64>().expect("checked"), n.len()));
        } else {
            names.sort_unstable();
        }
        names.dedup();
        names.into_iter().map(str::to_string).collect()
    };
    let ids: HashMap<&str, usize> = names.iter().enumerate().map(|(k, n)| (n.as_str(), k)).collect();
    let assignments: Vec<usize> = center_labels.iter().map(|c| ids[c.as_str()]).collect();
    let partition = FederatedPartition::new(assignments, names.len())?;
    Ok((Dataset::new(individuals)?, partition, names))
}

pub fn load_csv_dataset(path: &Path) -> Result<(Dataset, FederatedPartition)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (data, partition, _) = parse_csv_dataset(&text)?;
    Ok((data, partition))
}

/// Serializes with shortest round-trip float formatting; centers are
/// written as their numeric index.
pub fn dataset_to_csv(data: &Dataset, partition: &FederatedPartition) -> Result<String> {
    if partition.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            found: partition.len(),
        });
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time".to_string(), "event".to_string(), "center".to_string()];
    header.extend((0..data.dim()).map(|j| format!("x{j}")));
    let to_csv = |e: csv::Error| Error::Csv {
        row: 0,
        message: e.to_string(),
    };
    writer.write_record(&header).map_err(to_csv)?;
    for (i, ind) in data.individuals().iter().enumerate() {
        let mut record = vec![
            ind.time.to_string(),
            u8::from(ind.event).to_string(),
            partition.center_of(i).to_string(),
        ];
        record.extend(ind.covariates.iter().map(f64::to_string));
        writer.write_record(&record).map_err(to_csv)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::InvalidValue(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv_dataset(path: &Path, data: &Dataset, partition: &FederatedPartition) -> Result<()> {
    write_atomic(path, dataset_to_csv(data, partition)?.as_bytes())
}
