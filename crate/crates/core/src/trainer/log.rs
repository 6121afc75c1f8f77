use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use super::{Result, TrainError};

pub const LOG_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_acc";

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

pub fn format_record(r: &EpochRecord) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6}",
        r.epoch, r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy
    )
}

/// Appends one row, writing the header first when the file is new or empty.
pub fn log_epoch(record: &EpochRecord, csv_path: &Path) -> Result<()> {
    let io = |source| TrainError::Io {
        path: csv_path.to_path_buf(),
        source,
    };
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(csv_path)
        .map_err(io)?;
    let mut text = String::new();
    if f.metadata().map_err(io)?.len() == 0 {
        text.push_str(LOG_HEADER);
        text.push('\n');
    }
    text.push_str(&format_record(record));
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(io)
}

/// Parses a log written by [`log_epoch`].
pub fn read_log(csv_path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(csv_path).map_err(|source| TrainError::Io {
        path: csv_path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(TrainError::Contract(format!(
            "{}: missing header `{LOG_HEADER}`",
            csv_path.display()
        )));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || TrainError::Contract(format!("{}: bad row {}", csv_path.display(), i + 2));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(bad());
            }
            let f = |k: usize| cols[k].parse::<f64>().map_err(|_| bad());
            Ok(EpochRecord {
                epoch: cols[0].parse().map_err(|_| bad())?,
                train_loss: f(1)?,
                train_accuracy: f(2)?,
                test_loss: f(3)?,
                test_accuracy: f(4)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 0.5,
            train_accuracy: 0.75,
            test_loss: 0.6,
            test_accuracy: 0.7,
        }
    }

    #[test]
    fn row_format() {
        assert_eq!(format_record(&rec(1)), "1,0.500000,0.750000,0.600000,0.700000");
    }

    #[test]
    fn header_once_then_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        log_epoch(&rec(1), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{LOG_HEADER}\n1,0.500000,0.750000,0.600000,0.700000\n"));
        for e in 2..=50 {
            log_epoch(&rec(e), &path).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 51);
        assert!(text.ends_with('\n') && !text.contains('\r'));
        let parsed = read_log(&path).unwrap();
        assert_eq!(parsed.len(), 50);
        assert_eq!(parsed[49].epoch, 50);
    }

    #[test]
    fn missing_parent_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope").join("log.csv");
        assert!(matches!(log_epoch(&rec(1), &path), Err(TrainError::Io { .. })));
    }
}
