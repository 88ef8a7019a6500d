//! CSV ingestion, the synthetic corpus generator, the read-only transaction
//! store and model files.

mod store;
mod synth;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectorError, TreeEnsemble};
use crate::domain::{validate_transaction, ClusterClass, Transaction, KEY_FIELDS};

pub use store::{ClusterMap, TransactionStore};
pub use synth::{generate_synthetic, price_at, GeneratorConfig, SyntheticDataset};

pub const CSV_COLUMNS: [&str; 8] = [
    "tx_id",
    "timestamp",
    "receiving_address",
    "counterparty_address",
    "value_btc",
    "usd_value",
    "direction",
    "label",
];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {detail}")]
    FileUnreadable { path: String, detail: String },
    #[error("cannot write {path}: {detail}")]
    FileUnwritable { path: String, detail: String },
    #[error("CSV header is missing or lacks columns {0:?}")]
    MissingHeader(Vec<String>),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] DetectorError),
}

/// Rows read and rows dropped per rejection reason.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub dropped: BTreeMap<String, usize>,
}

fn unreadable(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::FileUnreadable { path: path.display().to_string(), detail: e.to_string() }
}

fn unwritable(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::FileUnwritable { path: path.display().to_string(), detail: e.to_string() }
}

/// Loads a transaction CSV, dropping invalid rows. Values are never filtered.
pub fn load_csv(path: &Path) -> Result<(Vec<Transaction>, IngestReport), DataError> {
    let file = File::open(path).map_err(|e| unreadable(path, e))?;
    read_csv(file).map_err(|e| match e {
        DataError::FileUnreadable { detail, .. } => unreadable(path, detail),
        other => other,
    })
}

pub fn read_csv<R: Read>(reader: R) -> Result<(Vec<Transaction>, IngestReport), DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) if !(h.is_empty() || h.len() == 1 && h[0].is_empty()) => h.clone(),
        Ok(_) => return Err(DataError::MissingHeader(KEY_FIELDS.iter().map(|s| s.to_string()).collect())),
        Err(e) => return Err(DataError::FileUnreadable { path: String::new(), detail: e.to_string() }),
    };
    let missing: Vec<String> =
        KEY_FIELDS.iter().filter(|k| !headers.iter().any(|h| h == **k)).map(|s| s.to_string()).collect();
    if !missing.is_empty() {
        return Err(DataError::MissingHeader(missing));
    }

    let mut report = IngestReport::default();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::FileUnreadable { path: String::new(), detail: e.to_string() })?;
        report.rows_read += 1;
        let raw: BTreeMap<String, String> =
            headers.iter().zip(record.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect();
        match validate_transaction(&raw) {
            Ok(tx) => out.push(tx),
            Err(e) => *report.dropped.entry(e.primary_reason().to_string()).or_default() += 1,
        }
    }
    report.rows_kept = out.len();
    Ok((out, report))
}

fn io_to_data(path: &Path) -> impl Fn(io::Error) -> DataError + '_ {
    move |e| unwritable(path, e)
}

pub fn write_csv_to<W: Write>(writer: W, transactions: &[Transaction]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_COLUMNS)?;
    for tx in transactions {
        w.write_record([
            tx.tx_id.as_str(),
            &tx.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, false),
            &tx.receiving_address,
            &tx.counterparty_address,
            &tx.value_btc.to_string(),
            &tx.usd_value.to_string(),
            tx.direction.as_str(),
            tx.label.as_str(),
        ])?;
    }
    w.flush()
}

pub fn write_csv(path: &Path, transactions: &[Transaction]) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_to_data(path))?;
    write_csv_to(io::BufWriter::new(file), transactions).map_err(io_to_data(path))
}

pub fn save_model(model: &TreeEnsemble, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, model.to_json()).map_err(io_to_data(path))
}

/// Reads a model file; format and structure problems surface as model errors.
pub fn load_model(path: &Path) -> Result<TreeEnsemble, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| unreadable(path, e))?;
    Ok(TreeEnsemble::from_json(&text)?)
}

/// `address,cluster` rows; unknown class names are skipped.
pub fn read_clusters<R: Read>(reader: R) -> Result<ClusterMap, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut map = ClusterMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::FileUnreadable { path: String::new(), detail: e.to_string() })?;
        if let (Some(addr), Some(class)) = (record.get(0), record.get(1).and_then(ClusterClass::parse)) {
            map.insert(addr.to_string(), class);
        }
    }
    Ok(map)
}

pub fn load_clusters(path: &Path) -> Result<ClusterMap, DataError> {
    read_clusters(File::open(path).map_err(|e| unreadable(path, e))?)
}

pub fn write_clusters(path: &Path, clusters: &ClusterMap) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| unwritable(path, e))?;
    w.write_record(["address", "cluster"]).map_err(|e| unwritable(path, e))?;
    for (addr, class) in clusters {
        w.write_record([addr.as_str(), class.as_str()]).map_err(|e| unwritable(path, e))?;
    }
    w.flush().map_err(io_to_data(path))
}

/// Allow-list and cluster files stored next to a dataset CSV.
pub fn companion_paths(csv_path: &Path) -> (PathBuf, PathBuf) {
    let stem = csv_path.with_extension("");
    let name = |suffix: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    (name(".allowlist.txt"), name(".clusters.csv"))
}

/// Writes the CSV with its allow-list and cluster companions.
pub fn write_dataset(csv_path: &Path, dataset: &SyntheticDataset) -> Result<(), DataError> {
    write_csv(csv_path, &dataset.transactions)?;
    let (allow, clusters) = companion_paths(csv_path);
    std::fs::write(&allow, dataset.allowlist.to_text()).map_err(io_to_data(&allow))?;
    write_clusters(&clusters, &dataset.clusters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Direction, Label};

    const HEADER: &str = "tx_id,timestamp,receiving_address,counterparty_address,value_btc,usd_value,direction,label\n";

    #[test]
    fn drops_rows_missing_counterparty() {
        let mut text = HEADER.to_string();
        for i in 0..10 {
            let cp = if i < 2 { "" } else { "bc1qcounterparty" };
            text.push_str(&format!("t{i},2021-03-01T10:00:00+00:00,1Wallet9,{cp},0.1,3000,outgoing,normal\n"));
        }
        let (txs, report) = read_csv(text.as_bytes()).unwrap();
        assert_eq!(txs.len(), 8);
        assert_eq!(report.dropped, BTreeMap::from([("MissingField".to_string(), 2)]));
        assert_eq!((report.rows_read, report.rows_kept), (10, 8));
    }

    #[test]
    fn extreme_values_are_kept() {
        let text = format!("{HEADER}t,2021-03-01T10:00:00+00:00,1Wallet9,bc1q9,20000,1000000000,incoming,anomalous\n");
        let (txs, _) = read_csv(text.as_bytes()).unwrap();
        assert_eq!(txs[0].usd_value, 1e9);
        assert_eq!(txs[0].label, Label::Anomalous);
    }

    #[test]
    fn header_only_is_empty() {
        let (txs, report) = read_csv(HEADER.as_bytes()).unwrap();
        assert!(txs.is_empty());
        assert_eq!(report, IngestReport::default());
    }

    #[test]
    fn missing_header() {
        assert!(matches!(read_csv("".as_bytes()), Err(DataError::MissingHeader(_))));
        assert!(matches!(read_csv("a,b\n1,2\n".as_bytes()), Err(DataError::MissingHeader(m)) if m.len() == 5));
    }

    #[test]
    fn round_trip() {
        let text = format!(
            "{HEADER}t1,2021-03-01T23:10:05+09:00,1Wallet9,bc1q9,0.12345678,3702.11,outgoing,normal\n\
             t2,2021-03-02T01:00:00.5+00:00,1Wallet9,\"bc1q,quoted\",1e-8,0.1,incoming,unlabeled\n"
        );
        let (txs, _) = read_csv(text.as_bytes()).unwrap();
        assert_eq!(txs[1].counterparty_address, "bc1q,quoted");
        assert_eq!(txs[1].direction, Direction::Incoming);
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &txs).unwrap();
        let (back, _) = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, txs);
    }

    #[test]
    fn unreadable_file() {
        assert!(matches!(load_csv(Path::new("/nonexistent/x.csv")), Err(DataError::FileUnreadable { .. })));
    }

    #[test]
    fn companion_names() {
        let (a, c) = companion_paths(Path::new("/d/data.csv"));
        assert_eq!(a, Path::new("/d/data.allowlist.txt"));
        assert_eq!(c, Path::new("/d/data.clusters.csv"));
    }
}
