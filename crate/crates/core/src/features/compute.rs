use std::collections::{BTreeSet, HashMap};

use chrono::{DateTime, Datelike, Duration, TimeZone, Timelike, Utc};

use super::{AllowList, CounterpartyGraph, FeatureSchema, FeatureVector};
use crate::domain::{Direction, Transaction};

/// Longest trailing window any feature reads.
pub const HISTORY_WINDOW_DAYS: i64 = 30;

/// Train/test boundary: 2023-01-01T00:00:00Z.
pub fn default_split_boundary() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap()
}

/// Share of `window` strictly below `value`; 0.5 for an empty window.
pub fn percentile_rank(value: f64, window: &[f64]) -> f64 {
    if window.is_empty() {
        return 0.5;
    }
    let below = window.iter().filter(|w| **w < value).count();
    below as f64 / window.len() as f64
}

/// Partitions by timestamp: strictly before `boundary` is train.
pub fn temporal_split(
    dataset: impl IntoIterator<Item = Transaction>,
    boundary: DateTime<Utc>,
) -> (Vec<Transaction>, Vec<Transaction>) {
    dataset.into_iter().partition(|t| t.utc() < boundary)
}

fn is_off_peak(hour: u32) -> bool {
    !(6..22).contains(&hour)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Sample standard deviation; zero below two samples.
fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

fn wallet_window<'a>(tx: &Transaction, history: &'a [Transaction], window: Duration) -> Vec<&'a Transaction> {
    let t = tx.utc();
    let start = t - window;
    let mut out: Vec<&Transaction> = history
        .iter()
        .filter(|h| h.receiving_address == tx.receiving_address)
        .filter(|h| {
            let ht = h.utc();
            ht < t && ht > start
        })
        .collect();
    // Canonical order keeps float sums independent of input order.
    out.sort_by(|a, b| a.utc().cmp(&b.utc()).then_with(|| a.tx_id.cmp(&b.tx_id)));
    out
}

/// Prior transfers in the trailing hour within ±1% of this USD value.
pub fn equal_value_burst(tx: &Transaction, history: &[Transaction]) -> usize {
    let tolerance = 0.01 * tx.usd_value;
    wallet_window(tx, history, Duration::hours(1))
        .into_iter()
        .filter(|h| (h.usd_value - tx.usd_value).abs() <= tolerance)
        .count()
}

/// Computes the schema's features for `tx`.
///
/// Only `history` entries of the same wallet strictly earlier than `tx` are
/// read; windows are half-open `(t - W, t)` and times are taken in the
/// record's own offset. Panics on a schema that fails
/// [`FeatureSchema::validate`].
pub fn compute_features(
    schema: &FeatureSchema,
    tx: &Transaction,
    history: &[Transaction],
    graph: &CounterpartyGraph,
    allowlist: &AllowList,
) -> FeatureVector {
    let window_30d = wallet_window(tx, history, Duration::days(HISTORY_WINDOW_DAYS));
    let window_7d: Vec<&Transaction> = window_30d
        .iter()
        .copied()
        .filter(|h| h.utc() > tx.utc() - Duration::days(7))
        .collect();
    let usd_30d: Vec<f64> = window_30d.iter().map(|h| h.usd_value).collect();
    let usd_7d: Vec<f64> = window_7d.iter().map(|h| h.usd_value).collect();
    let local = tx.timestamp;
    let degree = graph.degree(&tx.counterparty_address);

    let values = schema
        .names
        .iter()
        .map(|name| match name.as_str() {
            "value_btc" => tx.value_btc,
            "usd_value" => tx.usd_value,
            "log1p_usd_value" => tx.usd_value.ln_1p(),
            "hour_of_day" => local.hour() as f64,
            "is_off_peak" => is_off_peak(local.hour()) as u8 as f64,
            "day_of_week" => local.weekday().num_days_from_monday() as f64,
            "direction_out" => (tx.direction == Direction::Outgoing) as u8 as f64,
            "value_pctile_30d" => percentile_rank(tx.usd_value, &usd_30d),
            "tx_count_24h" => window_7d.iter().filter(|h| h.utc() > tx.utc() - Duration::hours(24)).count() as f64,
            "tx_count_7d" => window_7d.len() as f64,
            "mean_usd_7d" => mean(&usd_7d),
            "std_usd_7d" => std_dev(&usd_7d),
            "unique_counterparties_7d" => {
                window_7d.iter().map(|h| h.counterparty_address.as_str()).collect::<BTreeSet<_>>().len() as f64
            }
            "counterparty_in_degree" => degree.in_degree as f64,
            "counterparty_out_degree" => degree.out_degree as f64,
            "counterparty_verified" => allowlist.contains(&tx.counterparty_address) as u8 as f64,
            "equal_value_burst" => equal_value_burst(tx, history) as f64,
            other => panic!("feature {other:?} is not computable"),
        })
        .collect();

    FeatureVector { schema_version: schema.version, values }
}

/// Per-wallet histories sorted by time, for windowed lookups.
#[derive(Debug, Clone, Default)]
pub struct WalletIndex {
    by_wallet: HashMap<String, Vec<Transaction>>,
}

impl WalletIndex {
    pub fn new<'a>(transactions: impl IntoIterator<Item = &'a Transaction>) -> Self {
        let mut by_wallet: HashMap<String, Vec<Transaction>> = HashMap::new();
        for tx in transactions {
            by_wallet.entry(tx.receiving_address.clone()).or_default().push(tx.clone());
        }
        for txs in by_wallet.values_mut() {
            txs.sort_by(|a, b| a.utc().cmp(&b.utc()).then_with(|| a.tx_id.cmp(&b.tx_id)));
        }
        WalletIndex { by_wallet }
    }

    pub fn wallet(&self, address: &str) -> &[Transaction] {
        self.by_wallet.get(address).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn wallets(&self) -> impl Iterator<Item = &str> {
        self.by_wallet.keys().map(String::as_str)
    }

    /// The wallet's records in the feature window strictly before `tx`.
    pub fn history_before(&self, tx: &Transaction) -> &[Transaction] {
        let txs = self.wallet(&tx.receiving_address);
        let t = tx.utc();
        let start = t - Duration::days(HISTORY_WINDOW_DAYS);
        let hi = txs.partition_point(|h| h.utc() < t);
        let lo = txs[..hi].partition_point(|h| h.utc() <= start);
        &txs[lo..hi]
    }
}
