use std::collections::BTreeMap;

use chrono::{DateTime, Duration, FixedOffset};

use crate::domain::{ClusterClass, Filter, ParsedIntent, Transaction};
use crate::features::{AllowList, WalletIndex};
use crate::intent::address_matches;

pub type ClusterMap = BTreeMap<String, ClusterClass>;

/// Read-only corpus that window and point queries resolve against.
#[derive(Debug, Clone, Default)]
pub struct TransactionStore {
    transactions: Vec<Transaction>,
    index: WalletIndex,
    clusters: ClusterMap,
    allowlist: AllowList,
}

/// Quantile of `values` by linear interpolation between order statistics.
fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

fn within(actual: f64, expected: f64, relative: f64) -> bool {
    (actual - expected).abs() <= relative * expected.abs().max(1e-12)
}

impl TransactionStore {
    pub fn new(mut transactions: Vec<Transaction>, clusters: ClusterMap, allowlist: AllowList) -> Self {
        transactions.sort_by(|a, b| a.utc().cmp(&b.utc()).then_with(|| a.tx_id.cmp(&b.tx_id)));
        let index = WalletIndex::new(&transactions);
        TransactionStore { transactions, index, clusters, allowlist }
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    pub fn index(&self) -> &WalletIndex {
        &self.index
    }

    pub fn allowlist(&self) -> &AllowList {
        &self.allowlist
    }

    /// Untagged counterparties count as `unknown`.
    pub fn cluster_of(&self, address: &str) -> ClusterClass {
        self.clusters.get(address).copied().unwrap_or(ClusterClass::Unknown)
    }

    /// The stored record a point query describes: same minute, matching
    /// addresses, and amounts within 1%.
    pub fn find_point(&self, intent: &ParsedIntent) -> Option<&Transaction> {
        let date = intent.date?;
        self.transactions.iter().find(|tx| {
            (tx.utc() - date.to_utc()).num_seconds().abs() < 60
                && intent.receiving_address.as_deref().is_none_or(|p| address_matches(p, &tx.receiving_address))
                && intent.counterparty_address.as_deref().is_none_or(|p| address_matches(p, &tx.counterparty_address))
                && intent.value.is_none_or(|v| within(tx.value_btc, v, 0.01))
                && intent.usd_value.is_none_or(|v| within(tx.usd_value, v, 0.01))
        })
    }

    /// Records of the queried wallet in `(now - day_range, now]`, narrowed by
    /// the intent's counterparty and filters. No range means all history up
    /// to `now`.
    pub fn window(&self, intent: &ParsedIntent, now: DateTime<FixedOffset>) -> Vec<Transaction> {
        let end = now.to_utc();
        let start = intent.day_range.map(|d| end - Duration::days(i64::from(d)));
        let selected = self
            .transactions
            .iter()
            .filter(|tx| {
                let t = tx.utc();
                t <= end && start.is_none_or(|s| t > s)
            })
            .filter(|tx| intent.receiving_address.as_deref().is_none_or(|p| address_matches(p, &tx.receiving_address)))
            .filter(|tx| {
                intent.counterparty_address.as_deref().is_none_or(|p| address_matches(p, &tx.counterparty_address))
            })
            .cloned()
            .collect();
        self.apply_filters(selected, &intent.filters)
    }

    /// Applies filters in order; each can only remove rows.
    pub fn apply_filters(&self, mut rows: Vec<Transaction>, filters: &[Filter]) -> Vec<Transaction> {
        for filter in filters {
            match filter {
                Filter::ClusterClass(c) => rows.retain(|tx| self.cluster_of(&tx.counterparty_address) == *c),
                Filter::MinUsdValue(v) => rows.retain(|tx| tx.usd_value >= *v),
                Filter::MaxUsdValue(v) => rows.retain(|tx| tx.usd_value <= *v),
                Filter::UsdPercentileAbove(q) => {
                    let values: Vec<f64> = rows.iter().map(|tx| tx.usd_value).collect();
                    if let Some(cut) = quantile(&values, *q) {
                        rows.retain(|tx| tx.usd_value > cut);
                    }
                }
                Filter::Direction(d) => rows.retain(|tx| tx.direction == *d),
                Filter::UnverifiedCounterparty => rows.retain(|tx| !self.allowlist.contains(&tx.counterparty_address)),
            }
        }
        rows
    }
}
