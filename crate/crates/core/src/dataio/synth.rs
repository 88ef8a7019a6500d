use std::f64::consts::TAU;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, NaiveTime, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClusterMap, DataError};
use crate::domain::{ClusterClass, Direction, Label, Transaction};
use crate::features::AllowList;

const BASE58: &[u8] = b"123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";
const BECH32: &[u8] = b"qpzry9x8gf2tvdw0s3jn54khce6mua7l";
const WALLET_OFFSETS_HOURS: [i32; 7] = [-8, -5, 0, 1, 2, 8, 9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_transactions: usize,
    pub anomaly_rate: f64,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub n_wallets: usize,
    pub n_verified_counterparties: usize,
    pub burst_size_min: usize,
    pub burst_size_max: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 7,
            n_transactions: 20_000,
            anomaly_rate: 0.178,
            start: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2024, 12, 31).unwrap(),
            n_wallets: 200,
            n_verified_counterparties: 60,
            burst_size_min: 5,
            burst_size_max: 20,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if self.n_transactions == 0 {
            return fail("n_transactions must be positive");
        }
        if !(self.anomaly_rate > 0.0 && self.anomaly_rate < 1.0) {
            return fail("anomaly_rate must lie in (0, 1)");
        }
        if self.end <= self.start {
            return fail("end date must follow start date");
        }
        if self.n_wallets == 0 || self.n_verified_counterparties == 0 {
            return fail("n_wallets and n_verified_counterparties must be positive");
        }
        if self.burst_size_min == 0 || self.burst_size_max < self.burst_size_min {
            return fail("burst size range must be non-empty and positive");
        }
        Ok(())
    }

    /// Exact number of anomalous rows: round(rate × n).
    pub fn anomaly_count(&self) -> usize {
        (self.anomaly_rate * self.n_transactions as f64).round() as usize
    }
}

/// Generated rows plus the side tables that make them queryable.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub transactions: Vec<Transaction>,
    pub allowlist: AllowList,
    pub clusters: ClusterMap,
}

/// Smooth synthetic BTC/USD price, in USD.
pub fn price_at(t: DateTime<Utc>) -> f64 {
    let years = (t - Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()).num_seconds() as f64 / (365.25 * 86_400.0);
    30_000.0 * (0.6 * (TAU * years / 4.0).sin() + 0.15 * (TAU * 1.7 * years).sin()).exp()
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

fn random_address(rng: &mut ChaCha8Rng, prefix: &str, alphabet: &[u8], len: usize) -> String {
    let mut s = String::from(prefix);
    s.extend((0..len).map(|_| *alphabet.choose(rng).unwrap() as char));
    s
}

fn fresh_counterparty(rng: &mut ChaCha8Rng) -> String {
    random_address(rng, "bc1q", BECH32, 38)
}

fn tx_id(seed: u64, i: usize) -> String {
    hex::encode(Sha256::digest(format!("{seed}:{i}")))
}

struct Wallet {
    address: String,
    offset: FixedOffset,
    regulars: Vec<String>,
}

struct Generator {
    rng: ChaCha8Rng,
    start: DateTime<Utc>,
    span_secs: i64,
}

impl Generator {
    fn day_time(&mut self, hour: u32) -> NaiveTime {
        NaiveTime::from_hms_opt(hour, self.rng.random_range(0..60), self.rng.random_range(0..60)).unwrap()
    }

    /// A local timestamp at `hour` on a random day, kept inside the span
    /// with `room` seconds to spare.
    fn local_at(&mut self, offset: FixedOffset, hour: u32, room: i64) -> DateTime<FixedOffset> {
        let time = self.day_time(hour);
        loop {
            let day = self.rng.random_range(0..self.span_secs / 86_400 + 1);
            let date = (self.start + Duration::days(day)).with_timezone(&offset).date_naive();
            let t = offset.from_local_datetime(&date.and_time(time)).unwrap();
            let secs = (t.to_utc() - self.start).num_seconds();
            if secs >= 0 && secs + room <= self.span_secs {
                return t;
            }
        }
    }

    fn daytime_hour(&mut self) -> u32 {
        if self.rng.random_bool(0.06) {
            self.rng.random_range(0..24)
        } else {
            self.rng.random_range(8..20)
        }
    }

    fn night_hour(&mut self) -> u32 {
        if self.rng.random_bool(0.85) {
            *[22, 23, 0, 1, 2, 3, 4, 5].choose(&mut self.rng).unwrap()
        } else {
            self.rng.random_range(6..22)
        }
    }
}

fn make_tx(
    t: DateTime<FixedOffset>,
    wallet: &str,
    counterparty: String,
    usd: f64,
    direction: Direction,
    label: Label,
) -> Transaction {
    let usd_value = round_to(usd.max(0.01), 2);
    Transaction {
        tx_id: String::new(),
        timestamp: t,
        receiving_address: wallet.to_string(),
        counterparty_address: counterparty,
        value_btc: round_to(usd_value / price_at(t.to_utc()), 8),
        usd_value,
        direction,
        label,
    }
}

/// Labeled corpus with mixing bursts planted among ordinary wallet activity.
/// Deterministic per config; rows come out in (time, tx_id) order.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<SyntheticDataset, DataError> {
    config.validate()?;
    let start = config.start.and_hms_opt(0, 0, 0).unwrap().and_utc();
    let end = config.end.and_hms_opt(23, 59, 59).unwrap().and_utc();
    let mut g = Generator { rng: ChaCha8Rng::seed_from_u64(config.seed), start, span_secs: (end - start).num_seconds() };

    let verified: Vec<String> = (0..config.n_verified_counterparties).map(|_| fresh_counterparty(&mut g.rng)).collect();
    let mut clusters: ClusterMap = verified.iter().map(|a| (a.clone(), ClusterClass::Exchange)).collect();
    let wallets: Vec<Wallet> = (0..config.n_wallets)
        .map(|_| {
            let address = random_address(&mut g.rng, "1", BASE58, 25);
            let hours = *WALLET_OFFSETS_HOURS.choose(&mut g.rng).unwrap();
            let regulars: Vec<String> = (0..3).map(|_| fresh_counterparty(&mut g.rng)).collect();
            for r in &regulars {
                clusters.insert(r.clone(), ClusterClass::Unknown);
            }
            Wallet { address, offset: FixedOffset::east_opt(hours * 3600).unwrap(), regulars }
        })
        .collect();

    let n_anomalous = config.anomaly_count();
    let normal_value = LogNormal::new(800f64.ln(), 1.2).unwrap();
    let burst_value = LogNormal::new(4_000f64.ln(), 1.0).unwrap();
    let mut rows = Vec::with_capacity(config.n_transactions);

    for _ in 0..config.n_transactions - n_anomalous {
        let wallet = wallets.choose(&mut g.rng).unwrap();
        let hour = g.daytime_hour();
        let t = g.local_at(wallet.offset, hour, 0);
        let counterparty = if g.rng.random_bool(0.8) {
            verified.choose(&mut g.rng).unwrap().clone()
        } else if g.rng.random_bool(0.03) {
            fresh_counterparty(&mut g.rng)
        } else {
            wallet.regulars.choose(&mut g.rng).unwrap().clone()
        };
        let direction = if g.rng.random_bool(0.5) { Direction::Outgoing } else { Direction::Incoming };
        let usd = normal_value.sample(&mut g.rng);
        rows.push(make_tx(t, &wallet.address, counterparty, usd, direction, Label::Normal));
    }

    let mut remaining = n_anomalous;
    while remaining > 0 {
        let size = g.rng.random_range(config.burst_size_min..=config.burst_size_max).min(remaining);
        remaining -= size;
        let wallet = wallets.choose(&mut g.rng).unwrap();
        let hour = g.night_hour();
        let mut t = g.local_at(wallet.offset, hour, size as i64 * 300);
        let base = burst_value.sample(&mut g.rng);
        for _ in 0..size {
            let counterparty = if g.rng.random_bool(0.9) {
                let a = fresh_counterparty(&mut g.rng);
                let class = if g.rng.random_bool(0.7) { ClusterClass::Mixer } else { ClusterClass::Unknown };
                clusters.insert(a.clone(), class);
                a
            } else {
                verified.choose(&mut g.rng).unwrap().clone()
            };
            let direction = if g.rng.random_bool(0.9) { Direction::Outgoing } else { Direction::Incoming };
            let usd = base * (1.0 + g.rng.random_range(-0.005..0.005));
            rows.push(make_tx(t, &wallet.address, counterparty, usd, direction, Label::Anomalous));
            t += Duration::seconds(g.rng.random_range(60..=300));
        }
    }

    for (i, tx) in rows.iter_mut().enumerate() {
        tx.tx_id = tx_id(config.seed, i);
    }
    rows.sort_by(|a, b| a.utc().cmp(&b.utc()).then_with(|| a.tx_id.cmp(&b.tx_id)));
    Ok(SyntheticDataset { transactions: rows, allowlist: AllowList::new(verified), clusters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::write_csv_to;
    use crate::features::{default_split_boundary, temporal_split};

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig { seed, n_transactions: 1000, anomaly_rate: 0.18, ..GeneratorConfig::default() }
    }

    #[test]
    fn exact_anomaly_count() {
        let data = generate_synthetic(&small(3)).unwrap();
        assert_eq!(data.transactions.len(), 1000);
        assert_eq!(data.transactions.iter().filter(|t| t.label == Label::Anomalous).count(), 180);
    }

    #[test]
    fn same_seed_same_bytes() {
        let csv = |seed| {
            let mut buf = Vec::new();
            write_csv_to(&mut buf, &generate_synthetic(&small(seed)).unwrap().transactions).unwrap();
            buf
        };
        assert_eq!(csv(11), csv(11));
        assert_ne!(csv(11), csv(12));
    }

    #[test]
    fn rows_stay_in_span_and_price_consistent() {
        let cfg = small(5);
        let data = generate_synthetic(&cfg).unwrap();
        let lo = cfg.start.and_hms_opt(0, 0, 0).unwrap().and_utc();
        let hi = cfg.end.and_hms_opt(23, 59, 59).unwrap().and_utc();
        for tx in &data.transactions {
            assert!(tx.utc() >= lo && tx.utc() <= hi);
            let price = price_at(tx.utc());
            assert!((tx.value_btc * price - tx.usd_value).abs() <= 0.5e-8 * price + 1e-9);
            assert!(tx.usd_value > 0.0);
        }
    }

    #[test]
    fn both_sides_of_split_populated() {
        let data = generate_synthetic(&GeneratorConfig::default()).unwrap();
        let n = data.transactions.len();
        let (train, test) = temporal_split(data.transactions, default_split_boundary());
        assert!(train.len() * 10 >= n && test.len() * 10 >= n);
    }

    #[test]
    fn burst_rows_have_mixing_shape() {
        let data = generate_synthetic(&small(9)).unwrap();
        for tx in data.transactions.iter().filter(|t| t.label == Label::Anomalous) {
            if !data.allowlist.contains(&tx.counterparty_address) {
                assert_ne!(data.clusters.get(&tx.counterparty_address), Some(&ClusterClass::Exchange));
            }
        }
        assert!(data.clusters.values().any(|c| *c == ClusterClass::Mixer));
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            GeneratorConfig { anomaly_rate: 0.0, ..small(1) },
            GeneratorConfig { anomaly_rate: 1.0, ..small(1) },
            GeneratorConfig { n_transactions: 0, ..small(1) },
            GeneratorConfig { burst_size_min: 9, burst_size_max: 3, ..small(1) },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(DataError::InvalidConfig(_))));
        }
    }
}
