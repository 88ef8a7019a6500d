use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::Transaction;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degree {
    pub in_degree: usize,
    pub out_degree: usize,
}

/// Directed payer→payee multigraph over addresses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterpartyGraph {
    degrees: BTreeMap<String, Degree>,
    edges: BTreeMap<(String, String), usize>,
}

impl CounterpartyGraph {
    /// One node per distinct address, one unit of multiplicity per transfer.
    pub fn build<'a>(transactions: impl IntoIterator<Item = &'a Transaction>) -> Self {
        let mut graph = CounterpartyGraph::default();
        for tx in transactions {
            let (payer, payee) = tx.payer_payee();
            graph.degrees.entry(payer.to_string()).or_default().out_degree += 1;
            graph.degrees.entry(payee.to_string()).or_default().in_degree += 1;
            *graph.edges.entry((payer.to_string(), payee.to_string())).or_default() += 1;
        }
        graph
    }

    /// Zero degrees for addresses never seen.
    pub fn degree(&self, address: &str) -> Degree {
        self.degrees.get(address).copied().unwrap_or_default()
    }

    pub fn multiplicity(&self, payer: &str, payee: &str) -> usize {
        self.edges.get(&(payer.to_string(), payee.to_string())).copied().unwrap_or(0)
    }

    pub fn node_count(&self) -> usize {
        self.degrees.len()
    }

    pub fn total_multiplicity(&self) -> usize {
        self.edges.values().sum()
    }

    pub fn degrees(&self) -> impl Iterator<Item = (&str, Degree)> {
        self.degrees.iter().map(|(a, d)| (a.as_str(), *d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Direction, Label};
    use chrono::DateTime;
    use proptest::prelude::*;

    fn transfer(payer: &str, payee: &str) -> Transaction {
        Transaction {
            tx_id: format!("{payer}-{payee}"),
            timestamp: DateTime::parse_from_rfc3339("2021-01-01T00:00:00+00:00").unwrap(),
            receiving_address: payer.into(),
            counterparty_address: payee.into(),
            value_btc: 0.1,
            usd_value: 100.0,
            direction: Direction::Outgoing,
            label: Label::Normal,
        }
    }

    #[test]
    fn empty_graph() {
        let g = CounterpartyGraph::build(&[]);
        assert_eq!(g.node_count(), 0);
        assert_eq!(g.degree("A"), Degree::default());
    }

    #[test]
    fn hand_counted_degrees() {
        let txs = [transfer("A", "B"), transfer("A", "B"), transfer("A", "B"), transfer("B", "A")];
        let g = CounterpartyGraph::build(&txs);
        assert_eq!(g.degree("A"), Degree { in_degree: 1, out_degree: 3 });
        assert_eq!(g.degree("B"), Degree { in_degree: 3, out_degree: 1 });
        assert_eq!(g.multiplicity("A", "B"), 3);
    }

    #[test]
    fn incoming_reverses_orientation() {
        let mut tx = transfer("W", "C");
        tx.direction = Direction::Incoming;
        let g = CounterpartyGraph::build([&tx]);
        assert_eq!(g.multiplicity("C", "W"), 1);
        assert_eq!(g.degree("C").out_degree, 1);
    }

    #[test]
    fn self_loop() {
        let g = CounterpartyGraph::build(&[transfer("A", "A")]);
        assert_eq!(g.degree("A"), Degree { in_degree: 1, out_degree: 1 });
    }

    proptest! {
        #[test]
        fn degree_sums_match_multiplicity(pairs in proptest::collection::vec((0u8..6, 0u8..6), 0..60)) {
            let txs: Vec<_> = pairs.iter().map(|(a, b)| transfer(&a.to_string(), &b.to_string())).collect();
            let g = CounterpartyGraph::build(&txs);
            let ins: usize = g.degrees().map(|(_, d)| d.in_degree).sum();
            let outs: usize = g.degrees().map(|(_, d)| d.out_degree).sum();
            prop_assert_eq!(ins, txs.len());
            prop_assert_eq!(outs, txs.len());
            prop_assert_eq!(g.total_multiplicity(), txs.len());
        }
    }
}
