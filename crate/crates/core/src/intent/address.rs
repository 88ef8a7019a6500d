use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;

/// Legacy base58 and bech32 address shapes, optionally ellipsized.
static ADDRESS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)
        \b(?P<addr>
            [bB][cC]1[02-9ac-hj-np-zAC-HJ-NP-Z]{3,87}
          | [13][1-9A-HJ-NP-Za-km-z]{4,34}
        )(?P<ell>\.\.\.|…)?",
    )
    .unwrap()
});

const BASE58_MIN_LEN: usize = 26;
const BECH32_MIN_LEN: usize = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Receiving,
    Counterparty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressMention {
    /// Normalized identifier.
    pub address: String,
    pub span: Range<usize>,
    pub role: Option<Role>,
}

fn is_bech32(token: &str) -> bool {
    token.len() >= 3 && token[..3].eq_ignore_ascii_case("bc1")
}

fn plausible(token: &str) -> bool {
    if is_bech32(token) {
        return true;
    }
    let digits = token.chars().filter(|c| c.is_ascii_digit()).count();
    let letters = token.chars().filter(|c| c.is_ascii_alphabetic()).count();
    token.len() >= 6 && digits >= 2 && letters >= 1
}

/// Canonical form of an address token.
///
/// Ellipsized tokens keep a single `...` suffix. Tokens masked with a run of
/// `x` are opaque placeholders and stay verbatim. Any other token shorter than
/// a full address of its family is a displayed prefix and gains `...`.
pub fn normalize_address(token: &str) -> String {
    let trimmed = token.trim();
    if let Some(prefix) = trimmed.strip_suffix("...").or_else(|| trimmed.strip_suffix('…')) {
        return format!("{prefix}...");
    }
    if trimmed.to_ascii_lowercase().contains("xxx") {
        return trimmed.to_string();
    }
    let min_len = if is_bech32(trimmed) { BECH32_MIN_LEN } else { BASE58_MIN_LEN };
    if trimmed.len() < min_len {
        format!("{trimmed}...")
    } else {
        trimmed.to_string()
    }
}

/// True when `candidate` is the address `pattern` refers to. An ellipsized
/// pattern matches by prefix.
pub fn address_matches(pattern: &str, candidate: &str) -> bool {
    match pattern.strip_suffix("...") {
        Some(prefix) => candidate.starts_with(prefix),
        None => pattern == candidate,
    }
}

fn last_words(text: &str, n: usize) -> Vec<String> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect();
    words[words.len().saturating_sub(n)..].to_vec()
}

fn role_from_context(context: &str) -> Option<Role> {
    let words = last_words(context, 3);
    let has = |w: &str| words.iter().any(|x| x == w);
    if has("counterparty") || has("counterparties") || has("recipient") || has("sender") {
        Some(Role::Counterparty)
    } else if has("my") || has("mine") || has("wallet") || has("address") {
        Some(Role::Receiving)
    } else if has("from") || has("to") || has("with") {
        Some(Role::Counterparty)
    } else {
        None
    }
}

/// Finds address mentions and assigns each a receiving or counterparty role
/// from the words just before it.
pub fn find_addresses(text: &str) -> Vec<AddressMention> {
    let mut mentions = Vec::new();
    let mut last_end = 0;
    for caps in ADDRESS.captures_iter(text) {
        let whole = caps.get(0).unwrap();
        let token = caps.name("addr").unwrap().as_str();
        let next = text[whole.end()..].chars().next();
        if next.is_some_and(|c| c.is_alphanumeric()) || !plausible(token) {
            continue;
        }
        let context = &text[last_end..whole.start()];
        mentions.push(AddressMention {
            address: normalize_address(whole.as_str()),
            span: whole.range(),
            role: role_from_context(context),
        });
        last_end = whole.end();
    }

    let has_receiving = mentions.iter().any(|m| m.role == Some(Role::Receiving));
    if !has_receiving {
        if let Some(m) = mentions.iter_mut().find(|m| m.role.is_none()) {
            m.role = Some(Role::Receiving);
        }
    }
    let has_counterparty = mentions.iter().any(|m| m.role == Some(Role::Counterparty));
    if !has_counterparty {
        if let Some(m) = mentions.iter_mut().find(|m| m.role.is_none()) {
            m.role = Some(Role::Counterparty);
        }
    }
    mentions
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_addresses_and_roles() {
        let text = "I received 0.8 BTC (worth about $51,200) to my address 1A2b3C from the counterparty bc1qxxx. Please check";
        let found = find_addresses(text);
        assert_eq!(found.len(), 2);
        assert_eq!(found[0].address, "1A2b3C...");
        assert_eq!(found[0].role, Some(Role::Receiving));
        assert_eq!(found[1].address, "bc1qxxx");
        assert_eq!(found[1].role, Some(Role::Counterparty));
    }

    #[test]
    fn full_length_addresses_stay_verbatim() {
        let a = "1BoatSLRHtKNngkdXEeobR76b53LETtpyT";
        let b = "bc1qar0srrr7xfkvy5l643lydnw9re59gtzzwf5mdq";
        assert_eq!(normalize_address(a), a);
        assert_eq!(normalize_address(b), b);
        assert_eq!(normalize_address("1A2b3C…"), "1A2b3C...");
    }

    #[test]
    fn numbers_are_not_addresses() {
        assert!(find_addresses("I sent 1000 dollars and 12345 more on 2025").is_empty());
        assert!(find_addresses("$51,200 at 11:00 PM").is_empty());
    }

    #[test]
    fn outgoing_phrasing() {
        let text = "from my wallet 1BoatSLRHtKNngkdXEeobR76b53LETtpyT I sent 2 BTC to 3J98t1WpEZ73CNmQviecrnyiWrnqRhWNLy";
        let found = find_addresses(text);
        assert_eq!(found[0].role, Some(Role::Receiving));
        assert_eq!(found[1].role, Some(Role::Counterparty));
    }

    #[test]
    fn prefix_matching() {
        assert!(address_matches("1A2b3C...", "1A2b3CdefGHJ"));
        assert!(!address_matches("1A2b3C...", "1A2b4C"));
        assert!(address_matches("bc1qxxx", "bc1qxxx"));
    }
}
