use std::ops::Range;
use std::sync::LazyLock;

use chrono::{DateTime, FixedOffset, NaiveDate, NaiveDateTime, NaiveTime, TimeZone};
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

/// A resolved time expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeRef {
    Point(DateTime<FixedOffset>),
    Range { days: u32 },
}

static ISO_DATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(\d{4}-\d{2}-\d{2})(?:[T ](\d{2}:\d{2}(?::\d{2})?)(Z|[+-]\d{2}:?\d{2})?)?\b").unwrap()
});

static PROSE_DATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?ix)
        \b(?P<month>jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?
            |sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)\.?
        \s+(?P<day>\d{1,2})(?:st|nd|rd|th)?
        ,?\s+(?P<year>\d{4})\b
        (?:,?\s*(?:at\s+)?(?P<hour>\d{1,2})(?::(?P<minute>\d{2}))?\s*(?P<ampm>[ap]\.?m\.?)?)?
        (?:\s*\(?\s*(?:UTC|GMT)(?:\s*(?P<sign>[+-])\s*(?P<oh>\d{1,2})(?::?(?P<om>\d{2}))?)?\s*\)?)?",
    )
    .unwrap()
});

static RANGE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?ix)
        \b(?:past|last|previous|prior)\s+
        (?:(?P<n>\d+|an?|one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve|fourteen|thirty)\s+)?
        (?P<unit>days?|weeks?|months?|fortnight|hours?)\b",
    )
    .unwrap()
});

static RELATIVE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(today|this\s+week|this\s+month)\b").unwrap());

fn word_number(s: &str) -> Option<u32> {
    let n = match s.to_ascii_lowercase().as_str() {
        "a" | "an" | "one" => 1,
        "two" => 2,
        "three" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "eight" => 8,
        "nine" => 9,
        "ten" => 10,
        "eleven" => 11,
        "twelve" => 12,
        "fourteen" => 14,
        "thirty" => 30,
        other => return other.parse().ok(),
    };
    Some(n)
}

fn month_number(s: &str) -> Option<u32> {
    let m = match &s.to_ascii_lowercase()[..3] {
        "jan" => 1,
        "feb" => 2,
        "mar" => 3,
        "apr" => 4,
        "may" => 5,
        "jun" => 6,
        "jul" => 7,
        "aug" => 8,
        "sep" => 9,
        "oct" => 10,
        "nov" => 11,
        "dec" => 12,
        _ => return None,
    };
    Some(m)
}

fn parse_offset(s: &str) -> Option<FixedOffset> {
    if s.eq_ignore_ascii_case("z") {
        return FixedOffset::east_opt(0);
    }
    let sign = if s.starts_with('-') { -1 } else { 1 };
    let digits: String = s[1..].chars().filter(|c| c.is_ascii_digit()).collect();
    if digits.len() != 4 {
        return None;
    }
    let hours: i32 = digits[..2].parse().ok()?;
    let minutes: i32 = digits[2..].parse().ok()?;
    FixedOffset::east_opt(sign * (hours * 3600 + minutes * 60))
}

fn localize(naive: NaiveDateTime, offset: FixedOffset) -> Option<DateTime<FixedOffset>> {
    offset.from_local_datetime(&naive).single()
}

fn iso_point(caps: &Captures<'_>, default_offset: FixedOffset) -> Option<DateTime<FixedOffset>> {
    let date = NaiveDate::parse_from_str(&caps[1], "%Y-%m-%d").ok()?;
    let time = match caps.get(2) {
        Some(t) => NaiveTime::parse_from_str(t.as_str(), "%H:%M:%S")
            .or_else(|_| NaiveTime::parse_from_str(t.as_str(), "%H:%M"))
            .ok()?,
        None => NaiveTime::MIN,
    };
    let offset = match caps.get(3) {
        Some(o) => parse_offset(o.as_str())?,
        None => default_offset,
    };
    localize(date.and_time(time), offset)
}

fn prose_point(caps: &Captures<'_>, default_offset: FixedOffset) -> Option<DateTime<FixedOffset>> {
    let month = month_number(&caps["month"])?;
    let day: u32 = caps["day"].parse().ok()?;
    let year: i32 = caps["year"].parse().ok()?;
    let date = NaiveDate::from_ymd_opt(year, month, day)?;

    let mut hour: u32 = caps.name("hour").map_or(Some(0), |h| h.as_str().parse().ok())?;
    let minute: u32 = caps.name("minute").map_or(Some(0), |m| m.as_str().parse().ok())?;
    if let Some(ampm) = caps.name("ampm") {
        if !(1..=12).contains(&hour) {
            return None;
        }
        let pm = ampm.as_str().to_ascii_lowercase().starts_with('p');
        hour = match (pm, hour) {
            (false, 12) => 0,
            (true, 12) => 12,
            (true, h) => h + 12,
            (false, h) => h,
        };
    }
    let time = NaiveTime::from_hms_opt(hour, minute, 0)?;

    let offset = match caps.name("sign") {
        Some(sign) => {
            let h: i32 = caps["oh"].parse().ok()?;
            let m: i32 = caps.name("om").map_or(Some(0), |m| m.as_str().parse().ok())?;
            let secs = h * 3600 + m * 60;
            FixedOffset::east_opt(if sign.as_str() == "-" { -secs } else { secs })?
        }
        None if caps.get(0)?.as_str().to_ascii_uppercase().contains("UTC")
            || caps.get(0)?.as_str().to_ascii_uppercase().contains("GMT") =>
        {
            FixedOffset::east_opt(0)?
        }
        None => default_offset,
    };
    localize(date.and_time(time), offset)
}

fn range_days(caps: &Captures<'_>) -> Option<u32> {
    let n = match caps.name("n") {
        Some(n) => word_number(n.as_str())?,
        None => 1,
    };
    if n == 0 {
        return None;
    }
    let unit = caps["unit"].to_ascii_lowercase();
    let days = if unit.starts_with("day") {
        n
    } else if unit.starts_with("week") {
        n.checked_mul(7)?
    } else if unit.starts_with("month") {
        n.checked_mul(30)?
    } else if unit == "fortnight" {
        n.checked_mul(14)?
    } else {
        // hours, rounded up to whole days
        n.div_ceil(24)
    };
    Some(days)
}

/// Finds the first time expression in `text`, preferring explicit dates.
///
/// Dates without an offset take the offset of `now`.
pub fn find_time_reference(text: &str, now: DateTime<FixedOffset>) -> Option<(TimeRef, Range<usize>)> {
    let offset = *now.offset();
    if let Some(caps) = PROSE_DATE.captures(text) {
        if let Some(point) = prose_point(&caps, offset) {
            return Some((TimeRef::Point(point), caps.get(0).unwrap().range()));
        }
    }
    if let Some(caps) = ISO_DATE.captures(text) {
        if let Some(point) = iso_point(&caps, offset) {
            return Some((TimeRef::Point(point), caps.get(0).unwrap().range()));
        }
    }
    if let Some(caps) = RANGE.captures(text) {
        if let Some(days) = range_days(&caps) {
            return Some((TimeRef::Range { days }, caps.get(0).unwrap().range()));
        }
    }
    if let Some(m) = RELATIVE.find(text) {
        let lower = m.as_str().to_ascii_lowercase();
        let days = if lower == "today" {
            1
        } else if lower.ends_with("week") {
            7
        } else {
            30
        };
        return Some((TimeRef::Range { days }, m.range()));
    }
    None
}

/// Maps a time phrase to a point in time or a trailing day count.
pub fn resolve_time_phrase(phrase: &str, now: DateTime<FixedOffset>) -> Option<TimeRef> {
    let normalized = phrase.split_whitespace().collect::<Vec<_>>().join(" ");
    find_time_reference(&normalized, now).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn now() -> DateTime<FixedOffset> {
        DateTime::parse_from_rfc3339("2025-09-27T12:00:00+00:00").unwrap()
    }

    #[test]
    fn past_week_is_seven_days() {
        assert_eq!(resolve_time_phrase("past week", now()), Some(TimeRef::Range { days: 7 }));
    }

    #[test]
    fn counted_ranges() {
        assert_eq!(resolve_time_phrase("past 3 days", now()), Some(TimeRef::Range { days: 3 }));
        assert_eq!(resolve_time_phrase("last two weeks", now()), Some(TimeRef::Range { days: 14 }));
        assert_eq!(resolve_time_phrase("previous month", now()), Some(TimeRef::Range { days: 30 }));
        assert_eq!(resolve_time_phrase("past 48 hours", now()), Some(TimeRef::Range { days: 2 }));
        assert_eq!(resolve_time_phrase("past 0 days", now()), None);
    }

    #[test]
    fn prose_date_with_offset() {
        let got = resolve_time_phrase("On September 20, 2025, at 11:00 PM (UTC+9)", now());
        let want = DateTime::parse_from_rfc3339("2025-09-20T23:00:00+09:00").unwrap();
        match got {
            Some(TimeRef::Point(p)) => {
                assert_eq!(p, want);
                assert_eq!(p.offset(), want.offset());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn prose_date_tolerates_line_wrap() {
        let got = resolve_time_phrase("On September 20, 2025, at 11:00 PM (UTC\n+9)", now());
        assert_eq!(got.map(|t| matches!(t, TimeRef::Point(_))), Some(true));
    }

    #[test]
    fn iso_and_bare_dates() {
        let got = resolve_time_phrase("2024-03-01T08:30:00-05:00", now()).unwrap();
        assert_eq!(got, TimeRef::Point(DateTime::parse_from_rfc3339("2024-03-01T08:30:00-05:00").unwrap()));
        let got = resolve_time_phrase("March 1, 2024", now()).unwrap();
        assert_eq!(got, TimeRef::Point(DateTime::parse_from_rfc3339("2024-03-01T00:00:00+00:00").unwrap()));
    }

    #[test]
    fn unrecognized_is_absent() {
        assert_eq!(resolve_time_phrase("someday", now()), None);
        assert_eq!(resolve_time_phrase("", now()), None);
    }
}
