use std::sync::LazyLock;

use regex::Regex;

use crate::error::{Error, Result};

static MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:\d+\s*[.):]|[-*\u{2022}])\s*").unwrap());
static INLINE_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:^|\s)\d+\s*[.)]\s+").unwrap());

fn clean(item: &str) -> String {
    let s = MARKER.replace(item, "");
    let s = s.trim();
    let quotes: &[char] = &['"', '\'', '\u{201C}', '\u{201D}', '\u{2018}', '\u{2019}', '`'];
    s.trim_matches(quotes).trim().to_string()
}

/// Extracts `n` rewrites from a perturbator response.
///
/// Numbered (`1.` / `1)`) or bulleted lines are preferred; preamble lines
/// without a marker are dropped when markers are present. A single line with
/// inline markers is split on them. Extra items beyond `n` are ignored.
pub fn parse_perturbations(raw: &str, n: usize) -> Result<Vec<String>> {
    if raw.trim().is_empty() {
        return Err(Error::Parse("empty perturbation response".into()));
    }
    let lines: Vec<&str> = raw.lines().filter(|l| !l.trim().is_empty()).collect();
    let marked: Vec<&str> = lines.iter().copied().filter(|l| MARKER.is_match(l)).collect();
    let mut items: Vec<String> = if marked.is_empty() {
        lines.iter().map(|l| clean(l)).collect()
    } else {
        marked.iter().map(|l| clean(l)).collect()
    };
    if items.len() < n && lines.len() == 1 {
        items = INLINE_MARKER
            .split(lines[0])
            .map(clean)
            .filter(|s| !s.is_empty())
            .collect();
    }
    items.retain(|s| !s.is_empty());
    if items.len() < n {
        return Err(Error::Parse(format!("expected {n} rewrites, found {}", items.len())));
    }
    items.truncate(n);
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_list() {
        let got = parse_perturbations("1. A?\n2. B?\n3. C?\n4. D?\n5. E?", 5).unwrap();
        assert_eq!(got, ["A?", "B?", "C?", "D?", "E?"]);
    }

    #[test]
    fn paren_list_with_preamble_and_quotes() {
        let raw = "Here are five rewrites:\n\n1) \"A?\"\n2) B?\n3) C?\n4) D?\n5) E?\n";
        assert_eq!(parse_perturbations(raw, 5).unwrap(), ["A?", "B?", "C?", "D?", "E?"]);
    }

    #[test]
    fn plain_lines() {
        assert_eq!(parse_perturbations("A?\nB?", 2).unwrap(), ["A?", "B?"]);
    }

    #[test]
    fn inline_markers() {
        assert_eq!(parse_perturbations("1. A? 2. B? 3. C?", 3).unwrap(), ["A?", "B?", "C?"]);
    }

    #[test]
    fn too_few_items() {
        assert!(matches!(
            parse_perturbations("1. A\n2. B\n3. C", 5),
            Err(Error::Parse(_))
        ));
        assert!(parse_perturbations("   ", 1).is_err());
    }

    #[test]
    fn duplicates_are_kept() {
        assert_eq!(parse_perturbations("1. A\n2. A", 2).unwrap(), ["A", "A"]);
    }
}
