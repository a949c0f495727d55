//! Normalization of LLM list replies.
//!
//! Rules, applied per item until nothing changes:
//! - strip leading bullets (`-`, `*`, `•`, `+`, …) and numbering (`1.`, `2)`, `(3)`, `#4`)
//! - split an optional `| category` suffix; bracketed text is dropped, or read as a category
//! - cut explanations after `:`, `,`, `;` or a spaced dash
//! - strip markdown emphasis, surrounding quotes and trailing punctuation
//! - collapse whitespace and lowercase
//!
//! Empty items, bare adjectives and sentence-length items are dropped, and
//! duplicates are removed keeping the first occurrence. A reply that is a
//! single comma-separated line is split on commas.

use super::Category;

const MAX_WORDS: usize = 6;

/// Common descriptive words the model sometimes returns instead of objects.
const ADJECTIVES: &[&str] = &[
    "bold",
    "calm",
    "durable",
    "dynamic",
    "elegant",
    "fluid",
    "free",
    "graceful",
    "light",
    "lightweight",
    "minimal",
    "minimalist",
    "modern",
    "natural",
    "organic",
    "protective",
    "robust",
    "rugged",
    "safe",
    "secure",
    "serene",
    "sleek",
    "smooth",
    "soft",
    "strong",
    "sturdy",
    "tough",
    "warm",
];

const BULLETS: &[char] = &['-', '*', '•', '·', '+', '–', '—', '>', '▪', '◦'];
const QUOTES: &[char] = &['"', '\'', '“', '”', '‘', '’', '«', '»'];
const TRAILING: &[char] = &['.', '!', '?', ';', ':', ','];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedItem {
    pub label: String,
    pub category: Option<Category>,
}

pub fn is_adjective(label: &str) -> bool {
    ADJECTIVES.contains(&label)
}

fn strip_numbering(s: &str) -> Option<&str> {
    if let Some(rest) = s.strip_prefix('#') {
        let digits = rest
            .find(|c: char| !c.is_ascii_digit())
            .unwrap_or(rest.len());
        return (digits > 0).then(|| rest[digits..].trim_start_matches(['.', ')', ':']));
    }
    if let Some(inner) = s.strip_prefix('(') {
        let digits = inner.find(|c: char| !c.is_ascii_digit())?;
        if digits > 0 && inner[digits..].starts_with(')') {
            return Some(&inner[digits + 1..]);
        }
        return None;
    }
    let digits = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    if digits == 0 {
        return None;
    }
    let rest = &s[digits..];
    let marker = rest.chars().next();
    match marker {
        None => Some(rest),
        Some('.') | Some(')') | Some(':') => {
            let after = &rest[1..];
            // "7.5 ton truck" is not numbering
            if after.is_empty() || after.starts_with(char::is_whitespace) {
                Some(after)
            } else {
                None
            }
        }
        _ => None,
    }
}

fn strip_leading_markers(mut s: &str) -> &str {
    loop {
        let before = s;
        s = s.trim_start();
        s = s.trim_start_matches(BULLETS);
        if let Some(rest) = strip_numbering(s) {
            s = rest;
        }
        if s == before {
            return s;
        }
    }
}

fn cut_explanation(s: &str) -> &str {
    let mut end = s.len();
    for pat in [":", ",", ";", " - ", " – ", " — "] {
        if let Some(i) = s.find(pat) {
            end = end.min(i);
        }
    }
    &s[..end]
}

/// Removes bracketed spans; a span naming a category sets `category`.
fn strip_brackets(s: &str, category: &mut Option<Category>) -> String {
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    let mut inner = String::new();
    for c in s.chars() {
        match c {
            '(' | '[' => {
                depth += 1;
                out.push(' ');
            }
            ')' | ']' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    if category.is_none() {
                        *category = Category::find_in(&inner);
                    }
                    inner.clear();
                }
            }
            ')' | ']' => out.push(' '),
            _ if depth > 0 => inner.push(c),
            _ => out.push(c),
        }
    }
    out
}

/// Normalizes a bare label. Returns `None` when nothing usable is left.
pub fn normalize_label(raw: &str) -> Option<String> {
    let mut s = raw.to_string();
    loop {
        let mut next = strip_leading_markers(&s).to_string();
        next = cut_explanation(&next).to_string();
        next = next.replace(['*', '`'], " ");
        next = next
            .trim()
            .trim_matches(QUOTES)
            .trim_end_matches(TRAILING)
            .to_string();
        next = next.split_whitespace().collect::<Vec<_>>().join(" ");
        next = next.to_lowercase();
        if next == s {
            break;
        }
        s = next;
    }
    let words = s.split_whitespace().count();
    if s.is_empty() || words > MAX_WORDS || is_adjective(&s) {
        None
    } else {
        Some(s)
    }
}

/// Normalizes one list entry, reading an optional category.
pub fn normalize_item(raw: &str) -> Option<ParsedItem> {
    let (body, mut category) = match raw.split_once('|') {
        Some((label, cat)) => (label, Category::find_in(cat)),
        None => (raw, None),
    };
    // numbering such as "12)" must go before brackets are dropped
    let body = strip_brackets(strip_leading_markers(body), &mut category);
    let label = normalize_label(&body)?;
    Some(ParsedItem { label, category })
}

fn starts_with_marker(line: &str) -> bool {
    line.starts_with(BULLETS) || strip_numbering(line).is_some()
}

/// Parses a whole reply into unique items, in order of first appearance.
pub fn parse_reply(text: &str) -> Vec<ParsedItem> {
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .filter(|l| !(l.ends_with(':') && !starts_with_marker(l)))
        .collect();
    let pieces: Vec<&str> = match lines.as_slice() {
        [single] if single.contains(',') => single.split(',').collect(),
        _ => lines,
    };
    let mut out: Vec<ParsedItem> = Vec::new();
    for item in pieces.into_iter().filter_map(normalize_item) {
        match out.iter_mut().find(|seen| seen.label == item.label) {
            Some(seen) => {
                if seen.category.is_none() {
                    seen.category = item.category;
                }
            }
            None => out.push(item),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(text: &str) -> Vec<String> {
        parse_reply(text).into_iter().map(|i| i.label).collect()
    }

    #[test]
    fn numbered_list_with_duplicate() {
        assert_eq!(
            labels("1. tortoise\n2. armadillo\n2. Armadillo\n3. armor"),
            vec!["tortoise", "armadillo", "armor"]
        );
    }

    #[test]
    fn parenthesized_numbering_before_emphasis() {
        assert_eq!(
            labels("12) **Shell**: strong\n(3) dome"),
            vec!["shell", "dome"]
        );
    }

    #[test]
    fn comma_separated_single_line() {
        assert_eq!(
            labels("tortoise, armadillo, armor"),
            vec!["tortoise", "armadillo", "armor"]
        );
    }

    #[test]
    fn bullets_quotes_and_punctuation() {
        assert_eq!(
            labels("- **Tortoise shell**.\n* \"Armadillo\"\n• armor!\n+  treasure   chest;"),
            vec!["tortoise shell", "armadillo", "armor", "treasure chest"]
        );
    }

    #[test]
    fn categories_from_pipe_and_brackets() {
        let items = parse_reply(
            "1. tortoise | Nature\n2. bunker (architecture)\n3. trench coat [fashion]\n4. dome",
        );
        let cats: Vec<_> = items
            .iter()
            .map(|i| (i.label.as_str(), i.category))
            .collect();
        assert_eq!(
            cats,
            vec![
                ("tortoise", Some(Category::Nature)),
                ("bunker", Some(Category::Architecture)),
                ("trench coat", Some(Category::Fashion)),
                ("dome", None),
            ]
        );
    }

    #[test]
    fn explanations_and_headers_are_dropped() {
        let text = "Here are some inspirations:\n1. Tortoise: its domed shell protects.\n2. Castle - thick walls\n3. Protective\n";
        assert_eq!(labels(text), vec!["tortoise", "castle"]);
    }

    #[test]
    fn decimal_prefix_is_not_numbering() {
        assert_eq!(
            labels("7.5 ton truck\nhelmet"),
            vec!["7.5 ton truck", "helmet"]
        );
    }

    #[test]
    fn parenthesized_numbering() {
        assert_eq!(
            labels("(1) tank\n(2) backpack\n#3 treasure chest"),
            vec!["tank", "backpack", "treasure chest"]
        );
    }

    #[test]
    fn empty_reply_yields_nothing() {
        assert!(parse_reply("").is_empty());
        assert!(parse_reply("\n  \n-\n1.\n").is_empty());
    }

    #[test]
    fn long_sentences_are_not_items() {
        assert_eq!(
            labels("These objects all share a sense of strength and safety for drivers\nshield"),
            vec!["shield"]
        );
    }

    #[test]
    fn normalized_output_is_a_fixed_point() {
        let first = labels("1. Lion's Mane.\n- 'Zen Garden'\n3) Silk");
        assert_eq!(labels(&first.join("\n")), first);
    }
}
