//! Amharic text cleaning, homophone normalization and tokenization.
//!
//! [`normalize`] applies, in order:
//!
//! 1. Unicode canonical composition (NFC).
//! 2. Homophone folding through a [`NormalizationTable`].
//! 3. Ethiopic wordspace `፡` to ASCII space.
//! 4. Removal of URLs, @-mentions, hashtag sigils (the tag body is kept),
//!    emoji, Latin and Ethiopic punctuation.
//! 5. Digit removal (ASCII and Ethiopic numerals).
//! 6. Whitespace collapse and trim.
//!
//! Removed material is replaced by a space rather than deleted so that no new
//! words or URLs can be formed by joining neighbours, which keeps the whole
//! transformation idempotent. Format characters (ZWJ, variation selectors)
//! are deleted outright and the result is re-composed.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

/// Ethiopic wordspace.
pub const WORDSPACE: char = '\u{1361}';

/// Ethiopic sentence and clause punctuation stripped by rule 4.
pub const ETHIOPIC_PUNCTUATION: [char; 6] = ['።', '፣', '፤', '፥', '፦', '፧'];

/// Homophone families as `(first codepoint of variant series, first codepoint
/// of canonical series, number of consecutive vowel orders)`.
const SERIES_FOLDS: &[(u32, u32, u32)] = &[
    // HHA..HHO -> HA..HO
    (0x1210, 0x1200, 7),
    // XA..XOA -> HA..HOA
    (0x1280, 0x1200, 8),
    // KXA..KXO -> HA..HO
    (0x12B8, 0x1200, 7),
    // SZA..SZWA -> SA..SWA
    (0x1220, 0x1230, 8),
    // PHARYNGEAL A..O -> GLOTTAL A..O
    (0x12D0, 0x12A0, 7),
    // TZA..TZOA -> TSA..TSWA
    (0x1340, 0x1338, 8),
];

/// Labialized h-series forms. The HA series has no labialized slots, so the
/// XWA row is the canonical one.
const LABIALIZED_FOLDS: &[(char, char)] = &[
    ('ሗ', 'ኋ'), // HHWA -> XWAA
    ('ዀ', 'ኈ'), // KXWA -> XWA
    ('ዂ', 'ኊ'), // KXWI -> XWI
    ('ዃ', 'ኋ'), // KXWAA -> XWAA
    ('ዄ', 'ኌ'), // KXWEE -> XWEE
    ('ዅ', 'ኍ'), // KXWE -> XWE
];

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("line {line}: expected `from<TAB>to` with one character on each side")]
    Malformed { line: usize },
    #[error("mapping {from:?} -> {to:?} is not idempotent: {to:?} is itself remapped")]
    NotIdempotent { from: char, to: char },
    #[error("conflicting targets for {from:?}: {first:?} and {second:?}")]
    Conflict { from: char, first: char, second: char },
}

/// Mapping from non-canonical Ethiopic codepoints to their canonical form.
///
/// Canonical characters never appear as keys, so applying the table twice is
/// the same as applying it once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationTable {
    char_map: BTreeMap<char, char>,
}

impl Default for NormalizationTable {
    fn default() -> Self {
        let mut char_map = BTreeMap::new();
        for &(from, to, orders) in SERIES_FOLDS {
            for order in 0..orders {
                let from = char::from_u32(from + order).expect("valid Ethiopic codepoint");
                let to = char::from_u32(to + order).expect("valid Ethiopic codepoint");
                char_map.insert(from, to);
            }
        }
        for &(from, to) in LABIALIZED_FOLDS {
            char_map.insert(from, to);
        }
        NormalizationTable { char_map }
    }
}

impl NormalizationTable {
    pub fn empty() -> Self {
        NormalizationTable {
            char_map: BTreeMap::new(),
        }
    }

    pub fn get(&self, c: char) -> Option<char> {
        self.char_map.get(&c).copied()
    }

    pub fn map_char(&self, c: char) -> char {
        self.get(c).unwrap_or(c)
    }

    pub fn is_non_canonical(&self, c: char) -> bool {
        self.char_map.contains_key(&c)
    }

    pub fn len(&self) -> usize {
        self.char_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.char_map.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (char, char)> + '_ {
        self.char_map.iter().map(|(&k, &v)| (k, v))
    }

    /// Parses `from_char<TAB>to_char` records. Blank lines and lines starting
    /// with `#` are ignored.
    pub fn from_tsv(text: &str) -> Result<Self, TableError> {
        let mut table = NormalizationTable::empty();
        table.extend_from_tsv(text)?;
        Ok(table)
    }

    /// Adds the records in `text` to this table, then re-validates.
    pub fn extend_from_tsv(&mut self, text: &str) -> Result<(), TableError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = || TableError::Malformed { line: i + 1 };
            let (from, to) = line.split_once('\t').ok_or_else(malformed)?;
            let from = single_char(from).ok_or_else(malformed)?;
            let to = single_char(to).ok_or_else(malformed)?;
            if from == to {
                continue;
            }
            if let Some(&first) = self.char_map.get(&from) {
                if first != to {
                    return Err(TableError::Conflict {
                        from,
                        first,
                        second: to,
                    });
                }
            }
            self.char_map.insert(from, to);
        }
        self.validate()
    }

    fn validate(&self) -> Result<(), TableError> {
        for (&from, &to) in &self.char_map {
            if self.char_map.contains_key(&to) {
                return Err(TableError::NotIdempotent { from, to });
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (from, to) in self.entries() {
            out.push(from);
            out.push('\t');
            out.push(to);
            out.push('\n');
        }
        out
    }
}

fn single_char(s: &str) -> Option<char> {
    let mut chars = s.chars();
    let c = chars.next()?;
    chars.next().is_none().then_some(c)
}

fn url_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:https?://|www\.)\S*").expect("valid regex"))
}

fn mention_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@\w+").expect("valid regex"))
}

/// Returns true if `text` contains something the URL removal rule would strip.
pub fn contains_url(text: &str) -> bool {
    url_pattern().is_match(text)
}

enum CharAction {
    Keep,
    Space,
    Delete,
}

fn classify(c: char) -> CharAction {
    use GeneralCategory::*;
    if c.is_whitespace() {
        return CharAction::Space;
    }
    // Variation selectors and the keycap combiner only ever decorate emoji.
    if matches!(c, '\u{FE00}'..='\u{FE0F}' | '\u{E0100}'..='\u{E01EF}' | '\u{20E3}') {
        return CharAction::Delete;
    }
    match get_general_category(c) {
        UppercaseLetter | LowercaseLetter | TitlecaseLetter | ModifierLetter | OtherLetter => CharAction::Keep,
        NonspacingMark | SpacingMark | EnclosingMark => CharAction::Keep,
        Format => CharAction::Delete,
        // Digits (rule 5), punctuation, symbols and emoji (rule 4), controls,
        // private-use and unassigned codepoints.
        _ => CharAction::Space,
    }
}

/// Text normalizer parameterised by a homophone table.
#[derive(Debug, Clone, Default)]
pub struct Normalizer {
    table: NormalizationTable,
}

impl Normalizer {
    pub fn new(table: NormalizationTable) -> Self {
        Normalizer { table }
    }

    pub fn table(&self) -> &NormalizationTable {
        &self.table
    }

    pub fn normalize(&self, text: &str) -> String {
        if text.is_empty() {
            return String::new();
        }
        let composed: String = text.nfc().collect();
        let folded: String = composed
            .chars()
            .map(|c| self.table.map_char(c))
            .map(|c| if c == WORDSPACE { ' ' } else { c })
            .collect();
        let no_urls = url_pattern().replace_all(&folded, " ");
        let no_mentions = mention_pattern().replace_all(&no_urls, " ");

        let mut cleaned = String::with_capacity(no_mentions.len());
        for c in no_mentions.chars() {
            match classify(c) {
                CharAction::Keep => cleaned.push(c),
                CharAction::Space => cleaned.push(' '),
                CharAction::Delete => {}
            }
        }
        let collapsed = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");
        // Deleting format characters can bring a base and a combining mark
        // together; recompose so a second pass is a no-op.
        collapsed.nfc().collect()
    }

    pub fn clean(&self, id: impl Into<String>, raw_text: impl Into<String>) -> CleanDocument {
        let raw_text = raw_text.into();
        let norm_text = self.normalize(&raw_text);
        let tokens = tokenize(&norm_text);
        CleanDocument {
            id: id.into(),
            raw_text,
            norm_text,
            tokens,
        }
    }
}

fn default_normalizer() -> &'static Normalizer {
    static NORMALIZER: OnceLock<Normalizer> = OnceLock::new();
    NORMALIZER.get_or_init(Normalizer::default)
}

/// Normalizes `text` with the default homophone table.
pub fn normalize(text: &str) -> String {
    default_normalizer().normalize(text)
}

/// Splits normalized text on whitespace. Never yields empty tokens.
pub fn tokenize(norm_text: &str) -> Vec<String> {
    norm_text.split_whitespace().map(str::to_string).collect()
}

/// Normalizes and tokenizes in one step with the default table.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    tokenize(&normalize(text))
}

/// A document after cleaning, ready for annotation or feature extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub id: String,
    pub raw_text: String,
    pub norm_text: String,
    pub tokens: Vec<String>,
}

impl CleanDocument {
    /// Cleans `raw_text` with the default normalizer.
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        default_normalizer().clean(id, raw_text)
    }

    /// Builds a document straight from tokens, for callers that already hold
    /// normalized tokens (tests, synthetic data).
    pub fn from_tokens(id: impl Into<String>, tokens: Vec<String>) -> Self {
        let norm_text = tokens.join(" ");
        CleanDocument {
            id: id.into(),
            raw_text: norm_text.clone(),
            norm_text,
            tokens,
        }
    }
}

impl fmt::Display for CleanDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.norm_text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("ሰላም"), "ሰላም");
        assert_eq!(normalize("ሐበሻ ነኝ። http://t.co/x @user"), "ሀበሻ ነኝ");
        assert_eq!(tokenize("ሀበሻ ነኝ"), vec!["ሀበሻ", "ነኝ"]);
        assert!(tokenize("").is_empty());
        assert_eq!(normalized_tokens("ሰላም፡ለዓለም"), vec!["ሰላም", "ለኣለም"]);
    }

    #[test]
    fn homophone_fixture_table() {
        let cases = [
            ("ሐበሻ", "ሀበሻ"),
            ("ኀይል", "ሀይል"),
            ("ኸበረ", "ሀበረ"),
            ("ሠላም", "ሰላም"),
            ("ዐይን", "አይን"),
            ("ፀሐይ", "ጸሀይ"),
            ("ሑ ሒ ሓ ሔ ሕ ሖ", "ሁ ሂ ሃ ሄ ህ ሆ"),
            ("ኁ ኂ ኃ ኄ ኅ ኆ ኇ", "ሁ ሂ ሃ ሄ ህ ሆ ሇ"),
            ("ሡ ሢ ሣ ሤ ሥ ሦ ሧ", "ሱ ሲ ሳ ሴ ስ ሶ ሷ"),
            ("ዑ ዒ ዓ ዔ ዕ ዖ", "ኡ ኢ ኣ ኤ እ ኦ"),
            ("ፁ ፂ ፃ ፄ ፅ ፆ ፇ", "ጹ ጺ ጻ ጼ ጽ ጾ ጿ"),
            ("ሗ ዀ ዃ", "ኋ ኈ ኋ"),
        ];
        for (input, expected) in cases {
            assert_eq!(normalize(input), expected, "input {input}");
        }
    }

    #[test]
    fn table_is_idempotent_and_order_preserving() {
        let table = NormalizationTable::default();
        for (from, to) in table.entries() {
            assert!(!table.is_non_canonical(to), "{from} -> {to}");
        }
        for &(from, to, orders) in SERIES_FOLDS {
            for order in 0..orders {
                let f = char::from_u32(from + order).unwrap();
                let t = char::from_u32(to + order).unwrap();
                assert_eq!(table.get(f), Some(t));
            }
        }
    }

    #[test]
    fn hashtags_keep_body_and_emoji_go() {
        assert_eq!(normalize("#ጥላቻ 😡👍🏽 ሰላም!!"), "ጥላቻ ሰላም");
        assert_eq!(normalize("www.example.com ሰላም"), "ሰላም");
        assert_eq!(normalize("ቁጥር 123 ፲፪ ነው"), "ቁጥር ነው");
        assert_eq!(normalize("  ሰላም\t\nለዓለም  "), "ሰላም ለኣለም");
        assert_eq!(normalize("ሰላም።ለዓለም"), "ሰላም ለኣለም");
    }

    #[test]
    fn table_file_format() {
        let table = NormalizationTable::from_tsv("# comment\nሐ\tሀ\n\nዐ\tአ\n").unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.get('ሐ'), Some('ሀ'));
        assert_eq!(NormalizationTable::from_tsv(&table.to_tsv()).unwrap(), table);

        assert!(matches!(
            NormalizationTable::from_tsv("ሐሐ\tሀ"),
            Err(TableError::Malformed { line: 1 })
        ));
        assert!(matches!(
            NormalizationTable::from_tsv("ሐ\tሀ\nሀ\tሁ"),
            Err(TableError::NotIdempotent { .. })
        ));
        assert!(matches!(
            NormalizationTable::from_tsv("ሐ\tሀ\nሐ\tሁ"),
            Err(TableError::Conflict { .. })
        ));

        let mut extended = NormalizationTable::default();
        extended.extend_from_tsv("ቐ\tቀ").unwrap();
        assert_eq!(Normalizer::new(extended).normalize("ቐለ"), "ቀለ");
    }

    fn assert_clean_output(out: &str) {
        let table = NormalizationTable::default();
        assert_eq!(out.trim(), out);
        assert!(!out.contains("  "));
        assert!(!contains_url(out));
        for c in out.chars() {
            assert!(!table.is_non_canonical(c), "non-canonical {c:?} in {out:?}");
            assert!(!ETHIOPIC_PUNCTUATION.contains(&c) && c != WORDSPACE);
            assert!(!c.is_ascii_punctuation() && !c.is_numeric(), "{c:?} in {out:?}");
            assert!(c == ' ' || !c.is_whitespace());
        }
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once.clone());
            assert_clean_output(&once);
        }

        #[test]
        fn tokens_rejoin_to_norm_text(s in "[ሀ-ፚ a-z፡።#@0-9]{0,40}") {
            let doc = CleanDocument::new("x", s);
            prop_assert!(doc.tokens.iter().all(|t| !t.is_empty()));
            prop_assert_eq!(doc.tokens.join(" "), doc.norm_text);
        }
    }
}
