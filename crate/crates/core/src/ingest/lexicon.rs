use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::textnorm::{self, Normalizer};

/// What a filtering keyword is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theme {
    Hate,
    Offensive,
    Religion,
    Gender,
}

impl Theme {
    pub const ALL: [Theme; 4] = [Theme::Hate, Theme::Offensive, Theme::Religion, Theme::Gender];

    pub fn as_str(self) -> &'static str {
        match self {
            Theme::Hate => "hate",
            Theme::Offensive => "offensive",
            Theme::Religion => "religion",
            Theme::Gender => "gender",
        }
    }
}

impl fmt::Display for Theme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Theme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Theme::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown theme {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LexiconError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("lexicon is empty")]
    Empty,
}

/// Keywords used to narrow the candidate pool, stored in normalized form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeywordLexicon {
    entries: Vec<(String, Theme)>,
    index: HashMap<String, Vec<Theme>>,
}

impl KeywordLexicon {
    /// Builds a lexicon, normalizing each surface form with `normalizer`.
    /// Duplicate `(surface_form, theme)` pairs collapse.
    pub fn new<S: AsRef<str>>(
        entries: impl IntoIterator<Item = (S, Theme)>,
        normalizer: &Normalizer,
    ) -> Result<Self, LexiconError> {
        let mut lexicon = KeywordLexicon::default();
        for (i, (surface, theme)) in entries.into_iter().enumerate() {
            lexicon
                .insert(surface.as_ref(), theme, normalizer)
                .map_err(|reason| LexiconError::Line { line: i + 1, reason })?;
        }
        Ok(lexicon)
    }

    fn insert(&mut self, surface: &str, theme: Theme, normalizer: &Normalizer) -> Result<(), String> {
        let tokens = textnorm::tokenize(&normalizer.normalize(surface));
        let form = match tokens.as_slice() {
            [single] => single.clone(),
            [] => return Err(format!("surface form {surface:?} is empty after normalization")),
            _ => return Err(format!("surface form {surface:?} spans several tokens")),
        };
        let themes = self.index.entry(form.clone()).or_default();
        if !themes.contains(&theme) {
            themes.push(theme);
            self.entries.push((form, theme));
        }
        Ok(())
    }

    /// Parses `surface_form<TAB>theme` records; blank and `#` lines skipped.
    pub fn from_tsv(text: &str, normalizer: &Normalizer) -> Result<Self, LexiconError> {
        let mut lexicon = KeywordLexicon::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| LexiconError::Line { line: i + 1, reason };
            let (surface, theme) = line
                .split_once('\t')
                .ok_or_else(|| err("expected surface_form<TAB>theme".into()))?;
            let theme = theme.trim().parse::<Theme>().map_err(err)?;
            lexicon.insert(surface, theme, normalizer).map_err(err)?;
        }
        Ok(lexicon)
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(form, theme)| format!("{form}\t{theme}\n"))
            .collect()
    }

    pub fn entries(&self) -> &[(String, Theme)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn themes_of(&self, token: &str) -> &[Theme] {
        self.index.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Distinct themes matched by whole tokens, in theme order.
    pub fn match_themes<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Theme> {
        tokens
            .iter()
            .flat_map(|t| self.themes_of(t.as_ref()).iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}
