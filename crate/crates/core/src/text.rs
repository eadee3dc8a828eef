//! Tokenization and Arabic orthographic normalization.
//!
//! English text is lowercased; Arabic text is folded with the usual IR rule
//! set: tashkeel and tatweel are dropped, hamza-carrying alef forms collapse to
//! bare alef, ta marbuta becomes ha and alef maqsura becomes ya. Tokens are
//! split on whitespace and on any Unicode punctuation character; digits stay
//! inside their tokens.

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    En,
    Ar,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<String>,
    lang: Lang,
}

impl TokenSequence {
    /// Builds a sequence from already-normalized tokens. Empty tokens and
    /// tokens with embedded whitespace are dropped to keep the invariants.
    pub fn from_tokens<I, S>(tokens: I, lang: Lang) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t: &String| !t.is_empty() && !t.chars().any(char::is_whitespace))
            .collect();
        TokenSequence { tokens, lang }
    }

    pub fn empty(lang: Lang) -> Self {
        TokenSequence {
            tokens: Vec::new(),
            lang,
        }
    }

    pub fn lang(&self) -> Lang {
        self.lang
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    /// Concatenates two sequences of the same language.
    pub fn concat(&self, other: &TokenSequence) -> TokenSequence {
        let mut tokens = self.tokens.clone();
        tokens.extend(other.tokens.iter().cloned());
        TokenSequence {
            tokens,
            lang: self.lang,
        }
    }
}

fn is_punctuation(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
    )
}

fn is_delimiter(c: char) -> bool {
    c.is_whitespace() || is_punctuation(c)
}

pub fn tokenize(text: &str, lang: Lang) -> TokenSequence {
    let tokens = text
        .split(is_delimiter)
        .filter(|t| !t.is_empty())
        .filter_map(|t| {
            let t = match lang {
                Lang::En => t.to_lowercase(),
                Lang::Ar => normalize_arabic(t),
            };
            // normalization may strip a token down to nothing (a lone diacritic)
            (!t.is_empty()).then_some(t)
        })
        .collect();
    TokenSequence { tokens, lang }
}

const TATWEEL: char = '\u{0640}';

fn is_tashkeel(c: char) -> bool {
    ('\u{064B}'..='\u{0652}').contains(&c)
}

pub fn normalize_arabic(token: &str) -> String {
    token
        .chars()
        .filter(|&c| c != TATWEEL && !is_tashkeel(c))
        .map(|c| match c {
            '\u{0623}' | '\u{0625}' | '\u{0622}' | '\u{0671}' => '\u{0627}',
            '\u{0629}' => '\u{0647}',
            '\u{0649}' => '\u{064A}',
            other => other,
        })
        .collect()
}

/// True when the token contains at least one character from the Arabic blocks.
pub fn is_arabic(token: &str) -> bool {
    token.chars().any(|c| {
        ('\u{0600}'..='\u{06FF}').contains(&c)
            || ('\u{0750}'..='\u{077F}').contains(&c)
            || ('\u{08A0}'..='\u{08FF}').contains(&c)
            || ('\u{FB50}'..='\u{FDFF}').contains(&c)
            || ('\u{FE70}'..='\u{FEFF}').contains(&c)
    })
}

/// Normalizes a vocabulary key by script: Arabic tokens are folded, anything
/// else is lowercased. An optional `en:` / `ar:` prefix is stripped first.
pub fn normalize_key(token: &str) -> String {
    let bare = token
        .strip_prefix("en:")
        .or_else(|| token.strip_prefix("ar:"))
        .unwrap_or(token);
    if is_arabic(bare) {
        normalize_arabic(bare)
    } else {
        bare.to_lowercase()
    }
}

pub fn truncate(seq: &TokenSequence, max_len: usize) -> TokenSequence {
    debug_assert!(max_len >= 1);
    TokenSequence {
        tokens: seq.tokens.iter().take(max_len).cloned().collect(),
        lang: seq.lang,
    }
}
