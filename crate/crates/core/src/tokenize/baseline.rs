use std::collections::HashMap;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use super::{Pos, Token, Tokenizer};
use crate::error::{Error, Result};

/// Terms matched whole by the baseline tokenizer, longest entry first.
#[derive(Debug, Clone, Default)]
pub struct UserDictionary {
    entries: HashMap<String, Pos>,
    max_chars: usize,
}

impl UserDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces an entry; empty terms are ignored.
    pub fn insert(&mut self, term: &str, pos: Pos) {
        let term: String = term.trim().nfkc().collect();
        if term.is_empty() {
            return;
        }
        self.max_chars = self.max_chars.max(term.chars().count());
        self.entries.insert(term, pos);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One entry per line: `term` or `term<TAB>POS`. `#` starts a comment line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut dict = UserDictionary::new();
        for line in text.lines() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (term, pos) = match line.split_once('\t') {
                Some((t, p)) => (t, p.parse()?),
                None => (line, Pos::Noun),
            };
            dict.insert(term, pos);
        }
        Ok(dict)
    }

    fn longest_at(&self, chars: &[char], start: usize) -> Option<(usize, Pos)> {
        let limit = self.max_chars.min(chars.len() - start);
        let mut candidate = String::new();
        let mut best = None;
        for (len, c) in chars[start..start + limit].iter().enumerate() {
            candidate.push(*c);
            if let Some(pos) = self.entries.get(&candidate) {
                best = Some((len + 1, *pos));
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Script {
    Han,
    Hiragana,
    Katakana,
    Latin,
    Digit,
    Separator,
}

fn script_of(c: char) -> Script {
    match c {
        '\u{3041}'..='\u{309F}' => Script::Hiragana,
        '\u{30A0}'..='\u{30FF}' | '\u{31F0}'..='\u{31FF}' | '\u{FF66}'..='\u{FF9F}' => {
            Script::Katakana
        }
        '\u{3400}'..='\u{4DBF}'
        | '\u{4E00}'..='\u{9FFF}'
        | '\u{F900}'..='\u{FAFF}'
        | '\u{20000}'..='\u{2FA1F}'
        | '々'
        | '〆' => Script::Han,
        c if c.is_numeric() => Script::Digit,
        c if c.is_alphabetic() => Script::Latin,
        _ => Script::Separator,
    }
}

impl Script {
    fn pos(self) -> Pos {
        match self {
            Script::Han | Script::Katakana | Script::Latin => Pos::Noun,
            _ => Pos::Other,
        }
    }
}

/// Dependency-free tokenizer: dictionary longest match first, otherwise
/// maximal runs of one script. Kanji, katakana and Latin runs are nouns;
/// hiragana and digit runs are not; punctuation and spaces are dropped.
#[derive(Debug, Clone, Default)]
pub struct BaselineTokenizer {
    dictionary: UserDictionary,
}

impl BaselineTokenizer {
    pub fn new(dictionary: UserDictionary) -> Self {
        BaselineTokenizer { dictionary }
    }

    pub fn dictionary(&self) -> &UserDictionary {
        &self.dictionary
    }
}

fn normalize(surface: &str) -> String {
    surface.nfkc().collect::<String>().to_lowercase()
}

impl Tokenizer for BaselineTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        let chars: Vec<char> = text.nfkc().collect();
        let dict_at: Vec<Option<(usize, Pos)>> = if self.dictionary.is_empty() {
            vec![None; chars.len()]
        } else {
            (0..chars.len())
                .map(|i| self.dictionary.longest_at(&chars, i))
                .collect()
        };

        let mut tokens = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if let Some((len, pos)) = dict_at[i] {
                let surface: String = chars[i..i + len].iter().collect();
                tokens.push(Token::new(surface.clone(), normalize(&surface), pos));
                i += len;
                continue;
            }
            let script = script_of(chars[i]);
            let mut end = i + 1;
            while end < chars.len() && script_of(chars[end]) == script && dict_at[end].is_none() {
                end += 1;
            }
            if script != Script::Separator {
                let surface: String = chars[i..end].iter().collect();
                tokens.push(Token::new(surface.clone(), normalize(&surface), script.pos()));
            }
            i = end;
        }
        Ok(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(tokens: &[Token]) -> Vec<(String, Pos)> {
        tokens.iter().map(|t| (t.surface.clone(), t.pos)).collect()
    }

    #[test]
    fn empty_text() {
        assert!(BaselineTokenizer::default().tokenize("").unwrap().is_empty());
    }

    #[test]
    fn dictionary_compounds_stay_whole() {
        let mut dict = UserDictionary::new();
        dict.insert("福島第一原発", Pos::Noun);
        dict.insert("処理水", Pos::Noun);
        dict.insert("福島", Pos::Noun);
        let tok = BaselineTokenizer::new(dict);
        let got = pairs(&tok.tokenize("福島第一原発の処理水").unwrap());
        assert_eq!(
            got,
            vec![
                ("福島第一原発".to_string(), Pos::Noun),
                ("の".to_string(), Pos::Other),
                ("処理水".to_string(), Pos::Noun),
            ]
        );
    }

    #[test]
    fn script_segmentation() {
        let tok = BaselineTokenizer::default();
        let got = tok.tokenize("abc 原発").unwrap();
        assert_eq!(pairs(&got), vec![("abc".into(), Pos::Noun), ("原発".into(), Pos::Noun)]);
        let got = tok.tokenize("ＩＡＥＡが2023年に").unwrap();
        let surfaces: Vec<_> = got.iter().map(|t| t.normalized.as_str()).collect();
        assert_eq!(surfaces, ["iaea", "が", "2023", "年", "に"]);
    }

    #[test]
    fn dictionary_entry_inside_a_run_splits_it() {
        let mut dict = UserDictionary::new();
        dict.insert("原発", Pos::Noun);
        let tok = BaselineTokenizer::new(dict);
        let got: Vec<_> = tok
            .tokenize("東京原発停止")
            .unwrap()
            .into_iter()
            .map(|t| t.surface)
            .collect();
        assert_eq!(got, ["東京", "原発", "停止"]);
    }

    #[test]
    fn dictionary_file_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dict.txt");
        std::fs::write(&p, "# comment\n処理水\nよい\tOTHER\n\n").unwrap();
        let dict = UserDictionary::load(&p).unwrap();
        assert_eq!(dict.len(), 2);
        let tok = BaselineTokenizer::new(dict);
        let got = pairs(&tok.tokenize("処理水はよい").unwrap());
        assert_eq!(got[0], ("処理水".into(), Pos::Noun));
        assert_eq!(got[2], ("よい".into(), Pos::Other));
        std::fs::write(&p, "x\tVERB\n").unwrap();
        assert!(UserDictionary::load(&p).is_err());
    }
}
