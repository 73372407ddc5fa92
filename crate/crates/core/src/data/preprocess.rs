use std::collections::HashSet;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Validates UTF-8, reporting the byte offset of the first bad sequence.
pub fn decode_utf8(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| Error::Encoding {
        offset: e.valid_up_to(),
    })
}

fn map_punctuation(c: char, out: &mut String) {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2032}' => out.push('\''),
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{2033}' | '\u{00AB}'
        | '\u{00BB}' => out.push('"'),
        '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2015}'
        | '\u{2212}' => out.push('-'),
        '\u{2026}' => out.push_str("..."),
        _ => out.push(c),
    }
}

fn clean_line(line: &str) -> String {
    let mut mapped = String::with_capacity(line.len());
    for c in line.nfc() {
        map_punctuation(c, &mut mapped);
    }
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Streaming cleaner: NFC normalization, straight quotes and dashes,
/// collapsed whitespace, corpus-wide exact-line deduplication. Blank lines
/// separate documents; the output uses exactly one empty line between
/// documents.
#[derive(Debug, Default)]
pub struct Preprocessor {
    seen: HashSet<String>,
    out: Vec<String>,
}

impl Preprocessor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one file's text. A file boundary is also a document boundary.
    pub fn push(&mut self, raw: &str) {
        self.break_document();
        for line in raw.lines() {
            let cleaned = clean_line(line);
            if cleaned.is_empty() {
                self.break_document();
            } else if self.seen.insert(cleaned.clone()) {
                self.out.push(cleaned);
            }
        }
    }

    fn break_document(&mut self) {
        if self.out.last().is_some_and(|l| !l.is_empty()) {
            self.out.push(String::new());
        }
    }

    pub fn finish(mut self) -> String {
        while self.out.last().is_some_and(String::is_empty) {
            self.out.pop();
        }
        self.out.join("\n")
    }
}

/// Splits cleaned text into documents, each a space-joined run of lines.
pub fn documents(cleaned: &str) -> Vec<String> {
    let mut docs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in cleaned.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                docs.push(current.join(" "));
                current.clear();
            }
        } else {
            current.push(line.trim());
        }
    }
    if !current.is_empty() {
        docs.push(current.join(" "));
    }
    docs
}
