use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Sentence, Split, Token, Treebank};
use crate::error::{Error, Result};

const N_COLUMNS: usize = 10;

/// Parses CoNLL-U text into a treebank.
///
/// Only ID, FORM, HEAD and DEPREL are interpreted; the remaining columns
/// are carried along verbatim. Multiword ranges (`n-m`) and empty nodes
/// (`n.m`) are skipped.
pub fn parse_conllu(text: &str, language: &str, split: Split) -> Result<Treebank> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut sent_id: Option<String> = None;
    let mut start_line = 1;

    let mut flush = |tokens: &mut Vec<Token>, sent_id: &mut Option<String>, start_line: usize| -> Result<()> {
        if tokens.is_empty() {
            *sent_id = None;
            return Ok(());
        }
        let sentence = Sentence {
            tokens: std::mem::take(tokens),
            language: language.to_string(),
            source_id: sent_id.take().unwrap_or_else(|| format!("line-{start_line}")),
        };
        sentence.validate()?;
        sentences.push(sentence);
        Ok(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut sent_id, start_line)?;
            start_line = lineno + 1;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("sent_id") {
                let id = id.trim_start().trim_start_matches('=').trim();
                if !id.is_empty() {
                    sent_id = Some(id.to_string());
                }
            }
            continue;
        }

        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != N_COLUMNS {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {N_COLUMNS} tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let index: usize = id.parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("invalid token id '{id}'"),
        })?;
        if index == 0 {
            return Err(Error::Parse {
                line: lineno,
                message: "token ids start at 1".into(),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("invalid head '{}'", cols[6]),
        })?;
        let extra = [cols[2], cols[3], cols[4], cols[5], cols[8], cols[9]]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tokens.push(Token {
            index,
            form: cols[1].to_string(),
            head,
            deprel: cols[7].to_string(),
            extra: Some(extra),
        });
    }
    flush(&mut tokens, &mut sent_id, start_line)?;

    Treebank::new(language, split, sentences)
}

pub fn read_conllu(path: impl AsRef<Path>, language: &str, split: Split) -> Result<Treebank> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conllu(&text, language, split).map_err(|e| match e {
        Error::Parse { line, message } => Error::file(path, format!("line {line}: {message}")),
        Error::Structure { sentence, message } => Error::file(path, format!("sentence {sentence}: {message}")),
        other => other,
    })
}

/// Serializes sentences as CoNLL-U. Columns that were never read are
/// written as `_`.
pub fn to_conllu(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for sentence in sentences {
        let _ = writeln!(out, "# sent_id = {}", sentence.source_id);
        for tok in &sentence.tokens {
            let blank = |i: usize| tok.extra.as_ref().and_then(|e| e.get(i)).map_or("_", String::as_str);
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                tok.index,
                tok.form,
                blank(0),
                blank(1),
                blank(2),
                blank(3),
                tok.head,
                tok.deprel,
                blank(4),
                blank(5)
            );
        }
        out.push('\n');
    }
    out
}

pub fn write_conllu(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_conllu(sentences)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_sentence() {
        let text = "1\tShe\t_\t_\t_\t_\t2\tnsubj\t_\t_\n2\tleft\t_\t_\t_\t_\t0\troot\t_\t_\n";
        let tb = parse_conllu(text, "en", Split::Train).unwrap();
        assert_eq!(tb.len(), 1);
        assert_eq!(tb.sentences[0].len(), 2);
        assert_eq!(tb.sentences[0].heads(), vec![2, 0]);
    }

    #[test]
    fn nine_columns_is_a_parse_error_with_line() {
        let text = "# c\n1\tShe\t_\t_\t_\t_\t2\tnsubj\t_\n";
        match parse_conllu(text, "en", Split::Train) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cycle_is_a_structural_error() {
        let text = "# sent_id = bad\n1\ta\t_\t_\t_\t_\t2\tx\t_\t_\n2\tb\t_\t_\t_\t_\t1\tx\t_\t_\n";
        match parse_conllu(text, "en", Split::Train) {
            Err(Error::Structure { sentence, .. }) => assert_eq!(sentence, "bad"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn multi_root_is_a_structural_error() {
        let text = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n2\tb\t_\t_\t_\t_\t0\troot\t_\t_\n";
        assert!(matches!(parse_conllu(text, "en", Split::Train), Err(Error::Structure { .. })));
    }

    #[test]
    fn skips_ranges_and_empty_nodes() {
        let text = "1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n1\tde\t_\t_\t_\t_\t2\tcase\t_\t_\n2\tel\t_\t_\t_\t_\t0\troot\t_\t_\n2.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n";
        let tb = parse_conllu(text, "es", Split::Dev).unwrap();
        assert_eq!(tb.sentences[0].len(), 2);
    }

    #[test]
    fn crlf_and_trailing_blank_lines() {
        let text = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\r\n\r\n\r\n1\tb\t_\t_\t_\t_\t0\troot\t_\t_\r\n";
        let tb = parse_conllu(text, "en", Split::Test).unwrap();
        assert_eq!(tb.len(), 2);
    }
}
