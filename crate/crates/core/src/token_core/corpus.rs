use std::io::{BufRead, BufReader, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::TokenSequence;
use crate::{Error, Result};

/// One line of a JSON-lines token corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusRecord {
    pub id: String,
    pub sequence: TokenSequence,
}

#[derive(Serialize, Deserialize)]
struct Line<'a> {
    id: std::borrow::Cow<'a, str>,
    vocab_size: u32,
    tokens: std::borrow::Cow<'a, [u32]>,
}

/// Reads a corpus, one `{"id", "vocab_size", "tokens"}` object per line.
/// Blank lines are skipped; records keep file order.
pub fn load_corpus(path: impl AsRef<FsPath>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let raw: Line = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let sequence = TokenSequence::new(raw.tokens.into_owned(), raw.vocab_size).map_err(|e| {
            match e {
                Error::VocabViolation { .. } => parse_err(format!("record `{}`: {e}", raw.id)),
                other => parse_err(other.to_string()),
            }
        })?;
        records.push(CorpusRecord {
            id: raw.id.into_owned(),
            sequence,
        });
    }
    Ok(records)
}

pub fn write_corpus<W: Write>(mut writer: W, records: &[CorpusRecord]) -> Result<()> {
    for r in records {
        let line = Line {
            id: r.id.as_str().into(),
            vocab_size: r.sequence.vocab_size(),
            tokens: r.sequence.tokens().into(),
        };
        serde_json::to_writer(&mut writer, &line).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_record() {
        let f = write_tmp("{\"id\":\"a\",\"vocab_size\":2,\"tokens\":[0,1]}\n");
        let c = load_corpus(f.path()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].sequence.tokens(), &[0, 1]);
    }

    #[test]
    fn empty_file() {
        let f = write_tmp("");
        assert!(load_corpus(f.path()).unwrap().is_empty());
    }

    #[test]
    fn vocab_violation_names_token() {
        let f = write_tmp(
            "{\"id\":\"ok\",\"vocab_size\":4,\"tokens\":[1]}\n{\"id\":\"bad\",\"vocab_size\":4,\"tokens\":[0,5]}\n",
        );
        let err = load_corpus(f.path()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{msg}");
        assert!(msg.contains("token 5"), "{msg}");
    }

    #[test]
    fn parse_error_reports_line() {
        let f = write_tmp("{\"id\":\"ok\",\"vocab_size\":4,\"tokens\":[1]}\nnot json\n");
        assert!(matches!(load_corpus(f.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn round_trip_is_exact() {
        let records: Vec<CorpusRecord> = (0..5)
            .map(|i| CorpusRecord {
                id: format!("seq-{i}"),
                sequence: TokenSequence::new((0..=i).map(|t| t % 3).collect(), 3).unwrap(),
            })
            .collect();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write_corpus(&mut f, &records).unwrap();
        f.flush().unwrap();
        assert_eq!(load_corpus(f.path()).unwrap(), records);
    }
}
