//! Corpus JSONL: one `{"id": int, "domain": string, "tokens": [int, ...]}` per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::types::{Corpus, Sample};

#[derive(Serialize)]
struct RecordOut<'a> {
    id: u64,
    domain: &'a str,
    tokens: &'a [u32],
}

/// How strictly to treat unexpected keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    /// Unknown keys become warnings.
    Lenient,
}

#[derive(Debug)]
pub struct CorpusRead {
    pub corpus: Corpus,
    pub warnings: Vec<String>,
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in corpus.samples() {
        let rec = RecordOut {
            id: s.id,
            domain: &corpus.domain_names()[s.domain],
            tokens: &s.tokens,
        };
        let line = serde_json::to_string(&rec).expect("corpus records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Reads a corpus. Domains are numbered in order of first appearance unless
/// `domains` fixes the names, in which case other names are rejected.
pub fn read_corpus(
    path: &Path,
    domains: Option<&[String]>,
    strictness: Strictness,
) -> Result<CorpusRead> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut names: Vec<String> = domains.map(<[String]>::to_vec).unwrap_or_default();
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value =
            serde_json::from_str(&line).map_err(|e| bad(n, format!("invalid JSON: {e}")))?;
        let obj = v
            .as_object()
            .ok_or_else(|| bad(n, "record must be an object"))?;
        for key in obj.keys() {
            if !["id", "domain", "tokens"].contains(&key.as_str()) {
                match strictness {
                    Strictness::Strict => return Err(bad(n, format!("unknown key `{key}`"))),
                    Strictness::Lenient => {
                        warnings.push(format!("line {n}: ignored unknown key `{key}`"))
                    }
                }
            }
        }
        let id = obj
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| bad(n, "`id` must be a non-negative integer"))?;
        let domain = obj
            .get("domain")
            .and_then(Value::as_str)
            .ok_or_else(|| bad(n, "`domain` must be a string"))?;
        let tokens = obj
            .get("tokens")
            .and_then(Value::as_array)
            .ok_or_else(|| bad(n, "`tokens` must be an array"))?
            .iter()
            .map(|t| t.as_u64().and_then(|t| u32::try_from(t).ok()))
            .collect::<Option<Vec<u32>>>()
            .ok_or_else(|| bad(n, "tokens must be non-negative 32-bit integers"))?;
        let d = match names.iter().position(|x| x == domain) {
            Some(d) => d,
            None if domains.is_some() => return Err(bad(n, format!("unknown domain `{domain}`"))),
            None => {
                names.push(domain.to_string());
                names.len() - 1
            }
        };
        samples.push(Sample::new(id, d, tokens));
    }
    if names.is_empty() {
        return Err(Error::InvalidCorpus(format!(
            "{} contains no samples",
            path.display()
        )));
    }
    Ok(CorpusRead {
        corpus: Corpus::new(names, samples)?,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_corpus() -> Corpus {
        Corpus::new(
            vec!["web".into(), "code".into()],
            vec![
                Sample::new(0, 0, vec![1, 2, 3]),
                Sample::new(1, 1, vec![4, 5]),
                Sample::new(2, 0, vec![6, 6, 6, 6]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let c = sample_corpus();
        write_corpus(&p, &c).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"id":0,"domain":"web","tokens":[1,2,3]}"#
        );
        let back = read_corpus(&p, None, Strictness::Strict).unwrap();
        assert_eq!(back.corpus, c);
        assert!(back.warnings.is_empty());
    }

    #[test]
    fn unknown_keys_strict_and_lenient() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(
            &p,
            "{\"id\":0,\"domain\":\"a\",\"tokens\":[1,2],\"src\":\"x\"}\n",
        )
        .unwrap();
        assert!(matches!(
            read_corpus(&p, None, Strictness::Strict),
            Err(Error::Parse { line: 1, .. })
        ));
        let r = read_corpus(&p, None, Strictness::Lenient).unwrap();
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn invalid_records_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let cases = [
            "{\"id\":0,\"domain\":\"a\",\"tokens\":[]}\n",
            "{\"id\":-1,\"domain\":\"a\",\"tokens\":[1,2]}\n",
            "{\"id\":0,\"domain\":3,\"tokens\":[1,2]}\n",
            "{\"id\":0,\"domain\":\"a\",\"tokens\":[1,2]}\n{\"id\":0,\"domain\":\"a\",\"tokens\":[1,2]}\n",
            "{\"id\":0,\"domain\":\"a\",\"tokens\":[1,2]\n",
            "",
        ];
        for case in cases {
            std::fs::write(&p, case).unwrap();
            assert!(read_corpus(&p, None, Strictness::Strict).is_err(), "{case}");
        }
    }

    #[test]
    fn fixed_domain_names() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.jsonl");
        std::fs::write(&p, "{\"id\":5,\"domain\":\"code\",\"tokens\":[1,2]}\n").unwrap();
        let names = vec!["web".to_string(), "code".to_string()];
        let r = read_corpus(&p, Some(&names), Strictness::Strict).unwrap();
        assert_eq!(r.corpus.num_domains(), 2);
        assert_eq!(r.corpus.samples()[0].domain, 1);
        std::fs::write(&p, "{\"id\":5,\"domain\":\"math\",\"tokens\":[1,2]}\n").unwrap();
        assert!(read_corpus(&p, Some(&names), Strictness::Strict).is_err());
    }
}
