//! Line-oriented text files: `<utt_id> <tok> <tok> ...` per utterance.
//!
//! Unit sequences use ASCII decimal ids and the literal `M` for the mask id.
//! Symbol lines (frame phones, reference phones) carry whitespace-free
//! symbols instead.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use unitfix_core::{ClusterSequence, UnitVocab};

use crate::error::{Error, Result};

pub const MASK_SYMBOL: &str = "M";

/// Formats one sequence line; ids equal to the mask id print as `M`.
pub fn format_units(utt_id: &str, tokens: &[u32], vocab: Option<UnitVocab>) -> String {
    let mut line = String::with_capacity(utt_id.len() + 4 * tokens.len() + 1);
    line.push_str(utt_id);
    for &t in tokens {
        if vocab.is_some_and(|v| t == v.mask_id()) {
            line.push(' ');
            line.push_str(MASK_SYMBOL);
        } else {
            let _ = write!(line, " {t}");
        }
    }
    line.push('\n');
    line
}

/// Parses one sequence line. `M` is accepted only when `allow_mask` is set.
pub fn parse_units(
    line: &str,
    vocab: UnitVocab,
    allow_mask: bool,
) -> std::result::Result<(String, Vec<u32>), String> {
    let mut fields = line.split(' ');
    let utt_id = fields
        .next()
        .filter(|s| !s.is_empty())
        .ok_or("missing utterance id")?;
    let mut tokens = Vec::new();
    for (i, f) in fields.enumerate() {
        let t = if f == MASK_SYMBOL && allow_mask {
            vocab.mask_id()
        } else {
            let t: u32 = f
                .parse()
                .map_err(|_| format!("token {i} of {utt_id}: {f:?} is not a unit id"))?;
            if !vocab.is_unit(t) {
                return Err(format!(
                    "token {i} of {utt_id}: {t} outside vocabulary of {}",
                    vocab.size()
                ));
            }
            t
        };
        tokens.push(t);
    }
    Ok((utt_id.to_string(), tokens))
}

fn lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(Error::parse(
            path,
            text.lines().count(),
            "missing final newline",
        ));
    }
    Ok(text.lines().map(str::to_string).collect())
}

pub fn read_sequences(path: &Path, vocab: UnitVocab) -> Result<Vec<ClusterSequence>> {
    let mut out = Vec::new();
    for (i, line) in lines(path)?.iter().enumerate() {
        let (utt_id, tokens) =
            parse_units(line, vocab, false).map_err(|m| Error::parse(path, i + 1, m))?;
        out.push(ClusterSequence { utt_id, tokens });
    }
    check_unique(path, out.iter().map(|s| s.utt_id.as_str()))?;
    Ok(out)
}

pub fn write_sequences(path: &Path, seqs: &[ClusterSequence]) -> Result<()> {
    let body: String = seqs
        .iter()
        .map(|s| format_units(&s.utt_id, &s.tokens, None))
        .collect();
    write(path, body.as_bytes())
}

pub fn read_symbols(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (i, line) in lines(path)?.iter().enumerate() {
        let mut fields = line.split(' ');
        let utt_id = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::parse(path, i + 1, "missing utterance id"))?;
        let syms: Vec<String> = fields.map(str::to_string).collect();
        if syms.iter().any(String::is_empty) {
            return Err(Error::parse(path, i + 1, "empty symbol (double space?)"));
        }
        out.push((utt_id.to_string(), syms));
    }
    check_unique(path, out.iter().map(|s| s.0.as_str()))?;
    Ok(out)
}

pub fn write_symbols<'a, I>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, Vec<&'a str>)>,
{
    let mut body = String::new();
    for (utt_id, syms) in rows {
        body.push_str(utt_id);
        for s in syms {
            body.push(' ');
            body.push_str(s);
        }
        body.push('\n');
    }
    write(path, body.as_bytes())
}

/// Per-frame confidences, six decimals.
pub fn write_confidences(path: &Path, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let mut body = String::new();
    for (utt_id, conf) in rows {
        body.push_str(utt_id);
        for c in conf {
            let _ = write!(body, " {c:.6}");
        }
        body.push('\n');
    }
    write(path, body.as_bytes())
}

fn check_unique<'a>(path: &Path, ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for (i, id) in ids.enumerate() {
        if !seen.insert(id) {
            return Err(Error::parse(
                path,
                i + 1,
                format!("duplicate utterance id {id}"),
            ));
        }
    }
    Ok(())
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, bytes).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mask_round_trip() {
        let v = UnitVocab::new(500).unwrap();
        let line = format_units("u1", &[7, 500, 500, 9], Some(v));
        assert_eq!(line, "u1 7 M M 9\n");
        assert_eq!(
            parse_units(line.trim_end(), v, true).unwrap().1,
            vec![7, 500, 500, 9]
        );
        assert!(parse_units("u1 7 M", v, false).is_err());
        assert!(parse_units("u1 500", v, false).is_err());
        assert!(parse_units("u1 x", v, false).is_err());
        assert_eq!(parse_units("u1", v, false).unwrap().1, Vec::<u32>::new());
    }

    #[test]
    fn files_round_trip_and_reject_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        let v = UnitVocab::new(10).unwrap();
        let seqs = vec![
            ClusterSequence::new("a", vec![1, 2, 2], v).unwrap(),
            ClusterSequence::empty("b"),
        ];
        write_sequences(&p, &seqs).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a 1 2 2\nb\n");
        assert_eq!(read_sequences(&p, v).unwrap(), seqs);
        fs::write(&p, "a 1\na 2\n").unwrap();
        assert!(read_sequences(&p, v).is_err());
        fs::write(&p, "a 1").unwrap();
        assert!(read_sequences(&p, v).is_err());
    }

    proptest! {
        #[test]
        fn unit_lines_round_trip(tokens in proptest::collection::vec(0u32..=20, 0..40)) {
            let v = UnitVocab::new(20).unwrap();
            let line = format_units("utt", &tokens, Some(v));
            let (id, back) = parse_units(line.trim_end_matches('\n'), v, true).unwrap();
            prop_assert_eq!(id, "utt");
            prop_assert_eq!(back, tokens);
        }
    }
}
