//! Decoding token labels into character-offset spans, and the prediction
//! file format (`id<TAB>[offsets]`, one post per line).

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;

use crate::corpus::{format_offset_literal, parse_offset_literal, Label, Token};
use crate::error::{Error, Result};

/// A set of toxic character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpanSet {
    offsets: BTreeSet<usize>,
}

impl SpanSet {
    pub fn new(offsets: BTreeSet<usize>) -> Self {
        SpanSet { offsets }
    }

    pub fn from_intervals(intervals: &[Range<usize>]) -> Self {
        SpanSet {
            offsets: intervals_to_offsets(intervals),
        }
    }

    pub fn offsets(&self) -> &BTreeSet<usize> {
        &self.offsets
    }

    pub fn into_offsets(self) -> BTreeSet<usize> {
        self.offsets
    }

    /// Maximal runs of consecutive offsets, sorted.
    pub fn intervals(&self) -> Vec<Range<usize>> {
        offsets_to_intervals(&self.offsets)
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

impl From<BTreeSet<usize>> for SpanSet {
    fn from(offsets: BTreeSet<usize>) -> Self {
        SpanSet::new(offsets)
    }
}

pub fn offsets_to_intervals(offsets: &BTreeSet<usize>) -> Vec<Range<usize>> {
    let mut intervals: Vec<Range<usize>> = Vec::new();
    for &o in offsets {
        match intervals.last_mut() {
            Some(last) if last.end == o => last.end = o + 1,
            _ => intervals.push(o..o + 1),
        }
    }
    intervals
}

pub fn intervals_to_offsets(intervals: &[Range<usize>]) -> BTreeSet<usize> {
    intervals.iter().flat_map(|r| r.clone()).collect()
}

/// Union of the character ranges of Toxic tokens. Whitespace-only gaps
/// between two consecutive Toxic tokens are filled in; any other gap content
/// (punctuation is itself a token) breaks the span.
pub fn labels_to_spans(tokens: &[Token], labels: &[usize], text: &str) -> Result<SpanSet> {
    if tokens.len() != labels.len() {
        return Err(Error::Length {
            expected: tokens.len(),
            found: labels.len(),
        });
    }
    let chars: Vec<char> = text.chars().collect();
    let toxic = Label::Toxic.index();
    let mut offsets = BTreeSet::new();
    let mut previous: Option<&Token> = None;
    for (token, &label) in tokens.iter().zip(labels) {
        if label == toxic {
            if let Some(prev) = previous {
                let gap = prev.char_end..token.char_start;
                if chars[gap.clone()].iter().all(|c| c.is_whitespace()) {
                    offsets.extend(gap);
                }
            }
            offsets.extend(token.chars());
            previous = Some(token);
        } else {
            previous = None;
        }
    }
    Ok(SpanSet { offsets })
}

/// Writes `id<TAB>[o1, o2, ...]` lines.
pub fn write_predictions<'a, W, I>(records: I, mut writer: W) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a SpanSet)>,
{
    for (id, spans) in records {
        if id.contains(['\t', '\n', '\r']) {
            return Err(Error::Invalid(format!("post id {id:?} cannot be written to a prediction file")));
        }
        writeln!(writer, "{id}\t{}", format_offset_literal(&spans.offsets))
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(())
}

/// Reads a prediction file, preserving line order.
pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<(String, SpanSet)>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, literal) = line.split_once('\t').ok_or_else(|| Error::Parse {
            row,
            message: "expected `id<TAB>[offsets]`".into(),
        })?;
        let offsets = parse_offset_literal(literal).map_err(|message| Error::Parse { row, message })?;
        if !seen.insert(id.to_string()) {
            return Err(Error::Parse {
                row,
                message: format!("duplicate post id {id:?}"),
            });
        }
        out.push((id.to_string(), SpanSet::new(offsets)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{project_labels, tokenize, Post};
    use proptest::prelude::*;

    #[test]
    fn decode_examples() {
        let text = "Total rubbish";
        let tokens = tokenize(text);
        let s = labels_to_spans(&tokens, &[0, 1], text).unwrap();
        assert_eq!(s.offsets(), &(6..13).collect());
        let s = labels_to_spans(&tokens, &[1, 1], text).unwrap();
        assert_eq!(s.offsets(), &(0..13).collect());
        assert!(labels_to_spans(&tokens, &[0, 0], text).unwrap().is_empty());
        assert!(matches!(labels_to_spans(&tokens, &[0], text), Err(Error::Length { .. })));
    }

    #[test]
    fn punctuation_is_not_bridged() {
        let text = "idiot, moron";
        let tokens = tokenize(text);
        let s = labels_to_spans(&tokens, &[1, 0, 1], text).unwrap();
        assert_eq!(s.intervals(), vec![0..5, 7..12]);
        let s = labels_to_spans(&tokens, &[1, 1, 1], text).unwrap();
        assert_eq!(s.intervals(), vec![0..12]);
    }

    #[test]
    fn interval_examples() {
        assert!(offsets_to_intervals(&BTreeSet::new()).is_empty());
        assert_eq!(offsets_to_intervals(&[3, 4, 5, 9].into()), vec![3..6, 9..10]);
        assert_eq!(offsets_to_intervals(&[0].into()), vec![0..1]);
    }

    #[test]
    fn prediction_file_round_trip() {
        let a = SpanSet::new([1, 2, 3].into());
        let b = SpanSet::default();
        let mut buf = Vec::new();
        write_predictions([("p1", &a), ("p2", &b)], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "p1\t[1, 2, 3]\np2\t[]\n");
        let back = read_predictions(buf.as_slice()).unwrap();
        assert_eq!(back, vec![("p1".to_string(), a), ("p2".to_string(), b)]);
        assert!(read_predictions("p1 [1]\n".as_bytes()).is_err());
        assert!(read_predictions("p1\t[1]\np1\t[2]\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn intervals_invert(offsets in proptest::collection::btree_set(0usize..200, 0..60)) {
            let intervals = offsets_to_intervals(&offsets);
            for w in intervals.windows(2) {
                prop_assert!(w[0].end < w[1].start);
            }
            prop_assert_eq!(intervals_to_offsets(&intervals), offsets);
        }

        #[test]
        fn decode_then_reproject(words in proptest::collection::vec(
            prop_oneof![Just("idiot"), Just("ok"), Just(","), Just("!"), Just("don't")], 0..16),
            seps in proptest::collection::vec(prop_oneof![Just(" "), Just(""), Just("  ")], 16),
            labels in proptest::collection::vec(0usize..2, 32)) {
            let mut text = String::new();
            for (w, s) in words.iter().zip(&seps) {
                text.push_str(w);
                text.push_str(s);
            }
            let tokens = tokenize(&text);
            let labels = &labels[..tokens.len().min(labels.len())];
            prop_assume!(labels.len() == tokens.len());
            let spans = labels_to_spans(&tokens, labels, &text).unwrap();
            let len = text.chars().count();
            prop_assert!(spans.offsets().iter().all(|&o| o < len));
            let post = Post::new("p", text.clone(), Some(spans.into_offsets())).unwrap();
            let back = project_labels(post, tokens).unwrap().gold_indices().unwrap();
            prop_assert_eq!(back, labels.to_vec());
        }
    }
}
