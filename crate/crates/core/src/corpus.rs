//! Annotated posts, offset-tracking tokenization and label projection.
//!
//! All offsets are character (Unicode scalar) indices, never byte indices.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-token label. The index order is fixed: `NonToxic = 0`, `Toxic = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NonToxic,
    Toxic,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::NonToxic, Label::Toxic];

    pub fn index(self) -> usize {
        match self {
            Label::NonToxic => 0,
            Label::Toxic => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::NonToxic => "NonToxic",
            Label::Toxic => "Toxic",
        }
    }
}

/// One text with its gold toxic character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    /// `None` only for unlabeled (prediction-time) posts.
    pub gold_offsets: Option<BTreeSet<usize>>,
}

impl Post {
    /// Builds a post, rejecting offsets that fall outside the text.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        gold_offsets: Option<BTreeSet<usize>>,
    ) -> Result<Self> {
        let post = Post {
            id: id.into(),
            text: text.into(),
            gold_offsets,
        };
        post.validate(0)?;
        Ok(post)
    }

    pub fn unlabeled(id: impl Into<String>, text: impl Into<String>) -> Self {
        Post {
            id: id.into(),
            text: text.into(),
            gold_offsets: None,
        }
    }

    /// Length of the text in characters.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    fn validate(&self, row: usize) -> Result<()> {
        if let Some(offsets) = &self.gold_offsets {
            let len = self.char_len();
            if let Some(&offset) = offsets.iter().next_back().filter(|&&o| o >= len) {
                return Err(Error::OffsetOutOfRange { row, offset, len });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub char_start: usize,
    /// Exclusive.
    pub char_end: usize,
    pub label: Option<Label>,
}

impl Token {
    pub fn new(surface: impl Into<String>, char_start: usize, char_end: usize) -> Self {
        Token {
            surface: surface.into(),
            char_start,
            char_end,
            label: None,
        }
    }

    pub fn chars(&self) -> std::ops::Range<usize> {
        self.char_start..self.char_end
    }

    /// Case-folded surface, the key used by TF-IDF, the word list and the
    /// embedding hash.
    pub fn folded(&self) -> String {
        self.surface.to_lowercase()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedPost {
    pub post: Post,
    pub tokens: Vec<Token>,
}

impl TokenizedPost {
    /// Tokenizes the post and, when it carries gold offsets, labels the tokens.
    pub fn from_post(post: Post) -> Self {
        let tokens = tokenize(&post.text);
        if post.gold_offsets.is_some() {
            project_labels(post, tokens).expect("gold offsets checked above")
        } else {
            TokenizedPost { post, tokens }
        }
    }

    /// Gold label indices; `None` when any token is unlabeled.
    pub fn gold_indices(&self) -> Option<Vec<usize>> {
        self.tokens
            .iter()
            .map(|t| t.label.map(Label::index))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub posts: Vec<Post>,
    pub split_name: String,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate post ids.
    pub fn new(posts: Vec<Post>, split_name: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for post in &posts {
            if !seen.insert(post.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate post id {:?}", post.id)));
            }
        }
        Ok(Dataset {
            posts,
            split_name: split_name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn tokenized(&self) -> Vec<TokenizedPost> {
        self.posts.iter().cloned().map(TokenizedPost::from_post).collect()
    }
}

/// Reads a bracketed integer-list literal such as `[3, 4, 5]`.
pub fn parse_offset_literal(literal: &str) -> std::result::Result<BTreeSet<usize>, String> {
    let trimmed = literal.trim();
    let inner = trimmed
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| format!("malformed span literal {trimmed:?}"))?;
    let inner = inner.trim();
    if inner.is_empty() {
        return Ok(BTreeSet::new());
    }
    inner
        .split(',')
        .map(|item| {
            item.trim()
                .parse::<usize>()
                .map_err(|_| format!("malformed span literal {trimmed:?}: bad entry {:?}", item.trim()))
        })
        .collect()
}

/// Writes offsets as `[a, b, c]`.
pub fn format_offset_literal(offsets: &BTreeSet<usize>) -> String {
    let items: Vec<String> = offsets.iter().map(|o| o.to_string()).collect();
    format!("[{}]", items.join(", "))
}

/// Parses a task CSV file (`spans`, `text`, optional `id` columns).
///
/// Posts without an `id` column are numbered by their zero-based row index.
/// The split name is taken from the file stem.
pub fn parse_dataset(path: &Path, has_gold: bool) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let split = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset_reader(file, has_gold, &split)
}

pub fn parse_dataset_reader<R: Read>(reader: R, has_gold: bool, split_name: &str) -> Result<Dataset> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| Error::Parse { row: 0, message: e.to_string() })?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let text_col = column("text").ok_or_else(|| Error::Parse {
        row: 0,
        message: "missing `text` column".into(),
    })?;
    let spans_col = column("spans");
    let id_col = column("id");
    if has_gold && spans_col.is_none() {
        return Err(Error::Parse {
            row: 0,
            message: "missing `spans` column".into(),
        });
    }

    let mut posts = Vec::new();
    for (index, record) in csv.records().enumerate() {
        let row = index + 1;
        let record = record.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let field = |col: usize| {
            record.get(col).ok_or_else(|| Error::Parse {
                row,
                message: format!("missing field {col}"),
            })
        };
        let text = field(text_col)?.to_string();
        let id = match id_col {
            Some(col) => field(col)?.to_string(),
            None => index.to_string(),
        };
        let gold_offsets = match spans_col {
            Some(col) => Some(
                parse_offset_literal(field(col)?).map_err(|message| Error::Parse { row, message })?,
            ),
            None => None,
        };
        let post = Post { id, text, gold_offsets };
        post.validate(row)?;
        posts.push(post);
    }
    Dataset::new(posts, split_name)
}

/// Writes a dataset in the task CSV layout with an explicit `id` column.
pub fn write_dataset_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    csv.write_record(["id", "spans", "text"]).map_err(fmt)?;
    for post in &dataset.posts {
        let spans = post
            .gold_offsets
            .as_ref()
            .map(format_offset_literal)
            .unwrap_or_else(|| "[]".into());
        csv.write_record([post.id.as_str(), spans.as_str(), post.text.as_str()])
            .map_err(fmt)?;
    }
    csv.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// Canonical line-delimited form: one JSON object per post.
pub fn write_jsonl<W: Write>(posts: &[Post], mut writer: W) -> Result<()> {
    for post in posts {
        let line = serde_json::to_string(post).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(writer, "{line}").map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(())
}

pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<Post>> {
    let mut posts = Vec::new();
    for (index, line) in BufReader::new(reader).lines().enumerate() {
        let row = index + 1;
        let line = line.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let post: Post =
            serde_json::from_str(&line).map_err(|e| Error::Parse { row, message: e.to_string() })?;
        post.validate(row)?;
        posts.push(post);
    }
    Ok(posts)
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Word-level tokenizer: maximal alphanumeric runs (with internal
/// apostrophes) and single punctuation characters. Whitespace is dropped.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_alphanumeric() {
            i += 1;
            while i < chars.len() {
                if chars[i].is_alphanumeric() {
                    i += 1;
                } else if is_apostrophe(chars[i])
                    && i + 1 < chars.len()
                    && chars[i + 1].is_alphanumeric()
                {
                    i += 2;
                } else {
                    break;
                }
            }
        } else {
            i += 1;
        }
        tokens.push(Token::new(chars[start..i].iter().collect::<String>(), start, i));
    }
    tokens
}

/// Labels each token Toxic iff any of its characters is a gold offset.
pub fn project_labels(post: Post, mut tokens: Vec<Token>) -> Result<TokenizedPost> {
    let gold = post
        .gold_offsets
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("post {:?} has no gold offsets", post.id)))?;
    for token in &mut tokens {
        token.label = Some(label_for(gold, token));
    }
    Ok(TokenizedPost { post, tokens })
}

/// Any-overlap rule shared by gold projection and prediction re-projection.
pub fn label_for(offsets: &BTreeSet<usize>, token: &Token) -> Label {
    if offsets.range(token.chars()).next().is_some() {
        Label::Toxic
    } else {
        Label::NonToxic
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spans(tokens: &[Token]) -> Vec<(&str, usize, usize)> {
        tokens
            .iter()
            .map(|t| (t.surface.as_str(), t.char_start, t.char_end))
            .collect()
    }

    #[test]
    fn tokenize_words_and_punctuation() {
        assert_eq!(
            spans(&tokenize("Total rubbish")),
            vec![("Total", 0, 5), ("rubbish", 6, 13)]
        );
        assert_eq!(spans(&tokenize("troll!")), vec![("troll", 0, 5), ("!", 5, 6)]);
        assert_eq!(
            spans(&tokenize("PATHETIC LIB LOSER")),
            vec![("PATHETIC", 0, 8), ("LIB", 9, 12), ("LOSER", 13, 18)]
        );
        assert!(tokenize("").is_empty());
        assert!(tokenize(" \t\n").is_empty());
    }

    #[test]
    fn tokenize_apostrophes_and_unicode() {
        assert_eq!(
            spans(&tokenize("don't 'quote'")),
            vec![("don't", 0, 5), ("'", 6, 7), ("quote", 7, 12), ("'", 12, 13)]
        );
        // offsets count characters, not bytes
        assert_eq!(spans(&tokenize("né idiot")), vec![("né", 0, 2), ("idiot", 3, 8)]);
        assert_eq!(spans(&tokenize("...")).len(), 3);
    }

    #[test]
    fn projection_any_overlap() {
        let post = Post::new("0", "Total rubbish", Some((6..13).collect())).unwrap();
        let tp = project_labels(post, tokenize("Total rubbish")).unwrap();
        assert_eq!(tp.gold_indices().unwrap(), vec![0, 1]);

        let post = Post::new("0", "Total rubbish", Some((0..13).collect())).unwrap();
        assert_eq!(TokenizedPost::from_post(post).gold_indices().unwrap(), vec![1, 1]);

        let post = Post::new("0", "Total rubbish", Some([4, 5, 6].into())).unwrap();
        assert_eq!(TokenizedPost::from_post(post).gold_indices().unwrap(), vec![1, 1]);

        let post = Post::new("0", "Total rubbish", Some([5].into())).unwrap();
        assert_eq!(TokenizedPost::from_post(post).gold_indices().unwrap(), vec![0, 0]);
    }

    #[test]
    fn projection_requires_gold() {
        let post = Post::unlabeled("x", "hello");
        assert!(matches!(project_labels(post, tokenize("hello")), Err(Error::Invalid(_))));
    }

    #[test]
    fn parse_rows() {
        let csv = "spans,text\n\"[0, 1, 2, 3]\",dumb idea\n\"[]\",\"fine point\"\n\"[3, 9]\",ab cdefg hi\n";
        let ds = parse_dataset_reader(csv.as_bytes(), true, "train").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.posts[0].gold_offsets, Some((0..4).collect()));
        assert_eq!(ds.posts[0].text, "dumb idea");
        assert_eq!(ds.posts[1].gold_offsets, Some(BTreeSet::new()));
        assert_eq!(ds.posts[2].gold_offsets, Some([3, 9].into()));
        assert_eq!(ds.posts[2].id, "2");
    }

    #[test]
    fn parse_rejects_offset_at_text_length() {
        let csv = "spans,text\n\"[]\",ok\n\"[11]\",ab cdefg hi\n";
        match parse_dataset_reader(csv.as_bytes(), true, "t") {
            Err(Error::OffsetOutOfRange { row, offset, len }) => {
                assert_eq!((row, offset, len), (2, 11, 11));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_bad_literal() {
        let csv = "spans,text\n\"[1, x]\",ab\n";
        assert!(matches!(
            parse_dataset_reader(csv.as_bytes(), true, "t"),
            Err(Error::Parse { row: 1, .. })
        ));
        let csv = "spans,text\n\"1, 2\",ab\n";
        assert!(matches!(
            parse_dataset_reader(csv.as_bytes(), true, "t"),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn parse_without_gold_and_crlf() {
        let csv = "id,text\r\na,\"hello, world\"\r\nb,bye\r\n";
        let ds = parse_dataset_reader(csv.as_bytes(), false, "test").unwrap();
        assert_eq!(ds.posts[0].id, "a");
        assert_eq!(ds.posts[0].text, "hello, world");
        assert!(ds.posts[1].gold_offsets.is_none());
        assert!(parse_dataset_reader(csv.as_bytes(), true, "test").is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let posts = vec![Post::unlabeled("a", "x"), Post::unlabeled("a", "y")];
        assert!(Dataset::new(posts, "t").is_err());
    }

    fn arb_text() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                Just("a"), Just("Bé"), Just("x9"), Just(" "), Just("  "), Just("\t"),
                Just("!"), Just(","), Just("'"), Just("don't"), Just("\u{1F600}")
            ],
            0..20,
        )
        .prop_map(|parts| parts.concat())
    }

    proptest! {
        #[test]
        fn tokens_reconstruct_text(text in arb_text()) {
            let chars: Vec<char> = text.chars().collect();
            let tokens = tokenize(&text);
            let mut rebuilt = String::new();
            let mut cursor = 0;
            for t in &tokens {
                prop_assert!(t.char_start < t.char_end && t.char_end <= chars.len());
                prop_assert!(t.char_start >= cursor);
                let gap: String = chars[cursor..t.char_start].iter().collect();
                prop_assert!(gap.chars().all(char::is_whitespace));
                rebuilt.push_str(&gap);
                let surface: String = chars[t.chars()].iter().collect();
                prop_assert_eq!(&surface, &t.surface);
                prop_assert!(!t.surface.chars().any(char::is_whitespace));
                rebuilt.push_str(&t.surface);
                cursor = t.char_end;
            }
            rebuilt.extend(chars[cursor..].iter());
            prop_assert_eq!(rebuilt, text.clone());
            prop_assert_eq!(tokens.is_empty(), text.chars().all(char::is_whitespace));
        }

        #[test]
        fn projection_is_monotone(text in arb_text(), seed in proptest::collection::vec(any::<bool>(), 0..64), extra in proptest::collection::vec(any::<bool>(), 0..64)) {
            let len = text.chars().count();
            let small: BTreeSet<usize> = (0..len).filter(|&i| seed.get(i).copied().unwrap_or(false)).collect();
            let mut big = small.clone();
            big.extend((0..len).filter(|&i| extra.get(i).copied().unwrap_or(false)));
            let a = TokenizedPost::from_post(Post::new("p", text.clone(), Some(small)).unwrap());
            let b = TokenizedPost::from_post(Post::new("p", text.clone(), Some(big)).unwrap());
            for (ta, tb) in a.tokens.iter().zip(&b.tokens) {
                prop_assert!(!(ta.label == Some(Label::Toxic) && tb.label == Some(Label::NonToxic)));
            }
        }

        #[test]
        fn csv_round_trip(texts in proptest::collection::vec(arb_text(), 1..6)) {
            let posts: Vec<Post> = texts.iter().enumerate().map(|(i, t)| {
                let len = t.chars().count();
                Post::new(format!("p{i}"), t.clone(), Some((0..len).step_by(2).collect())).unwrap()
            }).collect();
            let ds = Dataset::new(posts, "train").unwrap();
            let mut buf = Vec::new();
            write_dataset_csv(&ds, &mut buf).unwrap();
            let back = parse_dataset_reader(buf.as_slice(), true, "train").unwrap();
            prop_assert_eq!(&back, &ds);

            let mut buf = Vec::new();
            write_jsonl(&ds.posts, &mut buf).unwrap();
            prop_assert_eq!(read_jsonl(buf.as_slice()).unwrap(), ds.posts);
        }
    }
}
