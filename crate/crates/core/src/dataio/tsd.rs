//! The task's CSV format: a `spans` column holding a bracketed list of
//! character offsets and a `text` column holding the post.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text_prep::RawPost;

/// How to treat records that fail to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadMode {
    /// The first bad record aborts the read.
    #[default]
    Strict,
    /// Bad records are skipped and reported.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRecord {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TsdData {
    pub records: Vec<RawPost>,
    pub skipped: Vec<SkippedRecord>,
}

/// Parses `"[3, 4, 5]"`; spaces around entries are optional.
pub fn parse_span_literal(s: &str) -> std::result::Result<BTreeSet<usize>, String> {
    let inner = s
        .trim()
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| format!("span list {s:?} is not bracketed"))?;
    if inner.trim().is_empty() {
        return Ok(BTreeSet::new());
    }
    inner
        .split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<usize>()
                .map_err(|_| format!("span list {s:?} has a non-integer entry {part:?}"))
        })
        .collect()
}

pub fn format_span_literal(spans: &BTreeSet<usize>) -> String {
    let items: Vec<String> = spans.iter().map(usize::to_string).collect();
    format!("[{}]", items.join(", "))
}

pub fn read_tsd<R: Read>(reader: R, mode: ReadMode) -> Result<TsdData> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Record {
                line: 1,
                message: format!("header has no `{name}` column"),
            })
    };
    let (spans_col, text_col) = (column("spans")?, column("text")?);
    let mut data = TsdData::default();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let parsed = parse_span_literal(&row[spans_col]).and_then(|spans| RawPost::new(&row[text_col], spans).map_err(|e| e.to_string()));
        match (parsed, mode) {
            (Ok(post), _) => data.records.push(post),
            (Err(message), ReadMode::Strict) => return Err(Error::Record { line, message }),
            (Err(message), ReadMode::Lenient) => {
                log::warn!("skipping record at line {line}: {message}");
                data.skipped.push(SkippedRecord { line, message });
            }
        }
    }
    Ok(data)
}

pub fn read_tsd_csv(path: &Path, mode: ReadMode) -> Result<TsdData> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tsd(file, mode)
}

/// Writes `spans,text` rows.
pub fn write_tsd<'a, W, I>(writer: W, rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a BTreeSet<usize>, &'a str)>,
{
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["spans", "text"])?;
    for (spans, text) in rows {
        wtr.write_record([format_span_literal(spans).as_str(), text])?;
    }
    wtr.flush().map_err(|e| Error::io(Path::new("<csv output>"), e))?;
    Ok(())
}

pub fn write_tsd_csv(path: &Path, posts: &[RawPost]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tsd(file, posts.iter().map(|p| (&p.gold, p.text.as_str())))
}

/// One prediction set per input post, in input order.
pub fn write_predictions(path: &Path, posts: &[RawPost], predictions: &[BTreeSet<usize>]) -> Result<()> {
    if posts.len() != predictions.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} posts",
            predictions.len(),
            posts.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tsd(file, predictions.iter().zip(posts).map(|(p, post)| (p, post.text.as_str())))
}
