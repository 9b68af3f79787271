//! Tab-separated event logs and sample files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use super::event::{Behavior, BehaviorSequence, Event, Tier};
use super::samples::{DatasetSplit, Query, Sample, Vocab};
use crate::error::{Error, Result};

pub const EVENT_HEADER: &str = "user_id\titem_id\tcategory_id\ttimestamp\tposition\tlabel\ttier";
pub const DATASET_HEADER: &str = "split\tuser_id\titem_id\tcategory_id\ttimestamp\tposition\tlabel\thistory";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(format!("writing {}", path.display()), e)
}

/// Line cursor that tags parse failures with the path and 1-based line.
struct Lines<'a> {
    path: &'a Path,
    inner: std::io::Lines<BufReader<File>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path) -> Result<Self> {
        Ok(Self {
            path,
            inner: open(path)?.lines(),
            line: 0,
        })
    }

    fn next_line(&mut self) -> Result<Option<String>> {
        match self.inner.next() {
            None => Ok(None),
            Some(Err(e)) => Err(Error::io(format!("reading {}", self.path.display()), e)),
            Some(Ok(s)) => {
                self.line += 1;
                Ok(Some(s))
            }
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn expect_header(&mut self, header: &str) -> Result<()> {
        match self.next_line()? {
            Some(h) if h.trim_end() == header => Ok(()),
            Some(h) => Err(self.error(format!("expected header {header:?}, found {h:?}"))),
            None => Err(self.error("missing header line")),
        }
    }

    fn field<T: FromStr>(&self, raw: &str, name: &str) -> Result<T> {
        raw.parse()
            .map_err(|_| self.error(format!("invalid {name} {raw:?}")))
    }
}

fn split_fields<'s>(lines: &Lines<'_>, s: &'s str, n: usize) -> Result<Vec<&'s str>> {
    let fields: Vec<&str> = s.split('\t').collect();
    if fields.len() != n {
        return Err(lines.error(format!("expected {n} fields, found {}", fields.len())));
    }
    Ok(fields)
}

fn check_label(lines: &Lines<'_>, label: u8) -> Result<u8> {
    if label > 1 {
        return Err(lines.error(format!("label must be 0 or 1, found {label}")));
    }
    Ok(label)
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<()> {
    let mut w = create(path)?;
    let err = write_err(path);
    writeln!(w, "{EVENT_HEADER}").map_err(&err)?;
    for e in events {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.user, e.item, e.category, e.timestamp, e.position, e.label, e.tier
        )
        .map_err(&err)?;
    }
    w.flush().map_err(&err)
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let mut lines = Lines::new(path)?;
    lines.expect_header(EVENT_HEADER)?;
    let mut events = Vec::new();
    while let Some(line) = lines.next_line()? {
        if line.is_empty() {
            continue;
        }
        let f = split_fields(&lines, &line, 7)?;
        let timestamp: i64 = lines.field(f[3], "timestamp")?;
        if timestamp < 0 {
            return Err(lines.error("timestamp must be non-negative"));
        }
        events.push(Event {
            user: lines.field(f[0], "user_id")?,
            item: lines.field(f[1], "item_id")?,
            category: lines.field(f[2], "category_id")?,
            timestamp,
            position: lines.field(f[4], "position")?,
            label: check_label(&lines, lines.field(f[5], "label")?)?,
            tier: f[6].parse::<Tier>().map_err(|m| lines.error(m))?,
        });
    }
    Ok(events)
}

fn format_history(h: &BehaviorSequence) -> String {
    h.events()
        .iter()
        .map(|b| format!("{}:{}:{}:{}", b.item, b.category, b.timestamp, b.position))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_history(lines: &Lines<'_>, raw: &str) -> Result<BehaviorSequence> {
    if raw.is_empty() {
        return Ok(BehaviorSequence::default());
    }
    let mut out = Vec::new();
    for part in raw.split(',') {
        let f: Vec<&str> = part.split(':').collect();
        if f.len() != 4 {
            return Err(lines.error(format!("malformed history entry {part:?}")));
        }
        out.push(Behavior {
            item: lines.field(f[0], "history item")?,
            category: lines.field(f[1], "history category")?,
            timestamp: lines.field(f[2], "history timestamp")?,
            position: lines.field(f[3], "history position")?,
        });
    }
    Ok(BehaviorSequence::new(out))
}

fn format_vocab(v: &Vocab) -> String {
    let cats: Vec<String> = v.item_category.iter().map(u32::to_string).collect();
    format!(
        "# vocab\t{}\t{}\t{}\t{}",
        v.users,
        v.items,
        v.categories,
        cats.join(",")
    )
}

fn parse_vocab(lines: &Lines<'_>, line: &str) -> Result<Vocab> {
    let f = split_fields(lines, line, 5)?;
    if f[0] != "# vocab" {
        return Err(lines.error("expected vocabulary line"));
    }
    let item_category = if f[4].is_empty() {
        Vec::new()
    } else {
        f[4].split(',')
            .map(|c| lines.field(c, "item category"))
            .collect::<Result<_>>()?
    };
    Ok(Vocab {
        users: lines.field(f[1], "user count")?,
        items: lines.field(f[2], "item count")?,
        categories: lines.field(f[3], "category count")?,
        item_category,
    })
}

pub fn write_samples<W: Write>(w: &mut W, split: &str, samples: &[Sample]) -> std::io::Result<()> {
    for s in samples {
        let q = &s.query;
        writeln!(
            w,
            "{split}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            q.user,
            q.item,
            q.category,
            q.timestamp,
            s.position,
            s.label,
            format_history(&q.history)
        )?;
    }
    Ok(())
}

/// Vocabulary line, column header, then one line per sample tagged with its
/// split name.
pub fn write_dataset(path: &Path, split: &DatasetSplit) -> Result<()> {
    let mut w = create(path)?;
    let err = write_err(path);
    writeln!(w, "{}", format_vocab(&split.vocab)).map_err(&err)?;
    writeln!(w, "{DATASET_HEADER}").map_err(&err)?;
    write_samples(&mut w, "train", &split.train).map_err(&err)?;
    write_samples(&mut w, "validation", &split.validation).map_err(&err)?;
    write_samples(&mut w, "test", &split.test).map_err(&err)?;
    w.flush().map_err(&err)
}

pub fn read_dataset(path: &Path) -> Result<DatasetSplit> {
    let mut lines = Lines::new(path)?;
    let first = lines.next_line()?.ok_or_else(|| lines.error("missing vocabulary line"))?;
    let vocab = parse_vocab(&lines, &first)?;
    lines.expect_header(DATASET_HEADER)?;
    let mut split = DatasetSplit::empty(vocab);
    while let Some(line) = lines.next_line()? {
        if line.is_empty() {
            continue;
        }
        let f = split_fields(&lines, &line, 8)?;
        let query = Query {
            user: lines.field(f[1], "user_id")?,
            item: lines.field(f[2], "item_id")?,
            category: lines.field(f[3], "category_id")?,
            timestamp: lines.field(f[4], "timestamp")?,
            history: parse_history(&lines, f[7])?,
        };
        query.validate().map_err(|e| lines.error(e.to_string()))?;
        let sample = Sample {
            query,
            position: lines.field(f[5], "position")?,
            label: check_label(&lines, lines.field(f[6], "label")?)?,
        };
        match f[0] {
            "train" => split.train.push(sample),
            "validation" => split.validation.push(sample),
            "test" => split.test.push(sample),
            other => return Err(lines.error(format!("unknown split {other:?}"))),
        }
    }
    Ok(split)
}
