//! Tab-separated impression files.
//!
//! The first line is [`HEADER`], which names the columns:
//! `timestamp item publisher user_segment hour_of_day click [soft_target]`.
//! Each record follows on its own line, for example (tabs shown as spaces)
//!
//! ```text
//! 3601  5  0  1  1  1  0.073215551
//! ```
//!
//! Timestamps are integer seconds and must be non-decreasing. `click` is `0`
//! or `1`. The soft target column is optional per record and written with
//! nine decimal digits. The last line is `#sha256`, a tab, and the hex
//! SHA-256 of every byte before it, header included.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ctr_incr_core::world::hour_of_day;
use ctr_incr_core::Impression;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const HEADER: &str =
    "#ctr-incr-impressions v1\ttimestamp\titem\tpublisher\tuser_segment\thour_of_day\tclick\tsoft_target";
const TRAILER_TAG: &str = "#sha256\t";

/// Formats one record without its line terminator.
pub fn format_record(imp: &Impression) -> String {
    let [item, publisher, segment, hour] = imp.features;
    let mut s = format!("{}\t{item}\t{publisher}\t{segment}\t{hour}\t{}", imp.timestamp, imp.click as u8);
    if let Some(t) = imp.soft_target {
        s.push_str(&format!("\t{t:.9}"));
    }
    s
}

/// Streaming writer. Call [`DatasetWriter::finish`] to append the trailer.
pub struct DatasetWriter<W: Write> {
    out: W,
    hasher: Sha256,
    last: Option<u64>,
    written: usize,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut w = DatasetWriter { out, hasher: Sha256::new(), last: None, written: 0 };
        w.line(HEADER)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        self.hasher.update(s.as_bytes());
        self.hasher.update(b"\n");
        self.out.write_all(s.as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn write(&mut self, imp: &Impression) -> Result<()> {
        if let Some(prev) = self.last.filter(|&p| imp.timestamp < p) {
            return Err(Error::Ordering { line: self.written + 2, timestamp: imp.timestamp, previous: prev });
        }
        if imp.hour_of_day() != hour_of_day(imp.timestamp) {
            return Err(Error::Malformed {
                line: self.written + 2,
                reason: "hour_of_day disagrees with timestamp".into(),
            });
        }
        self.line(&format_record(imp))?;
        self.last = Some(imp.timestamp);
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        let digest = hex::encode(self.hasher.finalize_reset());
        self.out.write_all(format!("{TRAILER_TAG}{digest}\n").as_bytes())?;
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Streaming reader yielding one impression per record. The checksum is
/// verified when the trailer is reached; a file without a trailer is an error.
pub struct DatasetReader<R: BufRead> {
    input: R,
    hasher: Sha256,
    line_no: usize,
    last: Option<u64>,
    buf: String,
    done: bool,
}

impl<R: BufRead> DatasetReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut buf = String::new();
        input.read_line(&mut buf)?;
        if buf.trim_end_matches('\n') != HEADER {
            return Err(Error::Malformed { line: 1, reason: "missing or unrecognized header".into() });
        }
        let mut hasher = Sha256::new();
        hasher.update(buf.as_bytes());
        Ok(DatasetReader { input, hasher, line_no: 1, last: None, buf, done: false })
    }

    fn next_record(&mut self) -> Result<Option<Impression>> {
        self.buf.clear();
        if self.input.read_line(&mut self.buf)? == 0 {
            return Err(Error::Corrupt("missing checksum trailer".into()));
        }
        self.line_no += 1;
        let line_no = self.line_no;
        if !self.buf.ends_with('\n') {
            return Err(Error::Malformed { line: line_no, reason: "unterminated line".into() });
        }
        let line = &self.buf[..self.buf.len() - 1];
        if let Some(hex_digest) = line.strip_prefix(TRAILER_TAG) {
            let actual = hex::encode(self.hasher.finalize_reset());
            if hex_digest != actual {
                return Err(Error::Corrupt(format!("checksum mismatch on line {line_no}")));
            }
            let mut rest = String::new();
            if self.input.read_line(&mut rest)? != 0 {
                return Err(Error::Malformed { line: line_no + 1, reason: "data after checksum trailer".into() });
            }
            return Ok(None);
        }
        self.hasher.update(self.buf.as_bytes());
        let imp = parse_record(line).map_err(|reason| Error::Malformed { line: line_no, reason })?;
        if let Some(prev) = self.last.filter(|&p| imp.timestamp < p) {
            return Err(Error::Ordering { line: line_no, timestamp: imp.timestamp, previous: prev });
        }
        self.last = Some(imp.timestamp);
        Ok(Some(imp))
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = Result<Impression>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(imp)) => Some(Ok(imp)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn parse_record(line: &str) -> std::result::Result<Impression, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 6 && cols.len() != 7 {
        return Err(format!("expected 6 or 7 columns, found {}", cols.len()));
    }
    let int = |k: usize, name: &str| -> std::result::Result<u64, String> {
        cols[k].parse::<u64>().map_err(|_| format!("bad {name} `{}`", cols[k]))
    };
    let id = |k: usize, name: &str| -> std::result::Result<u32, String> {
        cols[k].parse::<u32>().map_err(|_| format!("bad {name} `{}`", cols[k]))
    };
    let timestamp = int(0, "timestamp")?;
    let item = id(1, "item")?;
    let publisher = id(2, "publisher")?;
    let segment = id(3, "user_segment")?;
    let hour = id(4, "hour_of_day")?;
    if hour != hour_of_day(timestamp) {
        return Err(format!("hour_of_day {hour} disagrees with timestamp {timestamp}"));
    }
    let click = match cols[5] {
        "0" => false,
        "1" => true,
        other => return Err(format!("bad click `{other}`")),
    };
    let mut imp = Impression::new(timestamp, item, publisher, segment, click);
    if let Some(s) = cols.get(6) {
        let t: f64 = s.parse().map_err(|_| format!("bad soft_target `{s}`"))?;
        if !(0.0..=1.0).contains(&t) {
            return Err(format!("soft_target {t} outside [0, 1]"));
        }
        imp.soft_target = Some(t);
    }
    Ok(imp)
}

pub fn write_dataset(path: impl AsRef<Path>, data: &[Impression]) -> Result<()> {
    let mut w = DatasetWriter::new(BufWriter::new(File::create(path)?))?;
    for imp in data {
        w.write(imp)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Impression>> {
    DatasetReader::new(BufReader::new(File::open(path)?))?.collect()
}
