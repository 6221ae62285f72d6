//! JSON sidecar holding the ground truth of a generated stream.
//!
//! `{"format": "ctr-incr-truth", "version": 1, "truth": {...}}`, where
//! `truth.items[k].latent[h]` is item `k`'s latent logit during the `h`-th
//! hour after its birth hour.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ctr_incr_core::WorldTruth;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT: &str = "ctr-incr-truth";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar<T> {
    format: String,
    version: u32,
    truth: T,
}

pub fn write_truth(path: impl AsRef<Path>, truth: &WorldTruth) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let doc = Sidecar { format: FORMAT.into(), version: VERSION, truth };
    serde_json::to_writer(&mut out, &doc).map_err(|e| Error::Corrupt(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<WorldTruth> {
    let doc: Sidecar<serde_json::Value> =
        serde_json::from_reader(BufReader::new(File::open(path)?)).map_err(|e| Error::Corrupt(e.to_string()))?;
    if doc.format != FORMAT {
        return Err(Error::Corrupt(format!("not a truth sidecar (format `{}`)", doc.format)));
    }
    if doc.version != VERSION {
        return Err(Error::Version { found: doc.version, expected: VERSION });
    }
    serde_json::from_value(doc.truth).map_err(|e| Error::Corrupt(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctr_incr_core::world::{generate_stream, WorldConfig, HOUR};

    #[test]
    fn round_trip() {
        let cfg =
            WorldConfig { n_items_initial: 5, impressions_per_hour: 20, new_item_rate: 0.5, ..Default::default() };
        let (_, truth) = generate_stream(&cfg, 0, 10 * HOUR).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth.json");
        write_truth(&p, &truth).unwrap();
        assert_eq!(read_truth(&p).unwrap(), truth);
        std::fs::write(&p, r#"{"format":"ctr-incr-truth","version":9,"truth":null}"#).unwrap();
        assert!(matches!(read_truth(&p), Err(Error::Version { found: 9, .. })));
    }
}
