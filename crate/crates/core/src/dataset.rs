// SPDX-License-Identifier: Apache-2.0

//! Line-delimited JSON dataset files.
//!
//! Line 1 is a header object `{"v":1,"kind":"gatelab-labels","count":N}`;
//! each following line holds one [`LabelPack`].

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelPack;

pub const SCHEMA_VERSION: u64 = 1;
const KIND: &str = "gatelab-labels";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    v: u64,
    kind: String,
    count: usize,
}

pub fn write_dataset_to(packs: &[LabelPack], mut out: impl Write) -> Result<()> {
    let header = Header {
        v: SCHEMA_VERSION,
        kind: KIND.into(),
        count: packs.len(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for p in packs {
        let line = serde_json::to_string(p).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_dataset(packs: &[LabelPack], path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let res = (|| {
        let f = fs::File::create(&tmp)?;
        write_dataset_to(packs, BufWriter::new(f))?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res
}

pub fn read_dataset_from(input: impl BufRead) -> Result<Vec<LabelPack>> {
    let mut lines = input.lines();
    let first = match lines.next() {
        Some(l) => l?,
        None => {
            return Err(Error::Dataset {
                line: 1,
                msg: "missing header".into(),
            })
        }
    };
    let raw: serde_json::Value = serde_json::from_str(&first).map_err(|e| Error::Dataset {
        line: 1,
        msg: e.to_string(),
    })?;
    let v = raw.get("v").and_then(|v| v.as_u64()).ok_or(Error::Dataset {
        line: 1,
        msg: "header has no version field".into(),
    })?;
    if v != SCHEMA_VERSION {
        return Err(Error::Schema {
            found: v,
            expected: SCHEMA_VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::Dataset {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.kind != KIND {
        return Err(Error::Dataset {
            line: 1,
            msg: format!("unexpected kind {:?}", header.kind),
        });
    }
    let mut packs = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pack = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            line: i + 2,
            msg: e.to_string(),
        })?;
        packs.push(pack);
    }
    if packs.len() != header.count {
        return Err(Error::Dataset {
            line: packs.len() + 2,
            msg: format!("header announces {} circuits, found {}", header.count, packs.len()),
        });
    }
    Ok(packs)
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabelPack>> {
    read_dataset_from(BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset_has_header_only() {
        let mut buf = Vec::new();
        write_dataset_to(&[], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(read_dataset_from(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn version_mismatch_is_reported() {
        let text = "{\"v\":7,\"kind\":\"gatelab-labels\",\"count\":0}\n";
        assert!(matches!(
            read_dataset_from(text.as_bytes()),
            Err(Error::Schema { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn bad_line_is_named() {
        let text = "{\"v\":1,\"kind\":\"gatelab-labels\",\"count\":1}\n{oops\n";
        match read_dataset_from(text.as_bytes()) {
            Err(Error::Dataset { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
