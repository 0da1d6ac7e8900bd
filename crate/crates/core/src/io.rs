//! JSON-lines artifact files. The first line of every file is a header
//! object carrying the schema version and the record kind.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonlHeader {
    pub schema_version: String,
    pub kind: String,
}

pub fn write_jsonl<'a, T, I>(path: &Path, kind: &str, records: I) -> Result<usize>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = JsonlHeader {
        schema_version: SCHEMA_VERSION.to_string(),
        kind: kind.to_string(),
    };
    let mut n = 0;
    let mut write_line = |v: String| writeln!(out, "{v}").map_err(|e| Error::io(path, e));
    write_line(serde_json::to_string(&header)?)?;
    for r in records {
        write_line(serde_json::to_string(r)?)?;
        n += 1;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => {
            return Err(Error::Schema {
                expected: format!("{SCHEMA_VERSION} header"),
                found: "empty file".into(),
            })
        }
    };
    let header: JsonlHeader = serde_json::from_str(&header_line)?;
    if header.schema_version != SCHEMA_VERSION || header.kind != kind {
        return Err(Error::Schema {
            expected: format!("{SCHEMA_VERSION}/{kind}"),
            found: format!("{}/{}", header.schema_version, header.kind),
        });
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_jsonl(&p, "numbers", &[1u32, 2, 3]).unwrap();
        let back: Vec<u32> = read_jsonl(&p, "numbers").unwrap();
        assert_eq!(back, vec![1, 2, 3]);
        assert!(matches!(
            read_jsonl::<u32>(&p, "flows"),
            Err(Error::Schema { .. })
        ));
    }
}
