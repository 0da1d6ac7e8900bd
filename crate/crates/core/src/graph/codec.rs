//! Binary graph corpus format (`.xgg`).
//!
//! ```text
//! header:  magic "XGG\0" | version u16 | schema string | class count u16 | class names
//! record:  body length u32 | body
//! body:    id | label u8 (0xFF = none) | duplicate u8 | n u16
//!          | flow feature count u16 | f64 * count
//!          | n * (trimmed payload length u16 | bytes)
//!          | n * 4 f64 (contain) | (n - 1) f64 (link)
//! ```
//!
//! Strings are a u16 byte length followed by UTF-8. All integers and floats
//! are little endian; floats are stored bit-exact. Payload rows are stored
//! without their trailing zero padding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use super::HeteroGraph;
use crate::flow::PAYLOAD_LEN;
use crate::{TrafficClass, SCHEMA_VERSION};

pub const MAGIC: [u8; 4] = *b"XGG\0";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("not a graph corpus (bad magic)")]
    BadMagic,
    #[error("corpus format version {found}, this build reads {expected}")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("corpus schema {found}, this build reads {expected}")]
    SchemaMismatch { expected: String, found: String },
    #[error("truncated stream while reading {0}")]
    TruncatedStream(&'static str),
    #[error("unknown class name {0:?} in corpus header")]
    UnknownClass(String),
    #[error("invalid graph record: {0}")]
    InvalidRecord(String),
    #[error("corpus i/o: {0}")]
    Io(std::io::Error),
}

type CResult<T> = std::result::Result<T, CodecError>;

fn eof(ctx: &'static str) -> impl Fn(std::io::Error) -> CodecError {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            CodecError::TruncatedStream(ctx)
        } else {
            CodecError::Io(e)
        }
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "string too long"))?;
    w.write_u16::<LE>(len)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R, ctx: &'static str) -> CResult<String> {
    let len = r.read_u16::<LE>().map_err(eof(ctx))? as usize;
    let mut buf = vec![0; len];
    r.read_exact(&mut buf).map_err(eof(ctx))?;
    String::from_utf8(buf).map_err(|_| CodecError::InvalidRecord(format!("{ctx} is not UTF-8")))
}

fn write_header<W: Write>(w: &mut W) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_u16::<LE>(FORMAT_VERSION)?;
    write_str(w, SCHEMA_VERSION)?;
    w.write_u16::<LE>(TrafficClass::COUNT as u16)?;
    for c in TrafficClass::ALL {
        write_str(w, c.name())?;
    }
    Ok(())
}

/// Reads and checks the header, returning the class table.
fn read_header<R: Read>(r: &mut R) -> CResult<Vec<TrafficClass>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof("magic"))?;
    if magic != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = r.read_u16::<LE>().map_err(eof("version"))?;
    if version != FORMAT_VERSION {
        return Err(CodecError::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let schema = read_str(r, "schema")?;
    if schema != SCHEMA_VERSION {
        return Err(CodecError::SchemaMismatch {
            expected: SCHEMA_VERSION.into(),
            found: schema,
        });
    }
    let count = r.read_u16::<LE>().map_err(eof("class table"))?;
    (0..count)
        .map(|_| {
            let name = read_str(r, "class table")?;
            name.parse().map_err(|_| CodecError::UnknownClass(name))
        })
        .collect()
}

fn encode_body(g: &HeteroGraph) -> CResult<Vec<u8>> {
    let n = g.num_packets();
    if g.contain.len() != n || g.link.len() + 1 != n.max(1) || n > u16::MAX as usize {
        return Err(CodecError::InvalidRecord(format!("graph {} is inconsistent", g.id)));
    }
    let mut b = Vec::with_capacity(64 + 8 * g.flow_features.len() + n * 64);
    let io = CodecError::Io;
    write_str(&mut b, &g.id).map_err(io)?;
    b.push(g.label.map_or(0xFF, |c| c.index() as u8));
    b.push(g.duplicate as u8);
    b.write_u16::<LE>(n as u16).map_err(io)?;
    b.write_u16::<LE>(g.flow_features.len() as u16).map_err(io)?;
    for v in &g.flow_features {
        b.write_f64::<LE>(*v).map_err(io)?;
    }
    for row in &g.payloads {
        if row.len() != PAYLOAD_LEN {
            return Err(CodecError::InvalidRecord(format!(
                "graph {}: payload row of {} bytes",
                g.id,
                row.len()
            )));
        }
        let used = row.iter().rposition(|x| *x != 0).map_or(0, |i| i + 1);
        b.write_u16::<LE>(used as u16).map_err(io)?;
        b.extend_from_slice(&row[..used]);
    }
    for c in &g.contain {
        for v in c {
            b.write_f64::<LE>(*v).map_err(io)?;
        }
    }
    for v in &g.link {
        b.write_f64::<LE>(*v).map_err(io)?;
    }
    Ok(b)
}

fn decode_body(body: &[u8], classes: &[TrafficClass]) -> CResult<HeteroGraph> {
    let mut r = Cursor::new(body);
    let id = read_str(&mut r, "graph id")?;
    let label = match r.read_u8().map_err(eof("label"))? {
        0xFF => None,
        i => Some(*classes.get(i as usize).ok_or_else(|| {
            CodecError::InvalidRecord(format!("graph {id}: label index {i} outside class table"))
        })?),
    };
    let duplicate = r.read_u8().map_err(eof("duplicate flag"))? != 0;
    let n = r.read_u16::<LE>().map_err(eof("packet count"))? as usize;
    if n == 0 {
        return Err(CodecError::InvalidRecord(format!("graph {id} has no packets")));
    }
    let nf = r.read_u16::<LE>().map_err(eof("flow feature count"))? as usize;
    let mut flow_features = vec![0.0; nf];
    r.read_f64_into::<LE>(&mut flow_features).map_err(eof("flow features"))?;
    let mut payloads = Vec::with_capacity(n);
    for _ in 0..n {
        let used = r.read_u16::<LE>().map_err(eof("payload length"))? as usize;
        if used > PAYLOAD_LEN {
            return Err(CodecError::InvalidRecord(format!("graph {id}: payload length {used}")));
        }
        let mut row = vec![0u8; PAYLOAD_LEN];
        r.read_exact(&mut row[..used]).map_err(eof("payload"))?;
        payloads.push(row);
    }
    let mut contain = vec![[0.0; 4]; n];
    for c in &mut contain {
        r.read_f64_into::<LE>(c).map_err(eof("contain features"))?;
    }
    let mut link = vec![0.0; n - 1];
    r.read_f64_into::<LE>(&mut link).map_err(eof("link features"))?;
    if (r.position() as usize) != body.len() {
        return Err(CodecError::InvalidRecord(format!("graph {id}: trailing bytes in record")));
    }
    Ok(HeteroGraph {
        id,
        flow_features,
        payloads,
        contain,
        link,
        label,
        duplicate,
    })
}

fn write_record<W: Write>(w: &mut W, g: &HeteroGraph) -> CResult<()> {
    let body = encode_body(g)?;
    w.write_u32::<LE>(body.len() as u32).map_err(CodecError::Io)?;
    w.write_all(&body).map_err(CodecError::Io)
}

/// Self-contained byte stream (header plus one record).
pub fn serialize_graph(g: &HeteroGraph) -> CResult<Vec<u8>> {
    let mut out = Vec::new();
    write_header(&mut out).map_err(CodecError::Io)?;
    write_record(&mut out, g)?;
    Ok(out)
}

pub fn deserialize_graph(bytes: &[u8]) -> CResult<HeteroGraph> {
    let mut reader = CorpusReader::new(bytes)?;
    reader
        .next()
        .unwrap_or(Err(CodecError::TruncatedStream("graph record")))
}

pub struct CorpusWriter<W: Write> {
    inner: W,
    written: usize,
}

impl<W: Write> CorpusWriter<W> {
    pub fn new(mut inner: W) -> CResult<Self> {
        write_header(&mut inner).map_err(CodecError::Io)?;
        Ok(Self { inner, written: 0 })
    }

    pub fn write(&mut self, g: &HeteroGraph) -> CResult<()> {
        write_record(&mut self.inner, g)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> CResult<(W, usize)> {
        self.inner.flush().map_err(CodecError::Io)?;
        Ok((self.inner, self.written))
    }
}

/// Streaming reader; yields one graph per record.
pub struct CorpusReader<R: Read> {
    inner: R,
    classes: Vec<TrafficClass>,
    done: bool,
}

impl<R: Read> CorpusReader<R> {
    pub fn new(mut inner: R) -> CResult<Self> {
        let classes = read_header(&mut inner)?;
        Ok(Self {
            inner,
            classes,
            done: false,
        })
    }

    fn read_one(&mut self) -> CResult<Option<HeteroGraph>> {
        let mut len_buf = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            match self.inner.read(&mut len_buf[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(CodecError::TruncatedStream("record length")),
                Ok(k) => got += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(CodecError::Io(e)),
            }
        }
        let len = u32::from_le_bytes(len_buf) as u64;
        let mut body = Vec::new();
        (&mut self.inner)
            .take(len)
            .read_to_end(&mut body)
            .map_err(CodecError::Io)?;
        if body.len() as u64 != len {
            return Err(CodecError::TruncatedStream("graph record"));
        }
        decode_body(&body, &self.classes).map(Some)
    }
}

impl<R: Read> Iterator for CorpusReader<R> {
    type Item = CResult<HeteroGraph>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_one() {
            Ok(Some(g)) => Some(Ok(g)),
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

pub fn write_corpus<'a>(
    path: &Path,
    graphs: impl IntoIterator<Item = &'a HeteroGraph>,
) -> crate::Result<usize> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| crate::Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| crate::Error::io(path, e))?;
    let mut w = CorpusWriter::new(BufWriter::new(file))?;
    for g in graphs {
        w.write(g)?;
    }
    Ok(w.finish()?.1)
}

pub fn read_corpus(path: &Path) -> crate::Result<Vec<HeteroGraph>> {
    let file = File::open(path).map_err(|e| crate::Error::io(path, e))?;
    let reader = CorpusReader::new(BufReader::new(file))?;
    Ok(reader.collect::<CResult<Vec<_>>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> HeteroGraph {
        let mut payloads = vec![vec![0u8; PAYLOAD_LEN]; n];
        payloads[0][..3].copy_from_slice(b"abc");
        HeteroGraph {
            id: "cap#7".into(),
            flow_features: (0..92).map(|i| i as f64 * 0.1 - 3.0).collect(),
            payloads,
            contain: (0..n).map(|i| [i as f64, 2.0, 3.5, (i % 2) as f64]).collect(),
            link: (1..n).map(|i| i as f64 * 1e-3).collect(),
            label: Some(TrafficClass::Recon),
            duplicate: true,
        }
    }

    #[test]
    fn round_trip() {
        for n in [1, 2, 20] {
            let g = sample(n);
            assert_eq!(deserialize_graph(&serialize_graph(&g).unwrap()).unwrap(), g);
        }
    }

    #[test]
    fn bad_magic() {
        let mut b = serialize_graph(&sample(2)).unwrap();
        b[0] = b'Y';
        assert!(matches!(deserialize_graph(&b), Err(CodecError::BadMagic)));
    }

    #[test]
    fn version_mismatch() {
        let mut b = serialize_graph(&sample(2)).unwrap();
        b[4] = 9;
        assert!(matches!(
            deserialize_graph(&b),
            Err(CodecError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn corrupted_length_is_truncation() {
        let g = sample(3);
        let mut b = serialize_graph(&g).unwrap();
        let body_len = encode_body(&g).unwrap().len();
        let at = b.len() - body_len - 4;
        b[at..at + 4].copy_from_slice(&(body_len as u32 + 100).to_le_bytes());
        assert!(matches!(deserialize_graph(&b), Err(CodecError::TruncatedStream(_))));
        b[at..at + 4].copy_from_slice(&(body_len as u32 - 20).to_le_bytes());
        assert!(matches!(deserialize_graph(&b), Err(CodecError::TruncatedStream(_))));
    }

    #[test]
    fn cut_stream() {
        let b = serialize_graph(&sample(3)).unwrap();
        assert!(matches!(
            deserialize_graph(&b[..b.len() - 1]),
            Err(CodecError::TruncatedStream(_))
        ));
    }

    #[test]
    fn corpus_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.xgg");
        let gs: Vec<_> = (1..6).map(sample).collect();
        assert_eq!(write_corpus(&p, &gs).unwrap(), 5);
        assert_eq!(read_corpus(&p).unwrap(), gs);
    }
}
