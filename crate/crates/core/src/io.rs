//! Datasets, query traces and index snapshots on disk.
//!
//! Binary formats are little-endian. A trace is `PITR`, a `u32` version and a
//! `u64` batch count, then per batch a `u64` query count followed by 29-byte
//! records `(type u8, key u32, upper u32, value u64, seq u64)`. A snapshot is
//! `PIDX`, a version, the build parameters and the live `(key u32, value u64)`
//! pairs; heights are a function of the seed and key, so loading a snapshot
//! rebuilds the identical structure.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{PiError, Result};
use crate::pipeline::IndexConfig;
use crate::storage::StorageConfig;
use crate::types::{make_query_set, Key, Query, QuerySet, QueryType, ValueHandle};

const TRACE_MAGIC: &[u8; 4] = b"PITR";
const SNAPSHOT_MAGIC: &[u8; 4] = b"PIDX";
const VERSION: u32 = 1;

/// Reads `key,value` rows; keys must be strictly increasing and non-zero.
/// A header row is allowed if its first field is not a number.
pub fn read_pairs_csv(path: &Path) -> Result<Vec<(Key, ValueHandle)>> {
    read_pairs(File::open(path)?)
}

pub fn read_pairs<R: Read>(src: R) -> Result<Vec<(Key, ValueHandle)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(src);
    let mut out: Vec<(Key, ValueHandle)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| PiError::Format(format!("row {}: missing column {i}", line + 1)));
        let (k, v) = (field(0)?, field(1)?);
        let Ok(k) = k.parse::<u32>() else {
            if line == 0 {
                continue;
            }
            return Err(PiError::Format(format!("row {}: bad key {k:?}", line + 1)));
        };
        let v: u64 = v.parse().map_err(|_| PiError::Format(format!("row {}: bad value {v:?}", line + 1)))?;
        let key = Key::user(k)?;
        if out.last().is_some_and(|&(p, _)| p >= key) {
            return Err(PiError::Unsorted { position: out.len(), key: k });
        }
        out.push((key, ValueHandle(v)));
    }
    Ok(out)
}

pub fn write_pairs_csv(path: &Path, pairs: &[(Key, ValueHandle)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["key", "value"])?;
    for (k, v) in pairs {
        w.write_record([k.0.to_string(), v.0.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact(r)?))
}

fn check_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    if &read_exact::<4, _>(r)? != magic {
        return Err(PiError::Format(format!("expected {} header", String::from_utf8_lossy(magic))));
    }
    let v = read_u32(r)?;
    if v != VERSION {
        return Err(PiError::Format(format!("unsupported version {v}")));
    }
    Ok(())
}

pub fn write_trace<W: Write>(out: W, batches: &[QuerySet]) -> Result<()> {
    let mut w = BufWriter::new(out);
    w.write_all(TRACE_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(batches.len() as u64).to_le_bytes())?;
    for b in batches {
        w.write_all(&(b.len() as u64).to_le_bytes())?;
        for q in b {
            w.write_all(&[q.qtype.code()])?;
            w.write_all(&q.key.0.to_le_bytes())?;
            w.write_all(&q.upper.map_or(0, |k| k.0).to_le_bytes())?;
            w.write_all(&q.value.map_or(0, |v| v.0).to_le_bytes())?;
            w.write_all(&q.seq.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(src: R) -> Result<Vec<QuerySet>> {
    let mut r = BufReader::new(src);
    check_header(&mut r, TRACE_MAGIC)?;
    let n = read_u64(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..n {
        let len = read_u64(&mut r)?;
        let mut qs = Vec::new();
        for _ in 0..len {
            let [code] = read_exact::<1, _>(&mut r)?;
            let qtype = QueryType::from_code(code).ok_or_else(|| PiError::Format(format!("query type {code}")))?;
            let key = Key(read_u32(&mut r)?);
            let upper = read_u32(&mut r)?;
            let value = read_u64(&mut r)?;
            let seq = read_u64(&mut r)?;
            qs.push(Query {
                qtype,
                key,
                upper: (qtype == QueryType::RangeSearch).then_some(Key(upper)),
                value: (qtype == QueryType::Insert).then_some(ValueHandle(value)),
                seq,
            });
        }
        out.push(make_query_set(qs)?);
    }
    Ok(out)
}

/// Build parameters and data needed to reconstruct an index.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub config: IndexConfig,
    pub partitions: usize,
    pub pairs: Vec<(Key, ValueHandle)>,
}

pub fn write_snapshot(path: &Path, s: &Snapshot) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let st = &s.config.storage;
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&st.elevation_prob.to_le_bytes())?;
    w.write_all(&st.rebuild_ratio.to_le_bytes())?;
    w.write_all(&st.seed.to_le_bytes())?;
    w.write_all(&(st.capacity.unwrap_or(0) as u64).to_le_bytes())?;
    w.write_all(&(s.config.keys_per_entry as u32).to_le_bytes())?;
    w.write_all(&(s.config.group_size as u32).to_le_bytes())?;
    w.write_all(&[u8::from(s.config.auto_rebuild)])?;
    w.write_all(&(s.partitions as u32).to_le_bytes())?;
    w.write_all(&(s.pairs.len() as u64).to_le_bytes())?;
    for (k, v) in &s.pairs {
        w.write_all(&k.0.to_le_bytes())?;
        w.write_all(&v.0.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut r = BufReader::new(File::open(path)?);
    check_header(&mut r, SNAPSHOT_MAGIC)?;
    let storage = StorageConfig {
        elevation_prob: read_f64(&mut r)?,
        rebuild_ratio: read_f64(&mut r)?,
        seed: read_u64(&mut r)?,
        capacity: match read_u64(&mut r)? {
            0 => None,
            c => Some(c as usize),
        },
    };
    let keys_per_entry = read_u32(&mut r)? as usize;
    let group_size = read_u32(&mut r)? as usize;
    let [auto] = read_exact::<1, _>(&mut r)?;
    let partitions = read_u32(&mut r)? as usize;
    let n = read_u64(&mut r)?;
    let mut pairs = Vec::with_capacity(n.min(1 << 28) as usize);
    for _ in 0..n {
        let k = Key::user(read_u32(&mut r)?)?;
        let v = ValueHandle(read_u64(&mut r)?);
        if pairs.last().is_some_and(|&(p, _)| p >= k) {
            return Err(PiError::Unsorted { position: pairs.len(), key: k.0 });
        }
        pairs.push((k, v));
    }
    let config = IndexConfig { storage, keys_per_entry, group_size, auto_rebuild: auto != 0 };
    Ok(Snapshot { config, partitions, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_header_and_order_check() {
        let ok = read_pairs("key,value\n1,10\n5, 50\n".as_bytes()).unwrap();
        assert_eq!(ok, [(Key(1), ValueHandle(10)), (Key(5), ValueHandle(50))]);
        assert!(matches!(read_pairs("3,1\n2,1\n".as_bytes()), Err(PiError::Unsorted { position: 1, key: 2 })));
        assert!(matches!(read_pairs("0,1\n".as_bytes()), Err(PiError::ReservedKey(0))));
        assert!(read_pairs("1,x\n".as_bytes()).is_err());
    }

    #[test]
    fn trace_round_trip() {
        let b1 = make_query_set(vec![Query::search(4, 0), Query::insert(2, 7, 1), Query::delete(9, 2)]).unwrap();
        let b2 = make_query_set(vec![Query::range(3, 8, 3)]).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &[b1.clone(), b2.clone()]).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap(), [b1, b2]);
        assert!(read_trace(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = std::env::temp_dir().join(format!("pidx-{}", std::process::id()));
        let s = Snapshot {
            config: IndexConfig::default(),
            partitions: 3,
            pairs: vec![(Key(1), ValueHandle(2)), (Key(8), ValueHandle(3))],
        };
        write_snapshot(&dir, &s).unwrap();
        assert_eq!(read_snapshot(&dir).unwrap(), s);
        std::fs::remove_file(&dir).unwrap();
    }
}
