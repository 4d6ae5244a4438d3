//! Keys, queries, query sets and results shared by every layer.

use std::fmt;

use crate::error::{PiError, Result};

/// A 4-byte index key. `Key::SENTINEL` (0) belongs to the head node and never
/// appears in user data.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Key(pub u32);

impl Key {
    pub const SENTINEL: Key = Key(0);
    pub const MAX: Key = Key(u32::MAX);

    /// Key usable as user data.
    pub fn user(raw: u32) -> Result<Key> {
        if raw == Self::SENTINEL.0 {
            Err(PiError::ReservedKey(raw))
        } else {
            Ok(Key(raw))
        }
    }

    #[inline]
    pub fn raw(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn is_sentinel(self) -> bool {
        self == Self::SENTINEL
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.0)
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u32> for Key {
    fn from(v: u32) -> Self {
        Key(v)
    }
}

/// Opaque token standing in for a pointer to the value stored under a key.
/// The index compares and returns it but never dereferences it.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug)]
pub struct ValueHandle(pub u64);

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum QueryType {
    Search,
    Insert,
    Delete,
    RangeSearch,
}

impl QueryType {
    pub fn is_point(self) -> bool {
        !matches!(self, QueryType::RangeSearch)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            QueryType::Search => 0,
            QueryType::Insert => 1,
            QueryType::Delete => 2,
            QueryType::RangeSearch => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<QueryType> {
        Some(match code {
            0 => QueryType::Search,
            1 => QueryType::Insert,
            2 => QueryType::Delete,
            3 => QueryType::RangeSearch,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Query {
    pub qtype: QueryType,
    /// Point key, or lower bound of a range.
    pub key: Key,
    /// Inclusive upper bound; ranges only.
    pub upper: Option<Key>,
    /// New value; inserts only.
    pub value: Option<ValueHandle>,
    pub seq: u64,
}

impl Query {
    pub fn search(key: u32, seq: u64) -> Query {
        Query { qtype: QueryType::Search, key: Key(key), upper: None, value: None, seq }
    }

    pub fn insert(key: u32, value: u64, seq: u64) -> Query {
        Query {
            qtype: QueryType::Insert,
            key: Key(key),
            upper: None,
            value: Some(ValueHandle(value)),
            seq,
        }
    }

    pub fn delete(key: u32, seq: u64) -> Query {
        Query { qtype: QueryType::Delete, key: Key(key), upper: None, value: None, seq }
    }

    pub fn range(lo: u32, hi: u32, seq: u64) -> Query {
        Query {
            qtype: QueryType::RangeSearch,
            key: Key(lo),
            upper: Some(Key(hi)),
            value: None,
            seq,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason| Err(PiError::InvalidQuery { seq: self.seq, reason });
        match self.qtype {
            QueryType::Insert if self.value.is_none() => bad("insert without value"),
            QueryType::RangeSearch => match self.upper {
                None => bad("range without upper bound"),
                Some(u) if u < self.key => bad("range upper bound below lower bound"),
                _ if self.value.is_some() => bad("value on non-insert query"),
                _ => Ok(()),
            },
            _ if self.upper.is_some() => bad("upper bound on point query"),
            QueryType::Search | QueryType::Delete if self.value.is_some() => {
                bad("value on non-insert query")
            }
            _ if self.key.is_sentinel() => bad("reserved key in point query"),
            _ => Ok(()),
        }
    }
}

/// Queries sorted by key; equal keys keep arrival (`seq`) order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QuerySet {
    queries: Vec<Query>,
}

impl QuerySet {
    pub fn as_slice(&self) -> &[Query] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Query> {
        self.queries.iter()
    }

    pub fn into_vec(self) -> Vec<Query> {
        self.queries
    }

    /// Wraps queries that are already in (key, seq) order.
    pub(crate) fn from_sorted(queries: Vec<Query>) -> QuerySet {
        debug_assert!(queries.windows(2).all(|w| (w[0].key, w[0].seq) <= (w[1].key, w[1].seq)));
        QuerySet { queries }
    }

    pub fn is_range_set(&self) -> bool {
        self.queries.iter().any(|q| q.qtype == QueryType::RangeSearch)
    }
}

impl<'a> IntoIterator for &'a QuerySet {
    type Item = &'a Query;
    type IntoIter = std::slice::Iter<'a, Query>;

    fn into_iter(self) -> Self::IntoIter {
        self.queries.iter()
    }
}

/// Validates and sorts `queries` by `(key, seq)`.
pub fn make_query_set(mut queries: Vec<Query>) -> Result<QuerySet> {
    for q in &queries {
        q.validate()?;
    }
    queries.sort_by_key(|q| (q.key, q.seq));
    if let Some(w) = queries.windows(2).find(|w| w[0].seq == w[1].seq && w[0].key == w[1].key) {
        return Err(PiError::InvalidQuery { seq: w[0].seq, reason: "duplicate sequence number" });
    }
    Ok(QuerySet { queries })
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Outcome {
    Found(ValueHandle),
    NotFound,
    Inserted,
    Updated,
    Deleted,
    Range(Vec<(Key, ValueHandle)>),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct QueryResult {
    pub seq: u64,
    pub outcome: Outcome,
}
