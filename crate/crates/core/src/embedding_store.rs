//! Embedding files, label files and prompt manifests.
//!
//! An embedding file is laid out as
//!
//! | bytes        | content                                                        |
//! |--------------|----------------------------------------------------------------|
//! | `0..4`       | magic `EMB1`                                                   |
//! | `4..8`       | header length `H`, `u32` little-endian                         |
//! | `8..8+H`     | UTF-8 JSON `{"count": m, "dim": r, "dtype": "f32", "ids": ...}` |
//! | `8+H..`      | `m × r` little-endian `f32`, row-major                         |
//!
//! Values are held as `f64` in memory and narrowed to `f32` on write.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";

/// A dense `count × dim` block of embedding rows with optional row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    count: usize,
    dim: usize,
    data: Vec<f64>,
    ids: Option<Vec<String>>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, data: Vec<f64>, ids: Option<Vec<String>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSet("dimension must be positive".into()));
        }
        if data.is_empty() {
            return Err(Error::InvalidSet("set has no rows".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::InvalidSet(format!(
                "data length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let count = data.len() / dim;
        if let Some(ids) = &ids {
            if ids.len() != count {
                return Err(Error::InvalidSet(format!(
                    "{} ids for {count} rows",
                    ids.len()
                )));
            }
            let mut seen = HashSet::with_capacity(ids.len());
            for id in ids {
                if !seen.insert(id.as_str()) {
                    return Err(Error::InvalidSet(format!("duplicate id {id:?}")));
                }
            }
        }
        Ok(Self {
            count,
            dim,
            data,
            ids,
        })
    }

    /// Builds a set from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], ids: Option<Vec<String>>) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::InvalidSet(format!(
                    "row {i} has length {}, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data, ids)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Human-readable name for row `i`: its id when present, otherwise the index.
    pub fn row_name(&self, i: usize) -> String {
        match &self.ids {
            Some(ids) => ids[i].clone(),
            None => format!("#{i}"),
        }
    }

    /// New set holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let ids = self
            .ids
            .as_ref()
            .map(|ids| indices.iter().map(|&i| ids[i].clone()).collect());
        Self::new(self.dim, data, ids)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    count: usize,
    dim: usize,
    dtype: String,
    ids: Option<Vec<String>>,
}

/// Writes `set` in the embedding file format and returns the number of bytes written.
///
/// Every value is checked before the first byte goes out, so a rejected set
/// leaves the sink untouched.
pub fn write_embeddings<W: Write>(set: &EmbeddingSet, mut sink: W) -> Result<usize> {
    let mut payload = Vec::with_capacity(set.data.len() * 4);
    for (index, &v) in set.data.iter().enumerate() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::NonFinite { index });
        }
        payload.extend_from_slice(&narrow.to_le_bytes());
    }
    let header = serde_json::to_vec(&Header {
        count: set.count,
        dim: set.dim,
        dtype: "f32".into(),
        ids: set.ids.clone(),
    })?;
    let header_len = u32::try_from(header.len())
        .map_err(|_| Error::InvalidSet("header exceeds 4 GiB".into()))?;

    let mut bytes = Vec::with_capacity(8 + header.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&header_len.to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&payload);
    sink.write_all(&bytes)?;
    Ok(bytes.len())
}

/// Reads an embedding file from `source`.
pub fn read_embeddings<R: Read>(mut source: R) -> Result<EmbeddingSet> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_embeddings(&bytes)
}

/// Decodes an in-memory embedding file.
pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: 4 - bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[..4]);
        return Err(Error::BadMagic { found });
    }
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: 8 - bytes.len(),
        });
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload_start = 8 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: payload_start - bytes.len(),
        });
    }
    let header: Header =
        serde_json::from_slice(&bytes[8..payload_start]).map_err(|e| Error::Header {
            offset: 8,
            message: e.to_string(),
        })?;
    if header.dtype != "f32" {
        return Err(Error::Header {
            offset: 8,
            message: format!("unsupported dtype {:?}", header.dtype),
        });
    }
    if header.count == 0 || header.dim == 0 {
        return Err(Error::Header {
            offset: 8,
            message: format!(
                "count {} and dim {} must be positive",
                header.count, header.dim
            ),
        });
    }
    let expected = header
        .count
        .checked_mul(header.dim)
        .ok_or_else(|| Error::Header {
            offset: 8,
            message: "count × dim overflows".into(),
        })?;

    let payload = &bytes[payload_start..];
    if payload.len() % 4 != 0 && payload.len() < expected * 4 {
        // Cut inside a value: the file ends mid-payload.
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: expected * 4 - payload.len(),
        });
    }
    if payload.len() != expected * 4 {
        return Err(Error::SizeMismatch {
            offset: payload_start,
            expected,
            actual: payload.len() / 4,
        });
    }

    let mut data = Vec::with_capacity(expected);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                offset: payload_start + 4 * i,
            });
        }
        data.push(v as f64);
    }
    if let Some(ids) = &header.ids {
        if ids.len() != header.count {
            return Err(Error::Header {
                offset: 8,
                message: format!("{} ids for {} rows", ids.len(), header.count),
            });
        }
    }
    EmbeddingSet::new(header.dim, data, header.ids).map_err(|e| Error::Header {
        offset: 8,
        message: e.to_string(),
    })
}

/// Ground-truth labels keyed by item id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    entries: Vec<(String, String)>,
}

impl LabelSet {
    pub fn new(entries: Vec<(String, String)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (id, label) in &entries {
            if label.is_empty() {
                return Err(Error::Labels(format!("empty label for id {id:?}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Labels(format!("duplicate id {id:?}")));
            }
        }
        Ok(Self { entries })
    }

    /// Parses the two-column `id<TAB>label` format (no header row).
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(id), Some(label), None) => entries.push((id.to_owned(), label.to_owned())),
                _ => {
                    return Err(Error::Labels(format!(
                        "line {}: expected two tab-separated columns",
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(entries)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, label) in &self.entries {
            out.push_str(id);
            out.push('\t');
            out.push_str(label);
            out.push('\n');
        }
        out
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct labels in sorted order; class indices refer to positions here.
    pub fn classes(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|(_, l)| l.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Class index of every entry, in entry order.
    pub fn class_indices(&self) -> Vec<usize> {
        let classes = self.classes();
        let lookup: HashMap<&str, usize> = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        self.entries
            .iter()
            .map(|(_, l)| lookup[l.as_str()])
            .collect()
    }

    /// Class index for every row of `set`, matched through row ids.
    ///
    /// The id sets of `self` and `set` must coincide exactly.
    pub fn align(&self, set: &EmbeddingSet) -> Result<Vec<usize>> {
        let ids = set
            .ids()
            .ok_or_else(|| Error::Labels("embedding set carries no ids to join on".into()))?;
        if ids.len() != self.entries.len() {
            return Err(Error::Labels(format!(
                "{} labels for {} embedding rows",
                self.entries.len(),
                ids.len()
            )));
        }
        let classes = self.classes();
        let class_of: HashMap<&str, usize> = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let by_id: HashMap<&str, usize> = self
            .entries
            .iter()
            .map(|(id, label)| (id.as_str(), class_of[label.as_str()]))
            .collect();
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::UnknownLabel(id.clone()))
            })
            .collect()
    }
}

/// A prompt template with one bracketed placeholder and the aspects to fill it with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptManifest {
    pub template: String,
    pub aspects: Vec<String>,
}

impl PromptManifest {
    pub fn new(template: impl Into<String>, aspects: Vec<String>) -> Self {
        Self {
            template: template.into(),
            aspects,
        }
    }

    /// The single `[...]` token in the template.
    pub fn placeholder(&self) -> Result<&str> {
        let tokens = bracket_tokens(&self.template)?;
        match tokens.as_slice() {
            [one] => Ok(one),
            [] => Err(Error::Template(format!(
                "no [placeholder] in {:?}",
                self.template
            ))),
            many => Err(Error::Template(format!(
                "{} placeholders in {:?}, expected one",
                many.len(),
                self.template
            ))),
        }
    }
}

fn bracket_tokens(template: &str) -> Result<Vec<&str>> {
    let mut tokens = Vec::new();
    let mut rest = template;
    let mut offset = 0;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let close = after
            .find(']')
            .ok_or_else(|| Error::Template(format!("unclosed '[' at byte {}", offset + open)))?;
        if after[..close].contains('[') {
            return Err(Error::Template(format!(
                "nested '[' at byte {}",
                offset + open
            )));
        }
        tokens.push(&rest[open..open + close + 2]);
        offset += open + close + 2;
        rest = &rest[open + close + 2..];
    }
    Ok(tokens)
}

/// Fills the template's placeholder with every aspect, in order.
pub fn render_prompts(manifest: &PromptManifest) -> Result<Vec<String>> {
    let placeholder = manifest.placeholder()?;
    if manifest.aspects.is_empty() {
        return Err(Error::Template("aspect list is empty".into()));
    }
    let prompts: Vec<String> = manifest
        .aspects
        .iter()
        .map(|a| manifest.template.replacen(placeholder, a, 1))
        .collect();
    let mut seen = HashSet::with_capacity(prompts.len());
    for p in &prompts {
        if !seen.insert(p.as_str()) {
            return Err(Error::Template(format!("duplicate prompt {p:?}")));
        }
    }
    Ok(prompts)
}
