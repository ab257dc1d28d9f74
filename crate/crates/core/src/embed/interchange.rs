//! Binary container for precomputed token matrices.
//!
//! Layout (little-endian): magic `SAEE`, `u32` version, `u32` header length,
//! UTF-8 JSON header, then one contiguous row-major `f32` block per slot in
//! header order.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layout::{Segment, SentenceSpan, TokenLayout, TokenMatrix};
use super::EmbeddingSource;
use crate::data::Example;
use crate::error::EmbedError;

pub const MAGIC: &[u8; 4] = b"SAEE";
pub const VERSION: u32 = 1;

/// Slot name for the selector input of one document.
pub fn selector_slot(doc: usize) -> String {
    format!("selector/{doc}")
}

/// Slot name for the reasoner input over the given documents, in order.
pub fn reasoner_slot(docs: &[usize]) -> String {
    let joined: Vec<String> = docs.iter().map(usize::to_string).collect();
    format!("reasoner/{}", joined.join(","))
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    slots: Vec<SlotHeader>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct SlotHeader {
    id: String,
    slot: String,
    rows: usize,
    cols: usize,
    tokens: Vec<String>,
    /// 0 = question, 1 = context.
    segments: Vec<u8>,
    /// `[start, end, doc, sentence]` per span.
    sentence_spans: Vec<[usize; 4]>,
    cls_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offsets: Option<Vec<Option<(usize, usize)>>>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

/// Ordered collection of token matrices keyed by `(example id, slot)`.
#[derive(Clone, Debug, Default)]
pub struct Interchange {
    entries: Vec<(String, String, TokenMatrix)>,
    index: HashMap<(String, String), usize>,
    /// Unknown top-level header fields, preserved on write.
    pub extra: BTreeMap<String, serde_json::Value>,
    slot_extra: Vec<BTreeMap<String, serde_json::Value>>,
}

impl Interchange {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: &str, slot: &str, matrix: TokenMatrix) {
        let key = (id.to_string(), slot.to_string());
        if let Some(&i) = self.index.get(&key) {
            self.entries[i].2 = matrix;
        } else {
            self.index.insert(key, self.entries.len());
            self.entries.push((id.to_string(), slot.to_string(), matrix));
            self.slot_extra.push(BTreeMap::new());
        }
    }

    pub fn get(&self, id: &str, slot: &str) -> Option<&TokenMatrix> {
        self.index
            .get(&(id.to_string(), slot.to_string()))
            .map(|&i| &self.entries[i].2)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &TokenMatrix)> {
        self.entries.iter().map(|(i, s, m)| (i.as_str(), s.as_str(), m))
    }

    /// Common width of all stored matrices, if any are stored.
    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.2.dim)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let slots = self
            .entries
            .iter()
            .zip(&self.slot_extra)
            .map(|((id, slot, m), extra)| SlotHeader {
                id: id.clone(),
                slot: slot.clone(),
                rows: m.rows(),
                cols: m.dim,
                tokens: m.layout.tokens.clone(),
                segments: m
                    .layout
                    .segments
                    .iter()
                    .map(|s| match s {
                        Segment::Question => 0,
                        Segment::Context => 1,
                    })
                    .collect(),
                sentence_spans: m
                    .layout
                    .sentence_spans
                    .iter()
                    .map(|s| [s.start, s.end, s.doc, s.sentence])
                    .collect(),
                cls_index: m.layout.cls_index,
                offsets: m.layout.offsets.clone(),
                extra: extra.clone(),
            })
            .collect();
        let header = Header {
            version: VERSION,
            slots,
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = self.entries.iter().map(|e| e.2.values.len() * 4).sum();
        let mut out = Vec::with_capacity(12 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, m) in &self.entries {
            for v in &m.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbedError> {
        if bytes.len() < 12 {
            return Err(EmbedError::Format(format!(
                "file is {} bytes, too short for the fixed header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(EmbedError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[0..4]),
                "SAEE"
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(EmbedError::Format(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                EmbedError::Corrupt(format!(
                    "header length {header_len} exceeds file size {}",
                    bytes.len()
                ))
            })?;
        let header: Header = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| EmbedError::Format(format!("invalid header JSON: {e}")))?;
        if header.version != version {
            return Err(EmbedError::Format(format!(
                "header version {} disagrees with file version {version}",
                header.version
            )));
        }

        let expected: usize = header
            .slots
            .iter()
            .map(|s| s.rows.saturating_mul(s.cols).saturating_mul(4))
            .fold(0usize, usize::saturating_add);
        let payload = &bytes[header_end..];
        if payload.len() != expected {
            return Err(EmbedError::Corrupt(format!(
                "payload is {} bytes but the header describes {expected}",
                payload.len()
            )));
        }

        let mut out = Interchange {
            extra: header.extra,
            ..Interchange::default()
        };
        let mut cursor = 0usize;
        for slot in header.slots {
            let n = slot.rows * slot.cols;
            if slot.tokens.len() != slot.rows {
                return Err(EmbedError::Corrupt(format!(
                    "slot {}/{}: {} tokens for {} rows",
                    slot.id,
                    slot.slot,
                    slot.tokens.len(),
                    slot.rows
                )));
            }
            let values: Vec<f32> = payload[cursor..cursor + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            cursor += 4 * n;
            let segments = slot
                .segments
                .iter()
                .map(|&s| match s {
                    0 => Ok(Segment::Question),
                    1 => Ok(Segment::Context),
                    other => Err(EmbedError::Corrupt(format!(
                        "slot {}/{}: unknown segment id {other}",
                        slot.id, slot.slot
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let layout = TokenLayout {
                tokens: slot.tokens,
                segments,
                sentence_spans: slot
                    .sentence_spans
                    .iter()
                    .map(|&[start, end, doc, sentence]| SentenceSpan {
                        start,
                        end,
                        doc,
                        sentence,
                    })
                    .collect(),
                cls_index: slot.cls_index,
                offsets: slot.offsets,
            };
            let matrix = TokenMatrix::new(layout, slot.cols, values).map_err(|e| match e {
                EmbedError::Corrupt(m) => {
                    EmbedError::Corrupt(format!("slot {}/{}: {m}", slot.id, slot.slot))
                }
                other => other,
            })?;
            out.insert(&slot.id, &slot.slot, matrix);
            *out.slot_extra.last_mut().expect("just inserted") = slot.extra;
        }
        Ok(out)
    }
}

pub fn write_interchange(path: &Path, data: &Interchange) -> Result<(), EmbedError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&data.to_bytes())?;
    Ok(())
}

pub fn read_interchange(path: &Path) -> Result<Interchange, EmbedError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Interchange::from_bytes(&bytes)
}

impl EmbeddingSource for Interchange {
    fn dim(&self) -> usize {
        Interchange::dim(self).unwrap_or(0)
    }

    fn selector_input(&self, ex: &Example, doc: usize) -> Result<TokenMatrix, EmbedError> {
        let slot = selector_slot(doc);
        self.get(&ex.id, &slot)
            .cloned()
            .ok_or(EmbedError::MissingSlot {
                id: ex.id.clone(),
                slot,
            })
    }

    fn reasoner_input(&self, ex: &Example, docs: &[usize]) -> Result<TokenMatrix, EmbedError> {
        let slot = reasoner_slot(docs);
        self.get(&ex.id, &slot)
            .cloned()
            .ok_or(EmbedError::MissingSlot {
                id: ex.id.clone(),
                slot,
            })
    }
}
