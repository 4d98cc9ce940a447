use alloc::vec::Vec;

use crate::error::{Error, Result};

pub type TokenId = u32;
pub type TokenSeq = Vec<TokenId>;

pub const MAX_VOCAB: usize = 512;

/// Byte-level vocabulary: a set of byte values mapped to dense ids
/// `0..n_bytes`, followed by the `pad`, `bos` and `eos` specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    bytes: Vec<u8>,
    id_of_byte: [Option<TokenId>; 256],
}

impl Vocab {
    /// All 256 byte values; 259 ids in total.
    pub fn full() -> Self {
        Self::from_bytes(&(0u8..=255).collect::<Vec<_>>())
    }

    /// Vocabulary over the distinct bytes of `alphabet`, sorted by value.
    pub fn from_bytes(alphabet: &[u8]) -> Self {
        let mut bytes: Vec<u8> = alphabet.to_vec();
        bytes.sort_unstable();
        bytes.dedup();
        let mut id_of_byte = [None; 256];
        for (i, &b) in bytes.iter().enumerate() {
            id_of_byte[b as usize] = Some(i as TokenId);
        }
        Self { bytes, id_of_byte }
    }

    pub fn size(&self) -> usize {
        self.bytes.len() + 3
    }

    pub fn pad(&self) -> TokenId {
        self.bytes.len() as TokenId
    }

    pub fn bos(&self) -> TokenId {
        self.bytes.len() as TokenId + 1
    }

    pub fn eos(&self) -> TokenId {
        self.bytes.len() as TokenId + 2
    }

    /// The byte values covered, in id order.
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn id(&self, byte: u8) -> Result<TokenId> {
        self.id_of_byte[byte as usize].ok_or(Error::UnknownByte(byte))
    }

    pub fn encode(&self, text: &[u8]) -> Result<TokenSeq> {
        text.iter().map(|&b| self.id(b)).collect()
    }

    /// Response encoding: the bytes followed by `eos`.
    pub fn encode_response(&self, text: &[u8]) -> Result<TokenSeq> {
        let mut ids = self.encode(text)?;
        ids.push(self.eos());
        Ok(ids)
    }

    /// Bytes for the byte ids of `ids`; specials are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<u8> {
        ids.iter()
            .filter_map(|&i| self.bytes.get(i as usize).copied())
            .collect()
    }

    pub fn check(&self, id: TokenId) -> Result<()> {
        if (id as usize) < self.size() {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                id,
                size: self.size(),
            })
        }
    }
}
