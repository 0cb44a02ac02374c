//! `chain.ccslog`: blocks in height order, each framed as a 4-byte big-endian
//! length followed by the block's canonical serialization.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;

use crate::canonical::Canonical;

use super::{verify_chain, ChainVerdict, LedgerBlock};

/// Blocks that decoded cleanly, and the height of the first frame that did
/// not (when one exists).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainFile {
    pub blocks: Vec<LedgerBlock>,
    pub first_bad: Option<u64>,
}

fn frame(block: &LedgerBlock, out: &mut Vec<u8>) {
    let bytes = block.canonical_bytes();
    let len = u32::try_from(bytes.len()).expect("block under 4 GiB");
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&bytes);
}

pub fn encode_chain(blocks: &[LedgerBlock]) -> Vec<u8> {
    let mut out = Vec::new();
    for block in blocks {
        frame(block, &mut out);
    }
    out
}

/// Decodes frames until the first one that is truncated, fails to parse, or
/// is not in canonical form.
pub fn decode_chain(bytes: &[u8]) -> ChainFile {
    let mut blocks = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let height = blocks.len() as u64;
        let bad = ChainFile { blocks: Vec::new(), first_bad: Some(height) };
        let Some(len_bytes) = bytes.get(pos..pos + 4) else {
            return ChainFile { blocks, ..bad };
        };
        let len = u32::from_be_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        let Some(body) = bytes.get(pos + 4..pos + 4 + len) else {
            return ChainFile { blocks, ..bad };
        };
        match LedgerBlock::from_canonical_bytes(body) {
            Ok(block) if block.canonical_bytes() == body => blocks.push(block),
            _ => return ChainFile { blocks, ..bad },
        }
        pos += 4 + len;
    }
    ChainFile { blocks, first_bad: None }
}

/// Full check of a persisted chain: framing, canonical form, heights, hash
/// links and block hashes.
pub fn verify_chain_bytes(bytes: &[u8]) -> ChainVerdict {
    let file = decode_chain(bytes);
    match (verify_chain(&file.blocks), file.first_bad) {
        (ChainVerdict::FirstBadHeight(h), _) => ChainVerdict::FirstBadHeight(h),
        (ChainVerdict::Ok, Some(h)) => ChainVerdict::FirstBadHeight(h),
        (ChainVerdict::Ok, None) => ChainVerdict::Ok,
    }
}

pub fn read_chain_file(path: &Path) -> io::Result<ChainFile> {
    Ok(decode_chain(&std::fs::read(path)?))
}

pub fn write_chain_file(path: &Path, blocks: &[LedgerBlock]) -> io::Result<()> {
    let mut file = File::create(path)?;
    file.write_all(&encode_chain(blocks))?;
    file.sync_all()
}

pub fn append_block(path: &Path, block: &LedgerBlock) -> io::Result<()> {
    let mut out = Vec::new();
    frame(block, &mut out);
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(&out)?;
    file.sync_data()
}
