//! Container layout.
//!
//! Little-endian throughout:
//!
//! ```text
//! "MSP1"                 4 bytes
//! version                u16 (= 1)
//! width, height          u32, u32   original image size
//! scales M               u8
//! profile id             u8         0 normal, 1 big, 2 extra, 255 custom
//! grouping id            u8         0 random, 1 fixed_a, 2 fixed_b, 3 dynamic
//! flags                  u8         bit 0: even/even subset, bit 1: ascending dynamic order
//! groups per level       u8 × M     B₁ … B_M
//! seed                   u64        random grouping seed
//! model hash             32 bytes   SHA-256 of the checkpoint file
//! patch size             u16
//! patch count            u32
//! per patch:
//!   payload length       u32
//!   raw length           u32        3 bytes per pixel of the coarsest scale
//!   crc32                u32        over payload then raw bytes
//! header crc32           u32        over every header byte before it
//! payloads               concatenated in patch order
//! raw coarsest scales    concatenated in patch order
//! ```

use crate::checkpoint::ModelHash;
use crate::error::{Error, Result};
use crate::grouping::{DynamicOrder, GroupingMethod, SubsetPhase};

pub const MAGIC: &[u8; 4] = b"MSP1";
pub const VERSION: u16 = 1;

const FLAG_EVEN_SUBSET: u8 = 1;
const FLAG_ASCENDING: u8 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub width: u32,
    pub height: u32,
    pub scales: u8,
    pub profile_id: u8,
    pub grouping: GroupingMethod,
    pub phase: SubsetPhase,
    pub order: DynamicOrder,
    /// `B_i` for levels `1..=M`.
    pub groups: Vec<u8>,
    pub seed: u64,
    pub model_hash: ModelHash,
    pub patch: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchEntry {
    pub payload_len: u32,
    pub raw_len: u32,
    pub crc: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Container {
    pub header: Header,
    pub entries: Vec<PatchEntry>,
    pub payloads: Vec<Vec<u8>>,
    pub raws: Vec<Vec<u8>>,
}

pub fn patch_crc(payload: &[u8], raw: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(payload);
    h.update(raw);
    h.finalize()
}

impl Container {
    pub fn new(header: Header, payloads: Vec<Vec<u8>>, raws: Vec<Vec<u8>>) -> Self {
        let entries = payloads
            .iter()
            .zip(&raws)
            .map(|(p, r)| PatchEntry {
                payload_len: p.len() as u32,
                raw_len: r.len() as u32,
                crc: patch_crc(p, r),
            })
            .collect();
        Container {
            header,
            entries,
            payloads,
            raws,
        }
    }

    /// Bytes before the first payload.
    pub fn header_len(&self) -> usize {
        4 + 2 + 8 + 4 + self.header.groups.len() + 8 + 32 + 2 + 4 + 12 * self.entries.len() + 4
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&h.width.to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        out.push(h.scales);
        out.push(h.profile_id);
        out.push(h.grouping.id());
        let mut flags = 0;
        if h.phase == SubsetPhase::EvenEven {
            flags |= FLAG_EVEN_SUBSET;
        }
        if h.order == DynamicOrder::Ascending {
            flags |= FLAG_ASCENDING;
        }
        out.push(flags);
        out.extend_from_slice(&h.groups);
        out.extend_from_slice(&h.seed.to_le_bytes());
        out.extend_from_slice(&h.model_hash);
        out.extend_from_slice(&h.patch.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.payload_len.to_le_bytes());
            out.extend_from_slice(&e.raw_len.to_le_bytes());
            out.extend_from_slice(&e.crc.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        for p in &self.payloads {
            out.extend_from_slice(p);
        }
        for r in &self.raws {
            out.extend_from_slice(r);
        }
        out
    }

    /// Parses the header and patch table without checking patch CRCs.
    pub fn parse(bytes: &[u8]) -> Result<Container> {
        match Self::parse_unverified(bytes)? {
            (c, true) => Ok(c),
            (_, false) => Err(Error::Checksum("container header".into())),
        }
    }

    /// Like [`Container::parse`] but reports a header CRC mismatch instead of
    /// failing on it, so damaged files can still be inspected.
    pub fn parse_unverified(bytes: &[u8]) -> Result<(Container, bool)> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Container("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let width = r.u32()?;
        let height = r.u32()?;
        let scales = r.u8()?;
        let profile_id = r.u8()?;
        let grouping_id = r.u8()?;
        let flags = r.u8()?;
        if scales == 0 || scales > 8 {
            return Err(Error::Container(format!("bad scale count {scales}")));
        }
        if flags & !(FLAG_EVEN_SUBSET | FLAG_ASCENDING) != 0 {
            return Err(Error::Container(format!("unknown flags {flags:#04x}")));
        }
        let groups = r.take(scales as usize)?.to_vec();
        let seed = r.u64()?;
        let model_hash: ModelHash = r.take(32)?.try_into().expect("32 bytes");
        let patch = r.u16()?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            entries.push(PatchEntry {
                payload_len: r.u32()?,
                raw_len: r.u32()?,
                crc: r.u32()?,
            });
        }
        let computed = crc32fast::hash(&bytes[..r.pos]);
        let header_ok = computed == r.u32()?;
        let grouping = GroupingMethod::from_id(grouping_id)?;
        if width == 0 || height == 0 || patch == 0 {
            return Err(Error::Container("zero dimension".into()));
        }
        if groups.contains(&0) {
            return Err(Error::Container("zero group count".into()));
        }
        let mut payloads = Vec::with_capacity(entries.len());
        for e in &entries {
            payloads.push(r.take(e.payload_len as usize)?.to_vec());
        }
        let mut raws = Vec::with_capacity(entries.len());
        for e in &entries {
            raws.push(r.take(e.raw_len as usize)?.to_vec());
        }
        if r.pos != bytes.len() {
            return Err(Error::Container(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let c = Container {
            header: Header {
                width,
                height,
                scales,
                profile_id,
                grouping,
                phase: if flags & FLAG_EVEN_SUBSET != 0 {
                    SubsetPhase::EvenEven
                } else {
                    SubsetPhase::OddOdd
                },
                order: if flags & FLAG_ASCENDING != 0 {
                    DynamicOrder::Ascending
                } else {
                    DynamicOrder::Descending
                },
                groups,
                seed,
                model_hash,
                patch,
            },
            entries,
            payloads,
            raws,
        };
        Ok((c, header_ok))
    }

    /// Indices of patches whose stored CRC does not match their bytes.
    pub fn bad_patches(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| patch_crc(&self.payloads[i], &self.raws[i]) != self.entries[i].crc)
            .collect()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Container(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let header = Header {
            width: 37,
            height: 5,
            scales: 3,
            profile_id: 1,
            grouping: GroupingMethod::Dynamic,
            phase: SubsetPhase::EvenEven,
            order: DynamicOrder::Descending,
            groups: vec![3, 3, 2],
            seed: 0xDEAD_BEEF,
            model_hash: [7; 32],
            patch: 496,
        };
        Container::new(header, vec![vec![1, 2, 3], vec![]], vec![vec![9; 6], vec![8; 3]])
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(bytes.len(), c.header_len() + 3 + 9);
        assert_eq!(Container::parse(&bytes).unwrap(), c);
    }

    #[test]
    fn header_tamper_is_caught() {
        let mut bytes = sample().to_bytes();
        bytes[6] ^= 1;
        assert!(matches!(Container::parse(&bytes), Err(Error::Checksum(_))));
    }

    #[test]
    fn payload_tamper_is_flagged() {
        let c = sample();
        let mut bytes = c.to_bytes();
        let at = c.header_len() + 1;
        bytes[at] ^= 0x40;
        assert_eq!(Container::parse(&bytes).unwrap().bad_patches(), vec![0]);
    }

    #[test]
    fn truncation_is_an_error() {
        let bytes = sample().to_bytes();
        assert!(Container::parse(&bytes[..bytes.len() - 1]).is_err());
    }
}
