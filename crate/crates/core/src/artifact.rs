//! Binary artifact container and content digests.
//!
//! Layout: a little-endian `u32` header length, the JSON header, then the raw
//! payload. Sections inside the payload are little-endian `f32` or `u32`
//! arrays addressed by byte offset relative to the payload start.

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::io::Write;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantic::SemanticScheme;

pub const MAGIC: &str = "rpg-artifact";
pub const VERSION: u32 = 1;

/// 64-bit FNV-1a content hash.
pub struct Digest(FnvHasher);

impl Digest {
    pub fn new() -> Self {
        Digest(FnvHasher::default())
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.write(b);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f32s(&mut self, values: &[f32]) -> &mut Self {
        for v in values {
            self.0.write(&v.to_le_bytes());
        }
        self
    }

    pub fn scheme(&mut self, s: &SemanticScheme) -> &mut Self {
        self.u64(s.m as u64)
            .u64(s.codebook_size as u64)
            .u64(s.d as u64)
    }

    pub fn finish(&self) -> u64 {
        self.0.finish()
    }
}

impl Default for Digest {
    fn default() -> Self {
        Self::new()
    }
}

pub fn digest_hex(d: u64) -> String {
    format!("{d:016x}")
}

pub fn parse_digest(s: &str) -> Option<u64> {
    u64::from_str_radix(s, 16).ok()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub magic: String,
    pub version: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SemanticScheme>,
    pub digest: String,
    #[serde(default)]
    pub parents: BTreeMap<String, String>,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub sections: Vec<Section>,
}

/// An artifact held in memory: header plus payload bytes.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub header: Header,
    payload: Vec<u8>,
}

impl Artifact {
    pub fn new(kind: &str, scheme: Option<SemanticScheme>, digest: u64) -> Self {
        Artifact {
            header: Header {
                magic: MAGIC.to_string(),
                version: VERSION,
                kind: kind.to_string(),
                scheme,
                digest: digest_hex(digest),
                parents: BTreeMap::new(),
                meta: serde_json::Value::Null,
                sections: Vec::new(),
            },
            payload: Vec::new(),
        }
    }

    pub fn with_parent(mut self, name: &str, digest: u64) -> Self {
        self.header
            .parents
            .insert(name.to_string(), digest_hex(digest));
        self
    }

    pub fn with_meta(mut self, meta: serde_json::Value) -> Self {
        self.header.meta = meta;
        self
    }

    pub fn push_f32(&mut self, name: &str, shape: &[usize], values: &[f32]) {
        let offset = self.payload.len();
        self.payload.reserve(values.len() * 4);
        for v in values {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
        self.push_section(name, Dtype::F32, shape, offset);
    }

    pub fn push_u32(&mut self, name: &str, shape: &[usize], values: impl IntoIterator<Item = u32>) {
        let offset = self.payload.len();
        for v in values {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
        self.push_section(name, Dtype::U32, shape, offset);
    }

    fn push_section(&mut self, name: &str, dtype: Dtype, shape: &[usize], offset: usize) {
        self.header.sections.push(Section {
            name: name.to_string(),
            dtype,
            shape: shape.to_vec(),
            offset,
            len: self.payload.len() - offset,
        });
    }

    pub fn digest(&self) -> Option<u64> {
        parse_digest(&self.header.digest)
    }

    pub fn parent(&self, name: &str) -> Option<u64> {
        self.header.parents.get(name).and_then(|s| parse_digest(s))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(4 + header.len() + self.payload.len());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Size in bytes of the serialized header block (length prefix included).
    pub fn header_bytes(&self) -> usize {
        4 + serde_json::to_vec(&self.header).expect("header serializes").len()
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::Corrupt {
            path: origin.to_path_buf(),
            reason,
        };
        if bytes.len() < 4 {
            return Err(corrupt("file shorter than header length prefix".into()));
        }
        let header_len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let body = &bytes[4..];
        if header_len > body.len() {
            return Err(corrupt(format!("header length {header_len} exceeds file")));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| corrupt(format!("unreadable header: {e}")))?;
        if header.magic != MAGIC {
            return Err(corrupt(format!("bad magic {:?}", header.magic)));
        }
        if header.version != VERSION {
            return Err(corrupt(format!("unsupported version {}", header.version)));
        }
        let payload = body[header_len..].to_vec();
        for s in &header.sections {
            let elems: usize = s.shape.iter().product();
            if s.len != elems * 4 || s.offset + s.len > payload.len() {
                return Err(corrupt(format!("section {} out of bounds", s.name)));
            }
        }
        Ok(Artifact { header, payload })
    }

    pub fn read(path: &Path, kind: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let art = Self::from_bytes(&bytes, path)?;
        if art.header.kind != kind {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!("expected a {kind} artifact, found {}", art.header.kind),
            });
        }
        Ok(art)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    fn section(&self, name: &str, dtype: Dtype) -> Result<&Section> {
        self.header
            .sections
            .iter()
            .find(|s| s.name == name && s.dtype == dtype)
            .ok_or_else(|| Error::data(format!("artifact has no {dtype:?} section {name:?}")))
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.header
            .sections
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.shape.as_slice())
    }

    pub fn f32_section(&self, name: &str) -> Result<Vec<f32>> {
        let s = self.section(name, Dtype::F32)?;
        Ok(self.payload[s.offset..s.offset + s.len]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub fn u32_section(&self, name: &str) -> Result<Vec<u32>> {
        let s = self.section(name, Dtype::U32)?;
        Ok(self.payload[s.offset..s.offset + s.len]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub fn scheme(&self) -> Result<SemanticScheme> {
        let s = self
            .header
            .scheme
            .ok_or_else(|| Error::data(format!("{} artifact has no scheme", self.header.kind)))?;
        s.validate()?;
        Ok(s)
    }

    /// Errors unless the recomputed digest of the decoded object matches the header.
    pub fn verify_digest(&self, recomputed: u64, path: &Path) -> Result<()> {
        match self.digest() {
            Some(d) if d == recomputed => Ok(()),
            _ => Err(Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!(
                    "content digest {} does not match header {}",
                    digest_hex(recomputed),
                    self.header.digest
                ),
            }),
        }
    }
}

/// Writes through a temporary file in the target directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let scheme = SemanticScheme::new(2, 4, 4).unwrap();
        let mut art = Artifact::new("test", Some(scheme), 0xdead_beef).with_parent("up", 7);
        art.push_f32("w", &[2, 2], &[1.0, -2.5, f32::MIN_POSITIVE, 3.0e8]);
        art.push_u32("ids", &[3], [0, 1, u32::MAX]);
        let bytes = art.to_bytes();
        let back = Artifact::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.header, art.header);
        assert_eq!(
            back.f32_section("w").unwrap(),
            vec![1.0, -2.5, f32::MIN_POSITIVE, 3.0e8]
        );
        assert_eq!(back.u32_section("ids").unwrap(), vec![0, 1, u32::MAX]);
        assert_eq!(back.parent("up"), Some(7));
        assert_eq!(back.digest(), Some(0xdead_beef));
        assert_eq!(bytes.len(), art.header_bytes() + 16 + 12);
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let mut art = Artifact::new("test", None, 1);
        art.header.magic = "nope".into();
        let err = Artifact::from_bytes(&art.to_bytes(), Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }));
        assert!(Artifact::from_bytes(&[1, 0], Path::new("x")).is_err());
        assert!(Artifact::from_bytes(&[200, 0, 0, 0, b'{'], Path::new("x")).is_err());
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let mut art = Artifact::new("test", None, 1);
        art.push_f32("w", &[4], &[0.0; 4]);
        let mut bytes = art.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(Artifact::from_bytes(&bytes, Path::new("x")).is_err());
    }

    #[test]
    fn digest_is_stable() {
        // FNV-1a 64 of the empty input is the offset basis.
        assert_eq!(Digest::new().finish(), 0xcbf2_9ce4_8422_2325);
        let a = Digest::new().str("abc").finish();
        let b = Digest::new().str("abd").finish();
        assert_ne!(a, b);
    }
}
