//! Binary embedding (`.emb`) and head checkpoint (`.ckpt`) formats.
//!
//! Both share one layout, all integers and floats little-endian:
//!
//! ```text
//! magic    [u8; 8]
//! version  u32
//! header   format-specific u64 fields
//! payload  row-major values
//! hash     [u8; 32]   SHA-256 of every preceding byte
//! ```
//!
//! `.emb` header is `n: u64, d: u64` followed by `n·d` `f32` values. The
//! dataset manifest lives next to it as `<stem>.manifest.json`.
//!
//! `.ckpt` header is `layers: u64` then one `u64` per layer size
//! (`[input, hidden, classes]`), followed by `W1, b1, W2, b2` as `f64`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::ClusterHead;
use crate::error::{Error, Result};
use crate::io::EmbeddingMatrix;

pub const EMB_MAGIC: [u8; 8] = *b"OODEMB01";
pub const CKPT_MAGIC: [u8; 8] = *b"OODCKPT1";
pub const FORMAT_VERSION: u32 = 1;
const HASH_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    TrainNormal,
    TestIn,
    TestOut,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train_normal" => Ok(Split::TrainNormal),
            "test_in" => Ok(Split::TestIn),
            "test_out" => Ok(Split::TestOut),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    /// Extractor id, or `"synthetic"`.
    pub source: String,
    pub d: usize,
    pub n: usize,
    /// Hex SHA-256 of the `.emb` file contents preceding the trailing hash.
    pub checksum: String,
}

impl DatasetManifest {
    /// Manifest describing `m`; the checksum is filled in on save.
    pub fn describe(
        name: impl Into<String>,
        split: Split,
        source: impl Into<String>,
        m: &EmbeddingMatrix,
    ) -> Self {
        Self {
            name: name.into(),
            split,
            source: source.into(),
            d: m.d(),
            n: m.n(),
            checksum: String::new(),
        }
    }
}

/// Sidecar manifest path for an embedding file: `x.emb` → `x.manifest.json`.
pub fn manifest_path(path: impl AsRef<Path>) -> PathBuf {
    path.as_ref().with_extension("manifest.json")
}

fn sha256(bytes: &[u8]) -> [u8; HASH_LEN] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; HASH_LEN];
    out.copy_from_slice(&digest);
    out
}

/// Encodes a matrix into the `.emb` byte layout.
pub fn encode_embeddings(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 4 + 16 + m.as_slice().len() * 4 + HASH_LEN);
    buf.extend_from_slice(&EMB_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.n() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.d() as u64).to_le_bytes());
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let hash = sha256(&buf);
    buf.extend_from_slice(&hash);
    buf
}

/// Sequential little-endian reader over an in-memory file.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!(
                "{what} needs {len} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn size(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?)
            .map_err(|_| Error::invalid(format!("{what} does not fit in usize")))
    }
}

fn check_magic(cur: &mut Cursor<'_>, expected: [u8; 8]) -> Result<()> {
    let found: [u8; 8] = cur.take(8, "magic")?.try_into().unwrap();
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    Ok(())
}

fn verify_hash(cur: &mut Cursor<'_>) -> Result<String> {
    let body_end = cur.pos;
    let stored = cur.take(HASH_LEN, "content hash")?;
    if cur.pos != cur.bytes.len() {
        return Err(Error::invalid(format!(
            "{} trailing bytes after content hash",
            cur.bytes.len() - cur.pos
        )));
    }
    let computed = sha256(&cur.bytes[..body_end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch {
            stored: hex::encode(stored),
            computed: hex::encode(computed),
        });
    }
    Ok(hex::encode(computed))
}

/// Decodes `.emb` bytes, returning the matrix and its hex checksum.
pub fn decode_embeddings(bytes: &[u8]) -> Result<(EmbeddingMatrix, String)> {
    let mut cur = Cursor { bytes, pos: 0 };
    check_magic(&mut cur, EMB_MAGIC)?;
    let n = cur.size("n")?;
    let d = cur.size("d")?;
    let count = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::invalid("header shape overflows"))?;
    let payload = cur.take(count, "payload")?;
    let checksum = verify_hash(&mut cur)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((EmbeddingMatrix::new(n, d, data)?, checksum))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `m` to `path` and its manifest to the sidecar path.
///
/// Returns the manifest as written, with the checksum filled in.
pub fn save_embeddings(
    m: &EmbeddingMatrix,
    manifest: &DatasetManifest,
    path: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    if manifest.d != m.d() {
        return Err(Error::DimensionMismatch {
            what: "manifest d",
            expected: m.d(),
            found: manifest.d,
        });
    }
    if manifest.n != m.n() {
        return Err(Error::DimensionMismatch {
            what: "manifest n",
            expected: m.n(),
            found: manifest.n,
        });
    }
    let bytes = encode_embeddings(m);
    let hash = &bytes[bytes.len() - HASH_LEN..];
    let mut manifest = manifest.clone();
    manifest.checksum = hex::encode(hash);

    let path = path.as_ref();
    write_atomic(path, &bytes)?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_atomic(&manifest_path(path), json.as_bytes())?;
    Ok(manifest)
}

/// Reads an `.emb` file and its manifest sidecar, cross-checking both.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(EmbeddingMatrix, DatasetManifest)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let (m, checksum) = decode_embeddings(&bytes)?;
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(manifest_path(path))?)?;
    if manifest.n != m.n() {
        return Err(Error::DimensionMismatch {
            what: "manifest n",
            expected: m.n(),
            found: manifest.n,
        });
    }
    if manifest.d != m.d() {
        return Err(Error::DimensionMismatch {
            what: "manifest d",
            expected: m.d(),
            found: manifest.d,
        });
    }
    if manifest.checksum != checksum {
        return Err(Error::ChecksumMismatch {
            stored: manifest.checksum,
            computed: checksum,
        });
    }
    Ok((m, manifest))
}

pub fn encode_checkpoint(head: &ClusterHead) -> Vec<u8> {
    let dims = head.layer_dims();
    let mut buf = Vec::new();
    buf.extend_from_slice(&CKPT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u64).to_le_bytes());
    for &s in &dims {
        buf.extend_from_slice(&(s as u64).to_le_bytes());
    }
    for block in head.parameter_blocks() {
        for v in block {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let hash = sha256(&buf);
    buf.extend_from_slice(&hash);
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ClusterHead> {
    let mut cur = Cursor { bytes, pos: 0 };
    check_magic(&mut cur, CKPT_MAGIC)?;
    let layers = cur.size("layer count")?;
    if layers != 3 {
        return Err(Error::invalid(format!(
            "checkpoint declares {layers} layers, only 3-layer heads are supported"
        )));
    }
    let input = cur.size("input size")?;
    let hidden = cur.size("hidden size")?;
    let classes = cur.size("class count")?;
    let mut head = ClusterHead::zeros(input, hidden, classes)?;
    for block in head.parameter_blocks_mut() {
        let raw = cur.take(block.len() * 8, "parameter payload")?;
        for (dst, c) in block.iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(c.try_into().unwrap());
        }
    }
    verify_hash(&mut cur)?;
    if head.parameter_blocks().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("checkpoint contains non-finite parameters"));
    }
    Ok(head)
}

pub fn save_checkpoint(head: &ClusterHead, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(head))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ClusterHead> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> EmbeddingMatrix {
        EmbeddingMatrix::new(3, 4, (0..12).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn save_load_small_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.emb");
        let m = fixture();
        let man = DatasetManifest::describe("x", Split::TrainNormal, "synthetic", &m);
        let written = save_embeddings(&m, &man, &path).unwrap();
        let (back, loaded) = load_embeddings(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(loaded, written);
        assert_eq!(loaded.checksum.len(), 64);
        assert!(dir.path().join("x.manifest.json").exists());
    }

    #[test]
    fn save_rejects_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture();
        let mut man = DatasetManifest::describe("x", Split::TrainNormal, "synthetic", &m);
        man.d = 5;
        let err = save_embeddings(&m, &man, dir.path().join("x.emb")).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode_embeddings(&fixture());
        bytes[0] = b'X';
        let err = decode_embeddings(&bytes).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_embeddings(&fixture());
        let err = decode_embeddings(&bytes[..40]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = encode_embeddings(&fixture());
        bytes[30] ^= 0x01;
        assert!(matches!(
            decode_embeddings(&bytes),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn nan_payload_rejected_even_with_valid_hash() {
        let m = fixture();
        let mut bytes = encode_embeddings(&m);
        let body = bytes.len() - HASH_LEN;
        bytes[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
        let hash = sha256(&bytes[..body]);
        bytes[body..].copy_from_slice(&hash);
        assert!(matches!(
            decode_embeddings(&bytes),
            Err(Error::NonFinite { row: 0, col: 0 })
        ));
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode_embeddings(&fixture());
        assert_eq!(&bytes[..8], b"OODEMB01");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 4);
        assert_eq!(f32::from_le_bytes(bytes[32..36].try_into().unwrap()), 1.0);
        assert_eq!(bytes.len(), 28 + 12 * 4 + 32);
    }

    #[test]
    fn manifest_checksum_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.emb");
        let m = fixture();
        let man = DatasetManifest::describe("x", Split::TestIn, "synthetic", &m);
        let mut written = save_embeddings(&m, &man, &path).unwrap();
        written.checksum = "00".repeat(32);
        fs::write(manifest_path(&path), serde_json::to_string(&written).unwrap()).unwrap();
        assert!(matches!(
            load_embeddings(&path),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let head = ClusterHead::init(5, 7, 3, 11).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&head)).unwrap();
        assert_eq!(back, head);
    }

    #[test]
    fn checkpoint_magic_checked() {
        let head = ClusterHead::init(2, 2, 2, 0).unwrap();
        let mut bytes = encode_checkpoint(&head);
        bytes[3] = 0;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::BadMagic { .. })
        ));
    }
}
