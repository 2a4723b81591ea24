//! Content-addressed asset storage with a per-session append-only index.
//!
//! Layout under the store root:
//!
//! ```text
//! objects/<first two hex digits>/<sha256>   asset bytes
//! sessions/<session id>/assets.jsonl        one AssetRef per line
//! sessions/<session id>/events.jsonl        event log
//! tmp/                                      staging area for atomic writes
//! ```

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("asset store I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("asset {id} does not match its recorded digest")]
    DigestMismatch { id: String },
    #[error("unsupported image format")]
    UnsupportedImage,
}

pub type AssetResult<T> = Result<T, AssetError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> AssetError + '_ {
    move |source| AssetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    Image,
    Mask,
    ModelGlb,
    Video,
    Audio,
    EmailDraft,
    SearchResults,
}

impl AssetKind {
    pub const ALL: [AssetKind; 7] = [
        AssetKind::Image,
        AssetKind::Mask,
        AssetKind::ModelGlb,
        AssetKind::Video,
        AssetKind::Audio,
        AssetKind::EmailDraft,
        AssetKind::SearchResults,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AssetKind::Image => "image",
            AssetKind::Mask => "mask",
            AssetKind::ModelGlb => "model_glb",
            AssetKind::Video => "video",
            AssetKind::Audio => "audio",
            AssetKind::EmailDraft => "email_draft",
            AssetKind::SearchResults => "search_results",
        }
    }
}

impl fmt::Display for AssetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AssetKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown asset kind `{s}`"))
    }
}

/// Handle to a stored asset. `path` is relative to the store root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRef {
    pub id: String,
    pub kind: AssetKind,
    pub filename: String,
    pub path: String,
    pub bytes_len: u64,
    pub sha256: String,
    /// Asset this one was derived from, such as the image behind a model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl AssetRef {
    /// MIME type derived from the kind and file extension.
    pub fn mime(&self) -> &'static str {
        let ext = self.filename.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase());
        match (self.kind, ext.as_deref()) {
            (AssetKind::Image | AssetKind::Mask, Some("png")) => "image/png",
            (AssetKind::Image | AssetKind::Mask, Some("jpg" | "jpeg")) => "image/jpeg",
            (AssetKind::Image | AssetKind::Mask, Some("webp")) => "image/webp",
            (AssetKind::Image | AssetKind::Mask, Some("gif")) => "image/gif",
            (AssetKind::ModelGlb, _) => "model/gltf-binary",
            (AssetKind::Video, _) => "video/mp4",
            (AssetKind::Audio, _) => "audio/mp4",
            (AssetKind::EmailDraft | AssetKind::SearchResults, _) => "application/json",
            _ => "application/octet-stream",
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Detects a supported image container from its magic bytes and returns
/// the file extension.
pub fn sniff_image(bytes: &[u8]) -> AssetResult<&'static str> {
    match bytes {
        [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, ..] => Ok("png"),
        [0xff, 0xd8, 0xff, ..] => Ok("jpg"),
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => Ok("webp"),
        [b'G', b'I', b'F', b'8', b'7' | b'9', b'a', ..] => Ok("gif"),
        _ => Err(AssetError::UnsupportedImage),
    }
}

#[derive(Debug, Clone)]
pub struct AssetStore {
    root: PathBuf,
}

impl AssetStore {
    /// Opens (creating if needed) a store and removes staging files left by
    /// an interrupted write.
    pub fn open(root: impl Into<PathBuf>) -> AssetResult<Self> {
        let root = root.into();
        for dir in ["objects", "sessions", "tmp"] {
            let p = root.join(dir);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let tmp = root.join("tmp");
        for entry in fs::read_dir(&tmp).map_err(io_err(&tmp))? {
            let entry = entry.map_err(io_err(&tmp))?;
            let _ = fs::remove_file(entry.path());
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, session: &str) -> PathBuf {
        self.root.join("sessions").join(session)
    }

    /// Writes the bytes (once per digest) and appends the reference to the
    /// session index.
    pub fn put(&self, session: &str, id: &str, kind: AssetKind, filename: &str, bytes: &[u8]) -> AssetResult<AssetRef> {
        self.put_derived(session, id, kind, filename, bytes, None)
    }

    pub fn put_derived(
        &self,
        session: &str,
        id: &str,
        kind: AssetKind,
        filename: &str,
        bytes: &[u8],
        source: Option<&str>,
    ) -> AssetResult<AssetRef> {
        let sha = sha256_hex(bytes);
        let rel = format!("objects/{}/{}", &sha[..2], sha);
        let dest = self.root.join(&rel);
        if !dest.exists() {
            let dir = dest.parent().expect("object path has a parent");
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            self.write_atomic(&dest, bytes)?;
        }
        let asset = AssetRef {
            id: id.to_string(),
            kind,
            filename: filename.to_string(),
            path: rel,
            bytes_len: bytes.len() as u64,
            sha256: sha,
            source: source.map(str::to_string),
        };
        let line = serde_json::to_string(&asset).expect("asset serializes");
        self.append_line(session, "assets.jsonl", &line)?;
        Ok(asset)
    }

    /// Reads an asset back, verifying its digest.
    pub fn read(&self, asset: &AssetRef) -> AssetResult<Vec<u8>> {
        let p = self.root.join(&asset.path);
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        if sha256_hex(&bytes) != asset.sha256 {
            return Err(AssetError::DigestMismatch { id: asset.id.clone() });
        }
        Ok(bytes)
    }

    /// Asset references recorded for a session. A torn final line from an
    /// interrupted append is skipped.
    pub fn index(&self, session: &str) -> AssetResult<Vec<AssetRef>> {
        let p = self.session_dir(session).join("assets.jsonl");
        let text = match fs::read_to_string(&p) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&p)(e)),
        };
        Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
    }

    pub fn write_atomic(&self, dest: &Path, bytes: &[u8]) -> AssetResult<()> {
        let tmp = self.root.join("tmp").join(uuid::Uuid::new_v4().simple().to_string());
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        drop(f);
        fs::rename(&tmp, dest).map_err(io_err(dest))
    }

    /// Appends one line to a per-session log file.
    pub fn append_line(&self, session: &str, file: &str, line: &str) -> AssetResult<()> {
        let dir = self.session_dir(session);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let p = dir.join(file);
        let mut f = OpenOptions::new().create(true).append(true).open(&p).map_err(io_err(&p))?;
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        f.write_all(&buf).map_err(io_err(&p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PNG_MAGIC: &[u8] = &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, 0, 0];

    #[test]
    fn put_read_and_index() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        let a = store.put("s1", "shot-1", AssetKind::Image, "shot-1.png", PNG_MAGIC).unwrap();
        assert_eq!(store.read(&a).unwrap(), PNG_MAGIC);
        assert_eq!(a.bytes_len, PNG_MAGIC.len() as u64);
        assert_eq!(a.mime(), "image/png");
        let b = store.put("s1", "shot-2", AssetKind::Image, "shot-2.png", PNG_MAGIC).unwrap();
        assert_eq!(a.path, b.path);
        assert_eq!(store.index("s1").unwrap(), vec![a, b]);
        assert!(store.index("other").unwrap().is_empty());
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        let a = store.put("s", "x", AssetKind::Mask, "x.png", b"abc").unwrap();
        fs::write(dir.path().join(&a.path), b"abd").unwrap();
        assert!(matches!(store.read(&a), Err(AssetError::DigestMismatch { .. })));
    }

    #[test]
    fn reopen_sweeps_staging_and_skips_torn_lines() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        store.put("s", "a", AssetKind::Image, "a.png", PNG_MAGIC).unwrap();
        fs::write(dir.path().join("tmp/partial"), b"half").unwrap();
        store.append_line("s", "assets.jsonl", "{\"id\":\"b\",\"ki").unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        assert!(fs::read_dir(dir.path().join("tmp")).unwrap().next().is_none());
        assert_eq!(store.index("s").unwrap().len(), 1);
    }

    #[test]
    fn image_sniffing() {
        assert_eq!(sniff_image(PNG_MAGIC).unwrap(), "png");
        assert_eq!(sniff_image(&[0xff, 0xd8, 0xff, 0xe0]).unwrap(), "jpg");
        assert_eq!(sniff_image(b"RIFF\0\0\0\0WEBPVP8 ").unwrap(), "webp");
        assert!(sniff_image(b"").is_err());
        assert!(sniff_image(b"hello").is_err());
    }
}
