use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{ensure, invalid, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One file listed in a manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Utterance the file belongs to, or `-`.
    pub id: String,
    /// `train`, `test`, or `-`.
    pub role: String,
    /// What the file holds, e.g. `clean_wav` or `visual`.
    pub kind: String,
    /// SNR tag for mixtures, `-` otherwise.
    pub snr_db: String,
    /// Path relative to the manifest directory.
    pub path: String,
    pub sha256: String,
}

/// Tab-separated listing of corpus files with per-file digests and a
/// trailing digest over the listing itself.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub const HEADER: &'static str = "id\trole\tkind\tsnr_db\tpath\tsha256";

    fn body(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.id, e.role, e.kind, e.snr_db, e.path, e.sha256
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let body = self.body();
        let digest = sha256_hex(body.as_bytes());
        format!("{body}checksum\t{digest}\n")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (body, last) = text
            .trim_end_matches('\n')
            .rsplit_once('\n')
            .ok_or_else(|| invalid!("manifest is empty"))?;
        let body = format!("{body}\n");
        let digest = last
            .strip_prefix("checksum\t")
            .ok_or_else(|| invalid!("manifest lacks its checksum line"))?;
        ensure!(
            sha256_hex(body.as_bytes()) == digest,
            "manifest checksum mismatch"
        );
        let mut lines = body.lines();
        ensure!(
            lines.next() == Some(Self::HEADER),
            "manifest header is wrong"
        );
        let mut entries = Vec::new();
        for line in lines {
            let c: Vec<&str> = line.split('\t').collect();
            ensure!(
                c.len() == 6,
                "manifest line has {} fields: {line:?}",
                c.len()
            );
            entries.push(ManifestEntry {
                id: c[0].into(),
                role: c[1].into(),
                kind: c[2].into(),
                snr_db: c[3].into(),
                path: c[4].into(),
                sha256: c[5].into(),
            });
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Reads a listed file and checks its digest.
    pub fn load(&self, dir: &Path, entry: &ManifestEntry) -> Result<Vec<u8>> {
        let bytes = fs::read(dir.join(&entry.path))?;
        ensure!(
            sha256_hex(&bytes) == entry.sha256,
            "{} does not match its manifest checksum",
            entry.path
        );
        Ok(bytes)
    }

    pub fn find(&self, id: &str, kind: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id && e.kind == kind)
    }
}
