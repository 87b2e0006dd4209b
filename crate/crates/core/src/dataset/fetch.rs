use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One downloadable file: source URL and the SHA-256 of the served bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub url: String,
    pub sha256: String,
}

impl ManifestEntry {
    pub fn filename(&self) -> &str {
        self.url.rsplit('/').next().unwrap_or(&self.url)
    }
}

/// The standard MNIST IDX distribution.
pub fn builtin_manifest() -> Vec<ManifestEntry> {
    const FILES: [(&str, &str); 4] = [
        (
            "https://storage.googleapis.com/cvdf-datasets/mnist/train-images-idx3-ubyte.gz",
            "440fcabf73cc546fa21475e81ea370265605f56be210a4024d2ca8f203523609",
        ),
        (
            "https://storage.googleapis.com/cvdf-datasets/mnist/train-labels-idx1-ubyte.gz",
            "3552534a0a558bbed6aed32b30c495cca23d567ec52cac8be1a0730e8010255c",
        ),
        (
            "https://storage.googleapis.com/cvdf-datasets/mnist/t10k-images-idx3-ubyte.gz",
            "8d422c7b0a1c1c79245a5bcf07fe86e33eeafee792b84584aec276f5a2dbc4e6",
        ),
        (
            "https://storage.googleapis.com/cvdf-datasets/mnist/t10k-labels-idx1-ubyte.gz",
            "f7ae60f92e00ec6debd23a6088c31dbd2371eca3ffa0defaefb259924204aec6",
        ),
    ];
    FILES
        .iter()
        .map(|(url, sha)| ManifestEntry {
            url: url.to_string(),
            sha256: sha.to_string(),
        })
        .collect()
}

/// Parses a manifest text: one `<url> <sha256>` pair per line, `#` comments.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (url, sha) = match (parts.next(), parts.next(), parts.next()) {
            (Some(url), Some(sha), None) => (url, sha),
            _ => {
                return Err(Error::Config(format!(
                    "manifest line {}: expected '<url> <sha256>'",
                    lineno + 1
                )))
            }
        };
        if sha.len() != 64 || !sha.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::Config(format!(
                "manifest line {}: '{sha}' is not a sha256 hex digest",
                lineno + 1
            )));
        }
        entries.push(ManifestEntry {
            url: url.to_string(),
            sha256: sha.to_ascii_lowercase(),
        });
    }
    Ok(entries)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Downloads every manifest entry into `dest_dir`, verifying checksums and
/// gunzipping `.gz` payloads. Files already present with a matching checksum
/// are not re-downloaded. Returns the paths of the extracted (or raw) files.
pub fn fetch_dataset(entries: &[ManifestEntry], dest_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dest_dir)?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_connect(Some(Duration::from_secs(20)))
        .timeout_global(Some(Duration::from_secs(600)))
        .build()
        .new_agent();

    let mut paths = Vec::with_capacity(entries.len());
    for entry in entries {
        let raw_path = dest_dir.join(entry.filename());
        let cached = match fs::read(&raw_path) {
            Ok(existing) => sha256_hex(&existing) == entry.sha256,
            Err(_) => false,
        };

        if !cached {
            let bytes = download(&agent, &entry.url)?;
            let actual = sha256_hex(&bytes);
            if actual != entry.sha256 {
                return Err(Error::Integrity {
                    path: entry.url.clone(),
                    expected: entry.sha256.clone(),
                    actual,
                });
            }
            write_atomic(&raw_path, &bytes)?;
        }

        paths.push(extract_if_gz(&raw_path)?);
    }
    Ok(paths)
}

fn download(agent: &ureq::Agent, url: &str) -> Result<Vec<u8>> {
    let mut response = agent
        .get(url)
        .call()
        .map_err(|e| Error::Transport(format!("GET {url}: {e}")))?;
    response
        .body_mut()
        .with_config()
        .limit(1 << 31)
        .read_to_vec()
        .map_err(|e| Error::Transport(format!("reading body of {url}: {e}")))
}

fn extract_if_gz(path: &Path) -> Result<PathBuf> {
    let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
        return Ok(path.to_path_buf());
    };
    let Some(stem) = name.strip_suffix(".gz") else {
        return Ok(path.to_path_buf());
    };
    let out_path = path.with_file_name(stem);
    if !out_path.exists() {
        let compressed = fs::read(path)?;
        let mut decoder = flate2::read::GzDecoder::new(&compressed[..]);
        let mut decompressed = Vec::new();
        decoder.read_to_end(&mut decompressed).map_err(|e| Error::Parse {
            offset: 0,
            msg: format!("gunzip {}: {e}", path.display()),
        })?;
        write_atomic(&out_path, &decompressed)?;
    }
    Ok(out_path)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-download");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
