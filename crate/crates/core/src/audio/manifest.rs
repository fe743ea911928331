//! Tab-separated utterance manifests: `utterance-id<TAB>wav-path<TAB>speaker-id`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub path: PathBuf,
    pub speaker_id: String,
}

/// Parses a manifest. Relative wav paths resolve against the manifest's
/// directory. Blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, path, base)
}

pub fn parse_manifest(text: &str, path: &Path, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [utt, wav, spk] = fields[..] else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        };
        if utt.is_empty() || wav.is_empty() || spk.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "empty field".into(),
            });
        }
        let wav_path = Path::new(wav);
        out.push(ManifestEntry {
            utterance_id: utt.to_string(),
            path: if wav_path.is_absolute() {
                wav_path.to_path_buf()
            } else {
                base.join(wav_path)
            },
            speaker_id: spk.to_string(),
        });
    }
    Ok(out)
}

pub fn format_manifest<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> String {
    entries
        .into_iter()
        .map(|(u, p, s)| format!("{u}\t{p}\t{s}\n"))
        .collect()
}
