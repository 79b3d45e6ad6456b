//! Plain-text manifests: `path<TAB>duration` audio lists and
//! `noisy_path<TAB>clean_path` pair lists. Relative paths resolve against
//! the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioItem {
    pub path: PathBuf,
    /// Zero when the manifest line carries no duration.
    pub duration_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairItem {
    pub noisy: PathBuf,
    pub clean: PathBuf,
}

fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn read_audio_manifest(path: impl AsRef<Path>) -> Result<Vec<AudioItem>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    lines(path)?
        .into_iter()
        .map(|(n, l)| {
            let mut parts = l.split('\t');
            let file = parts.next().unwrap_or_default();
            let duration_seconds = match parts.next() {
                Some(d) => d.trim().parse().map_err(|_| Error::Manifest {
                    path: path.to_path_buf(),
                    line: n,
                    msg: format!("bad duration `{d}`"),
                })?,
                None => 0.0,
            };
            Ok(AudioItem {
                path: resolve(base, file),
                duration_seconds,
            })
        })
        .collect()
}

pub fn read_pair_manifest(path: impl AsRef<Path>) -> Result<Vec<PairItem>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    lines(path)?
        .into_iter()
        .map(|(n, l)| {
            let (noisy, clean) = l.split_once('\t').ok_or_else(|| Error::Manifest {
                path: path.to_path_buf(),
                line: n,
                msg: "expected `noisy_path<TAB>clean_path`".into(),
            })?;
            Ok(PairItem {
                noisy: resolve(base, noisy),
                clean: resolve(base, clean.trim()),
            })
        })
        .collect()
}

pub fn write_audio_manifest(path: impl AsRef<Path>, items: &[AudioItem]) -> Result<()> {
    let path = path.as_ref();
    let text: String = items
        .iter()
        .map(|i| format!("{}\t{}\n", i.path.display(), i.duration_seconds))
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_pair_manifest(path: impl AsRef<Path>, items: &[PairItem]) -> Result<()> {
    let path = path.as_ref();
    let text: String = items
        .iter()
        .map(|i| format!("{}\t{}\n", i.noisy.display(), i.clean.display()))
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("pairs.tsv");
        fs::write(&m, "# comment\nnoisy/a.wav\tclean/a.wav\n\n/abs/b.wav\t/abs/c.wav\n").unwrap();
        let items = read_pair_manifest(&m).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].noisy, dir.path().join("noisy/a.wav"));
        assert_eq!(items[1].clean, PathBuf::from("/abs/c.wav"));

        let a = dir.path().join("audio.tsv");
        fs::write(&a, "x.wav\t2.5\ny.wav\n").unwrap();
        let items = read_audio_manifest(&a).unwrap();
        assert_eq!(items[0].duration_seconds, 2.5);
        assert_eq!(items[1].duration_seconds, 0.0);

        fs::write(&m, "only-one-column\n").unwrap();
        assert!(matches!(read_pair_manifest(&m), Err(Error::Manifest { line: 1, .. })));
    }
}
