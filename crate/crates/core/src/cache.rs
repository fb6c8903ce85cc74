//! Line-oriented text formats for spectra and nodal sets, and a directory
//! cache keyed by problem digest.
//!
//! ```text
//! digest <hex> format_version 1
//! # n lambda residual node_count
//! 1 1.0000000000000002 3.1e-15 1
//! ```
//!
//! Nodes files share the header and hold `n j x_j` rows (`j` from 1).
//! Lines starting with `#` and blank lines are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::nodal::{NodalCase, NodalSet, NodalSource};
use crate::problem::PencilProblem;
use crate::spectrum::{compute_levels, find_nodes, Spectrum, SpectrumEntry};
use crate::FORMAT_VERSION;

/// Environment variable naming the default cache directory.
pub const CACHE_ENV: &str = "PENCIL_CACHE_DIR";

fn header(digest: &str) -> String {
    format!("digest {digest} format_version {FORMAT_VERSION}\n")
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_header(line: Option<(usize, &str)>) -> Result<String> {
    let (_, line) = line.ok_or_else(|| CoreError::Parse("empty file".into()))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some("digest") {
        return Err(CoreError::Parse(format!("expected a digest header, got {line:?}")));
    }
    let digest = parts
        .next()
        .ok_or_else(|| CoreError::Parse("header lacks the digest".into()))?
        .to_string();
    if let Some(key) = parts.next() {
        let value = parts.next();
        if key != "format_version" || value != Some(&FORMAT_VERSION.to_string()) {
            return Err(CoreError::Parse(format!("unsupported header tail in {line:?}")));
        }
    }
    Ok(digest)
}

fn field<T: std::str::FromStr>(tok: Option<&str>, lineno: usize, name: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| CoreError::Parse(format!("line {lineno}: bad or missing {name}")))
}

pub fn spectrum_to_text(spectrum: &Spectrum) -> String {
    let mut out = header(&spectrum.problem_digest);
    out.push_str("# n lambda residual node_count\n");
    for e in &spectrum.entries {
        out.push_str(&format!("{} {} {} {}\n", e.n, e.lambda, e.residual, e.node_count));
    }
    out
}

pub fn spectrum_from_text(text: &str) -> Result<Spectrum> {
    let mut lines = content_lines(text);
    let problem_digest = parse_header(lines.next())?;
    let mut entries = Vec::new();
    for (lineno, line) in lines {
        let mut t = line.split_whitespace();
        entries.push(SpectrumEntry {
            n: field(t.next(), lineno, "n")?,
            lambda: field(t.next(), lineno, "lambda")?,
            residual: field(t.next(), lineno, "residual")?,
            node_count: field(t.next(), lineno, "node_count")?,
        });
        if t.next().is_some() {
            return Err(CoreError::Parse(format!("line {lineno}: trailing fields")));
        }
    }
    entries.sort_by_key(|e| e.n);
    let spectrum = Spectrum {
        entries,
        problem_digest,
    };
    spectrum.validate()?;
    Ok(spectrum)
}

pub fn nodes_to_text(digest: &str, set: &NodalSet) -> String {
    let mut out = header(digest);
    out.push_str("# n j x_j\n");
    for (n, xs) in set.levels() {
        for (j, x) in xs.iter().enumerate() {
            out.push_str(&format!("{n} {} {x}\n", j + 1));
        }
    }
    out
}

/// Parses a nodes file; rows may come in any order but each level's `j`
/// must run `1..=K(n)` without gaps.
pub fn nodes_from_text(text: &str, case_tag: NodalCase, source: NodalSource) -> Result<(String, NodalSet)> {
    let mut lines = content_lines(text);
    let digest = parse_header(lines.next())?;
    let mut raw: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for (lineno, line) in lines {
        let mut t = line.split_whitespace();
        let n: usize = field(t.next(), lineno, "n")?;
        let j: usize = field(t.next(), lineno, "j")?;
        let x: f64 = field(t.next(), lineno, "x_j")?;
        if raw.entry(n).or_default().insert(j, x).is_some() {
            return Err(CoreError::Parse(format!("line {lineno}: duplicate node ({n}, {j})")));
        }
    }
    let mut levels = BTreeMap::new();
    for (n, row) in raw {
        if row.keys().copied().ne(1..=row.len()) {
            return Err(CoreError::Parse(format!("level {n}: node indices are not 1..K")));
        }
        levels.insert(n, row.into_values().collect());
    }
    Ok((digest, NodalSet::new(levels, case_tag, source)?))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

/// Spectra and nodal sets on disk, one file pair per `(digest, n_max)`.
#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Directory from [`CACHE_ENV`], if set.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_ENV).map(Self::new)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn spectrum_path(&self, digest: &str, n_max: usize) -> PathBuf {
        self.dir.join(format!("{digest}_n{n_max}.spectrum"))
    }

    pub fn nodes_path(&self, digest: &str, n_max: usize) -> PathBuf {
        self.dir.join(format!("{digest}_n{n_max}.nodes"))
    }

    fn read(&self, path: &Path) -> Option<String> {
        fs::read_to_string(path).ok()
    }

    /// Spectrum and nodes at `levels`, reusing cached rows whose digest
    /// matches and computing (then storing) whatever is missing.
    pub fn levels(&self, problem: &PencilProblem, levels: &[usize]) -> Result<(Spectrum, NodalSet)> {
        let digest = problem.digest();
        let n_max = levels.iter().copied().max().unwrap_or(0);
        let spath = self.spectrum_path(&digest, n_max);
        let npath = self.nodes_path(&digest, n_max);

        let mut entries: BTreeMap<usize, SpectrumEntry> = self
            .read(&spath)
            .and_then(|t| spectrum_from_text(&t).ok())
            .filter(|s| s.problem_digest == digest)
            .map(|s| s.entries.into_iter().map(|e| (e.n, e)).collect())
            .unwrap_or_default();
        let case = crate::spectrum::case_tag(problem.case);
        let mut nodes: BTreeMap<usize, Vec<f64>> = self
            .read(&npath)
            .and_then(|t| nodes_from_text(&t, case, NodalSource::File).ok())
            .filter(|(d, _)| *d == digest)
            .map(|(_, set)| set.levels().clone())
            .unwrap_or_default();

        let missing: Vec<usize> = levels.iter().copied().filter(|n| !entries.contains_key(n)).collect();
        let mut dirty = false;
        if !missing.is_empty() {
            for e in compute_levels(problem, &missing)?.entries {
                entries.insert(e.n, e);
            }
            dirty = true;
        }
        for &n in levels {
            if let std::collections::btree_map::Entry::Vacant(slot) = nodes.entry(n) {
                slot.insert(find_nodes(problem, entries[&n].lambda)?);
                dirty = true;
            }
        }
        if dirty {
            let all = Spectrum {
                entries: entries.values().copied().collect(),
                problem_digest: digest.clone(),
            };
            let all_nodes = NodalSet::new(nodes.clone(), case, NodalSource::Solver)?;
            write_atomic(&spath, spectrum_to_text(&all).as_bytes())
                .and_then(|_| write_atomic(&npath, nodes_to_text(&digest, &all_nodes).as_bytes()))
                .map_err(|e| CoreError::Parse(format!("cache write failed: {e}")))?;
        }

        let mut wanted = levels.to_vec();
        wanted.sort_unstable();
        wanted.dedup();
        let spectrum = Spectrum {
            entries: wanted.iter().map(|n| entries[n]).collect(),
            problem_digest: digest,
        };
        let set = NodalSet::from_levels(
            wanted.iter().map(|&n| (n, nodes.remove(&n).unwrap_or_default())),
            case,
            NodalSource::Solver,
        )?;
        Ok((spectrum, set))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::BoundaryCase;

    #[test]
    fn spectrum_round_trip() {
        let s = Spectrum {
            entries: vec![
                SpectrumEntry {
                    n: 1,
                    lambda: 1.1,
                    residual: 1e-14,
                    node_count: 1,
                },
                SpectrumEntry {
                    n: 2,
                    lambda: 2.0000000000000004,
                    residual: 0.0,
                    node_count: 2,
                },
            ],
            problem_digest: "abc".into(),
        };
        let back = spectrum_from_text(&spectrum_to_text(&s)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn nodes_round_trip() {
        let set = NodalSet::free([3, 5], NodalCase::CaseI).unwrap();
        let (d, back) = nodes_from_text(&nodes_to_text("xyz", &set), NodalCase::CaseI, NodalSource::Synthetic).unwrap();
        assert_eq!(d, "xyz");
        assert_eq!(back.levels(), set.levels());
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(spectrum_from_text("").is_err());
        assert!(spectrum_from_text("nope\n").is_err());
        assert!(spectrum_from_text("digest a\n1 x 0 1\n").is_err());
        assert!(nodes_from_text("digest a\n2 1 0.5\n2 3 1.0\n", NodalCase::Unknown, NodalSource::File).is_err());
        assert!(nodes_from_text("digest a\n2 1 0.5\n2 2 0.4\n", NodalCase::Unknown, NodalSource::File).is_err());
    }

    #[test]
    fn warm_cache_matches_cold() {
        let dir = std::env::temp_dir().join(format!("pencil-cache-test-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let cache = Cache::new(&dir);
        let prob = PencilProblem::new(
            crate::function::RealFunction::sin_term(1, 0.2),
            crate::function::RealFunction::sin_term(3, 1.0),
            0.0,
            0.0,
            BoundaryCase::Robin,
        );
        let cold = cache.levels(&prob, &[3, 5, 8]).unwrap();
        let warm = cache.levels(&prob, &[3, 5, 8]).unwrap();
        assert_eq!(cold.0, warm.0);
        assert_eq!(cold.1.levels(), warm.1.levels());
        let subset = cache.levels(&prob, &[5, 8]).unwrap();
        assert_eq!(subset.0.entries.len(), 2);
        let _ = fs::remove_dir_all(&dir);
    }
}
