//! Output-tree checksums and referential checks.
//!
//! `checksums.sha256` lists every file under the output root except stage
//! markers, the review log and itself, in `sha256sum` format, sorted by path.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::ingest::{frame_path, read_index_file};

pub const CHECKSUM_FILE: &str = "checksums.sha256";

/// Top-level entries that are not pipeline artifacts.
const EXCLUDED: [&str; 3] = [".stages", CHECKSUM_FILE, "review"];

/// Record-per-line manifests whose path fields must resolve.
const MANIFESTS: [&str; 3] = ["bench/nfs.jsonl", "bench/tcv.jsonl", "dataset/manifest.jsonl"];

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    let mut hex = String::with_capacity(64);
    for b in h.finalize().iter() {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

/// Artifact files under `root` as sorted `/`-separated relative paths.
pub fn tree_files(root: &Path) -> io::Result<Vec<String>> {
    let mut out = Vec::new();
    let walker = WalkDir::new(root).sort_by_file_name().into_iter().filter_entry(|e| {
        e.depth() != 1 || !EXCLUDED.iter().any(|x| e.file_name() == *x)
    });
    for entry in walker {
        let entry = entry.map_err(io::Error::other)?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("under root");
        let parts: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        out.push(parts.join("/"));
    }
    out.sort();
    Ok(out)
}

/// Relative path to hex digest for every artifact file.
pub fn tree_digest(root: &Path) -> io::Result<BTreeMap<String, String>> {
    tree_files(root)?
        .into_iter()
        .map(|p| {
            let h = sha256_file(&root.join(&p))?;
            Ok((p, h))
        })
        .collect()
}

pub fn write_checksums(root: &Path) -> io::Result<()> {
    let mut text = String::new();
    for (path, hash) in tree_digest(root)? {
        let _ = writeln!(text, "{hash}  {path}");
    }
    fs::write(root.join(CHECKSUM_FILE), text)
}

pub fn read_checksums(root: &Path) -> io::Result<BTreeMap<String, String>> {
    let f = BufReader::new(fs::File::open(root.join(CHECKSUM_FILE))?);
    let mut out = BTreeMap::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (hash, path) = line.split_once("  ").ok_or_else(|| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{CHECKSUM_FILE} line {}: malformed", i + 1))
        })?;
        out.insert(path.to_string(), hash.to_string());
    }
    Ok(out)
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct VerifyReport {
    pub checked: usize,
    /// Listed in the checksum file but absent.
    pub missing: Vec<String>,
    pub mismatched: Vec<String>,
    /// Present but not listed.
    pub unlisted: Vec<String>,
    /// (manifest, referenced path) pairs that do not resolve.
    pub dangling: Vec<(String, String)>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.missing.is_empty() && self.mismatched.is_empty() && self.unlisted.is_empty() && self.dangling.is_empty()
    }
}

fn collect_paths(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::String(s) if s.ends_with(".png") || s.ends_with(".f32") => {
            out.insert(s.clone());
        }
        Value::Array(a) => a.iter().for_each(|x| collect_paths(x, out)),
        Value::Object(o) => o.values().for_each(|x| collect_paths(x, out)),
        _ => {}
    }
}

/// Every file path referenced by the manifests present under `root`.
pub fn referenced_paths(root: &Path) -> io::Result<BTreeMap<String, BTreeSet<String>>> {
    let mut refs: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for m in MANIFESTS {
        let path = root.join(m);
        if !path.exists() {
            continue;
        }
        let set = refs.entry(m.to_string()).or_default();
        for (i, line) in BufReader::new(fs::File::open(&path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Value = serde_json::from_str(&line).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("{m} line {}: {e}", i + 1))
            })?;
            collect_paths(&v, set);
        }
    }
    let index = root.join("frames/index.txt");
    if index.exists() {
        let entries = read_index_file(&index).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        let set = refs.entry("frames/index.txt".into()).or_default();
        for e in entries {
            set.extend((1..=e.frames).map(|i| frame_path(&e.video, i)));
        }
    }
    let sdf = root.join("sdf/index.json");
    if sdf.exists() {
        let v: Value = serde_json::from_slice(&fs::read(&sdf)?)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("sdf/index.json: {e}")))?;
        collect_paths(&v, refs.entry("sdf/index.json".into()).or_default());
    }
    Ok(refs)
}

/// Compare the tree against its checksum file and check that every manifest
/// reference resolves.
pub fn verify(root: &Path) -> io::Result<VerifyReport> {
    let listed = read_checksums(root)?;
    let actual = tree_digest(root)?;
    let mut report = VerifyReport {
        checked: listed.len(),
        ..Default::default()
    };
    for (path, hash) in &listed {
        match actual.get(path) {
            None => report.missing.push(path.clone()),
            Some(h) if h != hash => report.mismatched.push(path.clone()),
            _ => {}
        }
    }
    report.unlisted = actual.keys().filter(|p| !listed.contains_key(*p)).cloned().collect();
    for (manifest, paths) in referenced_paths(root)? {
        for p in paths {
            if !root.join(&p).is_file() {
                report.dangling.push((manifest.clone(), p));
            }
        }
    }
    Ok(report)
}
