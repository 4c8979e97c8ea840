//! Frame folders on disk.
//!
//! Index file, one video per line (blank lines and `#` comments ignored):
//!
//! ```text
//! <video id> <frame count> <fps> [simulated|ingested]
//! ```
//!
//! Frames of video `v` live in `<dir>/v/` as numbered PNGs, ordered by the
//! integer in their file stem. Inside an output root they are normalized to
//! `frames/v/NNNN.png` (1-based, RGB8).

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use rayon::prelude::*;
use thiserror::Error;

use crate::benchgen::{BenchError, Frame, FrameSequence, FrameSource};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("index line {line}: {msg}")]
    Index { line: usize, msg: String },
    #[error("video `{video}`: {msg}")]
    Video { video: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Bench(#[from] BenchError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub video: String,
    pub frames: usize,
    pub fps: f64,
    pub source: FrameSource,
}

/// Video ids become directory names, so keep them to a safe alphabet.
pub fn valid_video_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

pub fn frame_path(video: &str, index: usize) -> String {
    format!("frames/{video}/{index:04}.png")
}

pub fn parse_index<R: BufRead>(r: R) -> Result<Vec<IndexEntry>, IngestError> {
    let mut out: Vec<IndexEntry> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let bad = |msg: String| IngestError::Index { line: i + 1, msg };
        let line = line.map_err(|e| bad(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if !(3..=4).contains(&toks.len()) {
            return Err(bad("expected `<video> <frames> <fps> [source]`".into()));
        }
        if !valid_video_id(toks[0]) {
            return Err(bad(format!("invalid video id `{}`", toks[0])));
        }
        if out.iter().any(|e| e.video == toks[0]) {
            return Err(bad(format!("duplicate video id `{}`", toks[0])));
        }
        let frames: usize = toks[1].parse().map_err(|_| bad(format!("bad frame count `{}`", toks[1])))?;
        let fps: f64 = toks[2].parse().map_err(|_| bad(format!("bad fps `{}`", toks[2])))?;
        if !(fps.is_finite() && fps > 0.0) {
            return Err(bad(format!("fps must be > 0, got {fps}")));
        }
        let source = match toks.get(3) {
            None | Some(&"ingested") => FrameSource::Ingested,
            Some(&"simulated") => FrameSource::Simulated,
            Some(s) => return Err(bad(format!("unknown source `{s}`"))),
        };
        out.push(IndexEntry {
            video: toks[0].to_string(),
            frames,
            fps,
            source,
        });
    }
    Ok(out)
}

pub fn write_index<W: Write>(mut w: W, entries: &[IndexEntry]) -> io::Result<()> {
    for e in entries {
        let src = match e.source {
            FrameSource::Simulated => "simulated",
            FrameSource::Ingested => "ingested",
        };
        writeln!(w, "{} {} {:?} {src}", e.video, e.frames, e.fps)?;
    }
    Ok(())
}

pub fn read_index_file(path: &Path) -> Result<Vec<IndexEntry>, IngestError> {
    let f = fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_index(io::BufReader::new(f))
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_rgb(path: &Path) -> Result<RgbImage, IngestError> {
    Ok(image::open(path)
        .map_err(|source| IngestError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8())
}

/// Numbered PNGs in `dir`, ordered by the integer in their stem.
fn numbered_pngs(dir: &Path, video: &str) -> Result<Vec<PathBuf>, IngestError> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_at(dir))? {
        let path = entry.map_err(io_at(dir))?.path();
        if path.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("png")) != Some(true) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let n: u64 = stem.parse().map_err(|_| IngestError::Video {
            video: video.to_string(),
            msg: format!("frame file `{}` is not numbered", path.display()),
        })?;
        found.push((n, path));
    }
    found.sort();
    if found.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(IngestError::Video {
            video: video.to_string(),
            msg: "two frame files share a number".into(),
        });
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Copy every indexed video from `src_dir` into `root/frames/`. Returns the
/// index entries, marked as ingested.
pub fn ingest_dir(src_dir: &Path, index: &Path, root: &Path) -> Result<Vec<IndexEntry>, IngestError> {
    let mut entries = read_index_file(index)?;
    for e in &mut entries {
        e.source = FrameSource::Ingested;
        let files = numbered_pngs(&src_dir.join(&e.video), &e.video)?;
        if files.len() != e.frames {
            return Err(IngestError::Video {
                video: e.video.clone(),
                msg: format!("index declares {} frames but {} were found", e.frames, files.len()),
            });
        }
        let out_dir = root.join("frames").join(&e.video);
        fs::create_dir_all(&out_dir).map_err(io_at(&out_dir))?;
        files.par_iter().enumerate().try_for_each(|(k, f)| {
            let img = load_rgb(f)?;
            let to = root.join(frame_path(&e.video, k + 1));
            img.save(&to).map_err(|source| IngestError::Image { path: to, source })
        })?;
    }
    Ok(entries)
}

/// Load the frame sequences listed in `root/frames/index.txt`.
pub fn load_sequences(root: &Path) -> Result<Vec<FrameSequence>, IngestError> {
    let entries = read_index_file(&root.join("frames/index.txt"))?;
    entries
        .par_iter()
        .map(|e| {
            let frames = (1..=e.frames)
                .into_par_iter()
                .map(|i| {
                    let path = frame_path(&e.video, i);
                    let image = load_rgb(&root.join(&path))?;
                    Ok(Frame {
                        index: i,
                        timestamp: (i - 1) as f64 / e.fps,
                        id: format!("{}/{i:04}", e.video),
                        path,
                        image: Arc::new(image),
                    })
                })
                .collect::<Result<Vec<_>, IngestError>>()?;
            Ok(FrameSequence::new(e.video.clone(), e.source, frames)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn index_round_trip() {
        let text = "# videos\nclip_a 12 30.0\n\nsim-1 61 30.0 simulated\n";
        let e = parse_index(text.as_bytes()).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].source, FrameSource::Ingested);
        assert_eq!(e[1].source, FrameSource::Simulated);
        let mut buf = Vec::new();
        write_index(&mut buf, &e).unwrap();
        assert_eq!(parse_index(buf.as_slice()).unwrap(), e);
    }

    #[test]
    fn index_errors_name_the_line() {
        for (text, line) in [
            ("a 3\n", 1),
            ("a 3 30\n../x 3 30\n", 2),
            ("a 3 0\n", 1),
            ("a 3 30\na 4 30\n", 2),
            ("a x 30\n", 1),
        ] {
            match parse_index(text.as_bytes()) {
                Err(IngestError::Index { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn ingest_orders_numerically_and_loads() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let vdir = src.path().join("clip");
        fs::create_dir_all(&vdir).unwrap();
        // 2 sorts after 10 lexically but before it numerically
        for (name, shade) in [("2.png", 20u8), ("10.png", 100), ("1.png", 10)] {
            RgbImage::from_pixel(8, 8, Rgb([shade, 0, 0])).save(vdir.join(name)).unwrap();
        }
        fs::write(src.path().join("index.txt"), "clip 3 10\n").unwrap();
        let entries = ingest_dir(src.path(), &src.path().join("index.txt"), out.path()).unwrap();
        let mut f = fs::File::create(out.path().join("frames/index.txt")).unwrap();
        write_index(&mut f, &entries).unwrap();
        drop(f);
        let seqs = load_sequences(out.path()).unwrap();
        assert_eq!(seqs.len(), 1);
        let shades: Vec<u8> = seqs[0].frames().iter().map(|f| f.image.get_pixel(0, 0)[0]).collect();
        assert_eq!(shades, vec![10, 20, 100]);
        assert_eq!(seqs[0].frame(2).timestamp, 0.1);
        assert_eq!(seqs[0].source(), FrameSource::Ingested);
    }

    #[test]
    fn frame_count_mismatch_is_reported() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        fs::create_dir_all(src.path().join("v")).unwrap();
        RgbImage::new(4, 4).save(src.path().join("v/1.png")).unwrap();
        fs::write(src.path().join("index.txt"), "v 2 10\n").unwrap();
        assert!(matches!(
            ingest_dir(src.path(), &src.path().join("index.txt"), out.path()),
            Err(IngestError::Video { .. })
        ));
    }
}
