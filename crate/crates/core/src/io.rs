//! File formats: 8-bit PGM frames, the raw frame stream, JSON and JSON
//! lines.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::fmoc::GrayFrame;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}:{line}: {source}")]
    Json { path: PathBuf, line: usize, source: serde_json::Error },
}

type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format { path: path.to_path_buf(), msg: msg.into() }
}

/// Magic word of the raw frame stream, `GRAY` in little-endian byte order.
pub const RAW_MAGIC: u32 = u32::from_le_bytes(*b"GRAY");

/// Parses a binary (P5) PGM with a maximum value of at most 255.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<GrayFrame> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format_err(path, format!("unsupported PGM kind {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format_err(path, format!("bad PGM field {s}")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max == 0 || max > 255 {
        return Err(format_err(path, format!("only 8-bit PGM is supported, maxval {max}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| format_err(path, "truncated PGM raster"))?;
    Ok(GrayFrame::new(w, h, data.to_vec()))
}

pub fn read_pgm(path: &Path) -> Result<GrayFrame> {
    parse_pgm(&fs::read(path).map_err(io_err(path))?, path)
}

pub fn encode_pgm(frame: &GrayFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.data);
    out
}

pub fn write_pgm(path: &Path, frame: &GrayFrame) -> Result<()> {
    fs::write(path, encode_pgm(frame)).map_err(io_err(path))
}

/// Frame number of a file name: the last run of digits in its stem.
fn frame_number(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let end = stem.rfind(|c: char| c.is_ascii_digit())? + 1;
    let start = stem[..end].rfind(|c: char| !c.is_ascii_digit()).map_or(0, |i| i + 1);
    stem[start..end].parse().ok()
}

/// Reads a directory of numbered `.pgm` files. Returns the number of the
/// first file and the frames in order; numbers must be consecutive.
pub fn read_pgm_dir(dir: &Path) -> Result<(usize, Vec<GrayFrame>)> {
    let mut files: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        if p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            let n = frame_number(&p).ok_or_else(|| format_err(&p, "file name carries no frame number"))?;
            files.push((n, p));
        }
    }
    files.sort();
    let first = files.first().ok_or_else(|| format_err(dir, "no .pgm files"))?.0;
    for (i, (n, p)) in files.iter().enumerate() {
        if *n != first + i {
            return Err(format_err(p, format!("expected frame {} here", first + i)));
        }
    }
    let frames = files.iter().map(|(_, p)| read_pgm(p)).collect::<Result<Vec<_>>>()?;
    Ok((first, frames))
}

/// Writes `frame_NNNNNN.pgm` files numbered from `first`.
pub fn write_pgm_dir(dir: &Path, first: usize, frames: &[GrayFrame]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, f) in frames.iter().enumerate() {
        write_pgm(&dir.join(format!("frame_{:06}.pgm", first + i)), f)?;
    }
    Ok(())
}

/// Incremental reader of the raw stream: a 16-byte header (magic, width,
/// height, frame count as little-endian `u32`) followed by the raster of
/// every frame.
pub struct RawFrameReader<R: Read> {
    inner: R,
    path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub count: usize,
    read: usize,
}

impl<R: Read> RawFrameReader<R> {
    pub fn new(mut inner: R, path: &Path) -> Result<Self> {
        let mut head = [0u8; 16];
        inner.read_exact(&mut head).map_err(io_err(path))?;
        let word = |i: usize| u32::from_le_bytes(head[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        if word(0) != RAW_MAGIC {
            return Err(format_err(path, "not a raw frame stream"));
        }
        let (width, height, count) = (word(1) as usize, word(2) as usize, word(3) as usize);
        if width == 0 || height == 0 {
            return Err(format_err(path, "zero frame size"));
        }
        Ok(Self { inner, path: path.to_path_buf(), width, height, count, read: 0 })
    }

    pub fn next_frame(&mut self) -> Result<Option<GrayFrame>> {
        if self.read == self.count {
            return Ok(None);
        }
        let mut data = vec![0u8; self.width * self.height];
        self.inner.read_exact(&mut data).map_err(io_err(&self.path))?;
        self.read += 1;
        Ok(Some(GrayFrame::new(self.width, self.height, data)))
    }
}

pub fn open_raw_stream(path: &Path) -> Result<RawFrameReader<BufReader<fs::File>>> {
    RawFrameReader::new(BufReader::new(fs::File::open(path).map_err(io_err(path))?), path)
}

pub fn write_raw_stream(path: &Path, frames: &[GrayFrame]) -> Result<()> {
    let first = frames.first().ok_or_else(|| format_err(path, "no frames to write"))?;
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    let mut head = Vec::with_capacity(16);
    for v in [RAW_MAGIC, first.width as u32, first.height as u32, frames.len() as u32] {
        head.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&head).map_err(io_err(path))?;
    for f in frames {
        if f.width != first.width || f.height != first.height {
            return Err(format_err(path, "frames differ in size"));
        }
        w.write_all(&f.data).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Frames from either a PGM directory or a raw stream file, with the play
/// index of the first frame (0 for raw streams).
pub fn read_frames(path: &Path) -> Result<(usize, Vec<GrayFrame>)> {
    if path.is_dir() {
        return read_pgm_dir(path);
    }
    let mut r = open_raw_stream(path)?;
    let mut frames = Vec::with_capacity(r.count);
    while let Some(f) = r.next_frame()? {
        frames.push(f);
    }
    Ok((0, frames))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for it in items {
        let line =
            serde_json::to_string(it).map_err(|source| IoError::Json { path: path.to_path_buf(), line: 0, source })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        line: source.line(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}
