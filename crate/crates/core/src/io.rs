//! Binary PGM frames and newline-delimited JSON records.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scene_sim::Frame;

/// Largest frame the decoder accepts, in pixels.
pub const MAX_PGM_PIXELS: usize = 1 << 26;

pub fn frame_file_name(index: u64) -> String {
    format!("frame_{index:06}.pgm")
}

/// Frame index encoded in a `frame_NNNNNN.pgm` name.
pub fn parse_frame_file_name(name: &str) -> Option<u64> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".pgm")?;
    if digits.len() < 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.pixels);
    out
}

/// Decodes an 8-bit binary PGM. Header comments are allowed; trailing bytes
/// after the raster are not.
pub fn decode_pgm(bytes: &[u8]) -> Result<Frame> {
    let mut pos = 0;
    if bytes.get(..2) != Some(b"P5") {
        return Err(Error::Pgm("missing P5 magic".into()));
    }
    pos += 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        skip_space_and_comments(bytes, &mut pos)?;
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pgm(format!("header field {} is not a number", i + 1)));
        }
        if pos - start > 9 {
            return Err(Error::Pgm(format!("header field {} is too large", i + 1)));
        }
        *field = std::str::from_utf8(&bytes[start..pos]).unwrap().parse().unwrap();
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Pgm("header must end with one whitespace byte".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Pgm(format!("empty raster {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Pgm(format!("maxval {maxval} is not 8-bit")));
    }
    let n = width.checked_mul(height).filter(|&n| n <= MAX_PGM_PIXELS);
    let n = n.ok_or_else(|| Error::Pgm(format!("raster {width}x{height} too large")))?;
    let raster = &bytes[pos..];
    if raster.len() != n {
        return Err(Error::Pgm(format!("raster has {} bytes, expected {n}", raster.len())));
    }
    if let Some(&p) = raster.iter().find(|&&p| p as usize > maxval) {
        return Err(Error::Pgm(format!("sample {p} exceeds maxval {maxval}")));
    }
    Frame::new(width as u32, height as u32, raster.to_vec())
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) -> Result<()> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            Some(_) => return Ok(()),
            None => return Err(Error::Pgm("truncated header".into())),
        }
    }
}

pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    fs::write(path, encode_pgm(frame))?;
    Ok(())
}

/// Reads a PGM frame and stamps it with `index` and `index / fps`.
pub fn read_pgm(path: &Path, index: u64, fps: f64) -> Result<Frame> {
    let bytes = fs::read(path)?;
    let mut frame = decode_pgm(&bytes).map_err(|e| match e {
        Error::Pgm(m) => Error::Pgm(format!("{}: {m}", path.display())),
        other => other,
    })?;
    frame.index = index;
    frame.timestamp = index as f64 / fps;
    Ok(frame)
}

/// `frame_NNNNNN.pgm` files of a directory, by index.
pub fn list_frames(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        if let Some(index) = name.to_str().and_then(parse_frame_file_name) {
            frames.push((index, entry.path()));
        }
    }
    frames.sort();
    Ok(frames)
}

pub fn write_jsonl<T: Serialize>(mut w: impl Write, records: impl IntoIterator<Item = T>) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_record<T: DeserializeOwned>(line: &str) -> Result<T> {
    Ok(serde_json::from_str(line)?)
}

/// Parses every non-blank line; errors name the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(r: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(&line).map_err(|e| Error::Config {
            path: format!("line {}", i + 1),
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}
