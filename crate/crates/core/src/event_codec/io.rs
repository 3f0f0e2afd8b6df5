//! On-disk formats: EVS1 event files, 8-bit PGM frames, clip directories and
//! the class-per-directory dataset layout.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Event, EventFrame, EventStream};
use crate::{Error, Result};

pub const EVS1_MAGIC: [u8; 8] = *b"EVS1\0\0\0\0";
const EVS1_HEADER: usize = 8 + 2 + 2 + 8;
const EVS1_RECORD: usize = 8 + 2 + 2 + 1 + 1;

pub fn encode_evs1(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(EVS1_HEADER + stream.len() * EVS1_RECORD);
    out.extend_from_slice(&EVS1_MAGIC);
    out.extend_from_slice(&stream.width.to_le_bytes());
    out.extend_from_slice(&stream.height.to_le_bytes());
    out.extend_from_slice(&(stream.events.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity as u8);
        out.push(0);
    }
    out
}

pub fn decode_evs1(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < EVS1_HEADER || bytes[..8] != EVS1_MAGIC {
        return Err(Error::Format("missing EVS1 header".into()));
    }
    let width = u16::from_le_bytes([bytes[8], bytes[9]]);
    let height = u16::from_le_bytes([bytes[10], bytes[11]]);
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let body = &bytes[EVS1_HEADER..];
    let expected = (count as usize)
        .checked_mul(EVS1_RECORD)
        .ok_or_else(|| Error::Format("EVS1 event count overflows".into()))?;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "EVS1 declares {count} events ({expected} bytes) but has {} bytes",
            body.len()
        )));
    }
    let events = body
        .chunks_exact(EVS1_RECORD)
        .map(|r| Event {
            t: u64::from_le_bytes(r[0..8].try_into().expect("8 bytes")),
            x: u16::from_le_bytes([r[8], r[9]]),
            y: u16::from_le_bytes([r[10], r[11]]),
            polarity: r[12] as i8,
        })
        .collect();
    EventStream::new(width, height, events)
}

pub fn write_evs1(path: &Path, stream: &EventStream) -> Result<()> {
    fs::write(path, encode_evs1(stream)).map_err(|e| Error::io(path, e))
}

pub fn read_evs1(path: &Path) -> Result<EventStream> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_evs1(&bytes)
}

/// Binary 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn encode_pgm(img: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    // Header: magic, width, height, maxval as whitespace-separated tokens,
    // with '#' comments, then exactly one whitespace byte before the raster.
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if tokens[0] != "P5" {
        return Err(Error::Format(format!("unsupported PGM magic {:?}", tokens[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
    };
    let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit PGM is supported, maxval {maxval}")));
    }
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(Error::Format("truncated PGM raster".into()));
    }
    Ok(Pgm {
        width,
        height,
        pixels: bytes[pos..pos + n].to_vec(),
    })
}

pub fn write_pgm(path: &Path, img: &Pgm) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(p: u8) -> f32 {
    p as f32 / 255.0
}

impl From<&EventFrame> for Pgm {
    fn from(f: &EventFrame) -> Pgm {
        Pgm {
            width: f.width,
            height: f.height,
            pixels: f.values.iter().map(|&v| quantize(v)).collect(),
        }
    }
}

impl From<&Pgm> for EventFrame {
    fn from(p: &Pgm) -> EventFrame {
        EventFrame {
            width: p.width,
            height: p.height,
            values: p.pixels.iter().map(|&v| dequantize(v)).collect(),
        }
    }
}

/// Contents of a clip directory: `frame_0000.pgm`, ... plus `meta.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipDir {
    pub fps: f64,
    pub frames: Vec<Pgm>,
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:04}.pgm")
}

pub fn write_clip_dir(dir: &Path, frames: &[Pgm], fps: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        write_pgm(&dir.join(frame_file_name(i)), f)?;
    }
    let meta = format!("fps={fps}\nframes={}\n", frames.len());
    let path = dir.join("meta.txt");
    fs::write(&path, meta).map_err(|e| Error::io(&path, e))
}

/// Parses `meta.txt` into `(fps, frames)`.
pub fn read_meta(dir: &Path) -> Result<(f64, usize)> {
    let path = dir.join("meta.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut fps = None;
    let mut frames = None;
    for line in text.lines() {
        match line.split_once('=') {
            Some(("fps", v)) => fps = v.trim().parse::<f64>().ok(),
            Some(("frames", v)) => frames = v.trim().parse::<usize>().ok(),
            _ => {}
        }
    }
    match (fps, frames) {
        (Some(f), Some(n)) if f > 0.0 => Ok((f, n)),
        _ => Err(Error::Format(format!(
            "{}: needs valid fps= and frames= lines",
            path.display()
        ))),
    }
}

pub fn read_clip_dir(dir: &Path) -> Result<ClipDir> {
    let (fps, count) = read_meta(dir)?;
    if count == 0 {
        return Err(Error::Format(format!("{}: clip has no frames", dir.display())));
    }
    let frames = (0..count)
        .map(|i| read_pgm(&dir.join(frame_file_name(i))))
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = (frames[0].width, frames[0].height);
    if frames.iter().any(|f| (f.width, f.height) != (w, h)) {
        return Err(Error::Format(format!("{}: frames differ in size", dir.display())));
    }
    Ok(ClipDir { fps, frames })
}

/// A dataset root with one directory per class, each holding clip
/// directories. Label indices follow the lexicographic order of class names.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub classes: Vec<String>,
    /// `(sequence directory, label)` in class then sequence-name order.
    pub sequences: Vec<(PathBuf, usize)>,
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

pub fn scan_dataset(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::Format(format!("{} is not a directory", root.display())));
    }
    let mut classes = Vec::new();
    let mut sequences = Vec::new();
    for class_dir in sorted_subdirs(root)? {
        let label = classes.len();
        let name = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Format(format!("non-UTF-8 class name {}", class_dir.display())))?
            .to_string();
        classes.push(name);
        for seq in sorted_subdirs(&class_dir)? {
            if !seq.join("meta.txt").is_file() {
                return Err(Error::Format(format!("{} has no meta.txt", seq.display())));
            }
            sequences.push((seq, label));
        }
    }
    Ok(DatasetIndex { classes, sequences })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evs1_layout_is_bit_exact() {
        let s = EventStream::new(
            640,
            480,
            vec![Event { t: 0x0102_0304_0506_0708, x: 639, y: 1, polarity: -1 }],
        )
        .unwrap();
        let bytes = encode_evs1(&s);
        assert_eq!(bytes.len(), 20 + 14);
        assert_eq!(&bytes[..8], b"EVS1\0\0\0\0");
        assert_eq!(&bytes[8..12], &[0x80, 0x02, 0xe0, 0x01]);
        assert_eq!(&bytes[12..20], &1u64.to_le_bytes());
        assert_eq!(&bytes[20..28], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(&bytes[28..34], &[0x7f, 0x02, 1, 0, 0xff, 0]);
        assert_eq!(decode_evs1(&bytes).unwrap(), s);
    }

    #[test]
    fn evs1_rejects_truncation_and_bad_magic() {
        let s = EventStream::new(4, 4, vec![Event { t: 1, x: 0, y: 0, polarity: 1 }]).unwrap();
        let bytes = encode_evs1(&s);
        assert!(decode_evs1(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_evs1(&bad).is_err());
    }

    #[test]
    fn pgm_with_comments() {
        let raw = b"P5\n# made by hand\n2 2\n255\n\x00\x01\x02\xff";
        let img = decode_pgm(raw).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert_eq!(img.pixels, vec![0, 1, 2, 255]);
        assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn quantization_round_trip_is_stable() {
        for p in 0..=255u8 {
            assert_eq!(quantize(dequantize(p)), p);
        }
    }
}
