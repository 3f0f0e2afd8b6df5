//! `EVHARCKPT` v1: magic, `u32` version, a length-prefixed UTF-8 header of
//! `key=value` lines, one `u64`-counted little-endian blob per stored tensor,
//! and a trailing CRC-32 over everything before it.

use std::collections::BTreeMap;
use std::path::Path;

use evhar_tensor::Scalar;

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"EVHARCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Free-form string entries stored next to the config (metrics, class names).
pub type Metadata = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
    pub metadata: Metadata,
}

fn header_lines<T: Scalar>(config: &ModelConfig, metadata: &Metadata) -> Result<String> {
    let channels: Vec<String> = config.channels.iter().map(usize::to_string).collect();
    let mut out = String::new();
    let mut push = |k: &str, v: &str| -> Result<()> {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Config(format!(
                "checkpoint entry {k:?} must not contain newlines or '=' in the key"
            )));
        }
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
        Ok(())
    };
    push("precision", T::PRECISION.name())?;
    push("channels", &channels.join(","))?;
    push("input_channels", &config.input_channels.to_string())?;
    push("num_classes", &config.num_classes.to_string())?;
    push("clip_length", &config.clip_length.to_string())?;
    let (h, w) = config.input_resolution;
    push("input_resolution", &format!("{h}x{w}"))?;
    push("dropout_rate", &config.dropout_rate.to_string())?;
    push("attention_enabled", &config.attention_enabled.to_string())?;
    push("channel_multiplier", &config.channel_multiplier.to_string())?;
    for (k, v) in metadata {
        push(&format!("meta.{k}"), v)?;
    }
    Ok(out)
}

pub fn encode_checkpoint<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    metadata: &Metadata,
) -> Result<Vec<u8>> {
    params.check_compatible(config)?;
    let header = header_lines::<T>(config, metadata)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    for t in params.stored_tensors() {
        buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for &v in t.data() {
            v.write_le(&mut buf);
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptCheckpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn parse<V: std::str::FromStr>(entries: &BTreeMap<&str, &str>, key: &str) -> Result<V> {
    entries
        .get(key)
        .ok_or_else(|| Error::CorruptCheckpoint(format!("header lacks {key}")))?
        .parse()
        .map_err(|_| Error::CorruptCheckpoint(format!("unparsable header value for {key}")))
}

fn parse_config(entries: &BTreeMap<&str, &str>) -> Result<ModelConfig> {
    let channels = entries
        .get("channels")
        .ok_or_else(|| Error::CorruptCheckpoint("header lacks channels".into()))?
        .split(',')
        .map(|c| c.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::CorruptCheckpoint("unparsable channels".into()))?;
    let res: String = parse(entries, "input_resolution")?;
    let (h, w) = res
        .split_once('x')
        .and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)))
        .ok_or_else(|| Error::CorruptCheckpoint("unparsable input_resolution".into()))?;
    let config = ModelConfig {
        channels,
        input_channels: parse(entries, "input_channels")?,
        num_classes: parse(entries, "num_classes")?,
        clip_length: parse(entries, "clip_length")?,
        input_resolution: (h, w),
        dropout_rate: parse(entries, "dropout_rate")?,
        attention_enabled: parse(entries, "attention_enabled")?,
        channel_multiplier: parse(entries, "channel_multiplier")?,
    };
    config
        .validate()
        .map_err(|e| Error::CorruptCheckpoint(format!("stored config invalid: {e}")))?;
    Ok(config)
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("missing EVHARCKPT magic".into()));
    }
    let mut r = Reader {
        bytes,
        pos: CHECKPOINT_MAGIC.len(),
    };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CorruptCheckpoint(format!("unknown version {version}")));
    }
    if bytes.len() < r.pos + 4 {
        return Err(Error::CorruptCheckpoint("truncated file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: r.pos };
    let hlen = r.u32()? as usize;
    let header = std::str::from_utf8(r.take(hlen)?)
        .map_err(|_| Error::CorruptCheckpoint("header is not UTF-8".into()))?;
    let entries: BTreeMap<&str, &str> = header
        .lines()
        .map(|l| {
            l.split_once('=')
                .ok_or_else(|| Error::CorruptCheckpoint(format!("malformed header line {l:?}")))
        })
        .collect::<Result<_>>()?;
    let precision: String = parse(&entries, "precision")?;
    if precision != T::PRECISION.name() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint stores {precision}, requested {}",
            T::PRECISION.name()
        )));
    }
    let config = parse_config(&entries)?;
    let metadata: Metadata = entries
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.to_string())))
        .collect();

    let mut params = ModelParams::<T>::build(&config, 0)?;
    for t in params.stored_tensors_mut() {
        let count = r.u64()? as usize;
        if count != t.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "blob holds {count} values, config implies {}",
                t.len()
            )));
        }
        let raw = r.take(count.checked_mul(T::BYTES).ok_or_else(|| {
            Error::CorruptCheckpoint("blob size overflows".into())
        })?)?;
        for (v, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(T::BYTES)) {
            *v = T::read_le(chunk);
        }
    }
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes after parameters".into()));
    }
    Ok(Checkpoint {
        config,
        params,
        metadata,
    })
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    params: &ModelParams<T>,
    config: &ModelConfig,
    metadata: &Metadata,
) -> Result<()> {
    let bytes = encode_checkpoint(params, config, metadata)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and refuses it unless its tensors fit `expected`.
pub fn load_checkpoint_for<T: Scalar>(path: &Path, expected: &ModelConfig) -> Result<Checkpoint<T>> {
    let ckpt = load_checkpoint::<T>(path)?;
    ckpt.params.check_compatible(expected)?;
    if ckpt.config.num_classes != expected.num_classes
        || ckpt.config.clip_length != expected.clip_length
        || ckpt.config.input_resolution != expected.input_resolution
    {
        return Err(Error::IncompatibleCheckpoint(
            "checkpoint input or class layout differs from the requested model".into(),
        ));
    }
    Ok(ckpt)
}
