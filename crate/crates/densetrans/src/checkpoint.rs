//! Encoder checkpoints: a plain-text metadata block (config, vocab hash,
//! connectivity, tool version) followed by the tensor container.
//!
//! Layout: magic `b"DTCP"`, version u8, metadata length u32 + UTF-8
//! `key=value` lines, then the container payload.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoder::{Connectivity, Encoder, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::manifest::tool_version;
use crate::rng::SplitMix64;
use crate::tensor::serial::{read_container, read_u32, read_u8, write_container, write_u32, write_u8, Record};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DTCP";

#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub config: EncoderConfig,
    pub vocab_hash: String,
    pub tool_version: String,
}

pub fn save_checkpoint(path: &Path, encoder: &Encoder<f32>, vocab_hash: &str) -> Result<()> {
    let cfg = &encoder.config;
    let meta = format!(
        "dim={}\nnum_layers={}\nnum_heads={}\nd_ff={}\nmax_len={}\ndropout_p={}\nconnectivity={}\nvocab_size={}\nvocab_hash={}\ntool_version={}\n",
        cfg.dim,
        cfg.num_layers,
        cfg.num_heads,
        cfg.d_ff,
        cfg.max_len,
        cfg.dropout_p,
        cfg.connectivity,
        cfg.vocab_size,
        vocab_hash,
        tool_version(),
    );
    let named = encoder.params.named();
    let snapshots: Vec<(String, Vec<usize>, Vec<f32>)> = named
        .iter()
        .map(|(name, t)| (name.clone(), t.shape().to_vec(), t.to_vec()))
        .collect();
    let records: Vec<Record<'_, f32>> = snapshots
        .iter()
        .map(|(name, shape, data)| Record { name, shape, data })
        .collect();

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u8(&mut w, 1)?;
    write_u32(&mut w, meta.len() as u32)?;
    w.write_all(meta.as_bytes())?;
    write_container(&mut w, &records)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Encoder<f32>, CheckpointMeta)> {
    let fname = path.display().to_string();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::Format {
        path: fname.clone(),
        msg: format!("cannot open: {e}"),
    })?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format { path: fname, msg: "bad magic, not a checkpoint".to_string() });
    }
    let version = read_u8(&mut r)?;
    if version != 1 {
        return Err(Error::Format { path: fname, msg: format!("unsupported checkpoint version {version}") });
    }
    let meta_len = read_u32(&mut r)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)?;
    let meta_text = String::from_utf8(meta_bytes)
        .map_err(|e| Error::Format { path: fname.clone(), msg: format!("metadata not UTF-8: {e}") })?;
    let mut kv = HashMap::new();
    for line in meta_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let field = |key: &str| -> Result<&String> {
        kv.get(key)
            .ok_or_else(|| Error::Format { path: fname.clone(), msg: format!("metadata missing {key:?}") })
    };
    let parse_usize = |key: &str| -> Result<usize> {
        field(key)?
            .parse()
            .map_err(|_| Error::Format { path: fname.clone(), msg: format!("bad {key:?}") })
    };
    let config = EncoderConfig {
        dim: parse_usize("dim")?,
        num_layers: parse_usize("num_layers")?,
        num_heads: parse_usize("num_heads")?,
        d_ff: parse_usize("d_ff")?,
        max_len: parse_usize("max_len")?,
        dropout_p: field("dropout_p")?
            .parse()
            .map_err(|_| Error::Format { path: fname.clone(), msg: "bad dropout_p".to_string() })?,
        connectivity: field("connectivity")?.parse::<Connectivity>()?,
        vocab_size: parse_usize("vocab_size")?,
    };
    let meta = CheckpointMeta {
        config: config.clone(),
        vocab_hash: field("vocab_hash")?.clone(),
        tool_version: field("tool_version")?.clone(),
    };

    let records = read_container::<f32, _>(&mut r, &fname)?;
    let by_name: HashMap<String, _> = records.into_iter().map(|rec| (rec.name.clone(), rec)).collect();

    // Materialize a parameter set with the right shapes, then fill it.
    let params = EncoderParams::<f32>::init(&config, &mut SplitMix64::new(0))?;
    let named = params.named();
    if named.len() != by_name.len() {
        return Err(Error::Format {
            path: fname,
            msg: format!("checkpoint has {} tensors, model expects {}", by_name.len(), named.len()),
        });
    }
    for (name, tensor) in &named {
        let rec = by_name.get(name).ok_or_else(|| Error::Format {
            path: fname.clone(),
            msg: format!("checkpoint missing tensor {name:?}"),
        })?;
        if rec.shape != tensor.shape() {
            return Err(Error::Format {
                path: fname.clone(),
                msg: format!("tensor {name:?} has shape {:?}, model expects {:?}", rec.shape, tensor.shape()),
            });
        }
        tensor.set_data(&rec.data)?;
    }
    Ok((Encoder { config, params }, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip_preserves_encodings() {
        let config = EncoderConfig {
            dim: 8,
            num_layers: 2,
            num_heads: 2,
            d_ff: 16,
            max_len: 5,
            dropout_p: 0.1,
            connectivity: Connectivity::Dense,
            vocab_size: 12,
        };
        let encoder = Encoder::<f32>::init(config, &mut SplitMix64::new(21)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &encoder, "abc123").unwrap();
        let (back, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.vocab_hash, "abc123");
        assert_eq!(meta.config.dim, 8);
        assert_eq!(meta.config.connectivity, Connectivity::Dense);
        let ids = vec![3u32, 7, 4];
        assert_eq!(
            encoder.encode_eval(&ids).unwrap(),
            back.encode_eval(&ids).unwrap(),
            "loaded model encodes identically"
        );
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"DTCP\x01\x00\x00").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
