//! Trained model container and its on-disk format.
//!
//! Layout (all integers little-endian, see `docs/checkpoint-format.md`):
//!
//! ```text
//! magic   8 bytes  "DLENCKPT"
//! version u32      currently 1
//! hlen    u32      header length in bytes
//! header  hlen     UTF-8, one `key=value` record per line
//! count   u32      number of tensors
//! tensor  repeated: u32 name length, name (UTF-8), u32 rows, u32 cols,
//!                   rows*cols f64 values in row-major order
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::{ModelConfig, Transformer};
use crate::nn::Params;

pub const MAGIC: &[u8; 8] = b"DLENCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub temperature: Option<f64>,
    pub iota: f64,
}

#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub model: Transformer,
    /// Mean segment length of the final training epoch.
    pub iota: f64,
    /// Maximum training length `L`; sliding windows are sized from it.
    pub train_len: usize,
    pub training_log: Vec<EpochLog>,
}

impl ModelCheckpoint {
    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.config();
        let mut header = vec![
            ("format".to_string(), "doclen-checkpoint".to_string()),
            ("config.layers".into(), c.layers.to_string()),
            ("config.heads".into(), c.heads.to_string()),
            ("config.d_model".into(), c.d_model.to_string()),
            ("config.d_ff".into(), c.d_ff.to_string()),
            ("config.dropout".into(), c.dropout.to_string()),
            ("config.max_positions".into(), c.max_positions.to_string()),
            ("config.vocab_size".into(), c.vocab_size.to_string()),
            ("config.scale_mode".into(), c.scale_mode.as_str().to_string()),
            ("config.laa_encoder_self".into(), c.laa_encoder_self.to_string()),
            ("config.laa_decoder_self".into(), c.laa_decoder_self.to_string()),
            ("config.laa_cross".into(), c.laa_cross.to_string()),
            ("iota".into(), self.iota.to_string()),
            ("train_len".into(), self.train_len.to_string()),
        ];
        for e in &self.training_log {
            let t = e.temperature.map(|t| t.to_string()).unwrap_or_default();
            header.push((format!("log.{}", e.epoch), format!("{},{},{}", e.loss, t, e.iota)));
        }
        let header: String = header.iter().map(|(k, v)| format!("{k}={v}\n")).collect();

        let params = self.model.params();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header = std::str::from_utf8(r.take(hlen)?).map_err(|_| bad("header is not UTF-8"))?;
        let kv: BTreeMap<&str, &str> = header
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| l.split_once('=').ok_or_else(|| bad(&format!("malformed header line '{l}'"))))
            .collect::<Result<_>>()?;
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(&format!("missing header key '{k}'")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(&format!("bad value for '{k}'"))) };
        let float = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(&format!("bad value for '{k}'"))) };
        let flag = |k: &str| -> Result<bool> { get(k)?.parse().map_err(|_| bad(&format!("bad value for '{k}'"))) };

        let config = ModelConfig {
            layers: num("config.layers")?,
            heads: num("config.heads")?,
            d_model: num("config.d_model")?,
            d_ff: num("config.d_ff")?,
            dropout: float("config.dropout")?,
            max_positions: num("config.max_positions")?,
            vocab_size: num("config.vocab_size")?,
            scale_mode: get("config.scale_mode")?.parse()?,
            laa_encoder_self: flag("config.laa_encoder_self")?,
            laa_decoder_self: flag("config.laa_decoder_self")?,
            laa_cross: flag("config.laa_cross")?,
        };
        let mut training_log: Vec<EpochLog> = kv
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("log.").map(|e| (e, v)))
            .map(|(e, v)| {
                let fields: Vec<&str> = v.split(',').collect();
                let parse = |s: &str| s.parse::<f64>().map_err(|_| bad("bad log record"));
                if fields.len() != 3 {
                    return Err(bad("bad log record"));
                }
                Ok(EpochLog {
                    epoch: e.parse().map_err(|_| bad("bad log epoch"))?,
                    loss: parse(fields[0])?,
                    temperature: if fields[1].is_empty() { None } else { Some(parse(fields[1])?) },
                    iota: parse(fields[2])?,
                })
            })
            .collect::<Result<_>>()?;
        training_log.sort_by_key(|e| e.epoch);

        let count = r.u32()? as usize;
        let mut params = Params::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?).map_err(|_| bad("tensor name is not UTF-8"))?.to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let data = r.take(rows * cols * 8)?;
            let values: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            params.add(name, Array2::from_shape_vec((rows, cols), values).expect("sized above"));
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        if !params.all_finite() {
            return Err(bad("non-finite parameter values"));
        }
        Ok(Self {
            model: Transformer::from_params(config, params)?,
            iota: float("iota")?,
            train_len: num("train_len")?,
            training_log,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn bad(msg: &str) -> Error {
    config_err(format!("checkpoint: {msg}"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::ScaleMode;

    fn sample() -> ModelCheckpoint {
        let config = ModelConfig {
            layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 8,
            max_positions: 10,
            vocab_size: 12,
            scale_mode: ScaleMode::Laa,
            ..ModelConfig::default()
        };
        ModelCheckpoint {
            model: Transformer::new(config, 3).unwrap(),
            iota: 17.25,
            train_len: 8,
            training_log: vec![
                EpochLog { epoch: 1, loss: 2.5, temperature: Some(0.1), iota: 5.0 },
                EpochLog { epoch: 2, loss: 1.25, temperature: None, iota: 17.25 },
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = ModelCheckpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.model.params(), c.model.params());
        assert_eq!(back.config(), c.config());
        assert_eq!(back.iota, c.iota);
        assert_eq!(back.train_len, 8);
        assert_eq!(back.training_log, c.training_log);
    }

    #[test]
    fn header_starts_after_magic_and_version() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), VERSION);
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[16..16 + hlen]).unwrap();
        assert!(header.starts_with("format=doclen-checkpoint\n"));
        assert!(header.contains("iota=17.25\n"));
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().to_bytes();
        assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[8] = 9;
        assert!(ModelCheckpoint::from_bytes(&bytes).is_err());
        assert!(ModelCheckpoint::from_bytes(b"nonsense").is_err());
    }
}
