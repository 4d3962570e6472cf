//! `PTXM1` model files.
//!
//! ```text
//! PTXM1
//! kind=blstm_1d
//! input_dim=420
//! hidden=100
//! channels=7                  (mdlstm_2d only)
//! output_dim=11
//! alphabet=E000,E001,...      (hex codepoints, index order, blank excluded)
//! seed=1
//! train.learning_rate=0.0001
//! train.momentum=0.9
//! train.max_epochs=200
//! train.patience=20
//! train.shuffle_seed=0
//! meta.<key>=<value>          (zero or more, sorted by key)
//! blocks=fwd.w_in:168000,...  (parameter blocks in storage order)
//! param_count=N
//! end
//! <N little-endian f64>
//! ```
//!
//! Every header line is `key=value` terminated by `\n`. Weight matrices are
//! row-major; see [`SequenceModel::blocks`] for the order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Alphabet, ModelKind, SequenceModel, TrainConfig};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &str = "PTXM1";

/// A model together with the provenance stored next to its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: SequenceModel,
    pub train: TrainConfig,
    /// Free-form `meta.*` header entries.
    pub meta: BTreeMap<String, String>,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::Malformed {
        what: "model file",
        msg: msg.into(),
    }
}

impl ModelFile {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let m = &self.model;
        let mut head = String::new();
        let mut line = |k: &str, v: String| {
            head.push_str(k);
            head.push('=');
            head.push_str(&v);
            head.push('\n');
        };
        line("kind", m.kind.name().to_string());
        line("input_dim", m.input_dim.to_string());
        line("hidden", m.hidden.to_string());
        if let ModelKind::Mdlstm2d { channels } = m.kind {
            line("channels", channels.to_string());
        }
        line("output_dim", m.output_dim().to_string());
        let alphabet: Vec<String> = m
            .alphabet
            .symbols()
            .iter()
            .map(|&c| format!("{:04X}", c as u32))
            .collect();
        line("alphabet", alphabet.join(","));
        line("seed", m.seed.to_string());
        line("train.learning_rate", self.train.learning_rate.to_string());
        line("train.momentum", self.train.momentum.to_string());
        line("train.max_epochs", self.train.max_epochs.to_string());
        line("train.patience", self.train.patience.to_string());
        line("train.shuffle_seed", self.train.shuffle_seed.to_string());
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::invalid(format!("meta entry {k:?} cannot be stored")));
            }
            line(&format!("meta.{k}"), v.clone());
        }
        let blocks: Vec<String> = m
            .blocks()
            .iter()
            .map(|b| format!("{}:{}", b.name, b.len))
            .collect();
        line("blocks", blocks.join(","));
        line("param_count", m.params.len().to_string());

        let mut buf = Vec::with_capacity(head.len() + 16 + 8 * m.params.len());
        buf.extend_from_slice(MODEL_MAGIC.as_bytes());
        buf.push(b'\n');
        buf.extend_from_slice(head.as_bytes());
        buf.extend_from_slice(b"end\n");
        for p in &m.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<ModelFile> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end_matches('\n') != MODEL_MAGIC {
            return Err(malformed("bad magic"));
        }
        let mut fields = BTreeMap::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(malformed("header is not terminated by `end`"));
            }
            let entry = line.trim_end_matches('\n');
            if entry == "end" {
                break;
            }
            let (k, v) = entry
                .split_once('=')
                .ok_or_else(|| malformed(format!("header line {entry:?} is not key=value")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| malformed(format!("missing header field {k}")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| malformed(format!("field {k} has invalid value {v:?}")))
        }

        let kind = match get("kind")? {
            "blstm_1d" => ModelKind::Blstm1d,
            "mdlstm_2d" => ModelKind::Mdlstm2d {
                channels: num("channels", get("channels")?)?,
            },
            other => return Err(malformed(format!("unknown kind {other:?}"))),
        };
        let input_dim = num("input_dim", get("input_dim")?)?;
        let hidden = num("hidden", get("hidden")?)?;
        let alphabet_field = get("alphabet")?;
        let symbols = alphabet_field
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|h| {
                u32::from_str_radix(h, 16)
                    .ok()
                    .and_then(char::from_u32)
                    .ok_or_else(|| malformed(format!("bad alphabet codepoint {h:?}")))
            })
            .collect::<Result<Vec<char>>>()?;
        let alphabet = Alphabet::new(symbols)?;
        let output_dim: usize = num("output_dim", get("output_dim")?)?;
        if output_dim != alphabet.size() {
            return Err(malformed("output_dim disagrees with the alphabet"));
        }
        let seed = num("seed", get("seed")?)?;
        let train = TrainConfig {
            learning_rate: num("train.learning_rate", get("train.learning_rate")?)?,
            momentum: num("train.momentum", get("train.momentum")?)?,
            max_epochs: num("train.max_epochs", get("train.max_epochs")?)?,
            patience: num("train.patience", get("train.patience")?)?,
            shuffle_seed: num("train.shuffle_seed", get("train.shuffle_seed")?)?,
        };
        let count: usize = num("param_count", get("param_count")?)?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != count * 8 {
            return Err(malformed(format!(
                "expected {count} parameters, payload holds {} bytes",
                body.len()
            )));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let model = SequenceModel::from_parts(kind, input_dim, hidden, alphabet, seed, params)?;
        let meta = fields
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(ModelFile { model, train, meta })
    }
}

pub fn save_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    file.write_to(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ModelFile::read_from(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::init_model;

    fn sample_file(kind: ModelKind) -> ModelFile {
        let alphabet = Alphabet::new(['\u{E000}', '\u{E001}', 'a']).unwrap();
        let model = init_model(kind, 6, 3, &alphabet, 42).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("xheight".to_string(), "60".to_string());
        ModelFile {
            model,
            train: TrainConfig::default(),
            meta,
        }
    }

    #[test]
    fn round_trip_both_kinds() {
        for kind in [ModelKind::Blstm1d, ModelKind::Mdlstm2d { channels: 2 }] {
            let file = sample_file(kind);
            let mut buf = Vec::new();
            file.write_to(&mut buf).unwrap();
            assert!(buf.starts_with(b"PTXM1\nkind="));
            let back = ModelFile::read_from(buf.as_slice()).unwrap();
            assert_eq!(back, file);
        }
    }

    #[test]
    fn header_lists_alphabet_and_blocks() {
        let mut buf = Vec::new();
        sample_file(ModelKind::Blstm1d).write_to(&mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf);
        assert!(text.contains("\nalphabet=E000,E001,0061\n"));
        assert!(text.contains("\nblocks=fwd.w_in:72,fwd.w_rec:36,fwd.bias:12,"));
        assert!(text.contains("\nmeta.xheight=60\n"));
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut buf = Vec::new();
        sample_file(ModelKind::Blstm1d).write_to(&mut buf).unwrap();
        buf.pop();
        assert!(ModelFile::read_from(buf.as_slice()).is_err());
        assert!(ModelFile::read_from(&b"PTXM2\nend\n"[..]).is_err());
    }
}
