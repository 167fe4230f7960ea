use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::encoder::{param_layout, EncoderConfig, EncoderParams, Head, HeadKind};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"STLT";
pub const FORMAT_VERSION: u32 = 1;

const HEAD_WEIGHT: &str = "head.weight";
const HEAD_BIAS: &str = "head.bias";

/// Where the parameters came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Phase names in training order, e.g. `["pretrain", "synth_related", "synth_target"]`.
    pub phases: Vec<String>,
    pub seeds: Vec<u64>,
    pub manifest_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub params: EncoderParams,
    pub head: Option<Head>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: EncoderConfig,
    head: Option<HeadKind>,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

fn expected_index(config: &EncoderConfig, head: Option<&Head>) -> Vec<TensorEntry> {
    let mut index: Vec<TensorEntry> = param_layout(config)
        .into_iter()
        .map(|(name, shape)| TensorEntry { name, shape })
        .collect();
    if let Some(h) = head {
        index.push(TensorEntry {
            name: HEAD_WEIGHT.into(),
            shape: h.weight.shape().to_vec(),
        });
        index.push(TensorEntry {
            name: HEAD_BIAS.into(),
            shape: h.bias.shape().to_vec(),
        });
    }
    index
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Writes `STLT`, a u32 version, a u64 header length, the JSON header and
/// the little-endian f64 payload. The file is written beside `path` and
/// renamed into place.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let tensors: Vec<&Tensor> = ckpt
        .params
        .tensors()
        .iter()
        .chain(ckpt.head.iter().flat_map(|h| [&h.weight, &h.bias]))
        .collect();
    let mut payload = Vec::with_capacity(tensors.iter().map(|t| t.len() * 8).sum());
    for t in &tensors {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        config: ckpt.config.clone(),
        head: ckpt.head.as_ref().map(|h| h.kind),
        provenance: ckpt.provenance.clone(),
        tensors: expected_index(&ckpt.config, ckpt.head.as_ref()),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&header)?;

    let mut bytes = Vec::with_capacity(16 + header.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&payload);

    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(bad(format!(
            "truncated file: {what} needs {n} bytes, {} left",
            bytes.len()
        )));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

/// Reads a checkpoint. Nothing is returned unless every check passes.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let all = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rest = all.as_slice();
    if take(&mut rest, 4, "magic")? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&mut rest, 4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!(
            "version mismatch: file has {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(
        take(&mut rest, 8, "header length")?
            .try_into()
            .expect("8 bytes"),
    );
    let header_len = usize::try_from(header_len).map_err(|_| bad("header length overflows"))?;
    let header: Header = serde_json::from_slice(take(&mut rest, header_len, "header")?)
        .map_err(|e| bad(format!("corrupt header: {e}")))?;
    header.config.validate()?;

    let head_template = header.head.map(|kind| Head {
        kind,
        weight: Tensor::zeros(&[header.config.pooled_dim(), kind.out_dim()]),
        bias: Tensor::zeros(&[1, kind.out_dim()]),
    });
    let expected = expected_index(&header.config, head_template.as_ref());
    if header.tensors != expected {
        let at = header
            .tensors
            .iter()
            .zip(&expected)
            .position(|(a, b)| a != b)
            .unwrap_or(expected.len().min(header.tensors.len()));
        return Err(bad(format!(
            "shape index inconsistent with the config at entry {at} ({} entries, expected {})",
            header.tensors.len(),
            expected.len()
        )));
    }
    let n_values: usize = expected
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if rest.len() != n_values * 8 {
        return Err(bad(format!(
            "payload is {} bytes, the index needs {}",
            rest.len(),
            n_values * 8
        )));
    }
    if hex::encode(Sha256::digest(rest)) != header.payload_sha256 {
        return Err(bad("payload digest mismatch"));
    }

    let mut values = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut tensors = Vec::with_capacity(expected.len());
    for e in &expected {
        let n = e.shape.iter().product();
        tensors.push(Tensor::new(
            e.shape.clone(),
            values.by_ref().take(n).collect(),
        )?);
    }
    let head = match header.head {
        Some(kind) => {
            let bias = tensors.pop().expect("head bias");
            let weight = tensors.pop().expect("head weight");
            Some(Head { kind, weight, bias })
        }
        None => None,
    };
    let params = EncoderParams::from_tensors(&header.config, tensors)?;
    Ok(Checkpoint {
        config: header.config,
        params,
        head,
        provenance: header.provenance,
    })
}

/// Like [`load_checkpoint`], but rejects a file saved under a different config.
pub fn load_checkpoint_for(path: &Path, config: &EncoderConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.config != config {
        return Err(bad(format!(
            "config mismatch: file has {:?}, caller expects {config:?}",
            ckpt.config
        )));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{Arity, TaskSpec};
    use crate::encoder::{init_params, ObjectiveStyle, Pooling};

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 12,
            max_len: 6,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            dropout_rate: 0.0,
            pooling: Pooling::ClsToken,
            objective_style: ObjectiveStyle::MaskedLm,
        }
    }

    fn sample() -> Checkpoint {
        let c = cfg();
        Checkpoint {
            params: init_params(&c, 3).unwrap(),
            head: Some(Head::new(
                &TaskSpec::binary("t", Arity::Pair),
                c.pooled_dim(),
                4,
            )),
            config: c,
            provenance: Provenance {
                phases: vec!["pretrain".into(), "i".into(), "t".into()],
                seeds: vec![1, 2, 3],
                manifest_hash: "abc".into(),
            },
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.stlt");
        let mut ck = sample();
        ck.params.tensors_mut()[0].data_mut()[0] = f64::MIN_POSITIVE / 3.0;
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        for (a, b) in ck.params.tensors().iter().zip(back.params.tensors()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back, ck);
        assert_eq!(back.provenance.phases, ["pretrain", "i", "t"]);
    }

    #[test]
    fn config_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.stlt");
        save_checkpoint(&sample(), &path).unwrap();
        let other = EncoderConfig {
            d_model: 16,
            ..cfg()
        };
        let err = load_checkpoint_for(&path, &other).unwrap_err().to_string();
        assert!(err.contains("config mismatch"), "{err}");
        assert!(load_checkpoint_for(&path, &cfg()).is_ok());
    }

    #[test]
    fn corruption_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.stlt");
        save_checkpoint(&sample(), &path).unwrap();
        let good = fs::read(&path).unwrap();
        let header_len = u64::from_le_bytes(good[8..16].try_into().unwrap()) as usize;
        let header = String::from_utf8(good[16..16 + header_len].to_vec()).unwrap();

        let cases: Vec<(Vec<u8>, &str)> = vec![
            (good[..good.len() - 5].to_vec(), "payload"),
            (good[..10].to_vec(), "truncated"),
            (
                {
                    let mut b = good.clone();
                    b[4] = 9;
                    b
                },
                "version mismatch",
            ),
            (
                {
                    let mut b = good.clone();
                    b[0] = b'X';
                    b
                },
                "magic",
            ),
            (
                {
                    let mut b = good.clone();
                    let at = 16 + header.find("\"shape\":[").unwrap() + 9;
                    b[at] = if b[at] == b'9' { b'8' } else { b'9' };
                    b
                },
                "index",
            ),
            (
                {
                    let mut b = good.clone();
                    let last = b.len() - 1;
                    b[last] ^= 1;
                    b
                },
                "digest",
            ),
        ];
        for (bytes, want) in cases {
            fs::write(&path, &bytes).unwrap();
            let err = load_checkpoint(&path).unwrap_err().to_string();
            assert!(err.contains(want), "expected {want}: {err}");
        }
    }
}
