//! Versioned binary container for trained weights.
//!
//! Layout: magic `DVCR`, format version (u32), a length-prefixed JSON
//! header (model kind, config, vocabulary, tensor directory), then each
//! tensor's f64 values row-major. All integers and floats little-endian.
//! Loading rebuilds a zero skeleton from the header's config and checks
//! every tensor against it, so shape drift fails loudly instead of
//! producing silently misaligned weights.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::predictor::{ChooserWeights, OpHead, TextEncoderConfig};
use crate::ranker::{RankerConfig, RankerWeights, Vocab};

const MAGIC: [u8; 4] = *b"DVCR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct HeaderRef<'a, C> {
    kind: &'a str,
    config: &'a C,
    vocab: &'a Vocab,
    tensors: &'a [TensorInfo],
}

#[derive(Deserialize)]
struct HeaderOwned<C> {
    config: C,
    vocab: Vocab,
    tensors: Vec<TensorInfo>,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

type NamedTensors = Vec<(String, Array2<f64>)>;

fn bad(msg: impl Into<String>) -> Error {
    Error::WeightsFormat(msg.into())
}

fn write_container<C: Serialize>(
    mut w: impl Write,
    kind: &str,
    config: &C,
    vocab: &Vocab,
    params: &[(String, &Array2<f64>)],
) -> Result<()> {
    let tensors: Vec<TensorInfo> = params
        .iter()
        .map(|(name, p)| TensorInfo { name: name.clone(), rows: p.nrows(), cols: p.ncols() })
        .collect();
    let header = serde_json::to_vec(&HeaderRef { kind, config, vocab, tensors: &tensors })
        .expect("header serializes");
    let io = |e| Error::io("<weights writer>", e);
    w.write_all(&MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    for (_, p) in params {
        for v in p.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

fn read_container<C: for<'de> Deserialize<'de>>(
    mut r: impl Read,
    expect_kind: &str,
) -> Result<(C, Vocab, NamedTensors)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<weights reader>", e))?;
    if bytes.len() < 12 {
        return Err(bad("file too short for a weights container"));
    }
    if bytes[..4] != MAGIC {
        return Err(bad(format!("bad magic {:?}, expected \"DVCR\"", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = 12 + header_len;
    if bytes.len() < body {
        return Err(bad("truncated header"));
    }
    // Check the kind before the full parse so a mismatched model reports
    // itself as such rather than as a config field error.
    #[derive(Deserialize)]
    struct KindProbe {
        kind: String,
    }
    let probe: KindProbe = serde_json::from_slice(&bytes[12..body])
        .map_err(|e| bad(format!("malformed header: {e}")))?;
    if probe.kind != expect_kind {
        return Err(bad(format!(
            "file holds {:?} weights, expected {expect_kind:?}",
            probe.kind
        )));
    }
    let header: HeaderOwned<C> = serde_json::from_slice(&bytes[12..body])
        .map_err(|e| bad(format!("malformed header: {e}")))?;
    let mut offset = body;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n = t
            .rows
            .checked_mul(t.cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| bad(format!("tensor {:?} shape overflows", t.name)))?;
        let end = offset
            .checked_add(n)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad(format!("truncated tensor data for {:?}", t.name)))?;
        let values: Vec<f64> = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("tensor {:?} holds non-finite values", t.name)));
        }
        let arr = Array2::from_shape_vec((t.rows, t.cols), values)
            .map_err(|e| bad(format!("tensor {:?}: {e}", t.name)))?;
        tensors.push((t.name.clone(), arr));
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes after tensor data", bytes.len() - offset)));
    }
    Ok((header.config, header.vocab, tensors))
}

/// Moves the named tensors into a zero skeleton, demanding an exact match
/// between the file's tensor directory and the skeleton's parameter set.
fn fill(skeleton: &mut impl ParamSet, tensors: NamedTensors) -> Result<()> {
    let mut by_name: IndexMap<String, Array2<f64>> = IndexMap::with_capacity(tensors.len());
    for (name, t) in tensors {
        if by_name.insert(name.clone(), t).is_some() {
            return Err(bad(format!("duplicate tensor {name:?}")));
        }
    }
    for (name, p) in skeleton.params_mut() {
        let t = by_name
            .shift_remove(&name)
            .ok_or_else(|| bad(format!("missing tensor {name:?}")))?;
        if t.dim() != p.dim() {
            return Err(bad(format!(
                "tensor {name:?} has shape {:?} but the config implies {:?}",
                t.dim(),
                p.dim()
            )));
        }
        *p = t;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(bad(format!("unexpected tensor {extra:?}")));
    }
    Ok(())
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn save_ranker(w: &RankerWeights, path: impl AsRef<Path>) -> Result<()> {
    write_container(create(path.as_ref())?, "ranker", &w.cfg, &w.vocab, &w.params())
}

pub fn load_ranker(path: impl AsRef<Path>) -> Result<RankerWeights> {
    let (cfg, vocab, tensors) = read_container::<RankerConfig>(open(path.as_ref())?, "ranker")?;
    cfg.validate()?;
    let mut w = RankerWeights::zeros(cfg, vocab);
    fill(&mut w, tensors)?;
    Ok(w)
}

pub fn save_chooser(w: &ChooserWeights, path: impl AsRef<Path>) -> Result<()> {
    write_container(create(path.as_ref())?, "chooser", &w.enc.cfg, &w.enc.vocab, &w.params())
}

pub fn load_chooser(path: impl AsRef<Path>) -> Result<ChooserWeights> {
    let (cfg, vocab, tensors) =
        read_container::<TextEncoderConfig>(open(path.as_ref())?, "chooser")?;
    cfg.validate()?;
    let mut w = ChooserWeights::zeros(cfg, vocab);
    fill(&mut w, tensors)?;
    Ok(w)
}

pub fn save_op_head(w: &OpHead, path: impl AsRef<Path>) -> Result<()> {
    write_container(create(path.as_ref())?, "op_head", &w.enc.cfg, &w.enc.vocab, &w.params())
}

pub fn load_op_head(path: impl AsRef<Path>) -> Result<OpHead> {
    let (cfg, vocab, tensors) =
        read_container::<TextEncoderConfig>(open(path.as_ref())?, "op_head")?;
    cfg.validate()?;
    let mut w = OpHead::zeros(cfg, vocab);
    fill(&mut w, tensors)?;
    Ok(w)
}

/// Reads just the model kind from a container, for diagnostics.
pub fn peek_kind(path: impl AsRef<Path>) -> Result<String> {
    #[derive(Deserialize)]
    struct KindOnly {
        kind: String,
    }
    let mut bytes = vec![0u8; 12];
    let mut f = open(path.as_ref())?;
    f.read_exact(&mut bytes)
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
    if bytes[..4] != MAGIC {
        return Err(bad("bad magic, not a weights container"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut header = vec![0u8; header_len];
    f.read_exact(&mut header)
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
    let k: KindOnly =
        serde_json::from_slice(&header).map_err(|e| bad(format!("malformed header: {e}")))?;
    Ok(k.kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranker::vocab::build_vocab_from_strings;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_ranker() -> RankerWeights {
        let cfg = RankerConfig {
            d_model: 16,
            layers: 1,
            heads: 2,
            ffn: 32,
            max_seq: 64,
            m: 2,
            d_v: 8,
            d_h: 16,
            patch: 16,
        };
        let vocab = build_vocab_from_strings(["click the search button", "type city names"], 1);
        RankerWeights::init(&mut ChaCha8Rng::seed_from_u64(3), cfg, vocab)
    }

    fn small_text_cfg() -> TextEncoderConfig {
        TextEncoderConfig { d_model: 16, layers: 1, heads: 2, ffn: 32, max_seq: 64 }
    }

    #[test]
    fn ranker_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ranker.dvcr");
        let w = small_ranker();
        save_ranker(&w, &path).unwrap();
        let back = load_ranker(&path).unwrap();
        assert_eq!(w, back);
        assert_eq!(peek_kind(&path).unwrap(), "ranker");
    }

    #[test]
    fn chooser_and_op_head_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = build_vocab_from_strings(["pick an option"], 1);
        let chooser = ChooserWeights::init(
            &mut ChaCha8Rng::seed_from_u64(4),
            small_text_cfg(),
            vocab.clone(),
        );
        let cp = dir.path().join("chooser.dvcr");
        save_chooser(&chooser, &cp).unwrap();
        assert_eq!(load_chooser(&cp).unwrap(), chooser);

        let op = OpHead::init(&mut ChaCha8Rng::seed_from_u64(5), small_text_cfg(), vocab);
        let op_path = dir.path().join("op.dvcr");
        save_op_head(&op, &op_path).unwrap();
        assert_eq!(load_op_head(&op_path).unwrap(), op);
        assert_eq!(peek_kind(&op_path).unwrap(), "op_head");
    }

    #[test]
    fn writes_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let w = small_ranker();
        let (p1, p2) = (dir.path().join("a"), dir.path().join("b"));
        save_ranker(&w, &p1).unwrap();
        save_ranker(&w, &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chooser.dvcr");
        let vocab = build_vocab_from_strings(["pick"], 1);
        let chooser =
            ChooserWeights::init(&mut ChaCha8Rng::seed_from_u64(4), small_text_cfg(), vocab);
        save_chooser(&chooser, &path).unwrap();
        let err = load_ranker(&path).unwrap_err().to_string();
        assert!(err.contains("chooser") && err.contains("ranker"), "{err}");
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.dvcr");
        save_ranker(&small_ranker(), &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let check = |bytes: Vec<u8>, needle: &str| {
            std::fs::write(&path, bytes).unwrap();
            let err = load_ranker(&path).unwrap_err().to_string();
            assert!(err.contains(needle), "wanted {needle:?} in {err}");
        };
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        check(bad_magic, "magic");
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        check(bad_version, "version");
        check(good[..good.len() - 8].to_vec(), "truncated");
        let mut trailing = good.clone();
        trailing.push(0);
        check(trailing, "trailing");
    }

    #[test]
    fn shape_mismatch_against_config_is_rejected() {
        // A directory whose tensors come from a smaller model than the
        // config announces.
        let w = small_ranker();
        let mut tensors: Vec<(String, Array2<f64>)> =
            w.params().into_iter().map(|(n, p)| (n, p.clone())).collect();
        tensors[0].1 = Array2::zeros((1, 1));
        let mut skeleton = w.zeros_like();
        let err = fill(&mut skeleton, tensors).unwrap_err().to_string();
        assert!(err.contains("shape"), "{err}");

        let missing: Vec<(String, Array2<f64>)> =
            w.params().into_iter().skip(1).map(|(n, p)| (n, p.clone())).collect();
        let err = fill(&mut skeleton, missing).unwrap_err().to_string();
        assert!(err.contains("missing"), "{err}");
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.dvcr");
        let mut w = small_ranker();
        w.head_w[[0, 0]] = f64::NAN;
        save_ranker(&w, &path).unwrap();
        let err = load_ranker(&path).unwrap_err().to_string();
        assert!(err.contains("non-finite"), "{err}");
    }
}
