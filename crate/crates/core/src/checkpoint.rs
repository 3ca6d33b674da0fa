//! Binary checkpoint container (little-endian):
//!
//! ```text
//! "MATN" | version u32 = 1
//! | d, H, M, N, L, I, J, target_index, activation_code   (u32 each)
//! | tensor_count u32
//! | per tensor: name_len u16, name (UTF-8), rank u8, dims (u64 × rank), payload (f64, row-major)
//! | CRC32 of every byte after the magic
//! ```
//!
//! Besides the model arrays, two metadata tensors are stored: `train_config`
//! (every [`TrainConfig`] field; the seed is kept bit-exact through
//! `f64::from_bits`) and `data_meta` (kept behavior indices and digests of
//! the user/item id lists). The BiasMF baseline writes activation code 0 and
//! `H = M = N = 0` in the config block.

use std::fs;
use std::path::Path;

use crate::biasmf::BiasMFParams;
use crate::config::{Ablation, Activation, NegativeRule, TrainConfig};
use crate::data::InteractionTensor;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelShape};
use crate::params::Parameters;

pub const MAGIC: [u8; 4] = *b"MATN";
pub const FORMAT_VERSION: u32 = 1;
/// Activation code recorded for the BiasMF baseline.
pub const BIASMF_CODE: u32 = 0;

const CONFIG_TENSOR: &str = "train_config";
const META_TENSOR: &str = "data_meta";

#[derive(Clone, Debug, PartialEq)]
pub enum ModelWeights {
    Matn(ModelParams),
    BiasMF(BiasMFParams),
}

/// Facts about the training data a checkpoint was fitted to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataMeta {
    pub num_users: usize,
    pub num_items: usize,
    /// Behavior count seen by the model (after any subset).
    pub num_behaviors: usize,
    /// Target index within the model's behaviors.
    pub target_index: usize,
    /// Indices into the source schema of the behaviors the model was trained on.
    pub kept_behaviors: Vec<usize>,
    pub user_digest: u32,
    pub item_digest: u32,
}

impl DataMeta {
    /// `tensor` is the (possibly subset) training tensor; `kept` indexes the
    /// behaviors of the source schema it was built from.
    pub fn describe(tensor: &InteractionTensor, kept: &[usize]) -> Self {
        DataMeta {
            num_users: tensor.num_users(),
            num_items: tensor.num_items(),
            num_behaviors: tensor.num_behaviors(),
            target_index: tensor.target(),
            kept_behaviors: kept.to_vec(),
            user_digest: id_digest(tensor.user_ids()),
            item_digest: id_digest(tensor.item_ids()),
        }
    }

    /// Checks that `tensor` (the source data, before subsetting) matches.
    pub fn check_source(&self, tensor: &InteractionTensor) -> Result<()> {
        let mismatch = |what: &str, ckpt: usize, data: usize| {
            Err(Error::Consistency(format!(
                "{what} mismatch: checkpoint has {ckpt}, data has {data}"
            )))
        };
        if self.num_users != tensor.num_users() {
            return mismatch("user count I", self.num_users, tensor.num_users());
        }
        if self.num_items != tensor.num_items() {
            return mismatch("item count J", self.num_items, tensor.num_items());
        }
        if let Some(&b) = self.kept_behaviors.iter().find(|&&b| b >= tensor.num_behaviors()) {
            return mismatch("behavior count L", b + 1, tensor.num_behaviors());
        }
        if self.kept_behaviors.len() != self.num_behaviors {
            return mismatch("behavior count L", self.num_behaviors, self.kept_behaviors.len());
        }
        let source_target = self.kept_behaviors.get(self.target_index).copied();
        if source_target != Some(tensor.target()) {
            return mismatch(
                "target behavior index",
                source_target.unwrap_or(usize::MAX),
                tensor.target(),
            );
        }
        if self.user_digest != id_digest(tensor.user_ids()) {
            return Err(Error::Consistency("user id lists differ".into()));
        }
        if self.item_digest != id_digest(tensor.item_ids()) {
            return Err(Error::Consistency("item id lists differ".into()));
        }
        Ok(())
    }
}

/// CRC32 over NUL-separated ids.
pub fn id_digest(ids: &[String]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(&[0]);
    }
    h.finalize()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub meta: DataMeta,
    pub weights: ModelWeights,
}

impl Checkpoint {
    pub fn matn(&self) -> Option<&ModelParams> {
        match &self.weights {
            ModelWeights::Matn(p) => Some(p),
            ModelWeights::BiasMF(_) => None,
        }
    }

    pub fn biasmf(&self) -> Option<&BiasMFParams> {
        match &self.weights {
            ModelWeights::BiasMF(p) => Some(p),
            ModelWeights::Matn(_) => None,
        }
    }
}

fn config_values(c: &TrainConfig) -> Vec<f64> {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    vec![
        c.dim as f64,
        c.heads as f64,
        c.memories as f64,
        c.ff_depth as f64,
        c.samples as f64,
        c.lr,
        c.lr_decay,
        c.reg,
        c.batch_size as f64,
        c.epochs as f64,
        c.activation.code() as f64,
        f64::from_bits(c.seed),
        flag(c.ablation.disable_transformer),
        flag(c.ablation.disable_memory),
        flag(c.ablation.mean_pool_gate),
        flag(c.raw_attn_weights),
        flag(c.mean_project),
        c.train_negatives.code() as f64,
    ]
}

fn config_from_values(v: &[f64]) -> Result<TrainConfig> {
    if v.len() != 18 {
        return Err(Error::Format(format!(
            "train_config has {} values, expected 18",
            v.len()
        )));
    }
    let count = |x: f64| -> Result<usize> {
        if x >= 0.0 && x.fract() == 0.0 && x < 1e15 {
            Ok(x as usize)
        } else {
            Err(Error::Format(format!("invalid count {x} in train_config")))
        }
    };
    let flag = |x: f64| x != 0.0;
    Ok(TrainConfig {
        dim: count(v[0])?,
        heads: count(v[1])?,
        memories: count(v[2])?,
        ff_depth: count(v[3])?,
        samples: count(v[4])?,
        lr: v[5],
        lr_decay: v[6],
        reg: v[7],
        batch_size: count(v[8])?,
        epochs: count(v[9])?,
        activation: Activation::from_code(count(v[10])? as u32)
            .ok_or_else(|| Error::Format("unknown activation code".into()))?,
        seed: v[11].to_bits(),
        ablation: Ablation {
            disable_transformer: flag(v[12]),
            disable_memory: flag(v[13]),
            mean_pool_gate: flag(v[14]),
        },
        raw_attn_weights: flag(v[15]),
        mean_project: flag(v[16]),
        train_negatives: NegativeRule::from_code(count(v[17])? as u32)
            .ok_or_else(|| Error::Format("unknown negative rule code".into()))?,
    })
}

fn meta_values(m: &DataMeta) -> Vec<f64> {
    let mut v = vec![m.user_digest as f64, m.item_digest as f64];
    v.extend(m.kept_behaviors.iter().map(|&b| b as f64));
    v
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, name: &str, dims: &[usize], data: &[f64]) {
        self.u16(name.len() as u16);
        self.buf.extend_from_slice(name.as_bytes());
        self.u8(dims.len() as u8);
        for &d in dims {
            self.u64(d as u64);
        }
        for &x in data {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn u32_field(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit in u32")))
}

/// Serializes a checkpoint to bytes.
pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(&MAGIC);
    w.u32(FORMAT_VERSION);
    let m = &ckpt.meta;
    let (heads, memories, depth, activation, dim, slots) = match &ckpt.weights {
        ModelWeights::Matn(p) => {
            let s = p.shape();
            (
                s.heads,
                s.memories,
                s.ff_depth,
                ckpt.config.activation.code(),
                s.dim,
                p.slots(),
            )
        }
        ModelWeights::BiasMF(p) => (0, 0, 0, BIASMF_CODE, p.dim(), p.slots()),
    };
    for (v, what) in [
        (dim, "d"),
        (heads, "H"),
        (memories, "M"),
        (depth, "N"),
        (m.num_behaviors, "L"),
        (m.num_users, "I"),
        (m.num_items, "J"),
        (m.target_index, "target index"),
    ] {
        w.u32(u32_field(v, what)?);
    }
    w.u32(activation);
    w.u32(u32_field(slots.len() + 2, "tensor count")?);
    let cfg = config_values(&ckpt.config);
    w.tensor(CONFIG_TENSOR, &[cfg.len()], &cfg);
    let meta = meta_values(m);
    w.tensor(META_TENSOR, &[meta.len()], &meta);
    for s in &slots {
        if s.name.len() > u16::MAX as usize || s.dims.len() > u8::MAX as usize {
            return Err(Error::Format(format!("tensor {} cannot be encoded", s.name)));
        }
        w.tensor(&s.name, &s.dims, s.data);
    }
    let crc = crc32fast::hash(&w.buf[MAGIC.len()..]);
    w.u32(crc);
    Ok(w.buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

struct RawTensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn read_tensor(r: &mut Reader<'_>) -> Result<RawTensor> {
    let len = r.u16()? as usize;
    let name = std::str::from_utf8(r.take(len)?)
        .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
        .to_string();
    let rank = r.u8()? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(usize::try_from(r.u64()?).map_err(|_| Error::Corrupt("dimension overflow".into()))?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(8).map(|_| n))
        .ok_or_else(|| Error::Corrupt(format!("tensor {name} is too large")))?;
    let bytes = r.take(count * 8)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(RawTensor { name, dims, data })
}

/// Parses bytes written by [`encode`]. Nothing is returned unless the whole
/// file parses and its checksum matches.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    if bytes.len() < MAGIC.len() + 4 + 4 {
        return Err(Error::Corrupt("file too short".into()));
    }
    let body_end = bytes.len() - 4;
    let stored_crc = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
    if crc32fast::hash(&bytes[MAGIC.len()..body_end]) != stored_crc {
        return Err(Error::Corrupt("checksum mismatch (truncated or damaged file)".into()));
    }
    let mut r = Reader {
        buf: &bytes[..body_end],
        pos: r.pos,
    };
    let mut block = [0usize; 9];
    for v in block.iter_mut() {
        *v = r.u32()? as usize;
    }
    let [dim, heads, memories, depth, behaviors, users, items, target, activation] = block;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        tensors.push(read_tensor(&mut r)?);
    }
    if r.pos != body_end {
        return Err(Error::Corrupt("trailing bytes after the last tensor".into()));
    }

    let mut tensors = tensors.into_iter();
    let cfg = tensors
        .next()
        .filter(|t| t.name == CONFIG_TENSOR)
        .ok_or_else(|| Error::Format("missing train_config tensor".into()))?;
    let config = config_from_values(&cfg.data)?;
    let meta_raw = tensors
        .next()
        .filter(|t| t.name == META_TENSOR && t.data.len() >= 2)
        .ok_or_else(|| Error::Format("missing data_meta tensor".into()))?;
    let meta = DataMeta {
        num_users: users,
        num_items: items,
        num_behaviors: behaviors,
        target_index: target,
        user_digest: meta_raw.data[0] as u32,
        item_digest: meta_raw.data[1] as u32,
        kept_behaviors: meta_raw.data[2..].iter().map(|&b| b as usize).collect(),
    };

    let activation = activation as u32;
    let weights = if activation == BIASMF_CODE {
        let mut p = BiasMFParams::zeros(users, items, dim);
        fill_slots(&mut p, tensors)?;
        ModelWeights::BiasMF(p)
    } else {
        if Activation::from_code(activation).is_none() {
            return Err(Error::Format(format!("unknown activation code {activation}")));
        }
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Format(format!("invalid head count {heads} for d = {dim}")));
        }
        let shape = ModelShape {
            dim,
            heads,
            memories,
            ff_depth: depth,
            behaviors,
            items,
        };
        let mut p = ModelParams::zeros(shape);
        fill_slots(&mut p, tensors)?;
        ModelWeights::Matn(p)
    };
    Ok(Checkpoint { config, meta, weights })
}

fn fill_slots<P: Parameters>(params: &mut P, tensors: impl Iterator<Item = RawTensor>) -> Result<()> {
    let tensors: Vec<RawTensor> = tensors.collect();
    let mut slots = params.slots_mut();
    if tensors.len() != slots.len() {
        return Err(Error::Format(format!(
            "{} parameter tensors, expected {}",
            tensors.len(),
            slots.len()
        )));
    }
    for (slot, t) in slots.iter_mut().zip(tensors) {
        if slot.name != t.name || slot.dims != t.dims {
            return Err(Error::Format(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                t.name, t.dims, slot.name, slot.dims
            )));
        }
        slot.data.copy_from_slice(&t.data);
    }
    Ok(())
}

/// Writes atomically: a temporary sibling file is renamed over `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode(ckpt)?;
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample() -> Checkpoint {
        let config = TrainConfig {
            dim: 4,
            heads: 2,
            memories: 3,
            ff_depth: 2,
            seed: u64::MAX - 12345,
            ..Default::default()
        };
        let params = ModelParams::init(&config, 3, 7, &mut Rng::new(8)).unwrap();
        Checkpoint {
            config,
            meta: DataMeta {
                num_users: 5,
                num_items: 7,
                num_behaviors: 3,
                target_index: 2,
                kept_behaviors: vec![0, 1, 3],
                user_digest: 0xDEAD_BEEF,
                item_digest: 42,
            },
            weights: ModelWeights::Matn(params),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample();
        let bytes = encode(&ckpt).unwrap();
        assert_eq!(&bytes[..4], b"MATN");
        let back = decode(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn biasmf_round_trip() {
        let p = BiasMFParams::init(5, 7, 4, &mut Rng::new(1));
        let ckpt = Checkpoint {
            weights: ModelWeights::BiasMF(p),
            ..sample()
        };
        let back = decode(&encode(&ckpt).unwrap()).unwrap();
        assert_eq!(back, ckpt);
        assert!(back.biasmf().is_some());
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_version_is_a_format_error() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_is_corruption() {
        let bytes = encode(&sample()).unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 12, 9] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Corrupt(_))), "cut at {cut}");
        }
    }

    #[test]
    fn flipped_payload_bit_is_corruption() {
        let mut bytes = encode(&sample()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(decode(&bytes), Err(Error::Corrupt(_))));
    }
}
