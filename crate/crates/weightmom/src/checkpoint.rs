//! Binary checkpoint format.
//!
//! ```text
//! magic "WMOMCKPT" | version u32 | manifest_len u32 | manifest | payloads | crc32 u32
//! ```
//!
//! All integers and floats are little-endian. The manifest carries the run
//! metadata, optimizer hyper-parameters, the layer list and one entry per
//! stored array (name, dtype, shape). Payloads follow in manifest order:
//! `f64` arrays as raw 8-byte values, masks as packed 64-bit words. The
//! trailing CRC-32 covers every preceding byte.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use weightmom_core::magtrack::{MagnitudeHistory, MomentumMode};
use weightmom_core::netcore::{
    AdamConfig, LayerKind, LayerMoments, LrSchedule, Model, OptimizerState,
};
use weightmom_core::pruner::{MaskSet, SparsityMask};
use weightmom_core::train::{Method, TrainerState};
use weightmom_core::Tensor;

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"WMOMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64,
    Bits,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F64 => 1,
            DType::Bits => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F64 => "f64",
            DType::Bits => "bits",
        }
    }

    fn payload_bytes(self, elements: usize) -> usize {
        match self {
            DType::F64 => elements * 8,
            DType::Bits => elements.div_ceil(64) * 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl ManifestEntry {
    pub fn elements(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub method: Method,
    pub seed: u64,
    pub target_density: f64,
    pub state: TrainerState,
}

fn method_tag(m: Method) -> u8 {
    match m {
        Method::Dense => 0,
        Method::WeightMom => 1,
        Method::OneShot => 2,
        Method::Random => 3,
    }
}

fn method_from(tag: u8) -> Result<Method> {
    Ok(match tag {
        0 => Method::Dense,
        1 => Method::WeightMom,
        2 => Method::OneShot,
        3 => Method::Random,
        t => return Err(Error::Checkpoint(format!("unknown method tag {t}"))),
    })
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend(v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend(s.as_bytes());
    }
    fn dims(&mut self, d: &[usize]) {
        self.u32(d.len() as u32);
        for &x in d {
            self.usize(x);
        }
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated at byte offset {}: need {n} more bytes",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 name".into()))
    }
    fn dims(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        if n > 16 {
            return Err(Error::Checkpoint(format!("implausible rank {n}")));
        }
        (0..n).map(|_| self.usize()).collect()
    }
}

fn put_kind(e: &mut Enc, k: &LayerKind) {
    let (tag, a, b, c, d, f) = match *k {
        LayerKind::Linear {
            in_features,
            out_features,
        } => (1, in_features, out_features, 0, 0, 0),
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => (2, in_channels, out_channels, kernel, stride, padding),
        LayerKind::Relu => (3, 0, 0, 0, 0, 0),
        LayerKind::Flatten => (4, 0, 0, 0, 0, 0),
    };
    e.u8(tag);
    for v in [a, b, c, d, f] {
        e.usize(v);
    }
}

fn get_kind(d: &mut Dec) -> Result<LayerKind> {
    let tag = d.u8()?;
    let v: Vec<usize> = (0..5).map(|_| d.usize()).collect::<Result<_>>()?;
    Ok(match tag {
        1 => LayerKind::Linear {
            in_features: v[0],
            out_features: v[1],
        },
        2 => LayerKind::Conv2d {
            in_channels: v[0],
            out_channels: v[1],
            kernel: v[2],
            stride: v[3],
            padding: v[4],
        },
        3 => LayerKind::Relu,
        4 => LayerKind::Flatten,
        t => return Err(Error::Checkpoint(format!("unknown layer tag {t}"))),
    })
}

enum Payload<'a> {
    F64(&'a [f64]),
    Bits(&'a SparsityMask),
}

fn push_f64<'a>(
    arrays: &mut Vec<(ManifestEntry, Payload<'a>)>,
    name: String,
    shape: Vec<usize>,
    data: &'a [f64],
) {
    arrays.push((
        ManifestEntry {
            name,
            dtype: DType::F64,
            shape,
        },
        Payload::F64(data),
    ));
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let st = &ck.state;
    let mut arrays: Vec<(ManifestEntry, Payload)> = Vec::new();
    for layer in st.model.layers() {
        if let (Some(w), Some(b)) = (&layer.weight, &layer.bias) {
            let name = format!("layer{}.{}", layer.index, layer.kind.name());
            push_f64(
                &mut arrays,
                format!("{name}.weight"),
                w.shape().to_vec(),
                w.data(),
            );
            push_f64(
                &mut arrays,
                format!("{name}.bias"),
                b.shape().to_vec(),
                b.data(),
            );
        }
    }
    for (pos, m) in st.masks.masks().iter().enumerate() {
        arrays.push((
            ManifestEntry {
                name: format!("mask{}", pos + 1),
                dtype: DType::Bits,
                shape: vec![m.len()],
            },
            Payload::Bits(m),
        ));
    }
    for (pos, mom) in st.optimizer.moments.iter().enumerate() {
        for (field, data) in [
            ("m_weight", &mom.m_weight),
            ("v_weight", &mom.v_weight),
            ("m_bias", &mom.m_bias),
            ("v_bias", &mom.v_bias),
        ] {
            push_f64(
                &mut arrays,
                format!("adam{}.{field}", pos + 1),
                vec![data.len()],
                data,
            );
        }
    }
    let hist = st.history.as_ref().map(|h| (h, h.raw_parts()));
    if let Some((h, (ring, _, _, ema))) = &hist {
        push_f64(
            &mut arrays,
            "history.ring".into(),
            vec![h.window(), h.tracked()],
            ring,
        );
        if let Some(ema) = ema {
            push_f64(&mut arrays, "history.ema".into(), vec![h.tracked()], ema);
        }
    }

    let mut m = Enc::default();
    m.u8(method_tag(ck.method));
    m.u64(ck.seed);
    m.f64(ck.target_density);
    m.usize(st.next_epoch);
    let adam = &st.optimizer.config;
    m.f64(adam.schedule.base_lr);
    m.f64(adam.schedule.decay);
    m.usize(adam.schedule.interval);
    m.f64(adam.beta1);
    m.f64(adam.beta2);
    m.f64(adam.eps);
    m.u64(st.optimizer.step);
    m.dims(st.model.input_shape());
    m.u32(st.model.layers().len() as u32);
    for l in st.model.layers() {
        put_kind(&mut m, &l.kind);
    }
    match &hist {
        None => m.u8(0),
        Some((h, (_, head, recorded, _))) => {
            m.u8(1);
            m.usize(h.window());
            m.dims(h.layer_sizes());
            match h.mode() {
                MomentumMode::Window => {
                    m.u8(0);
                    m.f64(0.0);
                }
                MomentumMode::Ema { coefficient } => {
                    m.u8(1);
                    m.f64(coefficient);
                }
            }
            m.usize(*head);
            m.usize(*recorded);
        }
    }
    m.u32(arrays.len() as u32);
    for (entry, _) in &arrays {
        m.str(&entry.name);
        m.u8(entry.dtype.tag());
        m.dims(&entry.shape);
    }

    let mut out = Enc::default();
    out.0.extend(MAGIC);
    out.u32(FORMAT_VERSION);
    out.u32(m.0.len() as u32);
    out.0.extend(&m.0);
    for (_, payload) in &arrays {
        match payload {
            Payload::F64(d) => d.iter().for_each(|&v| out.f64(v)),
            Payload::Bits(mask) => mask.words().iter().for_each(|&w| out.u64(w)),
        }
    }
    let crc = crc32fast::hash(&out.0);
    out.u32(crc);
    out.0
}

/// Header information readable without rebuilding the run state.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub version: u32,
    pub method: Method,
    pub seed: u64,
    pub target_density: f64,
    pub next_epoch: usize,
    pub optimizer_step: u64,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerKind>,
    pub history_epochs: Option<usize>,
    pub manifest: Vec<ManifestEntry>,
}

type HistoryMeta = (usize, Vec<usize>, MomentumMode, usize, usize);

struct Parsed {
    info: CheckpointInfo,
    adam: AdamConfig,
    history_meta: Option<HistoryMeta>,
    arrays: BTreeMap<String, (ManifestEntry, Vec<u8>)>,
}

fn parse(bytes: &[u8]) -> Result<Parsed> {
    if bytes.len() < MAGIC.len() + 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(
            "not a weightmom checkpoint (bad magic)".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut d = Dec { buf: body, pos: 12 };
    let manifest_len = d.u32()? as usize;
    let manifest_end = d.pos + manifest_len;
    let method = method_from(d.u8()?)?;
    let seed = d.u64()?;
    let target_density = d.f64()?;
    let next_epoch = d.usize()?;
    let adam = AdamConfig {
        schedule: LrSchedule {
            base_lr: d.f64()?,
            decay: d.f64()?,
            interval: d.usize()?,
        },
        beta1: d.f64()?,
        beta2: d.f64()?,
        eps: d.f64()?,
    };
    let optimizer_step = d.u64()?;
    let input_shape = d.dims()?;
    let n_layers = d.u32()? as usize;
    let layers = (0..n_layers)
        .map(|_| get_kind(&mut d))
        .collect::<Result<Vec<_>>>()?;
    let history_meta = match d.u8()? {
        0 => None,
        1 => {
            let window = d.usize()?;
            let sizes = d.dims()?;
            let mode = match (d.u8()?, d.f64()?) {
                (0, _) => MomentumMode::Window,
                (1, c) => MomentumMode::Ema { coefficient: c },
                (t, _) => return Err(Error::Checkpoint(format!("unknown momentum mode {t}"))),
            };
            let head = d.usize()?;
            let recorded = d.usize()?;
            Some((window, sizes, mode, head, recorded))
        }
        t => return Err(Error::Checkpoint(format!("bad history flag {t}"))),
    };
    let n_arrays = d.u32()? as usize;
    let mut manifest = Vec::with_capacity(n_arrays);
    for _ in 0..n_arrays {
        let name = d.str()?;
        let dtype = match d.u8()? {
            1 => DType::F64,
            2 => DType::Bits,
            t => {
                return Err(Error::Checkpoint(format!(
                    "unknown dtype tag {t} for {name}"
                )))
            }
        };
        let shape = d.dims()?;
        manifest.push(ManifestEntry { name, dtype, shape });
    }
    if d.pos != manifest_end {
        return Err(Error::Checkpoint(
            "manifest length does not match its contents".into(),
        ));
    }
    let mut arrays = BTreeMap::new();
    for e in &manifest {
        let raw = d.take(e.dtype.payload_bytes(e.elements()))?.to_vec();
        arrays.insert(e.name.clone(), (e.clone(), raw));
    }
    if d.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after payloads",
            body.len() - d.pos
        )));
    }
    Ok(Parsed {
        info: CheckpointInfo {
            version,
            method,
            seed,
            target_density,
            next_epoch,
            optimizer_step,
            input_shape,
            layers,
            history_epochs: history_meta.as_ref().map(|m| m.4),
            manifest,
        },
        adam,
        history_meta,
        arrays,
    })
}

fn f64s(raw: &[u8]) -> Vec<f64> {
    raw.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
        .collect()
}

impl Parsed {
    fn take_f64(&mut self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let (e, raw) = self
            .arrays
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
        if e.dtype != DType::F64 {
            return Err(Error::Checkpoint(format!("{name} is not f64")));
        }
        Ok((e.shape, f64s(&raw)))
    }

    fn into_checkpoint(mut self) -> Result<Checkpoint> {
        let info = self.info.clone();
        let mut params = Vec::new();
        for (i, kind) in info.layers.iter().enumerate() {
            if kind.has_params() {
                let name = format!("layer{}.{}", i + 1, kind.name());
                let (ws, w) = self.take_f64(&format!("{name}.weight"))?;
                let (bs, b) = self.take_f64(&format!("{name}.bias"))?;
                params.push((Tensor::new(ws, w)?, Tensor::new(bs, b)?));
            }
        }
        let model = Model::from_params(info.input_shape.clone(), &info.layers, params)?;
        let sizes = model.prunable_sizes();

        let mut masks = Vec::new();
        for pos in 0..sizes.len() {
            let name = format!("mask{}", pos + 1);
            let (e, raw) = self
                .arrays
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))?;
            let words = raw
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().expect("8")))
                .collect();
            masks.push(SparsityMask::from_words(e.elements(), words)?);
        }
        let masks = MaskSet::from_masks(masks);
        masks.check(&model)?;

        let mut moments = Vec::new();
        for pos in 0..sizes.len() {
            let mut get = |f: &str| {
                self.take_f64(&format!("adam{}.{f}", pos + 1))
                    .map(|(_, d)| d)
            };
            moments.push(LayerMoments {
                m_weight: get("m_weight")?,
                v_weight: get("v_weight")?,
                m_bias: get("m_bias")?,
                v_bias: get("v_bias")?,
            });
        }
        let mut optimizer = OptimizerState::new(self.adam, &model);
        for (have, want) in moments.iter().zip(&optimizer.moments) {
            if have.m_weight.len() != want.m_weight.len() || have.m_bias.len() != want.m_bias.len()
            {
                return Err(Error::Checkpoint(
                    "optimizer moments do not match the model".into(),
                ));
            }
        }
        optimizer.moments = moments;
        optimizer.step = info.optimizer_step;

        let history = match self.history_meta.take() {
            None => None,
            Some((window, sizes, mode, head, recorded)) => {
                let (_, ring) = self.take_f64("history.ring")?;
                let ema = match mode {
                    MomentumMode::Window => None,
                    MomentumMode::Ema { .. } => Some(self.take_f64("history.ema")?.1),
                };
                Some(MagnitudeHistory::from_raw_parts(
                    window, sizes, mode, ring, head, recorded, ema,
                )?)
            }
        };
        if let Some(extra) = self.arrays.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected array {extra}")));
        }
        Ok(Checkpoint {
            method: info.method,
            seed: info.seed,
            target_density: info.target_density,
            state: TrainerState {
                model,
                masks,
                history,
                optimizer,
                next_epoch: info.next_epoch,
            },
        })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    parse(bytes)?.into_checkpoint()
}

pub fn inspect(bytes: &[u8]) -> Result<CheckpointInfo> {
    Ok(parse(bytes)?.info)
}

/// Writes atomically: the previous checkpoint at `path` survives a failed write.
pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ck);
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use weightmom_core::netcore::Model;

    fn sample() -> Checkpoint {
        let mut model = Model::mlp(vec![5], &[7], 3, 2).unwrap();
        let mut first = SparsityMask::ones(35);
        for i in [0, 9, 34] {
            first.prune(i);
        }
        let masks = MaskSet::from_masks(vec![first, SparsityMask::ones(21)]);
        masks.apply(&mut model).unwrap();
        let mut history =
            MagnitudeHistory::for_model(3, &model, MomentumMode::Ema { coefficient: 0.9 }).unwrap();
        history.record_epoch(&model).unwrap();
        let mut optimizer = OptimizerState::new(AdamConfig::default(), &model);
        optimizer.step = 12;
        optimizer.moments[0].v_weight[3] = 0.125;
        Checkpoint {
            method: Method::WeightMom,
            seed: 9,
            target_density: 0.05,
            state: TrainerState {
                model,
                masks,
                history: Some(history),
                optimizer,
                next_epoch: 4,
            },
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let ck = sample();
        let back = decode(&encode(&ck)).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn corrupt_payload_fails_checksum() {
        let mut bytes = encode(&sample());
        let i = bytes.len() - 40;
        bytes[i] ^= 0x01;
        let msg = decode(&bytes).unwrap_err().to_string();
        assert!(msg.contains("checksum"), "{msg}");
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let mut bytes = encode(&sample());
        bytes[8] = 2;
        let msg = decode(&bytes).unwrap_err().to_string();
        assert!(msg.contains("version 2"), "{msg}");
    }

    #[test]
    fn manifest_lists_names_shapes_dtypes() {
        let info = inspect(&encode(&sample())).unwrap();
        let names: Vec<&str> = info.manifest.iter().map(|e| e.name.as_str()).collect();
        assert!(names.contains(&"layer1.linear.weight"));
        assert!(names.contains(&"mask2"));
        assert!(names.contains(&"history.ema"));
        let w = &info.manifest[0];
        assert_eq!((w.dtype, w.shape.clone()), (DType::F64, vec![7, 5]));
        assert_eq!(info.history_epochs, Some(1));
    }
}
