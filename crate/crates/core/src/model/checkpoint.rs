//! `ckpt-v1`: a little-endian weights blob plus a JSON manifest stored next
//! to it as `<blob>.json`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Network, NetworkConfig, Variant};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamStore};

pub const CKPT_FORMAT: &str = "ckpt-v1";
const MAGIC: &[u8; 8] = b"CHKPTv1\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub variant: Variant,
    pub base_width: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    pub gamut_hash: String,
    pub step: usize,
    pub network: NetworkConfig,
    pub weights_sha256: String,
    /// Free-form training configuration, kept for provenance and resume.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<serde_json::Value>,
}

pub fn manifest_path(blob: &Path) -> PathBuf {
    let mut s = blob.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, vs: &[f32]) {
    put_u32(buf, vs.len());
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode(store: &ParamStore, opt: Option<&Adam>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, store.len());
    for p in store.iter() {
        put_u32(&mut buf, p.name.len());
        buf.extend_from_slice(p.name.as_bytes());
        buf.push(p.trainable as u8);
        put_u32(&mut buf, p.shape.len());
        for &d in &p.shape {
            put_u32(&mut buf, d);
        }
        put_f32s(&mut buf, &p.value);
    }
    match opt {
        None => buf.push(0),
        Some(a) => {
            buf.push(1);
            buf.extend_from_slice(&a.t.to_le_bytes());
            for v in [a.config.beta1, a.config.beta2, a.config.eps] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for (m, v) in a.m.iter().zip(&a.v) {
                put_f32s(&mut buf, m);
                put_f32s(&mut buf, v);
            }
        }
    }
    buf
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| Error::Checkpoint("truncated weights blob".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.u32()?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("bad length".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn decode(data: &[u8]) -> Result<(ParamStore, Option<Adam>)> {
    let mut r = Reader { data, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a ckpt-v1 weights blob".into()));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let trainable = r.u8()? == 1;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let value = r.f32s()?;
        if shape.iter().product::<usize>() != value.len() {
            return Err(Error::Checkpoint(format!("tensor {name} has {} values for shape {shape:?}", value.len())));
        }
        store.add(&name, &shape, value, trainable);
    }
    let opt = match r.u8()? {
        0 => None,
        1 => {
            let t = r.u64()?;
            let config = AdamConfig { beta1: r.f32()?, beta2: r.f32()?, eps: r.f32()? };
            let mut m = Vec::with_capacity(count);
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                m.push(r.f32s()?);
                v.push(r.f32s()?);
            }
            Some(Adam { config, t, m, v })
        }
        other => return Err(Error::Checkpoint(format!("unknown optimizer section tag {other}"))),
    };
    if r.pos != data.len() {
        return Err(Error::Checkpoint("trailing bytes after weights".into()));
    }
    Ok((store, opt))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes the blob and its manifest; the optimizer state is included when
/// given so that training can resume exactly.
pub fn save_checkpoint(
    path: &Path,
    net: &Network,
    gamut_hash: &str,
    step: usize,
    optimizer: Option<&Adam>,
    train: Option<serde_json::Value>,
) -> Result<CheckpointManifest> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let blob = encode(&net.store, optimizer);
    let manifest = CheckpointManifest {
        format: CKPT_FORMAT.to_string(),
        variant: net.config.variant,
        base_width: net.config.base_width,
        q: net.config.q,
        gamut_hash: gamut_hash.to_string(),
        step,
        network: net.config.clone(),
        weights_sha256: hex::encode(Sha256::digest(&blob)),
        train,
    };
    write_atomic(path, &blob)?;
    write_atomic(&manifest_path(path), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointManifest, Option<Adam>)> {
    let mpath = manifest_path(path);
    let manifest: CheckpointManifest = serde_json::from_str(
        &std::fs::read_to_string(&mpath).map_err(|e| Error::Checkpoint(format!("cannot read manifest {}: {e}", mpath.display())))?,
    )?;
    if manifest.format != CKPT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown checkpoint format {:?}", manifest.format)));
    }
    if manifest.variant != manifest.network.variant || manifest.q != manifest.network.q || manifest.base_width != manifest.network.base_width {
        return Err(Error::Checkpoint("manifest summary fields disagree with the network config".into()));
    }
    let mut data = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open weights {}: {e}", path.display())))?
        .read_to_end(&mut data)?;
    if hex::encode(Sha256::digest(&data)) != manifest.weights_sha256 {
        return Err(Error::Checkpoint("weights blob does not match its manifest hash".into()));
    }
    let (store, opt) = decode(&data)?;
    let net = Network::from_store(manifest.network.clone(), store)?;
    if let Some(o) = &opt {
        let ok = o.m.len() == net.store.len()
            && net.store.iter().zip(o.m.iter().zip(&o.v)).all(|(p, (m, v))| {
                let n = if p.trainable { p.value.len() } else { 0 };
                m.len() == n && v.len() == n
            });
        if !ok {
            return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
        }
    }
    Ok((net, manifest, opt))
}
