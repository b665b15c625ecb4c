//! Checkpoint files: every parameter tensor and batch-norm running statistic
//! plus the model configuration and an epoch counter, in a little-endian
//! binary layout. A round trip is bit-exact, and the embedded config is
//! sufficient to rebuild the graph without any side channel.
//!
//! Layout: magic "CCDN1", format version u32, epoch u32, config text
//! (u32 length + UTF-8 `key=value` lines), tensor count u32, then per tensor
//! a name (u32 length + bytes), rank u32, dims u32 each, and f64 data.
//! Batch-norm statistics ride in the same stream under
//! `<state>.running_mean` / `<state>.running_var` names.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::tensor::Tensor;

const MAGIC: &[u8; 5] = b"CCDN1";
const VERSION: u32 = 1;

fn err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), detail: detail.into() }
}

fn config_text(c: &ModelConfig) -> String {
    format!(
        "stacks={}\nchannels={}\nexcitations={}\ninput_size={}\nlandmarks={}\nvariant={}\nns_iters={}\ndeconv_k={}\n",
        c.stacks, c.channels, c.excitations, c.input_size, c.landmarks, c.variant, c.ns_iters,
        c.deconv_k
    )
}

fn parse_config(path: &Path, text: &str) -> Result<ModelConfig> {
    let mut c = ModelConfig::default();
    let mut seen = 0;
    for line in text.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(path, format!("malformed config line '{line}'")))?;
        let int = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| err(path, format!("bad value for {key}: '{v}'")))
        };
        match key {
            "stacks" => c.stacks = int(value)?,
            "channels" => c.channels = int(value)?,
            "excitations" => c.excitations = int(value)?,
            "input_size" => c.input_size = int(value)?,
            "landmarks" => c.landmarks = int(value)?,
            "variant" => c.variant = Variant::from_str(value)?,
            "ns_iters" => c.ns_iters = int(value)?,
            "deconv_k" => c.deconv_k = int(value)?,
            other => return Err(err(path, format!("unknown config key '{other}'"))),
        }
        seen += 1;
    }
    if seen != 8 {
        return Err(err(path, format!("config echo has {seen} of 8 keys")));
    }
    Ok(c)
}

pub fn save_checkpoint(model: &Model, path: &Path, epoch: u32) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&epoch.to_le_bytes());
    let cfg = config_text(&model.config);
    bytes.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    bytes.extend_from_slice(cfg.as_bytes());

    let mut entries: Vec<(String, Tensor)> = model
        .store
        .iter()
        .map(|(name, t, _)| (name.to_string(), t.clone()))
        .collect();
    for (name, state) in model.bns.iter() {
        entries.push((format!("{name}.running_mean"), state.mean.clone()));
        entries.push((format!("{name}.running_var"), state.var.clone()));
    }
    bytes.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in &entries {
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
        for &d in t.dims() {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Parsed but not yet applied checkpoint contents.
#[derive(Debug)]
pub struct CheckpointData {
    pub config: ModelConfig,
    pub epoch: u32,
    pub tensors: Vec<(String, Tensor)>,
}

fn take<'a>(bytes: &'a [u8], path: &Path, pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).ok_or_else(|| err(path, "header length overflows"))?;
    let s = bytes.get(*pos..end).ok_or_else(|| err(path, "truncated file"))?;
    *pos = end;
    Ok(s)
}

fn take_u32(bytes: &[u8], path: &Path, pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, path, pos, 4)?.try_into().unwrap()))
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;

    if take(&bytes, path, &mut pos, 5)? != MAGIC {
        return Err(err(path, "bad magic (not a checkpoint)"));
    }
    let version = take_u32(&bytes, path, &mut pos)?;
    if version != VERSION {
        return Err(err(path, format!("unsupported format version {version}")));
    }
    let epoch = take_u32(&bytes, path, &mut pos)?;
    let cfg_len = take_u32(&bytes, path, &mut pos)? as usize;
    let cfg_text = std::str::from_utf8(take(&bytes, path, &mut pos, cfg_len)?)
        .map_err(|_| err(path, "config echo is not UTF-8"))?
        .to_string();
    let config = parse_config(path, &cfg_text)?;

    let count = take_u32(&bytes, path, &mut pos)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = take_u32(&bytes, path, &mut pos)? as usize;
        let name = std::str::from_utf8(take(&bytes, path, &mut pos, name_len)?)
            .map_err(|_| err(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = take_u32(&bytes, path, &mut pos)? as usize;
        if rank > 8 {
            return Err(err(path, format!("implausible rank {rank} for '{name}'")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(take_u32(&bytes, path, &mut pos)? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| err(path, format!("dims of '{name}' overflow")))?;
        let raw = take(&bytes, path, &mut pos, n)?;
        let data: Vec<f64> =
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((
            name.clone(),
            Tensor::new(&dims, data)
                .map_err(|e| err(path, format!("tensor '{name}': {e}")))?,
        ));
    }
    if pos != bytes.len() {
        return Err(err(path, format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(CheckpointData { config, epoch, tensors })
}

/// Writes checkpoint tensors into an existing model. Validates every name
/// and shape before touching any state, so a mismatch leaves the model
/// unchanged; the error names the offending tensor.
pub fn apply(model: &mut Model, data: &CheckpointData) -> Result<()> {
    let mut planned = Vec::with_capacity(data.tensors.len());
    let mut seen_params = 0usize;
    let mut seen_stats = 0usize;
    for (name, tensor) in &data.tensors {
        if let Some(id) = model.store.id(name) {
            if model.store.value(id).dims() != tensor.dims() {
                return Err(Error::Config(format!(
                    "tensor '{name}': checkpoint dims {:?} do not match model dims {:?}",
                    tensor.dims(),
                    model.store.value(id).dims()
                )));
            }
            planned.push((name.clone(), tensor.clone()));
            seen_params += 1;
        } else if let Some((state_name, field)) = name
            .rsplit_once('.')
            .filter(|(_, f)| *f == "running_mean" || *f == "running_var")
        {
            let id = model.bns.id(state_name).ok_or_else(|| {
                Error::Config(format!("tensor '{name}': no such batch-norm state"))
            })?;
            let current = if field == "running_mean" {
                &model.bns.get(id).mean
            } else {
                &model.bns.get(id).var
            };
            if current.dims() != tensor.dims() {
                return Err(Error::Config(format!(
                    "tensor '{name}': checkpoint dims {:?} do not match model dims {:?}",
                    tensor.dims(),
                    current.dims()
                )));
            }
            planned.push((name.clone(), tensor.clone()));
            seen_stats += 1;
        } else {
            return Err(Error::Config(format!("tensor '{name}': not part of this model")));
        }
    }
    if seen_params != model.store.len() || seen_stats != 2 * model.bns.len() {
        return Err(Error::Config(format!(
            "checkpoint covers {seen_params}/{} parameters and {seen_stats}/{} statistics",
            model.store.len(),
            2 * model.bns.len()
        )));
    }
    for (name, tensor) in planned {
        if let Some(id) = model.store.id(&name) {
            model.store.set_value(id, tensor)?;
        } else {
            let (state_name, field) = name.rsplit_once('.').expect("validated above");
            let id = model.bns.id(state_name).expect("validated above");
            if field == "running_mean" {
                model.bns.get_mut(id).mean = tensor;
            } else {
                model.bns.get_mut(id).var = tensor;
            }
        }
    }
    Ok(())
}

/// Rebuilds the model a checkpoint describes: parse the config echo, build
/// the graph, then load every tensor.
pub fn load_model(path: &Path) -> Result<(Model, u32)> {
    let data = load_checkpoint(path)?;
    let mut model = Model::build(data.config.clone(), 0)?;
    apply(&mut model, &data)?;
    Ok((model, data.epoch))
}
