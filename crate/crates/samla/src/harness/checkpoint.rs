//! Acquisition checkpoints.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! bytes 0..10   magic "SAMLACKPT\n"
//! u32           format version
//! u64 x 7       state_dim action_dim plan_steps lstm_hidden z_dim qh0 qh1
//! u64           tensor count
//! per tensor    u64 name length, name bytes, u64 ndim, u64 per dimension
//! data          row-major f64 per tensor, header order
//! ```
//!
//! Loading rebuilds the architecture from the seven dimensions and then
//! requires the stored names and shapes to match it exactly, so a checkpoint
//! can never deserialize into a network it was not trained as.

use crate::acquisition::AcquisitionParams;
use crate::nn::ParamTensors;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 10] = b"SAMLACKPT\n";

// Header sanity caps; anything beyond these is garbage, not a real network.
const MAX_NAME: u64 = 256;
const MAX_NDIM: u64 = 4;
const MAX_ELEMS: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointError {
    Io { what: String },
    BadMagic,
    Version { got: u32 },
    /// Header or data that cannot be decoded, including truncation.
    Corrupt { what: String },
    /// Header decodes but disagrees with the architecture it declares.
    ShapeMismatch { name: String, what: String },
    Unsupported { what: &'static str },
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io { what } => write!(f, "checkpoint io: {}", what),
            CheckpointError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            CheckpointError::Version { got } => write!(
                f,
                "checkpoint version {} not supported (this build reads version {})",
                got, CHECKPOINT_VERSION
            ),
            CheckpointError::Corrupt { what } => write!(f, "corrupt checkpoint: {}", what),
            CheckpointError::ShapeMismatch { name, what } => {
                write!(f, "checkpoint tensor '{}': {}", name, what)
            }
            CheckpointError::Unsupported { what } => write!(f, "cannot checkpoint: {}", what),
        }
    }
}

impl std::error::Error for CheckpointError {}

/// Canonical tensor names in `ParamTensors` order.
fn tensor_names(fc_layers: usize, q_layers: usize) -> Vec<String> {
    let mut names: Vec<String> = [
        "encoder.w_input", "encoder.w_forget", "encoder.w_output", "encoder.w_cell",
        "encoder.b_input", "encoder.b_forget", "encoder.b_output", "encoder.b_cell",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..fc_layers {
        names.push(format!("fc.layer{}.weight", i));
        names.push(format!("fc.layer{}.bias", i));
    }
    for i in 0..q_layers {
        names.push(format!("q_head.layer{}.weight", i));
        names.push(format!("q_head.layer{}.bias", i));
    }
    names
}

fn arch_meta(params: &AcquisitionParams) -> Result<[u64; 7], CheckpointError> {
    if params.fc.layers.len() != 1 || params.q_head.layers.len() != 3 {
        return Err(CheckpointError::Unsupported {
            what: "only the standard encoder (1 fc layer) and q head (3 layers) are serializable",
        });
    }
    Ok([
        params.state_dim as u64,
        params.action_dim as u64,
        params.plan_steps as u64,
        params.encoder.hidden_dim as u64,
        params.z_dim() as u64,
        params.q_head.layers[0].out_dim() as u64,
        params.q_head.layers[1].out_dim() as u64,
    ])
}

pub fn save_checkpoint(params: &AcquisitionParams, path: &Path) -> Result<(), CheckpointError> {
    let meta = arch_meta(params)?;
    let tensors = params.tensors();
    let names = tensor_names(params.fc.layers.len(), params.q_head.layers.len());
    debug_assert_eq!(tensors.len(), names.len());

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for m in meta {
        buf.extend_from_slice(&m.to_le_bytes());
    }
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (t, name) in tensors.iter().zip(&names) {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for t in &tensors {
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(path, &buf)
        .map_err(|e| CheckpointError::Io { what: format!("{}: {}", path.display(), e) })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupt {
                what: format!("file ends inside {}", what),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

struct Header {
    meta: [u64; 7],
    entries: Vec<(String, Vec<usize>)>,
    data_at: usize,
}

fn read_header(buf: &[u8]) -> Result<Header, CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { got: version });
    }
    let mut meta = [0u64; 7];
    for m in &mut meta {
        *m = r.u64("architecture header")?;
    }
    let count = r.u64("tensor count")?;
    if count > 1024 {
        return Err(CheckpointError::Corrupt { what: format!("absurd tensor count {}", count) });
    }
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u64("name length")?;
        if name_len > MAX_NAME {
            return Err(CheckpointError::Corrupt { what: "tensor name too long".into() });
        }
        let name = std::str::from_utf8(r.take(name_len as usize, "tensor name")?)
            .map_err(|_| CheckpointError::Corrupt { what: "tensor name is not utf-8".into() })?
            .to_string();
        let ndim = r.u64("rank")?;
        if ndim > MAX_NDIM {
            return Err(CheckpointError::Corrupt { what: format!("rank {} too large", ndim) });
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        let mut elems: u64 = 1;
        for _ in 0..ndim {
            let d = r.u64("dimension")?;
            elems = elems.saturating_mul(d.max(1));
            if elems > MAX_ELEMS {
                return Err(CheckpointError::Corrupt { what: "tensor too large".into() });
            }
            shape.push(d as usize);
        }
        entries.push((name, shape));
    }
    Ok(Header { meta, entries, data_at: r.pos })
}

pub fn load_checkpoint(path: &Path) -> Result<AcquisitionParams, CheckpointError> {
    let buf = std::fs::read(path)
        .map_err(|e| CheckpointError::Io { what: format!("{}: {}", path.display(), e) })?;
    let header = read_header(&buf)?;
    let [state_dim, action_dim, plan_steps, lstm_hidden, z_dim, qh0, qh1] = header.meta;
    if [state_dim, action_dim, plan_steps, lstm_hidden, z_dim, qh0, qh1].contains(&0) {
        return Err(CheckpointError::Corrupt { what: "zero architecture dimension".into() });
    }

    // The declared dimensions fix the architecture; weights are overwritten.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = AcquisitionParams::init(
        state_dim as usize,
        action_dim as usize,
        plan_steps as usize,
        lstm_hidden as usize,
        z_dim as usize,
        (qh0 as usize, qh1 as usize),
        &mut rng,
    );
    let names = tensor_names(params.fc.layers.len(), params.q_head.layers.len());
    if header.entries.len() != names.len() {
        return Err(CheckpointError::Corrupt {
            what: format!("expected {} tensors, header lists {}", names.len(), header.entries.len()),
        });
    }

    let mut r = Reader { buf: &buf, pos: header.data_at };
    for ((tensor, want_name), (name, shape)) in
        params.tensors_mut().into_iter().zip(&names).zip(&header.entries)
    {
        if name != want_name {
            return Err(CheckpointError::Corrupt {
                what: format!("tensor '{}' where '{}' belongs", name, want_name),
            });
        }
        if shape != tensor.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                what: format!("stored shape {:?}, architecture needs {:?}", shape, tensor.shape()),
            });
        }
        for slot in tensor.data_mut() {
            let bytes = r.take(8, "tensor data")?;
            *slot = f64::from_le_bytes(bytes.try_into().expect("8 bytes"));
        }
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::Corrupt {
            what: format!("{} trailing bytes after tensor data", buf.len() - r.pos),
        });
    }
    Ok(params)
}

/// Header-only summary (names and shapes) for inspection; does not read the
/// weight data.
pub fn describe_checkpoint(path: &Path) -> Result<String, CheckpointError> {
    let buf = std::fs::read(path)
        .map_err(|e| CheckpointError::Io { what: format!("{}: {}", path.display(), e) })?;
    let header = read_header(&buf)?;
    let [s, a, p, h, z, q0, q1] = header.meta;
    let mut out = format!(
        "version {}\nstate_dim {} action_dim {} plan_steps {}\nlstm_hidden {} z_dim {} q_hidden {} {}\n",
        CHECKPOINT_VERSION, s, a, p, h, z, q0, q1
    );
    for (name, shape) in &header.entries {
        out.push_str(&format!("{} {:?}\n", name, shape));
    }
    Ok(out)
}
