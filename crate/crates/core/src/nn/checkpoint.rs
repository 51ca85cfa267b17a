//! Network checkpoints: `u64` little-endian header length, a JSON header, then the flat
//! parameter vector as little-endian `f64`, then the EMA shadow when present.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use super::score_net::Conditioning;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

pub const CHECKPOINT_FORMAT: &str = "scorelab-mlp-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    /// `score` or `discriminator`.
    pub role: String,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub conditioning: Conditioning,
    pub step: u64,
    pub n_params: usize,
    pub has_ema: bool,
    /// Noise levels the network was trained on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<NoiseSchedule>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
    pub ema: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(role: &str, mlp: &Mlp, conditioning: Conditioning, step: u64, ema: Option<&[f64]>) -> Self {
        Self {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                role: role.into(),
                widths: mlp.widths().to_vec(),
                activation: mlp.activation(),
                conditioning,
                step,
                n_params: mlp.n_params(),
                has_ema: ema.is_some(),
                schedule: None,
            },
            params: mlp.params().to_vec(),
            ema: ema.map(<[f64]>::to_vec),
        }
    }

    pub fn with_schedule(mut self, schedule: &NoiseSchedule) -> Self {
        self.header.schedule = Some(schedule.clone());
        self
    }

    /// The raw network, or its EMA shadow when `use_ema` and one is stored.
    pub fn to_mlp(&self, use_ema: bool) -> Result<Mlp> {
        let params = match (&self.ema, use_ema) {
            (Some(shadow), true) => shadow.clone(),
            _ => self.params.clone(),
        };
        Mlp::from_parts(self.header.widths.clone(), self.header.activation, params)
    }

    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for v in self.params.iter().chain(self.ema.iter().flatten()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn from_reader<R: Read>(mut r: R) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 20 {
            return Err(Error::Checkpoint(format!("implausible header length {len}")));
        }
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
        }
        if header.n_params != super::mlp::param_count(&header.widths) {
            return Err(Error::Checkpoint("parameter count does not match widths".into()));
        }
        let mut read_block = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let params = read_block(header.n_params)?;
        let ema = if header.has_ema { Some(read_block(header.n_params)?) } else { None };
        Ok(Self { header, params, ema })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    ckpt.to_writer(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_reader(BufReader::new(File::open(path)?))
}
