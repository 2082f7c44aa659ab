use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Phase, TrainConfig};
use crate::autograd::{AdamState, ParamSet, Tensor};
use crate::denoiser::SwinUNet;
use crate::encoder::ContrastiveEncoder;
use crate::error::{Error, Result};
use crate::volume::NormalizationParams;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CDTVDCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Both networks, their optimizer moments and everything needed to rebuild
/// and run them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub phase: Phase,
    pub config: TrainConfig,
    /// One entry per field component; empty until fine-tuning fixes the
    /// target series' value range.
    pub normalization: Vec<NormalizationParams>,
    /// Residual target scale fitted during training.
    pub residual_scale: Option<f64>,
    pub encoder: ContrastiveEncoder,
    pub denoiser: SwinUNet,
    pub encoder_opt: AdamState,
    pub denoiser_opt: AdamState,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    phase: Phase,
    config: TrainConfig,
    normalization: Vec<NormalizationParams>,
    residual_scale: Option<f64>,
    encoder_opt_step: u64,
    denoiser_opt_step: u64,
    blobs: Vec<BlobInfo>,
}

const GROUPS: [&str; 6] = ["encoder", "denoiser", "encoder_m", "encoder_v", "denoiser_m", "denoiser_v"];

fn moment_set(params: &ParamSet<f32>, moments: &[Vec<f32>]) -> Vec<(String, usize, usize, Vec<f32>)> {
    params
        .iter()
        .zip(moments)
        .map(|((name, t), m)| (name.to_string(), t.rows, t.cols, m.clone()))
        .collect()
}

impl Checkpoint {
    fn groups(&self) -> Vec<Vec<(String, usize, usize, Vec<f32>)>> {
        let plain = |p: &ParamSet<f32>| {
            p.iter()
                .map(|(n, t)| (n.to_string(), t.rows, t.cols, t.data.clone()))
                .collect::<Vec<_>>()
        };
        vec![
            plain(self.encoder.params()),
            plain(self.denoiser.params()),
            moment_set(self.encoder.params(), &self.encoder_opt.m),
            moment_set(self.encoder.params(), &self.encoder_opt.v),
            moment_set(self.denoiser.params(), &self.denoiser_opt.m),
            moment_set(self.denoiser.params(), &self.denoiser_opt.v),
        ]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let groups = self.groups();
        let blobs = GROUPS
            .iter()
            .zip(&groups)
            .flat_map(|(g, items)| {
                items.iter().map(move |(n, r, c, _)| BlobInfo {
                    name: format!("{g}/{n}"),
                    rows: *r,
                    cols: *c,
                })
            })
            .collect();
        let header = Header {
            version: CHECKPOINT_VERSION,
            phase: self.phase,
            config: self.config.clone(),
            normalization: self.normalization.clone(),
            residual_scale: self.residual_scale,
            encoder_opt_step: self.encoder_opt.step,
            denoiser_opt_step: self.denoiser_opt.step,
            blobs,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(json.len() + 12);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for items in &groups {
            for (_, _, _, data) in items {
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptFile(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing checkpoint magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let raw: serde_json::Value = serde_json::from_slice(body).map_err(|e| corrupt(&e.to_string()))?;
        let found = raw.get("version").and_then(|v| v.as_u64()).ok_or_else(|| corrupt("header has no version"))?;
        if found != CHECKPOINT_VERSION as u64 {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: found as u32,
            });
        }
        let header: Header = serde_json::from_value(raw).map_err(|e| corrupt(&e.to_string()))?;
        header.config.validate()?;

        let mut data = &bytes[12 + hlen..];
        let total: usize = header.blobs.iter().map(|b| b.rows * b.cols).sum();
        if data.len() != total * 4 {
            return Err(corrupt(&format!("expected {} weight bytes, found {}", total * 4, data.len())));
        }
        let mut groups: Vec<ParamSet<f32>> = (0..GROUPS.len()).map(|_| ParamSet::new()).collect();
        for b in &header.blobs {
            let (g, name) = b.name.split_once('/').ok_or_else(|| corrupt("blob without group"))?;
            let gi = GROUPS.iter().position(|&x| x == g).ok_or_else(|| corrupt("unknown blob group"))?;
            let n = b.rows * b.cols;
            let (chunk, rest) = data.split_at(n * 4);
            data = rest;
            let values = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if groups[gi].find(name).is_some() {
                return Err(corrupt("duplicate blob"));
            }
            groups[gi].add(name, Tensor::new(b.rows, b.cols, values));
        }

        let mut encoder = ContrastiveEncoder::new(header.config.encoder.clone(), 0)?;
        let mut denoiser = SwinUNet::new(header.config.denoiser_config(), 0)?;
        let mut it = groups.into_iter();
        let mut next = || it.next().expect("six groups");
        encoder.set_params(next())?;
        denoiser.set_params(next())?;
        let moments = |p: ParamSet<f32>, like: &ParamSet<f32>| -> Result<Vec<Vec<f32>>> {
            crate::encoder::check_same_layout(like, &p)?;
            Ok(p.iter().map(|(_, t)| t.data.clone()).collect())
        };
        let encoder_opt = AdamState {
            step: header.encoder_opt_step,
            m: moments(next(), encoder.params())?,
            v: moments(next(), encoder.params())?,
        };
        let denoiser_opt = AdamState {
            step: header.denoiser_opt_step,
            m: moments(next(), denoiser.params())?,
            v: moments(next(), denoiser.params())?,
        };
        Ok(Checkpoint {
            phase: header.phase,
            config: header.config,
            normalization: header.normalization,
            residual_scale: header.residual_scale,
            encoder,
            denoiser,
            encoder_opt,
            denoiser_opt,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::initial_checkpoint;
    use crate::trainer::train::tests::toy_config;

    fn sample() -> Checkpoint {
        let mut c = initial_checkpoint(&toy_config()).unwrap();
        c.phase = Phase::Pretrained;
        c.normalization = vec![NormalizationParams::new(-1.5, 2.0).unwrap()];
        c.encoder_opt.step = 7;
        c.residual_scale = Some(12.5);
        c.denoiser_opt.m[0][0] = 0.25;
        c.denoiser_opt.v[1][0] = 0.5;
        c
    }

    fn same(a: &Checkpoint, b: &Checkpoint) {
        assert_eq!(a.phase, b.phase);
        assert_eq!(a.config, b.config);
        assert_eq!(a.normalization, b.normalization);
        assert_eq!(a.residual_scale, b.residual_scale);
        assert_eq!(a.encoder.params(), b.encoder.params());
        assert_eq!(a.denoiser.params(), b.denoiser.params());
        assert_eq!(a.encoder_opt, b.encoder_opt);
        assert_eq!(a.denoiser_opt, b.denoiser_opt);
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        same(&c, &back);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let c = sample();
        save_checkpoint(&c, &path).unwrap();
        same(&c, &load_checkpoint(&path).unwrap());
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn truncation_and_garbage_are_corrupt() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 5, 11, 40, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::CorruptFile(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let bytes = sample().to_bytes().unwrap();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[12..12 + hlen]).unwrap();
        let patched = header.replacen("\"version\":1", "\"version\":9", 1);
        assert_ne!(patched, header);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(patched.len() as u32).to_le_bytes());
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&bytes[12 + hlen..]);
        assert!(matches!(
            Checkpoint::from_bytes(&out),
            Err(Error::VersionMismatch { expected: 1, found: 9 })
        ));
    }
}
