//! Binary episode log (`.epl`): a JSON header line followed by packed
//! episodes. Masks are stored one bit per voxel; observations are not
//! stored because they are recomputed from `(volume, mask)` on replay.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::policy::{encode, PolicyArch};
use super::train::{Episode, Step};
use crate::env::{EnvState, Transition};
use crate::error::{Error, Result};
use crate::io::{join_header, read_bytes, split_header, write_bytes};
use crate::scalar::Real;
use crate::volume::{Dims, Mask, Volume, VoxelIndex};

pub const EPL_MAGIC: &str = "EPL1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EplHeader {
    magic: String,
    dims: [usize; 3],
    episodes: usize,
    steps: usize,
    dtype: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub action: VoxelIndex,
    pub cell: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub dice_reward: f64,
    pub entropy_reward: f64,
    pub done: bool,
    pub next_mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub case: usize,
    pub initial_seed: VoxelIndex,
    pub initial_mask: Mask,
    pub initial_dice: Option<f64>,
    pub final_dice: Option<f64>,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub dims: Dims,
    pub episodes: Vec<EpisodeRecord>,
}

fn pack_bits(m: &Mask, out: &mut Vec<u8>) {
    for chunk in m.as_bytes().chunks(8) {
        let mut byte = 0u8;
        for (i, &b) in chunk.iter().enumerate() {
            if b != 0 {
                byte |= 1 << i;
            }
        }
        out.push(byte);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                path: self.origin.to_path_buf(),
                field,
                message: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<usize> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self, field: &'static str) -> Result<f64> {
        let b = self.take(8, field)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn voxel(&mut self, field: &'static str) -> Result<VoxelIndex> {
        Ok(VoxelIndex::new(self.u32(field)?, self.u32(field)?, self.u32(field)?))
    }

    fn opt_f64(&mut self, field: &'static str) -> Result<Option<f64>> {
        let present = self.u8(field)?;
        let v = self.f64(field)?;
        Ok((present != 0).then_some(v))
    }

    fn mask(&mut self, dims: Dims, field: &'static str) -> Result<Mask> {
        let packed = self.take(dims.len().div_ceil(8), field)?;
        let data = (0..dims.len()).map(|i| (packed[i / 8] >> (i % 8)) & 1).collect();
        Mask::from_bytes(dims, data)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_voxel(out: &mut Vec<u8>, v: VoxelIndex) {
    for x in [v.a, v.b, v.c] {
        put_u32(out, x);
    }
}

fn put_opt(out: &mut Vec<u8>, v: Option<f64>) {
    out.push(v.is_some() as u8);
    out.extend_from_slice(&v.unwrap_or(0.0).to_le_bytes());
}

impl EpisodeLog {
    pub fn from_episodes<T: Real>(dims: Dims, episodes: &[Episode<T>]) -> Result<Self> {
        let check = |m: &Mask| {
            if m.dims() == dims {
                Ok(())
            } else {
                Err(Error::DimMismatch {
                    expected: dims,
                    actual: m.dims(),
                })
            }
        };
        let mut out = Vec::with_capacity(episodes.len());
        for ep in episodes {
            let initial_mask = match ep.steps.first() {
                Some(s) => s.transition.state.mask.clone(),
                None => return Err(Error::invalid("episodes", format!("episode for case {} has no steps", ep.case))),
            };
            check(&initial_mask)?;
            let mut steps = Vec::with_capacity(ep.steps.len());
            for s in &ep.steps {
                let t = &s.transition;
                check(&t.next_state.mask)?;
                steps.push(StepRecord {
                    action: t.action,
                    cell: s.cell,
                    log_prob: s.log_prob.to_f64_lossy(),
                    value: s.value.to_f64_lossy(),
                    reward: t.reward.to_f64_lossy(),
                    dice_reward: t.dice_reward.to_f64_lossy(),
                    entropy_reward: t.entropy_reward.to_f64_lossy(),
                    done: t.done,
                    next_mask: t.next_state.mask.clone(),
                });
            }
            out.push(EpisodeRecord {
                case: ep.case,
                initial_seed: ep.initial_seed,
                initial_mask,
                initial_dice: ep.initial_dice.map(|d| d.to_f64_lossy()),
                final_dice: ep.final_dice.map(|d| d.to_f64_lossy()),
                steps,
            });
        }
        Ok(EpisodeLog { dims, episodes: out })
    }

    pub fn step_count(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = EplHeader {
            magic: EPL_MAGIC.into(),
            dims: self.dims.as_array(),
            episodes: self.episodes.len(),
            steps: self.step_count(),
            dtype: "f64le".into(),
        };
        let mut body = Vec::new();
        for ep in &self.episodes {
            put_u32(&mut body, ep.case);
            put_voxel(&mut body, ep.initial_seed);
            put_u32(&mut body, ep.steps.len());
            put_opt(&mut body, ep.initial_dice);
            put_opt(&mut body, ep.final_dice);
            pack_bits(&ep.initial_mask, &mut body);
            for s in &ep.steps {
                put_voxel(&mut body, s.action);
                put_u32(&mut body, s.cell);
                for x in [s.log_prob, s.value, s.reward, s.dice_reward, s.entropy_reward] {
                    body.extend_from_slice(&x.to_le_bytes());
                }
                body.push(s.done as u8);
                pack_bits(&s.next_mask, &mut body);
            }
        }
        join_header(&header, &body)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let (h, payload): (EplHeader, _) = split_header(bytes, origin)?;
        let bad = |field: &'static str, message: String| Error::Format {
            path: origin.to_path_buf(),
            field,
            message,
        };
        if h.magic != EPL_MAGIC {
            return Err(bad("magic", format!("expected {EPL_MAGIC}, got {}", h.magic)));
        }
        if h.dtype != "f64le" {
            return Err(bad("dtype", format!("expected f64le, got {}", h.dtype)));
        }
        if h.dims.contains(&0) {
            return Err(bad("dims", format!("{:?} has a zero extent", h.dims)));
        }
        let dims = Dims(h.dims[0], h.dims[1], h.dims[2]);
        let mut r = Reader {
            buf: &payload,
            pos: 0,
            origin,
        };
        let mut episodes = Vec::with_capacity(h.episodes);
        for _ in 0..h.episodes {
            let case = r.u32("case")?;
            let initial_seed = r.voxel("initial_seed")?;
            let n = r.u32("steps")?;
            let initial_dice = r.opt_f64("initial_dice")?;
            let final_dice = r.opt_f64("final_dice")?;
            let initial_mask = r.mask(dims, "mask")?;
            let mut steps = Vec::with_capacity(n);
            for _ in 0..n {
                steps.push(StepRecord {
                    action: r.voxel("action")?,
                    cell: r.u32("cell")?,
                    log_prob: r.f64("log_prob")?,
                    value: r.f64("value")?,
                    reward: r.f64("reward")?,
                    dice_reward: r.f64("dice_reward")?,
                    entropy_reward: r.f64("entropy_reward")?,
                    done: r.u8("done")? != 0,
                    next_mask: r.mask(dims, "mask")?,
                });
            }
            episodes.push(EpisodeRecord {
                case,
                initial_seed,
                initial_mask,
                initial_dice,
                final_dice,
                steps,
            });
        }
        let log = EpisodeLog { dims, episodes };
        if r.pos != payload.len() {
            return Err(bad("steps", format!("{} trailing bytes", payload.len() - r.pos)));
        }
        if log.step_count() != h.steps {
            return Err(bad("steps", format!("header says {}, body has {}", h.steps, log.step_count())));
        }
        Ok(log)
    }

    /// Rebuilds trainable episodes; `volume_of(case)` supplies each case's
    /// image so the observations can be re-encoded.
    pub fn replay<T: Real>(&self, arch: &PolicyArch, volume_of: impl Fn(usize) -> Option<Arc<Volume<T>>>) -> Result<Vec<Episode<T>>> {
        let mut out = Vec::with_capacity(self.episodes.len());
        for ep in &self.episodes {
            let volume = volume_of(ep.case).ok_or_else(|| Error::invalid("case", format!("no volume for case {}", ep.case)))?;
            if volume.dims() != self.dims {
                return Err(Error::DimMismatch {
                    expected: self.dims,
                    actual: volume.dims(),
                });
            }
            let mut prev = ep.initial_mask.clone();
            let mut steps = Vec::with_capacity(ep.steps.len());
            for (t, s) in ep.steps.iter().enumerate() {
                let state = EnvState {
                    volume: Arc::clone(&volume),
                    mask: prev,
                    step_index: t,
                    terminal: false,
                };
                let obs = encode(arch, &volume, &state.mask)?;
                let next_state = EnvState {
                    volume: Arc::clone(&volume),
                    mask: s.next_mask.clone(),
                    step_index: t + 1,
                    terminal: s.done,
                };
                steps.push(Step {
                    transition: Transition {
                        state,
                        action: s.action,
                        reward: T::lit(s.reward),
                        dice_reward: T::lit(s.dice_reward),
                        entropy_reward: T::lit(s.entropy_reward),
                        next_state,
                        done: s.done,
                    },
                    obs,
                    cell: s.cell,
                    log_prob: T::lit(s.log_prob),
                    value: T::lit(s.value),
                });
                prev = s.next_mask.clone();
            }
            out.push(Episode {
                case: ep.case,
                initial_seed: ep.initial_seed,
                steps,
                initial_dice: ep.initial_dice.map(T::lit),
                final_dice: ep.final_dice.map(T::lit),
            });
        }
        Ok(out)
    }
}

pub fn write_episode_log(path: impl AsRef<Path>, log: &EpisodeLog) -> Result<()> {
    write_bytes(path.as_ref(), &log.to_bytes())
}

pub fn read_episode_log(path: impl AsRef<Path>) -> Result<EpisodeLog> {
    let path = path.as_ref();
    EpisodeLog::from_bytes(&read_bytes(path)?, path)
}
