//! Prompt-then-refine inference shared by the CLI, the service and the
//! evaluation harness.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EnvState, SegEnv};
use crate::error::{Error, Result};
use crate::grow::GrowConfig;
use crate::ppo::{ActMode, PolicyParams};
use crate::rng::{self, Purpose};
use crate::scalar::Real;
use crate::volume::{dice_loss, Mask, VoxelIndex};

/// Outcome of growing from the user prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSummary {
    pub seed: VoxelIndex,
    pub voxels: usize,
    pub iterations_run: usize,
    pub converged: bool,
    pub dice: Option<f64>,
}

/// One refinement step as shown to a user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Seed chosen by the policy; `None` for the marker appended when
    /// refinement is asked of a finished session.
    pub seed: Option<VoxelIndex>,
    pub added: usize,
    pub removed: usize,
    pub voxels: usize,
    /// The mask did not change on this step.
    pub converged: bool,
    /// No further steps will be taken (stabilised or horizon reached).
    pub terminal: bool,
    pub dice: Option<f64>,
}

/// Negative iff the mask has at most `threshold` voxels.
pub fn classify_negative_with(mask: &Mask, threshold: usize) -> bool {
    mask.count() <= threshold
}

/// Threshold = voxel count of the growing neighbourhood window.
pub fn classify_negative(mask: &Mask, cfg: &GrowConfig) -> bool {
    classify_negative_with(mask, cfg.radius.window_volume())
}

/// Interactive state for one volume: current mask and step history.
#[derive(Debug, Clone)]
pub struct InferenceSession<T> {
    env: SegEnv<T>,
    policy: Option<Arc<PolicyParams<T>>>,
    state: Option<EnvState<T>>,
    prompt: Option<PromptSummary>,
    history: Vec<StepRecord>,
}

impl<T: Real> InferenceSession<T> {
    /// Without a policy, refinement takes no steps (single-shot growing).
    pub fn new(env: SegEnv<T>, policy: Option<Arc<PolicyParams<T>>>) -> Result<Self> {
        if let Some(p) = &policy {
            if p.arch.channels != env.volume().channels() {
                return Err(Error::invalid(
                    "policy",
                    format!("policy expects {} channels, volume has {}", p.arch.channels, env.volume().channels()),
                ));
            }
        }
        Ok(InferenceSession {
            env,
            policy,
            state: None,
            prompt: None,
            history: Vec::new(),
        })
    }

    pub fn env(&self) -> &SegEnv<T> {
        &self.env
    }

    pub fn config(&self) -> &EnvConfig {
        self.env.config()
    }

    pub fn mask(&self) -> Option<&Mask> {
        self.state.as_ref().map(|s| &s.mask)
    }

    pub fn prompt_summary(&self) -> Option<&PromptSummary> {
        self.prompt.as_ref()
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn is_terminal(&self) -> bool {
        self.state.as_ref().is_some_and(|s| s.terminal)
    }

    fn dice(&self, m: &Mask) -> Result<Option<f64>> {
        self.env
            .truth()
            .map(|t| Ok(1.0 - dice_loss::<T, _>(m, t)?.to_f64_lossy()))
            .transpose()
    }

    /// Grows from the prompt; replaces any previous mask and history.
    pub fn prompt(&mut self, seed: VoxelIndex) -> Result<PromptSummary> {
        let g = self.env.grower().grow(seed)?;
        let summary = PromptSummary {
            seed,
            voxels: g.mask.count(),
            iterations_run: g.iterations_run,
            converged: g.converged,
            dice: self.dice(&g.mask)?,
        };
        let terminal = self.policy.is_none();
        self.state = Some(EnvState {
            volume: Arc::clone(self.env.volume()),
            mask: g.mask,
            step_index: 0,
            terminal,
        });
        self.prompt = Some(summary.clone());
        self.history.clear();
        Ok(summary)
    }

    /// Up to `max_steps` greedy steps, or until the episode ends when `None`.
    pub fn refine(&mut self, max_steps: Option<usize>) -> Result<Vec<StepRecord>> {
        let Some(state) = self.state.as_ref() else {
            return Err(Error::invalid("prompt", "no prompt placed yet"));
        };
        if state.terminal {
            let rec = StepRecord {
                step: state.step_index,
                seed: None,
                added: 0,
                removed: 0,
                voxels: state.mask.count(),
                converged: true,
                terminal: true,
                dice: self.dice(&state.mask)?,
            };
            self.history.push(rec.clone());
            return Ok(vec![rec]);
        }
        let policy = Arc::clone(self.policy.as_ref().expect("non-terminal state implies a policy"));
        let mut unused = rng::stream(0, Purpose::Eval, 0);
        let mut out = Vec::new();
        let limit = max_steps.unwrap_or(usize::MAX);
        while out.len() < limit {
            let state = self.state.as_ref().expect("checked above");
            if state.terminal {
                break;
            }
            let action = policy.act(state, &mut unused, ActMode::Greedy)?;
            let tr = self.env.step(state, action.voxel)?;
            let (added, removed) = diff_counts(&tr.state.mask, &tr.next_state.mask);
            let rec = StepRecord {
                step: tr.next_state.step_index,
                seed: Some(action.voxel),
                added,
                removed,
                voxels: tr.next_state.mask.count(),
                converged: added == 0 && removed == 0,
                terminal: tr.done,
                dice: self.dice(&tr.next_state.mask)?,
            };
            self.state = Some(tr.next_state);
            self.history.push(rec.clone());
            out.push(rec);
        }
        Ok(out)
    }

    /// Forgets the prompt and mask, keeping volume, gates and policy.
    pub fn reset_prompt(&mut self) {
        self.state = None;
        self.prompt = None;
        self.history.clear();
    }
}

fn diff_counts(before: &Mask, after: &Mask) -> (usize, usize) {
    let (mut added, mut removed) = (0, 0);
    for (&x, &y) in before.as_bytes().iter().zip(after.as_bytes()) {
        match (x != 0, y != 0) {
            (false, true) => added += 1,
            (true, false) => removed += 1,
            _ => {}
        }
    }
    (added, removed)
}

/// Full inference run: prompt, then greedy refinement to the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub prompt: PromptSummary,
    pub steps: Vec<StepRecord>,
    pub mask: Mask,
    /// Mask after the prompt and after every step, when requested.
    pub trace: Vec<Mask>,
}

pub fn infer<T: Real>(env: &SegEnv<T>, policy: Option<&Arc<PolicyParams<T>>>, prompt: VoxelIndex, keep_trace: bool) -> Result<Inference> {
    let mut s = InferenceSession::new(env.clone(), policy.cloned())?;
    let summary = s.prompt(prompt)?;
    let mut trace = Vec::new();
    if keep_trace {
        trace.push(s.mask().expect("prompted").clone());
    }
    let mut steps = Vec::new();
    while !s.is_terminal() {
        let recs = s.refine(Some(1))?;
        if keep_trace {
            trace.push(s.mask().expect("prompted").clone());
        }
        steps.extend(recs);
    }
    Ok(Inference {
        prompt: summary,
        steps,
        mask: s.mask().expect("prompted").clone(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::PolicyArch;
    use crate::volume::{Dims, EntropyField, Volume};

    fn env() -> SegEnv<f64> {
        let d = Dims::cube(8);
        let x = Arc::new(Volume::filled(d, 2, 0.4f64));
        let e = Arc::new(EntropyField::new(d, (0..d.len()).map(|i| if d.voxel(i).a == 4 { 0.6 } else { 0.0 }).collect()).unwrap());
        let truth = Arc::new(Mask::from_fn(d, |v| v.a < 4));
        let cfg = EnvConfig {
            grow: GrowConfig::desk(),
            ..EnvConfig::default()
        };
        SegEnv::new(x, Some(truth), e, &cfg).unwrap()
    }

    fn policy() -> Arc<PolicyParams<f64>> {
        let arch = PolicyArch {
            channels: 2,
            pool_grid: 2,
            action_grid: 2,
            trunk: [4, 4],
            cell_hidden: 2,
            near_radius: 1,
        };
        Arc::new(PolicyParams::init(arch, 1).unwrap())
    }

    #[test]
    fn negative_threshold_is_inclusive() {
        let d = Dims::cube(5);
        let cfg = GrowConfig::desk();
        let mut m = Mask::empty(d);
        assert!(classify_negative(&m, &cfg));
        for i in 0..27 {
            m.set_linear(i, true);
        }
        assert!(classify_negative(&m, &cfg));
        m.set_linear(27, true);
        assert!(!classify_negative(&m, &cfg));
        assert_eq!(GrowConfig::paper().radius.window_volume(), 343);
    }

    #[test]
    fn inference_is_repeatable_and_ends() {
        let env = env();
        let p = policy();
        let a = infer(&env, Some(&p), VoxelIndex::splat(1), true).unwrap();
        let b = infer(&env, Some(&p), VoxelIndex::splat(1), true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.prompt.dice, Some(1.0));
        assert!(a.steps.len() <= env.config().horizon);
        assert!(a.steps.last().unwrap().terminal);
        assert_eq!(a.trace.len(), a.steps.len() + 1);
    }

    #[test]
    fn closed_gates_give_a_single_voxel() {
        let d = Dims::cube(6);
        let x = Arc::new(Volume::filled(d, 2, 0.4f64));
        let e = Arc::new(EntropyField::constant(d, 0.5).unwrap());
        let env = SegEnv::new(x, None, e, &EnvConfig::default()).unwrap();
        let r = infer(&env, None, VoxelIndex::splat(2), false).unwrap();
        assert_eq!(r.mask.count(), 1);
        assert!(r.steps.is_empty());
        assert!(classify_negative(&r.mask, &env.config().grow));
    }

    #[test]
    fn session_refine_after_end_appends_marker() {
        let mut s = InferenceSession::new(env(), Some(policy())).unwrap();
        assert!(s.refine(None).is_err());
        s.prompt(VoxelIndex::splat(6)).unwrap();
        let steps = s.refine(None).unwrap();
        assert!(steps.last().unwrap().terminal);
        let again = s.refine(Some(3)).unwrap();
        assert_eq!(again.len(), 1);
        assert!(again[0].seed.is_none() && again[0].converged && again[0].added == 0);
        assert_eq!(s.history().len(), steps.len() + 1);
        s.reset_prompt();
        assert!(s.mask().is_none());
    }
}
