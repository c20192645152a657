//! Actor-critic seed policy trained with the clipped policy-gradient objective.

mod episode_log;
mod policy;
mod train;

pub use episode_log::{read_episode_log, write_episode_log, EpisodeLog, EpisodeRecord, StepRecord, EPL_MAGIC};
pub use policy::{
    encode, read_policy, write_policy, ActMode, Action, ActionDistribution, Forward, Greedy, Observation, PolicyArch, PolicyMeta,
    PolicyParams, UniformCells,
};
pub use train::{
    build_envs, build_samples, collect_episode, discounted_returns, gae, loss_and_gradient, ppo_update, train_agent, train_agent_on,
    Episode, LossParts, Observer, PpoConfig, Sample, Step, UpdateRecord,
};
