//! Episodes, keyframe extraction and demonstration batches.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{discretize_pose, BimanualAction, CodecError, ContinuousPose, WorkspaceBounds};
use crate::observation::Observation;

/// Joint-speed threshold below which an arm counts as stationary.
pub const DEFAULT_SPEED_EPS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("episode has no steps")]
    EmptyEpisode,
    #[error("step {step}: joint speed {value} must be finite and non-negative")]
    InvalidSpeed { step: usize, value: f64 },
    #[error("step {step}: {source}")]
    Codec {
        step: usize,
        #[source]
        source: CodecError,
    },
    #[error("requested {requested} demonstrations from a store of {available}")]
    InsufficientDemos { requested: usize, available: usize },
    #[error("demonstration has no actions")]
    NoActions,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub right: ContinuousPose,
    pub left: ContinuousPose,
    pub right_joint_speed: f64,
    pub left_joint_speed: f64,
    pub is_terminal: bool,
}

/// Initial observation plus the keyframed bimanual actions that solve it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDemonstration")]
pub struct Demonstration {
    pub observation: Observation,
    pub actions: Vec<BimanualAction>,
}

#[derive(Deserialize)]
struct RawDemonstration {
    observation: Observation,
    actions: Vec<BimanualAction>,
}

impl TryFrom<RawDemonstration> for Demonstration {
    type Error = DemoError;
    fn try_from(raw: RawDemonstration) -> Result<Self, Self::Error> {
        Demonstration::new(raw.observation, raw.actions)
    }
}

impl Demonstration {
    pub fn new(observation: Observation, actions: Vec<BimanualAction>) -> Result<Self, DemoError> {
        if actions.is_empty() {
            return Err(DemoError::NoActions);
        }
        Ok(Self {
            observation,
            actions,
        })
    }

    /// Same scene with the arms' roles swapped.
    pub fn mirrored(&self) -> Self {
        Self {
            observation: self.observation.clone(),
            actions: self.actions.iter().map(BimanualAction::mirrored).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("demonstration serializes")
    }
}

/// Keyframes of an episode, discretized and with consecutive duplicates
/// collapsed.
///
/// A step is a keyframe when either arm's gripper bit changes, when both
/// arms drop below `speed_eps` after moving on the previous step, or when it
/// is terminal. The final step is always treated as terminal.
pub fn extract_keyframes(
    steps: &[EpisodeStep],
    bounds: &WorkspaceBounds,
    speed_eps: f64,
) -> Result<Vec<BimanualAction>, DemoError> {
    if steps.is_empty() {
        return Err(DemoError::EmptyEpisode);
    }
    let discretize = |step: usize, pose: &ContinuousPose| {
        discretize_pose(pose, bounds).map_err(|source| DemoError::Codec { step, source })
    };
    let mut keyframes = Vec::new();
    let mut prev: Option<(BimanualAction, bool)> = None;
    for (i, step) in steps.iter().enumerate() {
        for value in [step.right_joint_speed, step.left_joint_speed] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(DemoError::InvalidSpeed { step: i, value });
            }
        }
        let action = BimanualAction::new(discretize(i, &step.right)?, discretize(i, &step.left)?);
        let still = step.right_joint_speed < speed_eps && step.left_joint_speed < speed_eps;
        let is_key = match prev {
            None => false,
            Some((p, prev_still)) => {
                p.right.gripper != action.right.gripper
                    || p.left.gripper != action.left.gripper
                    || (still && !prev_still)
            }
        } || step.is_terminal
            || i + 1 == steps.len();
        if is_key {
            keyframes.push(action);
        }
        if step.is_terminal {
            break;
        }
        prev = Some((action, still));
    }
    Ok(collapse_duplicates(&keyframes))
}

pub fn collapse_duplicates(actions: &[BimanualAction]) -> Vec<BimanualAction> {
    let mut out: Vec<BimanualAction> = Vec::with_capacity(actions.len());
    for a in actions {
        if out.last() != Some(a) {
            out.push(*a);
        }
    }
    out
}

/// `n` distinct demonstrations drawn uniformly without replacement.
pub fn sample_batch(
    store: &[Demonstration],
    n: usize,
    seed: u64,
) -> Result<Vec<Demonstration>, DemoError> {
    sample_indices(store.len(), n, seed).map(|idx| idx.into_iter().map(|i| store[i].clone()).collect())
}

pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>, DemoError> {
    if n > len {
        return Err(DemoError::InsufficientDemos {
            requested: n,
            available: len,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, len, n).into_vec())
}

pub fn write_demo(path: &Path, demo: &Demonstration) -> Result<(), DemoError> {
    fs::write(path, demo.to_json() + "\n").map_err(|source| DemoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_demo(path: &Path) -> Result<Demonstration, DemoError> {
    let text = fs::read_to_string(path).map_err(|source| DemoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| DemoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads every `*.json` file of a task dataset directory, in file-name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Demonstration>, DemoError> {
    let io = |source| DemoError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths.iter().map(|p| read_demo(p)).collect()
}

pub fn write_dataset(dir: &Path, demos: &[Demonstration]) -> Result<(), DemoError> {
    fs::create_dir_all(dir).map_err(|source| DemoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (i, demo) in demos.iter().enumerate() {
        write_demo(&dir.join(format!("episode_{i:05}.json")), demo)?;
    }
    Ok(())
}
