//! Scene observations: object name to voxel triple, in insertion order.

use indexmap::IndexMap;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::codec::{DiscreteAction, VOXEL_MAX};

/// Key under which a partner arm's trajectory is embedded in an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartnerKey {
    LeaderArm,
    FollowerArm,
}

impl PartnerKey {
    pub fn as_str(self) -> &'static str {
        match self {
            PartnerKey::LeaderArm => "leader_arm",
            PartnerKey::FollowerArm => "follower_arm",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        match key {
            "leader_arm" => Some(PartnerKey::LeaderArm),
            "follower_arm" => Some(PartnerKey::FollowerArm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartnerTrajectory {
    pub key: PartnerKey,
    pub actions: Vec<DiscreteAction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Observation {
    entries: IndexMap<String, [u8; 3]>,
    partner: Option<PartnerTrajectory>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ObservationError {
    #[error("duplicate object name '{0}'")]
    DuplicateName(String),
    #[error("object '{name}' voxel {value} out of range 0..=99")]
    Range { name: String, value: i64 },
    #[error("object name '{0}' is reserved for partner trajectories")]
    ReservedName(String),
}

impl Observation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<I, S>(entries: I) -> Result<Self, ObservationError>
    where
        I: IntoIterator<Item = (S, [u8; 3])>,
        S: Into<String>,
    {
        let mut obs = Self::new();
        for (name, voxel) in entries {
            obs.insert(name.into(), voxel)?;
        }
        Ok(obs)
    }

    pub fn insert(&mut self, name: String, voxel: [u8; 3]) -> Result<(), ObservationError> {
        if PartnerKey::from_key(&name).is_some() {
            return Err(ObservationError::ReservedName(name));
        }
        if let Some(&v) = voxel.iter().find(|&&v| v > VOXEL_MAX) {
            return Err(ObservationError::Range {
                name,
                value: i64::from(v),
            });
        }
        if self.entries.contains_key(&name) {
            return Err(ObservationError::DuplicateName(name));
        }
        self.entries.insert(name, voxel);
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, [u8; 3])> + '_ {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn get(&self, name: &str) -> Option<[u8; 3]> {
        self.entries.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.partner.is_none()
    }

    pub fn partner(&self) -> Option<&PartnerTrajectory> {
        self.partner.as_ref()
    }

    /// Copy of this observation with `actions` embedded under `key`,
    /// replacing any previous partner entry.
    pub fn with_partner(&self, key: PartnerKey, actions: Vec<DiscreteAction>) -> Self {
        Self {
            entries: self.entries.clone(),
            partner: Some(PartnerTrajectory { key, actions }),
        }
    }

    pub fn without_partner(&self) -> Self {
        Self {
            entries: self.entries.clone(),
            partner: None,
        }
    }

    /// Summed L1 voxel distance over object entries. Partner entries are
    /// ignored; an object missing from `other` costs the maximal per-object
    /// distance.
    pub fn l1_distance(&self, other: &Observation) -> u32 {
        const MISSING: u32 = 3 * VOXEL_MAX as u32;
        self.entries
            .iter()
            .map(|(name, a)| match other.entries.get(name) {
                Some(b) => a.iter().zip(b).map(|(&x, &y)| x.abs_diff(y) as u32).sum(),
                None => MISSING,
            })
            .sum()
    }

    /// Mean per-object offset `other - self` over shared names, in voxels.
    pub fn mean_offset_to(&self, other: &Observation) -> [f64; 3] {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for (name, a) in &self.entries {
            if let Some(b) = other.entries.get(name) {
                for axis in 0..3 {
                    sum[axis] += f64::from(b[axis]) - f64::from(a[axis]);
                }
                n += 1;
            }
        }
        if n > 0 {
            sum.iter_mut().for_each(|s| *s /= n as f64);
        }
        sum
    }
}

/// Index of the observation in `candidates` nearest to `target` by summed L1
/// distance; ties go to the lower index.
pub fn nearest_index<'a, I>(target: &Observation, candidates: I) -> Option<usize>
where
    I: IntoIterator<Item = &'a Observation>,
{
    candidates
        .into_iter()
        .enumerate()
        .min_by_key(|(i, obs)| (target.l1_distance(obs), *i))
        .map(|(i, _)| i)
}

impl Serialize for Observation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.entries.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Observation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw: IndexMap<String, [i64; 3]> = IndexMap::deserialize(deserializer)?;
        let mut obs = Observation::new();
        for (name, v) in raw {
            if let Some(&bad) = v.iter().find(|&&x| !(0..=i64::from(VOXEL_MAX)).contains(&x)) {
                return Err(D::Error::custom(ObservationError::Range { name, value: bad }));
            }
            obs.insert(name, [v[0] as u8, v[1] as u8, v[2] as u8])
                .map_err(D::Error::custom)?;
        }
        Ok(obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_insertion_order() {
        let obs = Observation::from_entries([("zeta", [1, 2, 3]), ("alpha", [4, 5, 6])]).unwrap();
        let names: Vec<_> = obs.entries().map(|(n, _)| n).collect();
        assert_eq!(names, ["zeta", "alpha"]);
        let json = serde_json::to_string(&obs).unwrap();
        assert_eq!(json, r#"{"zeta":[1,2,3],"alpha":[4,5,6]}"#);
        let back: Observation = serde_json::from_str(&json).unwrap();
        assert_eq!(back, obs);
    }

    #[test]
    fn rejects_bad_entries() {
        let mut obs = Observation::new();
        obs.insert("a".into(), [0, 0, 0]).unwrap();
        assert!(obs.insert("a".into(), [1, 1, 1]).is_err());
        assert!(obs.insert("leader_arm".into(), [1, 1, 1]).is_err());
        assert!(obs.insert("b".into(), [100, 1, 1]).is_err());
        assert!(serde_json::from_str::<Observation>(r#"{"a":[1,2,300]}"#).is_err());
    }

    #[test]
    fn distance_and_offset() {
        let a = Observation::from_entries([("x", [10, 10, 10]), ("y", [20, 20, 20])]).unwrap();
        let b = Observation::from_entries([("x", [12, 10, 10]), ("y", [20, 17, 20])]).unwrap();
        assert_eq!(a.l1_distance(&b), 5);
        assert_eq!(a.mean_offset_to(&b), [1.0, -1.5, 0.0]);
        let c = a.clone();
        assert_eq!(nearest_index(&a, [&b, &c, &c]), Some(1));
    }
}
