//! Kinematic desk-scale bimanual tasks with scripted experts.
//!
//! Worlds live in continuous grid units (one unit = one voxel edge, origin
//! at the workspace minimum). A keyframe teleports each gripper to the
//! centre of its voxel; closing within [`GRASP_RADIUS`] of a grasp site
//! attaches the object, opening releases it.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    from_grid_units, unbin_rotation, Arm, BimanualAction, ContinuousPose, DiscreteAction, Quaternion, WorkspaceBounds,
    VOXEL_MAX,
};
use crate::demos::{extract_keyframes, DemoError, Demonstration, EpisodeStep, DEFAULT_SPEED_EPS};
use crate::observation::Observation;
use crate::perception::synthetic::{desk_rig, sample_object, BoxObject};
use crate::perception::{build_observation, CentroidStrategy, PerceptionError, DEFAULT_PRUNE_VOXEL};

pub const GRASP_RADIUS: f64 = 2.0;
const HOME_RIGHT: [f64; 3] = [80.5, 50.5, 60.5];
const HOME_LEFT: [f64; 3] = [18.5, 50.5, 60.5];
const RIGHT_ROT: [u8; 3] = [36, 0, 18];
const LEFT_ROT: [u8; 3] = [36, 0, 54];
const SENSOR_NOISE: f64 = 0.001;
const SUBSTEPS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    Symmetric,
    Asymmetric,
    Loose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ObjectKind {
    /// Free body: follows its holders, drops to its rest height when released.
    Rigid,
    /// Static target registered by a closed gripper within grasp radius.
    Button,
    /// Slides along `axis` within `[min_travel, max_travel]` of its spawn
    /// position while held; stays put when released.
    Prismatic { axis: usize, min_travel: f64, max_travel: f64 },
}

/// Axis-aligned box in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Region {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub kind: ObjectKind,
    /// Uniform spawn box. With `relative_to` it is an offset box around the
    /// named, earlier object.
    pub spawn: Region,
    #[serde(default)]
    pub relative_to: Option<String>,
    /// Half extents in meters, used for the synthetic point clouds.
    pub half_extents: [f64; 3],
    /// Grasp sites relative to the object position, per arm.
    pub grasp_right: Option<[f64; 3]>,
    pub grasp_left: Option<[f64; 3]>,
}

impl ObjectSpec {
    pub fn site(&self, arm: Arm) -> Option<[f64; 3]> {
        match arm {
            Arm::Right => self.grasp_right,
            Arm::Left => self.grasp_left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum SuccessPredicate {
    /// `object` ends at least `min_rise` above its spawn height.
    Lifted { object: String, min_rise: f64 },
    /// `object` ends released inside `goal`.
    PlacedInRegion { object: String, goal: Region },
    /// Every listed button was pressed.
    AllPressed { buttons: Vec<String> },
    /// `item` ends released within `tolerance` (xy) of `drawer + interior`
    /// while the drawer is open at least `min_open`.
    ItemInDrawer {
        drawer: String,
        item: String,
        interior: [f64; 3],
        min_open: f64,
        tolerance: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub coupling: Coupling,
    pub objects: Vec<ObjectSpec>,
    pub success: SuccessPredicate,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error("invalid task '{task}': {msg}")]
    InvalidSpec { task: String, msg: String },
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Demo(#[from] DemoError),
}

fn region(min: [f64; 3], max: [f64; 3]) -> Region {
    Region { min, max }
}

impl TaskSpec {
    pub const BUILTIN: [&'static str; 4] = ["lift-sym", "handover", "dual-targets", "drawer-item"];

    pub fn builtin(name: &str) -> Result<Self, BenchError> {
        let spec = match name {
            "lift-sym" => TaskSpec {
                name: name.into(),
                coupling: Coupling::Symmetric,
                objects: vec![ObjectSpec {
                    name: "tray".into(),
                    kind: ObjectKind::Rigid,
                    spawn: region([44.0, 38.0, 20.0], [56.0, 62.0, 22.0]),
                    relative_to: None,
                    half_extents: [0.14, 0.05, 0.02],
                    grasp_right: Some([12.0, 0.0, 0.0]),
                    grasp_left: Some([-12.0, 0.0, 0.0]),
                }],
                success: SuccessPredicate::Lifted {
                    object: "tray".into(),
                    min_rise: 15.0,
                },
            },
            "handover" => TaskSpec {
                name: name.into(),
                coupling: Coupling::Asymmetric,
                objects: vec![ObjectSpec {
                    name: "cube".into(),
                    kind: ObjectKind::Rigid,
                    spawn: region([62.0, 36.0, 20.0], [74.0, 64.0, 22.0]),
                    relative_to: None,
                    half_extents: [0.025, 0.025, 0.025],
                    grasp_right: Some([3.0, 0.0, 0.0]),
                    grasp_left: Some([-3.0, 0.0, 0.0]),
                }],
                success: SuccessPredicate::PlacedInRegion {
                    object: "cube".into(),
                    goal: region([0.0, 0.0, 0.0], [35.0, 99.0, 30.0]),
                },
            },
            "dual-targets" => TaskSpec {
                name: name.into(),
                coupling: Coupling::Loose,
                objects: vec![
                    ObjectSpec {
                        name: "button_right".into(),
                        kind: ObjectKind::Button,
                        spawn: region([62.0, 30.0, 20.0], [76.0, 50.0, 21.0]),
                        relative_to: None,
                        half_extents: [0.02, 0.02, 0.01],
                        grasp_right: Some([0.0, 0.0, 1.0]),
                        grasp_left: Some([0.0, 0.0, 1.0]),
                    },
                    ObjectSpec {
                        name: "button_left".into(),
                        kind: ObjectKind::Button,
                        spawn: region([-37.0, 11.0, 0.0], [-35.0, 13.0, 0.0]),
                        relative_to: Some("button_right".into()),
                        half_extents: [0.02, 0.02, 0.01],
                        grasp_right: Some([0.0, 0.0, 1.0]),
                        grasp_left: Some([0.0, 0.0, 1.0]),
                    },
                ],
                success: SuccessPredicate::AllPressed {
                    buttons: vec!["button_right".into(), "button_left".into()],
                },
            },
            "drawer-item" => TaskSpec {
                name: name.into(),
                coupling: Coupling::Loose,
                objects: vec![
                    ObjectSpec {
                        name: "drawer_handle".into(),
                        kind: ObjectKind::Prismatic {
                            axis: 1,
                            min_travel: -20.0,
                            max_travel: 0.0,
                        },
                        spawn: region([30.0, 58.0, 30.0], [38.0, 66.0, 32.0]),
                        relative_to: None,
                        half_extents: [0.04, 0.01, 0.01],
                        grasp_right: None,
                        grasp_left: Some([0.0, -1.0, 0.0]),
                    },
                    ObjectSpec {
                        name: "item".into(),
                        kind: ObjectKind::Rigid,
                        spawn: region([31.0, -29.0, -10.0], [33.0, -27.0, -10.0]),
                        relative_to: Some("drawer_handle".into()),
                        half_extents: [0.02, 0.02, 0.03],
                        grasp_right: Some([0.0, 0.0, 2.0]),
                        grasp_left: None,
                    },
                ],
                success: SuccessPredicate::ItemInDrawer {
                    drawer: "drawer_handle".into(),
                    item: "item".into(),
                    interior: [6.0, 12.0, -4.0],
                    min_open: 10.0,
                    tolerance: 4.0,
                },
            },
            other => return Err(BenchError::UnknownTask(other.to_string())),
        };
        Ok(spec)
    }

    pub fn all_builtin() -> Vec<TaskSpec> {
        Self::BUILTIN
            .iter()
            .map(|n| Self::builtin(n).expect("builtin task"))
            .collect()
    }

    pub fn object(&self, name: &str) -> Option<(usize, &ObjectSpec)> {
        self.objects.iter().enumerate().find(|(_, o)| o.name == name)
    }

    /// Checks names, references and that every spawn region lies in the grid.
    pub fn validate(&self) -> Result<(), BenchError> {
        let err = |msg: String| BenchError::InvalidSpec {
            task: self.name.clone(),
            msg,
        };
        if self.objects.is_empty() {
            return Err(err("no objects".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if self.objects[..i].iter().any(|p| p.name == o.name) {
                return Err(err(format!("duplicate object '{}'", o.name)));
            }
            if (0..3).any(|a| o.spawn.min[a] > o.spawn.max[a]) {
                return Err(err(format!("empty spawn region for '{}'", o.name)));
            }
            let base = match &o.relative_to {
                None => Region {
                    min: [0.0; 3],
                    max: [0.0; 3],
                },
                Some(r) => {
                    let Some(p) = self.objects[..i].iter().find(|p| &p.name == r) else {
                        return Err(err(format!("'{}' is relative to unknown or later object '{r}'", o.name)));
                    };
                    absolute_spawn(self, p)
                }
            };
            let lo = (0..3).all(|a| base.min[a] + o.spawn.min[a] >= 0.0);
            let hi = (0..3).all(|a| base.max[a] + o.spawn.max[a] <= f64::from(VOXEL_MAX));
            if !(lo && hi) {
                return Err(err(format!("spawn region of '{}' leaves the grid", o.name)));
            }
        }
        let names: Vec<&str> = match &self.success {
            SuccessPredicate::Lifted { object, .. } | SuccessPredicate::PlacedInRegion { object, .. } => vec![object],
            SuccessPredicate::AllPressed { buttons } => buttons.iter().map(String::as_str).collect(),
            SuccessPredicate::ItemInDrawer { drawer, item, .. } => vec![drawer, item],
        };
        for n in names {
            if self.object(n).is_none() {
                return Err(err(format!("predicate names unknown object '{n}'")));
            }
        }
        Ok(())
    }
}

fn absolute_spawn(spec: &TaskSpec, o: &ObjectSpec) -> Region {
    match &o.relative_to {
        None => o.spawn,
        Some(r) => {
            let base = spec
                .object(r)
                .map(|(_, p)| absolute_spawn(spec, p))
                .unwrap_or(Region {
                    min: [0.0; 3],
                    max: [0.0; 3],
                });
            Region {
                min: std::array::from_fn(|a| base.min[a] + o.spawn.min[a]),
                max: std::array::from_fn(|a| base.max[a] + o.spawn.max[a]),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub name: String,
    /// Current position in grid units.
    pub position: [f64; 3],
    pub spawn_position: [f64; 3],
}

/// Ground-truth scene of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub task: TaskSpec,
    pub seed: u64,
    pub objects: Vec<ObjectState>,
}

impl World {
    pub fn position(&self, name: &str) -> Option<[f64; 3]> {
        self.objects.iter().find(|o| o.name == name).map(|o| o.position)
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Places the task's objects with a seeded generator and perceives them.
pub fn spawn(task: &TaskSpec, seed: u64) -> Result<(World, Observation), BenchError> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects: Vec<ObjectState> = Vec::with_capacity(task.objects.len());
    for o in &task.objects {
        let base = match &o.relative_to {
            Some(r) => objects.iter().find(|s| &s.name == r).map(|s| s.position).unwrap_or([0.0; 3]),
            None => [0.0; 3],
        };
        let position: [f64; 3] = std::array::from_fn(|a| base[a] + uniform(&mut rng, o.spawn.min[a], o.spawn.max[a]));
        objects.push(ObjectState {
            name: o.name.clone(),
            position,
            spawn_position: position,
        });
    }
    let world = World {
        task: task.clone(),
        seed,
        objects,
    };
    let obs = perceive(&world, &mut rng)?;
    Ok((world, obs))
}

fn perceive(world: &World, rng: &mut ChaCha8Rng) -> Result<Observation, BenchError> {
    let bounds = WorkspaceBounds::default();
    let cams = desk_rig(rng, 1.0);
    let mut clouds = IndexMap::new();
    for (spec, state) in world.task.objects.iter().zip(&world.objects) {
        let obj = BoxObject {
            center: from_grid_units(state.position, &bounds),
            half_extents: spec.half_extents,
        };
        clouds.insert(spec.name.clone(), sample_object(rng, &spec.name, &obj, &cams, SENSOR_NOISE));
    }
    Ok(build_observation(&clouds, CentroidStrategy::Prune, DEFAULT_PRUNE_VOXEL, &bounds)?)
}

/// One expert waypoint: target positions (grid units) and open flags.
#[derive(Debug, Clone, Copy)]
struct Waypoint {
    right: [f64; 3],
    left: [f64; 3],
    right_open: bool,
    left_open: bool,
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

struct Script {
    points: Vec<Waypoint>,
}

impl Script {
    fn new() -> Self {
        Self {
            points: vec![Waypoint {
                right: HOME_RIGHT,
                left: HOME_LEFT,
                right_open: true,
                left_open: true,
            }],
        }
    }

    fn last(&self) -> Waypoint {
        *self.points.last().expect("non-empty script")
    }

    fn push(&mut self, f: impl FnOnce(&mut Waypoint)) {
        let mut w = self.last();
        f(&mut w);
        self.points.push(w);
    }
}

fn site(world: &World, name: &str, arm: Arm) -> [f64; 3] {
    let (i, spec) = world.task.object(name).expect("object in task");
    add(world.objects[i].position, spec.site(arm).unwrap_or([0.0; 3]))
}

fn up(p: [f64; 3], dz: f64) -> [f64; 3] {
    [p[0], p[1], p[2] + dz]
}

fn expert_script(world: &World) -> Script {
    let mut s = Script::new();
    match &world.task.success {
        SuccessPredicate::Lifted { object, min_rise } => {
            let r = site(world, object, Arm::Right);
            let l = site(world, object, Arm::Left);
            s.push(|w| {
                w.right = up(r, 10.0);
                w.left = up(l, 10.0);
            });
            s.push(|w| {
                w.right = r;
                w.left = l;
            });
            s.push(|w| {
                w.right_open = false;
                w.left_open = false;
            });
            s.push(|w| {
                w.right = up(r, min_rise + 5.0);
                w.left = up(l, min_rise + 5.0);
            });
        }
        SuccessPredicate::PlacedInRegion { object, goal } => {
            let (i, spec) = world.task.object(object).expect("object");
            let c = world.objects[i].position;
            let sr = spec.grasp_right.unwrap_or([0.0; 3]);
            let sl = spec.grasp_left.unwrap_or([0.0; 3]);
            let hand = [50.5, c[1], 40.0];
            let goal_c = [
                (goal.min[0] + goal.max[0]) / 2.0,
                c[1],
                c[2],
            ];
            s.push(|w| w.right = up(add(c, sr), 10.0));
            s.push(|w| w.right = add(c, sr));
            s.push(|w| w.right_open = false);
            s.push(|w| w.right = add(hand, sr));
            s.push(|w| w.left = add(hand, add(sl, [-8.0, 0.0, 0.0])));
            s.push(|w| w.left = add(hand, sl));
            s.push(|w| w.left_open = false);
            s.push(|w| w.right_open = true);
            s.push(|w| w.right = add(hand, add(sr, [20.0, 0.0, 10.0])));
            s.push(|w| w.left = up(add(goal_c, sl), 8.0));
            s.push(|w| w.left = add(goal_c, sl));
            s.push(|w| w.left_open = true);
            s.push(|w| w.left = up(add(goal_c, sl), 12.0));
        }
        SuccessPredicate::AllPressed { buttons } => {
            let targets: Vec<(Arm, [f64; 3])> = buttons
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    let arm = if k % 2 == 0 { Arm::Right } else { Arm::Left };
                    (arm, site(world, b, arm))
                })
                .collect();
            let set = |w: &mut Waypoint, arm: Arm, p: [f64; 3]| match arm {
                Arm::Right => w.right = p,
                Arm::Left => w.left = p,
            };
            s.push(|w| {
                for &(arm, p) in &targets {
                    set(w, arm, up(p, 8.0));
                }
            });
            s.push(|w| {
                w.right_open = false;
                w.left_open = false;
            });
            s.push(|w| {
                for &(arm, p) in &targets {
                    set(w, arm, p);
                }
            });
            s.push(|w| {
                for &(arm, p) in &targets {
                    set(w, arm, up(p, 10.0));
                }
            });
        }
        SuccessPredicate::ItemInDrawer {
            drawer,
            item,
            interior,
            min_open,
            ..
        } => {
            let h = site(world, drawer, Arm::Left);
            let it = site(world, item, Arm::Right);
            let (di, _) = world.task.object(drawer).expect("drawer");
            let pull = -(min_open + 4.0);
            let inside = add(add(world.objects[di].position, *interior), [0.0, pull, 0.0]);
            let grip = add(inside, add(site(world, item, Arm::Right), {
                let p = world.position(item).expect("item");
                [-p[0], -p[1], -p[2]]
            }));
            s.push(|w| {
                w.left = add(h, [0.0, -8.0, 0.0]);
                w.right = up(it, 10.0);
            });
            s.push(|w| {
                w.left = h;
                w.right = it;
            });
            s.push(|w| {
                w.left_open = false;
                w.right_open = false;
            });
            s.push(|w| {
                w.left = add(h, [0.0, pull, 0.0]);
                w.right = up(it, 14.0);
            });
            s.push(|w| w.right = up(grip, 10.0));
            s.push(|w| w.right = grip);
            s.push(|w| w.right_open = true);
            s.push(|w| w.right = up(grip, 14.0));
        }
    }
    s
}

fn pose(p: [f64; 3], rot: [u8; 3], open: bool, bounds: &WorkspaceBounds) -> ContinuousPose {
    let clamped = p.map(|v| v.clamp(0.0, f64::from(VOXEL_MAX)));
    let orientation: Quaternion = unbin_rotation(rot).expect("valid bins");
    ContinuousPose::new(from_grid_units(clamped, bounds), orientation, if open { 1.0 } else { 0.0 })
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// Dense episode of the expert script: straight-line motions with a still
/// step at every waypoint.
pub fn expert_episode(world: &World) -> Vec<EpisodeStep> {
    let bounds = WorkspaceBounds::default();
    let script = expert_script(world);
    let step = |w: &Waypoint, rs: f64, ls: f64, terminal: bool| EpisodeStep {
        right: pose(w.right, RIGHT_ROT, w.right_open, &bounds),
        left: pose(w.left, LEFT_ROT, w.left_open, &bounds),
        right_joint_speed: rs,
        left_joint_speed: ls,
        is_terminal: terminal,
    };
    let mut steps = vec![step(&script.points[0], 0.0, 0.0, false)];
    for pair in script.points.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (dr, dl) = (dist(a.right, b.right), dist(a.left, b.left));
        if dr > 0.0 || dl > 0.0 {
            for k in 1..=SUBSTEPS {
                let t = k as f64 / SUBSTEPS as f64;
                let lerp = |p: [f64; 3], q: [f64; 3]| std::array::from_fn(|i| p[i] + (q[i] - p[i]) * t);
                let w = Waypoint {
                    right: lerp(a.right, b.right),
                    left: lerp(a.left, b.left),
                    ..a
                };
                steps.push(step(&w, dr / SUBSTEPS as f64, dl / SUBSTEPS as f64, false));
            }
        }
        steps.push(step(&b, 0.0, 0.0, false));
    }
    if let Some(last) = steps.last_mut() {
        last.is_terminal = true;
    }
    steps
}

/// Keyframed expert demonstration for `world`, paired with `obs`.
pub fn scripted_expert(world: &World, obs: &Observation) -> Result<Demonstration, BenchError> {
    let actions = extract_keyframes(&expert_episode(world), &WorkspaceBounds::default(), DEFAULT_SPEED_EPS)?;
    Ok(Demonstration::new(obs.clone(), actions)?)
}

/// Spawns `seed` and records the expert on it.
pub fn generate_demo(task: &TaskSpec, seed: u64) -> Result<Demonstration, BenchError> {
    let (world, obs) = spawn(task, seed)?;
    scripted_expert(&world, &obs)
}

/// The plan that keeps both arms at home with open grippers.
pub fn idle_plan() -> Vec<BimanualAction> {
    let v = |p: [f64; 3]| p.map(|x| x.floor() as u8);
    vec![BimanualAction::new(
        DiscreteAction::new(v(HOME_RIGHT), RIGHT_ROT, 1).expect("valid"),
        DiscreteAction::new(v(HOME_LEFT), LEFT_ROT, 1).expect("valid"),
    )]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub plan: Vec<BimanualAction>,
    pub final_objects: Vec<ObjectState>,
    /// Empty iff `success`.
    pub reason: String,
}

fn executed_position(v: [u8; 3]) -> [f64; 3] {
    v.map(|x| if x >= VOXEL_MAX { f64::from(VOXEL_MAX) } else { f64::from(x) + 0.5 })
}

#[derive(Debug, Clone, Default)]
struct Contact {
    holders: Vec<Arm>,
    ever_held: [bool; 2],
    pressed: [bool; 2],
}

fn arm_index(arm: Arm) -> usize {
    match arm {
        Arm::Right => 0,
        Arm::Left => 1,
    }
}

/// Runs `plan` open-loop on `world` and evaluates the task predicate.
pub fn execute(world: &World, plan: &[BimanualAction]) -> EpisodeResult {
    let task = &world.task;
    let mut objects = world.objects.clone();
    let mut contact: Vec<Contact> = vec![Contact::default(); objects.len()];
    let mut grippers = [HOME_RIGHT, HOME_LEFT];
    let mut open = [true, true];
    let mut drawer_open_at_release: Vec<Option<f64>> = vec![None; objects.len()];

    for action in plan {
        let targets = [executed_position(action.right.voxel), executed_position(action.left.voxel)];
        let deltas: [[f64; 3]; 2] = std::array::from_fn(|a| std::array::from_fn(|i| targets[a][i] - grippers[a][i]));

        for (i, spec) in task.objects.iter().enumerate() {
            let holders = contact[i].holders.clone();
            if holders.is_empty() {
                continue;
            }
            let moving: Vec<Arm> = holders
                .iter()
                .copied()
                .filter(|&a| deltas[arm_index(a)].iter().any(|d| d.abs() > 1e-9))
                .collect();
            if moving.is_empty() {
                continue;
            }
            if task.coupling == Coupling::Symmetric && holders.len() < 2 {
                contact[i].holders.clear();
                continue;
            }
            let mean: [f64; 3] = std::array::from_fn(|ax| {
                holders.iter().map(|&a| deltas[arm_index(a)][ax]).sum::<f64>() / holders.len() as f64
            });
            match spec.kind {
                ObjectKind::Rigid => {
                    for (p, m) in objects[i].position.iter_mut().zip(mean) {
                        *p += m;
                    }
                }
                ObjectKind::Prismatic {
                    axis,
                    min_travel,
                    max_travel,
                } => {
                    let base = objects[i].spawn_position[axis];
                    let travel = (objects[i].position[axis] + mean[axis] - base).clamp(min_travel, max_travel);
                    objects[i].position[axis] = base + travel;
                }
                ObjectKind::Button => {}
            }
        }
        grippers = targets;

        let bits = [action.right.is_open(), action.left.is_open()];
        for (a, arm) in [Arm::Right, Arm::Left].into_iter().enumerate() {
            if !bits[a] {
                for (i, spec) in task.objects.iter().enumerate() {
                    if spec.kind == ObjectKind::Button {
                        if let Some(s) = spec.site(arm) {
                            if dist(add(objects[i].position, s), grippers[a]) <= GRASP_RADIUS {
                                contact[i].pressed[a] = true;
                            }
                        }
                    }
                }
            }
            if open[a] && !bits[a] {
                let best = task
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.kind != ObjectKind::Button)
                    .filter_map(|(i, s)| s.site(arm).map(|off| (i, dist(add(objects[i].position, off), grippers[a]))))
                    .filter(|&(_, d)| d <= GRASP_RADIUS)
                    .min_by(|x, y| x.1.total_cmp(&y.1));
                if let Some((i, _)) = best {
                    contact[i].holders.push(arm);
                    contact[i].ever_held[a] = true;
                }
            } else if !open[a] && bits[a] {
                for (i, spec) in task.objects.iter().enumerate() {
                    if let Some(pos) = contact[i].holders.iter().position(|&h| h == arm) {
                        contact[i].holders.remove(pos);
                        if contact[i].holders.is_empty() && spec.kind == ObjectKind::Rigid {
                            drawer_open_at_release[i] = Some(drawer_opening(task, &objects));
                            objects[i].position[2] = objects[i].spawn_position[2].min(objects[i].position[2]);
                        }
                    }
                }
            }
            open[a] = bits[a];
        }
    }

    let reason = evaluate(task, &objects, &contact, &drawer_open_at_release);
    EpisodeResult {
        success: reason.is_empty(),
        plan: plan.to_vec(),
        final_objects: objects,
        reason,
    }
}

fn drawer_opening(task: &TaskSpec, objects: &[ObjectState]) -> f64 {
    task.objects
        .iter()
        .zip(objects)
        .filter_map(|(s, o)| match s.kind {
            ObjectKind::Prismatic { axis, .. } => Some((o.position[axis] - o.spawn_position[axis]).abs()),
            _ => None,
        })
        .fold(0.0, f64::max)
}

fn evaluate(
    task: &TaskSpec,
    objects: &[ObjectState],
    contact: &[Contact],
    release_opening: &[Option<f64>],
) -> String {
    let any_contact = contact
        .iter()
        .any(|c| c.ever_held.iter().chain(&c.pressed).any(|&b| b));
    if !any_contact {
        return "no_contact".into();
    }
    let idx = |n: &str| task.object(n).map(|(i, _)| i).expect("validated name");
    match &task.success {
        SuccessPredicate::Lifted { object, min_rise } => {
            let i = idx(object);
            let rise = objects[i].position[2] - objects[i].spawn_position[2];
            if rise >= *min_rise {
                String::new()
            } else if contact[i].ever_held.iter().filter(|&&b| b).count() < 2 {
                "single_grasp".into()
            } else {
                "not_lifted".into()
            }
        }
        SuccessPredicate::PlacedInRegion { object, goal } => {
            let i = idx(object);
            if !contact[i].holders.is_empty() {
                "not_released".into()
            } else if goal.contains(objects[i].position) {
                String::new()
            } else if !contact[i].ever_held[arm_index(Arm::Left)] && !contact[i].ever_held[arm_index(Arm::Right)] {
                "no_contact".into()
            } else {
                "not_in_goal".into()
            }
        }
        SuccessPredicate::AllPressed { buttons } => {
            let missed: Vec<&str> = buttons
                .iter()
                .filter(|b| !contact[idx(b)].pressed.iter().any(|&p| p))
                .map(String::as_str)
                .collect();
            if missed.is_empty() {
                String::new()
            } else {
                format!("missed:{}", missed.join(","))
            }
        }
        SuccessPredicate::ItemInDrawer {
            drawer,
            item,
            interior,
            min_open,
            tolerance,
        } => {
            let (d, it) = (idx(drawer), idx(item));
            if !contact[it].ever_held.iter().any(|&b| b) {
                return "item_not_grasped".into();
            }
            if !contact[it].holders.is_empty() {
                return "not_released".into();
            }
            let opening = release_opening[it].unwrap_or(0.0);
            if opening < *min_open {
                return "drawer_closed".into();
            }
            let target = add(objects[d].position, *interior);
            let dxy = ((objects[it].position[0] - target[0]).powi(2) + (objects[it].position[1] - target[1]).powi(2)).sqrt();
            if dxy <= *tolerance {
                String::new()
            } else {
                "misplaced".into()
            }
        }
    }
}
