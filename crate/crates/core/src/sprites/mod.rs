//! Deterministic 2D multi-object manipulation environment.
//!
//! A point agent with a gripper moves on a 112×112 tabletop among colored
//! sprites (circles, squares, triangles), containers, and task-specific
//! goals. Dynamics are exact `f32` arithmetic: a `(seed, action sequence)`
//! pair fully determines every step, bit for bit. Visual shifts
//! (distractors, background textures, lighting) perturb rendering and reset
//! sampling only — never the dynamics or the success rule of the base
//! scene.

pub mod expert;
pub mod render;

pub use expert::{scripted_expert, Expert};
pub use render::{render, texture_bank_size, ViewId};

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Arena side length in pixels.
pub const ARENA: f32 = 112.0;
/// Largest per-step agent displacement along each axis, in pixels.
pub const MAX_STEP: f32 = 6.0;
/// Collision radius of the agent body.
pub const AGENT_RADIUS: f32 = 3.0;
/// Objects within this distance can be grasped when the grip closes.
pub const GRASP_RADIUS: f32 = 12.0;
/// Minimum displacement of the drawer handle that counts as open.
pub const DRAWER_OPEN_DIST: f32 = 18.0;
/// Success radius for reach (agent to goal) in pixels.
pub const REACH_TOL: f32 = 5.0;
/// Success radius for push (object to goal) in pixels.
pub const PUSH_TOL: f32 = 7.0;
/// Margin kept from the arena border when sampling positions.
pub const PLACE_MARGIN: f32 = 14.0;

pub const DEFAULT_HORIZON: u32 = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpriteShape {
    Circle,
    Square,
    Triangle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: SpriteShape,
    pub color: [u8; 3],
    /// Radius-like size in pixels.
    pub size: f32,
    pub pos: [f32; 2],
    pub held: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Container {
    pub pos: [f32; 2],
    /// Half-extents of the axis-aligned region.
    pub extent: [f32; 2],
    pub color: [u8; 3],
}

impl Container {
    pub fn contains(&self, p: [f32; 2]) -> bool {
        (p[0] - self.pos[0]).abs() <= self.extent[0] && (p[1] - self.pos[1]).abs() <= self.extent[1]
    }
}

/// A circular goal marker drawn into the scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalMarker {
    pub pos: [f32; 2],
    pub radius: f32,
    pub color: [u8; 3],
    /// Filled disc (push/pick targets) or ring (reach).
    pub filled: bool,
}

/// A horizontal rail constraining the drawer handle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rail {
    pub y: f32,
    pub x_min: f32,
    pub x_max: f32,
    /// Handle x at reset; displacement is measured from here.
    pub x_rest: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub objects: Vec<SceneObject>,
    pub agent_pos: [f32; 2],
    pub grip: f32,
    pub containers: Vec<Container>,
    pub goal: Option<GoalMarker>,
    pub rail: Option<Rail>,
    pub step: u32,
    /// Index into `objects` of the held object, if any.
    pub held_index: Option<usize>,
}

impl SceneState {
    pub fn proprio(&self) -> Vec<f32> {
        vec![self.agent_pos[0] / ARENA, self.agent_pos[1] / ARENA, self.grip]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Reach,
    Push,
    PickPlace,
    BinSort,
    SlideOpen,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Reach,
        TaskKind::Push,
        TaskKind::PickPlace,
        TaskKind::BinSort,
        TaskKind::SlideOpen,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Reach => "reach",
            TaskKind::Push => "push",
            TaskKind::PickPlace => "pick_place",
            TaskKind::BinSort => "bin_sort",
            TaskKind::SlideOpen => "slide_open",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        TaskKind::ALL
            .iter()
            .copied()
            .find(|t| t.name() == name)
            .ok_or_else(|| Error::contract(format!("unknown task id: {name}")))
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub horizon: u32,
    pub language: String,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        let language = match kind {
            TaskKind::Reach => "move the gripper onto the green target".to_string(),
            TaskKind::Push => "push the red block into the goal zone".to_string(),
            TaskKind::PickPlace => "pick up the blue block and place it on the plate".to_string(),
            TaskKind::BinSort => "sort each block into the bin of matching color".to_string(),
            TaskKind::SlideOpen => "slide the drawer handle open to the right".to_string(),
        };
        TaskSpec {
            kind,
            horizon: DEFAULT_HORIZON,
            language,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub gain: f32,
    pub tint: [f32; 3],
}

impl Default for Lighting {
    fn default() -> Self {
        Lighting {
            gain: 1.0,
            tint: [1.0, 1.0, 1.0],
        }
    }
}

impl Lighting {
    pub fn is_identity(&self) -> bool {
        self.gain == 1.0 && self.tint == [1.0, 1.0, 1.0]
    }
}

/// Parametric visual shift applied to an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    /// Extra objects sampled at reset (never overlapping target or goal).
    pub distractors: u32,
    /// Size range of distractor sprites.
    pub distractor_size: [f32; 2],
    /// Background texture id from the bank; `None` keeps the flat
    /// background.
    pub texture: Option<u32>,
    pub lighting: Lighting,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            distractors: 0,
            distractor_size: [5.0, 9.0],
            texture: None,
            lighting: Lighting::default(),
        }
    }
}

impl ShiftSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.distractors == 0 && self.texture.is_none() && self.lighting.is_identity()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.3..=1.7).contains(&self.lighting.gain) {
            return Err(Error::contract("lighting gain must lie in [0.3, 1.7]"));
        }
        if let Some(t) = self.texture {
            if t as usize >= texture_bank_size() {
                return Err(Error::contract(format!("texture id {t} outside bank")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Observation {
    /// One frame per configured view.
    pub frames: Vec<image::RgbImage>,
    pub proprio: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub obs: Observation,
    pub success: bool,
    pub done: bool,
    pub info: BTreeMap<String, f64>,
}

pub mod palette {
    pub const RED: [u8; 3] = [200, 40, 40];
    pub const GREEN: [u8; 3] = [40, 180, 60];
    pub const BLUE: [u8; 3] = [50, 80, 200];
    pub const YELLOW: [u8; 3] = [220, 200, 50];
    pub const MAGENTA: [u8; 3] = [180, 60, 180];
    pub const CYAN: [u8; 3] = [60, 190, 190];
    pub const ORANGE: [u8; 3] = [230, 140, 40];
    pub const PURPLE: [u8; 3] = [120, 60, 200];
    pub const BIN_RED: [u8; 3] = [230, 150, 150];
    pub const BIN_BLUE: [u8; 3] = [150, 160, 230];
    pub const PLATE: [u8; 3] = [210, 210, 200];
    pub const DRAWER: [u8; 3] = [140, 100, 70];
    pub const HANDLE: [u8; 3] = [60, 50, 40];

    pub const DISTRACTORS: [[u8; 3]; 5] = [YELLOW, MAGENTA, CYAN, ORANGE, PURPLE];
}

/// The environment. One instance per episode thread; instances share no
/// state.
#[derive(Clone, Debug)]
pub struct SpriteEnv {
    pub task: TaskSpec,
    pub shift: ShiftSpec,
    pub views: Vec<ViewId>,
    state: SceneState,
    /// Index of the task-relevant object (push/pick/slide handle).
    target: usize,
    done: bool,
    succeeded: bool,
    /// A just-released object rests under the open gripper until the agent
    /// separates past the standoff once; then normal pushing resumes.
    push_immune: Option<usize>,
}

impl SpriteEnv {
    /// Deterministic reset: scene sampled from `seed` within task
    /// constraints, shift applied. Distractor placement retries are
    /// bounded; exhausting them is a reset error.
    pub fn reset(
        task: &TaskSpec,
        shift: &ShiftSpec,
        seed: u64,
        views: &[ViewId],
    ) -> Result<(SpriteEnv, StepResult)> {
        shift.validate()?;
        if views.is_empty() {
            return Err(Error::contract("at least one view required"));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut sample_pos = |rng: &mut ChaCha12Rng| -> [f32; 2] {
            let span = ARENA - 2.0 * PLACE_MARGIN;
            [
                PLACE_MARGIN + rng.gen::<f32>() * span,
                PLACE_MARGIN + rng.gen::<f32>() * span,
            ]
        };

        let mut objects = Vec::new();
        let mut containers = Vec::new();
        let mut goal = None;
        let mut rail = None;
        let target;

        match task.kind {
            TaskKind::Reach => {
                goal = Some(GoalMarker {
                    pos: sample_pos(&mut rng),
                    radius: 6.0,
                    color: palette::GREEN,
                    filled: false,
                });
                target = 0;
            }
            TaskKind::Push => {
                let obj_pos = sample_pos(&mut rng);
                let goal_pos = sample_apart(&mut rng, &mut sample_pos, obj_pos, 35.0)?;
                objects.push(SceneObject {
                    shape: SpriteShape::Square,
                    color: palette::RED,
                    size: 6.0,
                    pos: obj_pos,
                    held: false,
                });
                goal = Some(GoalMarker {
                    pos: goal_pos,
                    radius: 8.0,
                    color: [175, 220, 180],
                    filled: true,
                });
                target = 0;
            }
            TaskKind::PickPlace => {
                let obj_pos = sample_pos(&mut rng);
                let goal_pos = sample_apart(&mut rng, &mut sample_pos, obj_pos, 35.0)?;
                objects.push(SceneObject {
                    shape: SpriteShape::Circle,
                    color: palette::BLUE,
                    size: 6.0,
                    pos: obj_pos,
                    held: false,
                });
                containers.push(Container {
                    pos: goal_pos,
                    extent: [10.0, 10.0],
                    color: palette::PLATE,
                });
                target = 0;
            }
            TaskKind::BinSort => {
                let bin_a = sample_pos(&mut rng);
                let bin_b = sample_apart(&mut rng, &mut sample_pos, bin_a, 40.0)?;
                containers.push(Container { pos: bin_a, extent: [10.0, 10.0], color: palette::BIN_RED });
                containers.push(Container { pos: bin_b, extent: [10.0, 10.0], color: palette::BIN_BLUE });
                for (i, color) in [palette::RED, palette::BLUE].iter().enumerate() {
                    let pos = sample_clear(&mut rng, &mut sample_pos, &[bin_a, bin_b], 18.0, &objects, 16.0)?;
                    objects.push(SceneObject {
                        shape: if i == 0 { SpriteShape::Square } else { SpriteShape::Circle },
                        color: *color,
                        size: 6.0,
                        pos,
                        held: false,
                    });
                }
                target = 0;
            }
            TaskKind::SlideOpen => {
                let y = 40.0 + rng.gen::<f32>() * 32.0;
                let x_rest = 24.0 + rng.gen::<f32>() * 20.0;
                rail = Some(Rail { y, x_min: x_rest, x_max: x_rest + 44.0, x_rest });
                containers.push(Container {
                    pos: [x_rest + 22.0, y + 12.0],
                    extent: [28.0, 6.0],
                    color: palette::DRAWER,
                });
                objects.push(SceneObject {
                    shape: SpriteShape::Square,
                    color: palette::HANDLE,
                    size: 5.0,
                    pos: [x_rest, y],
                    held: false,
                });
                target = 0;
            }
        }

        // Agent spawns clear of the target object so grasping is a choice,
        // not an accident.
        let agent_pos = {
            let mut tries = 0;
            loop {
                let p = sample_pos(&mut rng);
                let clear = objects.iter().all(|o| dist(p, o.pos) > 20.0);
                if clear {
                    break p;
                }
                tries += 1;
                if tries > 100 {
                    return Err(Error::Reset("could not place agent".into()));
                }
            }
        };

        // Distractors never overlap the target object or the goal region.
        for d in 0..shift.distractors {
            let mut tries = 0;
            let pos = loop {
                let p = sample_pos(&mut rng);
                let size_ok = objects.iter().all(|o| dist(p, o.pos) > o.size + shift.distractor_size[1] + 4.0);
                let goal_ok = match &goal {
                    Some(g) => dist(p, g.pos) > g.radius + shift.distractor_size[1] + 4.0,
                    None => true,
                };
                let bin_ok = containers.iter().all(|c| {
                    !(c.contains(p)
                        || dist(p, c.pos) < c.extent[0] + shift.distractor_size[1] + 4.0)
                });
                let agent_ok = dist(p, agent_pos) > 16.0;
                if size_ok && goal_ok && bin_ok && agent_ok {
                    break p;
                }
                tries += 1;
                if tries > 100 {
                    return Err(Error::Reset(format!("could not place distractor {d}")));
                }
            };
            let size = shift.distractor_size[0]
                + rng.gen::<f32>() * (shift.distractor_size[1] - shift.distractor_size[0]);
            let shape = match rng.gen_range(0..3u32) {
                0 => SpriteShape::Circle,
                1 => SpriteShape::Square,
                _ => SpriteShape::Triangle,
            };
            let color = palette::DISTRACTORS[rng.gen_range(0..palette::DISTRACTORS.len())];
            objects.push(SceneObject { shape, color, size, pos, held: false });
        }

        let state = SceneState {
            objects,
            agent_pos,
            grip: 0.0,
            containers,
            goal,
            rail,
            step: 0,
            held_index: None,
        };
        let env = SpriteEnv {
            task: task.clone(),
            shift: shift.clone(),
            views: views.to_vec(),
            state,
            target,
            done: false,
            succeeded: false,
            push_immune: None,
        };
        let result = env.observe(false);
        Ok((env, result))
    }

    pub fn state(&self) -> &SceneState {
        &self.state
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn succeeded(&self) -> bool {
        self.succeeded
    }

    fn observe(&self, clipped: bool) -> StepResult {
        let frames = self
            .views
            .iter()
            .map(|v| render(&self.state, &self.shift, *v))
            .collect();
        let mut info = BTreeMap::new();
        info.insert("step".to_string(), self.state.step as f64);
        if clipped {
            info.insert("action_clipped".to_string(), 1.0);
        }
        StepResult {
            obs: Observation {
                frames,
                proprio: self.state.proprio(),
            },
            success: self.succeeded,
            done: self.done,
            info,
        }
    }

    /// Applies `(dx, dy, grip_target)`, each in `[-1, 1]` (out-of-range
    /// values clip and are flagged in `info`). Position deltas integrate
    /// with a per-step cap; a grasp succeeds when `grip_target > 0.5` with
    /// an object inside the grasp radius.
    pub fn step(&mut self, action: &[f32]) -> Result<StepResult> {
        if self.done {
            return Err(Error::contract("episode is done; reset the environment"));
        }
        if action.len() != 3 {
            return Err(Error::contract(format!(
                "action must have 3 components, got {}",
                action.len()
            )));
        }
        if !action.iter().all(|a| a.is_finite()) {
            return Err(Error::contract("action must be finite"));
        }
        let clipped = action.iter().any(|a| *a < -1.0 || *a > 1.0);
        let a: Vec<f32> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();

        // agent motion
        self.state.agent_pos[0] = (self.state.agent_pos[0] + a[0] * MAX_STEP).clamp(0.0, ARENA - 1.0);
        self.state.agent_pos[1] = (self.state.agent_pos[1] + a[1] * MAX_STEP).clamp(0.0, ARENA - 1.0);
        let grip_target = a[2];
        self.state.grip = grip_target.clamp(0.0, 1.0);

        // grasp / release
        match self.state.held_index {
            Some(idx) => {
                if grip_target <= 0.5 {
                    self.state.objects[idx].held = false;
                    self.state.held_index = None;
                    self.push_immune = Some(idx);
                }
            }
            None => {
                if grip_target > 0.5 {
                    let mut best: Option<(usize, f32)> = None;
                    for (i, o) in self.state.objects.iter().enumerate() {
                        let d = dist(self.state.agent_pos, o.pos);
                        if d <= GRASP_RADIUS && best.map_or(true, |(_, bd)| d < bd) {
                            best = Some((i, d));
                        }
                    }
                    if let Some((i, _)) = best {
                        self.state.objects[i].held = true;
                        self.state.held_index = Some(i);
                        if self.push_immune == Some(i) {
                            self.push_immune = None;
                        }
                    }
                }
            }
        }

        // held object tracks the agent; loose objects get pushed
        for i in 0..self.state.objects.len() {
            if self.state.held_index == Some(i) {
                self.state.objects[i].pos = self.state.agent_pos;
            } else {
                let o = &self.state.objects[i];
                let standoff = AGENT_RADIUS + o.size;
                let d = dist(self.state.agent_pos, o.pos);
                if self.push_immune == Some(i) {
                    if d >= standoff {
                        self.push_immune = None;
                    }
                } else if d < standoff {
                    let dir = if d > 1e-3 {
                        [
                            (o.pos[0] - self.state.agent_pos[0]) / d,
                            (o.pos[1] - self.state.agent_pos[1]) / d,
                        ]
                    } else {
                        [1.0, 0.0]
                    };
                    // displacement capped at the per-step motion limit
                    let shove = (standoff - d).min(MAX_STEP);
                    self.state.objects[i].pos = [
                        o.pos[0] + dir[0] * shove,
                        o.pos[1] + dir[1] * shove,
                    ];
                }
            }
            // rail constraint (drawer handle is object 0 of slide_open)
            if let (Some(rail), true) = (&self.state.rail, i == self.target) {
                self.state.objects[i].pos[1] = rail.y;
                self.state.objects[i].pos[0] =
                    self.state.objects[i].pos[0].clamp(rail.x_min, rail.x_max);
            }
            self.state.objects[i].pos[0] = self.state.objects[i].pos[0].clamp(0.0, ARENA - 1.0);
            self.state.objects[i].pos[1] = self.state.objects[i].pos[1].clamp(0.0, ARENA - 1.0);
        }

        self.state.step += 1;
        self.succeeded = self.evaluate_success();
        self.done = self.succeeded || self.state.step >= self.task.horizon;
        Ok(self.observe(clipped))
    }

    /// Success depends only on scene geometry, never on rendering.
    fn evaluate_success(&self) -> bool {
        let st = &self.state;
        match self.task.kind {
            TaskKind::Reach => {
                let g = st.goal.as_ref().expect("reach has a goal");
                dist(st.agent_pos, g.pos) <= REACH_TOL
            }
            TaskKind::Push => {
                let g = st.goal.as_ref().expect("push has a goal");
                dist(st.objects[self.target].pos, g.pos) <= PUSH_TOL
            }
            TaskKind::PickPlace => {
                let c = &st.containers[0];
                let o = &st.objects[self.target];
                c.contains(o.pos) && !o.held
            }
            TaskKind::BinSort => {
                let red_in = st.containers[0].contains(st.objects[0].pos) && !st.objects[0].held;
                let blue_in = st.containers[1].contains(st.objects[1].pos) && !st.objects[1].held;
                red_in && blue_in
            }
            TaskKind::SlideOpen => {
                let rail = st.rail.as_ref().expect("slide_open has a rail");
                st.objects[self.target].pos[0] - rail.x_rest >= DRAWER_OPEN_DIST
            }
        }
    }

    /// Rasterizer-exact instance labels on the top view: background 0,
    /// objects 1..=n in draw order. Containers, goals, and the agent are
    /// background.
    pub fn ground_truth_masks(&self) -> ndarray::Array2<u8> {
        render::instance_masks(&self.state)
    }
}

/// Samples an object-discovery scene: 2–4 sprites of assorted shape and
/// color on the bare table, agent parked anywhere clear. Used to build
/// encoder-pretraining frames that are not tied to any task.
pub fn sample_discovery_scene(rng: &mut ChaCha12Rng) -> SceneState {
    let span = ARENA - 2.0 * PLACE_MARGIN;
    let mut sample = |rng: &mut ChaCha12Rng| -> [f32; 2] {
        [
            PLACE_MARGIN + rng.gen::<f32>() * span,
            PLACE_MARGIN + rng.gen::<f32>() * span,
        ]
    };
    let colors = [
        palette::RED,
        palette::GREEN,
        palette::BLUE,
        palette::YELLOW,
        palette::MAGENTA,
        palette::CYAN,
        palette::ORANGE,
        palette::PURPLE,
    ];
    let n = rng.gen_range(2..=4usize);
    let mut objects: Vec<SceneObject> = Vec::new();
    for _ in 0..n {
        let mut pos = sample(rng);
        for _ in 0..50 {
            if objects.iter().all(|o| dist(pos, o.pos) > 22.0) {
                break;
            }
            pos = sample(rng);
        }
        let shape = match rng.gen_range(0..3u32) {
            0 => SpriteShape::Circle,
            1 => SpriteShape::Square,
            _ => SpriteShape::Triangle,
        };
        objects.push(SceneObject {
            shape,
            color: colors[rng.gen_range(0..colors.len())],
            size: 6.0 + rng.gen::<f32>() * 3.0,
            pos,
            held: false,
        });
    }
    let mut agent_pos = sample(rng);
    for _ in 0..50 {
        if objects.iter().all(|o| dist(agent_pos, o.pos) > 18.0) {
            break;
        }
        agent_pos = sample(rng);
    }
    SceneState {
        objects,
        agent_pos,
        grip: 0.0,
        containers: Vec::new(),
        goal: None,
        rail: None,
        step: 0,
        held_index: None,
    }
}

fn dist(a: [f32; 2], b: [f32; 2]) -> f32 {
    ((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])).sqrt()
}

fn sample_apart(
    rng: &mut ChaCha12Rng,
    sample: &mut impl FnMut(&mut ChaCha12Rng) -> [f32; 2],
    from: [f32; 2],
    min_dist: f32,
) -> Result<[f32; 2]> {
    for _ in 0..100 {
        let p = sample(rng);
        if dist(p, from) >= min_dist {
            return Ok(p);
        }
    }
    Err(Error::Reset("could not sample a separated position".into()))
}

fn sample_clear(
    rng: &mut ChaCha12Rng,
    sample: &mut impl FnMut(&mut ChaCha12Rng) -> [f32; 2],
    keep_out: &[[f32; 2]],
    keep_out_dist: f32,
    objects: &[SceneObject],
    object_dist: f32,
) -> Result<[f32; 2]> {
    for _ in 0..100 {
        let p = sample(rng);
        let clear_points = keep_out.iter().all(|q| dist(p, *q) >= keep_out_dist);
        let clear_objects = objects.iter().all(|o| dist(p, o.pos) >= object_dist);
        if clear_points && clear_objects {
            return Ok(p);
        }
    }
    Err(Error::Reset("could not sample a clear position".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use render::ViewId;

    fn reset_pair(task: TaskKind, shift: &ShiftSpec, seed: u64) -> (SpriteEnv, StepResult) {
        SpriteEnv::reset(&TaskSpec::new(task), shift, seed, &[ViewId::Top, ViewId::Side]).unwrap()
    }

    #[test]
    fn reset_is_deterministic_bit_for_bit() {
        let shift = ShiftSpec {
            distractors: 2,
            texture: Some(1),
            ..Default::default()
        };
        let (_, a) = reset_pair(TaskKind::PickPlace, &shift, 42);
        let (_, b) = reset_pair(TaskKind::PickPlace, &shift, 42);
        assert_eq!(a.obs.frames, b.obs.frames);
        assert_eq!(a.obs.proprio, b.obs.proprio);
    }

    #[test]
    fn full_episodes_are_deterministic() {
        let actions: Vec<[f32; 3]> = (0..40)
            .map(|i| {
                let t = i as f32 * 0.37;
                [t.sin(), (t * 1.3).cos(), if i % 7 == 0 { 1.0 } else { -0.2 }]
            })
            .collect();
        let run = || {
            let (mut env, _) = reset_pair(TaskKind::BinSort, &ShiftSpec::identity(), 9);
            let mut frames = Vec::new();
            for a in &actions {
                let r = env.step(a).unwrap();
                frames.push(r.obs.frames);
                if r.done {
                    break;
                }
            }
            frames
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn distractors_add_objects() {
        let shift = ShiftSpec {
            distractors: 3,
            ..Default::default()
        };
        let (base, _) = reset_pair(TaskKind::Push, &ShiftSpec::identity(), 5);
        let (shifted, _) = reset_pair(TaskKind::Push, &shift, 5);
        assert_eq!(
            shifted.state().objects.len(),
            base.state().objects.len() + 3
        );
    }

    #[test]
    fn identity_shift_matches_default_render() {
        let explicit = ShiftSpec {
            distractors: 0,
            texture: None,
            lighting: Lighting {
                gain: 1.0,
                tint: [1.0, 1.0, 1.0],
            },
            ..Default::default()
        };
        let (_, a) = reset_pair(TaskKind::Reach, &ShiftSpec::identity(), 11);
        let (_, b) = reset_pair(TaskKind::Reach, &explicit, 11);
        assert_eq!(a.obs.frames, b.obs.frames);
    }

    #[test]
    fn zero_action_only_advances_the_clock() {
        let (mut env, _) = reset_pair(TaskKind::PickPlace, &ShiftSpec::identity(), 3);
        let before = env.state().clone();
        env.step(&[0.0, 0.0, 0.0]).unwrap();
        let after = env.state();
        assert_eq!(after.step, before.step + 1);
        assert_eq!(after.agent_pos, before.agent_pos);
        assert_eq!(after.objects, before.objects);
        assert_eq!(after.grip, before.grip);
    }

    #[test]
    fn grip_near_object_grasps_it() {
        let (mut env, _) = reset_pair(TaskKind::PickPlace, &ShiftSpec::identity(), 3);
        // walk the agent onto the object deterministically
        for _ in 0..60 {
            let st = env.state();
            let obj = st.objects[0].pos;
            let d = dist(st.agent_pos, obj);
            if d <= GRASP_RADIUS - 2.0 {
                break;
            }
            let a = [
                ((obj[0] - st.agent_pos[0]) / MAX_STEP).clamp(-1.0, 1.0),
                ((obj[1] - st.agent_pos[1]) / MAX_STEP).clamp(-1.0, 1.0),
                -1.0,
            ];
            env.step(&a).unwrap();
        }
        env.step(&[0.0, 0.0, 1.0]).unwrap();
        assert!(env.state().objects[0].held);
        assert_eq!(env.state().held_index, Some(0));
    }

    #[test]
    fn out_of_range_action_clips_and_flags() {
        let (mut env, _) = reset_pair(TaskKind::Reach, &ShiftSpec::identity(), 3);
        let r = env.step(&[4.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.info.get("action_clipped"), Some(&1.0));
    }

    #[test]
    fn shifts_never_change_dynamics_or_success() {
        // same seed, same action sequence: texture/lighting shifts leave
        // every scene state identical; only pixels differ
        let shift = ShiftSpec {
            texture: Some(4),
            lighting: Lighting {
                gain: 0.6,
                tint: [1.0, 0.9, 0.8],
            },
            ..Default::default()
        };
        let actions: Vec<[f32; 3]> = (0..50)
            .map(|i| [(i as f32 * 0.3).sin(), 0.6, if i > 30 { 1.0 } else { -1.0 }])
            .collect();
        let (mut base, _) = reset_pair(TaskKind::PickPlace, &ShiftSpec::identity(), 21);
        let (mut shifted, _) = reset_pair(TaskKind::PickPlace, &shift, 21);
        for a in &actions {
            if base.is_done() || shifted.is_done() {
                break;
            }
            let rb = base.step(a).unwrap();
            let rs = shifted.step(a).unwrap();
            assert_eq!(base.state(), shifted.state());
            assert_eq!(rb.success, rs.success);
            assert_eq!(rb.done, rs.done);
        }
    }

    #[test]
    fn distractors_clear_of_target_and_goal() {
        for seed in 0..300 {
            let shift = ShiftSpec {
                distractors: 4,
                ..Default::default()
            };
            let (env, _) = match SpriteEnv::reset(
                &TaskSpec::new(TaskKind::Push),
                &shift,
                seed,
                &[ViewId::Top],
            ) {
                Ok(x) => x,
                Err(Error::Reset(_)) => continue, // bounded rejection may give up
                Err(e) => panic!("unexpected error: {e}"),
            };
            let st = env.state();
            let target = &st.objects[0];
            let goal = st.goal.as_ref().unwrap();
            for d in st.objects.iter().skip(1) {
                let to_target = dist(d.pos, target.pos);
                assert!(
                    to_target > d.size + target.size,
                    "seed {seed}: distractor overlaps target"
                );
                let to_goal = dist(d.pos, goal.pos);
                assert!(
                    to_goal > goal.radius + d.size,
                    "seed {seed}: distractor overlaps goal"
                );
            }
        }
    }

    #[test]
    fn success_implies_done() {
        let (mut env, _) = reset_pair(TaskKind::Reach, &ShiftSpec::identity(), 2);
        let expert = scripted_expert(TaskKind::Reach).unwrap();
        loop {
            let a = expert.act(&env).unwrap();
            let r = env.step(&a).unwrap();
            if r.success {
                assert!(r.done);
                break;
            }
            assert!(!env.is_done() || !r.success);
            if r.done {
                break;
            }
        }
    }

    #[test]
    fn stepping_done_episode_is_an_error() {
        let (mut env, _) = reset_pair(TaskKind::Reach, &ShiftSpec::identity(), 2);
        let expert = scripted_expert(TaskKind::Reach).unwrap();
        while !env.is_done() {
            let a = expert.act(&env).unwrap();
            env.step(&a).unwrap();
        }
        assert!(matches!(
            env.step(&[0.0, 0.0, 0.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn bad_lighting_gain_rejected() {
        let shift = ShiftSpec {
            lighting: Lighting {
                gain: 2.5,
                tint: [1.0; 3],
            },
            ..Default::default()
        };
        assert!(SpriteEnv::reset(
            &TaskSpec::new(TaskKind::Reach),
            &shift,
            0,
            &[ViewId::Top]
        )
        .is_err());
    }
}
