//! Scripted experts: deterministic proportional waypoint controllers.
//!
//! Each expert is a pure function of the current scene state (no internal
//! step counters), so behavior is reproducible and robust to interruptions:
//! approach → grasp → transport → release, per task.

use super::{
    SpriteEnv, TaskKind, AGENT_RADIUS, DRAWER_OPEN_DIST, GRASP_RADIUS, MAX_STEP,
};
use crate::error::{Error, Result};

/// A scripted controller for one task family.
#[derive(Clone, Copy, Debug)]
pub struct Expert {
    task: TaskKind,
}

/// Returns the waypoint controller for a supported task.
pub fn scripted_expert(task: TaskKind) -> Result<Expert> {
    // every task family ships a controller; the Result guards future tasks
    Ok(Expert { task })
}

impl Expert {
    pub fn task(&self) -> TaskKind {
        self.task
    }

    /// Action for the current state, always within `[-1, 1]`.
    pub fn act(&self, env: &SpriteEnv) -> Result<[f32; 3]> {
        if env.task.kind != self.task {
            return Err(Error::contract("expert/task mismatch"));
        }
        let st = env.state();
        let agent = st.agent_pos;
        let action = match self.task {
            TaskKind::Reach => {
                let goal = st.goal.as_ref().expect("reach goal").pos;
                steer(agent, goal, -1.0)
            }
            TaskKind::Push => {
                let o = &st.objects[env.target_index()];
                let goal = st.goal.as_ref().expect("push goal").pos;
                let to_goal = direction(o.pos, goal);
                // press point: slightly inside the object's rear along the
                // object→goal line; holding it there makes the overlap
                // resolution walk the object toward the goal
                let standoff = AGENT_RADIUS + o.size;
                let press = clamp_arena([
                    o.pos[0] - to_goal[0] * (standoff - 4.0),
                    o.pos[1] - to_goal[1] * (standoff - 4.0),
                ]);
                let waypoint = route_around(agent, press, &[o.pos], standoff + 2.0);
                steer(agent, waypoint, -1.0)
            }
            TaskKind::PickPlace => {
                let target = env.target_index();
                let goal = st.containers[0].pos;
                carry(env, target, goal, 3.0)
            }
            TaskKind::BinSort => {
                // first unsorted object, in index order
                let mut pending = None;
                for (i, o) in st.objects.iter().enumerate().take(2) {
                    let sorted = st.containers[i].contains(o.pos) && !o.held;
                    if !sorted {
                        pending = Some(i);
                        break;
                    }
                }
                match pending {
                    Some(i) => carry(env, i, st.containers[i].pos, 3.0),
                    None => [0.0, 0.0, -1.0],
                }
            }
            TaskKind::SlideOpen => {
                let rail = st.rail.as_ref().expect("slide rail");
                let handle = st.objects[env.target_index()].pos;
                let opened = handle[0] - rail.x_rest >= DRAWER_OPEN_DIST + 3.0;
                if st.held_index == Some(env.target_index()) {
                    if opened {
                        [0.0, 0.0, -1.0]
                    } else {
                        [1.0, clampf((rail.y - agent[1]) / MAX_STEP), 1.0]
                    }
                } else if dist(agent, handle) <= GRASP_RADIUS - 2.0 {
                    [0.0, 0.0, 1.0]
                } else {
                    steer(agent, handle, -1.0)
                }
            }
        };
        debug_assert!(action.iter().all(|a| (-1.0..=1.0).contains(a)));
        Ok(action)
    }
}

/// Grasp-and-carry routine shared by pick_place and bin_sort. Travel legs
/// route around bystander objects so they stay where they are.
fn carry(env: &SpriteEnv, target: usize, goal: [f32; 2], release_tol: f32) -> [f32; 3] {
    let st = env.state();
    let agent = st.agent_pos;
    let bystanders: Vec<[f32; 2]> = st
        .objects
        .iter()
        .enumerate()
        .filter(|(i, o)| *i != target && !o.held)
        .map(|(_, o)| o.pos)
        .collect();
    let max_size = st
        .objects
        .iter()
        .map(|o| o.size)
        .fold(0.0f32, f32::max);
    let clearance = AGENT_RADIUS + max_size + 2.0;
    if st.held_index == Some(target) {
        if dist(agent, goal) <= release_tol {
            [0.0, 0.0, -1.0]
        } else {
            let waypoint = route_around(agent, goal, &bystanders, clearance);
            steer(agent, waypoint, 1.0)
        }
    } else {
        let obj = st.objects[target].pos;
        if dist(agent, obj) <= GRASP_RADIUS - 2.0 {
            [0.0, 0.0, 1.0]
        } else {
            let waypoint = route_around(agent, obj, &bystanders, clearance);
            steer(agent, waypoint, -1.0)
        }
    }
}

/// If the straight segment to `dest` passes within `clearance` of any
/// obstacle, detours around the nearest blocking one; otherwise heads
/// straight for `dest`.
fn route_around(agent: [f32; 2], dest: [f32; 2], obstacles: &[[f32; 2]], clearance: f32) -> [f32; 2] {
    let seg_len = dist(agent, dest);
    if seg_len < 1e-3 {
        return dest;
    }
    let dir = direction(agent, dest);
    let mut blocker: Option<(f32, [f32; 2], f32)> = None; // (along, obstacle, lateral)
    for &obs in obstacles {
        let rel = [obs[0] - agent[0], obs[1] - agent[1]];
        let along = rel[0] * dir[0] + rel[1] * dir[1];
        // obstacles at or beyond the destination are the destination's
        // business, not a routing concern
        if along <= 0.0 || along >= seg_len {
            continue;
        }
        let lat = [rel[0] - dir[0] * along, rel[1] - dir[1] * along];
        let lat_d = (lat[0] * lat[0] + lat[1] * lat[1]).sqrt();
        if lat_d < clearance && blocker.map_or(true, |(a, _, _)| along < a) {
            blocker = Some((along, obs, lat_d));
        }
    }
    match blocker {
        None => dest,
        Some((along, obs, lat_d)) => {
            let rel = [obs[0] - agent[0], obs[1] - agent[1]];
            let lat = [rel[0] - dir[0] * along, rel[1] - dir[1] * along];
            // step aside, away from the obstacle; if dead-ahead, pick the
            // left perpendicular
            let perp = if lat_d > 1e-3 {
                [-lat[0] / lat_d, -lat[1] / lat_d]
            } else {
                [-dir[1], dir[0]]
            };
            clamp_arena([
                obs[0] + perp[0] * (clearance + 3.0),
                obs[1] + perp[1] * (clearance + 3.0),
            ])
        }
    }
}

fn clamp_arena(p: [f32; 2]) -> [f32; 2] {
    [
        p[0].clamp(2.0, super::ARENA - 3.0),
        p[1].clamp(2.0, super::ARENA - 3.0),
    ]
}

/// Deadbeat proportional step: covers the remaining distance exactly when
/// it fits in one step, else saturates.
fn steer(from: [f32; 2], to: [f32; 2], grip: f32) -> [f32; 3] {
    [
        clampf((to[0] - from[0]) / MAX_STEP),
        clampf((to[1] - from[1]) / MAX_STEP),
        grip,
    ]
}

fn clampf(v: f32) -> f32 {
    v.clamp(-1.0, 1.0)
}

fn dist(a: [f32; 2], b: [f32; 2]) -> f32 {
    ((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])).sqrt()
}

fn direction(from: [f32; 2], to: [f32; 2]) -> [f32; 2] {
    let d = dist(from, to).max(1e-6);
    [(to[0] - from[0]) / d, (to[1] - from[1]) / d]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sprites::{render::ViewId, ShiftSpec, TaskSpec};

    /// Runs the expert on one seeded episode; returns success.
    pub(crate) fn run_episode(task: TaskKind, seed: u64) -> bool {
        let spec = TaskSpec::new(task);
        let (mut env, _) =
            SpriteEnv::reset(&spec, &ShiftSpec::identity(), seed, &[ViewId::Top]).unwrap();
        let expert = scripted_expert(task).unwrap();
        for _ in 0..spec.horizon {
            let action = expert.act(&env).unwrap();
            let result = env.step(&action).unwrap();
            if result.done {
                return result.success;
            }
        }
        false
    }

    #[test]
    fn reach_expert_succeeds_on_sample_seeds() {
        for seed in 0..25 {
            assert!(run_episode(TaskKind::Reach, seed), "seed {seed}");
        }
    }

    #[test]
    fn pick_place_expert_succeeds_on_sample_seeds() {
        for seed in 0..25 {
            assert!(run_episode(TaskKind::PickPlace, seed), "seed {seed}");
        }
    }

    #[test]
    fn push_expert_succeeds_on_sample_seeds() {
        let mut wins = 0;
        for seed in 0..25 {
            if run_episode(TaskKind::Push, seed) {
                wins += 1;
            }
        }
        assert!(wins >= 24, "push expert won only {wins}/25");
    }

    #[test]
    fn bin_sort_expert_succeeds_on_sample_seeds() {
        let mut wins = 0;
        for seed in 0..25 {
            if run_episode(TaskKind::BinSort, seed) {
                wins += 1;
            }
        }
        assert!(wins >= 24, "bin_sort expert won only {wins}/25");
    }

    #[test]
    fn slide_open_expert_succeeds_on_sample_seeds() {
        for seed in 0..25 {
            assert!(run_episode(TaskKind::SlideOpen, seed), "seed {seed}");
        }
    }

    #[test]
    fn expert_actions_stay_in_range() {
        let spec = TaskSpec::new(TaskKind::PickPlace);
        let (mut env, _) =
            SpriteEnv::reset(&spec, &ShiftSpec::identity(), 3, &[ViewId::Top]).unwrap();
        let expert = scripted_expert(TaskKind::PickPlace).unwrap();
        for _ in 0..60 {
            let a = expert.act(&env).unwrap();
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
            if env.step(&a).unwrap().done {
                break;
            }
        }
    }
}
