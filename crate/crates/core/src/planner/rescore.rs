//! Proximity re-scoring of ego modes and command-conditioned selection.

use crate::model::{argmax, DrivingCommand, Trajectory, TrajectorySet};

use super::PlannerError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RescoreParams {
    pub lambda: f64,
    pub safe_radius: f64,
}

impl Default for RescoreParams {
    fn default() -> Self {
        RescoreParams {
            lambda: 1.0,
            safe_radius: 3.0,
        }
    }
}

/// `Σ_t max(0, r_safe − d_t)`, with `d_t` the distance from the ego point at
/// step `t` to the nearest agent point at the same step. Steps beyond an
/// agent's horizon ignore that agent.
pub fn proximity_penalty(ego: &Trajectory, agents: &[&Trajectory], safe_radius: f64) -> f64 {
    ego.points
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let d = agents
                .iter()
                .filter_map(|a| a.points.get(t))
                .map(|q| (p[0] - q[0]).hypot(p[1] - q[1]))
                .fold(f64::INFINITY, f64::min);
            (safe_radius - d).max(0.0)
        })
        .sum()
}

/// Lowers each ego mode's score by its proximity penalty against the
/// highest-scored mode of every agent. Points and mode order are untouched.
pub fn rescore_trajectories(ego_modes: &TrajectorySet, agent_futures: &[TrajectorySet], params: RescoreParams) -> TrajectorySet {
    let agents: Vec<&Trajectory> = agent_futures.iter().filter_map(TrajectorySet::best).collect();
    TrajectorySet {
        modes: ego_modes
            .modes
            .iter()
            .map(|m| Trajectory {
                points: m.points.clone(),
                score: m.score - params.lambda * proximity_penalty(m, &agents, params.safe_radius),
            })
            .collect(),
    }
}

/// Highest-scored mode for `command`; ties go to the lowest mode index.
pub fn select_plan(modes: &[TrajectorySet], command: DrivingCommand) -> Result<Trajectory, PlannerError> {
    let set = modes
        .get(command.index())
        .ok_or_else(|| PlannerError::InvalidInput(format!("no mode set for {command:?}")))?;
    let scores: Vec<f64> = set.modes.iter().map(|m| m.score).collect();
    let best = argmax(&scores).ok_or_else(|| PlannerError::InvalidInput(format!("empty mode set for {command:?}")))?;
    Ok(set.modes[best].clone())
}
