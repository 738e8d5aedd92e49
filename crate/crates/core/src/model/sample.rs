use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speeds below this are treated as standing still; the heading then
/// defaults to +x.
pub const STANDSTILL_SPEED: f64 = 1e-6;

/// One observation: agent features, map encoding and the ground-truth goal.
///
/// The hidden task id is stored for evaluation bookkeeping only. It has no
/// accessor on this type; see [`crate::audit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    agents: usize,
    agent_features: usize,
    dynamic: Vec<f64>,
    static_features: Vec<f64>,
    goal: [f64; 2],
    speed: f64,
    heading: [f64; 2],
    pub(crate) task_id: u32,
}

impl Sample {
    /// `dynamic` is an `agents × agent_features` matrix in row-major order;
    /// row 0 is the target agent. `velocity` is the target's velocity at
    /// prediction time.
    pub fn new(
        agents: usize,
        agent_features: usize,
        dynamic: Vec<f64>,
        static_features: Vec<f64>,
        goal: [f64; 2],
        velocity: [f64; 2],
        task_id: u32,
    ) -> Result<Self> {
        if agents == 0 || agent_features == 0 || static_features.is_empty() {
            return Err(Error::Input("feature dimensions must be >= 1".into()));
        }
        if dynamic.len() != agents * agent_features {
            return Err(Error::Input(format!(
                "dynamic features have {} values, expected {}x{}",
                dynamic.len(),
                agents,
                agent_features
            )));
        }
        let finite = dynamic
            .iter()
            .chain(&static_features)
            .chain(&goal)
            .chain(&velocity)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Input("sample contains non-finite values".into()));
        }
        let speed = velocity[0].hypot(velocity[1]);
        let heading = if speed < STANDSTILL_SPEED {
            [1.0, 0.0]
        } else {
            [velocity[0] / speed, velocity[1] / speed]
        };
        Ok(Self {
            agents,
            agent_features,
            dynamic,
            static_features,
            goal,
            speed,
            heading,
            task_id,
        })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn agent_features(&self) -> usize {
        self.agent_features
    }

    pub fn dynamic(&self) -> &[f64] {
        &self.dynamic
    }

    pub fn static_features(&self) -> &[f64] {
        &self.static_features
    }

    pub fn input_len(&self) -> usize {
        self.dynamic.len() + self.static_features.len()
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// Unit vector of the target's velocity, +x when standing still.
    pub fn heading(&self) -> [f64; 2] {
        self.heading
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derives_speed_and_heading() {
        let s = Sample::new(1, 2, vec![0.0, 0.0], vec![1.0], [1.0, 1.0], [3.0, 4.0], 0).unwrap();
        assert_eq!(s.speed(), 5.0);
        assert_eq!(s.heading(), [0.6, 0.8]);
        let still = Sample::new(1, 1, vec![0.0], vec![1.0], [0.0, 0.0], [0.0, 0.0], 0).unwrap();
        assert_eq!(still.heading(), [1.0, 0.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Sample::new(2, 2, vec![0.0; 3], vec![1.0], [0.0; 2], [0.0; 2], 0).is_err());
        assert!(Sample::new(1, 1, vec![0.0], vec![], [0.0; 2], [0.0; 2], 0).is_err());
        assert!(Sample::new(1, 1, vec![f64::NAN], vec![1.0], [0.0; 2], [0.0; 2], 0).is_err());
    }
}
