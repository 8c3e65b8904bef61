use super::{Role, ScenarioConfig, ScenarioKind, WorldState};

/// Team bonus per pursuer–evader contact, and the matching penalty for the touched evader.
pub const CAPTURE_REWARD: f64 = 10.0;

pub fn rewards(config: &ScenarioConfig, state: &WorldState) -> Vec<f64> {
    match config.kind {
        ScenarioKind::Spread => spread_rewards(state),
        ScenarioKind::TagOcclusion => tag_rewards(state),
    }
}

fn overlapping(state: &WorldState, i: usize, j: usize) -> bool {
    let (a, b) = (&state.entities[i], &state.entities[j]);
    a.position.distance(b.position) < a.radius + b.radius
}

/// Shared coverage term `−Σ_l min_a ‖p_a − p_l‖` plus −1 per overlapping teammate.
pub fn spread_rewards(state: &WorldState) -> Vec<f64> {
    let agents: Vec<usize> = state.agent_indices().collect();
    let coverage: f64 = state
        .indices_of(Role::Landmark)
        .iter()
        .map(|&l| {
            let pl = state.entities[l].position;
            agents
                .iter()
                .map(|&a| state.entities[a].position.distance(pl))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    let shared = if coverage.is_finite() { -coverage } else { 0.0 };
    agents
        .iter()
        .map(|&a| {
            let collisions = agents.iter().filter(|&&b| b != a && overlapping(state, a, b)).count();
            shared - collisions as f64
        })
        .collect()
}

/// Penalty for straying outside 90% of the arena, linear up to the wall then exponential
/// and capped at 10. Takes a coordinate already normalised by the arena half-width.
pub fn boundary_penalty(x: f64) -> f64 {
    let x = x.abs();
    if x < 0.9 {
        0.0
    } else if x < 1.0 {
        (x - 0.9) * 10.0
    } else {
        (2.0 * x - 2.0).exp().min(10.0)
    }
}

/// Capture bonus shared by all pursuers, individual capture penalty for evaders, and an
/// individual boundary penalty for every agent.
pub fn tag_rewards(state: &WorldState) -> Vec<f64> {
    let pursuers = state.indices_of(Role::Pursuer);
    let evaders = state.indices_of(Role::Evader);
    let mut rewards = vec![0.0; state.entities.len()];
    let mut captures = 0usize;
    for &e in &evaders {
        for &p in &pursuers {
            if overlapping(state, p, e) {
                captures += 1;
                rewards[e] -= CAPTURE_REWARD;
            }
        }
    }
    for &p in &pursuers {
        rewards[p] += CAPTURE_REWARD * captures as f64;
    }
    let b = state.bounds;
    state
        .agent_indices()
        .map(|i| {
            let pos = state.entities[i].position;
            rewards[i] - boundary_penalty(pos.x / b) - boundary_penalty(pos.y / b)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::sim::reset;

    fn spread_state(agents: &[(f64, f64)], landmarks: &[(f64, f64)]) -> WorldState {
        let mut cfg = ScenarioConfig::spread(agents.len());
        cfg.landmarks = landmarks.len();
        let mut s = WorldState {
            entities: Vec::new(),
            time_step: 0,
            bounds: 1.0,
        };
        for &(x, y) in agents {
            let mut e = cfg.template(Role::Agent);
            e.position = Vec2::new(x, y);
            s.entities.push(e);
        }
        for &(x, y) in landmarks {
            let mut e = cfg.template(Role::Landmark);
            e.position = Vec2::new(x, y);
            s.entities.push(e);
        }
        s
    }

    #[test]
    fn spread_single_agent_distance() {
        let s = spread_state(&[(0.3, 0.4)], &[(0.0, 0.0)]);
        let r = spread_rewards(&s);
        assert!((r[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn spread_perfect_coverage_is_zero() {
        let pts = [(-0.5, 0.0), (0.0, 0.5), (0.5, -0.5)];
        let s = spread_state(&pts, &pts);
        assert!(spread_rewards(&s).iter().all(|&r| r == 0.0));
    }

    #[test]
    fn spread_overlap_composes_with_distance() {
        // Both agents 0.1 apart (radii sum 0.3), landmark at distance 2 from the closer one.
        let s = spread_state(&[(0.0, 0.0), (0.1, 0.0)], &[(2.1, 0.0)]);
        let r = spread_rewards(&s);
        let d = 2.0;
        for v in r {
            assert!((v - (-d - 1.0)).abs() < 1e-12, "{v}");
        }
    }

    fn tag_state() -> WorldState {
        let cfg = ScenarioConfig::tag();
        let mut s = reset(&cfg, 0).unwrap();
        for (k, e) in s.entities.iter_mut().enumerate() {
            // Spread everything out on a small circle well inside the arena.
            let a = k as f64 * 0.9;
            e.position = Vec2::new(0.6 * a.cos(), 0.6 * a.sin());
        }
        s
    }

    #[test]
    fn tag_no_contact_inside_is_zero() {
        let s = tag_state();
        assert!(tag_rewards(&s).iter().all(|&r| r == 0.0));
    }

    #[test]
    fn tag_capture_rewards() {
        let mut s = tag_state();
        // Pursuer 1 touches evader 3.
        s.entities[1].position = s.entities[3].position + Vec2::new(0.05, 0.0);
        let r = tag_rewards(&s);
        assert_eq!(r, vec![10.0, 10.0, 10.0, -10.0, 0.0]);
    }

    #[test]
    fn tag_boundary_penalty_is_monotone() {
        let mut s = tag_state();
        s.entities[3].position = Vec2::new(1.5, 0.0);
        let r1 = tag_rewards(&s)[3];
        s.entities[3].position = Vec2::new(1.7, 0.0);
        let r2 = tag_rewards(&s)[3];
        assert!(r1 < 0.0);
        assert!(r2 < r1);
        assert!((r1 + 1.0f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn boundary_penalty_is_continuous() {
        assert_eq!(boundary_penalty(0.5), 0.0);
        assert!((boundary_penalty(0.999_999_9) - 1.0).abs() < 1e-5);
        assert!((boundary_penalty(1.0) - 1.0).abs() < 1e-15);
        assert_eq!(boundary_penalty(10.0), 10.0);
    }
}
