use super::{Role, WorldState};
use crate::geometry::Vec2;

/// True when the segment `a → b` passes strictly inside the disk `(center, radius)`.
pub fn segment_hits_disk(a: Vec2, b: Vec2, center: Vec2, radius: f64) -> bool {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    let t = if len_sq == 0.0 {
        0.0
    } else {
        ((center - a).dot(ab) / len_sq).clamp(0.0, 1.0)
    };
    let closest = a + ab * t;
    closest.distance(center) < radius
}

/// Per-entity line-of-sight flags for `observer`. Obstacles and the observer itself are
/// always visible; any other entity is hidden when the sight line crosses an obstacle disk.
pub fn visible_mask(state: &WorldState, observer: usize) -> Vec<bool> {
    let obstacles: Vec<usize> = state.indices_of(Role::Obstacle);
    let origin = state.entities[observer].position;
    state
        .entities
        .iter()
        .enumerate()
        .map(|(j, e)| {
            if j == observer || e.role == Role::Obstacle {
                return true;
            }
            !obstacles.iter().any(|&o| {
                let ob = &state.entities[o];
                segment_hits_disk(origin, e.position, ob.position, ob.radius)
            })
        })
        .collect()
}

pub fn visible_entities(state: &WorldState, observer: usize) -> Vec<usize> {
    visible_mask(state, observer)
        .into_iter()
        .enumerate()
        .filter_map(|(j, v)| v.then_some(j))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ScenarioConfig;

    fn scene(observer: Vec2, target: Vec2, obstacle: Vec2) -> WorldState {
        let cfg = ScenarioConfig::tag_with(1, 1, 1);
        let mut s = crate::sim::reset(&cfg, 0).unwrap();
        s.entities[0].position = observer;
        s.entities[1].position = target;
        s.entities[2].position = obstacle;
        s.entities[2].radius = 0.2;
        s
    }

    #[test]
    fn occluded_through_center() {
        let s = scene(Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0), Vec2::ZERO);
        assert_eq!(visible_entities(&s, 0), vec![0, 2]);
    }

    #[test]
    fn visible_when_passing_wide() {
        // Distance from origin to the line through (-1,0),(1,2) is 1/sqrt(2) > 0.2.
        let s = scene(Vec2::new(-1.0, 0.0), Vec2::new(1.0, 2.0), Vec2::ZERO);
        assert_eq!(visible_entities(&s, 0), vec![0, 1, 2]);
    }

    #[test]
    fn coincident_target_is_visible() {
        let s = scene(Vec2::new(-1.0, 0.0), Vec2::new(-1.0, 0.0), Vec2::ZERO);
        assert!(visible_entities(&s, 0).contains(&1));
    }

    #[test]
    fn spread_sees_everything() {
        let cfg = ScenarioConfig::spread(4);
        let s = crate::sim::reset(&cfg, 11).unwrap();
        assert_eq!(visible_entities(&s, 2), (0..8).collect::<Vec<_>>());
    }
}
