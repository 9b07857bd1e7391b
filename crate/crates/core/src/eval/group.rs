use serde::{Deserialize, Serialize};

use crate::forge::scene::Scene;

/// Scene category used when aggregating results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneGroup {
    /// One object.
    I,
    /// Two objects with disjoint bounding boxes.
    Ii,
    /// Two objects with intersecting bounding boxes.
    Iii,
    /// Zero or three objects.
    Other,
}

impl SceneGroup {
    pub fn label(self) -> &'static str {
        match self {
            SceneGroup::I => "i",
            SceneGroup::Ii => "ii",
            SceneGroup::Iii => "iii",
            SceneGroup::Other => "other",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [SceneGroup::I, SceneGroup::Ii, SceneGroup::Iii, SceneGroup::Other]
            .into_iter()
            .find(|g| g.label() == s)
    }
}

pub fn classify_group(scene: &Scene) -> SceneGroup {
    match scene.objects.as_slice() {
        [_] => SceneGroup::I,
        [a, b] => {
            let (alo, ahi) = a.bounding_box();
            let (blo, bhi) = b.bounding_box();
            let overlap = (0..3).all(|i| alo[i] <= bhi[i] && blo[i] <= ahi[i]);
            if overlap {
                SceneGroup::Iii
            } else {
                SceneGroup::Ii
            }
        }
        _ => SceneGroup::Other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::scene::{Shape, SubsurfaceObject};

    fn scene(objects: alloc::vec::Vec<SubsurfaceObject>) -> Scene {
        Scene { objects, ..Scene::empty(4.0, 0) }
    }

    fn sphere(x: f64, r: f64) -> SubsurfaceObject {
        SubsurfaceObject { shape: Shape::Sphere { radius: r }, center: [x, 0.5, 0.1], epsilon_r: 9.0 }
    }

    fn cube(x: f64) -> SubsurfaceObject {
        SubsurfaceObject { shape: Shape::Box { edges: [0.05; 3], yaw: 0.0 }, center: [x, 0.5, 0.1], epsilon_r: 9.0 }
    }

    #[test]
    fn groups() {
        assert_eq!(classify_group(&scene(vec![sphere(0.5, 0.03)])), SceneGroup::I);
        assert_eq!(classify_group(&scene(vec![cube(0.4), cube(0.55)])), SceneGroup::Ii);
        assert_eq!(classify_group(&scene(vec![sphere(0.5, 0.03), sphere(0.55, 0.03)])), SceneGroup::Iii);
        assert_eq!(classify_group(&scene(vec![])), SceneGroup::Other);
        assert_eq!(SceneGroup::from_label("iii"), Some(SceneGroup::Iii));
    }
}
