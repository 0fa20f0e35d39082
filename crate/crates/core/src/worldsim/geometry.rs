use serde::{Deserialize, Serialize};

use super::{Affordance, ObjectInstance, WorldError};

/// Region sizes used by the relation predicates. Catalogs may override them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    /// Horizontal margin of the manipulation region, in meters. The region
    /// grows by twice this amount above the object.
    pub manipulation_margin: f64,
    /// Scale factor of the containment region about the object center.
    pub containment_scale: f64,
    /// Horizontal center distance below which two objects are near.
    pub near_radius: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            manipulation_margin: 0.5,
            containment_scale: 0.9,
            near_radius: 1.5,
        }
    }
}

/// Closed axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn around(center: [f64; 3], extent: [f64; 3]) -> Self {
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for k in 0..3 {
            min[k] = center[k] - extent[k] / 2.0;
            max[k] = center[k] + extent[k] / 2.0;
        }
        Self { min, max }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] && other.min[k] <= self.max[k])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.min[k] && other.max[k] <= self.max[k])
    }

    pub fn center(&self) -> [f64; 3] {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
            (self.min[2] + self.max[2]) / 2.0,
        ]
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }
}

/// Bounding box grown by the margin on both horizontal axes and by twice the
/// margin on top. The bottom face stays where it is.
pub fn manipulation_region(obj: &ObjectInstance, geometry: &GeometryConfig) -> Aabb {
    let d = geometry.manipulation_margin;
    let b = obj.bbox();
    Aabb {
        min: [b.min[0] - d, b.min[1] - d, b.min[2]],
        max: [b.max[0] + d, b.max[1] + d, b.max[2] + 2.0 * d],
    }
}

/// Interior box of a container: the bounding box scaled about its center.
pub fn containment_region(obj: &ObjectInstance, geometry: &GeometryConfig) -> Result<Aabb, WorldError> {
    if !obj.affordances.has(Affordance::Container) {
        return Err(WorldError::NotAContainer(obj.class.clone()));
    }
    let k = geometry.containment_scale;
    let e = obj.extent;
    Ok(Aabb::around(obj.position, [e[0] * k, e[1] * k, e[2] * k]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::Affordances;

    fn cube(center: [f64; 3], extent: [f64; 3], container: bool) -> ObjectInstance {
        let mut aff = Affordances::default();
        if container {
            aff.insert(Affordance::Container);
            aff.insert(Affordance::AlwaysOpen);
        }
        ObjectInstance::bare(1, "cube", center, extent, aff, 0)
    }

    #[test]
    fn unit_cube_region() {
        let g = GeometryConfig::default();
        let mr = manipulation_region(&cube([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], false), &g);
        assert_eq!(mr.min, [-1.0, -1.0, -0.5]);
        assert_eq!(mr.max, [1.0, 1.0, 1.5]);
    }

    #[test]
    fn zero_margin_is_bbox() {
        let g = GeometryConfig {
            manipulation_margin: 0.0,
            ..GeometryConfig::default()
        };
        let o = cube([0.3, -2.0, 0.7], [0.4, 0.2, 0.6], false);
        assert_eq!(manipulation_region(&o, &g), o.bbox());
    }

    #[test]
    fn translation_equivariant() {
        let g = GeometryConfig::default();
        let a = manipulation_region(&cube([0.0, 0.0, 0.5], [1.0, 2.0, 1.0], false), &g);
        let b = manipulation_region(&cube([3.0, -1.0, 2.5], [1.0, 2.0, 1.0], false), &g);
        for k in 0..3 {
            let t = [3.0, -1.0, 2.0][k];
            assert!((b.min[k] - a.min[k] - t).abs() < 1e-12);
            assert!((b.max[k] - a.max[k] - t).abs() < 1e-12);
        }
    }

    #[test]
    fn containment_scales_about_center() {
        let g = GeometryConfig::default();
        let cr = containment_region(&cube([1.0, 1.0, 1.0], [2.0, 2.0, 2.0], true), &g).unwrap();
        let e = cr.extent();
        for k in 0..3 {
            assert!((e[k] - 1.8).abs() < 1e-12);
        }
        assert_eq!(cr.center(), [1.0, 1.0, 1.0]);
        let mr = manipulation_region(&cube([1.0, 1.0, 1.0], [2.0, 2.0, 2.0], true), &g);
        assert!(mr.contains_box(&cr));
    }

    #[test]
    fn non_container_rejected() {
        let g = GeometryConfig::default();
        assert!(matches!(
            containment_region(&cube([0.0; 3], [1.0; 3], false), &g),
            Err(WorldError::NotAContainer(_))
        ));
    }
}
