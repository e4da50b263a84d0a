//! Rays, ray-triangle intersection and a median-split bounding volume
//! hierarchy.
//!
//! The BVH and the brute-force scan share one triangle test and one ordering
//! on hits (smaller `ray_t`, then smaller face index), so both return the
//! identical hit for every ray.

use crate::math::Vec3;
use crate::mesh::Mesh;

/// Hits closer than this along the ray are ignored.
pub const RAY_T_MIN: f64 = 1e-6;

/// Maximum number of triangles per leaf.
pub const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Builds a ray with a normalized direction.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self { origin, direction: direction.normalize() }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub point: Vec3,
    pub face_index: usize,
    pub face_normal: Vec3,
    pub ray_t: f64,
    pub barycentrics: [f64; 3],
}

impl Hit {
    /// Strict ordering used for first-hit selection.
    fn closer_than(&self, other: &Hit) -> bool {
        self.ray_t < other.ray_t || (self.ray_t == other.ray_t && self.face_index < other.face_index)
    }
}

/// Möller-Trumbore test with inclusive edges. Returns `(t, u, v)`.
pub fn intersect_triangle(ray: &Ray, tri: &[Vec3; 3]) -> Option<(f64, f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = ray.direction.cross(e2);
    let det = e1.dot(p);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - tri[0];
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = ray.direction.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    (t > RAY_T_MIN).then_some((t, u, v))
}

fn make_hit(mesh: &Mesh, ray: &Ray, face: usize, (t, u, v): (f64, f64, f64)) -> Hit {
    let w = 1.0 - u - v;
    Hit {
        point: ray.at(t),
        face_index: face,
        face_normal: mesh.face_normals()[face],
        ray_t: t,
        barycentrics: [w, u, v],
    }
}

/// Linear scan over every triangle.
pub fn brute_force_intersect(mesh: &Mesh, ray: &Ray) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for face in 0..mesh.face_count() {
        if let Some(tuv) = intersect_triangle(ray, &mesh.triangle(face)) {
            let hit = make_hit(mesh, ray, face, tuv);
            if best.as_ref().is_none_or(|b| hit.closer_than(b)) {
                best = Some(hit);
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb { min: Vec3::splat(f64::INFINITY), max: Vec3::splat(f64::NEG_INFINITY) };

    pub fn grow(self, p: Vec3) -> Aabb {
        Aabb { min: self.min.min(p), max: self.max.max(p) }
    }

    pub fn union(self, o: Aabb) -> Aabb {
        Aabb { min: self.min.min(o.min), max: self.max.max(o.max) }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Pads the box so that boundary hits are never culled by rounding.
    fn padded(self) -> Aabb {
        let pad = Vec3::splat(1e-9 * (1.0 + (self.max - self.min).max_element()));
        Aabb { min: self.min - pad, max: self.max + pad }
    }

    /// Slab test against `[0, t_max]`; conservative.
    fn hit_by(&self, ray: &Ray, t_max: f64) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for axis in 0..3 {
            let o = ray.origin[axis];
            let d = ray.direction[axis];
            if d == 0.0 {
                if o < self.min[axis] || o > self.max[axis] {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut near, mut far) = ((self.min[axis] - o) * inv, (self.max[axis] - o) * inv);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    /// Children indices into `Bvh::nodes`.
    Inner { left: usize, right: usize },
    /// Range into `Bvh::order`.
    Leaf { start: usize, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvhNode {
    pub bounds: Aabb,
    pub kind: NodeKind,
}

/// Median-split BVH over triangle centroids. Node 0 is the root.
#[derive(Debug, Clone)]
pub struct Bvh {
    pub nodes: Vec<BvhNode>,
    /// Triangle permutation; leaves reference contiguous ranges of it.
    pub order: Vec<usize>,
}

impl Bvh {
    pub fn build(mesh: &Mesh) -> Bvh {
        let n = mesh.face_count();
        let boxes: Vec<Aabb> = (0..n).map(|f| mesh.triangle(f).iter().fold(Aabb::EMPTY, |b, &p| b.grow(p))).collect();
        let centroids: Vec<Vec3> = (0..n).map(|f| mesh.triangle(f).iter().fold(Vec3::ZERO, |a, &p| a + p) / 3.0).collect();
        let mut bvh = Bvh { nodes: Vec::with_capacity(2 * n.div_ceil(LEAF_SIZE)), order: (0..n).collect() };
        bvh.build_node(0, n, &boxes, &centroids);
        bvh
    }

    fn build_node(&mut self, start: usize, end: usize, boxes: &[Aabb], centroids: &[Vec3]) -> usize {
        let items = &mut self.order[start..end];
        let bounds = items.iter().fold(Aabb::EMPTY, |b, &f| b.union(boxes[f])).padded();
        let index = self.nodes.len();
        if items.len() <= LEAF_SIZE {
            self.nodes.push(BvhNode { bounds, kind: NodeKind::Leaf { start, count: end - start } });
            return index;
        }
        let cb = items.iter().fold(Aabb::EMPTY, |b, &f| b.grow(centroids[f]));
        let ext = cb.max - cb.min;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = items.len() / 2;
        items.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        self.nodes.push(BvhNode { bounds, kind: NodeKind::Leaf { start, count: 0 } });
        let left = self.build_node(start, start + mid, boxes, centroids);
        let right = self.build_node(start + mid, end, boxes, centroids);
        self.nodes[index].kind = NodeKind::Inner { left, right };
        index
    }

    pub fn depth(&self) -> usize {
        fn rec(b: &Bvh, i: usize) -> usize {
            match b.nodes[i].kind {
                NodeKind::Leaf { .. } => 1,
                NodeKind::Inner { left, right } => 1 + rec(b, left).max(rec(b, right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            rec(self, 0)
        }
    }

    /// First hit along `ray`, or `None` on a miss.
    pub fn intersect(&self, mesh: &Mesh, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut stack = Vec::with_capacity(64);
        if !self.nodes.is_empty() {
            stack.push(0usize);
        }
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            let t_max = best.as_ref().map_or(f64::INFINITY, |b| b.ray_t);
            if !node.bounds.hit_by(ray, t_max) {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &face in &self.order[start..start + count] {
                        if let Some(tuv) = intersect_triangle(ray, &mesh.triangle(face)) {
                            let hit = make_hit(mesh, ray, face, tuv);
                            if best.as_ref().is_none_or(|b| hit.closer_than(b)) {
                                best = Some(hit);
                            }
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri_mesh() -> Mesh {
        Mesh::new(
            vec![Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, -1.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn axis_aligned_hit_and_miss() {
        let m = tri_mesh();
        let bvh = Bvh::build(&m);
        let ray = Ray::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -1.0));
        let hit = bvh.intersect(&m, &ray).unwrap();
        assert_eq!(hit.point, Vec3::ZERO);
        assert_eq!(hit.ray_t, 1.0);
        assert_eq!(hit.face_index, 0);
        assert!((hit.barycentrics.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(Some(hit), brute_force_intersect(&m, &ray));

        let away = Ray::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 1.0));
        assert!(bvh.intersect(&m, &away).is_none());
        assert!(brute_force_intersect(&m, &away).is_none());
    }

    #[test]
    fn single_triangle_is_one_leaf() {
        let bvh = Bvh::build(&tri_mesh());
        assert_eq!(bvh.nodes.len(), 1);
        assert!(matches!(bvh.nodes[0].kind, NodeKind::Leaf { start: 0, count: 1 }));
    }

    #[test]
    fn coplanar_tie_prefers_lower_face_index() {
        let v = vec![
            Vec3::new(-1.0, -1.0, 0.0),
            Vec3::new(1.0, -1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(-2.0, -2.0, 0.0),
            Vec3::new(2.0, -2.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
        ];
        // Larger triangle listed second, then first.
        for faces in [vec![[0, 1, 2], [3, 4, 5]], vec![[3, 4, 5], [0, 1, 2]]] {
            let m = Mesh::new(v.clone(), faces).unwrap();
            let ray = Ray::new(Vec3::new(0.1, 0.0, 3.0), Vec3::new(0.0, 0.0, -1.0));
            let bf = brute_force_intersect(&m, &ray).unwrap();
            assert_eq!(bf.face_index, 0);
            assert_eq!(Bvh::build(&m).intersect(&m, &ray), Some(bf));
        }
    }

    #[test]
    fn separated_triangles_give_shallow_tree() {
        let mut v = Vec::new();
        let mut f = Vec::new();
        for i in 0..8 {
            let o = Vec3::new(3.0 * i as f64, 0.0, 0.0);
            let b = v.len();
            v.extend([o, o + Vec3::new(1.0, 0.0, 0.0), o + Vec3::new(0.0, 1.0, 0.0)]);
            f.push([b, b + 1, b + 2]);
        }
        let m = Mesh::new(v, f).unwrap();
        let bvh = Bvh::build(&m);
        assert!(bvh.depth() <= 4, "depth {}", bvh.depth());
    }

    #[test]
    fn every_triangle_in_exactly_one_leaf_and_boxes_nest() {
        let m = crate::mesh::uv_sphere(Vec3::ZERO, 1.0, 9, 13);
        let bvh = Bvh::build(&m);
        let mut seen = vec![0usize; m.face_count()];
        fn walk(b: &Bvh, m: &Mesh, i: usize, seen: &mut [usize]) -> Vec<usize> {
            let node = b.nodes[i];
            let tris = match node.kind {
                NodeKind::Leaf { start, count } => {
                    assert!(count <= LEAF_SIZE && count > 0);
                    b.order[start..start + count].to_vec()
                }
                NodeKind::Inner { left, right } => {
                    let mut t = walk(b, m, left, seen);
                    t.extend(walk(b, m, right, seen));
                    return check(node, m, t);
                }
            };
            for &t in &tris {
                seen[t] += 1;
            }
            check(node, m, tris)
        }
        fn check(node: BvhNode, m: &Mesh, tris: Vec<usize>) -> Vec<usize> {
            for &t in &tris {
                for p in m.triangle(t) {
                    assert!(node.bounds.contains(p));
                }
            }
            tris
        }
        walk(&bvh, &m, 0, &mut seen);
        assert!(seen.iter().all(|&c| c == 1));
    }
}
