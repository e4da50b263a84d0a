//! Fixed hemisphere quadrature and the orthonormal frame around a normal.

use crate::math::Vec3;
use crate::real::Real;

/// Fibonacci-spiral points on the upper unit hemisphere (`z > 0`), each with
/// weight `2π/N`.
///
/// Heights are the midpoints `z_i = 1 - (i + 1/2)/N`, so the clamped cosine
/// `Σ w_i z_i` equals `π` exactly and the constant integrand gives `2π`.
#[derive(Debug, Clone, PartialEq)]
pub struct HemisphereQuadrature<R> {
    local: Vec<[R; 3]>,
    weight: R,
}

/// Minimum supported point count.
pub const MIN_QUADRATURE_COUNT: usize = 8;

impl<R: Real> HemisphereQuadrature<R> {
    pub fn fibonacci(count: usize) -> Self {
        assert!(count >= MIN_QUADRATURE_COUNT, "quadrature needs at least {MIN_QUADRATURE_COUNT} points, got {count}");
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        let local = (0..count)
            .map(|i| {
                let z = 1.0 - (i as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = i as f64 * golden;
                [R::of(r * phi.cos()), R::of(r * phi.sin()), R::of(z)]
            })
            .collect();
        Self { local, weight: R::of(2.0 * std::f64::consts::PI / count as f64) }
    }

    pub fn len(&self) -> usize {
        self.local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local.is_empty()
    }

    /// Directions in the frame where the normal is `+z`.
    pub fn local(&self) -> &[[R; 3]] {
        &self.local
    }

    pub fn weight(&self) -> R {
        self.weight
    }
}

/// Tangent and bitangent completing `n` to a right-handed orthonormal basis.
///
/// `sign` must be `±1`; the construction is singular only at `n.z = -sign`.
/// Pass the sign of the geometric normal's `z` so the frame varies smoothly
/// while the shading normal is perturbed.
pub fn tangent_frame<R: Real>(n: [R; 3], sign: R) -> ([R; 3], [R; 3]) {
    let [x, y, z] = n;
    let a = -R::one() / (sign + z);
    let b = x * y * a;
    ([R::one() + sign * x * x * a, sign * b, -sign * x], [b, sign + y * y * a, -y])
}

/// Gradient with respect to `n` of `g_t·t(n) + g_b·b(n)`.
pub fn tangent_frame_backward<R: Real>(n: [R; 3], sign: R, g_t: [R; 3], g_b: [R; 3]) -> [R; 3] {
    let [x, y, z] = n;
    let a = -R::one() / (sign + z);
    let two = R::of(2.0);
    let a2 = a * a;
    let gx = g_t[0] * sign * two * x * a + g_t[1] * sign * y * a - sign * g_t[2] + g_b[0] * y * a;
    let gy = g_t[1] * sign * x * a + g_b[0] * x * a + g_b[1] * two * y * a - g_b[2];
    let gz = g_t[0] * sign * x * x * a2 + g_t[1] * sign * x * y * a2 + g_b[0] * x * y * a2 + g_b[1] * y * y * a2;
    [gx, gy, gz]
}

/// Sign used for the frame around a normal: `+1` unless `z < 0`.
pub fn frame_sign<R: Real>(z: R) -> R {
    if z < R::zero() {
        -R::one()
    } else {
        R::one()
    }
}

/// World-space `(direction, weight)` pairs on the hemisphere about `normal`.
pub fn hemisphere_quadrature(normal: Vec3, count: usize) -> Vec<(Vec3, f64)> {
    let q = HemisphereQuadrature::<f64>::fibonacci(count);
    let n = normal.normalize().to_array();
    let (t, b) = tangent_frame(n, frame_sign(n[2]));
    q.local()
        .iter()
        .map(|l| {
            let d = Vec3::from_array(t) * l[0] + Vec3::from_array(b) * l[1] + Vec3::from_array(n) * l[2];
            (d, q.weight())
        })
        .collect()
}
