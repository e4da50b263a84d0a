//! Triangle meshes: construction, Wavefront OBJ loading and normalization.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::math::Vec3;

/// Minimum triangle area relative to the squared longest bounding-box
/// extent; equals the absolute threshold after normalization.
pub const MIN_RELATIVE_AREA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("face {face} is degenerate (area {area:e})")]
    DegenerateFace { face: usize, area: f64 },
    #[error("mesh has no faces")]
    Empty,
    #[error("mesh has zero extent")]
    ZeroExtent,
}

/// A fixed triangle mesh with per-face unit normals derived from winding.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_normals: Vec<Vec3>,
}

impl Mesh {
    /// Builds a mesh, rejecting out-of-range indices and degenerate faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if faces.is_empty() {
            return Err(MeshError::Empty);
        }
        for (fi, face) in faces.iter().enumerate() {
            if let Some(&index) = face.iter().find(|&&i| i >= vertices.len()) {
                return Err(MeshError::IndexOutOfRange { face: fi, index, count: vertices.len() });
            }
        }
        let (lo, hi) = bounds(&vertices);
        let extent = (hi - lo).max_element();
        let scale2 = if extent > 0.0 { extent * extent } else { 1.0 };
        let mut face_normals = Vec::with_capacity(faces.len());
        for (fi, face) in faces.iter().enumerate() {
            let cross = triangle_cross(&vertices, face);
            let area = 0.5 * cross.length();
            if !(area > MIN_RELATIVE_AREA * scale2) {
                return Err(MeshError::DegenerateFace { face: fi, area });
            }
            face_normals.push(cross.normalize());
        }
        Ok(Self { vertices, faces, face_normals })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_normals(&self) -> &[Vec3] {
        &self.face_normals
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Axis-aligned bounds `(min, max)` of the vertices.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        bounds(&self.vertices)
    }

    /// Translates the bounding-box center to the origin and scales uniformly
    /// so the longest extent is 1.
    pub fn normalized(&self) -> Result<Mesh, MeshError> {
        let (lo, hi) = self.bounds();
        let extent = (hi - lo).max_element();
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(MeshError::ZeroExtent);
        }
        let center = (lo + hi) * 0.5;
        let vertices = self.vertices.iter().map(|&v| (v - center) / extent).collect();
        Mesh::new(vertices, self.faces.clone())
    }

    /// Parses Wavefront OBJ text. Polygons are fan-triangulated, `vt`/`vn`
    /// data and material statements are ignored, and zero-area faces are
    /// dropped with a warning.
    pub fn from_obj_str(text: &str) -> Result<Mesh, MeshError> {
        let mut vertices = Vec::new();
        let mut faces: Vec<[usize; 3]> = Vec::new();
        let mut face_lines = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            let mut tokens = content.split_whitespace();
            match tokens.next() {
                Some("v") => {
                    let mut xyz = [0.0; 3];
                    for slot in &mut xyz {
                        let tok = tokens.next().ok_or_else(|| MeshError::Parse {
                            line,
                            message: "vertex needs three coordinates".into(),
                        })?;
                        *slot = tok.parse().map_err(|_| MeshError::Parse {
                            line,
                            message: format!("invalid coordinate `{tok}`"),
                        })?;
                    }
                    vertices.push(Vec3::from_array(xyz));
                }
                Some("f") => {
                    let mut poly = Vec::new();
                    for tok in tokens {
                        poly.push(parse_face_index(tok, vertices.len(), line)?);
                    }
                    if poly.len() < 3 {
                        return Err(MeshError::Parse { line, message: "face needs at least three vertices".into() });
                    }
                    for i in 1..poly.len() - 1 {
                        faces.push([poly[0], poly[i], poly[i + 1]]);
                        face_lines.push(line);
                    }
                }
                _ => {}
            }
        }
        if faces.is_empty() {
            return Err(MeshError::Empty);
        }
        for (fi, face) in faces.iter().enumerate() {
            if let Some(&index) = face.iter().find(|&&i| i >= vertices.len()) {
                return Err(MeshError::Parse {
                    line: face_lines[fi],
                    message: format!("vertex index {} out of range ({} vertices)", index + 1, vertices.len()),
                });
            }
        }
        let (lo, hi) = bounds(&vertices);
        let extent = (hi - lo).max_element();
        let scale2 = if extent > 0.0 { extent * extent } else { 1.0 };
        let before = faces.len();
        faces.retain(|f| 0.5 * triangle_cross(&vertices, f).length() > MIN_RELATIVE_AREA * scale2);
        if faces.len() < before {
            log::warn!("dropped {} degenerate faces", before - faces.len());
        }
        Mesh::new(vertices, faces)
    }
}

fn parse_face_index(tok: &str, vertex_count: usize, line: usize) -> Result<usize, MeshError> {
    let head = tok.split('/').next().unwrap_or("");
    let idx: i64 = head.parse().map_err(|_| MeshError::Parse {
        line,
        message: format!("invalid face index `{tok}`"),
    })?;
    // Negative indices are relative to the most recent vertex.
    let resolved = match idx {
        0 => return Err(MeshError::Parse { line, message: "face index 0 is invalid (OBJ is 1-based)".into() }),
        i if i > 0 => i - 1,
        i => vertex_count as i64 + i,
    };
    if resolved < 0 {
        return Err(MeshError::Parse { line, message: format!("relative index {idx} out of range") });
    }
    Ok(resolved as usize)
}

fn triangle_cross(vertices: &[Vec3], face: &[usize; 3]) -> Vec3 {
    let [a, b, c] = face.map(|i| vertices[i]);
    (b - a).cross(c - a)
}

fn bounds(vertices: &[Vec3]) -> (Vec3, Vec3) {
    vertices.iter().fold(
        (Vec3::splat(f64::INFINITY), Vec3::splat(f64::NEG_INFINITY)),
        |(lo, hi), &v| (lo.min(v), hi.max(v)),
    )
}

/// Loads and fan-triangulates an OBJ file.
pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| MeshError::Io { path: path.display().to_string(), source })?;
    Mesh::from_obj_str(&text)
}

/// Axis-aligned unit quad in the z = 0 plane facing +z, spanning
/// [-0.5, 0.5]^2. Used as the bundled smoke-test mesh.
pub fn unit_quad() -> Mesh {
    Mesh::new(
        vec![
            Vec3::new(-0.5, -0.5, 0.0),
            Vec3::new(0.5, -0.5, 0.0),
            Vec3::new(0.5, 0.5, 0.0),
            Vec3::new(-0.5, 0.5, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .expect("unit quad is valid")
}

/// Latitude/longitude sphere with its poles on the z axis. The first
/// triangle fan starts at the -z pole so a ray along the axis hits a vertex
/// exactly.
pub fn uv_sphere(center: Vec3, radius: f64, stacks: usize, slices: usize) -> Mesh {
    assert!(stacks >= 2 && slices >= 3);
    let mut vertices = vec![center + Vec3::new(0.0, 0.0, -radius)];
    for i in 1..stacks {
        let polar = std::f64::consts::PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let az = std::f64::consts::TAU * j as f64 / slices as f64;
            let (s, c) = polar.sin_cos();
            vertices.push(center + Vec3::new(s * az.cos(), s * az.sin(), -c) * radius);
        }
    }
    let top = vertices.len();
    vertices.push(center + Vec3::new(0.0, 0.0, radius));
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + j % slices;
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(1, j + 1), ring(1, j)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            faces.push([ring(i, j), ring(i, j + 1), ring(i + 1, j + 1)]);
            faces.push([ring(i, j), ring(i + 1, j + 1), ring(i + 1, j)]);
        }
    }
    for j in 0..slices {
        faces.push([top, ring(stacks - 1, j), ring(stacks - 1, j + 1)]);
    }
    Mesh::new(vertices, faces).expect("sphere tessellation is valid")
}
