use super::ModelError;

/// Indexed triangle surface, vertices in mm. Triangles wind counterclockwise
/// when viewed from outside.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[u32; 3]>) -> Result<Self, ModelError> {
        let count = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= count) {
                return Err(ModelError::IndexOutOfRange {
                    triangle: t,
                    index,
                    count,
                });
            }
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        let u = sub(b, a);
        let v = sub(c, a);
        0.5 * norm(cross(u, v))
    }

    pub fn corners(&self, t: usize) -> [[f64; 3]; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    /// Drops zero-area triangles and unreferenced vertices.
    pub fn remove_degenerate(&mut self) {
        let keep: Vec<[u32; 3]> = (0..self.triangles.len())
            .filter(|&t| {
                let [a, b, c] = self.triangles[t];
                a != b && b != c && a != c && self.triangle_area(t) > 0.0
            })
            .map(|t| self.triangles[t])
            .collect();
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        for tri in &keep {
            for &i in tri {
                if remap[i as usize] == u32::MAX {
                    remap[i as usize] = verts.len() as u32;
                    verts.push(self.vertices[i as usize]);
                }
            }
        }
        self.triangles = keep.iter().map(|t| t.map(|i| remap[i as usize])).collect();
        self.vertices = verts;
    }

    /// Same surface with every triangle's winding reversed.
    pub fn flipped(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
        }
    }

    /// Unit cube `[0,1]^3` with outward winding.
    pub fn unit_cube() -> Self {
        let vertices = (0..8)
            .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
            .collect();
        let triangles = vec![
            [0, 2, 1], [1, 2, 3], // z = 0
            [4, 5, 6], [5, 7, 6], // z = 1
            [0, 1, 4], [1, 5, 4], // y = 0
            [2, 6, 3], [3, 6, 7], // y = 1
            [0, 4, 2], [2, 4, 6], // x = 0
            [1, 3, 5], [3, 7, 5], // x = 1
        ];
        Self {
            vertices,
            triangles,
        }
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_index() {
        let err = TriMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 3]]).unwrap_err();
        assert!(matches!(err, ModelError::IndexOutOfRange { index: 3, .. }));
    }

    #[test]
    fn removes_degenerate_triangles() {
        let mut m = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, 0.0, 0.0], [9.0; 3]],
            vec![[0, 1, 2], [0, 1, 3], [2, 2, 1]],
        )
        .unwrap();
        m.remove_degenerate();
        assert_eq!(m.triangles().len(), 1);
        assert_eq!(m.vertices().len(), 3);
    }
}
