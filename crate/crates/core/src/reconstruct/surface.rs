use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use super::ReconstructError;
use crate::model::{TriMesh, VoxelGrid};

/// Cube corner offsets `(x, y, z)`, corner `i` has bits `x | y<<1 | z<<2`.
const CORNER: [[i64; 3]; 8] = [
    [0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0],
    [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1],
];

/// Six tetrahedra sharing the 0–7 diagonal. Every cube face is split along the
/// diagonal through its lowest corner, so neighbouring cubes agree.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 3, 2, 7],
    [0, 2, 6, 7],
    [0, 6, 4, 7],
    [0, 4, 5, 7],
    [0, 5, 1, 7],
];

type EdgeKey = (u64, u64);

/// Padded lattice: original voxel `v` sits at padded index `v + 1`.
struct Lattice<'a> {
    grid: &'a VoxelGrid,
    dims: [i64; 3],
}

impl Lattice<'_> {
    fn occupied(&self, p: [i64; 3]) -> bool {
        let [x, y, z] = p.map(|c| c - 1);
        let [nx, ny, nz] = self.grid.dims().map(|d| d as i64);
        x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz
            && self.grid.occupancy()[[z as usize, y as usize, x as usize]]
    }

    fn index(&self, p: [i64; 3]) -> u64 {
        (p[0] + self.dims[0] * (p[1] + self.dims[1] * p[2])) as u64
    }

    fn point(&self, i: u64) -> [i64; 3] {
        let i = i as i64;
        [i % self.dims[0], (i / self.dims[0]) % self.dims[1], i / (self.dims[0] * self.dims[1])]
    }
}

fn edge(a: u64, b: u64) -> EdgeKey {
    (a.min(b), a.max(b))
}

fn cross_i(a: [i64; 3], b: [i64; 3]) -> [i64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Twice the edge midpoint, exact in integers.
fn mid2(l: &Lattice<'_>, e: EdgeKey) -> [i64; 3] {
    let (p, q) = (l.point(e.0), l.point(e.1));
    [p[0] + q[0], p[1] + q[1], p[2] + q[2]]
}

/// Emits `tri` wound so its normal points along `outward`.
fn push_oriented(l: &Lattice<'_>, out: &mut Vec<[EdgeKey; 3]>, tri: [EdgeKey; 3], outward: [i64; 3]) {
    let [a, b, c] = tri.map(|e| mid2(l, e));
    let n = cross_i(
        [b[0] - a[0], b[1] - a[1], b[2] - a[2]],
        [c[0] - a[0], c[1] - a[1], c[2] - a[2]],
    );
    if n[0] * outward[0] + n[1] * outward[1] + n[2] * outward[2] >= 0 {
        out.push(tri);
    } else {
        out.push([tri[0], tri[2], tri[1]]);
    }
}

fn polygonize_tet(l: &Lattice<'_>, corners: [[i64; 3]; 4], out: &mut Vec<[EdgeKey; 3]>) {
    let (mut inside, mut outside) = (Vec::with_capacity(4), Vec::with_capacity(4));
    for p in corners {
        if l.occupied(p) {
            inside.push(p);
        } else {
            outside.push(p);
        }
    }
    if inside.is_empty() || outside.is_empty() {
        return;
    }
    let sum = |v: &[[i64; 3]]| v.iter().fold([0i64; 3], |a, p| [a[0] + p[0], a[1] + p[1], a[2] + p[2]]);
    let (si, so) = (sum(&inside), sum(&outside));
    let (ni, no) = (inside.len() as i64, outside.len() as i64);
    let outward = [0, 1, 2].map(|k| so[k] * ni - si[k] * no);
    let e = |a: [i64; 3], b: [i64; 3]| edge(l.index(a), l.index(b));
    match (inside.len(), outside.len()) {
        (1, 3) => {
            let i = inside[0];
            push_oriented(l, out, [e(i, outside[0]), e(i, outside[1]), e(i, outside[2])], outward);
        }
        (3, 1) => {
            let o = outside[0];
            push_oriented(l, out, [e(o, inside[0]), e(o, inside[1]), e(o, inside[2])], outward);
        }
        _ => {
            let (i1, i2, o1, o2) = (inside[0], inside[1], outside[0], outside[1]);
            let q = [e(i1, o1), e(i1, o2), e(i2, o2), e(i2, o1)];
            push_oriented(l, out, [q[0], q[1], q[2]], outward);
            push_oriented(l, out, [q[0], q[2], q[3]], outward);
        }
    }
}

/// Closed surface of the occupancy field at `iso`, vertices in mm with voxel
/// `(x, y, z)` centered at `((x+0.5)·sx, (y+0.5)·sy, (z+0.5)·sz)`.
///
/// Cells are split into tetrahedra, which leaves no ambiguous configurations,
/// and the grid is padded by one empty voxel so solids touching the border
/// still close. Vertices are ordered by their lattice edge, so the result does
/// not depend on thread scheduling. Only `iso` in (0, 1) is meaningful for a
/// binary field; crossings are placed at the value-interpolated point.
pub fn marching_cubes(grid: &VoxelGrid, iso: f64) -> Result<TriMesh, ReconstructError> {
    if grid.is_empty() {
        return Err(ReconstructError::EmptyGrid);
    }
    let [nx, ny, nz] = grid.dims().map(|d| d as i64);
    let l = Lattice {
        grid,
        dims: [nx + 2, ny + 2, nz + 2],
    };
    let layers: Vec<Vec<[EdgeKey; 3]>> = (0..nz + 1)
        .into_par_iter()
        .map(|z| {
            let mut out = Vec::new();
            for y in 0..ny + 1 {
                for x in 0..nx + 1 {
                    let occ: Vec<bool> = CORNER.iter().map(|c| l.occupied([x + c[0], y + c[1], z + c[2]])).collect();
                    if occ.iter().all(|&o| o) || occ.iter().all(|&o| !o) {
                        continue;
                    }
                    for tet in TETS {
                        let corners = tet.map(|i| [x + CORNER[i][0], y + CORNER[i][1], z + CORNER[i][2]]);
                        polygonize_tet(&l, corners, &mut out);
                    }
                }
            }
            out
        })
        .collect();
    let tris: Vec<[EdgeKey; 3]> = layers.into_iter().flatten().collect();
    let mut keys: Vec<EdgeKey> = tris.iter().flatten().copied().collect();
    keys.par_sort_unstable();
    keys.dedup();
    let spacing = grid.spacing_mm();
    let t = iso.clamp(0.0, 1.0);
    let vertices = keys
        .iter()
        .map(|&(a, b)| {
            // crossing measured from the occupied end (value 1) toward the empty one
            let (pa, pb) = (l.point(a), l.point(b));
            let (inside, outside) = if l.occupied(pa) { (pa, pb) } else { (pb, pa) };
            let f = 1.0 - t;
            [0, 1, 2].map(|k| {
                let c = inside[k] as f64 + f * (outside[k] - inside[k]) as f64;
                (c - 0.5) * spacing[k]
            })
        })
        .collect();
    let index = |k: &EdgeKey| keys.binary_search(k).expect("key collected above") as u32;
    let triangles = tris.iter().map(|t| t.each_ref().map(index)).collect();
    Ok(TriMesh::new(vertices, triangles)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshStats {
    pub volume_mm3: f64,
    pub area_mm2: f64,
    /// Every edge is used by exactly two triangles traversing it in opposite directions.
    pub watertight: bool,
    pub euler_characteristic: i64,
    pub shell_count: usize,
    pub vertex_count: usize,
    pub triangle_count: usize,
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        parent[i as usize] = parent[parent[i as usize] as usize];
        i = parent[i as usize];
    }
    i
}

pub fn mesh_stats(m: &TriMesh) -> Result<MeshStats, ReconstructError> {
    let verts = m.vertices();
    let (mut volume, mut area) = (0.0, 0.0);
    let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(m.triangles().len() * 3);
    let mut parent: Vec<u32> = (0..verts.len() as u32).collect();
    let mut used = vec![false; verts.len()];
    for (t, tri) in m.triangles().iter().enumerate() {
        let [a, b, c] = tri.map(|i| verts[i as usize]);
        volume += (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0]))
            / 6.0;
        area += m.triangle_area(t);
        for k in 0..3 {
            let (u, v) = (tri[k], tri[(k + 1) % 3]);
            *directed.entry((u, v)).or_insert(0) += 1;
            used[u as usize] = true;
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru != rv {
                parent[ru.max(rv) as usize] = ru.min(rv);
            }
        }
    }
    let watertight = !m.is_empty()
        && directed
            .iter()
            .all(|(&(u, v), &n)| n == 1 && directed.get(&(v, u)) == Some(&1));
    let undirected = directed.keys().filter(|&&(u, v)| u < v || !directed.contains_key(&(v, u))).count();
    let vertex_count = used.iter().filter(|&&u| u).count();
    let shell_count = (0..verts.len() as u32)
        .filter(|&i| used[i as usize] && find(&mut parent, i) == i)
        .count();
    if watertight && volume < 0.0 {
        return Err(ReconstructError::InconsistentWinding { volume_mm3: volume });
    }
    Ok(MeshStats {
        volume_mm3: volume,
        area_mm2: area,
        watertight,
        euler_characteristic: vertex_count as i64 - undirected as i64 + m.triangles().len() as i64,
        shell_count,
        vertex_count,
        triangle_count: m.triangles().len(),
    })
}

/// Umbrella-operator smoothing; each pass moves vertices `lambda` of the way
/// toward the mean of their neighbours.
pub fn laplacian_smooth(m: &TriMesh, iterations: usize, lambda: f64) -> TriMesh {
    let n = m.vertices().len();
    let mut nbrs: Vec<Vec<u32>> = vec![Vec::new(); n];
    for tri in m.triangles() {
        for k in 0..3 {
            let (u, v) = (tri[k], tri[(k + 1) % 3]);
            nbrs[u as usize].push(v);
            nbrs[v as usize].push(u);
        }
    }
    for list in &mut nbrs {
        list.sort_unstable();
        list.dedup();
    }
    let mut verts = m.vertices().to_vec();
    for _ in 0..iterations {
        verts = (0..n)
            .into_par_iter()
            .map(|i| {
                let p = verts[i];
                if nbrs[i].is_empty() {
                    return p;
                }
                let mut c = [0.0; 3];
                for &j in &nbrs[i] {
                    for k in 0..3 {
                        c[k] += verts[j as usize][k];
                    }
                }
                let inv = 1.0 / nbrs[i].len() as f64;
                [0, 1, 2].map(|k| p[k] + lambda * (c[k] * inv - p[k]))
            })
            .collect();
    }
    TriMesh::new(verts, m.triangles().to_vec()).expect("topology unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(occ: Array3<bool>) -> VoxelGrid {
        VoxelGrid::new(occ, [1.0, 1.0, 1.0]).unwrap()
    }

    fn sphere(n: usize, r: f64) -> VoxelGrid {
        let c = n as f64 / 2.0;
        grid(Array3::from_shape_fn((n, n, n), |(z, y, x)| {
            let d = |v: usize| v as f64 + 0.5 - c;
            d(x).powi(2) + d(y).powi(2) + d(z).powi(2) <= r * r
        }))
    }

    /// Independent volume oracle: divergence theorem with the z-component
    /// field, `∮ z n_z dA`, summed per triangle.
    fn z_flux_volume(m: &TriMesh) -> f64 {
        m.triangles()
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| m.vertices()[i as usize]);
                let nz2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                (a[2] + b[2] + c[2]) / 3.0 * nz2 / 2.0
            })
            .sum()
    }

    /// Shells counted by flooding triangles through shared vertices.
    fn shells_oracle(m: &TriMesh) -> usize {
        let mut by_vertex: HashMap<u32, Vec<usize>> = HashMap::new();
        for (t, tri) in m.triangles().iter().enumerate() {
            for &v in tri {
                by_vertex.entry(v).or_default().push(t);
            }
        }
        let mut seen = vec![false; m.triangles().len()];
        let mut shells = 0;
        for s in 0..seen.len() {
            if seen[s] {
                continue;
            }
            shells += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(t) = stack.pop() {
                for v in m.triangles()[t] {
                    for &u in &by_vertex[&v] {
                        if !seen[u] {
                            seen[u] = true;
                            stack.push(u);
                        }
                    }
                }
            }
        }
        shells
    }

    #[test]
    fn unit_cube_stats() {
        let s = mesh_stats(&TriMesh::unit_cube()).unwrap();
        assert!((s.volume_mm3 - 1.0).abs() < 1e-12);
        assert!((s.area_mm2 - 6.0).abs() < 1e-12);
        assert!(s.watertight);
        assert_eq!(s.euler_characteristic, 2);
        assert_eq!(s.shell_count, 1);
    }

    #[test]
    fn open_and_flipped_cubes() {
        let cube = TriMesh::unit_cube();
        let open = TriMesh::new(cube.vertices().to_vec(), cube.triangles()[2..].to_vec()).unwrap();
        assert!(!mesh_stats(&open).unwrap().watertight);
        assert!(matches!(
            mesh_stats(&cube.flipped()),
            Err(ReconstructError::InconsistentWinding { .. })
        ));
    }

    #[test]
    fn sphere_volume_and_closure() {
        let g = sphere(48, 20.0);
        let m = marching_cubes(&g, 0.5).unwrap();
        let s = mesh_stats(&m).unwrap();
        let analytic = 4.0 / 3.0 * PI * 8000.0;
        assert!(s.watertight);
        assert_eq!(s.euler_characteristic, 2);
        assert!((s.volume_mm3 - analytic).abs() / analytic < 0.05, "{}", s.volume_mm3);
        assert!((z_flux_volume(&m) - s.volume_mm3).abs() < 1e-6 * analytic);
    }

    #[test]
    fn full_grid_closes_at_border() {
        let g = grid(Array3::from_elem((10, 10, 10), true));
        let s = mesh_stats(&marching_cubes(&g, 0.5).unwrap()).unwrap();
        assert!(s.watertight);
        assert!((729.0..=1000.0).contains(&s.volume_mm3), "{}", s.volume_mm3);
    }

    #[test]
    fn two_blobs_two_shells() {
        let mut occ = Array3::from_elem((12, 12, 24), false);
        occ.slice_mut(ndarray::s![2..8, 2..8, 2..8]).fill(true);
        occ.slice_mut(ndarray::s![3..9, 3..9, 14..20]).fill(true);
        let m = marching_cubes(&grid(occ), 0.5).unwrap();
        let s = mesh_stats(&m).unwrap();
        assert_eq!(s.shell_count, 2);
        assert_eq!(shells_oracle(&m), 2);
        assert_eq!(s.euler_characteristic, 4);
    }

    #[test]
    fn torus_has_genus_one() {
        let occ = Array3::from_shape_fn((10, 30, 30), |(z, y, x)| {
            let (dx, dy, dz) = (x as f64 - 14.5, y as f64 - 14.5, z as f64 - 4.5);
            let ring = dx.hypot(dy) - 9.0;
            ring * ring + dz * dz <= 9.0
        });
        let s = mesh_stats(&marching_cubes(&grid(occ), 0.5).unwrap()).unwrap();
        assert!(s.watertight);
        assert_eq!(s.euler_characteristic, 0);
    }

    #[test]
    fn empty_grid_rejected() {
        let g = grid(Array3::from_elem((3, 3, 3), false));
        assert!(matches!(marching_cubes(&g, 0.5), Err(ReconstructError::EmptyGrid)));
    }

    #[test]
    fn anisotropic_spacing_scales_volume() {
        let occ = sphere(30, 12.0).into_occupancy();
        let unit = mesh_stats(&marching_cubes(&grid(occ.clone()), 0.5).unwrap()).unwrap().volume_mm3;
        let g = VoxelGrid::new(occ, [0.5, 0.5, 2.0]).unwrap();
        let scaled = mesh_stats(&marching_cubes(&g, 0.5).unwrap()).unwrap().volume_mm3;
        assert!((scaled - unit * 0.5).abs() < 1e-9 * unit);
    }

    #[test]
    fn smoothing_keeps_closure_and_zero_passes_is_identity() {
        let m = marching_cubes(&sphere(24, 8.0), 0.5).unwrap();
        assert_eq!(laplacian_smooth(&m, 0, 0.5), m);
        let s = mesh_stats(&laplacian_smooth(&m, 5, 0.5)).unwrap();
        assert!(s.watertight && s.volume_mm3 > 0.0);
    }

    fn random_grid() -> impl Strategy<Value = Array3<bool>> {
        (1usize..7, 1usize..7, 1usize..7).prop_flat_map(|(a, b, c)| {
            prop::collection::vec(prop::bool::weighted(0.45), a * b * c)
                .prop_map(move |v| Array3::from_shape_vec((a, b, c), v).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn random_grids_give_closed_surfaces(occ in random_grid()) {
            let g = grid(occ.clone());
            if g.is_empty() {
                return Ok(());
            }
            let m = marching_cubes(&g, 0.5).unwrap();
            let s = mesh_stats(&m).unwrap();
            prop_assert!(s.watertight);
            prop_assert!(s.volume_mm3 > 0.0);
            prop_assert_eq!(s.euler_characteristic % 2, 0);
            prop_assert!(s.euler_characteristic <= 2 * s.shell_count as i64);
            // volume agrees with the voxel count up to one shell of surface voxels
            let (d, h, w) = occ.dim();
            let surface = occ.indexed_iter().filter(|&((z, y, x), &o)| {
                o && [(-1i64, 0i64, 0i64), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
                    .iter()
                    .any(|&(dz, dy, dx)| {
                        let (zz, yy, xx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                        zz < 0 || yy < 0 || xx < 0 || zz >= d as i64 || yy >= h as i64 || xx >= w as i64
                            || !occ[[zz as usize, yy as usize, xx as usize]]
                    })
            }).count();
            prop_assert!((s.volume_mm3 - g.count() as f64).abs() <= surface as f64);
            prop_assert!(s.shell_count >= 1);
            prop_assert_eq!(marching_cubes(&g, 0.5).unwrap(), m);
        }
    }
}
