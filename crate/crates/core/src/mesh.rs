//! Discrete parameter manifolds.
//!
//! A [`ParamMesh`] is an oriented cell complex (vertices, edges, faces) over
//! a parameter space: a point, an interval, a circle, a two-torus, or a
//! two-sphere.  Families of Hamiltonians are sampled on its cells — vertices
//! carry states, edge midpoints carry transport generators, face centers
//! carry curvature — and [`DiscreteForm`] holds scalar cochains with the
//! discrete exterior derivative and cycle integration.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Which parameter manifold a mesh discretizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshKind {
    /// A single point (no parameters).
    Point,
    /// The unit interval `[0, 1]` with `n` segments.
    Interval(usize),
    /// The circle `R/Z` with `n` segments.
    Circle(usize),
    /// The two-torus `(R/Z)^2` with `n1 x n2` quads.
    Torus2(usize, usize),
    /// The unit two-sphere with `nt` colatitude rows and `np` longitudes
    /// (quads in the interior, triangles at the poles).
    Sphere2(usize, usize),
}

/// A mesh vertex: a sample point in parameter coordinates.
#[derive(Debug, Clone)]
pub struct MeshVertex {
    pub point: Vec<f64>,
}

/// An oriented mesh edge from `tail` to `head`, with the parameter
/// coordinates of its midpoint (wrap- and pole-aware).
#[derive(Debug, Clone)]
pub struct MeshEdge {
    pub tail: usize,
    pub head: usize,
    pub midpoint: Vec<f64>,
}

/// An oriented mesh face.
///
/// `boundary[k] = (edge, sign)` traverses the face once; the oriented leg
/// `k` runs from `loop_vertices[k]` to `loop_vertices[(k+1) % len]`, which
/// is the stored edge direction when `sign = +1` and its reverse when
/// `sign = -1`.
#[derive(Debug, Clone)]
pub struct MeshFace {
    pub boundary: Vec<(usize, i8)>,
    pub loop_vertices: Vec<usize>,
    pub center: Vec<f64>,
}

/// An oriented cell complex over a parameter manifold.
#[derive(Debug, Clone)]
pub struct ParamMesh {
    kind: MeshKind,
    coord_names: Vec<&'static str>,
    vertices: Vec<MeshVertex>,
    edges: Vec<MeshEdge>,
    faces: Vec<MeshFace>,
}

fn unit_sphere(theta: f64, phi: f64) -> Vec<f64> {
    vec![
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    ]
}

fn normalize3(v: [f64; 3]) -> Vec<f64> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    vec![v[0] / n, v[1] / n, v[2] / n]
}

impl ParamMesh {
    /// The one-vertex mesh of a parameter-free family.
    pub fn point() -> Self {
        ParamMesh {
            kind: MeshKind::Point,
            coord_names: vec![],
            vertices: vec![MeshVertex { point: vec![] }],
            edges: vec![],
            faces: vec![],
        }
    }

    /// The interval `[0, 1]` with `n >= 1` segments; coordinate `s`.
    pub fn interval(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Mesh("interval mesh needs at least 1 segment".into()));
        }
        let vertices = (0..=n)
            .map(|j| MeshVertex {
                point: vec![j as f64 / n as f64],
            })
            .collect();
        let edges = (0..n)
            .map(|j| MeshEdge {
                tail: j,
                head: j + 1,
                midpoint: vec![(j as f64 + 0.5) / n as f64],
            })
            .collect();
        Ok(ParamMesh {
            kind: MeshKind::Interval(n),
            coord_names: vec!["s"],
            vertices,
            edges,
            faces: vec![],
        })
    }

    /// The circle `R/Z` with `n >= 2` segments; coordinate `s` in `[0, 1)`.
    pub fn circle(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Mesh("circle mesh needs at least 2 segments".into()));
        }
        let vertices = (0..n)
            .map(|j| MeshVertex {
                point: vec![j as f64 / n as f64],
            })
            .collect();
        let edges = (0..n)
            .map(|j| MeshEdge {
                tail: j,
                head: (j + 1) % n,
                midpoint: vec![(j as f64 + 0.5) / n as f64],
            })
            .collect();
        Ok(ParamMesh {
            kind: MeshKind::Circle(n),
            coord_names: vec!["s"],
            vertices,
            edges,
            faces: vec![],
        })
    }

    /// The two-torus `(R/Z)^2` with `n1 x n2` quads; coordinates `s1, s2`.
    pub fn torus2(n1: usize, n2: usize) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::Mesh(
                "torus mesh needs at least 2 segments per direction".into(),
            ));
        }
        let vid = |i: usize, j: usize| (i % n1) * n2 + (j % n2);
        let mut vertices = Vec::with_capacity(n1 * n2);
        for i in 0..n1 {
            for j in 0..n2 {
                vertices.push(MeshVertex {
                    point: vec![i as f64 / n1 as f64, j as f64 / n2 as f64],
                });
            }
        }
        // Edge layout: first the n1*n2 `s1`-directed edges, then the
        // `s2`-directed ones.
        let e1 = |i: usize, j: usize| (i % n1) * n2 + (j % n2);
        let e2 = |i: usize, j: usize| n1 * n2 + (i % n1) * n2 + (j % n2);
        let mut edges = Vec::with_capacity(2 * n1 * n2);
        for i in 0..n1 {
            for j in 0..n2 {
                edges.push(MeshEdge {
                    tail: vid(i, j),
                    head: vid(i + 1, j),
                    midpoint: vec![(i as f64 + 0.5) / n1 as f64, j as f64 / n2 as f64],
                });
            }
        }
        for i in 0..n1 {
            for j in 0..n2 {
                edges.push(MeshEdge {
                    tail: vid(i, j),
                    head: vid(i, j + 1),
                    midpoint: vec![i as f64 / n1 as f64, (j as f64 + 0.5) / n2 as f64],
                });
            }
        }
        let mut faces = Vec::with_capacity(n1 * n2);
        for i in 0..n1 {
            for j in 0..n2 {
                faces.push(MeshFace {
                    boundary: vec![
                        (e1(i, j), 1),
                        (e2(i + 1, j), 1),
                        (e1(i, j + 1), -1),
                        (e2(i, j), -1),
                    ],
                    loop_vertices: vec![vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)],
                    center: vec![(i as f64 + 0.5) / n1 as f64, (j as f64 + 0.5) / n2 as f64],
                });
            }
        }
        Ok(ParamMesh {
            kind: MeshKind::Torus2(n1, n2),
            coord_names: vec!["s1", "s2"],
            vertices,
            edges,
            faces,
        })
    }

    /// The unit two-sphere with `nt >= 2` colatitude rows and `np >= 3`
    /// longitudes.  Coordinates are the components `nx, ny, nz` of the unit
    /// normal, so models stay non-singular at the poles.  Interior cells are
    /// quads; the polar caps are triangle fans around single pole vertices.
    pub fn sphere2(nt: usize, np: usize) -> Result<Self> {
        if nt < 2 || np < 3 {
            return Err(Error::Mesh(
                "sphere mesh needs nt >= 2 rows and np >= 3 longitudes".into(),
            ));
        }
        let dt = std::f64::consts::PI / nt as f64;
        let dp = 2.0 * std::f64::consts::PI / np as f64;
        // Vertices: north pole, rows 1..nt-1, south pole.
        let north = 0usize;
        let south = 1 + (nt - 1) * np;
        let vid = |i: usize, j: usize| 1 + (i - 1) * np + (j % np);
        let mut vertices = vec![MeshVertex {
            point: vec![0.0, 0.0, 1.0],
        }];
        for i in 1..nt {
            for j in 0..np {
                vertices.push(MeshVertex {
                    point: unit_sphere(i as f64 * dt, j as f64 * dp),
                });
            }
        }
        vertices.push(MeshVertex {
            point: vec![0.0, 0.0, -1.0],
        });
        // Edges: meridional rows i=0..nt-1 (row i to row i+1), then zonal
        // rows i=1..nt-1.  Midpoints are normalized chord midpoints, which
        // coincide with the parametric midpoints of the great-circle arcs.
        let mer = |i: usize, j: usize| i * np + (j % np);
        let zon = |i: usize, j: usize| nt * np + (i - 1) * np + (j % np);
        let mut edges = Vec::with_capacity(nt * np + (nt - 1) * np);
        for i in 0..nt {
            for j in 0..np {
                let (tail, head) = if i == 0 {
                    (north, vid(1, j))
                } else if i == nt - 1 {
                    (vid(nt - 1, j), south)
                } else {
                    (vid(i, j), vid(i + 1, j))
                };
                edges.push(MeshEdge {
                    tail,
                    head,
                    midpoint: unit_sphere((i as f64 + 0.5) * dt, j as f64 * dp),
                });
            }
        }
        for i in 1..nt {
            for j in 0..np {
                let a = &vertices[vid(i, j)].point;
                let b = &vertices[vid(i, j + 1)].point;
                edges.push(MeshEdge {
                    tail: vid(i, j),
                    head: vid(i, j + 1),
                    midpoint: normalize3([a[0] + b[0], a[1] + b[1], a[2] + b[2]]),
                });
            }
        }
        // Faces row by row: north triangles, interior quads, south
        // triangles, all oriented by (colatitude, longitude).
        let mut faces = Vec::with_capacity(nt * np);
        for j in 0..np {
            faces.push(MeshFace {
                boundary: vec![(mer(0, j), 1), (zon(1, j), 1), (mer(0, j + 1), -1)],
                loop_vertices: vec![north, vid(1, j), vid(1, j + 1)],
                center: unit_sphere(0.5 * dt, (j as f64 + 0.5) * dp),
            });
        }
        for i in 1..nt - 1 {
            for j in 0..np {
                faces.push(MeshFace {
                    boundary: vec![
                        (mer(i, j), 1),
                        (zon(i + 1, j), 1),
                        (mer(i, j + 1), -1),
                        (zon(i, j), -1),
                    ],
                    loop_vertices: vec![vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)],
                    center: unit_sphere((i as f64 + 0.5) * dt, (j as f64 + 0.5) * dp),
                });
            }
        }
        for j in 0..np {
            faces.push(MeshFace {
                boundary: vec![
                    (mer(nt - 1, j), 1),
                    (mer(nt - 1, j + 1), -1),
                    (zon(nt - 1, j), -1),
                ],
                loop_vertices: vec![vid(nt - 1, j), south, vid(nt - 1, j + 1)],
                center: unit_sphere((nt as f64 - 0.5) * dt, (j as f64 + 0.5) * dp),
            });
        }
        Ok(ParamMesh {
            kind: MeshKind::Sphere2(nt, np),
            coord_names: vec!["nx", "ny", "nz"],
            vertices,
            edges,
            faces,
        })
    }

    pub fn kind(&self) -> MeshKind {
        self.kind
    }

    /// Dimension of the underlying manifold (0, 1, or 2).
    pub fn dim(&self) -> usize {
        match self.kind {
            MeshKind::Point => 0,
            MeshKind::Interval(_) | MeshKind::Circle(_) => 1,
            MeshKind::Torus2(..) | MeshKind::Sphere2(..) => 2,
        }
    }

    /// Names of the parameter coordinates carried by every cell point.
    pub fn coord_names(&self) -> &[&'static str] {
        &self.coord_names
    }

    pub fn vertices(&self) -> &[MeshVertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[MeshEdge] {
        &self.edges
    }

    pub fn faces(&self) -> &[MeshFace] {
        &self.faces
    }

    /// Number of cells of dimension `dim`.
    pub fn cells(&self, dim: usize) -> usize {
        match dim {
            0 => self.vertices.len(),
            1 => self.edges.len(),
            2 => self.faces.len(),
            _ => 0,
        }
    }

    /// Parameter coordinates of a cell's anchor: the vertex itself, an edge
    /// midpoint, or a face center.
    pub fn cell_point(&self, dim: usize, idx: usize) -> &[f64] {
        match dim {
            0 => &self.vertices[idx].point,
            1 => &self.edges[idx].midpoint,
            2 => &self.faces[idx].center,
            _ => &[],
        }
    }

    /// Generating 1-cycles of the manifold, as oriented edge lists: one for
    /// the circle, two for the torus, none otherwise.
    pub fn generator_cycles(&self) -> Vec<Vec<(usize, i8)>> {
        match self.kind {
            MeshKind::Circle(n) => vec![(0..n).map(|j| (j, 1i8)).collect()],
            MeshKind::Torus2(n1, n2) => {
                let along_1 = (0..n1).map(|i| (i * n2, 1i8)).collect();
                let along_2 = (0..n2).map(|j| (n1 * n2 + j, 1i8)).collect();
                vec![along_1, along_2]
            }
            _ => vec![],
        }
    }

    /// Structural validation: every face boundary closes up, traverses its
    /// `loop_vertices` in order, and `∂∂ = 0` (each edge is swept out as
    /// often forward as backward over all face boundaries).
    pub fn validate(&self) -> Result<()> {
        for (fidx, face) in self.faces.iter().enumerate() {
            if face.boundary.len() != face.loop_vertices.len() {
                return Err(Error::Mesh(format!(
                    "face {fidx}: boundary and vertex loop lengths differ"
                )));
            }
            let k = face.boundary.len();
            for leg in 0..k {
                let (eidx, sign) = face.boundary[leg];
                let edge = &self.edges[eidx];
                let (from, to) = if sign >= 0 {
                    (edge.tail, edge.head)
                } else {
                    (edge.head, edge.tail)
                };
                if from != face.loop_vertices[leg] || to != face.loop_vertices[(leg + 1) % k] {
                    return Err(Error::Mesh(format!(
                        "face {fidx}: leg {leg} does not follow the vertex loop"
                    )));
                }
            }
        }
        // ∂∂ = 0 on the edge level: d applied twice to arbitrary 0-forms
        // vanishes iff each edge's total signed face count cancels per face
        // pair; verify via a random-ish 0-form.
        let mut f = DiscreteForm::zero(self, 0);
        for (j, v) in f.values.iter_mut().enumerate() {
            *v = Complex64::new((j as f64 * 0.7311).sin(), (j as f64 * 1.3713).cos());
        }
        let ddf = f.d(self)?.d(self)?;
        let worst = ddf
            .values
            .iter()
            .map(|z| z.norm())
            .fold(0.0f64, f64::max);
        if worst > 1e-12 {
            return Err(Error::Mesh(format!("∂∂ ≠ 0: residual {worst:e}")));
        }
        Ok(())
    }
}

/// A scalar cochain on a [`ParamMesh`]: one complex value per cell of the
/// given degree.
#[derive(Debug, Clone)]
pub struct DiscreteForm {
    degree: usize,
    pub values: Vec<Complex64>,
}

impl DiscreteForm {
    pub fn zero(mesh: &ParamMesh, degree: usize) -> Self {
        DiscreteForm {
            degree,
            values: vec![Complex64::new(0.0, 0.0); mesh.cells(degree)],
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Discrete exterior derivative: a `(degree+1)`-form whose value on a
    /// cell is the signed sum of this form over the cell's boundary.
    pub fn d(&self, mesh: &ParamMesh) -> Result<DiscreteForm> {
        match self.degree {
            0 => {
                let mut out = DiscreteForm::zero(mesh, 1);
                for (idx, edge) in mesh.edges().iter().enumerate() {
                    out.values[idx] = self.values[edge.head] - self.values[edge.tail];
                }
                Ok(out)
            }
            1 => {
                let mut out = DiscreteForm::zero(mesh, 2);
                for (idx, face) in mesh.faces().iter().enumerate() {
                    let mut total = Complex64::new(0.0, 0.0);
                    for &(eidx, sign) in &face.boundary {
                        total += self.values[eidx] * (sign as f64);
                    }
                    out.values[idx] = total;
                }
                Ok(out)
            }
            _ => Err(Error::Mesh(
                "discrete d only defined for degrees 0 and 1".into(),
            )),
        }
    }

    /// Sum over all cells of the form's degree (the integral over the
    /// fundamental cycle for top-degree forms on closed manifolds).
    pub fn integrate(&self) -> Complex64 {
        self.values.iter().sum()
    }

    /// Integral of a 1-form along an oriented edge list.
    pub fn integrate_cycle(&self, cycle: &[(usize, i8)]) -> Complex64 {
        cycle
            .iter()
            .map(|&(eidx, sign)| self.values[eidx] * (sign as f64))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euler(mesh: &ParamMesh) -> isize {
        mesh.cells(0) as isize - mesh.cells(1) as isize + mesh.cells(2) as isize
    }

    #[test]
    fn interval_structure() {
        let m = ParamMesh::interval(4).unwrap();
        assert_eq!(m.cells(0), 5);
        assert_eq!(m.cells(1), 4);
        assert_eq!(m.cells(2), 0);
        m.validate().unwrap();
        // d of a 0-form telescopes along the interval.
        let mut f = DiscreteForm::zero(&m, 0);
        for (j, v) in f.values.iter_mut().enumerate() {
            *v = Complex64::new(j as f64 * j as f64, 0.0);
        }
        let df = f.d(&m).unwrap();
        let total: Complex64 = df.values.iter().sum();
        assert!((total - (f.values[4] - f.values[0])).norm() < 1e-14);
    }

    #[test]
    fn circle_exact_forms_integrate_to_zero() {
        let m = ParamMesh::circle(12).unwrap();
        m.validate().unwrap();
        let mut f = DiscreteForm::zero(&m, 0);
        for (j, v) in f.values.iter_mut().enumerate() {
            *v = Complex64::new((j as f64).cos(), (2.0 * j as f64).sin());
        }
        let df = f.d(&m).unwrap();
        for cycle in m.generator_cycles() {
            assert!(df.integrate_cycle(&cycle).norm() < 1e-13);
        }
    }

    #[test]
    fn torus_structure_and_dd_zero() {
        let m = ParamMesh::torus2(4, 6).unwrap();
        assert_eq!(euler(&m), 0);
        assert_eq!(m.cells(2), 24);
        m.validate().unwrap();
        assert_eq!(m.generator_cycles().len(), 2);
        for cycle in m.generator_cycles() {
            // Generator cycles close up.
            let mut f = DiscreteForm::zero(&m, 0);
            for (j, v) in f.values.iter_mut().enumerate() {
                *v = Complex64::new((j as f64 * 0.31).sin(), 0.0);
            }
            let df = f.d(&m).unwrap();
            assert!(df.integrate_cycle(&cycle).norm() < 1e-13);
        }
    }

    #[test]
    fn sphere_structure_and_dd_zero() {
        let m = ParamMesh::sphere2(5, 8).unwrap();
        assert_eq!(euler(&m), 2);
        assert_eq!(m.cells(2), 40);
        m.validate().unwrap();
        // All cell anchors are unit vectors.
        for dim in 0..=2 {
            for idx in 0..m.cells(dim) {
                let p = m.cell_point(dim, idx);
                let n2: f64 = p.iter().map(|x| x * x).sum();
                assert!((n2 - 1.0).abs() < 1e-12, "cell ({dim}, {idx})");
            }
        }
    }

    #[test]
    fn sphere_acceptance_resolution() {
        let m = ParamMesh::sphere2(20, 40).unwrap();
        assert_eq!(m.cells(2), 800);
        assert_eq!(euler(&m), 2);
        m.validate().unwrap();
    }

    #[test]
    fn exact_two_forms_integrate_to_zero_on_closed_surfaces() {
        for m in [
            ParamMesh::torus2(5, 5).unwrap(),
            ParamMesh::sphere2(6, 9).unwrap(),
        ] {
            let mut f = DiscreteForm::zero(&m, 1);
            for (j, v) in f.values.iter_mut().enumerate() {
                *v = Complex64::new((j as f64 * 0.77).sin(), (j as f64 * 0.13).cos());
            }
            let df = f.d(&m).unwrap();
            assert!(df.integrate().norm() < 1e-11);
        }
    }

    #[test]
    fn bad_resolutions_rejected() {
        assert!(ParamMesh::interval(0).is_err());
        assert!(ParamMesh::circle(1).is_err());
        assert!(ParamMesh::torus2(1, 5).is_err());
        assert!(ParamMesh::sphere2(1, 8).is_err());
        assert!(ParamMesh::sphere2(4, 2).is_err());
    }
}
