//! Weighted least-squares fitting of truncated Taylor expansions (n-jets).
//!
//! The height function `z = J(x, y) = Σ β_{k-j,j} x^{k-j} y^j` (total degree
//! `k ≤ n`) is fitted in a patch's canonical frame. Monomial columns are in
//! graded order with the x power descending inside each degree:
//! `1, x, y, x², xy, y², x³, ...`.

use nalgebra::{DMatrix, Vector3};

use super::{LocalFrame, Patch, UnitNormal};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve};

/// Lower bound applied to predicted point weights.
pub const WEIGHT_FLOOR: f64 = 1e-4;

/// Per-component bound on predicted offsets, in canonical units.
pub const MAX_OFFSET: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JetOrder(usize);

impl JetOrder {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidValue("jet order must be at least 1".into()));
        }
        Ok(JetOrder(n))
    }

    pub fn degree(self) -> usize {
        self.0
    }

    /// `(n + 1)(n + 2) / 2`.
    pub fn term_count(self) -> usize {
        (self.0 + 1) * (self.0 + 2) / 2
    }
}

/// Exponent pairs `(x power, y power)` in column order.
pub fn monomial_exponents(order: JetOrder) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(order.term_count());
    for degree in 0..=order.degree() as u32 {
        for j in 0..=degree {
            out.push((degree - j, j));
        }
    }
    out
}

fn falling_factorial(a: u32, d: u32) -> f64 {
    (0..d).map(|i| (a - i) as f64).product()
}

/// Row-major `N x N_n` matrix of the monomials differentiated `dx` times in x
/// and `dy` times in y. `(0, 0)` is the Vandermonde matrix itself.
pub fn monomial_rows(xy: &[[f64; 2]], order: JetOrder, dx: u32, dy: u32) -> Vec<f64> {
    let exps = monomial_exponents(order);
    let nn = exps.len();
    let mut out = vec![0.0; xy.len() * nn];
    for (row, &[x, y]) in out.chunks_exact_mut(nn).zip(xy) {
        for (slot, &(a, b)) in row.iter_mut().zip(&exps) {
            if a < dx || b < dy {
                continue;
            }
            let coef = falling_factorial(a, dx) * falling_factorial(b, dy);
            *slot = coef * x.powi((a - dx) as i32) * y.powi((b - dy) as i32);
        }
    }
    out
}

fn check_finite(xy: &[[f64; 2]]) -> Result<()> {
    if xy.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidValue("non-finite coordinate".into()))
    }
}

pub fn build_vandermonde(xy: &[[f64; 2]], order: JetOrder) -> Result<DMatrix<f64>> {
    check_finite(xy)?;
    let rows = monomial_rows(xy, order, 0, 0);
    Ok(DMatrix::from_row_slice(xy.len(), order.term_count(), &rows))
}

/// Analytic `(∂M/∂x, ∂M/∂y)`.
pub fn vandermonde_partials(
    xy: &[[f64; 2]],
    order: JetOrder,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_finite(xy)?;
    let nn = order.term_count();
    let dx = monomial_rows(xy, order, 1, 0);
    let dy = monomial_rows(xy, order, 0, 1);
    Ok((
        DMatrix::from_row_slice(xy.len(), nn, &dx),
        DMatrix::from_row_slice(xy.len(), nn, &dy),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct JetCoefficients {
    order: JetOrder,
    beta: Vec<f64>,
}

impl JetCoefficients {
    pub fn new(order: JetOrder, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != order.term_count() {
            return Err(Error::Size(format!(
                "order {} jet needs {} coefficients, got {}",
                order.degree(),
                order.term_count(),
                beta.len()
            )));
        }
        Ok(JetCoefficients { order, beta })
    }

    pub fn zeros(order: JetOrder) -> Self {
        JetCoefficients {
            order,
            beta: vec![0.0; order.term_count()],
        }
    }

    pub fn order(&self) -> JetOrder {
        self.order
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Height `J(x, y)`.
    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        dot(&monomial_rows(&[[x, y]], self.order, 0, 0), &self.beta)
    }

    /// `(∂J/∂x, ∂J/∂y)` at `(x, y)`.
    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let gx = dot(&monomial_rows(&[[x, y]], self.order, 1, 0), &self.beta);
        let gy = dot(&monomial_rows(&[[x, y]], self.order, 0, 1), &self.beta);
        (gx, gy)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Point weights of the fit, each in `[floor, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        Self::with_floor(weights, WEIGHT_FLOOR)
    }

    /// Like [`WeightVector::new`] with a custom positive floor.
    pub fn with_floor(mut weights: Vec<f64>, floor: f64) -> Result<Self> {
        if floor <= 0.0 {
            return Err(Error::InvalidValue("weight floor must be positive".into()));
        }
        for (i, w) in weights.iter_mut().enumerate() {
            if !w.is_finite() || *w <= 0.0 || *w > 1.0 {
                return Err(Error::InvalidValue(format!(
                    "weight {i} = {w} outside (0, 1]"
                )));
            }
            *w = w.max(floor);
        }
        Ok(WeightVector(weights))
    }

    pub fn uniform(n: usize) -> Self {
        WeightVector(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-point displacements applied before fitting, clamped to [`MAX_OFFSET`].
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetVector(Vec<Vector3<f64>>);

impl OffsetVector {
    pub fn new(offsets: Vec<Vector3<f64>>) -> Result<Self> {
        if offsets.iter().flat_map(|o| o.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite offset".into()));
        }
        Ok(OffsetVector(
            offsets
                .into_iter()
                .map(|o| o.map(|v| v.clamp(-MAX_OFFSET, MAX_OFFSET)))
                .collect(),
        ))
    }

    pub fn zeros(n: usize) -> Self {
        OffsetVector(vec![Vector3::zeros(); n])
    }

    pub fn as_slice(&self) -> &[Vector3<f64>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Result of a weighted jet solve.
#[derive(Debug, Clone, PartialEq)]
pub struct JetFit {
    pub coefficients: JetCoefficients,
    /// Set when the plain factorization failed and a ridge term was added.
    pub regularized: bool,
}

/// Closed-form weighted least squares `β = (MᵀWM)⁻¹ MᵀWz` on the offset
/// patch points.
pub fn solve_weighted_jet(
    patch: &Patch,
    order: JetOrder,
    weights: &WeightVector,
    offsets: &OffsetVector,
) -> Result<JetFit> {
    let np = patch.len();
    let nn = order.term_count();
    if np < nn {
        return Err(Error::Size(format!(
            "order {} jet needs at least {nn} points, patch has {np}",
            order.degree()
        )));
    }
    if weights.len() != np || offsets.len() != np {
        return Err(Error::Size(format!(
            "patch has {np} points but {} weights and {} offsets",
            weights.len(),
            offsets.len()
        )));
    }

    let shifted: Vec<Vector3<f64>> = patch
        .local_points
        .iter()
        .zip(offsets.as_slice())
        .map(|(p, o)| p + o)
        .collect();
    let xy: Vec<[f64; 2]> = shifted.iter().map(|p| [p.x, p.y]).collect();
    check_finite(&xy)?;
    let m = monomial_rows(&xy, order, 0, 0);

    let mut normal = vec![0.0; nn * nn];
    let mut rhs = vec![0.0; nn];
    for ((row, p), &w) in m.chunks_exact(nn).zip(&shifted).zip(weights.as_slice()) {
        for a in 0..nn {
            let wa = w * row[a];
            rhs[a] += wa * p.z;
            for b in 0..=a {
                normal[a * nn + b] += wa * row[b];
            }
        }
    }
    for a in 0..nn {
        for b in 0..a {
            normal[b * nn + a] = normal[a * nn + b];
        }
    }

    let (factor, regularized) = match cholesky(&normal, nn) {
        Some(l) => (l, false),
        None => {
            let trace: f64 = (0..nn).map(|i| normal[i * nn + i]).sum();
            let ridge = 1e-9 * trace / nn as f64;
            for i in 0..nn {
                normal[i * nn + i] += ridge;
            }
            let l = cholesky(&normal, nn).ok_or_else(|| {
                Error::Conditioning(format!(
                    "weighted normal equations singular even with ridge {ridge:e}"
                ))
            })?;
            (l, true)
        }
    };
    let beta = cholesky_solve(&factor, nn, &rhs);
    Ok(JetFit {
        coefficients: JetCoefficients { order, beta },
        regularized,
    })
}

/// `normalize(-β₁, -β₂, 1)` in the canonical frame.
pub fn canonical_jet_normal(beta: &JetCoefficients) -> Vector3<f64> {
    let b = beta.beta();
    Vector3::new(-b[1], -b[2], 1.0).normalize()
}

pub fn jet_normal(beta: &JetCoefficients, frame: &LocalFrame) -> UnitNormal {
    let n = frame.direction_to_world(&canonical_jet_normal(beta));
    UnitNormal::new(n).expect("rotation of a unit vector is non-zero")
}

/// Normals of the implicit surface `J(x, y) - z = 0` at every patch point,
/// in world frame.
pub fn neighbor_normals(beta: &JetCoefficients, patch: &Patch, order: JetOrder) -> Vec<UnitNormal> {
    debug_assert_eq!(order, beta.order());
    let xy: Vec<[f64; 2]> = patch.local_points.iter().map(|p| [p.x, p.y]).collect();
    let nn = order.term_count();
    let dx = monomial_rows(&xy, order, 1, 0);
    let dy = monomial_rows(&xy, order, 0, 1);
    dx.chunks_exact(nn)
        .zip(dy.chunks_exact(nn))
        .map(|(rx, ry)| {
            let local = Vector3::new(-dot(rx, beta.beta()), -dot(ry, beta.beta()), 1.0);
            UnitNormal::new(patch.frame.direction_to_world(&local))
                .expect("z component is 1 so the gradient is non-zero")
        })
        .collect()
}

/// Unweighted, offset-free jet normal.
pub fn classical_jet_normal(patch: &Patch, order: JetOrder) -> Result<UnitNormal> {
    let fit = solve_weighted_jet(
        patch,
        order,
        &WeightVector::uniform(patch.len()),
        &OffsetVector::zeros(patch.len()),
    )?;
    Ok(jet_normal(&fit.coefficients, &patch.frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{extract_patch, PointCloud};
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn order(n: usize) -> JetOrder {
        JetOrder::new(n).unwrap()
    }

    fn grid_patch(f: impl Fn(f64, f64) -> f64, side: usize) -> Patch {
        let mut pts = Vec::new();
        for i in 0..side {
            for j in 0..side {
                let x = -1.0 + 2.0 * i as f64 / (side - 1) as f64;
                let y = -1.0 + 2.0 * j as f64 / (side - 1) as f64;
                pts.push(Vector3::new(x, y, f(x, y)));
            }
        }
        Patch::from_local_points(pts)
    }

    fn unit_fit(patch: &Patch, n: usize) -> JetFit {
        solve_weighted_jet(
            patch,
            order(n),
            &WeightVector::uniform(patch.len()),
            &OffsetVector::zeros(patch.len()),
        )
        .unwrap()
    }

    #[test]
    fn term_count_law() {
        for n in 1..=6 {
            let m = build_vandermonde(&[[0.3, -0.7]], order(n)).unwrap();
            assert_eq!(m.ncols(), (n + 1) * (n + 2) / 2);
            assert_eq!(order(n).term_count(), m.ncols());
        }
        assert!(JetOrder::new(0).is_err());
    }

    #[test]
    fn vandermonde_rows() {
        let m = build_vandermonde(&[[0.0, 0.0]], order(3)).unwrap();
        let mut expect = vec![0.0; 10];
        expect[0] = 1.0;
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), expect);
        let m = build_vandermonde(&[[1.0, 2.0]], order(1)).unwrap();
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 2.0]);
        let m = build_vandermonde(&[[2.0, 3.0]], order(2)).unwrap();
        assert_eq!(
            m.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]
        );
        assert!(build_vandermonde(&[[f64::NAN, 0.0]], order(1)).is_err());
    }

    #[test]
    fn partial_rows() {
        let (dx, dy) = vandermonde_partials(&[[0.4, -1.3]], order(1)).unwrap();
        assert_eq!(dx.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
        assert_eq!(dy.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
        let (dx, _) = vandermonde_partials(&[[2.0, 3.0]], order(2)).unwrap();
        assert_eq!(
            dx.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0, 0.0, 4.0, 3.0, 0.0]
        );
    }

    proptest! {
        #[test]
        fn partials_match_central_differences(
            x in -1.0f64..1.0, y in -1.0f64..1.0, n in 1usize..=5
        ) {
            let h = 1e-6;
            let o = order(n);
            let (dx, dy) = vandermonde_partials(&[[x, y]], o).unwrap();
            let fd = |a: [f64; 2], b: [f64; 2]| {
                let pa = build_vandermonde(&[a], o).unwrap();
                let pb = build_vandermonde(&[b], o).unwrap();
                (pa - pb) / (2.0 * h)
            };
            let fx = fd([x + h, y], [x - h, y]);
            let fy = fd([x, y + h], [x, y - h]);
            prop_assert!((dx - fx).amax() < 1e-7);
            prop_assert!((dy - fy).amax() < 1e-7);
        }

        #[test]
        fn weight_scaling_leaves_beta_unchanged(seed in 0u64..1000, c in 1e-3f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<_> = (0..40).map(|_| {
                let x: f64 = rng.random_range(-1.0..1.0);
                let y: f64 = rng.random_range(-1.0..1.0);
                Vector3::new(x, y, 0.2 * x * y - 0.3 * y * y + rng.random_range(-0.05..0.05))
            }).collect();
            let w: Vec<f64> = (0..40).map(|_| rng.random_range(0.05..1.0)).collect();
            let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
            let patch = Patch::from_local_points(pts);
            let off = OffsetVector::zeros(40);
            let a = solve_weighted_jet(&patch, order(3), &WeightVector::new(w).unwrap(), &off).unwrap();
            let b = solve_weighted_jet(&patch, order(3), &WeightVector::with_floor(scaled, 1e-12).unwrap(), &off).unwrap();
            for (u, v) in a.coefficients.beta().iter().zip(b.coefficients.beta()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn plane_fits_to_zero_for_any_order() {
        let patch = grid_patch(|_, _| 0.0, 8);
        for n in 1..=4 {
            let fit = unit_fit(&patch, n);
            assert!(!fit.regularized);
            assert!(fit.coefficients.beta().iter().all(|b| b.abs() < 1e-14));
        }
    }

    #[test]
    fn linear_surface_exact() {
        let patch = grid_patch(|x, _| 0.5 * x, 5);
        let fit = unit_fit(&patch, 1);
        let b = fit.coefficients.beta();
        assert!(b[0].abs() < 1e-14 && (b[1] - 0.5).abs() < 1e-14 && b[2].abs() < 1e-14);
    }

    #[test]
    fn paraboloid_grid_recovered() {
        // 60 samples: a 6 x 10 grid.
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..10 {
                let x = -0.8 + 1.6 * i as f64 / 5.0;
                let y = -0.9 + 1.8 * j as f64 / 9.0;
                pts.push(Vector3::new(x, y, 0.1 * x * x + 0.2 * y * y));
            }
        }
        let fit = unit_fit(&Patch::from_local_points(pts), 2);
        let expect = [0.0, 0.0, 0.0, 0.1, 0.0, 0.2];
        for (b, e) in fit.coefficients.beta().iter().zip(expect) {
            assert!((b - e).abs() < 1e-8, "{b} vs {e}");
        }
    }

    #[test]
    fn near_zero_weight_excludes_outlier() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut pts: Vec<_> = (0..30)
            .map(|_| {
                let x: f64 = rng.random_range(-1.0..1.0);
                let y: f64 = rng.random_range(-1.0..1.0);
                Vector3::new(x, y, 0.3 * x - 0.1 * x * y + rng.random_range(-0.02..0.02))
            })
            .collect();
        let inliers = Patch::from_local_points(pts.clone());
        pts.push(Vector3::new(0.2, 0.1, 5.0));
        let with_outlier = Patch::from_local_points(pts);

        let mut w = vec![1.0; 31];
        w[30] = 1e-12;
        let weighted = solve_weighted_jet(
            &with_outlier,
            order(2),
            &WeightVector::with_floor(w, 1e-15).unwrap(),
            &OffsetVector::zeros(31),
        )
        .unwrap();
        let reference = unit_fit(&inliers, 2);
        for (a, b) in weighted.coefficients.beta().iter().zip(reference.coefficients.beta()) {
            assert!((a - b).abs() < 1e-6);
        }

        // At the default floor the outlier still barely moves the fit.
        let mut w = vec![1.0; 31];
        w[30] = WEIGHT_FLOOR;
        let floored = solve_weighted_jet(
            &with_outlier,
            order(2),
            &WeightVector::new(w).unwrap(),
            &OffsetVector::zeros(31),
        )
        .unwrap();
        let diff: f64 = floored
            .coefficients
            .beta()
            .iter()
            .zip(reference.coefficients.beta())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = reference.coefficients.beta().iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(diff / scale <= 1e-3, "relative change {}", diff / scale);
    }

    #[test]
    fn offsets_shift_points_before_fitting() {
        let patch = grid_patch(|_, _| 0.0, 5);
        let offsets = OffsetVector::new(vec![Vector3::new(0.0, 0.0, 0.1); 25]).unwrap();
        let fit = solve_weighted_jet(&patch, order(1), &WeightVector::uniform(25), &offsets).unwrap();
        assert!((fit.coefficients.beta()[0] - 0.1).abs() < 1e-14);
        let clamped = OffsetVector::new(vec![Vector3::new(1.0, -3.0, 0.1)]).unwrap();
        assert_eq!(clamped.as_slice()[0], Vector3::new(0.25, -0.25, 0.1));
    }

    #[test]
    fn singular_system_regularized_or_rejected() {
        // Points on the x axis only: y monomials vanish.
        let pts: Vec<_> = (0..10).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let patch = Patch::from_local_points(pts);
        let res = solve_weighted_jet(
            &patch,
            order(1),
            &WeightVector::uniform(10),
            &OffsetVector::zeros(10),
        );
        match res {
            Ok(fit) => assert!(fit.regularized),
            Err(e) => assert!(matches!(e, Error::Conditioning(_))),
        }
        let tiny = Patch::from_local_points(vec![Vector3::zeros(); 3]);
        assert!(matches!(
            solve_weighted_jet(&tiny, order(2), &WeightVector::uniform(3), &OffsetVector::zeros(3)),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn jet_normal_examples() {
        let frame = LocalFrame::identity();
        let n = jet_normal(&JetCoefficients::zeros(order(2)), &frame);
        assert_eq!(*n.as_vector(), Vector3::z());
        let beta = JetCoefficients::new(order(1), vec![0.0, 0.5, 0.0]).unwrap();
        let n = jet_normal(&beta, &frame);
        assert!((n.as_vector() - Vector3::new(-0.4472, 0.0, 0.8944)).amax() < 1e-4);

        let rot = Rotation3::from_euler_angles(0.1, 0.7, -0.4).into_inner();
        let frame = LocalFrame {
            rotation: rot,
            translation: Vector3::new(1.0, 2.0, 3.0),
            scale: 2.0,
        };
        let rotated = jet_normal(&beta, &frame);
        let canonical = canonical_jet_normal(&beta);
        assert!((rotated.as_vector() - rot.transpose() * canonical).norm() < 1e-12);
    }

    #[test]
    fn neighbor_normals_examples() {
        let patch = grid_patch(|x, y| 0.1 * x * x + 0.2 * y * y, 8);
        let o = order(2);
        let flat = neighbor_normals(&JetCoefficients::zeros(o), &patch, o);
        assert!(flat.iter().all(|n| *n.as_vector() == Vector3::z()));

        let fit = unit_fit(&patch, 2);
        let probe = Patch::from_local_points(vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.1)]);
        let normals = neighbor_normals(&fit.coefficients, &probe, o);
        let at_query = jet_normal(&fit.coefficients, &probe.frame);
        assert!((normals[0].as_vector() - at_query.as_vector()).norm() < 1e-12);
        let expect = Vector3::new(-0.2, 0.0, 1.0).normalize();
        assert!((normals[1].as_vector() - expect).norm() < 1e-6);
    }

    #[test]
    fn classical_jet_recovers_sphere_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pts = Vec::new();
        while pts.len() < 400 {
            let v: Vector3<f64> = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                let p = v / n;
                if p.z > 0.5 {
                    pts.push(p);
                }
            }
        }
        let cloud = PointCloud::new(pts.clone(), None).unwrap();
        let patch = extract_patch(&cloud, 0, 40).unwrap();
        let n = classical_jet_normal(&patch, order(2)).unwrap();
        let angle = n.as_vector().dot(&pts[0]).abs().min(1.0).acos().to_degrees();
        assert!(angle < 0.5, "angle {angle}");

        let composed = {
            let fit = unit_fit(&patch, 2);
            jet_normal(&fit.coefficients, &patch.frame)
        };
        assert_eq!(n, composed);
    }

    #[test]
    fn classical_jet_plane_exact() {
        let normal = Vector3::new(0.3, -0.4, 0.8).normalize();
        let u = normal.cross(&Vector3::x()).normalize();
        let v = normal.cross(&u);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<_> = (0..60)
            .map(|_| u * rng.random_range(-1.0..1.0) + v * rng.random_range(-1.0..1.0))
            .collect();
        let patch = extract_patch(&PointCloud::new(pts, None).unwrap(), 2, 30).unwrap();
        let n = classical_jet_normal(&patch, order(3)).unwrap();
        assert!(n.as_vector().dot(&normal).abs() > 1.0 - 1e-12);
    }
}
