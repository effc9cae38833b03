//! Minimal absolute pose from three bearing/point pairs (Grunert's method).

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};

use super::PoseSE3;

/// All real solutions for the camera-from-world pose such that
/// `λ_i · bearing_i = R · point_i + t` with `λ_i > 0`.
///
/// Bearings must be unit vectors in the camera frame.
pub fn solve_p3p(points: &[Vector3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Vec<PoseSE3> {
    let [p1, p2, p3] = points;
    let [j1, j2, j3] = bearings;
    let a2 = (p2 - p3).norm_squared();
    let b2 = (p1 - p3).norm_squared();
    let c2 = (p1 - p2).norm_squared();
    if a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18 {
        return Vec::new();
    }
    let ca = j2.dot(j3);
    let cb = j1.dot(j3);
    let cg = j1.dot(j2);

    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let bmc = (b2 - c2) / b2;
    let bma = (b2 - a2) / b2;

    let a4 = (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca;
    let a3 = 4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb);
    let a2c = 2.0
        * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * bmc * ca * ca
            - 4.0 * apc * ca * cb * cg
            + 2.0 * bma * cg * cg);
    let a1 = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg);
    let a0 = (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg * cg;

    let mut solutions = Vec::new();
    for v in real_quartic_roots([a4, a3, a2c, a1, a0]) {
        let denom = 2.0 * (cg - v * ca);
        if denom.abs() < 1e-12 {
            continue;
        }
        let u = ((-1.0 + amc) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / denom;
        let q = 1.0 + v * v - 2.0 * v * cb;
        if q <= 0.0 || u <= 0.0 || v <= 0.0 {
            continue;
        }
        let s1 = (b2 / q).sqrt();
        let cam = [j1 * s1, j2 * (u * s1), j3 * (v * s1)];
        if let Some(pose) = kabsch(points, &cam) {
            solutions.push(pose);
        }
    }
    solutions
}

/// Least-squares rigid alignment `dst ≈ R · src + t` (no scale).
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<PoseSE3> {
    let n = src.len();
    if n < 3 || dst.len() != n {
        return None;
    }
    let cs = src.iter().sum::<Vector3<f64>>() / n as f64;
    let cd = dst.iter().sum::<Vector3<f64>>() / n as f64;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    if !r.iter().all(|x| x.is_finite()) {
        return None;
    }
    let rot = Rotation3::from_matrix_unchecked(r);
    let t = cd - rot * cs;
    Some(PoseSE3::new(rot, t))
}

/// Real roots of `c[0] x⁴ + c[1] x³ + c[2] x² + c[3] x + c[4]`, from the
/// companion-matrix eigenvalues and polished by Newton steps.
fn real_quartic_roots(c: [f64; 5]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    if c[0].abs() < 1e-12 * scale {
        return real_cubic_roots([c[1], c[2], c[3], c[4]]);
    }
    let b = [c[1] / c[0], c[2] / c[0], c[3] / c[0], c[4] / c[0]];
    let comp = Matrix4::new(
        -b[0], -b[1], -b[2], -b[3], //
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0,
    );
    let eig = comp.complex_eigenvalues();
    let mut roots: Vec<f64> = Vec::new();
    for z in eig.iter() {
        if z.im.abs() > 1e-6 * (1.0 + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..5 {
            let f = (((c[0] * x + c[1]) * x + c[2]) * x + c[3]) * x + c[4];
            let df = ((4.0 * c[0] * x + 3.0 * c[1]) * x + 2.0 * c[2]) * x + c[3];
            if df.abs() < 1e-300 {
                break;
            }
            x -= f / df;
        }
        if x.is_finite()
            && !roots
                .iter()
                .any(|r| (r - x).abs() < 1e-10 * (1.0 + x.abs()))
        {
            roots.push(x);
        }
    }
    roots
}

fn real_cubic_roots(c: [f64; 4]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if c[0].abs() < 1e-12 * scale {
        // Quadratic or lower.
        let (a, b, cc) = (c[1], c[2], c[3]);
        if a.abs() < 1e-12 * scale {
            return if b.abs() > 0.0 {
                vec![-cc / b]
            } else {
                Vec::new()
            };
        }
        let disc = b * b - 4.0 * a * cc;
        if disc < 0.0 {
            return Vec::new();
        }
        let s = disc.sqrt();
        return vec![(-b + s) / (2.0 * a), (-b - s) / (2.0 * a)];
    }
    let b = [c[1] / c[0], c[2] / c[0], c[3] / c[0]];
    let comp = nalgebra::Matrix3::new(-b[0], -b[1], -b[2], 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    comp.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .collect()
}
