//! The two three-dimensional irreps of A5 as rotation groups of the
//! icosahedron, built from golden-ratio unit quaternions.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::group::Group;
use crate::linalg::Matrix;

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
fn rotation(q: [f64; 4]) -> Matrix {
    let [w, x, y, z] = q;
    Matrix::from_rows(&[
        vec![1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        vec![2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        vec![2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
    .expect("3x3")
}

/// Generators `(a, b)` with `a² = b³ = (ab)⁵ = 1`. `phi` is either root of
/// `t² = t + 1`; the two roots give the two inequivalent irreps.
fn generator_matrices(phi: f64) -> (Matrix, Matrix) {
    let a = rotation([0.0, 0.5, 0.5 * (phi - 1.0), 0.5 * phi]);
    let b = rotation([0.5, 0.5, 0.5, 0.5]);
    (a, b)
}

fn matrix_order(m: &Matrix, max: usize) -> Option<usize> {
    let id = Matrix::identity(m.rows());
    let mut p = m.clone();
    for k in 1..=max {
        if p.sub(&id).frobenius() < 1e-9 {
            return Some(k);
        }
        p = p.matmul(m);
    }
    None
}

/// Element generators `(a, b)` of A5 with orders 2, 3 and `ab` of order 5.
fn element_generators(group: &Group) -> Result<(usize, usize)> {
    for a in group.elements() {
        if group.element_order(a) != 2 {
            continue;
        }
        for b in group.elements() {
            if group.element_order(b) == 3
                && group.element_order(group.mul(a, b)) == 5
                && group.generate(&[a, b]).order() == group.order()
            {
                return Ok((a, b));
            }
        }
    }
    Err(Error::Unsupported("no (2,3,5) generating pair".into()))
}

/// Per-element matrices of the icosahedral irrep for the given golden-ratio
/// root.
pub fn icosahedral_matrices(group: &Group, phi: f64) -> Result<Vec<Matrix>> {
    let (ga, gb) = element_generators(group)?;
    let (ma, mb) = generator_matrices(phi);
    if matrix_order(&ma, 2) != Some(2)
        || matrix_order(&mb, 3) != Some(3)
        || matrix_order(&ma.matmul(&mb), 5) != Some(5)
    {
        return Err(Error::Validation("icosahedral generators violate the (2,3,5) relations".into()));
    }
    let mut mats: Vec<Option<Matrix>> = vec![None; group.order()];
    mats[group.identity()] = Some(Matrix::identity(3));
    let mut queue = VecDeque::from([group.identity()]);
    while let Some(g) = queue.pop_front() {
        let mg = mats[g].clone().expect("visited");
        for (s, ms) in [(ga, &ma), (gb, &mb)] {
            let h = group.mul(g, s);
            if mats[h].is_none() {
                mats[h] = Some(mg.matmul(ms));
                queue.push_back(h);
            }
        }
    }
    mats.into_iter()
        .map(|m| m.ok_or_else(|| Error::Validation("generators do not reach every element".into())))
        .collect()
}

pub fn golden_ratio_roots() -> [f64; 2] {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    [phi, 1.0 - phi]
}
