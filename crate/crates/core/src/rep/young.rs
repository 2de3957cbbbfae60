//! Young's orthogonal form for the irreps of S_n.

use crate::linalg::Matrix;

/// Partitions of `n` in decreasing lexicographic order.
pub fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, max: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n == 0 {
            out.push(prefix.clone());
            return;
        }
        for part in (1..=n.min(max)).rev() {
            prefix.push(part);
            go(n - part, part, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(n, n, &mut Vec::new(), &mut out);
    out
}

pub fn conjugate_partition(shape: &[usize]) -> Vec<usize> {
    let cols = shape.first().copied().unwrap_or(0);
    (0..cols).map(|c| shape.iter().filter(|&&r| r > c).count()).collect()
}

/// Number of standard Young tableaux, by the hook-length formula.
pub fn hook_length_dim(shape: &[usize]) -> usize {
    let n: usize = shape.iter().sum();
    let conj = conjugate_partition(shape);
    let mut num: u128 = (1..=n as u128).product();
    let mut den: u128 = 1;
    for (r, &len) in shape.iter().enumerate() {
        for c in 0..len {
            den *= (len - c - 1 + conj[c] - r - 1 + 1) as u128;
        }
    }
    num /= den;
    num as usize
}

/// Position (row, col) of each entry `0..n` in a standard tableau.
type Tableau = Vec<(usize, usize)>;

pub fn standard_tableaux(shape: &[usize]) -> Vec<Tableau> {
    let n: usize = shape.iter().sum();
    let mut out = Vec::new();
    let mut filled = vec![0usize; shape.len()];
    let mut pos = Vec::with_capacity(n);
    fn go(shape: &[usize], filled: &mut [usize], pos: &mut Tableau, n: usize, out: &mut Vec<Tableau>) {
        if pos.len() == n {
            out.push(pos.clone());
            return;
        }
        for r in 0..shape.len() {
            let c = filled[r];
            let fits = c < shape[r] && (r == 0 || filled[r - 1] > c);
            if fits {
                filled[r] += 1;
                pos.push((r, c));
                go(shape, filled, pos, n, out);
                pos.pop();
                filled[r] -= 1;
            }
        }
    }
    go(shape, &mut filled, &mut pos, n, &mut out);
    out
}

/// Matrices of the adjacent transpositions `s_k = (k k+1)`, `k = 0..n-1`.
pub fn adjacent_transposition_matrices(shape: &[usize]) -> Vec<Matrix> {
    let n: usize = shape.iter().sum();
    let tableaux = standard_tableaux(shape);
    let d = tableaux.len();
    let index = |t: &Tableau| tableaux.iter().position(|u| u == t);
    (0..n.saturating_sub(1))
        .map(|k| {
            let mut m = Matrix::zeros(d, d);
            for (i, t) in tableaux.iter().enumerate() {
                let (r0, c0) = t[k];
                let (r1, c1) = t[k + 1];
                let content = |r: usize, c: usize| c as f64 - r as f64;
                let axial = content(r1, c1) - content(r0, c0);
                m[(i, i)] = 1.0 / axial;
                if r0 != r1 && c0 != c1 {
                    let mut swapped = t.clone();
                    swapped.swap(k, k + 1);
                    let j = index(&swapped).expect("swapping non-adjacent cells keeps the tableau standard");
                    m[(j, i)] = (1.0 - 1.0 / (axial * axial)).sqrt();
                }
            }
            m
        })
        .collect()
}
