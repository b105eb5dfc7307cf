//! Discrete gradient / divergence / symmetric-gradient operators on a level
//! view, assembled as explicit sparse matrices so divergence is the exact
//! negative transpose of the gradient by construction.
//!
//! Stencil: `(grad u)_{i,k} = (avg_{+k} - avg_{-k}) / 2` with face-area
//! weighted neighbor averages over unit (index-space) spacing; a missing
//! face (root boundary) reflects `u_i`. Index-space differences keep the
//! regularizer and the per-cell histogram data term on the same scale at
//! every octree level — with world-unit differences the regularizer grows
//! like `1 / h` and flattens the field at fine levels. Symmetric tensors are
//! stored as `[xx, yy, zz, xy, xz, yz]` with the doubled off-diagonal inner
//! product, and all adjoints are taken in those inner products.

use rand::{Rng, SeedableRng};

use crate::morton::FACES;
use crate::par;

use super::view::LevelView;

/// Compressed sparse rows; `apply` computes `y = A x`.
#[derive(Debug, Clone)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl Csr {
    fn from_triplets(rows: usize, cols: usize, triplets: &[(u32, u32, f64)]) -> Csr {
        let mut counts = vec![0usize; rows + 1];
        for &(r, _, _) in triplets {
            counts[r as usize + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let indptr = counts.clone();
        let mut fill = counts;
        let mut indices = vec![0u32; triplets.len()];
        let mut values = vec![0f64; triplets.len()];
        for &(r, c, v) in triplets {
            let slot = fill[r as usize];
            indices[slot] = c;
            values[slot] = v;
            fill[r as usize] += 1;
        }
        Csr {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    fn transpose(&self) -> Csr {
        let mut triplets: Vec<(u32, u32, f64)> = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                triplets.push((self.indices[k], r as u32, self.values[k]));
            }
        }
        Csr::from_triplets(self.cols, self.rows, &triplets)
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        let indptr = &self.indptr;
        let indices = &self.indices;
        let values = &self.values;
        par::fill(y, |r| {
            let mut acc = 0.0;
            for k in indptr[r]..indptr[r + 1] {
                acc += values[k] * x[indices[k] as usize];
            }
            acc
        });
    }

    pub fn apply_seq(&self, x: &[f64], y: &mut [f64]) {
        par::fill_seq(y, |r| {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k] as usize];
            }
            acc
        });
    }
}

/// Gradient (3n x n) and its exact transpose, plus the estimated norm of the
/// stacked operator `K (u, v) = (grad u - v, symgrad v)`.
#[derive(Debug)]
pub struct DiscreteOperators {
    pub n: usize,
    pub g: Csr,
    pub gt: Csr,
    pub l_norm: f64,
}

pub fn assemble_operators(view: &LevelView, power_iters: usize) -> DiscreteOperators {
    let n = view.cells.len();
    let mut triplets: Vec<(u32, u32, f64)> = Vec::new();

    for i in 0..view.n_interior {
        let inv = 0.5; // central difference over unit index spacing
        for face in FACES {
            let entries = view.neighbors(i, face);
            let axis = face.axis();
            let row = (i * 3 + axis) as u32;
            let sign = face.sign() as f64 * inv;
            if entries.is_empty() {
                // Root boundary: reflected neighbor average equals u_i, so
                // the face contributes sign * u_i (pairs of reflecting faces
                // cancel, single ones behave like zero normal derivative).
                triplets.push((row, i as u32, sign));
            } else {
                let total: f64 = entries.iter().map(|(_, a)| *a).sum();
                for &(j, area) in entries {
                    triplets.push((row, j, sign * area / total));
                }
            }
        }
    }
    // Frozen cells' rows stay empty: their duals are pinned to zero and the
    // transpose therefore never reads them.

    let g = Csr::from_triplets(3 * n, n, &triplets);
    let gt = g.transpose();
    let mut ops = DiscreteOperators {
        n,
        g,
        gt,
        l_norm: 0.0,
    };
    let frozen: Vec<bool> = view.cells.iter().map(|c| c.frozen).collect();
    ops.l_norm = estimate_l_norm(&ops, &frozen, power_iters) * 1.1;
    ops
}

impl DiscreteOperators {
    pub fn grad(&self, u: &[f64], out: &mut [f64]) {
        self.g.apply(u, out);
    }

    /// `out = -gradᵀ p`.
    pub fn div(&self, p: &[f64], out: &mut [f64]) {
        self.gt.apply(p, out);
        par::for_each_mut(out, |_, x| *x = -*x);
    }

    /// Symmetric gradient of a per-cell 3-vector field, 6 components per
    /// cell, derived from the gradient rows.
    pub fn symgrad(&self, v: &[f64], out6: &mut [f64]) {
        debug_assert_eq!(v.len(), 3 * self.n);
        debug_assert_eq!(out6.len(), 6 * self.n);
        let g = &self.g;
        // One pass per cell: d[k][c] = row(i, k) . v_c.
        par::for_each_chunk_mut(out6, 6, |i, out| {
            let mut d = [[0.0f64; 3]; 3];
            for k in 0..3 {
                let r = i * 3 + k;
                for t in g.indptr[r]..g.indptr[r + 1] {
                    let j = g.indices[t] as usize;
                    let w = g.values[t];
                    d[k][0] += w * v[j * 3];
                    d[k][1] += w * v[j * 3 + 1];
                    d[k][2] += w * v[j * 3 + 2];
                }
            }
            out[0] = d[0][0];
            out[1] = d[1][1];
            out[2] = d[2][2];
            out[3] = 0.5 * (d[0][1] + d[1][0]);
            out[4] = 0.5 * (d[0][2] + d[2][0]);
            out[5] = 0.5 * (d[1][2] + d[2][1]);
        });
    }

    /// `out = -symgradᵀ q` in the doubled-off-diagonal inner product;
    /// `scratch` must hold `3 n` values.
    pub fn div2(&self, q6: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        debug_assert_eq!(q6.len(), 6 * self.n);
        debug_assert_eq!(out.len(), 3 * self.n);
        debug_assert_eq!(scratch.len(), 3 * self.n);
        let n = self.n;
        // (symgradᵀ_W q)_c = Gᵀ w_c with w_c[(i, k)] = q_full[i][k][c].
        let mut tmp = vec![0.0; n];
        for c in 0..3 {
            par::fill(scratch, |r| {
                let (i, k) = (r / 3, r % 3);
                q_full(&q6[i * 6..i * 6 + 6], k, c)
            });
            self.gt.apply(scratch, &mut tmp);
            for (j, val) in tmp.iter().enumerate() {
                out[j * 3 + c] = -val;
            }
        }
    }
}

#[inline]
fn q_full(q6: &[f64], k: usize, c: usize) -> f64 {
    match (k.min(c), k.max(c)) {
        (0, 0) => q6[0],
        (1, 1) => q6[1],
        (2, 2) => q6[2],
        (0, 1) => q6[3],
        (0, 2) => q6[4],
        _ => q6[5],
    }
}

/// Frobenius norm squared in the symmetric-tensor inner product.
#[inline]
pub fn sym_norm_sq(q6: &[f64]) -> f64 {
    q6[0] * q6[0]
        + q6[1] * q6[1]
        + q6[2] * q6[2]
        + 2.0 * (q6[3] * q6[3] + q6[4] * q6[4] + q6[5] * q6[5])
}

fn zero_frozen(frozen: &[bool], per_cell: usize, x: &mut [f64]) {
    for (i, f) in frozen.iter().enumerate() {
        if *f {
            for k in 0..per_cell {
                x[i * per_cell + k] = 0.0;
            }
        }
    }
}

/// Power iteration on `KᵀK` restricted to non-frozen slots; returns the
/// converging-from-below Rayleigh estimate of `||K||` (callers add a safety
/// factor).
fn estimate_l_norm(ops: &DiscreteOperators, frozen: &[bool], iters: usize) -> f64 {
    let n = ops.n;
    if n == 0 {
        return 1.0;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5EED);
    let mut u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut v: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    zero_frozen(frozen, 1, &mut u);
    zero_frozen(frozen, 3, &mut v);

    let mut p = vec![0.0; 3 * n];
    let mut q = vec![0.0; 6 * n];
    let mut gu = vec![0.0; 3 * n];
    let mut ut = vec![0.0; n];
    let mut vt = vec![0.0; 3 * n];
    let mut scratch = vec![0.0; 3 * n];
    let mut rayleigh: f64 = 0.0;

    for _ in 0..iters {
        // Normalize (u, v).
        let norm = (dot(&u, &u) + dot(&v, &v)).sqrt();
        if norm == 0.0 {
            return 1.0;
        }
        for x in u.iter_mut() {
            *x /= norm;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        // w = K (u, v): p = G u - v, q = S v.
        ops.grad(&u, &mut gu);
        for i in 0..3 * n {
            p[i] = gu[i] - v[i];
        }
        ops.symgrad(&v, &mut q);
        zero_frozen(frozen, 3, &mut p);
        zero_frozen(frozen, 6, &mut q);
        let w_norm_sq = dot(&p, &p) + sym_total(&q);
        rayleigh = w_norm_sq.sqrt();
        // (u, v) <- Kᵀ w = (Gᵀ p, -p + S* q) = (-div p, -p - div2 q).
        ops.gt.apply(&p, &mut ut);
        ops.div2(&q, &mut vt, &mut scratch);
        for i in 0..3 * n {
            vt[i] = -p[i] - vt[i];
        }
        zero_frozen(frozen, 1, &mut ut);
        zero_frozen(frozen, 3, &mut vt);
        std::mem::swap(&mut u, &mut ut);
        std::mem::swap(&mut v, &mut vt);
    }
    rayleigh.max(f64::MIN_POSITIVE)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sym_total(q: &[f64]) -> f64 {
    q.chunks_exact(6).map(sym_norm_sq).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morton::MortonCode;
    use crate::oracle;
    use crate::record::{CubeRecord, OctreeFile, RecordWriter};
    use crate::solver::view::build_level_view;
    use nalgebra::{DMatrix, Point3};

    fn uniform_view(depth: u8) -> LevelView {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.octr");
        let frame = crate::geom::RootFrame::new(Point3::origin(), 1.0).unwrap();
        let mut codes = Vec::new();
        let m = 1u32 << depth;
        for x in 0..m {
            for y in 0..m {
                for z in 0..m {
                    codes.push(MortonCode::encode(depth, x, y, z));
                }
            }
        }
        codes.sort();
        let mut w = RecordWriter::create(&path, frame).unwrap();
        for c in &codes {
            w.push(&CubeRecord::filler(*c)).unwrap();
        }
        w.finish().unwrap();
        let mut file = OctreeFile::open(&path).unwrap();
        let n = file.len();
        build_level_view(&mut file, 0, n, depth, false).unwrap()
    }

    fn adaptive_view() -> LevelView {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.octr");
        let frame = crate::geom::RootFrame::new(Point3::origin(), 1.0).unwrap();
        let leaves = oracle::balanced_completion(&[
            MortonCode::encode(4, 3, 9, 2),
            MortonCode::encode(3, 1, 1, 1),
        ]);
        let mut w = RecordWriter::create(&path, frame).unwrap();
        for c in &leaves {
            w.push(&CubeRecord::filler(*c)).unwrap();
        }
        w.finish().unwrap();
        let mut file = OctreeFile::open(&path).unwrap();
        let n = file.len();
        build_level_view(&mut file, 0, n, 30, false).unwrap()
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let view = uniform_view(2);
        let ops = assemble_operators(&view, 10);
        let u = vec![0.7; view.cells.len()];
        let mut g = vec![0.0; 3 * view.cells.len()];
        ops.grad(&u, &mut g);
        for x in &g {
            assert!(x.abs() < 1e-14);
        }
    }

    #[test]
    fn linear_field_has_unit_gradient_in_interior() {
        // Finite-difference identity: a field growing by one per cell along
        // x has gradient (1, 0, 0) in the interior.
        let view = uniform_view(3);
        let ops = assemble_operators(&view, 10);
        let edge = view.cells[0].edge;
        let u: Vec<f64> = view.cells.iter().map(|c| c.center.x / edge).collect();
        let mut g = vec![0.0; 3 * view.cells.len()];
        ops.grad(&u, &mut g);
        let m = 1u32 << 3;
        for (i, c) in view.cells.iter().enumerate() {
            let (x, y, z) = c.code.decode();
            let interior =
                |t: u32| t > 0 && t < m - 1;
            if interior(x) && interior(y) && interior(z) {
                assert!((g[i * 3] - 1.0).abs() < 1e-12, "du/dx at {i}");
                assert!(g[i * 3 + 1].abs() < 1e-12);
                assert!(g[i * 3 + 2].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjointness_is_structural() {
        use rand::{Rng, SeedableRng};
        for view in [uniform_view(2), adaptive_view()] {
            let ops = assemble_operators(&view, 10);
            let n = view.cells.len();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
            for _ in 0..20 {
                let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let p: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut gu = vec![0.0; 3 * n];
                ops.grad(&u, &mut gu);
                let mut divp = vec![0.0; n];
                ops.div(&p, &mut divp);
                let lhs = dot(&gu, &p);
                let rhs = dot(&u, &divp);
                let scale = (dot(&u, &u).sqrt() * dot(&p, &p).sqrt()).max(1e-30);
                assert!(
                    (lhs + rhs).abs() <= 1e-10 * scale,
                    "grad/div adjointness: {lhs} vs {rhs}"
                );

                let v: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let q: Vec<f64> = (0..6 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut sv = vec![0.0; 6 * n];
                ops.symgrad(&v, &mut sv);
                let mut d2 = vec![0.0; 3 * n];
                let mut scratch = vec![0.0; 3 * n];
                ops.div2(&q, &mut d2, &mut scratch);
                // Weighted inner product on the tensor side.
                let mut lhs2 = 0.0;
                for i in 0..n {
                    let a = &sv[i * 6..i * 6 + 6];
                    let b = &q[i * 6..i * 6 + 6];
                    lhs2 += a[0] * b[0]
                        + a[1] * b[1]
                        + a[2] * b[2]
                        + 2.0 * (a[3] * b[3] + a[4] * b[4] + a[5] * b[5]);
                }
                let rhs2 = dot(&v, &d2);
                let scale2 =
                    (dot(&v, &v).sqrt() * sym_total(&q).sqrt()).max(1e-30);
                assert!(
                    (lhs2 + rhs2).abs() <= 1e-10 * scale2,
                    "symgrad/div2 adjointness: {lhs2} vs {rhs2}"
                );
            }
        }
    }

    #[test]
    fn power_norm_brackets_dense_norm() {
        // Dense operator: rows scaled so the Euclidean norm matches the
        // weighted tensor inner product (off-diagonals scaled by sqrt 2).
        let view = uniform_view(1);
        let ops = assemble_operators(&view, 200);
        let n = view.cells.len();
        let rows = 3 * n + 6 * n;
        let cols = n + 3 * n;
        let mut dense = DMatrix::<f64>::zeros(rows, cols);
        // p rows: G u - v.
        for r in 0..3 * n {
            for k in ops.g.indptr[r]..ops.g.indptr[r + 1] {
                dense[(r, ops.g.indices[k] as usize)] += ops.g.values[k];
            }
            dense[(r, n + r)] -= 1.0;
        }
        // q rows via symgrad of unit vectors.
        let mut v = vec![0.0; 3 * n];
        let mut sv = vec![0.0; 6 * n];
        for col in 0..3 * n {
            v[col] = 1.0;
            ops.symgrad(&v, &mut sv);
            v[col] = 0.0;
            for i in 0..n {
                for comp in 0..6 {
                    let w = if comp < 3 { 1.0 } else { std::f64::consts::SQRT_2 };
                    dense[(3 * n + i * 6 + comp, n + col)] = w * sv[i * 6 + comp];
                }
            }
        }
        let true_norm = dense.svd(false, false).singular_values[0];
        assert!(
            ops.l_norm >= true_norm * 0.999,
            "estimate {} below true {}",
            ops.l_norm,
            true_norm
        );
        assert!(
            ops.l_norm <= true_norm * 1.2,
            "estimate {} above 1.2 x true {}",
            ops.l_norm,
            true_norm
        );
    }
}
