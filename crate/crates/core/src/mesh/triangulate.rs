//! Minimum-area triangulation of marching-cubes polygon loops by interval
//! dynamic programming.

/// Triangulate a simple polygon (3..=7 vertices) minimizing total triangle
/// area; `O(n^3)`. Cost ties break toward the lexicographically smallest
/// added diagonal. Returns index triples into `loop_points`, winding
/// preserved.
pub fn dp_triangulate(loop_points: &[[f64; 3]]) -> Vec<[u8; 3]> {
    let n = loop_points.len();
    if n < 3 {
        return Vec::new();
    }
    if n == 3 {
        return vec![[0, 1, 2]];
    }
    debug_assert!(n <= 7, "marching-cubes loops have at most 7 vertices");

    let area = |i: usize, k: usize, j: usize| -> f64 {
        let a = loop_points[i];
        let b = loop_points[k];
        let c = loop_points[j];
        let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let ac = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cx = ab[1] * ac[2] - ab[2] * ac[1];
        let cy = ab[2] * ac[0] - ab[0] * ac[2];
        let cz = ab[0] * ac[1] - ab[1] * ac[0];
        0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
    };

    // The diagonals a choice of k introduces at (i, j); (n, n) sorts after
    // every real diagonal and means "none".
    let added_diag = |i: usize, k: usize, j: usize| -> (usize, usize) {
        let d1 = if k > i + 1 { (i, k) } else { (n, n) };
        let d2 = if j > k + 1 { (k, j) } else { (n, n) };
        d1.min(d2)
    };

    let mut cost = vec![vec![0.0f64; n]; n];
    let mut tie = vec![vec![(n, n); n]; n];
    let mut choice = vec![vec![0usize; n]; n];
    for span in 2..n {
        for i in 0..n - span {
            let j = i + span;
            let mut best = f64::INFINITY;
            let mut best_tie = (usize::MAX, usize::MAX);
            let mut best_k = i + 1;
            for k in i + 1..j {
                let c = cost[i][k] + cost[k][j] + area(i, k, j);
                let t = added_diag(i, k, j);
                if c < best || (c == best && t < best_tie) {
                    best = c;
                    best_tie = t;
                    best_k = k;
                }
            }
            cost[i][j] = best;
            tie[i][j] = best_tie;
            choice[i][j] = best_k;
        }
    }

    let mut out = Vec::with_capacity(n - 2);
    fn emit(i: usize, j: usize, choice: &[Vec<usize>], out: &mut Vec<[u8; 3]>) {
        if j - i < 2 {
            return;
        }
        let k = choice[i][j];
        emit(i, k, choice, out);
        out.push([i as u8, k as u8, j as u8]);
        emit(k, j, choice, out);
    }
    emit(0, n - 1, &choice, &mut out);
    out
}

/// Total area of a triangulation of `pts`.
pub fn triangulation_area(pts: &[[f64; 3]], tris: &[[u8; 3]]) -> f64 {
    tris.iter()
        .map(|t| {
            let a = pts[t[0] as usize];
            let b = pts[t[1] as usize];
            let c = pts[t[2] as usize];
            let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let ac = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let cx = ab[1] * ac[2] - ab[2] * ac[1];
            let cy = ab[2] * ac[0] - ab[0] * ac[2];
            let cz = ab[0] * ac[1] - ab[1] * ac[0];
            0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
        })
        .sum()
}
