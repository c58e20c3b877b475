//! Slow, obviously-correct reference implementations used to check the
//! engine. Nothing here shares code with the routines under test.

use iterseg::neural::ActorCritic;
use iterseg::volume::{Dims, VoxelCoord};

/// Grid neighbours of `c` at Chebyshev distance 1, restricted to face
/// neighbours when `faces_only`.
fn neighbours(dims: Dims, c: VoxelCoord, faces_only: bool) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let steps = dx.abs() + dy.abs() + dz.abs();
                if steps == 0 || (faces_only && steps > 1) {
                    continue;
                }
                let (x, y, z) = (c.x as i64 + dx, c.y as i64 + dy, c.z as i64 + dz);
                if x < 0 || y < 0 || z < 0 || x >= dims.nx as i64 || y >= dims.ny as i64 || z >= dims.nz as i64 {
                    continue;
                }
                let index = x as usize + dims.nx * (y as usize + dims.ny * z as usize);
                out.push((index, (steps as f64).sqrt()));
            }
        }
    }
    out
}

/// Textbook O(V²) Dijkstra over the voxel graph with edge weight
/// `|offset| + lambda * |I(u) - I(v)|`.
pub fn brute_geodesic(dims: Dims, image: &[f64], seeds: &[VoxelCoord], lambda: f64, faces_only: bool) -> Vec<f64> {
    let n = dims.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    for s in seeds {
        dist[s.x + dims.nx * (s.y + dims.ny * s.z)] = 0.0;
    }
    for _ in 0..n {
        let mut u = None;
        for i in 0..n {
            if !done[i] && dist[i].is_finite() && u.is_none_or(|j: usize| dist[i] < dist[j]) {
                u = Some(i);
            }
        }
        let Some(u) = u else { break };
        done[u] = true;
        let c = VoxelCoord::new(u % dims.nx, (u / dims.nx) % dims.ny, u / (dims.nx * dims.ny));
        for (v, len) in neighbours(dims, c, faces_only) {
            let w = len + lambda * (image[u] - image[v]).abs();
            if dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
            }
        }
    }
    dist
}

/// Dice by counting, with both-empty defined as 1.
pub fn brute_dice(pred: &[bool], truth: &[bool]) -> f64 {
    let mut both = 0usize;
    let mut p = 0usize;
    let mut t = 0usize;
    for (&a, &b) in pred.iter().zip(truth) {
        p += a as usize;
        t += b as usize;
        both += (a && b) as usize;
    }
    if p + t == 0 {
        1.0
    } else {
        2.0 * both as f64 / (p + t) as f64
    }
}

/// Binary cross entropy with the probability clamped to `[eps, 1 - eps]`.
pub fn brute_cross_entropy(p: f64, y: f64, eps: f64) -> f64 {
    let p = p.max(eps).min(1.0 - eps);
    if y > 0.5 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Largest relative error, over parameter tensors, between the analytic
/// gradient of `sum(wl * logits) + sum(wv * value_map)` and central
/// differences with step `h`. Errors are measured on tensor norms.
pub fn gradient_check(
    net: &mut ActorCritic,
    input: &[f64],
    dims: Dims,
    wl: &[f64],
    wv: &[f64],
    h: f64,
) -> Vec<(String, f64)> {
    let loss = |net: &ActorCritic| {
        let (out, _) = net.forward(input, dims).expect("forward");
        let a: f64 = out.logits.data().iter().zip(wl).map(|(x, w)| x * w).sum();
        let b: f64 = out.value_map.data().iter().zip(wv).map(|(x, w)| x * w).sum();
        a + b
    };
    let (_, tape) = net.forward(input, dims).expect("forward");
    net.zero_grad();
    net.backward(&tape, wl, wv).expect("backward");
    let analytic = net.gradients();
    let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
    let mut report = Vec::new();
    for (ti, name) in names.into_iter().enumerate() {
        let len = analytic[ti].len();
        let mut diff = 0.0;
        let mut scale = 0.0;
        for j in 0..len {
            let orig = net.params()[ti].1.data()[j];
            net.params_mut()[ti].data_mut()[j] = orig + h;
            let up = loss(net);
            net.params_mut()[ti].data_mut()[j] = orig - h;
            let down = loss(net);
            net.params_mut()[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            diff += (numeric - analytic[ti][j]).powi(2);
            scale += numeric.powi(2).max(analytic[ti][j].powi(2));
        }
        let rel = if scale == 0.0 {
            diff.sqrt()
        } else {
            (diff / scale).sqrt()
        };
        report.push((name, rel));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_geodesic_on_a_flat_line_is_the_index_distance() {
        let dims = Dims::new(5, 1, 1).unwrap();
        let d = brute_geodesic(dims, &[0.0; 5], &[VoxelCoord::new(1, 0, 0)], 3.0, true);
        assert_eq!(d, vec![1.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn brute_geodesic_takes_diagonals_with_full_connectivity() {
        let dims = Dims::new(2, 2, 2).unwrap();
        let d = brute_geodesic(dims, &[0.0; 8], &[VoxelCoord::new(0, 0, 0)], 1.0, false);
        assert!((d[7] - 3f64.sqrt()).abs() < 1e-15);
        let d6 = brute_geodesic(dims, &[0.0; 8], &[VoxelCoord::new(0, 0, 0)], 1.0, true);
        assert_eq!(d6[7], 3.0);
    }

    #[test]
    fn brute_dice_cases() {
        assert_eq!(brute_dice(&[false; 3], &[false; 3]), 1.0);
        assert_eq!(brute_dice(&[true, true, false], &[false, true, true]), 0.5);
        assert_eq!(brute_dice(&[true, false], &[false, true]), 0.0);
    }
}
