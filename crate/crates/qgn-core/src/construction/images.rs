//! Image vectors that seed truncation maps.
//!
//! For an operator string A^(1)..A^(M) on consecutive patches, the images at
//! position m are drawn from running prefixes and suffixes of the string
//! applied to the state: left images L_0 = psi, L_m = A^(m)~dagger L_{m-1},
//! and right images R_{M+1} = psi, R_m = A^(m) R_{m+1}. A split point m0
//! (stored as 2*m0 so half-integers are exact) decides which side each
//! position uses:
//!
//! - integer m0: positions m < m0 take {psi, L_{m-1}, L_m}, position m0
//!   takes {psi, L_{m0-1}, R_{m0+1}}, and m > m0 take {psi, R_m, R_{m+1}};
//! - half-integer m0 = k + 1/2: m <= k take the left form, m >= k + 1 the
//!   right form.
//!
//! Every valid split point yields a network whose string expectation matches
//! the exact one, and each patch picks up at most two images per operator it
//! hosts, so chi_I <= 1 + 2 p_I.
//!
//! The k-point family instead closes {psi} under products of up to k
//! generators and hands every patch the same list, which makes all
//! connections exactly the identity.

use crate::fock::SparseOperator;
use crate::lattice::PatchGraph;
use crate::linalg::CVec;

use super::ConstructionError;

/// Default split point 2*m0 for a string of length `len`, centered at
/// m0 = ceil((M+1)/2).
pub fn default_half_midpoint(len: usize) -> usize {
    2 * ((len + 1).div_ceil(2))
}

fn push_unique(list: &mut Vec<CVec>, v: &CVec) {
    let dup = list
        .iter()
        .any(|w| w.len() == v.len() && w.iter().zip(v.iter()).all(|(a, b)| a == b));
    if !dup {
        list.push(v.clone());
    }
}

/// Per-patch image lists for one operator string. `entries` pairs each
/// string position with its patch; `None` marks an identity entry bridging
/// two patches. Consecutive entries must sit on the same or adjacent
/// patches. Returns one list per patch of the graph, each beginning with
/// `psi`; patches the string never visits keep just `[psi]`.
pub fn images_for_string(
    graph: &PatchGraph,
    psi: &CVec,
    entries: &[(usize, Option<&SparseOperator>)],
    half_midpoint: usize,
) -> Result<Vec<Vec<CVec>>, ConstructionError> {
    let len = entries.len();
    if len == 0 {
        return Err(ConstructionError::EmptyOps);
    }
    let max = 2 * len + 1;
    if half_midpoint < 1 || half_midpoint > max {
        return Err(ConstructionError::BadMidpoint { half: half_midpoint, len, max });
    }
    let dim = psi.len();
    for &(patch, op) in entries {
        if patch >= graph.n_patches() {
            return Err(ConstructionError::PatchOutOfRange { patch, n: graph.n_patches() });
        }
        if let Some(op) = op {
            if op.nrows() != dim || op.ncols() != dim {
                return Err(ConstructionError::Dimension(format!(
                    "string operator is {}x{}, state has dimension {dim}",
                    op.nrows(),
                    op.ncols()
                )));
            }
        }
    }
    for (pos, pair) in entries.windows(2).enumerate() {
        let (i, j) = (pair[0].0, pair[1].0);
        if i != j && !graph.are_adjacent(i, j) {
            return Err(ConstructionError::NonAdjacent { pos: pos + 1, next: pos + 2, i, j });
        }
    }

    let mut left: Vec<CVec> = Vec::with_capacity(len + 1);
    left.push(psi.clone());
    for m in 1..=len {
        let prev = &left[m - 1];
        left.push(match entries[m - 1].1 {
            Some(op) => op.apply_dagger(prev),
            None => prev.clone(),
        });
    }
    let mut right: Vec<CVec> = vec![CVec::zeros(0); len + 2];
    right[len + 1] = psi.clone();
    for m in (1..=len).rev() {
        right[m] = match entries[m - 1].1 {
            Some(op) => op.apply(&right[m + 1]),
            None => right[m + 1].clone(),
        };
    }

    let mut images: Vec<Vec<CVec>> =
        (0..graph.n_patches()).map(|_| vec![psi.clone()]).collect();
    for m in 1..=len {
        let patch = entries[m - 1].0;
        let pair: [&CVec; 2] = if half_midpoint % 2 == 0 {
            let m0 = half_midpoint / 2;
            if m < m0 {
                [&left[m - 1], &left[m]]
            } else if m == m0 {
                [&left[m - 1], &right[m + 1]]
            } else {
                [&right[m], &right[m + 1]]
            }
        } else {
            let k = (half_midpoint - 1) / 2;
            if m <= k {
                [&left[m - 1], &left[m]]
            } else {
                [&right[m], &right[m + 1]]
            }
        };
        for v in pair {
            push_unique(&mut images[patch], v);
        }
    }
    Ok(images)
}

const K_POINT_CAP: usize = 100_000;

/// Image family closed under products of up to `k` generators applied to
/// `psi`, replicated for every patch. Identical lists give identical
/// truncation maps, so every connection is exactly the identity.
pub fn images_for_k_point(
    n_patches: usize,
    psi: &CVec,
    generators: &[&SparseOperator],
    k: usize,
) -> Result<Vec<Vec<CVec>>, ConstructionError> {
    if generators.is_empty() {
        return Err(ConstructionError::EmptyOps);
    }
    let dim = psi.len();
    for op in generators {
        if op.nrows() != dim || op.ncols() != dim {
            return Err(ConstructionError::Dimension(format!(
                "generator is {}x{}, state has dimension {dim}",
                op.nrows(),
                op.ncols()
            )));
        }
    }
    let mut total = 1usize;
    let mut level_size = 1usize;
    for _ in 0..k {
        level_size = level_size.saturating_mul(generators.len());
        total = total.saturating_add(level_size);
        if total > K_POINT_CAP {
            return Err(ConstructionError::TooManyImages { total, cap: K_POINT_CAP });
        }
    }

    let mut all = vec![psi.clone()];
    let mut level = vec![psi.clone()];
    for _ in 0..k {
        let mut next = Vec::with_capacity(level.len() * generators.len());
        for v in &level {
            for g in generators {
                next.push(g.apply(v));
            }
        }
        all.extend(next.iter().cloned());
        level = next;
    }
    Ok((0..n_patches).map(|_| all.clone()).collect())
}
