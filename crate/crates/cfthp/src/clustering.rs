//! AP serving sets, the sparse effective channel, and user clusters.
//!
//! Everything here is a deterministic function of the large-scale gains and
//! the clustering parameters; no RNG state is consumed, so clusters stay
//! fixed across Monte Carlo draws within a run.

use num_complex::Complex64;

use crate::channel::LargeScaleMap;
use crate::linalg::CMat;
use crate::{Error, Result};

/// Per-user AP serving sets and the resulting sparse effective channel.
#[derive(Debug, Clone)]
pub struct ApSelection {
    /// `serving_sets[k]` holds the `l_per_user` AP indices serving user
    /// `k`, sorted ascending.
    pub serving_sets: Vec<Vec<usize>>,
    /// Sparse effective channel `Ḡ` (N×K): the estimate masked to the
    /// serving sets, exact zeros elsewhere.
    pub g_bar: CMat,
    pub l_per_user: usize,
}

impl ApSelection {
    /// Union of all serving sets, sorted ascending.
    pub fn active_aps(&self) -> Vec<usize> {
        let mut union: Vec<usize> = self.serving_sets.iter().flatten().copied().collect();
        union.sort_unstable();
        union.dedup();
        union
    }
}

/// Ordered user clusters and their selection matrices.
#[derive(Debug, Clone)]
pub struct UserClusters {
    /// `clusters[k]` is `P_k`, ascending user indices, always containing `k`.
    pub clusters: Vec<Vec<usize>>,
    /// `selection_matrices[k]` is the |P_k|×K binary matrix `U_k`.
    pub selection_matrices: Vec<CMat>,
    pub n_a: usize,
    pub max_cluster_size: usize,
}

impl UserClusters {
    /// Every cluster is the full user set (`U_k = I`); useful as the
    /// degenerate reduction.
    pub fn full(k_total: usize) -> Self {
        let all: Vec<usize> = (0..k_total).collect();
        Self {
            clusters: vec![all.clone(); k_total],
            selection_matrices: vec![CMat::identity(k_total); k_total],
            n_a: 1,
            max_cluster_size: k_total,
        }
    }

    /// Row of `U_k` whose single one sits at column `k` — the index mapping
    /// used to pick the right precoder column out of a reduced
    /// factorization.
    pub fn q_index(&self, k: usize) -> usize {
        self.clusters[k]
            .iter()
            .position(|&u| u == k)
            .expect("user k always belongs to its own cluster")
    }
}

/// Select, per user, the `l` APs with the largest large-scale gain and
/// build the sparse effective channel from the estimate (ties broken by
/// ascending AP index).
pub fn select_aps(zeta: &LargeScaleMap, g_hat: &CMat, l: usize) -> Result<ApSelection> {
    let (n, k_total) = (zeta.n_aps(), zeta.n_users());
    assert_eq!((g_hat.rows(), g_hat.cols()), (n, k_total));
    if l == 0 || l > n {
        return Err(Error::invalid(format!(
            "select_aps: l must be in 1..={n}, got {l}"
        )));
    }
    let mut serving_sets = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            zeta.zeta[(b, k)]
                .partial_cmp(&zeta.zeta[(a, k)])
                .expect("zeta entries are finite")
                .then(a.cmp(&b))
        });
        let mut set: Vec<usize> = order[..l].to_vec();
        set.sort_unstable();
        serving_sets.push(set);
    }
    let g_bar = sparse_effective_channel(g_hat, &serving_sets);
    Ok(ApSelection {
        serving_sets,
        g_bar,
        l_per_user: l,
    })
}

/// Mask the channel estimate down to the serving sets: entry `(n, k)` keeps
/// `ĝ[n][k]` when AP `n` serves user `k` and is exactly zero otherwise.
pub fn sparse_effective_channel(g_hat: &CMat, serving_sets: &[Vec<usize>]) -> CMat {
    let mut g_bar = CMat::zeros(g_hat.rows(), g_hat.cols());
    for (k, set) in serving_sets.iter().enumerate() {
        for &n in set {
            g_bar[(n, k)] = g_hat[(n, k)];
        }
    }
    g_bar
}

fn shared_ap_count(a: &[usize], b: &[usize]) -> usize {
    // Both sets are sorted ascending.
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Greedy user clustering.
///
/// For each user `k`: start from `{k}`, scan the other users in descending
/// order of APs shared with `k` (ties by ascending index), and admit a
/// candidate when it shares at least `n_a` APs with every user already in
/// the cluster. Stops at `max_size`.
pub fn build_user_clusters(
    selection: &ApSelection,
    n_a: usize,
    max_size: usize,
) -> Result<UserClusters> {
    if n_a == 0 || max_size == 0 {
        return Err(Error::invalid(
            "build_user_clusters: n_a and max_size must be at least 1",
        ));
    }
    let k_total = selection.serving_sets.len();
    let mut clusters = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let a_k = &selection.serving_sets[k];
        let mut candidates: Vec<(usize, usize)> = (0..k_total)
            .filter(|&i| i != k)
            .map(|i| (shared_ap_count(&selection.serving_sets[i], a_k), i))
            .collect();
        candidates.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));

        let mut cluster = vec![k];
        for (_, cand) in candidates {
            if cluster.len() >= max_size {
                break;
            }
            let a_cand = &selection.serving_sets[cand];
            if cluster
                .iter()
                .all(|&j| shared_ap_count(a_cand, &selection.serving_sets[j]) >= n_a)
            {
                cluster.push(cand);
            }
        }
        cluster.sort_unstable();
        clusters.push(cluster);
    }
    let selection_matrices = clusters
        .iter()
        .map(|c| selection_matrix(c, k_total))
        .collect::<Result<Vec<_>>>()?;
    Ok(UserClusters {
        clusters,
        selection_matrices,
        n_a,
        max_cluster_size: max_size,
    })
}

/// Binary |cluster|×K matrix whose `j`-th row selects the `j`-th lowest
/// index in the cluster.
pub fn selection_matrix(cluster: &[usize], k_total: usize) -> Result<CMat> {
    if cluster.is_empty() {
        return Err(Error::invalid("selection_matrix: empty cluster"));
    }
    if !cluster.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid(
            "selection_matrix: indices must be strictly ascending",
        ));
    }
    if *cluster.last().unwrap() >= k_total {
        return Err(Error::invalid(format!(
            "selection_matrix: index {} out of range for K={k_total}",
            cluster.last().unwrap()
        )));
    }
    let mut u = CMat::zeros(cluster.len(), k_total);
    for (row, &idx) in cluster.iter().enumerate() {
        u[(row, idx)] = Complex64::ONE;
    }
    Ok(u)
}

/// Reduced channel `U_k·Ḡᵀ` (row selection of the K×N transposed channel).
pub fn reduce_channel(u_k: &CMat, g_bar_t: &CMat) -> Result<CMat> {
    if u_k.cols() != g_bar_t.rows() {
        return Err(Error::invalid(format!(
            "reduce_channel: U has {} columns but Ḡᵀ has {} rows",
            u_k.cols(),
            g_bar_t.rows()
        )));
    }
    Ok(u_k.matmul(g_bar_t))
}
