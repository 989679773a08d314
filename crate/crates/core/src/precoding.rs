//! User grouping and local precoders: PZF, protective MRT, full ZF and MRT.
//!
//! All precoders use the analytic normalization so that `E{‖w‖²} = 1`.

use nalgebra::{DMatrix, DVector};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::scenario::LargeScaleState;
use crate::C64;

/// Largest accepted condition number of the strong-user Gram matrix.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Per-AP partition of users into strong (zero-forced) and weak (protective MRT) sets.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupingPlan {
    /// Strong users per AP, ascending.
    pub strong: Vec<Vec<usize>>,
    /// Weak users per AP, ascending.
    pub weak: Vec<Vec<usize>>,
    /// APs that zero-force towards each user.
    pub zf_servers: Vec<Vec<usize>>,
    /// APs that serve each user with protective MRT.
    pub mrt_servers: Vec<Vec<usize>>,
    /// `delta[l][k]` is true iff user k is strong at AP l.
    pub delta: Vec<Vec<bool>>,
    pub antennas: usize,
}

impl GroupingPlan {
    /// Builds the plan from strong sets, deriving all other views.
    pub fn from_strong(strong: Vec<Vec<usize>>, users: usize, antennas: usize) -> Result<Self> {
        let l_n = strong.len();
        let mut delta = vec![vec![false; users]; l_n];
        let mut sorted = Vec::with_capacity(l_n);
        for (l, s) in strong.into_iter().enumerate() {
            let mut s = s;
            s.sort_unstable();
            s.dedup();
            if s.iter().any(|&k| k >= users) {
                return Err(Error::InvalidGrouping(format!("AP {l} lists an unknown user")));
            }
            if !s.is_empty() && s.len() >= antennas {
                return Err(Error::InvalidGrouping(format!("AP {l} has {} strong users but M = {antennas}", s.len())));
            }
            for &k in &s {
                delta[l][k] = true;
            }
            sorted.push(s);
        }
        let weak = delta.iter().map(|row| (0..users).filter(|&k| !row[k]).collect()).collect();
        let zf_servers = (0..users).map(|k| (0..l_n).filter(|&l| delta[l][k]).collect()).collect();
        let mrt_servers = (0..users).map(|k| (0..l_n).filter(|&l| !delta[l][k]).collect()).collect();
        Ok(Self { strong: sorted, weak, zf_servers, mrt_servers, delta, antennas })
    }

    /// Every user weak at every AP (plain MRT).
    pub fn all_weak(aps: usize, users: usize, antennas: usize) -> Self {
        Self::from_strong(vec![Vec::new(); aps], users, antennas).expect("empty strong sets are always valid")
    }

    /// Every user strong at every AP (full ZF); needs `M > K`.
    pub fn all_strong(aps: usize, users: usize, antennas: usize) -> Result<Self> {
        if antennas <= users {
            return Err(Error::InsufficientAntennas { m: antennas, k: users });
        }
        Self::from_strong(vec![(0..users).collect(); aps], users, antennas)
    }

    pub fn aps(&self) -> usize {
        self.strong.len()
    }

    pub fn users(&self) -> usize {
        self.delta.first().map_or(0, Vec::len)
    }

    /// Array-gain factor `M - |S_l|`.
    pub fn gain(&self, l: usize) -> f64 {
        (self.antennas - self.strong[l].len()) as f64
    }
}

/// Groups users per AP by the mid-rank percentile of their gains.
///
/// User k is strong at AP l when `(#{β_j < β_k} + #{β_j = β_k}/2) / K ≥ q`;
/// the strong set is then cut to its `M - 1` largest gains, ties going to the
/// lower index.
pub fn build_grouping(ls: &LargeScaleState, threshold_quantile: f64) -> GroupingPlan {
    let (l_n, k_n, m) = (ls.aps(), ls.users(), ls.antennas);
    let q = threshold_quantile.clamp(0.0, 1.0);
    let strong = (0..l_n)
        .map(|l| {
            let row: Vec<f64> = (0..k_n).map(|k| ls.beta[(l, k)]).collect();
            let mut s: Vec<usize> = (0..k_n)
                .filter(|&k| {
                    let below = row.iter().filter(|&&b| b < row[k]).count() as f64;
                    let equal = row.iter().filter(|&&b| b == row[k]).count() as f64;
                    (below + 0.5 * equal) / k_n as f64 >= q
                })
                .collect();
            s.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            s.truncate(m.saturating_sub(1));
            s
        })
        .collect();
    GroupingPlan::from_strong(strong, k_n, m).expect("truncated grouping is always valid")
}

/// Precoder branch applied to a link.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrecoderMode {
    Pzf,
    Pmrt,
    Zf,
    Mrt,
}

/// Precoding vectors, M×K per AP, with their branch tags.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecoderSet {
    pub w: Vec<DMatrix<C64>>,
    pub mode: Vec<Vec<PrecoderMode>>,
}

impl PrecoderSet {
    pub fn vector(&self, l: usize, k: usize) -> DVector<C64> {
        self.w[l].column(k).into_owned()
    }
}

fn scaled(v: DVector<C64>, s: f64) -> DVector<C64> {
    if s > 0.0 {
        v * C64::from(s)
    } else {
        DVector::zeros(v.len())
    }
}

/// Protective partial zero-forcing.
pub fn build_ppzf(real: &ChannelRealization, grouping: &GroupingPlan, ls: &LargeScaleState) -> Result<PrecoderSet> {
    let (l_n, k_n, m) = (ls.aps(), ls.users(), ls.antennas);
    let mut w = Vec::with_capacity(l_n);
    let mut mode = Vec::with_capacity(l_n);
    for l in 0..l_n {
        let s = &grouping.strong[l];
        let gain = grouping.gain(l);
        let hat = &real.h_hat[l];
        let mut wl = DMatrix::<C64>::zeros(m, k_n);
        let mut ml = vec![PrecoderMode::Pmrt; k_n];
        if s.is_empty() {
            for k in 0..k_n {
                let g = ls.gamma[(l, k)];
                wl.set_column(k, &scaled(hat.column(k).into_owned(), 1.0 / (gain * g).sqrt()));
            }
        } else {
            let hs = hat.select_columns(s.iter());
            let gram = hs.adjoint() * &hs;
            let eig = gram.clone().symmetric_eigenvalues();
            let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
            let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            if !(cond <= MAX_GRAM_CONDITION) {
                return Err(Error::SingularGram { ap: l, cond });
            }
            let chol = gram.cholesky().ok_or(Error::SingularGram { ap: l, cond })?;
            // V = H_S G^{-1}, B = I - V H_S^H
            let v = chol.solve(&hs.adjoint()).adjoint();
            let b = DMatrix::<C64>::identity(m, m) - &v * hs.adjoint();
            for (j, &k) in s.iter().enumerate() {
                let g = ls.gamma[(l, k)];
                wl.set_column(k, &scaled(v.column(j).into_owned(), (gain * g).sqrt()));
                ml[k] = PrecoderMode::Pzf;
            }
            for &k in &grouping.weak[l] {
                let g = ls.gamma[(l, k)];
                wl.set_column(k, &scaled(&b * hat.column(k), 1.0 / (gain * g).sqrt()));
            }
        }
        w.push(wl);
        mode.push(ml);
    }
    Ok(PrecoderSet { w, mode })
}

/// Plain MRT, `w = ĥ / sqrt(M γ)`.
pub fn build_mrt(real: &ChannelRealization, ls: &LargeScaleState) -> PrecoderSet {
    let grouping = GroupingPlan::all_weak(ls.aps(), ls.users(), ls.antennas);
    let mut p = build_ppzf(real, &grouping, ls).expect("MRT never inverts a Gram matrix");
    for row in &mut p.mode {
        row.fill(PrecoderMode::Mrt);
    }
    p
}

/// Full zero-forcing towards every user at every AP.
pub fn build_full_zf(real: &ChannelRealization, ls: &LargeScaleState) -> Result<PrecoderSet> {
    let grouping = GroupingPlan::all_strong(ls.aps(), ls.users(), ls.antennas)?;
    let mut p = build_ppzf(real, &grouping, ls)?;
    for row in &mut p.mode {
        row.fill(PrecoderMode::Zf);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::estimate_direct;
    use crate::rng::{substream, Stream};
    use crate::scenario::Training;

    fn ls_from(beta: &[f64], l: usize, k: usize, m: usize) -> LargeScaleState {
        let training = Training { tau_p: k as f64, rho_u: 10.0, rho_e: 10.0, eav_antennas: 1 };
        LargeScaleState::from_gains(DMatrix::from_row_slice(l, k, beta), DVector::from_element(l, 0.3), m, training)
    }

    #[test]
    fn grouping_hand_example() {
        let ls = ls_from(&[9.0, 1.0, 1.0, 1.0, 9.0, 9.0], 2, 3, 4);
        let g = build_grouping(&ls, 0.5);
        assert_eq!(g.strong, vec![vec![0], vec![1, 2]]);
        assert_eq!(g.weak, vec![vec![1, 2], vec![0]]);
        assert_eq!(g.zf_servers, vec![vec![0], vec![1], vec![1]]);
        assert_eq!(g.mrt_servers, vec![vec![1], vec![0], vec![0]]);
    }

    #[test]
    fn grouping_degenerate_quantiles() {
        let ls = ls_from(&[3.0, 1.0, 2.0, 1.0, 5.0, 4.0], 2, 3, 4);
        let all = build_grouping(&ls, 0.0);
        assert!(all.weak.iter().all(Vec::is_empty));
        let none = build_grouping(&ls, 1.0);
        assert!(none.strong.iter().all(Vec::is_empty));
        let cut = build_grouping(&ls_from(&[3.0, 1.0, 2.0, 1.0, 5.0, 4.0], 2, 3, 2), 0.0);
        assert_eq!(cut.strong, vec![vec![0], vec![1]]);
    }

    #[test]
    fn grouping_rejects_oversized_sets() {
        assert!(GroupingPlan::from_strong(vec![vec![0, 1]], 3, 2).is_err());
        assert!(GroupingPlan::all_strong(2, 4, 4).is_err());
    }

    #[test]
    fn orthogonality_per_draw() {
        let ls = ls_from(&[9.0, 1.0, 2.0, 1.0, 9.0, 8.0], 2, 3, 5);
        let g = GroupingPlan::from_strong(vec![vec![0, 2], vec![1]], 3, 5).unwrap();
        let mut rng = substream(11, Stream::SmallScale, 0);
        for _ in 0..50 {
            let real = estimate_direct(&ls, &mut rng).unwrap();
            let p = build_ppzf(&real, &g, &ls).unwrap();
            for l in 0..2 {
                for &k in &g.strong[l] {
                    let hk = real.h_hat[l].column(k);
                    for t in 0..3 {
                        if t != k {
                            assert!(hk.dotc(&p.w[l].column(t)).norm() < 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn empty_strong_set_gives_mrt_direction() {
        let ls = ls_from(&[1.0, 2.0], 1, 2, 3);
        let real = estimate_direct(&ls, &mut substream(2, Stream::SmallScale, 0)).unwrap();
        let p = build_ppzf(&real, &GroupingPlan::all_weak(1, 2, 3), &ls).unwrap();
        let m = build_mrt(&real, &ls);
        assert!((&p.w[0] - &m.w[0]).norm() < 1e-15);
        let scale = 1.0 / (3.0 * ls.gamma[(0, 1)]).sqrt();
        assert!((m.vector(0, 1) - real.h_hat[0].column(1) * C64::from(scale)).norm() < 1e-15);
    }

    #[test]
    fn singular_gram_is_rejected() {
        let ls = ls_from(&[1.0, 1.0], 1, 2, 3);
        let mut real = estimate_direct(&ls, &mut substream(2, Stream::SmallScale, 0)).unwrap();
        let c = real.h_hat[0].column(0).into_owned();
        real.h_hat[0].set_column(1, &c);
        let g = GroupingPlan::from_strong(vec![vec![0, 1]], 2, 3).unwrap();
        assert!(matches!(build_ppzf(&real, &g, &ls), Err(Error::SingularGram { .. })));
    }

    #[test]
    fn full_zf_equals_zero_quantile_ppzf() {
        let ls = ls_from(&[1.0, 2.0, 3.0, 0.5], 2, 2, 4);
        let real = estimate_direct(&ls, &mut substream(3, Stream::SmallScale, 0)).unwrap();
        let zf = build_full_zf(&real, &ls).unwrap();
        let pp = build_ppzf(&real, &build_grouping(&ls, 0.0), &ls).unwrap();
        assert_eq!(zf.w, pp.w);
    }
}
