//! Path-following successive convex approximation for secure power allocation.
//!
//! The variable is Ψ, the L×K matrix of `√ρ_{l,k}`. Internally every problem is
//! rescaled by `√ρ_max` so that the per-AP budgets become unit balls, and each
//! convex subproblem is handed to the Clarabel interior-point solver.
//!
//! Per-AP auxiliaries `e_l ≥ ‖Ψ_{l,:}‖` keep the QoS cones at size `L + 2`:
//! since `Σ_t ‖A_kk u_t‖² = Σ_l A_kk[l]² ‖Ψ_{l,:}‖²`, bounding the row norms is
//! an exact reformulation.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precoding::GroupingPlan;
use crate::scenario::{LargeScaleState, ATTACKED_USER};

/// Default relative-improvement stopping threshold.
pub const DEFAULT_EPS_OBJ: f64 = 1e-4;
/// Default iteration cap of the main loop.
pub const DEFAULT_MAX_ITER: usize = 50;
/// Iteration cap of the feasibility phase.
pub const MAX_INIT_ITER: usize = 30;

/// Relative tightening applied inside subproblems so solver tolerance never breaks the true constraints.
const MARGIN: f64 = 1e-7;
/// Tolerance on reported constraint violations.
const CHECK_TOL: f64 = 1e-6;

/// Coefficients of the secure power-allocation problem for user 1.
#[derive(Clone, Debug, PartialEq)]
pub struct OptProblem {
    /// `a_k[l] = √((M - |S_l|) γ_{l,k})`.
    pub a: Vec<DVector<f64>>,
    /// Diagonal of `A_kk`, `√(β_{l,k} - δ_{l,k} γ_{l,k})`.
    pub a_diag: Vec<DVector<f64>>,
    /// `b_E[l] = √((M - |S_l|) γ_{l,E})`.
    pub b_e: DVector<f64>,
    /// Diagonal of `B_E`, `√(β_{l,E} - δ_{l,1} γ_{l,E})`.
    pub b_e_diag: DVector<f64>,
    /// QoS floors; the entry of user 1 is ignored.
    pub theta: Vec<f64>,
    /// Cap on the combined eavesdropper SINR.
    pub theta_e: f64,
    pub eav_antennas: usize,
    pub rho_max: f64,
    /// APs allowed to serve user 1.
    pub serving: Vec<bool>,
}

/// Fills the problem coefficients from the large-scale state and grouping.
pub fn assemble_problem(ls: &LargeScaleState, grouping: &GroupingPlan, theta_k: &[f64], theta_e: f64, rho_max: f64) -> OptProblem {
    let (l_n, k_n) = (ls.aps(), ls.users());
    let d = |l: usize, k: usize| if grouping.delta[l][k] { 1.0 } else { 0.0 };
    let a = (0..k_n).map(|k| DVector::from_fn(l_n, |l, _| (grouping.gain(l) * ls.gamma[(l, k)]).sqrt())).collect();
    let a_diag = (0..k_n)
        .map(|k| DVector::from_fn(l_n, |l, _| (ls.beta[(l, k)] - d(l, k) * ls.gamma[(l, k)]).max(0.0).sqrt()))
        .collect();
    let b_e = DVector::from_fn(l_n, |l, _| (grouping.gain(l) * ls.gamma_e[l]).sqrt());
    let b_e_diag = DVector::from_fn(l_n, |l, _| (ls.beta_e[l] - d(l, ATTACKED_USER) * ls.gamma_e[l]).max(0.0).sqrt());
    OptProblem {
        a,
        a_diag,
        b_e,
        b_e_diag,
        theta: theta_k.to_vec(),
        theta_e,
        eav_antennas: ls.eav_antennas(),
        rho_max,
        serving: vec![true; l_n],
    }
}

impl OptProblem {
    pub fn aps(&self) -> usize {
        self.b_e.len()
    }

    pub fn users(&self) -> usize {
        self.a.len()
    }

    /// Restricts user 1 to the masked APs.
    pub fn with_serving(mut self, serving: Vec<bool>) -> Self {
        self.serving = serving;
        self
    }

    /// Interference-plus-noise term `φ_k(Ψ)`.
    pub fn phi(&self, psi: &DMatrix<f64>, k: usize) -> f64 {
        let mut s = 1.0;
        for l in 0..self.aps() {
            let row: f64 = psi.row(l).iter().map(|v| v * v).sum();
            s += self.a_diag[k][l].powi(2) * row;
        }
        s
    }

    /// SINR of user `k`.
    pub fn sinr(&self, psi: &DMatrix<f64>, k: usize) -> f64 {
        self.a[k].dot(&psi.column(k)).powi(2) / self.phi(psi, k)
    }

    /// Interference-plus-noise term `φ_E(Ψ)` of one eavesdropper antenna.
    pub fn phi_e(&self, psi: &DMatrix<f64>) -> f64 {
        let mut s = 1.0;
        for t in (0..self.users()).filter(|&t| t != ATTACKED_USER) {
            s += psi.column(t).component_mul(&self.b_e_diag).norm_squared();
        }
        s
    }

    /// SINR of one eavesdropper antenna.
    pub fn sinr_e(&self, psi: &DMatrix<f64>) -> f64 {
        let u1 = psi.column(ATTACKED_USER);
        (self.b_e.dot(&u1).powi(2) + u1.component_mul(&self.b_e_diag).norm_squared()) / self.phi_e(psi)
    }

    /// Cap on the per-antenna eavesdropper SINR.
    pub fn theta_e_per_antenna(&self) -> f64 {
        self.theta_e / self.eav_antennas as f64
    }

    /// Largest relative violation of the budget, QoS, cap, sign and serving constraints.
    pub fn max_violation(&self, psi: &DMatrix<f64>) -> f64 {
        let mut v = self.base_violation(psi);
        let te = self.theta_e_per_antenna();
        if te.is_finite() {
            v = v.max(self.sinr_e(psi) / te - 1.0);
        }
        v
    }

    /// As [`max_violation`](Self::max_violation) without the eavesdropper cap.
    pub fn base_violation(&self, psi: &DMatrix<f64>) -> f64 {
        let mut v: f64 = 0.0;
        for l in 0..self.aps() {
            let used: f64 = psi.row(l).iter().map(|x| x * x).sum();
            v = v.max(used / self.rho_max - 1.0);
            if !self.serving[l] {
                v = v.max(psi[(l, ATTACKED_USER)].powi(2) / self.rho_max);
            }
        }
        v = v.max(psi.iter().map(|&x| -x / self.rho_max.sqrt()).fold(0.0, f64::max));
        for k in (0..self.users()).filter(|&k| k != ATTACKED_USER) {
            let th = self.theta[k];
            if th > 0.0 {
                v = v.max(1.0 - self.sinr(psi, k) / th);
            }
        }
        v
    }

    fn scaled(&self) -> Scaled {
        let s = self.rho_max.sqrt();
        Scaled {
            l: self.aps(),
            k: self.users(),
            a: self.a.iter().map(|v| v * s).collect(),
            ad: self.a_diag.iter().map(|v| v * s).collect(),
            be: &self.b_e * s,
            bd: &self.b_e_diag * s,
            theta: self.theta.clone(),
            theta_e: self.theta_e_per_antenna(),
            serving: self.serving.clone(),
        }
    }
}

/// Problem data in `x = Ψ / √ρ_max` coordinates.
struct Scaled {
    l: usize,
    k: usize,
    a: Vec<DVector<f64>>,
    ad: Vec<DVector<f64>>,
    be: DVector<f64>,
    bd: DVector<f64>,
    theta: Vec<f64>,
    theta_e: f64,
    serving: Vec<bool>,
}

impl Scaled {
    fn nx(&self) -> usize {
        self.l * self.k
    }

    fn xi(&self, l: usize, k: usize) -> usize {
        k * self.l + l
    }

    fn ei(&self, l: usize) -> usize {
        self.nx() + l
    }

    fn qos_users(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.k).filter(|&k| k != ATTACKED_USER && self.theta[k] > 0.0)
    }

    fn to_psi(&self, x: &[f64], rho_max: f64) -> DMatrix<f64> {
        let s = rho_max.sqrt();
        DMatrix::from_fn(self.l, self.k, |l, k| x[self.xi(l, k)].max(0.0) * s)
    }

    fn from_psi(&self, psi: &DMatrix<f64>, rho_max: f64) -> Vec<f64> {
        let s = rho_max.sqrt();
        let mut x = vec![0.0; self.nx()];
        for l in 0..self.l {
            for k in 0..self.k {
                x[self.xi(l, k)] = psi[(l, k)] / s;
            }
        }
        x
    }
}

/// Sparse constraint system `A x + s = b`, `s ∈ K`.
struct Conic {
    n: usize,
    rows: usize,
    ai: Vec<usize>,
    aj: Vec<usize>,
    av: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl Conic {
    fn new(n: usize) -> Self {
        Self { n, rows: 0, ai: Vec::new(), aj: Vec::new(), av: Vec::new(), b: Vec::new(), cones: Vec::new() }
    }

    /// Adds one slack row `s = b - Σ v x_j`.
    fn row(&mut self, entries: &[(usize, f64)], b: f64) {
        for &(j, v) in entries {
            if v != 0.0 {
                self.ai.push(self.rows);
                self.aj.push(j);
                self.av.push(v);
            }
        }
        self.b.push(b);
        self.rows += 1;
    }

    /// Adds a row whose slack equals `Σ c x_j + offset`.
    fn affine(&mut self, entries: &[(usize, f64)], offset: f64) {
        let neg: Vec<(usize, f64)> = entries.iter().map(|&(j, v)| (j, -v)).collect();
        self.row(&neg, offset);
    }

    /// Row scaling that leaves every cone invariant: per row for linear cones,
    /// one factor per second-order cone.
    fn equilibrate(&mut self) {
        let mut mag: Vec<f64> = self.b.iter().map(|v| v.abs()).collect();
        for (&i, &v) in self.ai.iter().zip(&self.av) {
            mag[i] = mag[i].max(v.abs());
        }
        let mut scale = vec![1.0; self.rows];
        let mut start = 0;
        for cone in &self.cones {
            let (dim, shared) = match cone {
                SupportedConeT::ZeroConeT(d) | SupportedConeT::NonnegativeConeT(d) => (*d, false),
                SupportedConeT::SecondOrderConeT(d) => (*d, true),
                _ => unreachable!("only linear and second-order cones are built"),
            };
            let block = start..start + dim;
            if shared {
                let m = mag[block.clone()].iter().copied().fold(0.0, f64::max);
                let f = if m > 0.0 { 1.0 / m } else { 1.0 };
                scale[block].iter_mut().for_each(|s| *s = f);
            } else {
                for i in block {
                    if mag[i] > 0.0 {
                        scale[i] = 1.0 / mag[i];
                    }
                }
            }
            start += dim;
        }
        for (&i, v) in self.ai.iter().zip(self.av.iter_mut()) {
            *v *= scale[i];
        }
        for (b, s) in self.b.iter_mut().zip(&scale) {
            *b *= s;
        }
    }

    fn solve(mut self, mut p: CscMatrix<f64>, q: &[f64]) -> Result<Vec<f64>> {
        self.equilibrate();
        let obj = q.iter().chain(p.nzval.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        let f = if obj > 0.0 { 1.0 / obj } else { 1.0 };
        p.nzval.iter_mut().for_each(|v| *v *= f);
        let q: Vec<f64> = q.iter().map(|v| v * f).collect();
        let q = &q[..];
        let a = CscMatrix::new_from_triplets(self.rows, self.n, self.ai, self.aj, self.av);
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(300)
            .build()
            .map_err(|e| Error::SolverFailure(format!("{e:?}")))?;
        let mut solver = DefaultSolver::new(&p, q, &a, &self.b, &self.cones, settings).map_err(|e| Error::SolverFailure(format!("{e:?}")))?;
        solver.solve();
        match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(solver.solution.x.clone()),
            // the last iterate is still useful when nearly primal feasible; callers re-check the true constraints
            SolverStatus::InsufficientProgress | SolverStatus::MaxIterations if solver.solution.r_prim < 1e-6 => Ok(solver.solution.x.clone()),
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Err(Error::Infeasible("subproblem has no feasible point".into())),
            other => Err(Error::SolverFailure(format!("{other:?}"))),
        }
    }
}

fn diagonal_p(n: usize, diag: &[(usize, f64)]) -> CscMatrix<f64> {
    let (mut i, mut j, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for &(c, d) in diag {
        if d != 0.0 {
            i.push(c);
            j.push(c);
            v.push(d);
        }
    }
    CscMatrix::new_from_triplets(n, n, i, j, v)
}

/// Budget, sign, serving and QoS constraints shared by all subproblems.
/// `slack` adds a free variable to every QoS right-hand side.
fn base_constraints(s: &Scaled, n: usize, slack: Option<usize>) -> Conic {
    let mut c = Conic::new(n);
    let masked: Vec<usize> = (0..s.l).filter(|&l| !s.serving[l]).collect();
    if !masked.is_empty() {
        for &l in &masked {
            c.row(&[(s.xi(l, ATTACKED_USER), 1.0)], 0.0);
        }
        c.cones.push(SupportedConeT::ZeroConeT(masked.len()));
    }
    for j in 0..s.nx() {
        c.affine(&[(j, 1.0)], 0.0);
    }
    for l in 0..s.l {
        c.affine(&[(s.ei(l), -1.0)], 1.0 - MARGIN);
    }
    c.cones.push(SupportedConeT::NonnegativeConeT(s.nx() + s.l));
    for l in 0..s.l {
        c.affine(&[(s.ei(l), 1.0)], 0.0);
        for k in 0..s.k {
            c.affine(&[(s.xi(l, k), 1.0)], 0.0);
        }
        c.cones.push(SupportedConeT::SecondOrderConeT(s.k + 1));
    }
    for k in s.qos_users().collect::<Vec<_>>() {
        let scale = 1.0 / (s.theta[k] * (1.0 + MARGIN)).sqrt();
        let mut head: Vec<(usize, f64)> = (0..s.l).map(|l| (s.xi(l, k), s.a[k][l] * scale)).collect();
        if let Some(j) = slack {
            head.push((j, 1.0));
        }
        c.affine(&head, 0.0);
        for l in 0..s.l {
            c.affine(&[(s.ei(l), s.ad[k][l])], 0.0);
        }
        c.affine(&[], 1.0);
        c.cones.push(SupportedConeT::SecondOrderConeT(s.l + 2));
    }
    c
}

/// Adds the convexified eavesdropper cap linearized at `x_bar`.
fn cap_constraint(s: &Scaled, c: &mut Conic, x_bar: &[f64]) {
    let th = s.theta_e * (1.0 - MARGIN);
    let mut c0 = 0.0;
    let mut lin = Vec::new();
    for k in (0..s.k).filter(|&k| k != ATTACKED_USER) {
        for l in 0..s.l {
            let b2 = s.bd[l] * s.bd[l];
            let xb = x_bar[s.xi(l, k)];
            c0 += b2 * xb * xb;
            lin.push((s.xi(l, k), th * 2.0 * b2 * xb));
        }
    }
    let w0 = th * (1.0 - c0);
    c.affine(&lin, w0 + 1.0);
    c.affine(&lin, w0 - 1.0);
    let z0: Vec<(usize, f64)> = (0..s.l).map(|l| (s.xi(l, ATTACKED_USER), 2.0 * s.be[l])).collect();
    c.affine(&z0, 0.0);
    for l in 0..s.l {
        c.affine(&[(s.xi(l, ATTACKED_USER), 2.0 * s.bd[l])], 0.0);
    }
    c.cones.push(SupportedConeT::SecondOrderConeT(s.l + 3));
}

/// Solves the convex subproblem at `psi_prev`: maximize
/// `a·(a_1ᵀu_1) − b·φ_1(Ψ)` with `a = 2x̄/ȳ`, `b = (x̄/ȳ)²`.
pub fn solve_subproblem(problem: &OptProblem, psi_prev: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = problem.scaled();
    let x_bar = s.from_psi(psi_prev, problem.rho_max);
    let n = s.nx() + s.l;
    let num: f64 = (0..s.l).map(|l| s.a[ATTACKED_USER][l] * x_bar[s.xi(l, ATTACKED_USER)]).sum();
    let mut den = 1.0;
    for l in 0..s.l {
        let row: f64 = (0..s.k).map(|k| x_bar[s.xi(l, k)].powi(2)).sum();
        den += s.ad[ATTACKED_USER][l].powi(2) * row;
    }
    let (ca, cb) = if num > 1e-12 { (2.0 * num / den, (num / den).powi(2)) } else { (1.0, 0.0) };
    let mut diag = Vec::new();
    for l in 0..s.l {
        for k in 0..s.k {
            diag.push((s.xi(l, k), 2.0 * cb * s.ad[ATTACKED_USER][l].powi(2)));
        }
    }
    let p = diagonal_p(n, &diag);
    let mut q = vec![0.0; n];
    for l in 0..s.l {
        q[s.xi(l, ATTACKED_USER)] = -ca * s.a[ATTACKED_USER][l];
    }
    let mut c = base_constraints(&s, n, None);
    if s.theta_e.is_finite() {
        cap_constraint(&s, &mut c, &x_bar);
    }
    let x = c.solve(p, &q)?;
    Ok(clean(&s, &x, problem.rho_max))
}

fn clean(s: &Scaled, x: &[f64], rho_max: f64) -> DMatrix<f64> {
    let mut psi = s.to_psi(x, rho_max);
    for l in 0..s.l {
        if !s.serving[l] {
            psi[(l, ATTACKED_USER)] = 0.0;
        }
    }
    psi
}

/// Value of the surrogate `a·(a_1ᵀu_1) − b·φ_1(Ψ)` built at `psi_bar`.
pub fn surrogate_objective(problem: &OptProblem, psi_bar: &DMatrix<f64>, psi: &DMatrix<f64>) -> f64 {
    let xb = problem.a[ATTACKED_USER].dot(&psi_bar.column(ATTACKED_USER));
    let yb = problem.phi(psi_bar, ATTACKED_USER);
    let a = 2.0 * xb / yb;
    let b = (xb / yb).powi(2);
    a * problem.a[ATTACKED_USER].dot(&psi.column(ATTACKED_USER)) - b * problem.phi(psi, ATTACKED_USER)
}

/// Termination reason of the path-following loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaStatus {
    Converged,
    MaxIter,
    Infeasible,
}

/// Per-iteration trace entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    pub max_violation: f64,
}

/// State of the path-following algorithm.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaState {
    pub psi: DMatrix<f64>,
    pub kappa: usize,
    /// SINR of user 1 at every accepted iterate, starting with the initial point.
    pub objective_trace: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    pub status: ScaStatus,
}

fn qos_ok(problem: &OptProblem, psi: &DMatrix<f64>) -> bool {
    (0..problem.users())
        .filter(|&k| k != ATTACKED_USER && problem.theta[k] > 0.0)
        .all(|k| problem.sinr(psi, k) >= problem.theta[k] * (1.0 - 1e-9))
}

fn cap_gap(problem: &OptProblem, psi: &DMatrix<f64>) -> f64 {
    let te = problem.theta_e_per_antenna();
    if !te.is_finite() {
        return f64::NEG_INFINITY;
    }
    let u1 = psi.column(ATTACKED_USER);
    let quad = problem.b_e.dot(&u1).powi(2) + u1.component_mul(&problem.b_e_diag).norm_squared();
    quad / te - problem.phi_e(psi)
}

/// Equal split over each AP, honouring the serving mask for user 1.
pub fn equal_start(problem: &OptProblem) -> DMatrix<f64> {
    let (l_n, k_n) = (problem.aps(), problem.users());
    DMatrix::from_fn(l_n, k_n, |l, k| {
        if problem.serving[l] {
            (problem.rho_max / k_n as f64).sqrt()
        } else if k == ATTACKED_USER || k_n == 1 {
            0.0
        } else {
            (problem.rho_max / (k_n - 1) as f64).sqrt()
        }
    })
}

fn phase_one(problem: &OptProblem) -> Result<DMatrix<f64>> {
    let s = problem.scaled();
    let n = s.nx() + s.l + 1;
    let slack = n - 1;
    let c = base_constraints(&s, n, Some(slack));
    let mut q = vec![0.0; n];
    q[slack] = 1.0;
    let mut c = c;
    // keep the slack bounded below so the program has an optimum
    c.affine(&[(slack, 1.0)], 1.0);
    c.cones.push(SupportedConeT::NonnegativeConeT(1));
    let x = c.solve(diagonal_p(n, &[]), &q)?;
    let psi = clean(&s, &x, problem.rho_max);
    if x[slack] > 1e-7 || !qos_ok(problem, &psi) || problem.base_violation(&psi) > CHECK_TOL {
        return Err(Error::Infeasible("QoS floors cannot be met under the power budget".into()));
    }
    Ok(psi)
}

fn cap_step(problem: &OptProblem, psi_bar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = problem.scaled();
    let x_bar = s.from_psi(psi_bar, problem.rho_max);
    let n = s.nx() + s.l;
    let inv = 1.0 / s.theta_e;
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for l1 in 0..s.l {
        for l2 in l1..s.l {
            let mut v = 2.0 * inv * s.be[l1] * s.be[l2];
            if l1 == l2 {
                v += 2.0 * inv * s.bd[l1].powi(2);
            }
            if v != 0.0 {
                pi.push(s.xi(l1, ATTACKED_USER));
                pj.push(s.xi(l2, ATTACKED_USER));
                pv.push(v);
            }
        }
    }
    let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);
    let mut q = vec![0.0; n];
    for k in (0..s.k).filter(|&k| k != ATTACKED_USER) {
        for l in 0..s.l {
            q[s.xi(l, k)] = -2.0 * s.bd[l].powi(2) * x_bar[s.xi(l, k)];
        }
    }
    let c = base_constraints(&s, n, None);
    let x = c.solve(p, &q)?;
    Ok(clean(&s, &x, problem.rho_max))
}

/// Shrinks user 1's column until the eavesdropper cap holds. Lowering user 1's
/// power only removes interference for the others, so the QoS floors survive.
fn shrink_attacked(problem: &OptProblem, psi: &DMatrix<f64>) -> DMatrix<f64> {
    let te = problem.theta_e_per_antenna() * (1.0 - MARGIN);
    let sinr = problem.sinr_e(psi);
    let mut out = psi.clone();
    if sinr > te {
        let t = (te / sinr).sqrt();
        out.column_mut(ATTACKED_USER).scale_mut(t);
    }
    out
}

/// Finds a point meeting the budgets, QoS floors and eavesdropper cap.
///
/// The cap is approached by minimizing the linearized cap gap; if the conic
/// solver breaks down on the way, user 1's powers are scaled down instead.
pub fn find_feasible_start(problem: &OptProblem) -> Result<DMatrix<f64>> {
    let eq = equal_start(problem);
    let mut psi = if qos_ok(problem, &eq) { eq } else { phase_one(problem)? };
    for _ in 0..MAX_INIT_ITER {
        if cap_gap(problem, &psi) <= 0.0 {
            return Ok(psi);
        }
        let next = match cap_step(problem, &psi) {
            Ok(next) => next,
            Err(Error::SolverFailure(_)) => return Ok(shrink_attacked(problem, &psi)),
            Err(e) => return Err(e),
        };
        if problem.base_violation(&next) > CHECK_TOL {
            return Ok(shrink_attacked(problem, &psi));
        }
        if cap_gap(problem, &next) <= 0.0 {
            // walk back towards the previous point while staying under the cap
            let (mut lo, mut hi) = (0.0, 1.0);
            let blend = |t: f64| &psi + (&next - &psi) * t;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if cap_gap(problem, &blend(mid)) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(blend(hi));
        }
        psi = next;
    }
    Err(Error::Infeasible("eavesdropper cap not reached within the feasibility phase".into()))
}

/// Runs the path-following iterations from a feasible `psi0`.
pub fn path_following(problem: &OptProblem, psi0: &DMatrix<f64>, eps_obj: f64, max_iter: usize) -> Result<ScaState> {
    let mut psi = psi0.clone();
    let mut obj = problem.sinr(&psi, ATTACKED_USER);
    let mut state = ScaState {
        psi: psi.clone(),
        kappa: 0,
        objective_trace: vec![obj],
        trace: vec![TraceRecord { iteration: 0, objective: obj, max_violation: problem.max_violation(&psi) }],
        status: ScaStatus::MaxIter,
    };
    for kappa in 1..=max_iter {
        let next = match solve_subproblem(problem, &psi) {
            Ok(p) => p,
            Err(Error::Infeasible(_)) | Err(Error::SolverFailure(_)) if kappa > 1 => {
                state.status = ScaStatus::Converged;
                break;
            }
            Err(e) => return Err(e),
        };
        let new_obj = problem.sinr(&next, ATTACKED_USER);
        let viol = problem.max_violation(&next);
        if new_obj < obj || viol > CHECK_TOL {
            state.status = ScaStatus::Converged;
            break;
        }
        let gain = (new_obj - obj) / obj.max(1e-300);
        psi = next;
        obj = new_obj;
        state.kappa = kappa;
        state.objective_trace.push(obj);
        state.trace.push(TraceRecord { iteration: kappa, objective: obj, max_violation: viol });
        state.psi = psi.clone();
        if gain < eps_obj {
            state.status = ScaStatus::Converged;
            break;
        }
    }
    Ok(state)
}

/// Feasibility phase followed by path-following.
pub fn optimize(problem: &OptProblem, eps_obj: f64, max_iter: usize) -> Result<ScaState> {
    let psi0 = find_feasible_start(problem)?;
    path_following(problem, &psi0, eps_obj, max_iter)
}

/// The bound `x²/y ≥ 2(x̄/ȳ)x − (x̄/ȳ)² y` used by the surrogate objective.
pub fn quadratic_over_linear_bound(x: f64, y: f64, x_bar: f64, y_bar: f64) -> f64 {
    let r = x_bar / y_bar;
    2.0 * r * x - r * r * y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precoding::build_grouping;
    use crate::scenario::Training;
    use crate::secrecy::{sinr_eav_closed, sinr_user_closed, PowerMatrix};

    fn instance(l: usize, k: usize) -> (LargeScaleState, GroupingPlan) {
        let training = Training { tau_p: k as f64, rho_u: 50.0, rho_e: 50.0, eav_antennas: 1 };
        let beta = DMatrix::from_fn(l, k, |i, j| 0.02 + 0.1 * (((i * 7 + j * 3) % 5) as f64));
        let beta_e = DVector::from_fn(l, |i, _| 0.05 + 0.05 * (i % 3) as f64);
        let ls = LargeScaleState::from_gains(beta, beta_e, 4, training);
        let g = build_grouping(&ls, 0.5);
        (ls, g)
    }

    #[test]
    fn identities_match_closed_forms() {
        let (ls, g) = instance(3, 3);
        let p = assemble_problem(&ls, &g, &[0.0, 1.0, 1.0], 1.0, 10.0);
        let psi = DMatrix::from_fn(3, 3, |i, j| 0.3 + 0.2 * ((i + 2 * j) % 4) as f64);
        let pm = PowerMatrix::from_psi(&psi);
        let cf = sinr_user_closed(&ls, &g, &pm);
        for k in 0..3 {
            assert!((p.sinr(&psi, k) - cf[k]).abs() <= 1e-10 * cf[k]);
        }
        let ce = sinr_eav_closed(&ls, &g, &pm);
        assert!((p.sinr_e(&psi) - ce).abs() <= 1e-10 * ce);
    }

    #[test]
    fn surrogate_bound_is_tight_at_the_point() {
        let (x, y) = (1.3, 2.1);
        assert!((quadratic_over_linear_bound(x, y, x, y) - x * x / y).abs() < 1e-12);
        assert!(quadratic_over_linear_bound(2.0, 1.0, 1.0, 3.0) <= 4.0);
    }

    #[test]
    fn single_user_perfect_estimation_saturates_budget() {
        let training = Training { tau_p: 1.0, rho_u: 1e15, rho_e: 0.0, eav_antennas: 1 };
        let ls = LargeScaleState::from_gains(DMatrix::from_element(2, 1, 0.5), DVector::from_element(2, 0.1), 4, training);
        let g = GroupingPlan::from_strong(vec![vec![0], vec![0]], 1, 4).unwrap();
        let p = assemble_problem(&ls, &g, &[0.0], f64::INFINITY, 3.0);
        let psi = solve_subproblem(&p, &DMatrix::from_element(2, 1, 1.0)).unwrap();
        for l in 0..2 {
            assert!((psi[(l, 0)] - 3f64.sqrt()).abs() < 1e-5, "{psi}");
        }
    }

    #[test]
    fn infeasible_floor_is_reported() {
        let (ls, g) = instance(2, 2);
        let p = assemble_problem(&ls, &g, &[0.0, 1e12], 1.0, 10.0);
        assert!(matches!(find_feasible_start(&p), Err(Error::Infeasible(_))));
    }

    #[test]
    fn trace_is_monotone_and_feasible() {
        let (ls, g) = instance(4, 3);
        let eq = PowerMatrix::equal(4, 3, 10.0);
        let s = sinr_user_closed(&ls, &g, &eq);
        let theta: Vec<f64> = s.iter().map(|v| 0.5 * v).collect();
        let cap = 0.5 * sinr_eav_closed(&ls, &g, &eq);
        let p = assemble_problem(&ls, &g, &theta, cap, 10.0);
        let st = optimize(&p, DEFAULT_EPS_OBJ, DEFAULT_MAX_ITER).unwrap();
        assert!(st.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        assert!(p.max_violation(&st.psi) <= 1e-6, "{}", p.max_violation(&st.psi));
        let again = path_following(&p, &st.psi, DEFAULT_EPS_OBJ, DEFAULT_MAX_ITER).unwrap();
        assert!(again.kappa <= 2);
    }
}

