use nalgebra::{DMatrix, DVector};

use super::SeKernel;
use crate::error::{OsarError, Result};

/// Rank-1 updates absorbed before the factorization is rebuilt from scratch.
pub const REFACTOR_EVERY: usize = 500;

/// Aggregated replications simulated at one past MAP location.
#[derive(Clone, Debug)]
struct MapColumn {
    point: Vec<f64>,
    /// Σ 1/λ² over the replications.
    weight: f64,
    /// Σ (Y − γ)/λ² over the replications.
    weighted_resid: f64,
    /// Kernel sections k(anchors, point).
    kcol: DVector<f64>,
}

/// One simulation output at a MAP location with the variance in force when it was taken.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MapReplication {
    pub point: Vec<f64>,
    pub y: f64,
    pub variance: f64,
}

/// Sample summary at one fixed anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorData {
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
}

/// Nyström KRR for one solution with anchors Θ⁺ ∪ {θ̂}, the MAP last.
///
/// The coefficient vector solves A c = b with
/// A = K̃Σ̃⁻¹K̃ᵀ + κK̄ and b = K̃Σ̃⁻¹(y − γ). A and b are kept current;
/// a QR factorization of A is carried along by Givens rank-1 updates.
#[derive(Clone, Debug)]
pub struct NystromKrr {
    kernel: SeKernel,
    gamma: f64,
    kappa: f64,
    anchors: Vec<Vec<f64>>,
    kbar: DMatrix<f64>,
    anchor_weight: Vec<f64>,
    anchor_wresid: Vec<f64>,
    history: Vec<MapColumn>,
    current_col: Option<usize>,
    a: DMatrix<f64>,
    rhs: DVector<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    coeff: DVector<f64>,
    queued: Vec<(DVector<f64>, DVector<f64>)>,
    since_refactor: usize,
    batch_limit: usize,
    perturb: Vec<f64>,
    stale: bool,
}

fn anchor_terms(d: &AnchorData, gamma: f64) -> (f64, f64) {
    if d.count == 0 {
        return (0.0, 0.0);
    }
    let w = d.count as f64 / d.variance;
    (w, w * (d.mean - gamma))
}

impl NystromKrr {
    /// Fit from scratch by a fresh QR factorization of A.
    ///
    /// `box_width` scales the nudge applied when the MAP lands on a fixed anchor.
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        kernel: SeKernel,
        gamma: f64,
        kappa: f64,
        theta_plus: &[Vec<f64>],
        map: &[f64],
        anchor_data: &[AnchorData],
        history: &[MapReplication],
        box_width: &[f64],
    ) -> Result<Self> {
        let b = theta_plus.len();
        if b == 0 || anchor_data.len() != b {
            return Err(OsarError::Contract("anchor data must match the fixed anchor set".into()));
        }
        if anchor_data.iter().any(|d| d.count > 0 && !(d.variance > 0.0)) {
            return Err(OsarError::Domain("anchor variances must be positive".into()));
        }
        if history.iter().any(|h| !(h.variance > 0.0)) {
            return Err(OsarError::Domain("MAP replication variances must be positive".into()));
        }
        if !(kappa > 0.0) {
            return Err(OsarError::Domain("kappa must be positive".into()));
        }
        let mut anchors = theta_plus.to_vec();
        anchors.push(map.to_vec());
        let mut s = Self {
            kernel,
            gamma,
            kappa,
            anchors,
            kbar: DMatrix::zeros(0, 0),
            anchor_weight: Vec::with_capacity(b),
            anchor_wresid: Vec::with_capacity(b),
            history: Vec::new(),
            current_col: None,
            a: DMatrix::zeros(0, 0),
            rhs: DVector::zeros(0),
            q: DMatrix::zeros(0, 0),
            r: DMatrix::zeros(0, 0),
            coeff: DVector::zeros(b + 1),
            queued: Vec::new(),
            since_refactor: 0,
            batch_limit: ((b + 1) / 4).max(8),
            perturb: box_width.iter().map(|w| 1e-9 * w).collect(),
            stale: false,
        };
        let map_pt = s.separate_from_anchors(map.to_vec());
        s.anchors[b] = map_pt;
        s.kbar = s.kernel.gram(&s.anchors);
        for d in anchor_data {
            let (w, wy) = anchor_terms(d, gamma);
            s.anchor_weight.push(w);
            s.anchor_wresid.push(wy);
        }
        for h in history {
            let idx = match s.history.iter().position(|c| c.point == h.point) {
                Some(i) => i,
                None => {
                    let kcol = s.kcol_for(&h.point);
                    s.history.push(MapColumn { point: h.point.clone(), weight: 0.0, weighted_resid: 0.0, kcol });
                    s.history.len() - 1
                }
            };
            s.history[idx].weight += 1.0 / h.variance;
            s.history[idx].weighted_resid += (h.y - gamma) / h.variance;
        }
        s.current_col = s.history.iter().position(|c| c.point == s.anchors[b]);
        s.refactor();
        s.stale = true;
        s.solve();
        Ok(s)
    }

    /// Override when the factorization is rebuilt instead of rank-1 updated:
    /// more than `batch_limit` queued updates at solve time triggers a rebuild.
    pub fn set_batch_limit(&mut self, batch_limit: usize) {
        self.batch_limit = batch_limit;
    }

    pub fn dim(&self) -> usize {
        self.anchors.len()
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    pub fn map_point(&self) -> &[f64] {
        &self.anchors[self.anchors.len() - 1]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kernel(&self) -> &SeKernel {
        &self.kernel
    }

    /// Number of distinct MAP locations carrying data.
    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    fn kcol_for(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.anchors.len(), self.anchors.iter().map(|a| self.kernel.eval(a, x)))
    }

    fn separate_from_anchors(&self, mut p: Vec<f64>) -> Vec<f64> {
        let fixed = &self.anchors[..self.anchors.len() - 1];
        while fixed.iter().any(|a| *a == p) {
            log::warn!("MAP {p:?} coincides with a fixed anchor; nudging it");
            for (x, d) in p.iter_mut().zip(&self.perturb) {
                *x += d;
            }
        }
        p
    }

    /// Update the sample summary at fixed anchor `b`.
    pub fn set_anchor(&mut self, b: usize, data: AnchorData) {
        let (w, wy) = anchor_terms(&data, self.gamma);
        let dw = w - self.anchor_weight[b];
        let dwy = wy - self.anchor_wresid[b];
        self.anchor_weight[b] = w;
        self.anchor_wresid[b] = wy;
        if dw == 0.0 && dwy == 0.0 {
            return;
        }
        let k: DVector<f64> = self.kbar.column(b).into_owned();
        if dw != 0.0 {
            self.rank1_sym(dw, k.clone());
        }
        self.rhs.axpy(dwy, &k, 1.0);
        self.stale = true;
    }

    /// Record one simulation output at the current MAP.
    pub fn add_map_observation(&mut self, y: f64, variance: f64) {
        let n = self.anchors.len();
        let idx = match self.current_col {
            Some(i) => i,
            None => {
                let kcol: DVector<f64> = self.kbar.column(n - 1).into_owned();
                self.history.push(MapColumn {
                    point: self.anchors[n - 1].clone(),
                    weight: 0.0,
                    weighted_resid: 0.0,
                    kcol,
                });
                self.current_col = Some(self.history.len() - 1);
                self.history.len() - 1
            }
        };
        let w = 1.0 / variance;
        let wy = (y - self.gamma) / variance;
        self.history[idx].weight += w;
        self.history[idx].weighted_resid += wy;
        let k = self.history[idx].kcol.clone();
        self.rank1_sym(w, k.clone());
        self.rhs.axpy(wy, &k, 1.0);
        self.stale = true;
    }

    /// Replace the MAP anchor. Only the last row and column of A change.
    pub fn move_map(&mut self, new_map: &[f64]) {
        let n = self.anchors.len();
        let p = self.separate_from_anchors(new_map.to_vec());
        if p == self.anchors[n - 1] {
            return;
        }
        let last: Vec<f64> = (0..n - 1).map(|j| self.kernel.eval(&self.anchors[j], &p)).collect();
        self.anchors[n - 1] = p;
        for (j, v) in last.iter().enumerate() {
            self.kbar[(j, n - 1)] = *v;
            self.kbar[(n - 1, j)] = *v;
        }
        for c in &mut self.history {
            c.kcol[n - 1] = self.kernel.eval(&self.anchors[n - 1], &c.point);
        }
        self.current_col = self.history.iter().position(|c| c.point == self.anchors[n - 1]);

        let (new_row, new_rhs) = self.recompute_last_row();
        let mut delta = &new_row - self.a.row(n - 1).transpose();
        for j in 0..n {
            self.a[(n - 1, j)] = new_row[j];
            self.a[(j, n - 1)] = new_row[j];
        }
        self.rhs[n - 1] = new_rhs;
        delta[n - 1] *= 0.5;
        let mut e = DVector::zeros(n);
        e[n - 1] = 1.0;
        self.queued.push((e.clone(), delta.clone()));
        self.queued.push((delta, e));
        self.stale = true;
    }

    fn recompute_last_row(&self) -> (DVector<f64>, f64) {
        let n = self.anchors.len();
        let mut row: DVector<f64> = self.kbar.row(n - 1).transpose() * self.kappa;
        let mut rhs = 0.0;
        for b in 0..n - 1 {
            let k = self.kbar.column(b);
            row.axpy(self.anchor_weight[b] * k[n - 1], &k, 1.0);
            rhs += self.anchor_wresid[b] * k[n - 1];
        }
        for c in &self.history {
            row.axpy(c.weight * c.kcol[n - 1], &c.kcol, 1.0);
            rhs += c.weighted_resid * c.kcol[n - 1];
        }
        (row, rhs)
    }

    fn rank1_sym(&mut self, w: f64, k: DVector<f64>) {
        self.a.ger(w, &k, &k, 1.0);
        self.queued.push((k.clone() * w, k));
    }

    /// A and b assembled from the stored columns.
    fn assemble(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.anchors.len();
        let mut a = &self.kbar * self.kappa;
        let mut rhs = DVector::zeros(n);
        for b in 0..n - 1 {
            let k = self.kbar.column(b);
            a.ger(self.anchor_weight[b], &k, &k, 1.0);
            rhs.axpy(self.anchor_wresid[b], &k, 1.0);
        }
        for c in &self.history {
            a.ger(c.weight, &c.kcol, &c.kcol, 1.0);
            rhs.axpy(c.weighted_resid, &c.kcol, 1.0);
        }
        (a, rhs)
    }

    fn refactor(&mut self) {
        let (a, rhs) = self.assemble();
        let qr = a.clone().qr();
        self.q = qr.q();
        self.r = qr.r();
        self.a = a;
        self.rhs = rhs;
        self.queued.clear();
        self.since_refactor = 0;
    }

    /// Bring the coefficients up to date by back-substitution on R c = Qᵀb.
    pub fn solve(&mut self) -> &DVector<f64> {
        if !self.stale && self.queued.is_empty() {
            return &self.coeff;
        }
        if self.queued.len() > self.batch_limit || self.since_refactor + self.queued.len() >= REFACTOR_EVERY {
            self.refactor();
        } else {
            let queued = std::mem::take(&mut self.queued);
            for (u, v) in &queued {
                qr_rank1_update(&mut self.q, &mut self.r, u, v);
            }
            self.since_refactor += queued.len();
        }
        let qtb = self.q.tr_mul(&self.rhs);
        self.coeff = back_substitute(&self.r, &qtb);
        self.stale = false;
        &self.coeff
    }

    /// Predictions γ + K̄c at every anchor, MAP last.
    pub fn predictions(&mut self) -> Vec<f64> {
        self.solve();
        (&self.kbar * &self.coeff).add_scalar(self.gamma).iter().copied().collect()
    }

    /// Predictions γ + K^𝒟 c given a cross-Gram whose columns follow the anchor order.
    pub fn predict_cross(&mut self, cross: &DMatrix<f64>) -> Vec<f64> {
        self.solve();
        (cross * &self.coeff).add_scalar(self.gamma).iter().copied().collect()
    }

    pub fn predict_points(&mut self, points: &[Vec<f64>]) -> Vec<f64> {
        let cross = self.kernel.cross(points, &self.anchors);
        self.predict_cross(&cross)
    }

    /// Coefficients A†b with A and b rebuilt from the stored columns, via SVD.
    pub fn pinv_coefficients(&self) -> DVector<f64> {
        let (a, rhs) = self.assemble();
        symmetric_pinv(&a) * rhs
    }

    /// Predictions at the anchors from the pseudo-inverse route.
    pub fn pinv_predictions(&self) -> Vec<f64> {
        (&self.kbar * self.pinv_coefficients()).add_scalar(self.gamma).iter().copied().collect()
    }

    /// Current QR factors of A, after applying any queued updates.
    pub fn qr_factors(&mut self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        self.solve();
        (&self.q, &self.r)
    }

    pub fn system(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.a, &self.rhs)
    }

    pub fn anchor_gram(&self) -> &DMatrix<f64> {
        &self.kbar
    }
}

/// Rotation (c, s) with c·a + s·b = r and −s·a + c·b = 0.
fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0);
    }
    let r = a.hypot(b);
    (a / r, b / r)
}

fn rotate_rows(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64, from: usize) {
    for col in from..m.ncols() {
        let x = m[(i, col)];
        let y = m[(j, col)];
        m[(i, col)] = c * x + s * y;
        m[(j, col)] = -s * x + c * y;
    }
}

fn rotate_cols(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    let rows = m.nrows();
    for row in 0..rows {
        let x = m[(row, i)];
        let y = m[(row, j)];
        m[(row, i)] = c * x + s * y;
        m[(row, j)] = -s * x + c * y;
    }
}

/// Update A = QR to A + u vᵀ in O(n²) with two sweeps of Givens rotations.
pub fn qr_rank1_update(q: &mut DMatrix<f64>, r: &mut DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) {
    let n = r.nrows();
    if n == 0 {
        return;
    }
    let mut w = q.tr_mul(u);
    for k in (1..n).rev() {
        let (c, s) = givens(w[k - 1], w[k]);
        w[k - 1] = c * w[k - 1] + s * w[k];
        w[k] = 0.0;
        rotate_rows(r, k - 1, k, c, s, k - 1);
        rotate_cols(q, k - 1, k, c, s);
    }
    for j in 0..n {
        r[(0, j)] += w[0] * v[j];
    }
    for k in 0..n - 1 {
        let (c, s) = givens(r[(k, k)], r[(k + 1, k)]);
        rotate_rows(r, k, k + 1, c, s, k);
        r[(k + 1, k)] = 0.0;
        rotate_cols(q, k, k + 1, c, s);
    }
}

/// Pseudo-inverse of a symmetric matrix from its eigendecomposition;
/// eigenvalues below 1e-12·n·max|λ| in magnitude are treated as zero.
pub fn symmetric_pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eig = a.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    let tol = 1e-12 * n as f64 * lmax;
    let inv = eig.eigenvalues.map(|l| if l.abs() > tol { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Solve R x = y; pivots below 1e-12·n·max|R_ii| are treated as zero and
/// their components set to 0.
fn back_substitute(r: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = r.nrows();
    let dmax = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * n as f64 * dmax;
    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in (i + 1)..n {
            s -= r[(i, j)] * x[j];
        }
        x[i] = if r[(i, i)].abs() > tol { s / r[(i, i)] } else { 0.0 };
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank1_update_matches_direct_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 9;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let qr = a.clone().qr();
        let (mut q, mut r) = (qr.q(), qr.r());
        let u = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        qr_rank1_update(&mut q, &mut r, &u, &v);
        let target = &a + &u * v.transpose();
        assert!((&q * &r - target).amax() < 1e-12);
        assert!((q.transpose() * &q - DMatrix::identity(n, n)).amax() < 1e-12);
        for i in 0..n {
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn back_substitution_skips_null_pivots() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.0]);
        let x = back_substitute(&r, &DVector::from_vec(vec![4.0, 0.0]));
        assert_eq!(x, DVector::from_vec(vec![2.0, 0.0]));
    }

    fn rand_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| vec![rng.random_range(0.0..2.0), rng.random_range(0.0..1.0)]).collect()
    }

    /// Closed-form predictions from the explicit replication-level matrices.
    fn direct(
        kernel: &SeKernel,
        gamma: f64,
        kappa: f64,
        theta_plus: &[Vec<f64>],
        map: &[f64],
        data: &[AnchorData],
        reps: &[MapReplication],
    ) -> Vec<f64> {
        let mut anchors = theta_plus.to_vec();
        anchors.push(map.to_vec());
        let mut pts = Vec::new();
        let mut prec = Vec::new();
        let mut y = Vec::new();
        for (p, d) in theta_plus.iter().zip(data) {
            if d.count > 0 {
                pts.push(p.clone());
                prec.push(d.count as f64 / d.variance);
                y.push(d.mean - gamma);
            }
        }
        for r in reps {
            pts.push(r.point.clone());
            prec.push(1.0 / r.variance);
            y.push(r.y - gamma);
        }
        let kt = kernel.cross(&anchors, &pts);
        let kbar = kernel.gram(&anchors);
        let w = DMatrix::from_diagonal(&DVector::from_vec(prec));
        let a = &kt * &w * kt.transpose() + &kbar * kappa;
        let c = symmetric_pinv(&a) * &kt * &w * DVector::from_vec(y);
        (kbar * c).add_scalar(gamma).iter().copied().collect()
    }

    struct Sim {
        theta_plus: Vec<Vec<f64>>,
        data: Vec<AnchorData>,
        reps: Vec<MapReplication>,
        map: Vec<f64>,
    }

    fn setup(rng: &mut ChaCha8Rng, b: usize) -> (SeKernel, Sim, NystromKrr) {
        let kernel = SeKernel::new(vec![0.5, 0.4], 2.0).unwrap();
        let theta_plus = rand_points(b, rng);
        let data: Vec<AnchorData> = (0..b)
            .map(|_| AnchorData { count: 1, mean: rng.random_range(-2.0..2.0), variance: rng.random_range(0.5..2.0) })
            .collect();
        let map = vec![rng.random_range(0.0..2.0), rng.random_range(0.0..1.0)];
        let krr = NystromKrr::fit(kernel.clone(), 0.3, 1.0, &theta_plus, &map, &data, &[], &[2.0, 1.0]).unwrap();
        (kernel, Sim { theta_plus, data, reps: Vec::new(), map }, krr)
    }

    fn random_event(rng: &mut ChaCha8Rng, sim: &mut Sim, krr: &mut NystromKrr) {
        match rng.random_range(0..4) {
            0 => {
                let b = rng.random_range(0..sim.theta_plus.len());
                let d = &mut sim.data[b];
                let y = rng.random_range(-3.0..3.0);
                d.mean = (d.mean * d.count as f64 + y) / (d.count + 1) as f64;
                d.count += 1;
                if rng.random_bool(0.3) {
                    d.variance = rng.random_range(0.5..2.0);
                }
                krr.set_anchor(b, *d);
            }
            1 | 2 => {
                let y = rng.random_range(-3.0..3.0);
                let variance = rng.random_range(0.5..2.0);
                krr.add_map_observation(y, variance);
                sim.reps.push(MapReplication { point: krr.map_point().to_vec(), y, variance });
            }
            _ => {
                sim.map = vec![rng.random_range(0.0..2.0), rng.random_range(0.0..1.0)];
                krr.move_map(&sim.map);
            }
        }
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn empty_history_matches_discrete_predictor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = 6;
        let kernel = SeKernel::new(vec![0.5, 0.4], 2.0).unwrap();
        let tp = rand_points(b, &mut rng);
        let data: Vec<AnchorData> = (0..b)
            .map(|_| AnchorData { count: rng.random_range(1..5), mean: rng.random_range(-2.0..2.0), variance: 1.5 })
            .collect();
        let mut krr = NystromKrr::fit(kernel.clone(), 0.1, 1.0, &tp, &[40.0, 40.0], &data, &[], &[2.0, 1.0]).unwrap();
        let pred = krr.predictions();
        let counts: Vec<u64> = data.iter().map(|d| d.count).collect();
        let means: Vec<f64> = data.iter().map(|d| d.mean).collect();
        let disc = crate::krr::DiscreteKrr::fit(&kernel.gram(&tp), &means, &counts, &[1.5; 6], 0.1, 1.0).unwrap();
        assert_close(&pred[..b], disc.predictions(), 1e-8);
    }

    #[test]
    fn constant_data_predicts_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tp = rand_points(5, &mut rng);
        let data = vec![AnchorData { count: 2, mean: 4.0, variance: 1.0 }; 5];
        let reps = vec![MapReplication { point: vec![0.7, 0.2], y: 4.0, variance: 1.0 }];
        let k = SeKernel::new(vec![0.5, 0.5], 1.0).unwrap();
        let mut krr = NystromKrr::fit(k, 4.0, 1.0, &tp, &[0.7, 0.2], &data, &reps, &[2.0, 1.0]).unwrap();
        assert!(krr.predictions().iter().all(|p| (p - 4.0).abs() < 1e-12));
        assert!(krr.predict_points(&rand_points(20, &mut rng)).iter().all(|p| (p - 4.0).abs() < 1e-12));
    }

    #[test]
    fn fit_matches_explicit_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (kernel, mut sim, mut krr) = setup(&mut rng, 7);
        for _ in 0..40 {
            random_event(&mut rng, &mut sim, &mut krr);
        }
        let refit = NystromKrr::fit(kernel.clone(), 0.3, 1.0, &sim.theta_plus, krr.map_point(), &sim.data, &sim.reps, &[2.0, 1.0])
            .unwrap();
        let d = direct(&kernel, 0.3, 1.0, &sim.theta_plus, krr.map_point(), &sim.data, &sim.reps);
        assert_close(&refit.pinv_predictions(), &d, 1e-9);
    }

    #[test]
    fn recursion_matches_refit() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (kernel, mut sim, mut krr) = setup(&mut rng, 6);
            krr.set_batch_limit(usize::MAX);
            for step in 0..30 {
                random_event(&mut rng, &mut sim, &mut krr);
                if step % 3 == 0 {
                    krr.solve();
                }
            }
            let c = krr.solve().clone();
            let refit =
                NystromKrr::fit(kernel.clone(), 0.3, 1.0, &sim.theta_plus, krr.map_point(), &sim.data, &sim.reps, &[2.0, 1.0])
                    .unwrap();
            let c_ref = refit.pinv_coefficients();
            assert!((&c - &c_ref).amax() < 1e-6, "seed {seed}: {}", (&c - &c_ref).amax());
            let (q, r) = krr.qr_factors();
            assert!((q.transpose() * q - DMatrix::identity(q.nrows(), q.nrows())).amax() < 1e-8);
            assert!((0..r.nrows()).all(|i| (0..i).all(|j| r[(i, j)] == 0.0)));
        }
    }

    #[test]
    fn periodic_refactor_keeps_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (kernel, mut sim, mut krr) = setup(&mut rng, 5);
        krr.set_batch_limit(usize::MAX);
        for _ in 0..700 {
            random_event(&mut rng, &mut sim, &mut krr);
            krr.solve();
        }
        let d = direct(&kernel, 0.3, 1.0, &sim.theta_plus, krr.map_point(), &sim.data, &sim.reps);
        assert_close(&krr.predictions(), &d, 1e-6);
    }

    #[test]
    fn history_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (kernel, mut sim, mut krr) = setup(&mut rng, 5);
        for _ in 0..40 {
            random_event(&mut rng, &mut sim, &mut krr);
        }
        let mut rev = sim.reps.clone();
        rev.reverse();
        let f = |reps: &[MapReplication]| {
            NystromKrr::fit(kernel.clone(), 0.3, 1.0, &sim.theta_plus, &sim.map, &sim.data, reps, &[2.0, 1.0])
                .unwrap()
                .pinv_predictions()
        };
        assert_close(&f(&sim.reps), &f(&rev), 1e-8);
    }

    #[test]
    fn map_on_fixed_anchor_is_nudged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, sim, mut krr) = setup(&mut rng, 4);
        let target = sim.theta_plus[2].clone();
        krr.move_map(&target);
        assert_ne!(krr.map_point(), target.as_slice());
        assert!((krr.map_point()[0] - target[0]).abs() < 1e-8);
        assert!(krr.predictions().iter().all(|p| p.is_finite()));
    }
}
