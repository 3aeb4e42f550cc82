//! Primal-dual interior-point method for block semidefinite programs.
//!
//! Standard form over a product of real PSD blocks and nonnegative orthants:
//!
//! ```text
//! minimize   ⟨C, X⟩
//! subject to ⟨A_i, X⟩ = b_i,  i = 1..m
//!            X ⪰ 0
//! ```
//!
//! with dual `maximize bᵀy  s.t.  C − Σ y_i A_i = S ⪰ 0`. The search
//! direction is HKM (`X ΔS S⁻¹` symmetrized) with a Mehrotra
//! predictor-corrector and an infeasible start, so the only dense system per
//! iteration is the `m × m` Schur complement. Infeasibility is reported from
//! Farkas-type certificates read off the iterates.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// Real symmetric `n × n` block constrained PSD.
    Psd(usize),
    /// `n` scalars constrained nonnegative.
    Nonneg(usize),
}

impl Cone {
    /// Barrier degree: the number of eigenvalues / entries.
    pub fn degree(&self) -> usize {
        match *self {
            Cone::Psd(n) | Cone::Nonneg(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Mat(DMatrix<f64>),
    Vec(DVector<f64>),
}

impl Block {
    fn zeros(cone: Cone) -> Self {
        match cone {
            Cone::Psd(n) => Block::Mat(DMatrix::zeros(n, n)),
            Cone::Nonneg(n) => Block::Vec(DVector::zeros(n)),
        }
    }

    fn identity(cone: Cone, scale: f64) -> Self {
        match cone {
            Cone::Psd(n) => Block::Mat(DMatrix::identity(n, n) * scale),
            Cone::Nonneg(n) => Block::Vec(DVector::from_element(n, scale)),
        }
    }

    fn dot(&self, other: &Block) -> f64 {
        match (self, other) {
            (Block::Mat(a), Block::Mat(b)) => a.dot(b),
            (Block::Vec(a), Block::Vec(b)) => a.dot(b),
            _ => panic!("block kind mismatch"),
        }
    }

    fn axpy(&mut self, alpha: f64, other: &Block) {
        match (self, other) {
            (Block::Mat(a), Block::Mat(b)) => *a += b * alpha,
            (Block::Vec(a), Block::Vec(b)) => a.axpy(alpha, b, 1.0),
            _ => panic!("block kind mismatch"),
        }
    }

    fn scale_mut(&mut self, alpha: f64) {
        match self {
            Block::Mat(a) => *a *= alpha,
            Block::Vec(a) => *a *= alpha,
        }
    }

    fn norm(&self) -> f64 {
        match self {
            Block::Mat(a) => a.norm(),
            Block::Vec(a) => a.norm(),
        }
    }

    pub fn as_mat(&self) -> &DMatrix<f64> {
        match self {
            Block::Mat(a) => a,
            Block::Vec(_) => panic!("expected a matrix block"),
        }
    }

    pub fn as_vec(&self) -> &DVector<f64> {
        match self {
            Block::Vec(a) => a,
            Block::Mat(_) => panic!("expected a vector block"),
        }
    }
}

/// An element of the product space, one [`Block`] per cone.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVec {
    pub blocks: Vec<Block>,
}

impl BlockVec {
    pub fn zeros(cones: &[Cone]) -> Self {
        Self { blocks: cones.iter().map(|&c| Block::zeros(c)).collect() }
    }

    pub fn identity(cones: &[Cone], scale: f64) -> Self {
        Self { blocks: cones.iter().map(|&c| Block::identity(c, scale)).collect() }
    }

    pub fn dot(&self, other: &BlockVec) -> f64 {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn axpy(&mut self, alpha: f64, other: &BlockVec) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.axpy(alpha, b);
        }
    }

    pub fn scale_mut(&mut self, alpha: f64) {
        for a in &mut self.blocks {
            a.scale_mut(alpha);
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm().powi(2)).sum::<f64>().sqrt()
    }

    pub fn mat_mut(&mut self, block: usize) -> &mut DMatrix<f64> {
        match &mut self.blocks[block] {
            Block::Mat(a) => a,
            Block::Vec(_) => panic!("expected a matrix block"),
        }
    }

    pub fn vec_mut(&mut self, block: usize) -> &mut DVector<f64> {
        match &mut self.blocks[block] {
            Block::Vec(a) => a,
            Block::Mat(_) => panic!("expected a vector block"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub cones: Vec<Cone>,
    pub c: BlockVec,
    pub a: Vec<BlockVec>,
    pub b: DVector<f64>,
}

impl SdpProblem {
    /// `A(X)_i = ⟨A_i, X⟩`.
    pub fn apply_a(&self, x: &BlockVec) -> DVector<f64> {
        DVector::from_iterator(self.a.len(), self.a.iter().map(|ai| ai.dot(x)))
    }

    /// `A*(y) = Σ y_i A_i`.
    pub fn apply_at(&self, y: &DVector<f64>) -> BlockVec {
        let mut out = BlockVec::zeros(&self.cones);
        for (ai, &yi) in self.a.iter().zip(y.iter()) {
            if yi != 0.0 {
                out.axpy(yi, ai);
            }
        }
        out
    }
}

/// Nonzero part of one constraint matrix on one block.
#[derive(Debug, Clone)]
enum Coef {
    Dense(DMatrix<f64>),
    /// All nonzero entries `(row, col, value)` of a symmetric matrix.
    Sparse(Vec<(usize, usize, f64)>),
    Vector(DVector<f64>),
}

/// Constraint matrix stored by nonzero block.
#[derive(Debug, Clone)]
struct Row {
    terms: Vec<(usize, Coef)>,
}

impl Row {
    fn compress(a: &BlockVec) -> Self {
        let mut terms = Vec::new();
        for (b, block) in a.blocks.iter().enumerate() {
            match block {
                Block::Mat(m) => {
                    let n = m.nrows();
                    let entries: Vec<(usize, usize, f64)> = (0..n)
                        .flat_map(|c| (0..n).map(move |r| (r, c)))
                        .filter_map(|(r, c)| (m[(r, c)] != 0.0).then(|| (r, c, m[(r, c)])))
                        .collect();
                    if entries.is_empty() {
                        continue;
                    }
                    if entries.len() <= n {
                        terms.push((b, Coef::Sparse(entries)));
                    } else {
                        terms.push((b, Coef::Dense(m.clone())));
                    }
                }
                Block::Vec(v) => {
                    if v.iter().any(|&e| e != 0.0) {
                        terms.push((b, Coef::Vector(v.clone())));
                    }
                }
            }
        }
        Self { terms }
    }

    fn dot(&self, x: &BlockVec) -> f64 {
        self.terms
            .iter()
            .map(|(b, coef)| match (coef, &x.blocks[*b]) {
                (Coef::Dense(a), Block::Mat(m)) => a.dot(m),
                (Coef::Sparse(e), Block::Mat(m)) => e.iter().map(|&(r, c, v)| v * m[(r, c)]).sum(),
                (Coef::Vector(a), Block::Vec(v)) => a.dot(v),
                _ => unreachable!(),
            })
            .sum()
    }

    fn add_to(&self, alpha: f64, out: &mut BlockVec) {
        for (b, coef) in &self.terms {
            match (coef, &mut out.blocks[*b]) {
                (Coef::Dense(a), Block::Mat(m)) => *m += a * alpha,
                (Coef::Sparse(e), Block::Mat(m)) => {
                    for &(r, c, v) in e {
                        m[(r, c)] += alpha * v;
                    }
                }
                (Coef::Vector(a), Block::Vec(v)) => v.axpy(alpha, a, 1.0),
                _ => unreachable!(),
            }
        }
    }
}

struct Rows {
    rows: Vec<Row>,
    cones: Vec<Cone>,
}

impl Rows {
    fn apply(&self, x: &BlockVec) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.dot(x)))
    }

    fn apply_t(&self, y: &DVector<f64>) -> BlockVec {
        let mut out = BlockVec::zeros(&self.cones);
        for (row, &yi) in self.rows.iter().zip(y.iter()) {
            if yi != 0.0 {
                row.add_to(yi, &mut out);
            }
        }
        out
    }

    /// `M_ij = Σ_b tr(A_i X A_j S⁻¹)`, which is symmetric.
    fn schur(&self, x: &BlockVec, s_inv: &[Block]) -> DMatrix<f64> {
        let m = self.rows.len();
        let mut out = DMatrix::<f64>::zeros(m, m);
        // Rows touching each block, split by storage.
        let nb = self.cones.len();
        let mut dense: Vec<Vec<(usize, &Coef)>> = vec![Vec::new(); nb];
        let mut sparse: Vec<Vec<(usize, &Coef)>> = vec![Vec::new(); nb];
        for (i, row) in self.rows.iter().enumerate() {
            for (b, coef) in &row.terms {
                match coef {
                    Coef::Sparse(_) => sparse[*b].push((i, coef)),
                    _ => dense[*b].push((i, coef)),
                }
            }
        }
        for b in 0..nb {
            match (&x.blocks[b], &s_inv[b]) {
                (Block::Mat(xm), Block::Mat(si)) => {
                    for &(j, cj) in &dense[b] {
                        let Coef::Dense(aj) = cj else { unreachable!() };
                        let pj = xm * aj * si;
                        for &(i, ci) in &dense[b] {
                            let Coef::Dense(ai) = ci else { unreachable!() };
                            out[(i, j)] += ai.dot(&pj);
                        }
                        for &(i, ci) in &sparse[b] {
                            let Coef::Sparse(ei) = ci else { unreachable!() };
                            let v: f64 = ei.iter().map(|&(r, c, u)| u * pj[(r, c)]).sum();
                            out[(i, j)] += v;
                            out[(j, i)] += v;
                        }
                    }
                    let list = &sparse[b];
                    for (a, &(i, ci)) in list.iter().enumerate() {
                        let Coef::Sparse(ei) = ci else { unreachable!() };
                        for &(j, cj) in &list[a..] {
                            let Coef::Sparse(ej) = cj else { unreachable!() };
                            let mut v = 0.0;
                            for &(p, q, u) in ei {
                                for &(r, t, w) in ej {
                                    v += u * w * xm[(q, r)] * si[(t, p)];
                                }
                            }
                            out[(i, j)] += v;
                            if i != j {
                                out[(j, i)] += v;
                            }
                        }
                    }
                }
                (Block::Vec(xv), Block::Vec(si)) => {
                    let d = xv.component_mul(si);
                    for &(j, cj) in &dense[b] {
                        let Coef::Vector(aj) = cj else { unreachable!() };
                        let pj = aj.component_mul(&d);
                        for &(i, ci) in &dense[b] {
                            let Coef::Vector(ai) = ci else { unreachable!() };
                            out[(i, j)] += ai.dot(&pj);
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SdpSettings {
    pub max_iter: usize,
    /// Target relative duality gap.
    pub gap_tol: f64,
    /// Target relative primal and dual residuals.
    pub feas_tol: f64,
    /// Largest gap / residual still accepted as optimal when progress stalls.
    pub gap_tol_loose: f64,
    pub feas_tol_loose: f64,
    /// Threshold on the normalized Farkas certificates.
    pub infeas_tol: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            max_iter: 120,
            gap_tol: 1e-10,
            feas_tol: 1e-10,
            gap_tol_loose: 1e-8,
            feas_tol_loose: 1e-8,
            infeas_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalError,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: BlockVec,
    pub y: DVector<f64>,
    pub s: BlockVec,
    pub primal_obj: f64,
    pub dual_obj: f64,
    /// `|pobj − dobj| / (1 + |pobj| + |dobj|)` on the scaled problem.
    pub rel_gap: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub iterations: usize,
}

struct Scaling {
    rows: Vec<f64>,
    objective: f64,
}

fn scale_problem(p: &SdpProblem) -> (SdpProblem, Scaling) {
    let mut q = p.clone();
    let mut rows = Vec::with_capacity(p.a.len());
    for (i, ai) in q.a.iter_mut().enumerate() {
        let n = ai.norm();
        let n = if n > 0.0 { n } else { 1.0 };
        ai.scale_mut(1.0 / n);
        q.b[i] /= n;
        rows.push(n);
    }
    let cn = q.c.norm();
    let objective = if cn > 0.0 { cn } else { 1.0 };
    q.c.scale_mut(1.0 / objective);
    (q, Scaling { rows, objective })
}

/// Largest `α` with `X + α ΔX` still in the cone (`f64::INFINITY` if unbounded).
fn max_step(x: &BlockVec, dx: &BlockVec) -> Option<f64> {
    let mut alpha = f64::INFINITY;
    for (xb, db) in x.blocks.iter().zip(&dx.blocks) {
        match (xb, db) {
            (Block::Mat(xm), Block::Mat(dm)) => {
                let l = xm.clone().cholesky()?.unpack();
                let z1 = l.solve_lower_triangular(dm)?;
                let z = l.solve_lower_triangular(&z1.transpose())?;
                let z = (&z + z.transpose()) * 0.5;
                let lam = z.symmetric_eigenvalues().min();
                if lam < 0.0 {
                    alpha = alpha.min(-1.0 / lam);
                }
            }
            (Block::Vec(xv), Block::Vec(dv)) => {
                for (xi, di) in xv.iter().zip(dv.iter()) {
                    if *di < 0.0 {
                        alpha = alpha.min(-xi / di);
                    }
                }
            }
            _ => unreachable!(),
        }
    }
    Some(alpha)
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Per-iteration factorizations used to form search directions.
struct Newton<'a> {
    rows: &'a Rows,
    x: &'a BlockVec,
    s_inv: Vec<Block>,
    r_p: DVector<f64>,
    r_d: BlockVec,
    schur: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl<'a> Newton<'a> {
    fn new(p: &SdpProblem, rows: &'a Rows, x: &'a BlockVec, y: &DVector<f64>, s: &BlockVec) -> Option<Self> {
        let s_inv: Vec<Block> = s
            .blocks
            .iter()
            .map(|b| match b {
                Block::Mat(m) => m.clone().cholesky().map(|c| Block::Mat(sym(c.inverse()))),
                Block::Vec(v) => Some(Block::Vec(v.map(|e| 1.0 / e))),
            })
            .collect::<Option<_>>()?;

        let r_p = &p.b - rows.apply(x);
        let mut r_d = p.c.clone();
        r_d.axpy(-1.0, &rows.apply_t(y));
        r_d.axpy(-1.0, s);

        let m = rows.rows.len();
        let schur = sym(rows.schur(x, &s_inv));
        let chol = match schur.clone().cholesky() {
            Some(c) => c,
            None => {
                let bump = 1e-14 * schur.trace().abs().max(1e-300);
                (schur + DMatrix::identity(m, m) * bump).cholesky()?
            }
        };
        Some(Self { rows, x, s_inv, r_p, r_d, schur: chol })
    }

    /// Solve for `(ΔX, Δy, ΔS)` targeting `XS = σμ I`, optionally with the
    /// Mehrotra second-order correction from a predictor step.
    fn direction(&self, sigma_mu: f64, corr: Option<(&BlockVec, &BlockVec)>) -> (BlockVec, DVector<f64>, BlockVec) {
        let nb = self.x.blocks.len();
        let mut k_blocks = Vec::with_capacity(nb);
        let mut g_blocks = Vec::with_capacity(nb);
        for b in 0..nb {
            match (&self.x.blocks[b], &self.s_inv[b], &self.r_d.blocks[b]) {
                (Block::Mat(xm), Block::Mat(si), Block::Mat(rd)) => {
                    let mut k = si * sigma_mu - xm;
                    if let Some((dxa, dsa)) = corr {
                        k -= dxa.blocks[b].as_mat() * dsa.blocks[b].as_mat() * si;
                    }
                    let g = &k - xm * rd * si;
                    k_blocks.push(Block::Mat(k));
                    g_blocks.push(Block::Mat(g));
                }
                (Block::Vec(xv), Block::Vec(si), Block::Vec(rd)) => {
                    let mut k = si * sigma_mu - xv;
                    if let Some((dxa, dsa)) = corr {
                        k -= dxa.blocks[b].as_vec().component_mul(dsa.blocks[b].as_vec()).component_mul(si);
                    }
                    let g = &k - xv.component_mul(rd).component_mul(si);
                    k_blocks.push(Block::Vec(k));
                    g_blocks.push(Block::Vec(g));
                }
                _ => unreachable!(),
            }
        }
        let g = BlockVec { blocks: g_blocks };
        let h = &self.r_p - self.rows.apply(&g);
        let dy = self.schur.solve(&h);
        let mut ds = self.r_d.clone();
        ds.axpy(-1.0, &self.rows.apply_t(&dy));
        let mut dx_blocks = Vec::with_capacity(nb);
        for (b, k) in k_blocks.into_iter().enumerate() {
            match (k, &self.x.blocks[b], &self.s_inv[b], &ds.blocks[b]) {
                (Block::Mat(k), Block::Mat(xm), Block::Mat(si), Block::Mat(dsb)) => {
                    dx_blocks.push(Block::Mat(sym(k - xm * dsb * si)));
                }
                (Block::Vec(k), Block::Vec(xv), Block::Vec(si), Block::Vec(dsb)) => {
                    dx_blocks.push(Block::Vec(k - xv.component_mul(dsb).component_mul(si)));
                }
                _ => unreachable!(),
            }
        }
        (BlockVec { blocks: dx_blocks }, dy, ds)
    }
}

/// Solve a block SDP. The returned primal/dual objectives and dual variables
/// refer to the problem as given (internal row and objective scaling undone).
pub fn solve_sdp(problem: &SdpProblem, settings: &SdpSettings) -> SdpSolution {
    let (p, scaling) = scale_problem(problem);
    let rows = Rows { rows: p.a.iter().map(Row::compress).collect(), cones: p.cones.clone() };
    let m = p.a.len();
    let degree: usize = p.cones.iter().map(Cone::degree).sum();
    let b_norm = p.b.norm();

    // Starting point in the style of SDPT3: large multiples of the identity.
    let mut x = BlockVec::zeros(&p.cones);
    let mut s = BlockVec::zeros(&p.cones);
    for (bi, &cone) in p.cones.iter().enumerate() {
        let n = cone.degree() as f64;
        let mut xi = 10f64.max(n.sqrt());
        let mut eta = 10f64.max(n.sqrt()).max(p.c.blocks[bi].norm());
        for (ai, &b) in p.a.iter().zip(p.b.iter()) {
            let an = ai.blocks[bi].norm();
            xi = xi.max(n * (1.0 + b.abs()) / (1.0 + an));
            eta = eta.max(an);
        }
        x.blocks[bi] = Block::identity(cone, xi);
        s.blocks[bi] = Block::identity(cone, eta);
    }
    let mut y = DVector::<f64>::zeros(m);

    let status;
    let mut iterations = 0;
    let mut stall = 0;
    let (mut rel_gap, mut pinf, mut dinf);
    let near_optimal = |gap: f64, pinf: f64, dinf: f64| {
        gap < settings.gap_tol_loose && pinf < settings.feas_tol_loose && dinf < settings.feas_tol_loose
    };
    // Exit status when the Newton system or a step length breaks down.
    let breakdown = |gap: f64, pinf: f64, dinf: f64| {
        if near_optimal(gap, pinf, dinf) {
            SdpStatus::Optimal
        } else {
            SdpStatus::NumericalError
        }
    };
    loop {
        let pobj = p.c.dot(&x);
        let dobj = p.b.dot(&y);
        let r_p = &p.b - rows.apply(&x);
        let mut r_d = p.c.clone();
        r_d.axpy(-1.0, &rows.apply_t(&y));
        r_d.axpy(-1.0, &s);
        let comp = x.dot(&s);
        rel_gap = (pobj - dobj).abs().max(comp.abs()) / (1.0 + pobj.abs() + dobj.abs());
        pinf = r_p.norm() / (1.0 + b_norm);
        dinf = r_d.norm() / (1.0 + p.c.norm());

        if rel_gap < settings.gap_tol && pinf < settings.feas_tol && dinf < settings.feas_tol {
            status = SdpStatus::Optimal;
            break;
        }
        if dobj > 0.0 {
            let mut cert = rows.apply_t(&y);
            cert.axpy(1.0, &s);
            if cert.norm() / dobj < settings.infeas_tol {
                status = SdpStatus::PrimalInfeasible;
                break;
            }
        }
        if pobj < 0.0 && rows.apply(&x).norm() / -pobj < settings.infeas_tol {
            status = SdpStatus::DualInfeasible;
            break;
        }
        if iterations >= settings.max_iter || stall >= 3 {
            status = if near_optimal(rel_gap, pinf, dinf) {
                SdpStatus::Optimal
            } else if iterations >= settings.max_iter {
                SdpStatus::MaxIterations
            } else {
                SdpStatus::NumericalError
            };
            break;
        }
        iterations += 1;

        let mu = comp / degree as f64;
        let Some(newton) = Newton::new(&p, &rows, &x, &y, &s) else {
            status = breakdown(rel_gap, pinf, dinf);
            break;
        };

        // Predictor.
        let (dx_a, _dy_a, ds_a) = newton.direction(0.0, None);
        let (Some(ap), Some(ad)) = (max_step(&x, &dx_a), max_step(&s, &ds_a)) else {
            status = breakdown(rel_gap, pinf, dinf);
            break;
        };
        let ap = ap.min(1.0);
        let ad = ad.min(1.0);
        let mut xa = x.clone();
        xa.axpy(ap, &dx_a);
        let mut sa = s.clone();
        sa.axpy(ad, &ds_a);
        let mu_aff = xa.dot(&sa) / degree as f64;
        let expon = 1f64.max(3.0 * ap.min(ad).powi(2));
        let sigma = (mu_aff / mu).max(0.0).powf(expon).min(1.0);

        // Corrector.
        let (dx, dy, ds) = newton.direction(sigma * mu, Some((&dx_a, &ds_a)));
        let (Some(ap_max), Some(ad_max)) = (max_step(&x, &dx), max_step(&s, &ds)) else {
            status = breakdown(rel_gap, pinf, dinf);
            break;
        };
        let frac = 0.9 + 0.09 * ap.min(ad);
        let ap = (frac * ap_max).min(1.0);
        let ad = (frac * ad_max).min(1.0);
        x.axpy(ap, &dx);
        y.axpy(ad, &dy, 1.0);
        s.axpy(ad, &ds);
        if ap.max(ad) < 1e-8 {
            stall += 1;
        } else {
            stall = 0;
        }
    }

    let primal_obj = p.c.dot(&x) * scaling.objective;
    let dual_obj = p.b.dot(&y) * scaling.objective;
    let y_out = DVector::from_iterator(
        m,
        y.iter().zip(&scaling.rows).map(|(yi, r)| yi * scaling.objective / r),
    );
    let mut s_out = s;
    s_out.scale_mut(scaling.objective);
    SdpSolution {
        status,
        x,
        y: y_out,
        s: s_out,
        primal_obj,
        dual_obj,
        rel_gap,
        primal_res: pinf,
        dual_res: dinf,
        iterations,
    }
}
