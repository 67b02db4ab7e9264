//! Supervised discrete hashing by alternating minimization of
//!
//! ```text
//! ||Y - W^T B||^2 + lambda ||W||^2 + nu ||B - P^T X||^2
//! ```
//!
//! over codes `B` (`L x N`, entries +-1), classifier `W` (`L x C`) and
//! projection `P` (`M x L`). Each step is an exact conditional minimizer
//! except the B-step, whose quality depends on the chosen [`Solver`].

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::biqp::{BiqpProblem, Solver};
use crate::codes::SignMatrix;
use crate::dataset::LabelArray;
use crate::error::{Error, Result};
use crate::linalg;

/// Relative jitter on the F-step system: `1e-8 * trace(X X^T) / M`.
pub const DEFAULT_JITTER_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SdhConfig {
    pub bits: usize,
    pub lambda: f64,
    pub nu: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub solver: Solver,
    /// F-step ridge; `None` selects [`DEFAULT_JITTER_SCALE`] times the mean diagonal of `X X^T`.
    pub jitter: Option<f64>,
}

impl Default for SdhConfig {
    fn default() -> Self {
        Self {
            bits: 32,
            lambda: 1.0,
            nu: 1e-5,
            max_iters: 5,
            seed: 0,
            solver: Solver::default(),
            jitter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdhState {
    /// `B`, `L x N`.
    pub codes: SignMatrix,
    /// `W`, `L x C`.
    pub weights: DMatrix<f64>,
    /// `P`, `M x L`.
    pub projection: DMatrix<f64>,
    pub lambda: f64,
    pub nu: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveBreakdown {
    /// `||Y - W^T B||^2` (the W-loss).
    pub classification_term: f64,
    /// `lambda ||W||^2`.
    pub regularizer: f64,
    /// `nu ||B - P^T X||^2`.
    pub bias_term: f64,
    pub total: f64,
    /// `||B - P^T X||^2` without the `nu` weight (the P-loss).
    pub p_loss: f64,
}

/// Cached Cholesky factor of `X X^T + jitter I` for repeated F-steps.
pub struct ProjectionSolver<'a> {
    features: &'a DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl<'a> ProjectionSolver<'a> {
    /// `jitter = None` picks the default relative jitter.
    pub fn new(features: &'a DMatrix<f64>, jitter: Option<f64>) -> Result<Self> {
        let mut xxt = linalg::gram(features);
        let m = xxt.nrows();
        let jitter = jitter.unwrap_or_else(|| default_jitter(&xxt));
        if !(jitter >= 0.0) {
            return Err(Error::invalid("jitter must be non-negative"));
        }
        for i in 0..m {
            xxt[(i, i)] += jitter;
        }
        // Reuse the conditioning check of spd_solve on a trivial right-hand side.
        linalg::spd_solve(&xxt, 0.0, &DMatrix::zeros(m, 0), "F-step X X^T")?;
        let chol = Cholesky::new(xxt).ok_or(Error::Singular("F-step X X^T"))?;
        Ok(Self {
            features,
            chol,
            jitter,
        })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Solves `(X X^T + jitter I) P = rhs`.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    /// `P = (X X^T + jitter I)^-1 X B^T`.
    pub fn project(&self, codes: &SignMatrix) -> Result<DMatrix<f64>> {
        if codes.ncols() != self.features.ncols() {
            return Err(Error::DimensionMismatch {
                what: "code count vs sample count",
                expected: self.features.ncols(),
                actual: codes.ncols(),
            });
        }
        let rhs = linalg::mul_transpose(self.features, &codes.map(f64::from));
        Ok(self.solve(&rhs))
    }
}

pub fn default_jitter(xxt: &DMatrix<f64>) -> f64 {
    let m = xxt.nrows().max(1) as f64;
    DEFAULT_JITTER_SCALE * linalg::trace(xxt) / m
}

/// F-step: `P = (X X^T + jitter I)^-1 X B^T`.
pub fn f_step(features: &DMatrix<f64>, codes: &SignMatrix, jitter: f64) -> Result<DMatrix<f64>> {
    ProjectionSolver::new(features, Some(jitter))?.project(codes)
}

/// `B Y^T`: column `k` is the sum of the codes labeled `k`.
fn code_class_sums(codes: &DMatrix<f64>, labels: &LabelArray, classes: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(codes.nrows(), classes);
    for (i, &y) in labels.as_slice().iter().enumerate() {
        let mut col = out.column_mut(y);
        col += codes.column(i);
    }
    out
}

/// W-step: `W = (B B^T + lambda I)^-1 B Y^T`.
pub fn w_step(
    codes: &SignMatrix,
    labels: &LabelArray,
    classes: usize,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    check_labels(codes.ncols(), labels, classes)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let b = codes.map(f64::from);
    let byt = code_class_sums(&b, labels, classes);
    linalg::spd_solve(&linalg::gram(&b), lambda, &byt, "W-step B B^T + lambda I")
}

fn check_labels(n: usize, labels: &LabelArray, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            what: "label count vs sample count",
            expected: n,
            actual: labels.len(),
        });
    }
    labels.validate(classes)
}

/// Result of a B-step.
#[derive(Debug, Clone, PartialEq)]
pub struct BStep {
    pub codes: SignMatrix,
    /// Every per-sample problem was solved to global optimality.
    pub exact: bool,
    /// Distinct quadratic programs solved.
    pub problems: usize,
}

/// B-step: per-sample `min_b b^T Q b + f_i^T b` with `Q = W W^T` and
/// `F = -2 (W Y + nu P^T X)`.
///
/// With `nu = 0` the linear term depends on the label only, so one problem is
/// solved per class and its answer shared by every sample of that class.
/// DCC starts from the current code of each sample (of the first sample of
/// the class when sharing).
pub fn b_step(
    state: &SdhState,
    features: &DMatrix<f64>,
    labels: &LabelArray,
    classes: usize,
    solver: &Solver,
) -> Result<BStep> {
    let w = &state.weights;
    let (l, n) = state.codes.shape();
    check_labels(n, labels, classes)?;
    if w.shape() != (l, classes) {
        return Err(Error::DimensionMismatch {
            what: "weight rows vs code length",
            expected: l,
            actual: w.nrows(),
        });
    }
    let q = linalg::gram(w);
    let q_rows: Vec<f64> = q.as_slice().to_vec();
    let mut out = SignMatrix::zeros(l, n);
    let mut exact = true;

    if state.nu == 0.0 {
        let mut solved: Vec<Option<Vec<i8>>> = vec![None; classes];
        let mut problems = 0;
        for (i, &y) in labels.as_slice().iter().enumerate() {
            if solved[y].is_none() {
                let f: Vec<f64> = w.column(y).iter().map(|v| -2.0 * v).collect();
                let problem = BiqpProblem::from_parts(q_rows.clone(), f);
                let init: Vec<i8> = state.codes.column(i).iter().copied().collect();
                let sol = solver.solve(&problem, &init)?;
                exact &= sol.exact;
                problems += 1;
                solved[y] = Some(sol.assignment);
            }
            let code = solved[y].as_ref().unwrap();
            for (r, &v) in code.iter().enumerate() {
                out[(r, i)] = v;
            }
        }
        return Ok(BStep {
            codes: out,
            exact,
            problems,
        });
    }

    if state.projection.nrows() != features.nrows() || state.projection.ncols() != l {
        return Err(Error::DimensionMismatch {
            what: "projection shape vs (feature dim, code length)",
            expected: features.nrows(),
            actual: state.projection.nrows(),
        });
    }
    let ptx = linalg::tr_mul(&state.projection, features);
    for (i, &y) in labels.as_slice().iter().enumerate() {
        let f: Vec<f64> = (0..l)
            .map(|r| -2.0 * (w[(r, y)] + state.nu * ptx[(r, i)]))
            .collect();
        let problem = BiqpProblem::from_parts(q_rows.clone(), f);
        let init: Vec<i8> = state.codes.column(i).iter().copied().collect();
        let sol = solver.solve(&problem, &init)?;
        exact &= sol.exact;
        for (r, &v) in sol.assignment.iter().enumerate() {
            out[(r, i)] = v;
        }
    }
    Ok(BStep {
        codes: out,
        exact,
        problems: n,
    })
}

/// Evaluates every term of the objective at `state`.
pub fn objective(
    state: &SdhState,
    features: &DMatrix<f64>,
    labels: &LabelArray,
    classes: usize,
) -> Result<ObjectiveBreakdown> {
    let b = state.codes.map(f64::from);
    check_labels(b.ncols(), labels, classes)?;
    let classification_term = classification_loss(&state.weights, &b, labels)?;
    let regularizer = state.lambda * linalg::frobenius_sq(&state.weights);
    let p_loss = if state.projection.ncols() == b.nrows() && state.projection.nrows() == features.nrows() {
        projection_loss(&state.projection, features, &b)
    } else if state.nu == 0.0 {
        0.0
    } else {
        return Err(Error::DimensionMismatch {
            what: "projection shape vs (feature dim, code length)",
            expected: features.nrows(),
            actual: state.projection.nrows(),
        });
    };
    let bias_term = state.nu * p_loss;
    Ok(ObjectiveBreakdown {
        classification_term,
        regularizer,
        bias_term,
        total: classification_term + regularizer + bias_term,
        p_loss,
    })
}

/// `||Y - W^T B||^2`.
pub fn classification_loss(
    weights: &DMatrix<f64>,
    codes: &DMatrix<f64>,
    labels: &LabelArray,
) -> Result<f64> {
    if weights.nrows() != codes.nrows() {
        return Err(Error::DimensionMismatch {
            what: "weight rows vs code length",
            expected: codes.nrows(),
            actual: weights.nrows(),
        });
    }
    let scores = linalg::tr_mul(weights, codes);
    let mut total = 0.0;
    for (i, col) in scores.column_iter().enumerate() {
        let y = labels.get(i);
        for (k, &s) in col.iter().enumerate() {
            let r = if k == y { 1.0 - s } else { s };
            total += r * r;
        }
    }
    Ok(total)
}

/// `||B - P^T X||^2`.
pub fn projection_loss(projection: &DMatrix<f64>, features: &DMatrix<f64>, codes: &DMatrix<f64>) -> f64 {
    let ptx = linalg::tr_mul(projection, features);
    linalg::frobenius_sq(&(codes - ptx))
}

/// `(||W Y||^2, nu ||P^T X||^2)`: how much the label term dominates the
/// projection term inside the B-step's linear coefficient.
pub fn magnitude_report(
    state: &SdhState,
    features: &DMatrix<f64>,
    labels: &LabelArray,
    classes: usize,
) -> Result<(f64, f64)> {
    check_labels(state.codes.ncols(), labels, classes)?;
    let counts = labels.class_counts(classes);
    let classification: f64 = counts
        .iter()
        .enumerate()
        .map(|(k, &nk)| nk as f64 * state.weights.column(k).norm_squared())
        .sum();
    let bias = if state.nu == 0.0 {
        0.0
    } else {
        state.nu * linalg::frobenius_sq(&linalg::tr_mul(&state.projection, features))
    };
    Ok((classification, bias))
}

/// Step-by-step driver; [`train_sdh`] runs it to completion.
pub struct SdhTrainer<'a> {
    features: &'a DMatrix<f64>,
    labels: &'a LabelArray,
    classes: usize,
    config: SdhConfig,
    projector: ProjectionSolver<'a>,
    pub state: SdhState,
    /// False once any B-step fell back to an inexact answer.
    pub exact_b_steps: bool,
}

impl<'a> SdhTrainer<'a> {
    /// Random `+-1` initial codes drawn from the config seed.
    pub fn new(
        features: &'a DMatrix<f64>,
        labels: &'a LabelArray,
        classes: usize,
        config: SdhConfig,
    ) -> Result<Self> {
        let n = features.ncols();
        check_labels(n, labels, classes)?;
        if config.bits == 0 {
            return Err(Error::invalid("code length must be at least 1"));
        }
        if config.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(config.lambda >= 0.0 && config.nu >= 0.0) {
            return Err(Error::invalid("lambda and nu must be non-negative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let codes = SignMatrix::from_fn(config.bits, n, |_, _| if rng.random::<bool>() { 1 } else { -1 });
        let projector = ProjectionSolver::new(features, config.jitter)?;
        let state = SdhState {
            codes,
            weights: DMatrix::zeros(config.bits, classes),
            projection: DMatrix::zeros(features.nrows(), config.bits),
            lambda: config.lambda,
            nu: config.nu,
            iteration: 0,
        };
        Ok(Self {
            features,
            labels,
            classes,
            config,
            projector,
            state,
            exact_b_steps: true,
        })
    }

    pub fn f_step(&mut self) -> Result<()> {
        self.state.projection = self.projector.project(&self.state.codes)?;
        Ok(())
    }

    pub fn w_step(&mut self) -> Result<()> {
        self.state.weights = w_step(&self.state.codes, self.labels, self.classes, self.config.lambda)?;
        Ok(())
    }

    pub fn b_step(&mut self) -> Result<()> {
        let out = b_step(&self.state, self.features, self.labels, self.classes, &self.config.solver)?;
        self.exact_b_steps &= out.exact;
        self.state.codes = out.codes;
        Ok(())
    }

    pub fn objective(&self) -> Result<ObjectiveBreakdown> {
        objective(&self.state, self.features, self.labels, self.classes)
    }

    /// One F/W/B round; returns the objective after the B-step.
    pub fn iterate(&mut self) -> Result<ObjectiveBreakdown> {
        self.f_step()?;
        self.w_step()?;
        self.b_step()?;
        self.state.iteration += 1;
        self.objective()
    }

    /// Refits `P` and `W` to the final codes so the state is self-consistent.
    pub fn finish(mut self) -> Result<SdhState> {
        self.f_step()?;
        self.w_step()?;
        Ok(self.state)
    }
}

/// Full SDH training run: random init, then `max_iters` F/W/B rounds, then a
/// final F/W refit. The trajectory holds the objective after each round.
pub fn train_sdh(
    features: &DMatrix<f64>,
    labels: &LabelArray,
    classes: usize,
    config: &SdhConfig,
) -> Result<(SdhState, Vec<ObjectiveBreakdown>)> {
    let mut trainer = SdhTrainer::new(features, labels, classes, config.clone())?;
    let mut trajectory = Vec::with_capacity(config.max_iters);
    for _ in 0..config.max_iters {
        trajectory.push(trainer.iterate()?);
    }
    Ok((trainer.finish()?, trajectory))
}

/// Trajectory as CSV: `iteration,classification_term,regularizer,bias_term,total`.
pub fn trajectory_csv(trajectory: &[ObjectiveBreakdown]) -> String {
    let mut out = String::from("iteration,classification_term,regularizer,bias_term,total\n");
    for (i, o) in trajectory.iter().enumerate() {
        out.push_str(&format!(
            "{},{:.12},{:.12},{:.12},{:.12}\n",
            i + 1,
            o.classification_term,
            o.regularizer,
            o.bias_term,
            o.total
        ));
    }
    out
}
