//! Solvers for `min_{b in {-1,+1}^L} b^T Q b + f^T b`.
//!
//! * [`solve_dcc`]: discrete cyclic coordinate descent, one bit at a time.
//!   Fast, greedy, and prone to local minima.
//! * [`solve_exhaustive`]: Gray-code enumeration of all `2^L` assignments.
//! * [`solve_branch_and_bound`]: depth-first search over bit prefixes with an
//!   absolute-mass lower bound, seeded with the DCC solution.
//!
//! Ties between assignments are broken toward the lexicographically smallest
//! assignment, ordering `-1 < +1` and comparing bit 0 first.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest `L` accepted by the exhaustive solver.
pub const EXHAUSTIVE_MAX_BITS: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct BiqpProblem {
    /// Row-major copy of the symmetric `L x L` quadratic term.
    q: Vec<f64>,
    f: Vec<f64>,
    bits: usize,
}

impl BiqpProblem {
    pub fn new(quadratic: &DMatrix<f64>, linear: &DVector<f64>) -> Result<Self> {
        let bits = linear.len();
        if quadratic.shape() != (bits, bits) {
            return Err(Error::DimensionMismatch {
                what: "quadratic term size vs linear term length",
                expected: bits,
                actual: quadratic.nrows(),
            });
        }
        let scale = quadratic.amax().max(1.0);
        for i in 0..bits {
            for j in (i + 1)..bits {
                if (quadratic[(i, j)] - quadratic[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::invalid(format!(
                        "quadratic term is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let mut q = Vec::with_capacity(bits * bits);
        for i in 0..bits {
            for j in 0..bits {
                q.push(quadratic[(i, j)]);
            }
        }
        Ok(Self {
            q,
            f: linear.iter().copied().collect(),
            bits,
        })
    }

    /// Builds from raw row-major storage; `q` must already be symmetric.
    pub(crate) fn from_parts(q: Vec<f64>, f: Vec<f64>) -> Self {
        let bits = f.len();
        debug_assert_eq!(q.len(), bits * bits);
        Self { q, f, bits }
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn linear(&self) -> &[f64] {
        &self.f
    }

    #[inline]
    fn q(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.bits + j]
    }

    /// `b^T Q b + f^T b`, diagonal included.
    pub fn objective(&self, b: &[i8]) -> f64 {
        assert_eq!(b.len(), self.bits);
        let mut total = 0.0;
        for i in 0..self.bits {
            let bi = f64::from(b[i]);
            let mut row = 0.0;
            for j in 0..self.bits {
                row += self.q(i, j) * f64::from(b[j]);
            }
            total += bi * row + self.f[i] * bi;
        }
        total
    }

    /// `2 * sum_{i != l} Q_il b_i + f_l`, the coefficient of `b_l` once the
    /// other bits are fixed.
    #[inline]
    fn local_field(&self, b: &[i8], l: usize) -> f64 {
        let row = &self.q[l * self.bits..(l + 1) * self.bits];
        let mut s = 0.0;
        for (i, (&qi, &bi)) in row.iter().zip(b).enumerate() {
            if i != l {
                s += qi * f64::from(bi);
            }
        }
        2.0 * s + self.f[l]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverTag {
    Dcc,
    Exhaustive,
    BranchAndBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiqpSolution {
    pub assignment: Vec<i8>,
    pub objective: f64,
    pub solver: SolverTag,
    /// Global optimum guaranteed.
    pub exact: bool,
    /// Search nodes expanded (branch-and-bound), sweeps run (DCC), or
    /// assignments visited (exhaustive).
    pub work: u64,
}

/// Lexicographic order with `-1 < +1`, bit 0 most significant.
fn lex_cmp(a: &[i8], b: &[i8]) -> Ordering {
    a.cmp(b)
}

/// True when `(value, assignment)` should replace the incumbent.
fn improves(value: f64, assignment: &[i8], best: f64, best_assignment: &[i8]) -> bool {
    let tol = 1e-12 * (1.0 + best.abs());
    if value < best - tol {
        true
    } else if value <= best + tol {
        lex_cmp(assignment, best_assignment) == Ordering::Less
    } else {
        false
    }
}

/// Coordinate descent `b_l <- -sgn(2 sum_{i != l} Q_il b_i + f_l)`, cycling
/// `l = 0..L` until a sweep changes nothing or `max_sweeps` is reached.
/// A zero field keeps the current bit.
pub fn solve_dcc(problem: &BiqpProblem, init: &[i8], max_sweeps: usize) -> BiqpSolution {
    assert_eq!(init.len(), problem.bits, "DCC init length");
    let mut b = init.to_vec();
    let mut sweeps = 0;
    for _ in 0..max_sweeps.max(1) {
        sweeps += 1;
        let mut changed = false;
        for l in 0..problem.bits {
            let field = problem.local_field(&b, l);
            let next = if field > 0.0 {
                -1
            } else if field < 0.0 {
                1
            } else {
                b[l]
            };
            if next != b[l] {
                b[l] = next;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let objective = problem.objective(&b);
    BiqpSolution {
        assignment: b,
        objective,
        solver: SolverTag::Dcc,
        exact: false,
        work: sweeps,
    }
}

/// Global minimum over all `2^L` assignments.
pub fn solve_exhaustive(problem: &BiqpProblem) -> Result<BiqpSolution> {
    let l = problem.bits;
    if l > EXHAUSTIVE_MAX_BITS {
        return Err(Error::BudgetExceeded {
            what: "exhaustive search bits",
            requested: l,
            limit: EXHAUSTIVE_MAX_BITS,
        });
    }
    let mut b = vec![-1i8; l];
    // g_l = sum_{i != l} Q_il b_i, maintained incrementally under single flips.
    let mut g: Vec<f64> = (0..l)
        .map(|j| (0..l).filter(|&i| i != j).map(|i| -problem.q(i, j)).sum())
        .collect();
    let mut value = problem.objective(&b);
    let mut best = value;
    let mut best_b = b.clone();
    let total: u64 = 1 << l;
    for step in 1..total {
        // Gray code: flip the bit at the position of the lowest set bit of `step`.
        // Bit index k maps to assignment position L-1-k so that low-order
        // counter bits toggle the least significant assignment entries.
        let k = step.trailing_zeros() as usize;
        let pos = l - 1 - k;
        let old = f64::from(b[pos]);
        value += -2.0 * old * (2.0 * g[pos] + problem.f[pos]);
        b[pos] = -b[pos];
        let delta = -2.0 * old;
        for (j, gj) in g.iter_mut().enumerate() {
            if j != pos {
                *gj += problem.q(pos, j) * delta;
            }
        }
        if improves(value, &b, best, &best_b) {
            best = value;
            best_b.copy_from_slice(&b);
        }
    }
    let objective = problem.objective(&best_b);
    Ok(BiqpSolution {
        assignment: best_b,
        objective,
        solver: SolverTag::Exhaustive,
        exact: true,
        work: total,
    })
}

struct BranchState<'a> {
    problem: &'a BiqpProblem,
    /// sum_{u != v free} |Q_uv| for the free suffix starting at each depth.
    free_mass: Vec<f64>,
    /// sum_{u free} Q_uu for the free suffix starting at each depth.
    free_diag: Vec<f64>,
    budget: u64,
    expanded: u64,
    exhausted: bool,
    best: f64,
    best_b: Vec<i8>,
    b: Vec<i8>,
    /// Field from fixed bits on each position: f_u + 2 sum_{i fixed, i != u} Q_iu b_i.
    field: Vec<f64>,
}

impl BranchState<'_> {
    fn lower_bound(&self, depth: usize, fixed_value: f64) -> f64 {
        let free_linear: f64 = self.field[depth..].iter().map(|v| -v.abs()).sum();
        fixed_value + self.free_diag[depth] + free_linear - self.free_mass[depth]
    }

    /// `fixed_value` covers all terms among bits `< depth`, diagonal included.
    fn search(&mut self, depth: usize, fixed_value: f64) {
        let l = self.problem.bits;
        if self.exhausted {
            return;
        }
        if self.expanded >= self.budget {
            self.exhausted = true;
            return;
        }
        self.expanded += 1;

        if depth == l {
            let v = self.problem.objective(&self.b);
            if improves(v, &self.b, self.best, &self.best_b) {
                self.best = v;
                self.best_b.copy_from_slice(&self.b);
            }
            return;
        }

        for choice in [-1i8, 1] {
            let s = f64::from(choice);
            // Adding bit `depth` contributes its diagonal plus its coupling
            // to all already fixed bits plus its own linear term: s * field.
            let child_value = fixed_value + self.problem.q(depth, depth) + s * self.field[depth];
            self.b[depth] = choice;
            for u in (depth + 1)..l {
                self.field[u] += 2.0 * self.problem.q(depth, u) * s;
            }
            let bound = self.lower_bound(depth + 1, child_value);
            let tol = 1e-12 * (1.0 + self.best.abs());
            // Equal bounds are explored so ties resolve lexicographically.
            if bound <= self.best + tol {
                self.search(depth + 1, child_value);
            }
            for u in (depth + 1)..l {
                self.field[u] -= 2.0 * self.problem.q(depth, u) * s;
            }
            if self.exhausted {
                break;
            }
        }
    }
}

/// Depth-first branch-and-bound over bits `0..L`, seeded with a DCC incumbent
/// from the all-`+1` start. At depth `d` the bound is the exact value of the
/// fixed prefix plus `-|field_u|` for every free bit `u` (field including the
/// couplings to fixed bits) minus the absolute coupling mass among free bits.
///
/// `budget_nodes` caps expanded nodes; on exhaustion the incumbent is returned
/// with `exact = false`.
pub fn solve_branch_and_bound(problem: &BiqpProblem, budget_nodes: u64) -> BiqpSolution {
    let l = problem.bits;
    let seed = solve_dcc(problem, &vec![1; l], l.max(1) * 4);
    let mut free_mass = vec![0.0; l + 1];
    let mut free_diag = vec![0.0; l + 1];
    for d in (0..l).rev() {
        let mut add = 0.0;
        for v in (d + 1)..l {
            add += 2.0 * problem.q(d, v).abs();
        }
        free_mass[d] = free_mass[d + 1] + add;
        free_diag[d] = free_diag[d + 1] + problem.q(d, d);
    }
    let mut state = BranchState {
        problem,
        free_mass,
        free_diag,
        budget: budget_nodes.max(1),
        expanded: 0,
        exhausted: false,
        best: seed.objective,
        best_b: seed.assignment.clone(),
        b: vec![1; l],
        field: problem.f.clone(),
    };
    let root_bound = state.lower_bound(0, 0.0);
    let tol = 1e-12 * (1.0 + state.best.abs());
    if root_bound <= state.best + tol {
        state.search(0, 0.0);
    } else {
        state.expanded = 1;
    }
    let exact = !state.exhausted;
    let objective = problem.objective(&state.best_b);
    BiqpSolution {
        assignment: state.best_b,
        objective,
        solver: SolverTag::BranchAndBound,
        exact,
        work: state.expanded,
    }
}

/// Solver selection for the SDH B-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Dcc { max_sweeps: usize },
    Exhaustive,
    BranchAndBound { budget_nodes: u64 },
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Dcc { max_sweeps: 3 }
    }
}

impl Solver {
    /// `init` seeds DCC; the exact solvers ignore it.
    pub fn solve(&self, problem: &BiqpProblem, init: &[i8]) -> Result<BiqpSolution> {
        match *self {
            Solver::Dcc { max_sweeps } => Ok(solve_dcc(problem, init, max_sweeps)),
            Solver::Exhaustive => solve_exhaustive(problem),
            Solver::BranchAndBound { budget_nodes } => {
                Ok(solve_branch_and_bound(problem, budget_nodes))
            }
        }
    }
}

impl std::str::FromStr for Solver {
    type Err = Error;

    /// `dcc`, `dcc:<sweeps>`, `exhaustive`, `bnb`, `bnb:<budget>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let parse = |a: &str| {
            a.parse::<u64>()
                .map_err(|_| Error::invalid(format!("bad solver argument {a:?}")))
        };
        match (name, arg) {
            ("dcc", None) => Ok(Solver::default()),
            ("dcc", Some(a)) => Ok(Solver::Dcc {
                max_sweeps: parse(a)? as usize,
            }),
            ("exhaustive", None) => Ok(Solver::Exhaustive),
            ("bnb", None) => Ok(Solver::BranchAndBound {
                budget_nodes: u64::MAX,
            }),
            ("bnb", Some(a)) => Ok(Solver::BranchAndBound {
                budget_nodes: parse(a)?,
            }),
            _ => Err(Error::invalid(format!("unknown solver {s:?}"))),
        }
    }
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Solver::Dcc { max_sweeps } => write!(f, "dcc:{max_sweeps}"),
            Solver::Exhaustive => f.write_str("exhaustive"),
            Solver::BranchAndBound { budget_nodes } if *budget_nodes == u64::MAX => {
                f.write_str("bnb")
            }
            Solver::BranchAndBound { budget_nodes } => write!(f, "bnb:{budget_nodes}"),
        }
    }
}
