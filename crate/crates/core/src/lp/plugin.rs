//! Pluggable LP back ends.

use crate::scalar::Scalar;

use super::{solve, LinearProgram, LpError, LpOptions, LpResult, LpStatus};

pub const EMBEDDED_ID: &str = "embedded";
pub const MINILP_ID: &str = "minilp";

pub trait LpPlugin<T: Scalar>: Send + Sync {
    fn id(&self) -> &str;
    fn solve(&self, lp: &LinearProgram<T>, opts: &LpOptions<T>) -> Result<LpResult<T>, LpError>;
}

struct Embedded;

impl<T: Scalar> LpPlugin<T> for Embedded {
    fn id(&self) -> &str {
        EMBEDDED_ID
    }

    fn solve(&self, lp: &LinearProgram<T>, opts: &LpOptions<T>) -> Result<LpResult<T>, LpError> {
        solve(lp, opts)
    }
}

/// Back end built on the `minilp` crate (dual simplex, `f64` internally).
/// It does not report multipliers.
pub struct MinilpPlugin;

impl<T: Scalar> LpPlugin<T> for MinilpPlugin {
    fn id(&self) -> &str {
        MINILP_ID
    }

    fn solve(&self, lp: &LinearProgram<T>, _opts: &LpOptions<T>) -> Result<LpResult<T>, LpError> {
        lp.validate()?;
        let n = lp.num_vars();
        if n == 0 {
            return solve(lp, _opts);
        }
        let mut p = minilp::Problem::new(minilp::OptimizationDirection::Minimize);
        let vars: Vec<minilp::Variable> = (0..n)
            .map(|j| {
                let (l, u) = lp.bounds(j);
                p.add_var(lp.objective()[j].as_f64(), (l.as_f64(), u.as_f64()))
            })
            .collect();
        let to_expr = |row: &super::SparseRow<T>| {
            let mut e = minilp::LinearExpr::empty();
            for &(j, v) in &row.entries {
                e.add(vars[j], v.as_f64());
            }
            e
        };
        for c in lp.inequalities() {
            p.add_constraint(to_expr(&c.row), minilp::ComparisonOp::Le, c.rhs.as_f64());
        }
        for c in lp.equalities() {
            p.add_constraint(to_expr(&c.row), minilp::ComparisonOp::Eq, c.rhs.as_f64());
        }
        match p.solve() {
            Ok(sol) => {
                let x: Vec<T> = vars.iter().map(|&v| T::of(sol[v])).collect();
                Ok(LpResult {
                    status: LpStatus::Optimal,
                    objective_value: lp.objective_value(&x),
                    x,
                    iterations: 0,
                    duals: None,
                })
            }
            Err(e) => {
                let status = match e {
                    minilp::Error::Infeasible => LpStatus::Infeasible,
                    minilp::Error::Unbounded => LpStatus::Unbounded,
                };
                Ok(LpResult {
                    status,
                    x: vec![T::zero(); n],
                    objective_value: T::zero(),
                    iterations: 0,
                    duals: None,
                })
            }
        }
    }
}

/// Named solver back ends. The embedded simplex is always registered.
pub struct SolverRegistry<T: Scalar> {
    plugins: Vec<Box<dyn LpPlugin<T>>>,
}

impl<T: Scalar> Default for SolverRegistry<T> {
    fn default() -> Self {
        Self::with_builtin()
    }
}

impl<T: Scalar> SolverRegistry<T> {
    pub fn empty() -> Self {
        Self { plugins: Vec::new() }
    }

    /// Registry holding the embedded solver and the `minilp` back end.
    pub fn with_builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Embedded));
        r.register(Box::new(MinilpPlugin));
        r
    }

    /// Registers `plugin`, replacing any plugin with the same id.
    pub fn register(&mut self, plugin: Box<dyn LpPlugin<T>>) {
        self.plugins.retain(|p| p.id() != plugin.id());
        self.plugins.push(plugin);
    }

    pub fn get(&self, id: &str) -> Option<&dyn LpPlugin<T>> {
        self.plugins.iter().find(|p| p.id() == id).map(|b| b.as_ref())
    }

    pub fn ids(&self) -> Vec<String> {
        self.plugins.iter().map(|p| p.id().to_string()).collect()
    }
}

pub fn solve_external<T: Scalar>(
    registry: &SolverRegistry<T>,
    lp: &LinearProgram<T>,
    solver_id: &str,
    opts: &LpOptions<T>,
) -> Result<LpResult<T>, LpError> {
    let plugin = registry
        .get(solver_id)
        .ok_or_else(|| LpError::PluginUnavailable(solver_id.to_string()))?;
    plugin.solve(lp, opts)
}
