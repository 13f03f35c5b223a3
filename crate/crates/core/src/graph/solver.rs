//! Normal-equation assembly and Levenberg-Marquardt.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::factors::{Factor, FactorKind, JacobianMode};
use super::linear::SkylineMatrix;
use super::GraphValues;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct FactorGraph {
    factors: Vec<Factor>,
    pub jacobian_mode: JacobianMode,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, factor: Factor) {
        self.factors.push(factor);
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn is_anchored(&self) -> bool {
        self.factors
            .iter()
            .any(|f| matches!(f.kind(), FactorKind::Prior { .. }))
    }

    /// `Σ rᵀ Σ⁻¹ r` over all factors.
    pub fn cost(&self, values: &GraphValues) -> Result<f64> {
        let costs: Vec<f64> = self.factors.par_iter().map(|f| f.cost(values)).collect::<Result<_>>()?;
        Ok(costs.iter().sum())
    }
}

/// Gauss-Newton normal equations `H δ = −g` in skyline form.
#[derive(Clone, Debug)]
pub struct NormalSystem {
    pub hessian: SkylineMatrix,
    pub gradient: DVector<f64>,
    pub cost: f64,
}

struct Linearized {
    columns: Vec<usize>,
    jacobian: DMatrix<f64>,
    residual: DVector<f64>,
}

fn linearize_factor(f: &Factor, values: &GraphValues, mode: JacobianMode) -> Result<Linearized> {
    let keys = f.keys();
    let blocks = f.jacobian(values, mode)?;
    let width: usize = keys.iter().map(|k| k.dim()).sum();
    let mut jac = DMatrix::zeros(f.dim(), width);
    let mut columns = Vec::with_capacity(width);
    let mut c = 0;
    for (key, block) in keys.iter().zip(&blocks) {
        let off = values.offset(*key)?;
        columns.extend(off..off + key.dim());
        jac.view_mut((0, c), (f.dim(), key.dim())).copy_from(block);
        c += key.dim();
    }
    Ok(Linearized {
        columns,
        jacobian: f.whiten_matrix(&jac),
        residual: f.whiten_vector(&f.residual(values)?),
    })
}

/// Whitened normal equations at `values`.
pub fn linearize(graph: &FactorGraph, values: &GraphValues) -> Result<NormalSystem> {
    let n = values.dim();
    let parts: Vec<Linearized> = graph
        .factors
        .par_iter()
        .map(|f| linearize_factor(f, values, graph.jacobian_mode))
        .collect::<Result<_>>()?;

    let mut first: Vec<usize> = (0..n).collect();
    for p in &parts {
        let lo = *p.columns.iter().min().unwrap_or(&0);
        for &c in &p.columns {
            first[c] = first[c].min(lo);
        }
    }
    let mut hessian = SkylineMatrix::new(first);
    let mut gradient = DVector::zeros(n);
    let mut cost = 0.0;
    for p in &parts {
        let h = p.jacobian.transpose() * &p.jacobian;
        let g = p.jacobian.transpose() * &p.residual;
        for (a, &ca) in p.columns.iter().enumerate() {
            gradient[ca] += g[a];
            for (b, &cb) in p.columns.iter().enumerate() {
                if ca >= cb {
                    hessian.add(ca, cb, h[(a, b)]);
                }
            }
        }
        cost += p.residual.norm_squared();
    }
    Ok(NormalSystem {
        hessian,
        gradient,
        cost,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub lambda_initial: f64,
    pub lambda_factor: f64,
    pub lambda_max: f64,
    pub relative_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Stop once an accepted step has no component above this.
    pub step_tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            lambda_initial: 1e-4,
            lambda_factor: 10.0,
            lambda_max: 1e12,
            relative_tolerance: 1e-9,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub cost: f64,
    pub lambda: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub values: GraphValues,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: Vec<IterationStats>,
    pub converged: bool,
}

/// Batch Levenberg-Marquardt with Marquardt diagonal scaling.
pub fn optimize(graph: &FactorGraph, values: &GraphValues, config: &LmConfig) -> Result<OptimizeResult> {
    if !graph.is_anchored() {
        return Err(Error::NotAnchored);
    }
    let mut values = values.clone();
    let mut sys = linearize(graph, &values)?;
    let initial_cost = sys.cost;
    let mut cost = sys.cost;
    let mut lambda = config.lambda_initial;
    let mut iterations = Vec::new();
    let mut converged = false;

    for iteration in 0..config.max_iterations {
        if cost == 0.0 || sys.gradient.amax() < config.gradient_tolerance {
            converged = true;
            break;
        }
        let mut damped = sys.hessian.clone();
        let diag = sys.hessian.diagonal().map(|d| d.max(1e-12) * lambda);
        damped.add_diagonal(&diag);
        let step = match damped.cholesky() {
            Ok(chol) => chol.solve(&(-&sys.gradient)),
            Err(e) => {
                lambda *= config.lambda_factor;
                if lambda > config.lambda_max {
                    return Err(e);
                }
                iterations.push(IterationStats {
                    iteration,
                    cost,
                    lambda,
                    accepted: false,
                });
                continue;
            }
        };
        let candidate = values.retract(&step)?;
        let new_cost = graph.cost(&candidate).unwrap_or(f64::INFINITY);
        if new_cost <= cost {
            let decrease = (cost - new_cost) / cost;
            values = candidate;
            cost = new_cost;
            lambda = (lambda / config.lambda_factor).max(1e-15);
            iterations.push(IterationStats {
                iteration,
                cost,
                lambda,
                accepted: true,
            });
            if decrease < config.relative_tolerance || step.amax() < config.step_tolerance {
                converged = true;
                break;
            }
            sys = linearize(graph, &values)?;
            cost = sys.cost;
        } else {
            lambda *= config.lambda_factor;
            iterations.push(IterationStats {
                iteration,
                cost,
                lambda,
                accepted: false,
            });
            if lambda > config.lambda_max {
                converged = true;
                break;
            }
        }
    }
    Ok(OptimizeResult {
        values,
        initial_cost,
        final_cost: cost,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::factors::{PriorMeasurement, RelativePoseMeasurement};
    use crate::graph::NavState;
    use crate::manifold::{exp_so3, Pose, Rotation};
    use nalgebra::Vector3;

    fn iso(n: usize, s: f64) -> DMatrix<f64> {
        DMatrix::identity(n, n) * s * s
    }

    #[test]
    fn prior_only_linearization() {
        let mut v = GraphValues::new();
        let s = NavState::new(Rotation::about_x(0.3), Vector3::new(1.0, 2.0, 3.0), Vector3::zeros());
        v.add_node(0.0, s.clone()).unwrap();
        let mut g = FactorGraph::new();
        g.add(Factor::prior(0, PriorMeasurement::from_state(&s), iso(15, 1.0)).unwrap());
        let sys = linearize(&g, &v).unwrap();
        assert_eq!(sys.cost, 0.0);
        assert_eq!(sys.gradient.len(), 15);
        for i in 0..15 {
            for j in 0..15 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((sys.hessian.get(i, j) - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prior_only_converges_to_mean() {
        let target = NavState::new(
            exp_so3(&Vector3::new(0.3, -0.2, 1.0)),
            Vector3::new(4.0, -1.0, 0.5),
            Vector3::new(0.1, 0.2, 0.3),
        );
        let mut v = GraphValues::new();
        v.add_node(0.0, NavState::identity()).unwrap();
        let mut g = FactorGraph::new();
        g.add(Factor::prior(0, PriorMeasurement::from_state(&target), iso(15, 0.1)).unwrap());
        let out = optimize(&g, &v, &LmConfig::default()).unwrap();
        let s = out.values.state(0).unwrap();
        assert!((s.rotation.matrix() - target.rotation.matrix()).norm() < 1e-9);
        assert!((s.position - target.position).norm() < 1e-9);
        assert!(out.final_cost <= out.initial_cost);
    }

    #[test]
    fn unanchored_graph_rejected() {
        let mut v = GraphValues::new();
        v.add_node(0.0, NavState::identity()).unwrap();
        v.add_node(1.0, NavState::identity()).unwrap();
        let mut g = FactorGraph::new();
        g.add(Factor::bias_random_walk(0, 1, iso(6, 1.0)).unwrap());
        assert!(matches!(
            optimize(&g, &v, &LmConfig::default()),
            Err(Error::NotAnchored)
        ));
    }

    #[test]
    fn pose_chain_costs_are_consistent() {
        let mut v = GraphValues::new();
        let mut g = FactorGraph::new();
        let step = Pose::new(exp_so3(&Vector3::new(0.0, 0.0, 0.2)), Vector3::new(1.0, 0.0, 0.0));
        v.add_node(0.0, NavState::identity()).unwrap();
        g.add(Factor::prior(0, PriorMeasurement::from_state(&NavState::identity()), iso(15, 0.01)).unwrap());
        for k in 1..6 {
            v.add_node(
                k as f64,
                NavState::new(
                    exp_so3(&Vector3::new(0.1, 0.0, 0.1 * k as f64)),
                    Vector3::new(k as f64 * 0.8, 0.3, 0.0),
                    Vector3::zeros(),
                ),
            )
            .unwrap();
            g.add(
                Factor::relative_pose(RelativePoseMeasurement {
                    i: k - 1,
                    j: k,
                    pose: step,
                    covariance: iso(6, 0.05),
                })
                .unwrap(),
            );
            g.add(Factor::bias_random_walk(k - 1, k, iso(6, 0.1)).unwrap());
        }
        // velocities are otherwise unconstrained
        for k in 1..6 {
            let mut m = PriorMeasurement::from_state(&NavState::identity());
            m.rotation = v.state(k).unwrap().rotation;
            m.position = v.state(k).unwrap().position;
            let mut cov = iso(15, 10.0);
            for d in 6..9 {
                cov[(d, d)] = 1.0;
            }
            g.add(Factor::prior(k, m, cov).unwrap());
        }
        let sys = linearize(&g, &v).unwrap();
        let summed: f64 = g.factors().iter().map(|f| f.cost(&v).unwrap()).sum();
        assert!((sys.cost - summed).abs() < 1e-12 * summed.max(1.0));
        let out = optimize(&g, &v, &LmConfig::default()).unwrap();
        assert!(out.final_cost <= out.initial_cost);
        let accepted: Vec<f64> = out.iterations.iter().filter(|s| s.accepted).map(|s| s.cost).collect();
        assert!(accepted.windows(2).all(|w| w[1] <= w[0]));
    }
}
