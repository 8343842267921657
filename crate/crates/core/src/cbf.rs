//! Affine-in-`u` constraint rows built from barrier fields.
//!
//! Every row has the form `a . u >= b` (or `a . u >= b - eps_i` when it carries
//! a slack index). Rows are evaluated on the stacked output vector `z` with
//! dynamics `z' = f(z) + g(z) u`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regions::BarrierField;

/// Control-affine dynamics `z' = f(z) + g(z) u`.
pub trait ControlAffine {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Drift `f(z)`.
    fn drift(&self, z: &[f64]) -> Vec<f64>;
    /// Input matrix `g(z)`, row-major `state_dim x input_dim`.
    fn input_matrix(&self, z: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    SingleIntegrator,
    /// Unicycle driven through near-identity diffeomorphism: the look-ahead
    /// point is exactly a single integrator.
    UnicycleNid,
}

/// Dynamics of the stacked output vector as seen by the QP: `f = 0`, `g = I`
/// for both supported agent kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub kinds: Vec<DynamicsKind>,
    dim: usize,
}

impl Dynamics {
    pub fn new(kinds: Vec<DynamicsKind>, dim: usize) -> Self {
        Dynamics { kinds, dim }
    }

    pub fn single_integrator(dim: usize) -> Self {
        Dynamics::new(vec![DynamicsKind::SingleIntegrator], dim)
    }
}

impl ControlAffine for Dynamics {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, _z: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    fn input_matrix(&self, _z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim * self.dim];
        for i in 0..self.dim {
            g[i * self.dim + i] = 1.0;
        }
        g
    }
}

/// `a . u >= b`, or `a . u >= b - eps[slack_index]` for soft rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineConstraint {
    pub a: Vec<f64>,
    pub b: f64,
    pub slack_index: Option<usize>,
    pub tag: String,
}

impl AffineConstraint {
    pub fn hard(a: Vec<f64>, b: f64) -> Self {
        AffineConstraint {
            a,
            b,
            slack_index: None,
            tag: String::new(),
        }
    }

    pub fn soft(a: Vec<f64>, b: f64, slack_index: usize) -> Self {
        AffineConstraint {
            slack_index: Some(slack_index),
            ..AffineConstraint::hard(a, b)
        }
    }

    pub fn tagged(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    /// `a . u - b (+ eps)`: non-negative when the row holds.
    pub fn margin(&self, u: &[f64], eps: &[f64]) -> f64 {
        let au: f64 = self.a.iter().zip(u).map(|(x, y)| x * y).sum();
        let relax = self.slack_index.map_or(0.0, |i| eps[i]);
        au - self.b + relax
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaKind {
    Linear,
    Cubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbfParams {
    pub gamma: f64,
    pub rho: f64,
    pub alpha: AlphaKind,
    pub k: f64,
    /// Weights for the bounded fields of a composite row, in field order.
    /// `None` means all ones.
    pub composite_weights: Option<Vec<f64>>,
}

impl Default for CbfParams {
    fn default() -> Self {
        CbfParams {
            gamma: 1.0,
            rho: 0.0,
            alpha: AlphaKind::Cubic,
            k: 1.0,
            composite_weights: None,
        }
    }
}

impl CbfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Input(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Input(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::Input(format!("k must be positive, got {}", self.k)));
        }
        if let Some(w) = &self.composite_weights {
            if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Input("composite weights must be positive".into()));
            }
        }
        Ok(())
    }

    /// Extended class-K function applied to a field value.
    pub fn alpha(&self, h: f64) -> f64 {
        match self.alpha {
            AlphaKind::Linear => self.k * h,
            AlphaKind::Cubic => self.k * h * h * h,
        }
    }

    /// `gamma * sign(h) * |h|^rho`, with `sign(0) = 0`.
    pub fn fcbf_term(&self, h: f64) -> f64 {
        if h == 0.0 {
            0.0
        } else {
            self.gamma * h.signum() * h.abs().powf(self.rho)
        }
    }
}

/// Lie derivatives `(grad h . f, grad h . g)`.
fn lie_derivatives(
    field: &BarrierField,
    dynamics: &dyn ControlAffine,
    z: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = dynamics.state_dim();
    let m = dynamics.input_dim();
    if field.dim() != n {
        return Err(Error::dimension(n, field.dim()));
    }
    let grad = field.grad(z)?;
    let f = dynamics.drift(z);
    let g = dynamics.input_matrix(z);
    if f.len() != n || g.len() != n * m {
        return Err(Error::dimension(n * m, g.len()));
    }
    let lf = grad.iter().zip(&f).map(|(a, b)| a * b).sum();
    let mut lg = vec![0.0; m];
    for (i, gi) in grad.iter().enumerate() {
        if *gi == 0.0 {
            continue;
        }
        for (j, out) in lg.iter_mut().enumerate() {
            *out += gi * g[i * m + j];
        }
    }
    Ok((lf, lg))
}

/// Zeroing CBF row: `grad h . g u >= -grad h . f - alpha(h)`.
pub fn zcbf_row(
    field: &BarrierField,
    dynamics: &dyn ControlAffine,
    params: &CbfParams,
    z: &[f64],
) -> Result<AffineConstraint> {
    let h = field.eval(z)?;
    let (lf, lg) = lie_derivatives(field, dynamics, z)?;
    Ok(AffineConstraint::hard(lg, -lf - params.alpha(h)).tagged("zcbf"))
}

/// Finite-time CBF row: `grad h . g u >= -grad h . f - gamma sign(h) |h|^rho`.
pub fn fcbf_row(
    field: &BarrierField,
    dynamics: &dyn ControlAffine,
    params: &CbfParams,
    z: &[f64],
) -> Result<AffineConstraint> {
    let h = field.eval(z)?;
    let (lf, lg) = lie_derivatives(field, dynamics, z)?;
    Ok(AffineConstraint::hard(lg, -lf - params.fcbf_term(h)).tagged("fcbf"))
}

/// Composite finite-time rows for reaching the intersection of `fields`.
///
/// Bounded fields share one weighted row driven by the sign of their minimum
/// value; each unbounded field gets its own finite-time row. With no bounded
/// fields this is the per-field encoding.
pub fn composite_rows(
    fields: &[BarrierField],
    dynamics: &dyn ControlAffine,
    params: &CbfParams,
    z: &[f64],
) -> Result<Vec<AffineConstraint>> {
    let (bounded, unbounded): (Vec<_>, Vec<_>) = fields.iter().partition(|f| f.is_bounded());
    let mut rows = Vec::with_capacity(unbounded.len() + 1);
    if !bounded.is_empty() {
        let weights = match &params.composite_weights {
            Some(w) if w.len() != bounded.len() => {
                return Err(Error::dimension(bounded.len(), w.len()))
            }
            Some(w) => w.clone(),
            None => vec![1.0; bounded.len()],
        };
        let sum: f64 = weights.iter().sum();
        if bounded.len() >= 2 && sum < 1.0 {
            return Err(Error::Weight { sum });
        }
        let m = dynamics.input_dim();
        let mut a = vec![0.0; m];
        let mut lf_sum = 0.0;
        let mut h_min = f64::INFINITY;
        for (field, w) in bounded.iter().zip(&weights) {
            let (lf, lg) = lie_derivatives(field, dynamics, z)?;
            for (aj, gj) in a.iter_mut().zip(&lg) {
                *aj += w * gj;
            }
            lf_sum += w * lf;
            h_min = h_min.min(field.eval(z)?);
        }
        let sign = if h_min == 0.0 { 0.0 } else { h_min.signum() };
        rows.push(AffineConstraint::hard(a, -lf_sum - params.gamma * sign).tagged("composite"));
    }
    for field in unbounded {
        rows.push(fcbf_row(field, dynamics, params, z)?);
    }
    Ok(rows)
}

/// Zeroing CBF row relaxed by slack `eps[slack_index]`.
pub fn relaxed_zcbf_row(
    field: &BarrierField,
    dynamics: &dyn ControlAffine,
    params: &CbfParams,
    z: &[f64],
    slack_index: usize,
) -> Result<AffineConstraint> {
    let mut row = zcbf_row(field, dynamics, params, z)?;
    row.slack_index = Some(slack_index);
    row.tag = "relaxed_zcbf".into();
    Ok(row)
}

/// Time bound `|h0|^(1 - rho) / (gamma (1 - rho))` for reaching `h >= 0` under
/// the finite-time row.
pub fn finite_time_bound(h0: f64, params: &CbfParams) -> f64 {
    h0.abs().powf(1.0 - params.rho) / (params.gamma * (1.0 - params.rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regions::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interval() -> BarrierField {
        BarrierField::on_slice(
            Shape::Circle {
                center: vec![0.0],
                radius: 1.0,
            },
            0,
            1,
        )
        .unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    }

    /// `z' = c + u` in one dimension.
    struct Drifting(f64);

    impl ControlAffine for Drifting {
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            1
        }
        fn drift(&self, _z: &[f64]) -> Vec<f64> {
            vec![self.0]
        }
        fn input_matrix(&self, _z: &[f64]) -> Vec<f64> {
            vec![1.0]
        }
    }

    #[test]
    fn zcbf_examples() {
        let dynamics = Dynamics::single_integrator(1);
        let params = CbfParams::default();
        let row = zcbf_row(&interval(), &dynamics, &params, &[0.5]).unwrap();
        assert_eq!(row.a, vec![-1.0]);
        assert!(close(row.b, -0.421875));
        let apex = zcbf_row(&interval(), &dynamics, &params, &[0.0]).unwrap();
        assert_eq!(apex.a, vec![0.0]);
        assert!(close(apex.b, -1.0));
    }

    #[test]
    fn zcbf_uses_drift() {
        let params = CbfParams {
            alpha: AlphaKind::Linear,
            k: 2.0,
            ..CbfParams::default()
        };
        let row = zcbf_row(&interval(), &Drifting(3.0), &params, &[0.5]).unwrap();
        // grad h = -1, L_f h = -3, alpha(h) = 1.5
        assert!(close(row.b, 3.0 - 1.5));
    }

    #[test]
    fn halfplane_row_is_constant() {
        let field = BarrierField::on_slice(
            Shape::Halfplane {
                normal: vec![0.6, 0.8],
                offset: 1.0,
            },
            0,
            2,
        )
        .unwrap();
        let dynamics = Dynamics::single_integrator(2);
        let params = CbfParams::default();
        let r1 = fcbf_row(&field, &dynamics, &params, &[5.0, 5.0]).unwrap();
        let r2 = fcbf_row(&field, &dynamics, &params, &[9.0, -2.0]).unwrap();
        assert_eq!(r1.a, r2.a);
        assert_eq!(r1.b, r2.b);
    }

    #[test]
    fn fcbf_examples() {
        let dynamics = Dynamics::single_integrator(1);
        let mut params = CbfParams::default();
        let row = fcbf_row(&interval(), &dynamics, &params, &[2.0]).unwrap();
        assert_eq!(row.a, vec![-4.0]);
        assert!(close(row.b, 1.0));
        params.rho = 0.5;
        let row = fcbf_row(&interval(), &dynamics, &params, &[2.0]).unwrap();
        assert!(close(row.b, 3f64.sqrt()));
        let boundary = fcbf_row(&interval(), &dynamics, &params, &[1.0]).unwrap();
        assert_eq!(boundary.b, 0.0);
    }

    #[test]
    fn time_bounds() {
        let mut params = CbfParams::default();
        assert!(close(finite_time_bound(-3.0, &params), 3.0));
        params.rho = 0.5;
        assert!(close(finite_time_bound(-3.0, &params), 2.0 * 3f64.sqrt()));
        assert_eq!(finite_time_bound(0.0, &params), 0.0);
    }

    fn two_agent_goals() -> Vec<BarrierField> {
        vec![
            BarrierField::on_slice(
                Shape::Circle {
                    center: vec![1.0, 1.0],
                    radius: 0.3,
                },
                0,
                4,
            )
            .unwrap(),
            BarrierField::on_slice(
                Shape::Circle {
                    center: vec![-1.0, 0.5],
                    radius: 0.3,
                },
                2,
                4,
            )
            .unwrap(),
        ]
    }

    #[test]
    fn composite_outside_goals() {
        let params = CbfParams::default();
        let rows = composite_rows(
            &two_agent_goals(),
            &Dynamics::single_integrator(4),
            &params,
            &[0.0; 4],
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].b, params.gamma);
        // weighted sum of both gradients
        assert_eq!(rows[0].a, vec![2.0, 2.0, -2.0, 1.0]);
    }

    #[test]
    fn composite_single_bounded_matches_fcbf() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let field = two_agent_goals().remove(0);
        let dynamics = Dynamics::single_integrator(4);
        let params = CbfParams {
            rho: 0.0,
            ..CbfParams::default()
        };
        for _ in 0..200 {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let rows =
                composite_rows(std::slice::from_ref(&field), &dynamics, &params, &z).unwrap();
            let single = fcbf_row(&field, &dynamics, &params, &z).unwrap();
            assert_eq!(rows.len(), 1);
            assert_eq!(rows[0].a, single.a);
            assert!(close(rows[0].b, single.b));
        }
    }

    #[test]
    fn composite_without_bounded_fields_is_per_field() {
        let field = BarrierField::on_slice(
            Shape::Circle {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
            0,
            2,
        )
        .unwrap()
        .negate();
        let plane = BarrierField::on_slice(
            Shape::Halfplane {
                normal: vec![1.0, 0.0],
                offset: 0.5,
            },
            0,
            2,
        )
        .unwrap();
        let fields = vec![field, plane];
        let dynamics = Dynamics::single_integrator(2);
        let params = CbfParams {
            rho: 0.3,
            ..CbfParams::default()
        };
        let z = [0.2, -0.4];
        let rows = composite_rows(&fields, &dynamics, &params, &z).unwrap();
        let expected: Vec<_> = fields
            .iter()
            .map(|f| fcbf_row(f, &dynamics, &params, &z).unwrap())
            .collect();
        assert_eq!(rows, expected);
    }

    #[test]
    fn composite_weight_checks() {
        let dynamics = Dynamics::single_integrator(4);
        let low = CbfParams {
            composite_weights: Some(vec![0.4, 0.5]),
            ..CbfParams::default()
        };
        assert!(matches!(
            composite_rows(&two_agent_goals(), &dynamics, &low, &[0.0; 4]),
            Err(Error::Weight { .. })
        ));
        let short = CbfParams {
            composite_weights: Some(vec![1.0]),
            ..CbfParams::default()
        };
        assert!(matches!(
            composite_rows(&two_agent_goals(), &dynamics, &short, &[0.0; 4]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn relaxed_row_wraps_zcbf() {
        let dynamics = Dynamics::single_integrator(1);
        let params = CbfParams::default();
        let plain = zcbf_row(&interval(), &dynamics, &params, &[0.5]).unwrap();
        let soft = relaxed_zcbf_row(&interval(), &dynamics, &params, &[0.5], 0).unwrap();
        assert_eq!((soft.a.clone(), soft.b), (plain.a, plain.b));
        assert_eq!(soft.slack_index, Some(0));
        let other = relaxed_zcbf_row(&interval(), &dynamics, &params, &[0.5], 1).unwrap();
        assert_eq!(other.slack_index, Some(1));
    }

    #[test]
    fn dimension_mismatch() {
        let dynamics = Dynamics::single_integrator(2);
        assert!(matches!(
            zcbf_row(&interval(), &dynamics, &CbfParams::default(), &[0.0, 0.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn param_validation() {
        assert!(CbfParams::default().validate().is_ok());
        assert!(CbfParams {
            rho: 1.0,
            ..CbfParams::default()
        }
        .validate()
        .is_err());
        assert!(CbfParams {
            gamma: 0.0,
            ..CbfParams::default()
        }
        .validate()
        .is_err());
        assert!(CbfParams {
            k: -1.0,
            ..CbfParams::default()
        }
        .validate()
        .is_err());
    }
}
