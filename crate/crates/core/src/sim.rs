//! Linear Gaussian structural-equation simulator over (A, C, M, L, Y):
//!
//! ```text
//! A ~ Bernoulli(p_A)          C = eps_C
//! M = th_A_M*A + th_C_M*C + th_M + eps_M
//! L = th_A_L*A + th_C_L*C + th_M_L*M + th_L + eps_L
//! Y = th_A_Y*A + th_C_Y*C + th_M_Y*M + th_L_Y*L + th_Y + eps_Y
//! ```
//!
//! with independent zero-mean Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ColumnSpec, Dataset, Schema, Value, VariableSpec};
use crate::graph::{CausalGraph, Edge, NodeId};

/// The twelve structural coefficients of the linear model, by edge plus one
/// intercept per equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearTheta {
    pub a_m: f64,
    pub c_m: f64,
    pub m_intercept: f64,
    pub a_l: f64,
    pub c_l: f64,
    pub m_l: f64,
    pub l_intercept: f64,
    pub a_y: f64,
    pub c_y: f64,
    pub m_y: f64,
    pub l_y: f64,
    pub y_intercept: f64,
}

/// Identifier for one coefficient slot of [`LinearTheta`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ThetaSlot {
    AM,
    CM,
    MIntercept,
    AL,
    CL,
    ML,
    LIntercept,
    AY,
    CY,
    MY,
    LY,
    YIntercept,
}

impl ThetaSlot {
    pub const ALL: [ThetaSlot; 12] = [
        ThetaSlot::AM,
        ThetaSlot::CM,
        ThetaSlot::MIntercept,
        ThetaSlot::AL,
        ThetaSlot::CL,
        ThetaSlot::ML,
        ThetaSlot::LIntercept,
        ThetaSlot::AY,
        ThetaSlot::CY,
        ThetaSlot::MY,
        ThetaSlot::LY,
        ThetaSlot::YIntercept,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ThetaSlot::AM => "theta_A_M",
            ThetaSlot::CM => "theta_C_M",
            ThetaSlot::MIntercept => "theta_M",
            ThetaSlot::AL => "theta_A_L",
            ThetaSlot::CL => "theta_C_L",
            ThetaSlot::ML => "theta_M_L",
            ThetaSlot::LIntercept => "theta_L",
            ThetaSlot::AY => "theta_A_Y",
            ThetaSlot::CY => "theta_C_Y",
            ThetaSlot::MY => "theta_M_Y",
            ThetaSlot::LY => "theta_L_Y",
            ThetaSlot::YIntercept => "theta_Y",
        }
    }
}

impl std::fmt::Display for ThetaSlot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl LinearTheta {
    pub fn get(&self, slot: ThetaSlot) -> f64 {
        match slot {
            ThetaSlot::AM => self.a_m,
            ThetaSlot::CM => self.c_m,
            ThetaSlot::MIntercept => self.m_intercept,
            ThetaSlot::AL => self.a_l,
            ThetaSlot::CL => self.c_l,
            ThetaSlot::ML => self.m_l,
            ThetaSlot::LIntercept => self.l_intercept,
            ThetaSlot::AY => self.a_y,
            ThetaSlot::CY => self.c_y,
            ThetaSlot::MY => self.m_y,
            ThetaSlot::LY => self.l_y,
            ThetaSlot::YIntercept => self.y_intercept,
        }
    }

    pub fn set(&mut self, slot: ThetaSlot, value: f64) {
        match slot {
            ThetaSlot::AM => self.a_m = value,
            ThetaSlot::CM => self.c_m = value,
            ThetaSlot::MIntercept => self.m_intercept = value,
            ThetaSlot::AL => self.a_l = value,
            ThetaSlot::CL => self.c_l = value,
            ThetaSlot::ML => self.m_l = value,
            ThetaSlot::LIntercept => self.l_intercept = value,
            ThetaSlot::AY => self.a_y = value,
            ThetaSlot::CY => self.c_y = value,
            ThetaSlot::MY => self.m_y = value,
            ThetaSlot::LY => self.l_y = value,
            ThetaSlot::YIntercept => self.y_intercept = value,
        }
    }
}

/// Per-equation noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub c: f64,
    pub m: f64,
    pub l: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearScmParams {
    pub p_a: f64,
    pub theta: LinearTheta,
    pub sigma: NoiseScales,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SimError {
    #[error("p_a = {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("noise scale sigma_{0} = {1} is negative")]
    NegativeSigma(&'static str, f64),
    #[error("need n >= 1 rows, got {0}")]
    EmptySample(usize),
}

impl LinearScmParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.p_a) {
            return Err(SimError::BadProbability(self.p_a));
        }
        for (name, sigma) in [
            ("C", self.sigma.c),
            ("M", self.sigma.m),
            ("L", self.sigma.l),
            ("Y", self.sigma.y),
        ] {
            if sigma < 0.0 || !sigma.is_finite() {
                return Err(SimError::NegativeSigma(name, sigma));
            }
        }
        Ok(())
    }
}

/// Schema for the simulated columns: binary A and continuous C, M, L, Y,
/// with Y as the target.
pub fn linear_scm_schema() -> Schema {
    let cont = |name: &str| VariableSpec {
        node: NodeId::from(name),
        columns: vec![ColumnSpec { name: name.into(), kind: ColumnKind::Continuous }],
    };
    Schema::new(vec![
        VariableSpec {
            node: NodeId::from("A"),
            columns: vec![ColumnSpec { name: "A".into(), kind: ColumnKind::Binary }],
        },
        cont("C"),
        cont("M"),
        cont("L"),
        cont("Y"),
    ])
    .with_target("Y")
}

/// The causal graph matching the simulator's structural equations, with the
/// flagged edge set used throughout the audit fixtures: A->M, M->L, A->Y,
/// M->Y, L->Y.
pub fn linear_scm_graph() -> CausalGraph {
    CausalGraph::new(
        ["A", "C", "M", "L", "Y"],
        vec![
            Edge::new("A", "M"),
            Edge::new("C", "M"),
            Edge::new("A", "L"),
            Edge::new("C", "L"),
            Edge::new("M", "L"),
            Edge::new("A", "Y"),
            Edge::new("C", "Y"),
            Edge::new("M", "Y"),
            Edge::new("L", "Y"),
        ],
        vec![
            Edge::new("A", "M"),
            Edge::new("M", "L"),
            Edge::new("A", "Y"),
            Edge::new("M", "Y"),
            Edge::new("L", "Y"),
        ],
    )
}

/// Draws `n` rows from the structural equations. Per-row draw order is fixed
/// (A, eps_C, eps_M, eps_L, eps_Y), so output is reproducible under `seed`.
pub fn simulate_linear_scm(params: &LinearScmParams, n: usize, seed: u64) -> Result<Dataset, SimError> {
    params.validate()?;
    if n == 0 {
        return Err(SimError::EmptySample(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let th = &params.theta;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let draw = |rng: &mut ChaCha8Rng, sigma: f64| -> f64 {
        if sigma == 0.0 {
            0.0
        } else {
            sigma * normal.sample(rng)
        }
    };

    let mut col_a = Vec::with_capacity(n);
    let mut col_c = Vec::with_capacity(n);
    let mut col_m = Vec::with_capacity(n);
    let mut col_l = Vec::with_capacity(n);
    let mut col_y = Vec::with_capacity(n);
    for _ in 0..n {
        let a = if rng.random::<f64>() < params.p_a { 1.0 } else { 0.0 };
        let c = draw(&mut rng, params.sigma.c);
        let m = th.a_m * a + th.c_m * c + th.m_intercept + draw(&mut rng, params.sigma.m);
        let l = th.a_l * a + th.c_l * c + th.m_l * m + th.l_intercept + draw(&mut rng, params.sigma.l);
        let y = th.a_y * a + th.c_y * c + th.m_y * m + th.l_y * l + th.y_intercept
            + draw(&mut rng, params.sigma.y);
        col_a.push(Value::Bool(a > 0.5));
        col_c.push(Value::Real(c));
        col_m.push(Value::Real(m));
        col_l.push(Value::Real(l));
        col_y.push(Value::Real(y));
    }

    Ok(Dataset::new(linear_scm_schema(), vec![col_a, col_c, col_m, col_l, col_y])
        .expect("simulated columns match the schema"))
}

/// The fixture parameters used across the audit test suites. A has 40%
/// marginal representation of the disadvantaged group (A = 0).
pub fn fixture_params() -> LinearScmParams {
    LinearScmParams {
        p_a: 0.4,
        theta: LinearTheta {
            a_m: 0.8,
            c_m: 0.6,
            m_intercept: 0.1,
            a_l: 0.5,
            c_l: 0.5,
            m_l: 0.7,
            l_intercept: 0.1,
            a_y: 0.4,
            c_y: 0.5,
            m_y: 0.6,
            l_y: 0.3,
            y_intercept: 0.1,
        },
        sigma: NoiseScales { c: 0.3, m: 0.3, l: 0.3, y: 0.3 },
    }
}
