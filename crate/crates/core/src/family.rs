//! Seeded families of smooth test functions.
//!
//! A member is a product of one factor per spatial axis and one factor in
//! time, each of the form `c₀ + c₁s + c₂s² + A sin(ωs + θ)` with `c₀, c₁,
//! c₂, A, θ/π` drawn uniformly from `[−1, 1]` and `ω = π(3 + r)/2`,
//! `r ∈ [−1, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::grid::{Field, Grid, Prism};

pub const FAMILY_SEED: u64 = 0x5EED;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub poly: [f64; 3],
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl Factor {
    fn random(rng: &mut impl Rng) -> Self {
        let mut c = || rng.random_range(-1.0..=1.0);
        Factor {
            poly: [c(), c(), c()],
            amplitude: c(),
            frequency: PI * (3.0 + c()) / 2.0,
            phase: PI * c(),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let [c0, c1, c2] = self.poly;
        c0 + s * (c1 + s * c2) + self.amplitude * (self.frequency * s + self.phase).sin()
    }
}

/// Multiplier forcing a member to vanish on every lateral face except
/// `x₁ = b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Envelope {
    None,
    /// `(x₁ − a)² Π_{i≥2} cos(πx_i / (2B_i))`.
    OffGamma1 { a: f64, half_widths: Vec<f64> },
    /// `(x₁ − a)²(b − x₁)² Π_{i≥2} cos²(πx_i / (2B_i))`: value and normal
    /// derivative vanish on every lateral face.
    Lateral { a: f64, b: f64, half_widths: Vec<f64> },
}

impl Envelope {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Envelope::None => 1.0,
            Envelope::OffGamma1 { a, half_widths } => {
                let tr: f64 = x[1..].iter().zip(half_widths).map(|(v, b)| (PI * v / (2.0 * b)).cos()).product();
                (x[0] - a).powi(2) * tr
            }
            Envelope::Lateral { a, b, half_widths } => {
                let tr: f64 = x[1..].iter().zip(half_widths).map(|(v, w)| (PI * v / (2.0 * w)).cos().powi(2)).product();
                ((x[0] - a) * (b - x[0])).powi(2) * tr
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub space: Vec<Factor>,
    pub time: Factor,
    pub envelope: Envelope,
}

impl TestFunction {
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        let s: f64 = self.space.iter().zip(x).map(|(f, v)| f.eval(*v)).product();
        s * self.time.eval(t) * self.envelope.eval(x)
    }

    pub fn sample(&self, grid: &Arc<Grid>) -> Field {
        Field::from_fn(grid, |x, t| self.eval(x, t))
    }

    /// The same member multiplied by the envelope that vanishes off `Γ₁⁺`.
    pub fn vanishing_off_gamma1(&self, prism: &Prism) -> Self {
        TestFunction {
            envelope: Envelope::OffGamma1 { a: prism.a, half_widths: prism.half_widths.clone() },
            ..self.clone()
        }
    }
}

impl TestFunction {
    /// The same member multiplied by the envelope that vanishes to second
    /// order on all of `S_T`.
    pub fn vanishing_laterally(&self, prism: &Prism) -> Self {
        TestFunction {
            envelope: Envelope::Lateral { a: prism.a, b: prism.b, half_widths: prism.half_widths.clone() },
            ..self.clone()
        }
    }
}

/// `count` members in dimension `dim`, reproducible from `seed`.
pub fn random_family(dim: usize, count: usize, seed: u64) -> Vec<TestFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let space = (0..dim).map(|_| Factor::random(&mut rng)).collect();
            let time = Factor::random(&mut rng);
            TestFunction { space, time, envelope: Envelope::None }
        })
        .collect()
}

/// The default 20-member family.
pub fn default_family(dim: usize) -> Vec<TestFunction> {
    random_family(dim, 20, FAMILY_SEED)
}
