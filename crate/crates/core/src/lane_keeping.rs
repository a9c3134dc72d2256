//! Shared-control lane keeping: a human driver and an automation steer the
//! same vehicle. States are lateral error, heading error and road-wheel
//! angle; the steering angle is fixed algebraically by the summed torques,
//! `δ = (u_h + u_a)/K_s`.

use crate::error::Result;
use crate::feedback::FeedbackProfile;
use crate::game::{CostParameters, DescriptorGame};
use crate::inverse::ThetaLayout;
use crate::linalg::{mat, Mat, SymMat, Vector};

pub const VX: f64 = 20.0;
pub const WHEELBASE: f64 = 2.7;
pub const STEERING_STIFFNESS: f64 = 10.0;

pub fn e() -> Mat {
    Mat::from_diagonal(&Vector::from_vec(vec![1.0, 1.0, 0.0]))
}

pub fn a() -> Mat {
    mat(
        3,
        3,
        &[
            0.0,
            VX,
            0.0,
            0.0,
            0.0,
            VX / WHEELBASE,
            0.0,
            0.0,
            -STEERING_STIFFNESS,
        ],
    )
}

pub fn b() -> Vec<Mat> {
    vec![mat(3, 1, &[0.0, 0.0, 1.0]); 2]
}

pub fn game() -> Result<DescriptorGame> {
    DescriptorGame::new(e(), a(), b())
}

/// The same dynamics with the steering row treated as a differential equation.
pub fn ode_game() -> Result<DescriptorGame> {
    DescriptorGame::new(Mat::identity(3, 3), a(), b())
}

fn scalar(x: f64) -> SymMat {
    SymMat::from_diagonal(&[x])
}

pub fn ground_truth() -> CostParameters {
    CostParameters::new(
        vec![
            SymMat::from_diagonal(&[1.0, 0.5, 0.1]),
            SymMat::from_diagonal(&[3.0, 2.0, 0.1]),
        ],
        vec![
            vec![scalar(2.0), scalar(0.5)],
            vec![scalar(1.0), scalar(0.5)],
        ],
    )
}

/// Reference identified weights (rounded to three decimals).
pub fn identified() -> CostParameters {
    let sym = |m: &[f64]| SymMat::symmetrize(&mat(3, 3, m));
    CostParameters::new(
        vec![
            sym(&[
                0.106, 0.017, 0.050, 0.017, -0.328, 1.810, 0.050, 1.810, -0.621,
            ]),
            sym(&[
                1.378, 1.764, -0.499, 1.764, 0.985, 0.035, -0.499, 0.035, -0.752,
            ]),
        ],
        vec![
            vec![scalar(0.564), scalar(0.152)],
            vec![scalar(-0.709), scalar(0.231)],
        ],
    )
}

/// Reference weights obtained by ignoring the algebraic constraint, as
/// `θᵢ = [vech(Qᵢ); Rᵢ₁; Rᵢ₂]`.
pub fn misspecified_theta() -> [Vector; 2] {
    [
        Vector::from_vec(vec![
            0.1161, 0.2721, -1.3731, 0.6642, 1.0042, 1.0853, 0.4184, -0.5001,
        ]),
        Vector::from_vec(vec![
            0.0119, 0.2462, -0.1107, -0.7575, 0.0731, -3.1384, -1.6787, 0.0508,
        ]),
    ]
}

pub fn misspecified() -> CostParameters {
    ThetaLayout::new(3, vec![1, 1])
        .costs_from(&misspecified_theta())
        .expect("fixed-length parameter vectors")
}

/// Reference least-squares feedback profile.
pub fn printed_feedback() -> FeedbackProfile {
    FeedbackProfile::new(vec![
        mat(1, 3, &[-0.0046, -0.3971, 0.7987]),
        mat(1, 3, &[-0.4779, -1.8117, 3.8449]),
    ])
}

/// Reference diagonal-constrained weights.
pub fn diagonal() -> CostParameters {
    CostParameters::new(
        vec![
            SymMat::from_diagonal(&[0.308, 0.801, -0.991]),
            SymMat::from_diagonal(&[0.152, -1.355, 0.801]),
        ],
        vec![
            vec![scalar(0.967), scalar(0.237)],
            vec![scalar(0.340), scalar(0.007)],
        ],
    )
}
