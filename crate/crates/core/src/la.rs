//! Small dense linear algebra helpers for ambient-space vectors (n <= 4).

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn scale(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Wrap an angle difference into [-pi, pi).
pub fn wrap_angle(mut d: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    d = d.rem_euclid(TAU);
    if d >= PI {
        d -= TAU;
    }
    d
}
