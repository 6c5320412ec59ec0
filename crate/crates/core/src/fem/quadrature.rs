//! Positive-weight quadrature on the reference triangle
//! `{(0,0), (1,0), (0,1)}` and on the unit interval.
//!
//! Triangle rules are collapsed (Duffy) tensor products of Gauss–Legendre
//! rules, except the one-point centroid rule used for exactness ≤ 1.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

use super::FemError;

/// Largest exactness degree handed out by [`triangle_rule`] and [`edge_rule`].
pub const MAX_EXACTNESS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRule {
    /// Points in `[0, 1]`.
    pub points: Vec<f64>,
    /// Weights summing to 1.
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss–Legendre nodes and weights mapped to `[0, 1]`.
fn gauss_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = GaussLegendre::new(NonZeroUsize::new(n).expect("n ≥ 1"));
    let mut pairs: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

pub fn edge_rule(exactness: usize) -> Result<EdgeRule, FemError> {
    if exactness > MAX_EXACTNESS {
        return Err(FemError::QuadratureTooHigh {
            requested: exactness,
            max: MAX_EXACTNESS,
        });
    }
    let n = exactness / 2 + 1;
    let (points, weights) = gauss_unit(n);
    Ok(EdgeRule {
        points,
        weights,
        exactness,
    })
}

pub fn triangle_rule(exactness: usize) -> Result<QuadratureRule, FemError> {
    if exactness > MAX_EXACTNESS {
        return Err(FemError::QuadratureTooHigh {
            requested: exactness,
            max: MAX_EXACTNESS,
        });
    }
    if exactness <= 1 {
        return Ok(QuadratureRule {
            points: vec![[1.0 / 3.0, 1.0 / 3.0]],
            weights: vec![0.5],
            exactness,
        });
    }
    // x = ξ(1-η), y = η with Jacobian (1-η): degree d in (x,y) becomes
    // degree ≤ d in ξ and ≤ d+1 in η.
    let n = (exactness + 2).div_ceil(2);
    let (nodes, w) = gauss_unit(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (&eta, &we) in nodes.iter().zip(&w) {
        for (&xi, &wx) in nodes.iter().zip(&w) {
            points.push([xi * (1.0 - eta), eta]);
            weights.push(wx * we * (1.0 - eta));
        }
    }
    Ok(QuadratureRule {
        points,
        weights,
        exactness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn centroid_rule() {
        let r = triangle_rule(1).unwrap();
        assert_eq!(r.points, vec![[1.0 / 3.0, 1.0 / 3.0]]);
        assert_eq!(r.weights, vec![0.5]);
    }

    #[test]
    fn exact_for_monomials_up_to_declared_degree() {
        for d in 0..=14 {
            let r = triangle_rule(d).unwrap();
            assert!(r.weights.iter().all(|&w| w > 0.0));
            assert!((r.weights.iter().sum::<f64>() - 0.5).abs() < 1e-15);
            for a in 0..=d as u32 {
                for b in 0..=(d as u32 - a) {
                    let q: f64 = r
                        .points
                        .iter()
                        .zip(&r.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum();
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    assert!((q - exact).abs() < 1e-15, "d={d} a={a} b={b}");
                }
            }
        }
        let r = triangle_rule(4).unwrap();
        let ix: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0]).sum();
        assert!((ix - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn edge_rules_are_exact() {
        for d in 0..=15 {
            let r = edge_rule(d).unwrap();
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            for a in 0..=d as i32 {
                let q: f64 = r.points.iter().zip(&r.weights).map(|(s, w)| w * s.powi(a)).sum();
                assert!((q - 1.0 / (a as f64 + 1.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn too_high_is_an_error() {
        assert!(matches!(
            triangle_rule(MAX_EXACTNESS + 1),
            Err(FemError::QuadratureTooHigh { .. })
        ));
        assert!(edge_rule(MAX_EXACTNESS + 1).is_err());
    }
}
