//! Conditional Gaussian likelihood of quantized latents.
//!
//! A latent value coded around predicted mean mu with scale sigma costs
//! -log2 of the probability mass the Gaussian puts on the unit box around
//! it. Scales are floored at 1e-4 and box masses at 2^-16; the same floors
//! apply when building the coder's frequency tables, so training rate and
//! coded rate agree.

use super::factorized::MIN_LIKELIHOOD;
use crate::tensor::{Graph, Scalar, Var};

/// Smallest scale the model may predict.
pub const SIGMA_MIN: f64 = 1e-4;

/// Maps raw fusion outputs to valid scales: max(softplus(raw), SIGMA_MIN).
pub fn sigma_from_raw<S: Scalar>(g: &mut Graph<S>, raw: Var) -> Var {
    let sp = g.softplus(raw);
    g.max_scalar(sp, SIGMA_MIN)
}

/// Box probability of each element of `values` under N(mu, sigma^2); all
/// three tensors share a shape (sigma already floored).
pub fn gaussian_box_prob_var<S: Scalar>(
    g: &mut Graph<S>,
    values: Var,
    mu: Var,
    sigma: Var,
) -> Var {
    let centered = g.sub(values, mu);
    let hi = g.add_scalar(centered, 0.5);
    let lo = g.add_scalar(centered, -0.5);
    let zhi = g.div(hi, sigma);
    let zlo = g.div(lo, sigma);
    let chi = g.normal_cdf(zhi);
    let clo = g.normal_cdf(zlo);
    let p = g.sub(chi, clo);
    g.max_scalar(p, MIN_LIKELIHOOD)
}

/// Total bits to code `values` with element-wise conditional Gaussians.
pub fn gaussian_bits<S: Scalar>(g: &mut Graph<S>, values: Var, mu: Var, sigma: Var) -> Var {
    let p = gaussian_box_prob_var(g, values, mu, sigma);
    let lnp = g.ln(p);
    let total = g.sum(lnp);
    g.mul_scalar(total, -1.0 / std::f64::consts::LN_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::gaussian_box_prob;
    use crate::tensor::Tensor;

    #[test]
    fn graph_box_prob_matches_scalar_oracle() {
        let mut g: Graph<f64> = Graph::new();
        let vals = [0.0, 1.0, -2.0, 0.3];
        let mus = [0.0, 0.5, -1.0, 0.0];
        let sigmas = [1.0, 2.0, 0.5, 1e-4];
        let v = g.input(Tensor::from_vec(vec![4], vals.to_vec()));
        let m = g.input(Tensor::from_vec(vec![4], mus.to_vec()));
        let s = g.input(Tensor::from_vec(vec![4], sigmas.to_vec()));
        let p = gaussian_box_prob_var(&mut g, v, m, s);
        for i in 0..4 {
            let expect = gaussian_box_prob(vals[i], mus[i], sigmas[i]).max(MIN_LIKELIHOOD);
            let got = g.value(p).data()[i];
            assert!((got - expect).abs() < 1e-12, "i={i}: {got} vs {expect}");
        }
    }

    #[test]
    fn unit_box_mass_at_center_is_frozen_value() {
        let mut g: Graph<f64> = Graph::new();
        let v = g.input(Tensor::scalar(0.0));
        let m = g.input(Tensor::scalar(0.0));
        let s = g.input(Tensor::scalar(1.0));
        let p = gaussian_box_prob_var(&mut g, v, m, s);
        let got = g.value(p).data()[0];
        assert!((got - 0.382_924_922_548_026_24).abs() < 1e-14, "got {got}");
    }

    #[test]
    fn sigma_floor_engages() {
        let mut g: Graph<f64> = Graph::new();
        let raw = g.input(Tensor::from_vec(vec![2], vec![-40.0, 2.0]));
        let s = sigma_from_raw(&mut g, raw);
        let d = g.value(s).data();
        assert_eq!(d[0], SIGMA_MIN);
        let expect = (1.0 + 2.0f64.exp()).ln();
        assert!((d[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn far_tail_costs_exactly_the_rate_floor() {
        let mut g: Graph<f64> = Graph::new();
        let v = g.input(Tensor::scalar(100.0));
        let m = g.input(Tensor::scalar(0.0));
        let s = g.input(Tensor::scalar(0.5));
        let bits = gaussian_bits(&mut g, v, m, s);
        assert_eq!(g.value(bits).data()[0], 16.0);
    }
}
