//! Learned per-channel static density for latents without conditioning.
//!
//! Each channel owns a small monotone network whose output is a CDF over
//! the reals: three affine stages with softplus-positive weights, the
//! first two followed by u + tanh(a) * tanh(u) gates and the last by a
//! sigmoid. Positivity plus gate slope 1 + tanh(a)(1 - tanh^2 u) > 0 keep
//! the CDF strictly increasing, so box probabilities are always positive.
//! The probability of integer symbol k is cdf(k + 1/2) - cdf(k - 1/2).

use super::nn::ParamBindings;
use crate::tensor::{Graph, ParamStore, Scalar, Var};

/// Hidden units per stage.
const FILTERS: usize = 3;

/// Rate floor: no symbol is ever charged more than 16 bits.
pub const MIN_LIKELIHOOD: f64 = 1.0 / 65536.0;

/// softplus(x) = 1 at this x, so stages start as identity-scale maps.
const SOFTPLUS_INV_ONE: f32 = 0.541_324_85;

pub fn register_factorized(store: &mut ParamStore, prefix: &str, channels: usize, seed: u64) {
    let c = channels;
    let r = FILTERS;
    store.register_full(&format!("{prefix}.h1"), vec![c, r, 1], SOFTPLUS_INV_ONE);
    store.register_uniform(&format!("{prefix}.b1"), vec![c, r, 1], 0.5, seed);
    store.register_zeros(&format!("{prefix}.a1"), vec![c, r, 1]);
    store.register_full(&format!("{prefix}.h2"), vec![c, r, r], SOFTPLUS_INV_ONE);
    store.register_uniform(&format!("{prefix}.b2"), vec![c, r, 1], 0.5, seed);
    store.register_zeros(&format!("{prefix}.a2"), vec![c, r, 1]);
    store.register_full(&format!("{prefix}.h3"), vec![c, 1, r], SOFTPLUS_INV_ONE);
    store.register_uniform(&format!("{prefix}.b3"), vec![c, 1, 1], 0.5, seed);
}

pub struct FactorizedDensity {
    h1: Var,
    b1: Var,
    a1: Var,
    h2: Var,
    b2: Var,
    a2: Var,
    h3: Var,
    b3: Var,
}

impl FactorizedDensity {
    pub fn bind<S: Scalar>(
        b: &mut ParamBindings,
        g: &mut Graph<S>,
        store: &ParamStore,
        prefix: &str,
    ) -> Self {
        FactorizedDensity {
            h1: b.bind(g, store, &format!("{prefix}.h1")),
            b1: b.bind(g, store, &format!("{prefix}.b1")),
            a1: b.bind(g, store, &format!("{prefix}.a1")),
            h2: b.bind(g, store, &format!("{prefix}.h2")),
            b2: b.bind(g, store, &format!("{prefix}.b2")),
            a2: b.bind(g, store, &format!("{prefix}.a2")),
            h3: b.bind(g, store, &format!("{prefix}.h3")),
            b3: b.bind(g, store, &format!("{prefix}.b3")),
        }
    }

    /// Evaluates all channels' CDFs at a (channels, 1, M) batch of points.
    pub fn cdf<S: Scalar>(&self, g: &mut Graph<S>, u: Var) -> Var {
        let w1 = g.softplus(self.h1);
        let x = g.bmm(w1, u);
        let x = g.add(x, self.b1);
        let ta = g.tanh(self.a1);
        let tx = g.tanh(x);
        let gate = g.mul(ta, tx);
        let x = g.add(x, gate);

        let w2 = g.softplus(self.h2);
        let x = g.bmm(w2, x);
        let x = g.add(x, self.b2);
        let ta = g.tanh(self.a2);
        let tx = g.tanh(x);
        let gate = g.mul(ta, tx);
        let x = g.add(x, gate);

        let w3 = g.softplus(self.h3);
        let x = g.bmm(w3, x);
        let x = g.add(x, self.b3);
        g.sigmoid(x)
    }

    /// Box probability of each value in a (channels, 1, M) tensor, floored
    /// at the rate limit.
    pub fn box_prob<S: Scalar>(&self, g: &mut Graph<S>, values: Var) -> Var {
        let upper = g.add_scalar(values, 0.5);
        let lower = g.add_scalar(values, -0.5);
        let hi = self.cdf(g, upper);
        let lo = self.cdf(g, lower);
        let p = g.sub(hi, lo);
        g.max_scalar(p, MIN_LIKELIHOOD)
    }

    /// Total information content in bits of a (channels, 1, M) batch.
    pub fn bits<S: Scalar>(&self, g: &mut Graph<S>, values: Var) -> Var {
        let p = self.box_prob(g, values);
        let lnp = g.ln(p);
        let total = g.sum(lnp);
        g.mul_scalar(total, -1.0 / std::f64::consts::LN_2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn density(channels: usize) -> (ParamStore, &'static str) {
        let mut store = ParamStore::new();
        register_factorized(&mut store, "fy", channels, 3);
        (store, "fy")
    }

    fn eval_cdf(store: &ParamStore, prefix: &str, channels: usize, points: &[f64]) -> Vec<f64> {
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let d = FactorizedDensity::bind(&mut b, &mut g, store, prefix);
        let m = points.len();
        let mut data = Vec::with_capacity(channels * m);
        for _ in 0..channels {
            data.extend_from_slice(points);
        }
        let u = g.input(Tensor::from_vec(vec![channels, 1, m], data));
        let c = d.cdf(&mut g, u);
        g.value(c).data().to_vec()
    }

    #[test]
    fn cdf_is_monotone_and_bounded() {
        let (store, p) = density(4);
        let points: Vec<f64> = (-60..=60).map(|k| k as f64 * 0.5).collect();
        let vals = eval_cdf(&store, p, 4, &points);
        for ch in 0..4 {
            let row = &vals[ch * points.len()..(ch + 1) * points.len()];
            for w in row.windows(2) {
                assert!(w[1] >= w[0], "CDF must not decrease");
            }
            assert!(row[0] >= 0.0 && *row.last().unwrap() <= 1.0);
            assert!(row[0] < 0.01, "left tail should be near 0, got {}", row[0]);
            assert!(*row.last().unwrap() > 0.99, "right tail should be near 1");
        }
    }

    #[test]
    fn box_probs_sum_to_one_over_wide_support() {
        let (store, p) = density(3);
        let ints: Vec<f64> = (-200..=200).map(|k| k as f64).collect();
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let d = FactorizedDensity::bind(&mut b, &mut g, &store, p);
        let m = ints.len();
        let mut data = Vec::new();
        for _ in 0..3 {
            data.extend_from_slice(&ints);
        }
        let u = g.input(Tensor::from_vec(vec![3, 1, m], data));
        let probs = d.box_prob(&mut g, u);
        for ch in 0..3 {
            let row = &g.value(probs).data()[ch * m..(ch + 1) * m];
            let sum: f64 = row.iter().sum();
            // The floor adds at most m * 2^-16 of spurious mass.
            assert!((sum - 1.0).abs() < 0.01, "channel {ch} mass {sum}");
        }
    }

    #[test]
    fn bits_match_manual_log_sum() {
        let (store, p) = density(2);
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let d = FactorizedDensity::bind(&mut b, &mut g, &store, p);
        let vals = Tensor::from_vec(vec![2, 1, 3], vec![0.0, 1.0, -2.0, 0.5, 0.0, 3.0]);
        let u = g.input(vals);
        let probs = d.box_prob(&mut g, u);
        let bits = d.bits(&mut g, u);
        let manual: f64 = g.value(probs).data().iter().map(|&q| -q.log2()).sum();
        let got = g.value(bits).data()[0];
        assert!((got - manual).abs() < 1e-9, "{got} vs {manual}");
    }

    #[test]
    fn channels_start_distinct() {
        // Random biases must break the symmetry between hidden units and
        // between channels, otherwise training cannot separate them.
        let (store, _) = density(2);
        let b1 = store.get("fy.b1").unwrap().data().to_vec();
        assert_ne!(b1[0], b1[1], "hidden units initialized identically");
        assert_ne!(b1[0], b1[3], "channels initialized identically");
    }

    #[test]
    fn gradient_flows_into_density_parameters() {
        let (store, p) = density(2);
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let d = FactorizedDensity::bind(&mut b, &mut g, &store, p);
        let u = g.input(Tensor::from_vec(vec![2, 1, 2], vec![0.0, 1.0, -1.0, 0.5]));
        let bits = d.bits(&mut g, u);
        let grads = g.backward(bits);
        let named = b.gradients(&grads);
        for key in ["fy.h1", "fy.b1", "fy.h2", "fy.b3"] {
            let gt = named.get(key).unwrap_or_else(|| panic!("missing grad for {key}"));
            assert!(gt.data().iter().any(|&v| v != 0.0), "zero gradient for {key}");
        }
    }
}
