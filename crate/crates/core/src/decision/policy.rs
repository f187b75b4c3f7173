//! Categorical policy and value networks trained with the clipped-surrogate
//! policy gradient (PPO).

use super::mdp::{bin_values, MdpAction, MdpState};
use super::DsError;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Action bins per parameter; by default one per integer value.
    pub bins: Option<usize>,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub clip: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub batch: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            bins: None,
            hidden: vec![32, 32],
            lr: 3e-3,
            clip: 0.2,
            discount: 0.9,
            gae_lambda: 0.95,
            epochs: 4,
            batch: 64,
            minibatch: 16,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), DsError> {
        let bad = |m: &str| Err(DsError::Invalid(m.to_string()));
        if matches!(self.bins, Some(b) if b < 2) {
            return bad("bins must be at least 2");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        if !(self.lr > 0.0) || !(self.clip > 0.0) {
            return bad("lr and clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.discount) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("discount and gae_lambda must lie in [0,1]");
        }
        if self.epochs == 0 || self.batch == 0 || self.minibatch == 0 {
            return bad("epochs, batch and minibatch must be positive");
        }
        Ok(())
    }
}

/// Fully connected network, tanh hidden layers, linear output. All weights
/// live in one flat vector: per layer the row-major `out x in` matrix, then
/// the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    theta: Vec<f64>,
}

impl Mlp {
    /// Xavier-uniform weights, zero biases; the output layer is scaled by
    /// `out_scale`.
    pub fn new<R: Rng>(sizes: Vec<usize>, out_scale: f64, rng: &mut R) -> Self {
        let mut theta = Vec::new();
        let last = sizes.len() - 2;
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            let scale = if l == last { out_scale } else { 1.0 };
            for _ in 0..n_in * n_out {
                let w = if scale == 0.0 { 0.0 } else { rng.random_range(-bound..bound) * scale };
                theta.push(w);
            }
            theta.extend(std::iter::repeat_n(0.0, n_out));
        }
        Self { sizes, theta }
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    /// Activations of every layer, input first.
    pub fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let n_layers = self.sizes.len() - 1;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.theta[off..off + n_in * n_out];
            let b = &self.theta[off + n_in * n_out..off + n_in * n_out + n_out];
            let a = acts.last().unwrap();
            let mut z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(a).map(|(w, a)| w * a).sum::<f64>())
                .collect();
            if l + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
            off += n_in * n_out + n_out;
        }
        acts
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).pop().unwrap()
    }

    /// Adds d(output . dout)/d(theta) into `grad`.
    pub fn backward(&self, acts: &[Vec<f64>], dout: &[f64], grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = dout.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let a = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    row.iter_mut().zip(a).for_each(|(g, a)| *g += d * a);
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &self.theta[off..off + n_in * n_out];
                delta = (0..n_in)
                    .map(|i| {
                        let s: f64 = (0..n_out).map(|o| w[o * n_in + i] * delta[o]).sum();
                        s * (1.0 - a[i] * a[i])
                    })
                    .collect();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

fn clip_norm(grad: &mut [f64], max: f64) {
    let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if n > max && n > 0.0 {
        grad.iter_mut().for_each(|g| *g *= max / n);
    }
}

/// Running mean and variance of observations (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunningNorm {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningNorm {
    fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn update(&mut self, x: &[f64]) {
        self.count += 1.0;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.count;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.count < 1.0 {
            return x.to_vec();
        }
        (0..x.len())
            .map(|i| {
                let var = if self.count > 1.0 { self.m2[i] / self.count } else { 0.0 };
                ((x[i] - self.mean[i]) / (var + 1e-8).sqrt()).clamp(-5.0, 5.0)
            })
            .collect()
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// One collected interaction.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub bins: Vec<usize>,
    pub logp: f64,
    pub value: f64,
    pub reward: f64,
    /// No successor state: the episode was truncated here.
    pub done: bool,
}

/// Policy network with one categorical head per parameter, plus a value
/// network used as the advantage baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    config: PolicyConfig,
    input_dim: usize,
    heads: Vec<usize>,
    pi: Mlp,
    v: Mlp,
    norm: RunningNorm,
    pi_opt: Adam,
    v_opt: Adam,
}

impl Policy {
    pub fn new(config: PolicyConfig, input_dim: usize, heads: Vec<usize>, seed: u64) -> Result<Self, DsError> {
        config.validate()?;
        if heads.is_empty() || heads.iter().any(|&b| b < 2) {
            return Err(DsError::Invalid("every parameter needs at least 2 bins".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_out: usize = heads.iter().sum();
        let mut pi_sizes = vec![input_dim];
        pi_sizes.extend(&config.hidden);
        let mut v_sizes = pi_sizes.clone();
        pi_sizes.push(n_out);
        v_sizes.push(1);
        let pi = Mlp::new(pi_sizes, 0.0, &mut rng);
        let v = Mlp::new(v_sizes, 1.0, &mut rng);
        Ok(Self {
            pi_opt: Adam::new(pi.n_params()),
            v_opt: Adam::new(v.n_params()),
            config,
            input_dim,
            heads,
            pi,
            v,
            norm: RunningNorm::new(input_dim),
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    /// Feeds a raw state vector into the observation statistics.
    pub fn observe(&mut self, x: &[f64]) {
        self.norm.update(x);
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        self.norm.apply(x)
    }

    /// Action probabilities per head for a normalized observation.
    pub fn probs(&self, obs: &[f64]) -> Vec<Vec<f64>> {
        let z = self.pi.output(obs);
        let mut out = Vec::with_capacity(self.heads.len());
        let mut off = 0;
        for &b in &self.heads {
            out.push(softmax(&z[off..off + b]));
            off += b;
        }
        out
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.v.output(obs)[0]
    }

    /// Chosen bins and their joint log-probability.
    pub fn choose<R: Rng + ?Sized>(&self, obs: &[f64], explore: bool, rng: &mut R) -> (Vec<usize>, f64) {
        let mut bins = Vec::with_capacity(self.heads.len());
        let mut logp = 0.0;
        for p in self.probs(obs) {
            let k = if explore {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = p.len() - 1;
                for (i, &pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                k
            } else {
                // first maximum
                let mut k = 0;
                for i in 1..p.len() {
                    if p[i] > p[k] {
                        k = i;
                    }
                }
                k
            };
            logp += p[k].max(1e-300).ln();
            bins.push(k);
        }
        (bins, logp)
    }

    /// Maps chosen bins onto parameter values using the ranges in `state`.
    pub fn to_action(&self, state: &MdpState, bins: Vec<usize>) -> MdpAction {
        let values = state
            .params
            .iter()
            .zip(&bins)
            .zip(&self.heads)
            .map(|((p, &k), &n)| bin_values(&p.range, n)[k])
            .collect();
        MdpAction { values, bins }
    }

    /// Clipped-surrogate update over one batch. `last_value` bootstraps the
    /// final transition when it is not terminal.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &[Transition], last_value: f64, rng: &mut R) {
        let n = batch.len();
        if n == 0 {
            return;
        }
        let c = &self.config;
        let mut adv = vec![0.0; n];
        let mut gae = 0.0;
        for i in (0..n).rev() {
            let t = &batch[i];
            let next_v = if t.done {
                0.0
            } else if i + 1 < n {
                batch[i + 1].value
            } else {
                last_value
            };
            if t.done {
                gae = 0.0;
            }
            let delta = t.reward + c.discount * next_v - t.value;
            gae = delta + c.discount * c.gae_lambda * gae;
            adv[i] = gae;
        }
        let returns: Vec<f64> = (0..n).map(|i| adv[i] + batch[i].value).collect();
        let mean = adv.iter().sum::<f64>() / n as f64;
        let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let adv: Vec<f64> = adv.iter().map(|a| (a - mean) / (sd + 1e-8)).collect();

        let mut idx: Vec<usize> = (0..n).collect();
        let mb = c.minibatch.min(n);
        for _ in 0..c.epochs {
            idx.shuffle(rng);
            for chunk in idx.chunks(mb) {
                let mut g_pi = vec![0.0; self.pi.n_params()];
                let mut g_v = vec![0.0; self.v.n_params()];
                let scale = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    let t = &batch[i];
                    let acts = self.pi.forward(&t.obs);
                    let z = acts.last().unwrap();
                    let mut dz = vec![0.0; z.len()];
                    let mut probs = Vec::with_capacity(self.heads.len());
                    let mut logp = 0.0;
                    let mut off = 0;
                    for (h, &b) in self.heads.iter().enumerate() {
                        let p = softmax(&z[off..off + b]);
                        logp += p[t.bins[h]].max(1e-300).ln();
                        probs.push((off, p));
                        off += b;
                    }
                    let ratio = (logp - t.logp).exp();
                    let a = adv[i];
                    let clipped = (a > 0.0 && ratio > 1.0 + c.clip) || (a < 0.0 && ratio < 1.0 - c.clip);
                    let dlogp = if clipped { 0.0 } else { -ratio * a };
                    for (h, (off, p)) in probs.iter().enumerate() {
                        let ent: f64 = -p.iter().map(|&q| if q > 0.0 { q * q.ln() } else { 0.0 }).sum::<f64>();
                        for j in 0..p.len() {
                            let onehot = if j == t.bins[h] { 1.0 } else { 0.0 };
                            let lq = p[j].max(1e-300).ln();
                            dz[off + j] += scale * (dlogp * (onehot - p[j]) + c.entropy_coef * p[j] * (lq + ent));
                        }
                    }
                    self.pi.backward(&acts, &dz, &mut g_pi);

                    let vacts = self.v.forward(&t.obs);
                    let v = vacts.last().unwrap()[0];
                    self.v.backward(&vacts, &[scale * (v - returns[i])], &mut g_v);
                }
                clip_norm(&mut g_pi, c.max_grad_norm);
                clip_norm(&mut g_v, c.max_grad_norm);
                self.pi_opt.step(&mut self.pi.theta, &g_pi, c.lr);
                self.v_opt.step(&mut self.v.theta, &g_v, c.lr);
            }
        }
    }
}

/// Picks an action for `state`: a sample when exploring, the most likely
/// bin otherwise.
pub fn policy_act<R: Rng + ?Sized>(
    policy: &Policy,
    state: &MdpState,
    explore: bool,
    rng: &mut R,
) -> Result<MdpAction, DsError> {
    let x = state.to_vec();
    if x.len() != policy.input_dim || state.params.len() != policy.heads.len() {
        return Err(DsError::Invalid(format!(
            "state has dimension {} with {} parameters, policy expects {} with {}",
            x.len(),
            state.params.len(),
            policy.input_dim,
            policy.heads.len()
        )));
    }
    let (bins, _) = policy.choose(&policy.normalize(&x), explore, rng);
    Ok(policy.to_action(state, bins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::client::{ParamRange, Range};
    use crate::decision::mdp::{ParamObs, SloObs};

    fn state(p: f64) -> MdpState {
        MdpState {
            params: vec![ParamObs {
                id: "p".into(),
                range: ParamRange {
                    min: 0.0,
                    max: 16.0,
                    integer: true,
                },
                value: p,
            }],
            slos: vec![SloObs {
                id: "s".into(),
                range: Range { min: 24.0, max: 30.0 },
                value: 25.0,
            }],
            carbon: 60.0,
        }
    }

    fn policy(bins: usize) -> Policy {
        Policy::new(PolicyConfig::default(), 7, vec![bins], 3).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Mlp::new(vec![3, 4, 2], 1.0, &mut rng);
        let x = [0.3, -0.7, 1.1];
        let w = [0.8, -1.3];
        let f = |m: &Mlp| m.output(&x).iter().zip(&w).map(|(o, w)| o * w).sum::<f64>();
        let mut g = vec![0.0; net.n_params()];
        net.backward(&net.forward(&x), &w, &mut g);
        for i in 0..net.n_params() {
            let h = 1e-6;
            net.theta[i] += h;
            let up = f(&net);
            net.theta[i] -= 2.0 * h;
            let down = f(&net);
            net.theta[i] += h;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn untrained_policy_is_uniform() {
        let p = policy(17);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0u32; 17];
        for _ in 0..10_000 {
            let a = policy_act(&p, &state(5.0), true, &mut rng).unwrap();
            counts[a.values[0] as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 1.0 / 17.0).abs() <= 0.02);
        }
    }

    #[test]
    fn two_bins_hit_endpoints() {
        let p = policy(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let v = policy_act(&p, &state(3.0), true, &mut rng).unwrap().values[0];
            assert!(v == 0.0 || v == 16.0);
        }
    }

    #[test]
    fn mode_is_dominant_bin() {
        let mut p = policy(17);
        // bias the output layer towards bin 7
        let n = p.pi.theta.len();
        p.pi.theta[n - 17 + 7] = 5.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(policy_act(&p, &state(1.0), false, &mut rng).unwrap().values, vec![7.0]);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = Policy::new(PolicyConfig::default(), 9, vec![17], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(policy_act(&p, &state(1.0), true, &mut rng).is_err());
    }

    #[test]
    fn bandit_learning() {
        // reward 1 for bin 3, -1 otherwise; constant observation
        let mut p = Policy::new(PolicyConfig::default(), 2, vec![5], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let obs = vec![0.0, 0.0];
        for _ in 0..60 {
            let batch: Vec<Transition> = (0..64)
                .map(|_| {
                    let (bins, logp) = p.choose(&obs, true, &mut rng);
                    Transition {
                        reward: if bins[0] == 3 { 1.0 } else { -1.0 },
                        value: p.value(&obs),
                        obs: obs.clone(),
                        bins,
                        logp,
                        done: false,
                    }
                })
                .collect();
            p.update(&batch, p.value(&obs), &mut rng);
        }
        assert!(p.probs(&obs)[0][3] > 0.8, "{:?}", p.probs(&obs));
    }

    #[test]
    fn config_validation() {
        assert!(PolicyConfig { bins: Some(1), ..Default::default() }.validate().is_err());
        assert!(PolicyConfig::default().validate().is_ok());
    }
}
