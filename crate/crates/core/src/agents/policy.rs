//! GRU policy network with a confidence readout and a detached value head.
//!
//! The state is consumed as a two-step sequence: the sentence part, then the
//! type part zero-padded to the sentence width. The hidden state starts at 0.
//!
//! Gates follow the classic formulation
//! `r = σ(W_r x + U_r h + b_r)`, `z = σ(W_z x + U_z h + b_z)`,
//! `n = tanh(W_n x + U_n (r ⊙ h) + b_n)`, `h' = (1 − z) ⊙ n + z ⊙ h`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::beta::Beta;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{sigmoid, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hidden: usize,
    /// Beta concentration around the network mean.
    pub kappa: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            kappa: 10.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("policy hidden size must be positive".into()));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Flat parameter layout, in order:
/// `W_r W_z W_n` (H×D each), `U_r U_z U_n` (H×H each), `b_r b_z b_n` (H each),
/// readout `w_o` (H), `b_o`, value head `w_v` (H), `b_v`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<T> {
    input: usize,
    hidden: usize,
    kappa: f64,
    params: Vec<T>,
}

/// Sampled (or deterministic) action with what PPO needs later.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSample {
    pub confidence: f64,
    pub log_prob: f64,
    pub value_estimate: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ActionSample {
    pub fn dist(&self) -> Beta {
        Beta {
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

struct Step<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
}

/// Forward activations kept for the backward pass.
pub struct Forward<T> {
    steps: [Step<T>; 2],
    pub hidden: Vec<T>,
    pub logit: T,
    pub mean: T,
    pub value: T,
}

struct Offsets {
    w: usize,
    u: usize,
    b: usize,
    wo: usize,
    bo: usize,
    wv: usize,
    bv: usize,
    len: usize,
}

impl<T: Real> PolicyParams<T> {
    /// Uniform `±1/√H` init for the GRU and readout; zero value head.
    pub fn new(input: usize, cfg: &PolicyConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if input == 0 {
            return Err(Error::Config("policy input width must be positive".into()));
        }
        let mut p = Self::zeros(input, cfg);
        let o = p.offsets();
        let bound = 1.0 / (cfg.hidden as f64).sqrt();
        let mut rng = rng::stream(seed, 0x6E0);
        for v in &mut p.params[..o.wv] {
            *v = T::of(rng.random_range(-bound..bound));
        }
        Ok(p)
    }

    pub fn zeros(input: usize, cfg: &PolicyConfig) -> Self {
        let mut p = Self {
            input,
            hidden: cfg.hidden,
            kappa: cfg.kappa,
            params: Vec::new(),
        };
        p.params = vec![T::zero(); p.offsets().len];
        p
    }

    fn offsets(&self) -> Offsets {
        let (d, h) = (self.input, self.hidden);
        let w = 0;
        let u = w + 3 * h * d;
        let b = u + 3 * h * h;
        let wo = b + 3 * h;
        let bo = wo + h;
        let wv = bo + 1;
        let bv = wv + h;
        Offsets {
            w,
            u,
            b,
            wo,
            bo,
            wv,
            bv,
            len: bv + 1,
        }
    }

    /// Sentence width `d_s`; the state is at most `2·d_s` long.
    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Index range of the value head; everything before it is the policy.
    pub fn value_head_range(&self) -> std::ops::Range<usize> {
        self.offsets().wv..self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn segments(&self, state: &[T]) -> Result<[Vec<T>; 2]> {
        let d = self.input;
        if state.len() <= d || state.len() > 2 * d {
            return Err(Error::Dimension {
                context: "policy state",
                expected: 2 * d,
                got: state.len(),
            });
        }
        let mut second = state[d..].to_vec();
        second.resize(d, T::zero());
        Ok([state[..d].to_vec(), second])
    }

    fn step(&self, x: Vec<T>, h_prev: Vec<T>) -> (Step<T>, Vec<T>) {
        let (d, hd) = (self.input, self.hidden);
        let o = self.offsets();
        let p = &self.params;
        let lin = |gate: usize, j: usize, hv: &[T]| -> T {
            let wrow = &p[o.w + (gate * hd + j) * d..][..d];
            let urow = &p[o.u + (gate * hd + j) * hd..][..hd];
            let mut a = p[o.b + gate * hd + j];
            for k in 0..d {
                a += wrow[k] * x[k];
            }
            for k in 0..hd {
                a += urow[k] * hv[k];
            }
            a
        };
        let r: Vec<T> = (0..hd).map(|j| sigmoid(lin(0, j, &h_prev))).collect();
        let z: Vec<T> = (0..hd).map(|j| sigmoid(lin(1, j, &h_prev))).collect();
        let rh: Vec<T> = r.iter().zip(&h_prev).map(|(&a, &b)| a * b).collect();
        let n: Vec<T> = (0..hd).map(|j| lin(2, j, &rh).tanh()).collect();
        let h: Vec<T> = (0..hd).map(|j| (T::one() - z[j]) * n[j] + z[j] * h_prev[j]).collect();
        (Step { x, h_prev, r, z, n }, h)
    }

    pub fn forward(&self, state: &[T]) -> Result<Forward<T>> {
        let [s1, s2] = self.segments(state)?;
        let (st1, h1) = self.step(s1, vec![T::zero(); self.hidden]);
        let (st2, h2) = self.step(s2, h1);
        let o = self.offsets();
        let p = &self.params;
        let dot = |off: usize| (0..self.hidden).fold(T::zero(), |a, j| a + p[off + j] * h2[j]);
        let logit = dot(o.wo) + p[o.bo];
        let value = dot(o.wv) + p[o.bv];
        Ok(Forward {
            steps: [st1, st2],
            mean: sigmoid(logit),
            hidden: h2,
            logit,
            value,
        })
    }

    /// `(c, final hidden state)`.
    pub fn policy_confidence(&self, state: &[T]) -> Result<(T, Vec<T>)> {
        let f = self.forward(state)?;
        Ok((f.mean, f.hidden))
    }

    pub fn value(&self, state: &[T]) -> Result<T> {
        Ok(self.forward(state)?.value)
    }

    /// Beta distribution around the network mean.
    pub fn dist(&self, mean: T) -> Beta {
        Beta::from_mean(mean.to_f64_lossy(), self.kappa)
    }

    /// Draws an action; `deterministic` returns the mean instead.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        state: &[T],
        rng: &mut R,
        deterministic: bool,
    ) -> Result<ActionSample> {
        let f = self.forward(state)?;
        let dist = self.dist(f.mean);
        let c = if deterministic {
            f.mean.to_f64_lossy()
        } else {
            dist.sample(rng)
        };
        Ok(ActionSample {
            confidence: c,
            log_prob: dist.log_prob(c),
            value_estimate: f.value.to_f64_lossy(),
            alpha: dist.alpha,
            beta: dist.beta,
        })
    }

    /// Accumulates into `grad` the gradient of a loss with `∂L/∂logit = d_logit`
    /// and `∂L/∂value = d_value`. The value gradient reaches only the value
    /// head; the GRU sees the logit path alone.
    pub fn backward(&self, f: &Forward<T>, d_logit: T, d_value: T, grad: &mut [T]) {
        let (d, hd) = (self.input, self.hidden);
        let o = self.offsets();
        let p = &self.params;
        for j in 0..hd {
            grad[o.wo + j] += d_logit * f.hidden[j];
            grad[o.wv + j] += d_value * f.hidden[j];
        }
        grad[o.bo] += d_logit;
        grad[o.bv] += d_value;
        if d_logit == T::zero() {
            return;
        }
        let mut dh: Vec<T> = (0..hd).map(|j| d_logit * p[o.wo + j]).collect();
        for st in f.steps.iter().rev() {
            let mut dh_prev: Vec<T> = (0..hd).map(|j| dh[j] * st.z[j]).collect();
            let mut dpre = [vec![T::zero(); hd], vec![T::zero(); hd], vec![T::zero(); hd]];
            for j in 0..hd {
                let dn = dh[j] * (T::one() - st.z[j]);
                let dz = dh[j] * (st.h_prev[j] - st.n[j]);
                dpre[2][j] = dn * (T::one() - st.n[j] * st.n[j]);
                dpre[1][j] = dz * st.z[j] * (T::one() - st.z[j]);
            }
            // Candidate gate reads r ⊙ h.
            let mut d_rh = vec![T::zero(); hd];
            for j in 0..hd {
                let g = dpre[2][j];
                let urow = &p[o.u + (2 * hd + j) * hd..][..hd];
                for k in 0..hd {
                    d_rh[k] += urow[k] * g;
                    grad[o.u + (2 * hd + j) * hd + k] += g * st.r[k] * st.h_prev[k];
                }
            }
            for k in 0..hd {
                dh_prev[k] += d_rh[k] * st.r[k];
                let dr = d_rh[k] * st.h_prev[k];
                dpre[0][k] = dr * st.r[k] * (T::one() - st.r[k]);
            }
            for gate in 0..3 {
                for j in 0..hd {
                    let g = dpre[gate][j];
                    if g == T::zero() {
                        continue;
                    }
                    grad[o.b + gate * hd + j] += g;
                    let wrow = &mut grad[o.w + (gate * hd + j) * d..][..d];
                    for (w, x) in wrow.iter_mut().zip(&st.x[..d]) {
                        *w += g * *x;
                    }
                    if gate < 2 {
                        let urow_off = o.u + (gate * hd + j) * hd;
                        for k in 0..hd {
                            grad[urow_off + k] += g * st.h_prev[k];
                            dh_prev[k] += p[urow_off + k] * g;
                        }
                    }
                }
            }
            dh = dh_prev;
        }
    }
}
