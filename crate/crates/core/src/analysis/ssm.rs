use super::enumerate::dot;
use crate::error::{Result, SmcError};
use crate::models::FiniteHmm;

/// Exact filters, predictors and likelihoods of a finite HMM by path enumeration,
/// computed directly from `L_n` and `g_n` without reference to any flow.
#[derive(Clone, Debug)]
pub struct ExactSsm {
    k: usize,
    /// `L_1` and the transition matrix.
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    likelihoods: Vec<Vec<f64>>,
    /// Joint `p(x_{1:n}, y_{1:n})` per path, `n = 1..=T`.
    joints: Vec<Vec<f64>>,
}

impl ExactSsm {
    pub fn new(hmm: &FiniteHmm, horizon: usize) -> Result<Self> {
        use crate::models::StateSpaceModel;
        if horizon == 0 || horizon > hmm.len() {
            return Err(SmcError::Config(format!("horizon {horizon} outside 1..={}", hmm.len())));
        }
        let k = hmm.states();
        let likelihoods: Vec<Vec<f64>> = (1..=horizon).map(|n| hmm.likelihood(n)).collect();
        let mut joints: Vec<Vec<f64>> = vec![hmm.initial().iter().zip(&likelihoods[0]).map(|(a, g)| a * g).collect()];
        for n in 2..=horizon {
            let prev = &joints[n - 2];
            let next = (0..prev.len() * k)
                .map(|i| prev[i / k] * hmm.transition()[(i / k) % k][i % k] * likelihoods[n - 1][i % k])
                .collect();
            joints.push(next);
        }
        Ok(Self {
            k,
            initial: hmm.initial().to_vec(),
            transition: hmm.transition().to_vec(),
            likelihoods,
            joints,
        })
    }

    pub fn horizon(&self) -> usize {
        self.joints.len()
    }

    /// `𝓛_n`, with `𝓛_0 = 1`.
    pub fn likelihood(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.joints[n - 1].iter().sum()
        }
    }

    /// `π_n` on paths of length `n`.
    pub fn filter(&self, n: usize) -> Vec<f64> {
        let l = self.likelihood(n);
        self.joints[n - 1].iter().map(|v| v / l).collect()
    }

    /// `π̃_n = π_{n-1} ⊗ L_n` (`L_1` at `n = 1`).
    pub fn predictor(&self, n: usize) -> Vec<f64> {
        if n == 1 {
            return self.initial.clone();
        }
        let prev = self.filter(n - 1);
        let k = self.k;
        (0..prev.len() * k).map(|i| prev[i / k] * self.transition[(i / k) % k][i % k]).collect()
    }

    /// `S_{p,n}(f)(x_{1:p}) = (𝓛_p / 𝓛_n) Σ_{x_{p+1:n}} f(x_{1:n}) Π_{q>p} g_q(x_q) L_q(x_{q-1}, x_q)`.
    pub fn s_apply(&self, p: usize, n: usize, f: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut v = f.to_vec();
        for q in (p + 1..=n).rev() {
            let g = &self.likelihoods[q - 1];
            v = (0..v.len() / k)
                .map(|j| (0..k).map(|x| self.transition[j % k][x] * g[x] * v[j * k + x]).sum())
                .collect();
        }
        let scale = self.likelihood(p) / self.likelihood(n);
        v.into_iter().map(|x| x * scale).collect()
    }

    /// `f_{p,n} = S_{p,n}(f − π_n f)`.
    pub fn faapf_integrand(&self, p: usize, n: usize, f: &[f64]) -> Vec<f64> {
        let centred = self.centred(n, f);
        self.s_apply(p, n, &centred)
    }

    /// `f̃_{p,n} = g_p 𝓛_{p-1} / 𝓛_p · S_{p,n}(f − π_n f)`.
    pub fn bpf_integrand(&self, p: usize, n: usize, f: &[f64]) -> Vec<f64> {
        let s = self.faapf_integrand(p, n, f);
        let ratio = self.likelihood(p - 1) / self.likelihood(p);
        let g = &self.likelihoods[p - 1];
        s.iter().enumerate().map(|(i, v)| g[i % self.k] * ratio * v).collect()
    }

    /// Standard-PF filter variances `Σ_p var_{π̃_p}[f̃_{p,n}]` and `Σ_p var_{π_p}[f_{p,n}]`,
    /// returned per term.
    pub fn pf_filter_variance_terms(&self, n: usize, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (1..=n)
            .map(|p| {
                let bpf = variance(&self.predictor(p), &self.bpf_integrand(p, n, f));
                let fa = variance(&self.filter(p), &self.faapf_integrand(p, n, f));
                (bpf, fa)
            })
            .unzip()
    }

    fn centred(&self, n: usize, f: &[f64]) -> Vec<f64> {
        let m = dot(&self.filter(n), f);
        f.iter().map(|v| v - m).collect()
    }
}

fn variance(law: &[f64], f: &[f64]) -> f64 {
    let m = dot(law, f);
    law.iter().zip(f).map(|(w, v)| w * (v - m) * (v - m)).sum()
}
