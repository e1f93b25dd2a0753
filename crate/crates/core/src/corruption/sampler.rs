use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `p_l ∝ (n_l / Σn)^(1/T)`.
pub fn temperature_probs(sizes: &[u64], temperature: f64) -> Result<Vec<f64>> {
    let total: u64 = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Config("every language corpus is empty".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    let w: Vec<f64> = sizes
        .iter()
        .map(|&n| (n as f64 / total as f64).powf(1.0 / temperature))
        .collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// Language sampler whose temperature rises linearly from `t_start` to `t_end`
/// over `warm_steps` calls to [`advance`](Self::advance), then holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSampler {
    sizes: Vec<u64>,
    pub t_start: f64,
    pub t_end: f64,
    pub warm_steps: u64,
    step: u64,
}

impl TemperatureSampler {
    pub fn new(sizes: Vec<u64>, warm_steps: u64) -> Result<Self> {
        temperature_probs(&sizes, 1.0)?;
        Ok(Self {
            sizes,
            t_start: 1.0,
            t_end: 5.0,
            warm_steps,
            step: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn temperature(&self) -> f64 {
        if self.warm_steps == 0 || self.step >= self.warm_steps {
            return self.t_end;
        }
        self.t_start + (self.t_end - self.t_start) * self.step as f64 / self.warm_steps as f64
    }

    pub fn probabilities(&self) -> Vec<f64> {
        temperature_probs(&self.sizes, self.temperature()).expect("sizes validated at construction")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        WeightedIndex::new(self.probabilities())
            .expect("at least one positive weight")
            .sample(rng)
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let p = temperature_probs(&[90, 10], 1.0).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-12 && (p[1] - 0.1).abs() < 1e-12);
        let p = temperature_probs(&[90, 10], 5.0).unwrap();
        let a = 0.9f64.powf(0.2);
        let b = 0.1f64.powf(0.2);
        assert!((p[0] - a / (a + b)).abs() < 1e-9);
        assert!((p[0] - 0.608127).abs() < 1e-6);
        let p = temperature_probs(&[1000, 3, 50], 1e6).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-3));
        assert!(temperature_probs(&[0, 0], 1.0).is_err());
        assert_eq!(temperature_probs(&[5, 0], 3.0).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn schedule_ramps_then_holds() {
        let mut s = TemperatureSampler::new(vec![90, 10], 4).unwrap();
        let mut seen = Vec::new();
        for _ in 0..6 {
            seen.push(s.temperature());
            s.advance();
        }
        assert_eq!(seen, vec![1.0, 2.0, 3.0, 4.0, 5.0, 5.0]);
        assert!(entropy(&[0.5, 0.5]) > entropy(&[0.9, 0.1]));
    }
}
