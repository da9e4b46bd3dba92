//! Multinomial no-U-turn transitions with a diagonal Euclidean metric.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::adapt::{slow_windows, DualAverage, DualAverageSettings, Welford};
use super::{DrawStats, LogDensity, SamplerConfig};
use crate::stats::log_sum_exp;
use crate::Result;

/// Energy error beyond which a trajectory is declared divergent.
const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

/// Everything a subtree reports back to its parent.
struct Subtree {
    /// Momentum and velocity (`M⁻¹ p`) at the end nearest the existing tree.
    p_near: Vec<f64>,
    sharp_near: Vec<f64>,
    /// ...and at the far end.
    p_far: Vec<f64>,
    sharp_far: Vec<f64>,
    rho: Vec<f64>,
    log_weight: f64,
    proposal: Point,
}

struct Integration {
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

pub(crate) struct Nuts<'t, T: LogDensity> {
    target: &'t T,
    current: Point,
    inv_mass: Vec<f64>,
    step_size: f64,
    max_depth: usize,
    target_accept: f64,
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(sharp_minus: &[f64], sharp_plus: &[f64], rho: &[f64]) -> bool {
    let dot = |a: &[f64]| a.iter().zip(rho).map(|(x, y)| x * y).sum::<f64>();
    dot(sharp_plus) > 0.0 && dot(sharp_minus) > 0.0
}

impl<'t, T: LogDensity> Nuts<'t, T> {
    pub fn new(target: &'t T, config: &SamplerConfig, q0: Vec<f64>) -> Result<Self> {
        let dim = target.dim();
        let mut grad = vec![0.0; dim];
        let logp = target.log_density_and_grad(&q0, &mut grad)?;
        Ok(Nuts {
            target,
            current: Point {
                q: q0,
                p: vec![0.0; dim],
                grad,
                logp,
            },
            inv_mass: vec![1.0; dim],
            step_size: 1.0,
            max_depth: config.max_tree_depth,
            target_accept: config.target_acceptance,
        })
    }

    pub fn position(&self) -> &[f64] {
        &self.current.q
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn inv_mass(&self) -> &[f64] {
        &self.inv_mass
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_mass).map(|(p, m)| p * m).collect()
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_mass) {
            *q += eps * m * p;
        }
        z.logp = match self.target.log_density_and_grad(&z.q, &mut z.grad) {
            Ok(lp) if lp.is_finite() => lp,
            _ => f64::NEG_INFINITY,
        };
        if z.logp.is_finite() {
            for (p, g) in z.p.iter_mut().zip(&z.grad) {
                *p += 0.5 * eps * g;
            }
        }
    }

    fn sample_momentum(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.inv_mass
            .iter()
            .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
            .collect()
    }

    /// Build a subtree of `2^depth` leapfrog steps continuing from `z`. `z` is
    /// left at the far end of the new subtree. `None` means the subtree
    /// diverged or turned back on itself.
    fn build_tree(
        &self,
        depth: usize,
        z: &mut Point,
        direction: f64,
        integ: &mut Integration,
        rng: &mut ChaCha8Rng,
    ) -> Option<Subtree> {
        if depth == 0 {
            self.leapfrog(z, direction * self.step_size);
            integ.n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - integ.h0 > MAX_DELTA_H {
                integ.divergent = true;
            }
            let log_w = integ.h0 - h;
            integ.sum_metro_prob += if log_w > 0.0 { 1.0 } else { log_w.exp() };
            if integ.divergent {
                return None;
            }
            let sharp = self.velocity(&z.p);
            return Some(Subtree {
                p_near: z.p.clone(),
                sharp_near: sharp.clone(),
                p_far: z.p.clone(),
                sharp_far: sharp,
                rho: z.p.clone(),
                log_weight: log_w,
                proposal: z.clone(),
            });
        }

        let init = self.build_tree(depth - 1, z, direction, integ, rng)?;
        let fin = self.build_tree(depth - 1, z, direction, integ, rng)?;

        let log_weight = log_sum_exp(init.log_weight, fin.log_weight);
        let take_final = fin.log_weight > log_weight
            || rng.random::<f64>() < (fin.log_weight - log_weight).exp();
        let rho = add(&init.rho, &fin.rho);

        let mut keep_going = no_u_turn(&init.sharp_near, &fin.sharp_far, &rho);
        // the merged halves must not U-turn across their seam either
        keep_going &= no_u_turn(&init.sharp_near, &fin.sharp_near, &add(&init.rho, &fin.p_near));
        keep_going &= no_u_turn(&init.sharp_far, &fin.sharp_far, &add(&fin.rho, &init.p_far));
        if !keep_going {
            return None;
        }

        Some(Subtree {
            p_near: init.p_near,
            sharp_near: init.sharp_near,
            p_far: fin.p_far,
            sharp_far: fin.sharp_far,
            rho,
            log_weight,
            proposal: if take_final { fin.proposal } else { init.proposal },
        })
    }

    pub fn transition(&mut self, rng: &mut ChaCha8Rng) -> DrawStats {
        let mut start = self.current.clone();
        start.p = self.sample_momentum(rng);
        let h0 = self.hamiltonian(&start);
        let mut integ = Integration {
            h0,
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
        };

        // trajectory ends: backward (left) and forward (right)
        let mut left = start.clone();
        let mut right = start.clone();
        let sharp0 = self.velocity(&start.p);
        let (mut p_left, mut sharp_left) = (start.p.clone(), sharp0.clone());
        let (mut p_right, mut sharp_right) = (start.p.clone(), sharp0);
        let mut rho = start.p.clone();
        let mut log_weight = 0.0;
        let mut sample = start;
        let mut depth = 0;

        while depth < self.max_depth {
            let forward = rng.random::<f64>() > 0.5;
            let (z, direction) = if forward { (&mut right, 1.0) } else { (&mut left, -1.0) };
            let Some(sub) = self.build_tree(depth, z, direction, &mut integ, rng) else {
                break;
            };
            depth += 1;

            if sub.log_weight > log_weight
                || rng.random::<f64>() < (sub.log_weight - log_weight).exp()
            {
                sample = sub.proposal.clone();
            }
            log_weight = log_sum_exp(log_weight, sub.log_weight);

            let rho_old = std::mem::take(&mut rho);
            rho = add(&rho_old, &sub.rho);
            let persist = if forward {
                no_u_turn(&sharp_left, &sub.sharp_far, &rho)
                    && no_u_turn(&sharp_left, &sub.sharp_near, &add(&rho_old, &sub.p_near))
                    && no_u_turn(&sharp_right, &sub.sharp_far, &add(&sub.rho, &p_right))
            } else {
                no_u_turn(&sub.sharp_far, &sharp_right, &rho)
                    && no_u_turn(&sub.sharp_near, &sharp_right, &add(&rho_old, &sub.p_near))
                    && no_u_turn(&sub.sharp_far, &sharp_left, &add(&sub.rho, &p_left))
            };
            if forward {
                p_right = sub.p_far;
                sharp_right = sub.sharp_far;
            } else {
                p_left = sub.p_far;
                sharp_left = sub.sharp_far;
            }
            if !persist {
                break;
            }
        }

        let accept_stat = if integ.n_leapfrog > 0 {
            integ.sum_metro_prob / integ.n_leapfrog as f64
        } else {
            0.0
        };
        self.current = sample;
        DrawStats {
            divergent: integ.divergent,
            tree_depth: depth,
            n_leapfrog: integ.n_leapfrog,
            energy: self.hamiltonian(&self.current),
            accept_stat,
            step_size: self.step_size,
        }
    }

    /// Double or halve the step size until a single leapfrog step crosses an
    /// acceptance probability of 0.8.
    fn init_step_size(&mut self, rng: &mut ChaCha8Rng) {
        let log_threshold = 0.8f64.ln();
        let trial = |nuts: &Self, rng: &mut ChaCha8Rng| -> f64 {
            let mut z = nuts.current.clone();
            z.p = nuts.sample_momentum(rng);
            let h0 = nuts.hamiltonian(&z);
            nuts.leapfrog(&mut z, nuts.step_size);
            h0 - nuts.hamiltonian(&z)
        };
        let first = trial(self, rng);
        let direction = if first > log_threshold { 1.0 } else { -1.0 };
        for _ in 0..100 {
            self.step_size *= 2f64.powf(direction);
            let delta = trial(self, rng);
            if (direction > 0.0 && !(delta > log_threshold))
                || (direction < 0.0 && !(delta < log_threshold))
            {
                break;
            }
            if !(1e-10..=1e7).contains(&self.step_size) {
                break;
            }
        }
        self.step_size = self.step_size.clamp(1e-10, 1e7);
    }

    pub fn warmup(&mut self, iterations: usize, rng: &mut ChaCha8Rng) {
        self.init_step_size(rng);
        let mut dual = DualAverage::new(DualAverageSettings::with_target(self.target_accept), self.step_size);
        let windows = slow_windows(iterations);
        let mut variance = Welford::new(self.inv_mass.len());
        let mut next_window = 0;

        for it in 0..iterations {
            let stats = self.transition(rng);
            self.step_size = dual.update(stats.accept_stat);

            if let Some(&(start, end)) = windows.get(next_window) {
                if it >= start && it < end {
                    variance.add(&self.current.q);
                }
                if it + 1 == end {
                    if variance.count() >= 3 {
                        self.inv_mass = variance.regularized_variance();
                    }
                    variance.reset();
                    next_window += 1;
                    self.init_step_size(rng);
                    dual.restart(self.step_size);
                }
            }
        }
        self.step_size = dual.final_step_size();
    }
}
