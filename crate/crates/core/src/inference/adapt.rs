//! Warmup adaptation: dual averaging of the step size and windowed estimation
//! of a diagonal mass matrix.

#[derive(Debug, Clone, Copy)]
pub(crate) struct DualAverageSettings {
    pub target: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
}

impl DualAverageSettings {
    pub fn with_target(target: f64) -> Self {
        DualAverageSettings {
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DualAverage {
    settings: DualAverageSettings,
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
}

impl DualAverage {
    pub fn new(settings: DualAverageSettings, step_size: f64) -> Self {
        let mut da = DualAverage {
            settings,
            mu: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
            counter: 0.0,
        };
        da.restart(step_size);
        da
    }

    pub fn restart(&mut self, step_size: f64) {
        self.mu = (10.0 * step_size).ln();
        self.s_bar = 0.0;
        self.x_bar = 0.0;
        self.counter = 0.0;
    }

    /// Feed one acceptance statistic, returns the next step size to try.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        let s = &self.settings;
        self.counter += 1.0;
        let accept = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + s.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (s.target - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / s.gamma;
        let x_eta = self.counter.powf(-s.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// The averaged step size used after warmup.
    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running mean and variance.
#[derive(Debug, Clone)]
pub(crate) struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = xi - *m;
            *m += delta / n;
            *s += delta * (xi - *m);
        }
    }

    /// Sample variance shrunk towards 1e-3, as used for the inverse metric.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn reset(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|v| *v = 0.0);
        self.m2.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Slow (variance-estimating) warmup windows as half-open iteration ranges.
///
/// A fast initial buffer, then windows of doubling size, then a fast terminal
/// buffer. The last window is stretched to meet the terminal buffer.
pub(crate) fn slow_windows(warmup: usize) -> Vec<(usize, usize)> {
    if warmup < 20 {
        return Vec::new();
    }
    let (mut init, mut term, mut base) = (75usize, 50usize, 25usize);
    if init + term + base > warmup {
        init = (0.15 * warmup as f64) as usize;
        term = (0.1 * warmup as f64) as usize;
        base = warmup - init - term;
    }
    let stop = warmup - term;
    let mut windows = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < stop {
        let mut end = start + size;
        if end + 2 * size > stop {
            end = stop;
        }
        windows.push((start, end));
        start = end;
        size *= 2;
    }
    windows
}
