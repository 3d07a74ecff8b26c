use log::{debug, warn};
use nested_hinf::lmi::SolverOptions;
use nested_hinf::plant::{example_fig1, Fig1Variant};
use nested_hinf::synth_full::synth_full_gamma;
use nested_hinf::synth_nested::synth_structured_gamma;
use rayon::prelude::*;

/// Fraction of grid points that must succeed for a sweep to count as done.
const MIN_SUCCESS: f64 = 0.9;

pub struct SweepSpec {
    pub variant: Fig1Variant,
    pub rhos: Vec<f64>,
    pub full: bool,
    pub structured: bool,
}

impl SweepSpec {
    pub fn new(
        variant: Fig1Variant,
        (start, stop, step): (f64, f64, f64),
        full: bool,
        structured: bool,
    ) -> Result<Self, String> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(format!("--rho-step must be positive, got {step}"));
        }
        if !(start.is_finite() && stop.is_finite() && start <= stop) {
            return Err(format!("need --rho-start <= --rho-stop, got {start} and {stop}"));
        }
        if !full && !structured {
            return Err("--mode selects no synthesis".into());
        }
        // Points are generated by index so that rounding never drops the end point.
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        let rhos = (0..count).map(|i| snap(start + i as f64 * step)).collect();
        Ok(Self {
            variant,
            rhos,
            full,
            structured,
        })
    }
}

fn snap(v: f64) -> f64 {
    let r = (v * 1e12).round() / 1e12;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub struct Row {
    pub rho: f64,
    pub gamma_full: Option<f64>,
    pub gamma_str: Option<f64>,
}

pub struct SweepResult {
    full: bool,
    structured: bool,
    pub rows: Vec<Row>,
}

impl SweepResult {
    fn ok(&self, r: &Row) -> bool {
        (!self.full || r.gamma_full.is_some()) && (!self.structured || r.gamma_str.is_some())
    }

    pub fn succeeded(&self) -> usize {
        self.rows.iter().filter(|r| self.ok(r)).count()
    }

    pub fn acceptable(&self) -> bool {
        self.succeeded() as f64 >= MIN_SUCCESS * self.rows.len() as f64
    }

    /// Columns not requested are left empty; failed points read `inf`.
    pub fn to_csv(&self) -> String {
        let cell = |on: bool, v: Option<f64>| match (on, v) {
            (false, _) => String::new(),
            (true, Some(g)) => format!("{g}"),
            (true, None) => "inf".into(),
        };
        let mut s = String::from("rho,gamma_full,gamma_str\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{}\n",
                r.rho,
                cell(self.full, r.gamma_full),
                cell(self.structured, r.gamma_str)
            ));
        }
        s
    }
}

fn level(what: &str, rho: f64, res: nested_hinf::Result<f64>) -> Option<f64> {
    match res {
        Ok(g) if g.is_finite() => {
            debug!("rho = {rho}: {what} level {g:.6e}");
            Some(g)
        }
        Ok(g) => {
            warn!("rho = {rho}: {what} level {g}");
            None
        }
        Err(e) => {
            warn!("rho = {rho}: {what} synthesis failed: {e}");
            None
        }
    }
}

/// `workers = 0` lets the pool pick the number of threads.
pub fn run(spec: &SweepSpec, workers: usize, opts: &SolverOptions) -> Result<SweepResult, rayon::ThreadPoolBuildError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let rows = pool.install(|| {
        spec.rhos
            .par_iter()
            .map(|&rho| {
                let plant = example_fig1(spec.variant, rho);
                Row {
                    rho,
                    gamma_full: spec
                        .full
                        .then(|| level("full", rho, synth_full_gamma(&plant, opts)))
                        .flatten(),
                    gamma_str: spec
                        .structured
                        .then(|| level("structured", rho, synth_structured_gamma(&plant, opts)))
                        .flatten(),
                }
            })
            .collect()
    });
    Ok(SweepResult {
        full: spec.full,
        structured: spec.structured,
        rows,
    })
}
