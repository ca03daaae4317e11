//! Benchmark data: GRF draws of `η` on the sensor grid, reference solutions
//! on the evaluation lattice, and the on-disk dataset format.

pub mod grf;
pub mod solvers;

use std::io::{self, Read, Write};

use ndarray::Array2;
use serde::Serialize;

use crate::hypernet::ParameterSample;
use crate::par::{try_map_range, Execution};
use crate::physics::{Benchmark, PdeProblem};
use crate::rng::SeedTree;
use crate::tensors::{invalid, read_f64s, read_u32, read_u64, write_f64s};

pub use grf::{grf_sample, GrfSampler, GrfSpec};
pub use solvers::{
    dopri5, linspace, solve_advection_reference, solve_antiderivative_reference,
    solve_burgers_reference, solve_diffusion_reference, Lattice, OdeOptions, ReferenceSolution,
    SolverMeta,
};

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Number of sensors on `[0, 1]`.
pub const DEFAULT_SENSORS: usize = 100;
/// Points per axis of the evaluation lattice.
pub const LATTICE_POINTS: usize = 100;

/// Evaluation lattice of a benchmark.
pub fn evaluation_lattice(bench: Benchmark) -> Lattice {
    if bench.is_time_dependent() {
        Lattice::new(LATTICE_POINTS, LATTICE_POINTS)
    } else {
        Lattice::new(LATTICE_POINTS, 1)
    }
}

/// Resolutions of the reference solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub ode: OdeOptions,
    pub advection_nx: usize,
    pub advection_cfl: f64,
    pub burgers_modes: usize,
    /// Intervals and time steps of the diffusion grid; multiples of the
    /// lattice spacing so that lattice nodes are grid nodes.
    pub diffusion_intervals: usize,
    pub diffusion_steps: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            ode: OdeOptions::default(),
            advection_nx: 512,
            advection_cfl: 0.9,
            burgers_modes: 256,
            diffusion_intervals: 396,
            diffusion_steps: 396,
        }
    }
}

/// Draws `η` for one benchmark on a fixed sensor grid.
#[derive(Debug, Clone)]
pub struct EtaGenerator {
    pub benchmark: Benchmark,
    pub sensors: Vec<f64>,
    sampler: GrfSampler,
}

impl EtaGenerator {
    /// Burgers draws from the periodic kernel on all sensors but the last,
    /// which repeats the first so that `η(0) = η(1)`.
    pub fn new(benchmark: Benchmark, m: usize) -> Result<Self, ProblemError> {
        if m < 2 {
            return Err(ProblemError::Config(format!(
                "need at least 2 sensors, got {m}"
            )));
        }
        let sensors = linspace(m);
        let spec = match benchmark {
            Benchmark::Burgers => {
                GrfSpec::new(benchmark.length_scale(), sensors[..m - 1].to_vec()).periodic()
            }
            _ => GrfSpec::new(benchmark.length_scale(), sensors.clone()),
        };
        Ok(Self {
            benchmark,
            sensors,
            sampler: GrfSampler::new(&spec)?,
        })
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> ParameterSample {
        let g = self.sampler.sample(rng);
        let values = match self.benchmark {
            // Affine map keeps the transport speed positive.
            Benchmark::Advection => g.iter().map(|v| 1.0 + 0.2 * v).collect(),
            Benchmark::Burgers => {
                let mut v = g.clone();
                v.push(g[0]);
                v
            }
            _ => g,
        };
        ParameterSample {
            values,
            sensors: self.sensors.clone(),
        }
    }
}

/// Reference solution for `eta` on the benchmark's evaluation lattice.
pub fn reference_solution(
    bench: Benchmark,
    eta: &ParameterSample,
    settings: &SolverSettings,
) -> Result<ReferenceSolution, ProblemError> {
    eta.validate()
        .map_err(|e| ProblemError::Config(e.to_string()))?;
    if eta.sensors.first() != Some(&0.0) || eta.sensors.last() != Some(&1.0) {
        return Err(ProblemError::Config("sensors must span [0, 1]".into()));
    }
    let f = |x: f64| {
        eta.interpolate(x.clamp(0.0, 1.0))
            .expect("sensors span [0, 1]")
    };
    let lattice = evaluation_lattice(bench);
    let problem = PdeProblem::new(bench);
    match bench {
        Benchmark::Antiderivative => solve_antiderivative_reference(f, &lattice, settings.ode),
        Benchmark::Advection => {
            solve_advection_reference(f, settings.advection_nx, settings.advection_cfl, &lattice)
        }
        Benchmark::Burgers => {
            solve_burgers_reference(f, problem.nu, settings.burgers_modes, &lattice)
        }
        Benchmark::Diffusion => solve_diffusion_reference(
            f,
            problem.diffusivity,
            problem.reaction,
            settings.diffusion_intervals,
            settings.diffusion_steps,
            &lattice,
        ),
    }
}

/// One `η` with its reference field `field[[t, x]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    pub eta: Vec<f64>,
    pub field: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub benchmark: Benchmark,
    pub sensors: Vec<f64>,
    pub lattice: Lattice,
    pub samples: Vec<DataSample>,
}

const DATASET_MAGIC: &[u8; 4] = b"LFRD";
const DATASET_VERSION: u32 = 1;

/// Per-run generation record, written next to the dataset.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationReport {
    pub benchmark: Benchmark,
    pub seed: u64,
    pub n_samples: usize,
    pub sensors: usize,
    pub grf_length_scale: f64,
    pub grf_jitter: f64,
    pub solver: Vec<SolverMeta>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn eta(&self, i: usize) -> ParameterSample {
        ParameterSample {
            values: self.samples[i].eta.clone(),
            sensors: self.sensors.clone(),
        }
    }

    /// Draws `n` samples from the stream `data`, one sub-stream per sample.
    pub fn generate(
        bench: Benchmark,
        n: usize,
        seed: u64,
        settings: &SolverSettings,
        exec: Execution,
    ) -> Result<(Self, GenerationReport), ProblemError> {
        if n == 0 {
            return Err(ProblemError::Config("sample count must be positive".into()));
        }
        let gen = EtaGenerator::new(bench, DEFAULT_SENSORS)?;
        let seeds = SeedTree::new(seed);
        let out = try_map_range(exec, n, |i| {
            let eta = gen.sample(&mut seeds.stream("data", i as u64));
            let sol = reference_solution(bench, &eta, settings)?;
            Ok::<_, ProblemError>((
                DataSample {
                    eta: eta.values,
                    field: sol.values,
                },
                sol.meta,
            ))
        })?;
        let (samples, solver): (Vec<_>, Vec<_>) = out.into_iter().unzip();
        let report = GenerationReport {
            benchmark: bench,
            seed,
            n_samples: n,
            sensors: gen.sensors.len(),
            grf_length_scale: bench.length_scale(),
            grf_jitter: gen.sampler.jitter,
            solver,
        };
        Ok((
            Self {
                benchmark: bench,
                sensors: gen.sensors,
                lattice: evaluation_lattice(bench),
                samples,
            },
            report,
        ))
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(DATASET_MAGIC)?;
        for v in [
            DATASET_VERSION,
            self.benchmark.id(),
            self.sensors.len() as u32,
            self.lattice.x.len() as u32,
            self.lattice.t.len() as u32,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        write_f64s(out, &self.sensors)?;
        write_f64s(out, &self.lattice.x)?;
        write_f64s(out, &self.lattice.t)?;
        for s in &self.samples {
            write_f64s(out, &s.eta)?;
            write_f64s(out, s.field.as_slice().expect("standard layout"))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to memory");
        v
    }

    pub fn read_from<R: Read>(input: &mut R) -> io::Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(invalid("not a dataset file (bad magic)"));
        }
        let version = read_u32(input)?;
        if version != DATASET_VERSION {
            return Err(invalid(&format!("unsupported dataset version {version}")));
        }
        let bench =
            Benchmark::from_id(read_u32(input)?).ok_or_else(|| invalid("unknown benchmark id"))?;
        let m = read_u32(input)? as usize;
        let nx = read_u32(input)? as usize;
        let nt = read_u32(input)? as usize;
        let n = read_u64(input)? as usize;
        if m == 0 || nx == 0 || nt == 0 || m > 1 << 20 || nx * nt > 1 << 26 {
            return Err(invalid("implausible dataset dimensions"));
        }
        let sensors = read_f64s(input, m)?;
        let x = read_f64s(input, nx)?;
        let t = read_f64s(input, nt)?;
        let mut samples = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let eta = read_f64s(input, m)?;
            let field =
                Array2::from_shape_vec((nt, nx), read_f64s(input, nt * nx)?).expect("sized");
            samples.push(DataSample { eta, field });
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(invalid("trailing bytes after dataset"));
        }
        Ok(Self {
            benchmark: bench,
            sensors,
            lattice: Lattice { x, t },
            samples,
        })
    }

    pub fn load(path: &std::path::Path) -> io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_generators_respect_their_constraints() {
        let seeds = SeedTree::new(3);
        let adv = EtaGenerator::new(Benchmark::Advection, 100).unwrap();
        let a = adv.sample(&mut seeds.stream("data", 0));
        assert!(a.values.iter().all(|&v| v > 0.0));
        let burg = EtaGenerator::new(Benchmark::Burgers, 100).unwrap();
        let b = burg.sample(&mut seeds.stream("data", 0));
        assert_eq!(b.values[0], b.values[99]);
        assert_eq!(b.m(), 100);
    }

    #[test]
    fn dataset_round_trips_bit_exactly() {
        let settings = SolverSettings {
            diffusion_intervals: 99,
            diffusion_steps: 99,
            ..Default::default()
        };
        for bench in [Benchmark::Antiderivative, Benchmark::Diffusion] {
            let (ds, report) =
                Dataset::generate(bench, 3, 42, &settings, Execution::Sequential).unwrap();
            assert_eq!(report.solver.len(), 3);
            let bytes = ds.to_bytes();
            assert_eq!(&bytes[..4], b"LFRD");
            let back = Dataset::read_from(&mut bytes.as_slice()).unwrap();
            assert_eq!(back.to_bytes(), bytes);
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn generation_is_independent_of_execution_mode() {
        let s = SolverSettings::default();
        let (a, _) =
            Dataset::generate(Benchmark::Antiderivative, 8, 1, &s, Execution::Sequential).unwrap();
        let (b, _) =
            Dataset::generate(Benchmark::Antiderivative, 8, 1, &s, Execution::available()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn zero_samples_is_a_config_error() {
        let r = Dataset::generate(
            Benchmark::Antiderivative,
            0,
            1,
            &SolverSettings::default(),
            Execution::Sequential,
        );
        assert!(matches!(r, Err(ProblemError::Config(_))));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (ds, _) = Dataset::generate(
            Benchmark::Antiderivative,
            1,
            1,
            &SolverSettings::default(),
            Execution::Sequential,
        )
        .unwrap();
        let mut bytes = ds.to_bytes();
        bytes[0] = b'X';
        assert!(Dataset::read_from(&mut bytes.as_slice()).is_err());
        let mut bytes = ds.to_bytes();
        bytes.push(0);
        assert!(Dataset::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn antiderivative_reference_is_exact_for_piecewise_linear_forcing() {
        // Trapezoid sums integrate the linear interpolant exactly.
        let gen = EtaGenerator::new(Benchmark::Antiderivative, 100).unwrap();
        let eta = gen.sample(&mut SeedTree::new(8).stream("data", 0));
        let sol = reference_solution(Benchmark::Antiderivative, &eta, &SolverSettings::default())
            .unwrap();
        let mut acc = 0.0;
        for i in 0..100 {
            if i > 0 {
                acc += 0.5
                    * (eta.values[i] + eta.values[i - 1])
                    * (eta.sensors[i] - eta.sensors[i - 1]);
            }
            assert!((sol.values[[0, i]] - acc).abs() < 1e-8, "{i}");
        }
    }
}
