//! Euler–Maruyama generation of discretely observed paths.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::model::{SamplingDesign, TrueDynamics};
use crate::noise::IncrementSampler;

/// Observations `X_{t_0}, …, X_{t_n}` on an equally spaced grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    values: Vec<f64>,
    design: SamplingDesign,
}

impl SamplePath {
    pub fn new(values: Vec<f64>, design: SamplingDesign) -> Result<Self> {
        if values.len() != design.n() + 1 {
            return Err(Error::Dimension {
                expected: design.n() + 1,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: i });
        }
        Ok(Self { values, design })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn design(&self) -> SamplingDesign {
        self.design
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn h(&self) -> f64 {
        self.design.h()
    }

    pub fn horizon(&self) -> f64 {
        self.design.horizon()
    }

    /// Iterator over `(X_{t_{j-1}}, Δ_j X)` for `j = 1..=n`.
    #[inline]
    pub fn steps(&self) -> impl ExactSizeIterator<Item = (f64, f64)> + '_ {
        self.values.windows(2).map(|w| (w[0], w[1] - w[0]))
    }

    pub fn increments(&self) -> Vec<f64> {
        self.steps().map(|(_, dx)| dx).collect()
    }

    /// Writes `t,x` rows with shortest round-trip float formatting.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,x")?;
        let h = self.h();
        for (j, x) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", j as f64 * h, x)?;
        }
        out.flush()
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv_from(file).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path, message),
            other => other,
        })
    }

    /// Parses a `t,x` table. The step is taken from the first two time stamps
    /// and the remaining stamps must lie on that grid.
    pub fn read_csv_from<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| Error::format("<input>", e))?
            .clone();
        if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "x" {
            return Err(Error::format("<input>", "expected header 't,x'"));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::format("<input>", e))?;
            let parse = |i: usize| {
                record[i].parse::<f64>().map_err(|e| {
                    Error::format("<input>", format!("row {}: {e}", line + 1))
                })
            };
            times.push(parse(0)?);
            values.push(parse(1)?);
        }
        if values.len() < 3 {
            return Err(Error::format("<input>", "need at least three observations"));
        }
        let h = times[1] - times[0];
        let n = values.len() - 1;
        for (j, t) in times.iter().enumerate() {
            let expected = times[0] + j as f64 * h;
            if (t - expected).abs() > 1e-9 * expected.abs().max(h) {
                return Err(Error::format(
                    "<input>",
                    format!("time stamp {t} at row {} is off the grid", j + 1),
                ));
            }
        }
        let design = SamplingDesign::new(n, h)?;
        Self::new(values, design)
    }
}

/// Euler–Maruyama with `substeps` micro-steps of size `h / substeps` per
/// observation interval; every `substeps`-th state is recorded.
pub fn simulate<R: RngCore + ?Sized>(
    dynamics: &TrueDynamics,
    design: SamplingDesign,
    substeps: usize,
    rng: &mut R,
) -> Result<SamplePath> {
    if substeps == 0 {
        return Err(Error::Parameter("substeps must be at least 1".into()));
    }
    let delta = design.h() / substeps as f64;
    let sampler = IncrementSampler::new(dynamics.noise, delta)?;
    let mut values = Vec::with_capacity(design.n() + 1);
    let mut x = dynamics.x0;
    if !x.is_finite() {
        return Err(Error::Divergence { step: 0 });
    }
    values.push(x);
    let mut step = 0;
    for _ in 0..design.n() {
        for _ in 0..substeps {
            step += 1;
            let dz = sampler.sample(rng);
            x += dynamics.drift(x) * delta + dynamics.scale(x) * dz;
            if !x.is_finite() {
                return Err(Error::Divergence { step });
            }
        }
        values.push(x);
    }
    SamplePath::new(values, design)
}
