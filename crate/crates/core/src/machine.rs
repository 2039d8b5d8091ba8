//! Hardware descriptions, performance/power samples and the simple
//! analytical models built on them: roofline bound, static-power
//! regression, frequency scaling factors and LLC problem sizing.
//!
//! A [`SampleSet`] lives in two files: machine specs in a TOML document
//! (`<stem>.toml`) and samples in a CSV (`<stem>.csv`) with header
//! `machine,active_cores,freq_ghz,problem_class,gflops,watts,provenance`.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Flops per byte of a double-precision gemv: 2 flops per 8-byte entry.
pub const GEMV_ARITHMETIC_INTENSITY: f64 = 0.25;

pub const MIB: u64 = 1 << 20;

pub const SAMPLE_HEADER: &str = "machine,active_cores,freq_ghz,problem_class,gflops,watts,provenance";

const BUNDLED_SPECS: &str = include_str!("../fixtures/paper.toml");
const BUNDLED_SAMPLES: &str = include_str!("../fixtures/paper.csv");

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: line {line}: {message}")]
    Parse { file: String, line: u64, message: String },
    #[error("{file}: line {line}: sample references unknown machine '{machine}'")]
    UnknownMachine { file: String, line: u64, machine: String },
    #[error("{file}: line {line}: duplicate sample key ({key})")]
    DuplicateSample { file: String, line: u64, key: String },
    #[error("invalid machine spec '{name}': {message}")]
    InvalidSpec { name: String, message: String },
    #[error("duplicate machine spec '{0}'")]
    DuplicateSpec(String),
    #[error("static power fit needs at least 2 distinct core counts, got {0}")]
    InsufficientData(usize),
    #[error("samples do not share one {0}")]
    MixedSamples(&'static str),
    #[error("samples differ in {0}; scaling factors need identical machine, cores and problem class")]
    MismatchedKeys(&'static str),
    #[error("cannot write {what}: {message}")]
    Serialize { what: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub name: String,
    pub cores_per_unit: u32,
    pub freq_min: f64,
    pub freq_max: f64,
    pub llc_bytes: u64,
    /// GB/s with GB = 10⁹ bytes.
    pub stream_bandwidth: f64,
}

impl MachineSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |message: &str| {
            Err(ModelError::InvalidSpec {
                name: self.name.clone(),
                message: message.to_string(),
            })
        };
        if self.name.is_empty() {
            return bad("empty name");
        }
        if self.cores_per_unit == 0 || self.llc_bytes == 0 {
            return bad("cores_per_unit and llc_bytes must be positive");
        }
        if !(self.freq_min > 0.0 && self.freq_max.is_finite() && self.freq_min <= self.freq_max) {
            return bad("frequencies must satisfy 0 < freq_min <= freq_max");
        }
        if !(self.stream_bandwidth > 0.0 && self.stream_bandwidth.is_finite()) {
            return bad("stream_bandwidth must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemClass {
    OnChip,
    OffChip,
}

impl fmt::Display for ProblemClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemClass::OnChip => "on_chip",
            ProblemClass::OffChip => "off_chip",
        })
    }
}

impl FromStr for ProblemClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "on_chip" => Ok(ProblemClass::OnChip),
            "off_chip" => Ok(ProblemClass::OffChip),
            _ => Err(format!("unknown problem class '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Paper,
    Derived,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfSample {
    pub machine: String,
    pub active_cores: u32,
    #[serde(rename = "freq_ghz")]
    pub freq: f64,
    pub problem_class: ProblemClass,
    pub gflops: f64,
    pub watts: f64,
    pub provenance: Provenance,
}

impl PerfSample {
    fn key(&self) -> String {
        format!(
            "{}:{}:{}:{}",
            self.machine, self.active_cores, self.freq, self.problem_class
        )
    }
}

/// GFLOPS and watts of one operating configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub gflops: f64,
    pub watts: f64,
}

impl OperatingPoint {
    pub fn new(gflops: f64, watts: f64) -> Self {
        Self { gflops, watts }
    }

    pub fn gflops_per_watt(&self) -> f64 {
        self.gflops / self.watts
    }
}

impl From<&PerfSample> for OperatingPoint {
    fn from(s: &PerfSample) -> Self {
        Self {
            gflops: s.gflops,
            watts: s.watts,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SpecDocument {
    #[serde(default, rename = "machine")]
    machines: Vec<MachineSpec>,
}

/// Machine specs plus the samples measured on them. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    specs: Vec<MachineSpec>,
    samples: Vec<PerfSample>,
}

impl SampleSet {
    /// Validates references and key uniqueness.
    pub fn new(specs: Vec<MachineSpec>, samples: Vec<PerfSample>) -> Result<Self, ModelError> {
        let mut names = HashSet::new();
        for spec in &specs {
            spec.validate()?;
            if !names.insert(spec.name.as_str()) {
                return Err(ModelError::DuplicateSpec(spec.name.clone()));
            }
        }
        let mut keys = HashSet::new();
        for (i, s) in samples.iter().enumerate() {
            // +2: header line and 1-based numbering
            let line = i as u64 + 2;
            check_sample(s, "samples", line)?;
            if !names.contains(s.machine.as_str()) {
                return Err(ModelError::UnknownMachine {
                    file: "samples".into(),
                    line,
                    machine: s.machine.clone(),
                });
            }
            if !keys.insert(s.key()) {
                return Err(ModelError::DuplicateSample {
                    file: "samples".into(),
                    line,
                    key: s.key(),
                });
            }
        }
        Ok(Self { specs, samples })
    }

    /// The reference fixture compiled into the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_SPECS, "paper.toml", BUNDLED_SAMPLES, "paper.csv").expect("bundled fixture is valid")
    }

    pub fn parse(
        specs_text: &str,
        specs_name: &str,
        samples_text: &str,
        samples_name: &str,
    ) -> Result<Self, ModelError> {
        let specs = parse_specs(specs_text, specs_name)?;
        let names: HashSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        let samples = parse_samples(samples_text, samples_name, &names)?;
        Ok(Self { specs, samples })
    }

    pub fn specs(&self) -> &[MachineSpec] {
        &self.specs
    }

    pub fn samples(&self) -> &[PerfSample] {
        &self.samples
    }

    pub fn spec(&self, name: &str) -> Option<&MachineSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn machine_names(&self) -> Vec<&str> {
        self.specs.iter().map(|s| s.name.as_str()).collect()
    }

    /// Frequencies match to 1e-9 GHz.
    pub fn find(&self, machine: &str, cores: u32, freq: f64, class: ProblemClass) -> Option<&PerfSample> {
        self.samples.iter().find(|s| {
            s.machine == machine && s.active_cores == cores && s.problem_class == class && (s.freq - freq).abs() < 1e-9
        })
    }

    pub fn samples_for<'a>(&'a self, machine: &'a str) -> impl Iterator<Item = &'a PerfSample> + 'a {
        self.samples.iter().filter(move |s| s.machine == machine)
    }

    pub fn specs_to_string(&self) -> Result<String, ModelError> {
        let doc = SpecDocument {
            machines: self.specs.clone(),
        };
        toml::to_string(&doc).map_err(|e| ModelError::Serialize {
            what: "machine specs",
            message: e.to_string(),
        })
    }

    pub fn samples_to_string(&self) -> Result<String, ModelError> {
        let mut writer = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
        let ser_err = |e: csv::Error| ModelError::Serialize {
            what: "samples",
            message: e.to_string(),
        };
        if self.samples.is_empty() {
            return Ok(format!("{SAMPLE_HEADER}\n"));
        }
        for s in &self.samples {
            writer.serialize(s).map_err(ser_err)?;
        }
        let bytes = writer.into_inner().map_err(|e| ModelError::Serialize {
            what: "samples",
            message: e.to_string(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

fn check_sample(s: &PerfSample, file: &str, line: u64) -> Result<(), ModelError> {
    let bad = |message: String| ModelError::Parse {
        file: file.to_string(),
        line,
        message,
    };
    if s.active_cores == 0 {
        return Err(bad("active_cores must be >= 1".into()));
    }
    if !(s.freq > 0.0 && s.freq.is_finite()) {
        return Err(bad(format!("freq_ghz must be positive, got {}", s.freq)));
    }
    if !(s.gflops > 0.0 && s.gflops.is_finite()) {
        return Err(bad(format!("gflops must be positive, got {}", s.gflops)));
    }
    if !(s.watts > 0.0 && s.watts.is_finite()) {
        return Err(bad(format!("watts must be positive, got {}", s.watts)));
    }
    Ok(())
}

fn parse_specs(text: &str, file: &str) -> Result<Vec<MachineSpec>, ModelError> {
    let doc: SpecDocument = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|span| text[..span.start.min(text.len())].matches('\n').count() as u64 + 1)
            .unwrap_or(0);
        ModelError::Parse {
            file: file.to_string(),
            line,
            message: e.message().to_string(),
        }
    })?;
    let mut seen = HashSet::new();
    for spec in &doc.machines {
        spec.validate()?;
        if !seen.insert(spec.name.clone()) {
            return Err(ModelError::DuplicateSpec(spec.name.clone()));
        }
    }
    Ok(doc.machines)
}

fn parse_samples(text: &str, file: &str, machines: &HashSet<&str>) -> Result<Vec<PerfSample>, ModelError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let parse_err = |line: u64, message: String| ModelError::Parse {
        file: file.to_string(),
        line,
        message,
    };

    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let header_line = headers.iter().collect::<Vec<_>>().join(",");
    if header_line != SAMPLE_HEADER {
        return Err(parse_err(
            1,
            format!("expected header '{SAMPLE_HEADER}', found '{header_line}'"),
        ));
    }

    let mut samples = Vec::new();
    let mut keys = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let sample: PerfSample = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        check_sample(&sample, file, line)?;
        if !machines.contains(sample.machine.as_str()) {
            return Err(ModelError::UnknownMachine {
                file: file.to_string(),
                line,
                machine: sample.machine,
            });
        }
        if !keys.insert(sample.key()) {
            return Err(ModelError::DuplicateSample {
                file: file.to_string(),
                line,
                key: sample.key(),
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Path of the spec document paired with a samples CSV.
pub fn specs_path_for(samples_path: &Path) -> PathBuf {
    samples_path.with_extension("toml")
}

/// Loads `path` (samples CSV) together with its sibling `<stem>.toml`.
pub fn load_sampleset(path: &Path) -> Result<SampleSet, ModelError> {
    let specs_path = specs_path_for(path);
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|source| ModelError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let specs_text = read(&specs_path)?;
    let samples_text = read(path)?;
    SampleSet::parse(
        &specs_text,
        &specs_path.display().to_string(),
        &samples_text,
        &path.display().to_string(),
    )
}

/// Writes `path` (samples CSV) and its sibling `<stem>.toml`.
pub fn save_sampleset(set: &SampleSet, path: &Path) -> Result<(), ModelError> {
    let write = |p: &Path, text: String| {
        std::fs::write(p, text).map_err(|source| ModelError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    write(&specs_path_for(path), set.specs_to_string()?)?;
    write(path, set.samples_to_string()?)
}

/// Memory-bound roofline: bandwidth × arithmetic intensity.
pub fn roofline_gflops(spec: &MachineSpec, arithmetic_intensity: f64) -> f64 {
    spec.stream_bandwidth * arithmetic_intensity
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerFit {
    /// Static power, W.
    pub intercept: f64,
    /// W per active core.
    pub slope: f64,
    pub r_squared: f64,
}

impl PowerFit {
    pub fn predict(&self, cores: f64) -> f64 {
        self.intercept + self.slope * cores
    }
}

/// Ordinary least squares of watts against active cores for one machine
/// and frequency.
pub fn static_power_fit(samples: &[PerfSample]) -> Result<PowerFit, ModelError> {
    if let Some(first) = samples.first() {
        if samples.iter().any(|s| s.machine != first.machine) {
            return Err(ModelError::MixedSamples("machine"));
        }
        if samples.iter().any(|s| (s.freq - first.freq).abs() > 1e-9) {
            return Err(ModelError::MixedSamples("frequency"));
        }
    }
    let distinct: HashSet<u32> = samples.iter().map(|s| s.active_cores).collect();
    if distinct.len() < 2 {
        return Err(ModelError::InsufficientData(distinct.len()));
    }

    let count = samples.len() as f64;
    let mean_x = samples.iter().map(|s| s.active_cores as f64).sum::<f64>() / count;
    let mean_y = samples.iter().map(|s| s.watts).sum::<f64>() / count;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for s in samples {
        let dx = s.active_cores as f64 - mean_x;
        let dy = s.watts - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = samples
        .iter()
        .map(|s| {
            let e = s.watts - (intercept + slope * s.active_cores as f64);
            e * e
        })
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(PowerFit {
        intercept,
        slope,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFactors {
    pub perf_factor: f64,
    pub power_factor: f64,
    pub freq_factor: f64,
}

impl ScalingFactors {
    /// Ratio of GFLOPS/W at `high` over `low`.
    pub fn efficiency_factor(&self) -> f64 {
        self.perf_factor / self.power_factor
    }
}

/// `high / low` ratios of throughput, power and frequency.
pub fn scaling_factors(low: &PerfSample, high: &PerfSample) -> Result<ScalingFactors, ModelError> {
    if low.machine != high.machine {
        return Err(ModelError::MismatchedKeys("machine"));
    }
    if low.active_cores != high.active_cores {
        return Err(ModelError::MismatchedKeys("active_cores"));
    }
    if low.problem_class != high.problem_class {
        return Err(ModelError::MismatchedKeys("problem_class"));
    }
    Ok(ScalingFactors {
        perf_factor: high.gflops / low.gflops,
        power_factor: high.watts / low.watts,
        freq_factor: high.freq / low.freq,
    })
}

pub fn gflops_per_watt(sample: &PerfSample) -> f64 {
    sample.gflops / sample.watts
}

/// Largest `n` whose `n×n` double matrix fits in `llc_bytes`.
pub fn max_onchip_n(llc_bytes: u64) -> u64 {
    (llc_bytes / 8).isqrt()
}
