//! Roofline model: operational intensity of the Φ kernel variants, machine
//! peak performance, and the attainable-performance bound P = min(π, βI).

use std::fs;
use std::io::Write;
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes per word (double precision).
pub const WORD_BYTES: u128 = 8;

/// Exact rational used for cost-model quantities.
pub type Rational = Ratio<u128>;

/// Environment variable naming a directory of machine JSON files.
pub const MACHINE_DIR_ENV: &str = "CPAPR_MACHINE_DIR";

static BUILTIN_MACHINES: &str = include_str!("../data/machines.json");

/// Description of a target machine for the roofline bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub name: String,
    pub clock_ghz: f64,
    pub cores_per_socket: u32,
    pub ops_per_cycle: u32,
    pub sockets: u32,
    pub bandwidth_gbs: f64,
}

impl MachineSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = self.clock_ghz > 0.0
            && self.bandwidth_gbs > 0.0
            && self.cores_per_socket > 0
            && self.ops_per_cycle > 0
            && self.sockets > 0;
        if !positive || !self.clock_ghz.is_finite() || !self.bandwidth_gbs.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "machine {:?}: all parameters must be positive",
                self.name
            )));
        }
        Ok(())
    }

    /// Intensity at which the bandwidth and compute ceilings meet.
    pub fn balance_point(&self) -> f64 {
        peak_flops(self) / self.bandwidth_gbs
    }
}

/// Machines shipped with the crate.
pub fn builtin_machines() -> Vec<MachineSpec> {
    serde_json::from_str(BUILTIN_MACHINES).expect("bundled machine table is valid JSON")
}

pub fn builtin_machine(name: &str) -> Option<MachineSpec> {
    builtin_machines().into_iter().find(|m| m.name.eq_ignore_ascii_case(name))
}

/// Parses a machine file holding either one spec object or an array of them.
pub fn parse_machines(text: &str) -> Result<Vec<MachineSpec>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let machines: Vec<MachineSpec> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    for m in &machines {
        m.validate()?;
    }
    Ok(machines)
}

/// Loads the first machine from a JSON file.
pub fn load_machine(path: impl AsRef<Path>) -> Result<MachineSpec> {
    let path = path.as_ref();
    parse_machines(&fs::read_to_string(path)?)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidArgument(format!("{} lists no machines", path.display())))
}

/// π = clock × cores × ops per cycle × sockets, in GFLOP/s.
pub fn peak_flops(machine: &MachineSpec) -> f64 {
    let units = u64::from(machine.cores_per_socket) * u64::from(machine.ops_per_cycle) * u64::from(machine.sockets);
    machine.clock_ghz * units as f64
}

/// P = min(π, β·I) in GFLOP/s for intensity `intensity` in FLOP/byte.
pub fn attainable(machine: &MachineSpec, intensity: f64) -> f64 {
    peak_flops(machine).min(machine.bandwidth_gbs * intensity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostVariant {
    /// One nonzero per worker, atomic update per nonzero.
    BaseGpuStyle,
    /// Sorted chunks of `chunk` nonzeros with local accumulation.
    CpuChunked { chunk: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelCostModel {
    pub variant: CostVariant,
    pub rank: u32,
}

impl KernelCostModel {
    pub fn base(rank: u32) -> Self {
        KernelCostModel {
            variant: CostVariant::BaseGpuStyle,
            rank,
        }
    }

    pub fn chunked(rank: u32, chunk: u32) -> Self {
        KernelCostModel {
            variant: CostVariant::CpuChunked { chunk },
            rank,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || matches!(self.variant, CostVariant::CpuChunked { chunk: 0 }) {
            return Err(Error::InvalidArgument("rank and chunk size must be at least 1".into()));
        }
        Ok(())
    }

    /// Rounded intensity commonly quoted for this variant.
    pub fn quoted_intensity(&self) -> f64 {
        match self.variant {
            CostVariant::BaseGpuStyle => 0.125,
            CostVariant::CpuChunked { .. } => 0.27,
        }
    }

    pub fn label(&self) -> String {
        match self.variant {
            CostVariant::BaseGpuStyle => format!("base R={}", self.rank),
            CostVariant::CpuChunked { chunk } => format!("chunked R={} V={chunk}", self.rank),
        }
    }
}

/// Work in FLOPs and traffic in words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkTraffic {
    pub flops: Rational,
    pub words: Rational,
}

/// Base: W = nnz(4R + 2), Q = nnz(5R + 2).
/// Chunked: W = nnz(4R + R/V + 3), Q = nnz(6R + 2R/V + 3).
pub fn work_and_traffic(model: &KernelCostModel, nnz: u64) -> Result<WorkTraffic> {
    model.validate()?;
    let n = Rational::from_integer(u128::from(nnz));
    let r = Rational::from_integer(u128::from(model.rank));
    let int = |k: u128| Rational::from_integer(k);
    let (w, q) = match model.variant {
        CostVariant::BaseGpuStyle => (int(4) * r + int(2), int(5) * r + int(2)),
        CostVariant::CpuChunked { chunk } => {
            let r_over_v = r / int(u128::from(chunk));
            (int(4) * r + r_over_v + int(3), int(6) * r + int(2) * r_over_v + int(3))
        }
    };
    Ok(WorkTraffic {
        flops: n * w,
        words: n * q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intensity {
    /// W / (Q · 8) as an exact fraction.
    pub exact: Rational,
    pub value: f64,
    /// Rounded headline figure for the variant, for plot annotation.
    pub quoted: f64,
}

pub fn operational_intensity(model: &KernelCostModel, nnz: u64) -> Result<Intensity> {
    let wt = work_and_traffic(model, nnz)?;
    if wt.words == Rational::from_integer(0) {
        return Err(Error::InvalidArgument("zero memory traffic".into()));
    }
    let exact = wt.flops / (wt.words * Rational::from_integer(WORD_BYTES));
    Ok(Intensity {
        exact,
        value: ratio_to_f64(exact),
        quoted: model.quoted_intensity(),
    })
}

pub fn ratio_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Intensities sampled for the roof curve: 2^(k/8) for k in -56..=56.
pub fn roofline_samples() -> impl Iterator<Item = f64> {
    (-56..=56).map(|k| 2f64.powf(f64::from(k) / 8.0))
}

/// Writes roofline CSV with columns `I,P,kind,label`: the sampled roof
/// (`roof`), the balance point (`balance`), and for each kernel model a
/// `marker` row at its exact intensity plus a `quoted` row at its rounded
/// headline intensity.
pub fn emit_roofline<W: Write>(machine: &MachineSpec, models: &[KernelCostModel], mut out: W) -> Result<()> {
    machine.validate()?;
    writeln!(out, "I,P,kind,label")?;
    for i in roofline_samples() {
        writeln!(out, "{i:.9},{:.6},roof,{}", attainable(machine, i), machine.name)?;
    }
    let balance = machine.balance_point();
    writeln!(out, "{balance:.9},{:.6},balance,{}", peak_flops(machine), machine.name)?;
    for m in models {
        let oi = operational_intensity(m, 1)?;
        writeln!(out, "{:.9},{:.6},marker,{}", oi.value, attainable(machine, oi.value), m.label())?;
        writeln!(out, "{:.9},{:.6},quoted,{}", oi.quoted, attainable(machine, oi.quoted), m.label())?;
    }
    Ok(())
}

/// Finds a machine by file path, then as `<name>.json` in the directory
/// named by [`MACHINE_DIR_ENV`], then among the built-in machines.
pub fn resolve_machine(spec: &str) -> Result<MachineSpec> {
    let path = Path::new(spec);
    if path.is_file() {
        return load_machine(path);
    }
    let name = spec.strip_suffix(".json").unwrap_or(spec);
    if let Some(dir) = std::env::var_os(MACHINE_DIR_ENV) {
        let candidate = Path::new(&dir).join(format!("{name}.json"));
        if candidate.is_file() {
            return load_machine(candidate);
        }
    }
    let base = Path::new(name).file_name().and_then(|n| n.to_str()).unwrap_or(name);
    builtin_machine(base).ok_or_else(|| Error::InvalidArgument(format!("unknown machine {spec:?}")))
}

/// Gnuplot script plotting a CSV written by [`emit_roofline`].
pub fn roofline_gnuplot(csv_path: &str, machine: &MachineSpec) -> String {
    format!(
        "set datafile separator ','\n\
         set logscale xy 2\n\
         set xlabel 'operational intensity (FLOP/byte)'\n\
         set ylabel 'attainable GFLOP/s'\n\
         set title 'roofline: {name}'\n\
         set key left top\n\
         plot '{csv}' using (strcol(3) eq 'roof' ? $1 : 1/0):2 with lines title '{name}', \\\n\
         \x20    '{csv}' using (strcol(3) eq 'marker' ? $1 : 1/0):2 with points pt 5 title 'kernels', \\\n\
         \x20    '{csv}' using (strcol(3) eq 'quoted' ? $1 : 1/0):2 with points pt 4 title 'quoted', \\\n\
         \x20    '{csv}' using (strcol(3) eq 'balance' ? $1 : 1/0):2 with points pt 7 title 'balance'\n",
        name = machine.name,
        csv = csv_path
    )
}
