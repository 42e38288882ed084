use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::output::round_sig;

#[derive(Debug, Parser)]
#[command(name = "gridshare", version, about = "Energy sharing market and dispatchable region tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the centralized dispatch.
    Dispatch(CaseArgs),
    /// Run the sharing market to equilibrium.
    Share(ShareArgs),
    /// Compute the dispatchable region of the prosumer outputs.
    Region(RegionArgs),
    /// Compare a region file against the feasibility LP on random samples.
    VerifyRegion(VerifyArgs),
    /// Evaluate the convergence condition on the market sensitivity.
    CheckC1(C1Args),
    /// Sweep one user's reported disutility coefficients.
    Misreport(MisreportArgs),
    /// Write the constraint matrices as CSV.
    DumpConstraints(CaseArgs),
}

#[derive(Debug, Args)]
pub struct CaseArgs {
    #[arg(long, value_name = "PATH")]
    pub case: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MarketArgs {
    /// Market sensitivity, overrides the case file.
    #[arg(long, value_name = "FLOAT")]
    pub a: Option<f64>,
    #[arg(long, value_name = "FLOAT")]
    pub eps: Option<f64>,
    #[arg(long, value_name = "INT")]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ShareArgs {
    #[command(flatten)]
    pub io: CaseArgs,
    #[command(flatten)]
    pub market: MarketArgs,
    /// Per-iteration bid trace (CSV).
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    /// Exit with status 1 when the iteration does not converge.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    #[command(flatten)]
    pub io: CaseArgs,
    /// Upper corner of the search box, one value per output.
    #[arg(long, value_name = "CSV-FLOATS", value_parser = parse_floats)]
    pub wmax: FloatList,
    #[arg(long, default_value_t = 0, value_name = "INT")]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub io: CaseArgs,
    /// Region file written by `region`.
    #[arg(long, value_name = "PATH")]
    pub region: PathBuf,
    #[arg(long, default_value_t = 1000, value_name = "INT")]
    pub samples: usize,
    #[arg(long, default_value_t = 0, value_name = "INT")]
    pub seed: u64,
    #[arg(long, default_value_t = 0, value_name = "INT")]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct C1Args {
    #[arg(long, value_name = "PATH")]
    pub case: PathBuf,
    #[arg(long, value_name = "FLOAT")]
    pub a: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MisreportArgs {
    #[command(flatten)]
    pub io: CaseArgs,
    #[command(flatten)]
    pub market: MarketArgs,
    /// Id of the misreporting user.
    #[arg(long, value_name = "ID")]
    pub user: i64,
    #[arg(long, value_name = "LO:HI:STEP", default_value = "0.2:4:0.2", value_parser = parse_range)]
    pub scale_range: ScaleRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl ScaleRange {
    /// `lo, lo + step, ...` up to and including `hi`, rounded to the output
    /// precision so 0.2:4:0.2 gives 0.6 rather than 0.6000000000000001.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| round_sig(self.lo + i as f64 * self.step)).collect()
    }
}

fn parse_float(s: &str) -> Result<f64, String> {
    let v = f64::from_str(s.trim()).map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_floats(s: &str) -> Result<FloatList, String> {
    s.split(',').map(parse_float).collect::<Result<_, _>>().map(FloatList)
}

fn parse_range(s: &str) -> Result<ScaleRange, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, step] = parts[..] else {
        return Err(format!("`{s}` should look like LO:HI:STEP"));
    };
    let r = ScaleRange {
        lo: parse_float(lo)?,
        hi: parse_float(hi)?,
        step: parse_float(step)?,
    };
    if r.step <= 0.0 || r.hi < r.lo {
        return Err(format!("`{s}` needs STEP > 0 and HI >= LO"));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_range_includes_end() {
        let r = parse_range("0.2:4:0.2").unwrap();
        let v = r.values();
        assert_eq!(v.len(), 20);
        assert_eq!(v[2], 0.6);
        assert_eq!(v[19], 4.0);
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        assert!(parse_range("1:0:0.1").is_err());
        assert!(parse_range("1:2").is_err());
        assert!(parse_range("0:1:0").is_err());
    }

    #[test]
    fn float_lists() {
        assert_eq!(parse_floats("5, 5").unwrap(), FloatList(vec![5.0, 5.0]));
        assert!(parse_floats("5,x").is_err());
        assert!(parse_floats("inf").is_err());
    }
}
