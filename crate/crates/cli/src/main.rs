use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use hzeq::baselines::{epsilon_example, mechanism_report, rsd_four_agent_example, rsd_interim, GameOptions, ReportOptions};
use hzeq::demand::{clearing_allocation, free_disposal_equilibrium, gross_substitute_violation_demo};
use hzeq::market::exact_matrix;
use hzeq::rational::{format_rational, q, Q};
use hzeq::solver_agents::{solve_fixed_agents, AgentsOptions, MAX_AGENTS};
use hzeq::solver_goods::{solve_fixed_goods, GoodsOptions, MAX_GOODS};
use hzeq::verify::{check_pareto_efficient, verify_equilibrium, verify_exact, Candidate, ParetoVerdict, VerifyMode};
use hzeq::{Error, Market};

#[derive(Parser)]
#[command(name = "hzeq", version, about = "Equilibria of equal-income matching markets")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algo {
    Auto,
    FixedAgents,
    FixedGoods,
}

#[derive(clap::Args)]
struct Common {
    /// Instance file.
    #[arg(long)]
    input: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Certified-mode precision exponent.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(8..=128))]
    eps_bits: u32,
    /// Seed for oracle restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute equilibria and write their certificates.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Algo::Auto)]
        algo: Algo,
        /// Try every structure (two agents, few items).
        #[arg(long)]
        full_enum: bool,
    },
    /// Check a candidate (prices, allocation) and write its certificate.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Candidate file with `prices` and `allocation`.
        #[arg(long)]
        candidate: PathBuf,
    },
    /// Print one of the worked examples: gs-violation, free-disposal, rsd-inefficiency.
    Demo {
        name: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare RSD, PS and an equilibrium on a unit-capacity instance.
    Mechanisms {
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse(_)
        | Error::EmptyMarket
        | Error::NegativeValue(_)
        | Error::CapacityMismatch { .. }
        | Error::DimensionMismatch(_)
        | Error::UnknownDemo(_) => 2,
        Error::IncompleteSearch(_) => 3,
        Error::NonUniqueTopItem { .. }
        | Error::TooManyAgents { .. }
        | Error::TooManyItems { .. }
        | Error::NonUnitCapacities
        | Error::PreconditionViolated(_) => 4,
        Error::IndeterminateSign(_) => 5,
        _ => 1,
    }
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write(path: Option<&Path>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => fs::write(p, format!("{text}\n")).map_err(|e| Error::Parse(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn oracle(seed: u64) -> GameOptions {
    GameOptions { seed, ..GameOptions::default() }
}

fn solve(c: &Common, algo: Algo, full_enum: bool) -> Result<u8, Error> {
    let market = Market::from_json(&read(&c.input)?)?;
    let (n, m) = (market.n(), market.m());
    let algo = match algo {
        Algo::Auto if m <= n.min(MAX_GOODS) => Algo::FixedGoods,
        Algo::Auto if n <= MAX_AGENTS => Algo::FixedAgents,
        Algo::Auto => {
            return Err(Error::PreconditionViolated(format!(
                "{n} agents and {m} items: need m <= min(n, {MAX_GOODS}) or n <= {MAX_AGENTS}"
            )))
        }
        a => a,
    };
    let certs = match algo {
        Algo::FixedGoods => solve_fixed_goods(&market, &GoodsOptions { oracle: oracle(c.seed), eps_bits: c.eps_bits, ..GoodsOptions::default() })?,
        _ => solve_fixed_agents(&market, &AgentsOptions { oracle: oracle(c.seed), eps_bits: c.eps_bits, full_enum, ..AgentsOptions::default() })?,
    };
    let verified: Vec<_> = certs.into_iter().filter(|c| c.equilibrium).collect();
    eprintln!("{} verified certificate(s)", verified.len());
    write(c.output.as_deref(), &serde_json::to_string_pretty(&verified).expect("certificates serialize"))?;
    Ok(if verified.is_empty() { 1 } else { 0 })
}

fn verify(c: &Common, candidate: &Path) -> Result<u8, Error> {
    let market = Market::from_json(&read(&c.input)?)?;
    let cand: Candidate = serde_json::from_str(&read(candidate)?).map_err(|e| Error::Parse(e.to_string()))?;
    if cand.prices.len() != market.m() || cand.allocation.len() != market.n() || cand.allocation.iter().any(|r| r.len() != market.m()) {
        return Err(Error::DimensionMismatch("candidate does not match the instance".into()));
    }
    if let Some(x) = exact_matrix(&cand.allocation) {
        if let Some(i) = x.iter().position(|r| r.iter().sum::<Q>() != Q::from_integer(1.into())) {
            return Err(Error::Parse(format!("allocation row {i} does not sum to 1")));
        }
    }
    let cert = verify_equilibrium(&market, &cand.prices, &cand.allocation, VerifyMode::Certified { eps_bits: c.eps_bits })
        .and_then(|cert| match (hzeq::market::exact_vec(&cand.prices), exact_matrix(&cand.allocation)) {
            (Some(p), Some(x)) => verify_exact(&market, &p, &x),
            _ => Ok(cert),
        })?;
    for v in cert.verdicts.iter().filter(|v| !v.passed) {
        eprintln!("failed {}: {}", v.name, v.witness.as_ref().map_or("", |w| w.note.as_str()));
    }
    write(c.output.as_deref(), &cert.to_json())?;
    Ok(if cert.equilibrium { 0 } else { 1 })
}

fn strs(v: &[Q]) -> Vec<String> {
    v.iter().map(format_rational).collect()
}

fn mat(x: &[Vec<Q>]) -> Vec<Vec<String>> {
    x.iter().map(|r| strs(r)).collect()
}

fn demo(name: &str, output: Option<&Path>) -> Result<u8, Error> {
    let report = match name {
        "gs-violation" => {
            let (hi, lo, d) = (q(3, 2), q(1, 2), q(1, 4));
            let r = gross_substitute_violation_demo(&hi, &lo, &d)?;
            eprintln!(
                "raising the cheap item's price {} -> {}: expensive share {} -> {}, cheap share {} -> {}",
                format_rational(&lo),
                format_rational(&(&lo + &d)),
                format_rational(&r.share_high_before),
                format_rational(&r.share_high_after),
                format_rational(&r.share_low_before),
                format_rational(&r.share_low_after)
            );
            json!({ "demo": name, "p_high": format_rational(&hi), "p_low": format_rational(&lo), "delta": format_rational(&d), "report": r })
        }
        "free-disposal" => {
            let market = Market::from_ints(&[&[2, 1], &[0, 1]], &[1, 1])?;
            let p = vec![q(1, 2), q(3, 2)];
            let x = vec![vec![q(1, 1), q(1, 3)], vec![q(0, 1), q(2, 3)]];
            let disposal = free_disposal_equilibrium(&market, &p, &x)?;
            let clearing = clearing_allocation(&market, &p)?;
            eprintln!(
                "prices (1/2, 3/2): free disposal {}, matching {}",
                if disposal { "equilibrium" } else { "not an equilibrium" },
                if clearing.is_some() { "equilibrium" } else { "not an equilibrium (no clearing allocation)" }
            );
            json!({
                "demo": name,
                "prices": strs(&p),
                "free_disposal": { "allocation": mat(&x), "equilibrium": disposal },
                "matching": { "clearing_allocation": clearing.as_deref().map(mat), "equilibrium": clearing.is_some() },
            })
        }
        "rsd-inefficiency" => {
            let four = rsd_interim(&rsd_four_agent_example())?;
            let eps = q(1, 4);
            let three_market = epsilon_example(&eps);
            let three = rsd_interim(&three_market)?;
            let witness = match check_pareto_efficient(&three_market, &three) {
                ParetoVerdict::Efficient => None,
                ParetoVerdict::Dominated { witness } => Some(mat(&witness)),
            };
            eprintln!("four agents: x_12 = {}, x_21 = {}", format_rational(&four[0][1]), format_rational(&four[1][0]));
            eprintln!("three agents, eps = 1/4: RSD {}", if witness.is_some() { "Pareto-dominated" } else { "efficient" });
            json!({
                "demo": name,
                "four_agents": { "rsd": mat(&four), "x_12": format_rational(&four[0][1]), "x_21": format_rational(&four[1][0]) },
                "three_agents": { "epsilon": format_rational(&eps), "rsd": mat(&three), "dominating_allocation": witness },
            })
        }
        other => return Err(Error::UnknownDemo(other.to_string())),
    };
    write(output, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(0)
}

fn mechanisms(c: &Common) -> Result<u8, Error> {
    let market = Market::from_json(&read(&c.input)?)?;
    let report = mechanism_report(&market, &ReportOptions { oracle: oracle(c.seed), eps_bits: c.eps_bits, ..ReportOptions::default() })?;
    for o in report.outcomes() {
        eprintln!(
            "{:<12} utilities {:?} pareto {} envy-free {}",
            o.mechanism,
            strs(&o.utilities),
            o.pareto_efficient,
            o.envy_free
        );
    }
    write(c.output.as_deref(), &report.to_json())?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Solve { common, algo, full_enum } => solve(common, *algo, *full_enum),
        Cmd::Verify { common, candidate } => verify(common, candidate),
        Cmd::Demo { name, output } => demo(name, output.as_deref()),
        Cmd::Mechanisms { common } => mechanisms(common),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
