//! `opfbound`: bounds for AC optimal power flow from the command line.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use opfbound::chordal::{chordal_extend, merge_cliques, CliqueDecomposition};
use opfbound::conic::{SolveOptions, SolveStatus};
use opfbound::fastbound::SIMPLIFIED_GAP_TOL;
use opfbound::relaxations::{check_exactness, solve_dual_sdp, solve_socp, SdpSolveResult};
use opfbound::{
    build_admittance, build_matrix_set, run_with_local, solve_local, BoundReport, FastboundOptions, LocalOptions,
    LocalSolution, NetworkCase, OpfMatrixSet,
};

use report::{CliqueStats, Report, Row};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Local solve only.
    Local,
    /// Full chordal SDP relaxation.
    Sdp,
    /// Branch-wise SOCP relaxation.
    Socp,
    /// Bound from the local solution and a partial SDP.
    Fastbound,
    /// Local, fastbound, SDP and SOCP side by side.
    Compare,
    /// Fastbound over a list of sigma values.
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Relaxation {
    Sdp,
    Socp,
}

#[derive(Debug, Parser)]
#[command(name = "opfbound", version, about = "Lower bounds for AC optimal power flow")]
struct Cli {
    #[arg(value_enum)]
    mode: Mode,
    /// MATPOWER-style case file (`.m`), or a JSON case.
    case: PathBuf,
    /// Share of cliques treated as problematic, in percent.
    #[arg(long, default_value_t = 20.0, value_parser = percent)]
    sigma: f64,
    /// Sigma values for `sweep`, in percent.
    #[arg(long, value_delimiter = ',', value_parser = percent,
          default_value = "0,10,20,30,40,50,60,70,80,90,100")]
    sigmas: Vec<f64>,
    /// Sigma increment after an infeasible partial solve, in percent.
    #[arg(long, default_value_t = 20.0, value_parser = percent)]
    escalation_step: f64,
    /// Also solve the full SDP (fastbound mode).
    #[arg(long)]
    compare_sdp: bool,
    /// Also solve the SOCP relaxation (fastbound mode).
    #[arg(long)]
    compare_socp: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    report: Format,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Merge adjacent cliques whose fill cost is at most this.
    #[arg(long)]
    merge_cliques: Option<usize>,
    /// Largest clique that merging may create.
    #[arg(long, default_value_t = 16)]
    merge_max_size: usize,
    /// Local solution (JSON) to use instead of solving.
    #[arg(long)]
    local_solution: Option<PathBuf>,
    /// Save the local solution as JSON.
    #[arg(long)]
    save_local: Option<PathBuf>,
    /// Write cliques, fill edges and linking counts as JSON.
    #[arg(long)]
    dump_cliques: Option<PathBuf>,
    /// Relaxation solved by the `sdp` mode.
    #[arg(long, value_enum)]
    relaxation: Option<Relaxation>,
    /// Write the raw relaxation result (duals, status) as JSON.
    #[arg(long)]
    dump_relaxation: Option<PathBuf>,
    /// Local solver tolerance.
    #[arg(long, default_value_t = 1e-8)]
    local_tol: f64,
    /// Relative gap tolerance of the conic solves; defaults to 1e-8 for full
    /// relaxations and 1e-7 for the partial ones.
    #[arg(long)]
    sdp_tol: Option<f64>,
}

fn percent(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=100.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside 0..100"))
    }
}

fn load_case(path: &Path) -> Result<NetworkCase> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let case = if path.extension().is_some_and(|e| e == "json") {
        NetworkCase::from_json(&text)?
    } else {
        NetworkCase::parse(&text)?
    };
    Ok(case)
}

struct Ctx {
    cli: Cli,
    case: NetworkCase,
    mats: OpfMatrixSet,
    dec: CliqueDecomposition,
    decompose_s: f64,
    local: Option<(LocalSolution, f64)>,
}

impl Ctx {
    fn full_opts(&self) -> SolveOptions {
        SolveOptions { gap_tol: self.cli.sdp_tol.unwrap_or(SolveOptions::default().gap_tol), ..Default::default() }
    }

    fn local(&mut self) -> Result<(LocalSolution, f64)> {
        if let Some(l) = &self.local {
            return Ok(l.clone());
        }
        let t = Instant::now();
        let sol = match &self.cli.local_solution {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let sol = LocalSolution::from_json(&text)?;
                sol.validate(&self.case)?;
                sol
            }
            None => {
                let opts = LocalOptions { tol: self.cli.local_tol, ..Default::default() };
                solve_local(&self.case, &self.mats, &opts)?
            }
        };
        if let Some(path) = &self.cli.save_local {
            std::fs::write(path, sol.to_json()).with_context(|| format!("writing {}", path.display()))?;
        }
        let out = (sol, t.elapsed().as_secs_f64());
        self.local = Some(out.clone());
        Ok(out)
    }

    fn relax(&self, which: Relaxation) -> Result<SdpSolveResult> {
        let res = match which {
            Relaxation::Sdp => solve_dual_sdp(&self.case, &self.mats, &self.dec, &self.full_opts())?,
            Relaxation::Socp => solve_socp(&self.case, &self.mats, &self.full_opts())?,
        };
        Ok(res)
    }

    fn fastbound(&mut self, sigma_pct: f64, compare_sdp: bool) -> Result<BoundReport> {
        let (local, local_s) = self.local()?;
        let mut opts = FastboundOptions {
            sigma: sigma_pct / 100.0,
            escalation_step: self.cli.escalation_step / 100.0,
            compare_sdp,
            ..Default::default()
        };
        opts.solve.gap_tol = self.cli.sdp_tol.unwrap_or(SIMPLIFIED_GAP_TOL);
        let mut rep = run_with_local(&self.case, &self.mats, &self.dec, &local, &opts)?;
        rep.timings.local = local_s;
        rep.timings.decompose = self.decompose_s;
        Ok(rep)
    }

    fn row(&self, mode: &str, sigma: Option<f64>) -> Row {
        Row { case: self.case.name.clone(), mode: mode.to_string(), sigma, ..Row::default() }
    }

    fn relaxation_row(&self, name: &str, res: &SdpSolveResult, objective: Option<f64>) -> Row {
        Row {
            objective,
            bound: res.bound,
            gap_pct: objective.zip(res.bound).map(|(o, b)| opfbound::fastbound::gap_percent(o, b)),
            solve_s: res.solve_seconds,
            status: report::status_name(res.status),
            ..self.row(name, None)
        }
    }

    fn fastbound_row(&self, rep: &BoundReport) -> Row {
        Row {
            objective: Some(rep.local_objective),
            bound: rep.bound,
            gap_pct: rep.optimality_gap_percent,
            solve_s: rep.timings.evaluate + rep.timings.solve,
            psd_pct: Some(rep.psd_percentage),
            escalations: Some(rep.escalations),
            status: report::status_name(rep.status),
            ..self.row("fastbound", Some(rep.sigma_used * 100.0))
        }
    }

    fn local_row(&mut self) -> Result<Row> {
        let (local, secs) = self.local()?;
        Ok(Row { objective: Some(local.objective), solve_s: secs, status: "optimal".into(), ..self.row("local", None) })
    }
}

fn run(cli: Cli) -> Result<(Report, bool)> {
    let case = load_case(&cli.case)?;
    let mats = build_matrix_set(&case, &build_admittance(&case)?)?;
    let t = Instant::now();
    let mut dec = chordal_extend(case.n_bus(), &case.edges())?;
    if let Some(threshold) = cli.merge_cliques {
        dec = merge_cliques(&dec, threshold, cli.merge_max_size);
    }
    let decompose_s = t.elapsed().as_secs_f64();
    if let Some(path) = &cli.dump_cliques {
        let text = serde_json::to_string_pretty(&dec.dump())?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    if cli.relaxation.is_some() && cli.mode != Mode::Sdp {
        bail!("--relaxation only applies to the sdp mode");
    }
    let mode = cli.mode;
    let mut ctx = Ctx { cli, case, mats, dec, decompose_s, local: None };
    let mut rep = Report::new(&ctx.case, mode_name(mode), CliqueStats::of(&ctx.dec), ctx.decompose_s);

    match mode {
        Mode::Local => rep.rows.push(ctx.local_row()?),
        Mode::Sdp | Mode::Socp => {
            let which = match mode {
                Mode::Socp => Relaxation::Socp,
                _ => ctx.cli.relaxation.unwrap_or(Relaxation::Sdp),
            };
            let res = ctx.relax(which)?;
            if let Some(path) = &ctx.cli.dump_relaxation {
                std::fs::write(path, serde_json::to_string_pretty(&res)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let objective = match ctx.cli.local_solution {
                Some(_) => Some(ctx.local()?.0.objective),
                None => None,
            };
            let name = if which == Relaxation::Sdp { "sdp" } else { "socp" };
            rep.rows.push(ctx.relaxation_row(name, &res, objective));
            if which == Relaxation::Sdp && res.status == SolveStatus::Optimal {
                rep.exactness = Some(check_exactness(&ctx.case, &ctx.mats, &res)?);
            }
        }
        Mode::Fastbound => {
            let fb = ctx.fastbound(ctx.cli.sigma, ctx.cli.compare_sdp)?;
            rep.rows.push(ctx.fastbound_row(&fb));
            if let Some(b) = fb.sdp_bound {
                let objective = Some(fb.local_objective);
                rep.rows.push(Row {
                    objective,
                    bound: Some(b),
                    gap_pct: Some(opfbound::fastbound::gap_percent(fb.local_objective, b)),
                    solve_s: fb.timings.compare,
                    status: "optimal".into(),
                    ..ctx.row("sdp", None)
                });
            }
            if ctx.cli.compare_socp {
                let res = ctx.relax(Relaxation::Socp)?;
                rep.rows.push(ctx.relaxation_row("socp", &res, Some(fb.local_objective)));
            }
            rep.fastbound = vec![fb];
        }
        Mode::Compare => {
            rep.rows.push(ctx.local_row()?);
            let objective = Some(ctx.local()?.0.objective);
            let fb = ctx.fastbound(ctx.cli.sigma, false)?;
            rep.rows.push(ctx.fastbound_row(&fb));
            rep.fastbound = vec![fb];
            for which in [Relaxation::Sdp, Relaxation::Socp] {
                let res = ctx.relax(which)?;
                let name = if which == Relaxation::Sdp { "sdp" } else { "socp" };
                rep.rows.push(ctx.relaxation_row(name, &res, objective));
            }
        }
        Mode::Sweep => {
            for sigma in ctx.cli.sigmas.clone() {
                match ctx.fastbound(sigma, false) {
                    Ok(fb) => {
                        rep.rows.push(ctx.fastbound_row(&fb));
                        rep.fastbound.push(fb);
                    }
                    Err(e) if matches!(e.downcast_ref(), Some(opfbound::Error::ExhaustedEscalation)) => {
                        rep.rows.push(Row { status: "exhausted_escalation".into(), ..ctx.row("fastbound", Some(sigma)) });
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    let all_optimal = rep.rows.iter().all(|r| r.status == "optimal");
    Ok((rep, all_optimal))
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Local => "local",
        Mode::Sdp => "sdp",
        Mode::Socp => "socp",
        Mode::Fastbound => "fastbound",
        Mode::Compare => "compare",
        Mode::Sweep => "sweep",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (format, output) = (cli.report, cli.output.clone());
    match run(cli) {
        Ok((rep, all_optimal)) => {
            let text = match format {
                Format::Json => rep.to_json(),
                Format::Csv => rep.to_csv(),
            };
            let written = match &output {
                Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
                None => {
                    print!("{text}");
                    Ok(())
                }
            };
            match written {
                Err(e) => {
                    eprintln!("{}", report::error_json(&e));
                    ExitCode::from(1)
                }
                Ok(()) if all_optimal => ExitCode::SUCCESS,
                // the report is written, but some bound is missing
                Ok(()) => ExitCode::from(3),
            }
        }
        Err(e) => {
            eprintln!("{}", report::error_json(&e));
            ExitCode::from(1)
        }
    }
}
