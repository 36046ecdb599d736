use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::model_file::{LoadedModel, ModelFile, RunSection, ThetaSource};
use super::*;
use crate::cmatrix::{self, RMatrix};
use crate::error::{Error, Result};
use crate::frequency::{self, FreqPoint};
use crate::generate::{self, GenKind, GenOptions};
use crate::network_model::{FragmentSpec, ItoRegime};
use crate::performance::{self, WeightSequence};
use crate::realizability::{self, Offender, PRReport};
use crate::simulate::{self, Horizon};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Sites {
    Finite(usize),
    Limit,
}

fn parse_sites(text: &str) -> Result<Sites> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("limit") || t == "inf" {
        return Ok(Sites::Limit);
    }
    match t.parse::<usize>() {
        Ok(0) | Err(_) => Err(Error::Config(format!("--N expects a positive integer or `limit`, got {text:?}"))),
        Ok(n) => Ok(Sites::Finite(n)),
    }
}

fn finite_sites(arg: Option<&str>, default: usize) -> Result<usize> {
    match arg.map(parse_sites).transpose()? {
        None => Ok(default),
        Some(Sites::Finite(n)) => Ok(n),
        Some(Sites::Limit) => Err(Error::Config("this command needs a finite --N".into())),
    }
}

fn load(path: &Path) -> Result<LoadedModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    ModelFile::parse(&text)?.load()
}

fn weights(m: &LoadedModel) -> Result<&WeightSequence> {
    m.weights.as_ref().ok_or_else(|| Error::Config("model has no [weights] section".into()))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable output");
    out.push(b'\n');
    out
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Numeric(format!("csv: {e}"));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Numeric(format!("csv: {e}")))
}

fn angle_header(axes: usize) -> Vec<String> {
    if axes == 1 {
        vec!["phi".into()]
    } else {
        (1..=axes).map(|k| format!("phi{k}")).collect()
    }
}

fn describe(o: &Offender) -> String {
    match o {
        Offender::Frequency(z) => z.to_string(),
        Offender::Exponent(p) => format!("p = {p}"),
        Offender::Condition(c) => c.clone(),
    }
}

fn theta_label(source: ThetaSource) -> &'static str {
    match source {
        ThetaSource::File => "from file",
        ThetaSource::Solved => "solved from the model",
        ThetaSource::Missing => "missing",
    }
}

fn regime_label(regime: ItoRegime) -> String {
    match regime {
        ItoRegime::Strict { spectral_radius } => format!("strict (spectral radius of J {spectral_radius:.6})"),
        ItoRegime::Boundary => "boundary (spectral radius of J is 1)".into(),
        ItoRegime::Invalid { spectral_radius } => format!("invalid (spectral radius of J {spectral_radius:.6})"),
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn check_pr(a: &CheckPrArgs) -> Result<CommandOutput> {
    let m = load(&a.model.model)?;
    let p = &m.params;
    let axes = p.axis_count();
    let tol = a.tol.or(m.run.tol).unwrap_or(realizability::DEFAULT_TOL);
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Config(format!("--tol must be positive, got {tol}")));
    }
    let min_sites = FragmentSpec::min_sites_for_algebraic_conditions(p.n());
    let sites = finite_sites(a.sites.as_deref(), m.run.sites.unwrap_or(min_sites))?;
    let theorem = a
        .theorem
        .clone()
        .or(m.run.theorem.clone())
        .unwrap_or_else(|| if axes == 1 { "both".into() } else { "1".into() });
    let (frequency_form, algebraic_form) = match theorem.as_str() {
        "1" => (true, false),
        "2" => {
            if axes != 1 {
                return Err(Error::UnsupportedFragment("the algebraic form is only available for chains".into()));
            }
            (false, true)
        }
        "both" => (true, axes == 1),
        other => return Err(Error::Config(format!("--theorem expects 1, 2 or both, got {other:?}"))),
    };

    let mut reports: Vec<PRReport> = Vec::new();
    if frequency_form {
        reports.push(realizability::check_theorem1_with_tol(p, sites, tol)?);
    }
    if algebraic_form {
        reports.push(realizability::check_theorem2_with_tol(p, tol)?);
    }
    let pass = reports.iter().all(|r| r.pass);
    let applies = FragmentSpec::new(sites, axes)?.admits_algebraic_conditions(p.n());
    let agreement = (reports.len() == 2).then(|| reports[0].pass == reports[1].pass);

    let mut out = String::new();
    writeln!(out, "model: n = {}, m0 = {}, axes = {}, Θ {}", p.n(), p.m0(), axes, theta_label(m.theta_source)).ok();
    for r in &reports {
        let head = match r.sites {
            Some(n) => format!("theorem {} (N = {n})", r.theorem),
            None => format!("theorem {}", r.theorem),
        };
        writeln!(
            out,
            "{head}: {}  max residual {:.3e}, limit {:.3e}",
            verdict(r.pass),
            r.max_residual(),
            r.tolerance * r.scale
        )
        .ok();
        for res in &r.residuals {
            writeln!(out, "  {:<10} {:>10.3e}  {}", res.label, res.value, describe(&res.at)).ok();
        }
    }
    if agreement == Some(false) && !applies {
        writeln!(out, "note: N = {sites} is below {min_sites} sites, so the two forms need not agree").ok();
    }

    let summary = json!({
        "n": p.n(),
        "m0": p.m0(),
        "axes": axes,
        "theta_source": m.theta_source,
        "theta_residual": m.theta_residual,
        "ito_regime": regime_label(p.ito_regime()?),
        "sites": sites,
        "algebraic_form_applies": applies,
        "agreement": agreement,
        "pass": pass,
        "reports": reports,
    });
    Ok(CommandOutput {
        stdout: out,
        stderr: String::new(),
        files: vec![("check_pr.json".into(), json_bytes(&summary))],
        code: if pass { EXIT_OK } else { EXIT_PR_FAIL },
    })
}

pub fn cost(a: &CostArgs) -> Result<CommandOutput> {
    let m = load(&a.model.model)?;
    let w = weights(&m)?;
    let p = &m.params;
    let default = m.run.sites.map_or(Sites::Limit, Sites::Finite);
    let sites = a.sites.as_deref().map(parse_sites).transpose()?.unwrap_or(default);
    let result = match sites {
        Sites::Finite(n) => performance::finite_cost(p, w, n)?,
        Sites::Limit => performance::cost_limit(p, w)?,
    };

    let axes = p.axis_count();
    let mut header = angle_header(axes);
    header.extend(["value".into(), "cumulative".into()]);
    let total = result.samples.len() as f64;
    let mut running = 0.0;
    let rows: Vec<Vec<String>> = result
        .samples
        .iter()
        .map(|s| {
            running += s.value;
            let mut row: Vec<String> = s.at.angles().into_iter().map(num).collect();
            row.push(num(s.value));
            row.push(num(running / total));
            row
        })
        .collect();

    let label = result.sites.map_or("limit".to_string(), |n| format!("N = {n}"));
    let mut stdout = format!(
        "cost per site ({label}): {:.12e}  error estimate {:.3e}  points {}\n",
        result.cost_per_site, result.error_estimate, result.points
    );
    let mut stderr = String::new();
    let code = if result.converged {
        EXIT_OK
    } else {
        writeln!(stderr, "error: quadrature did not converge; last change {:.3e}", result.error_estimate).ok();
        EXIT_INCONCLUSIVE
    };
    if !result.converged {
        stdout.push_str("status: inconclusive\n");
    }
    let summary = json!({
        "sites": result.sites,
        "cost_per_site": result.cost_per_site,
        "points": result.points,
        "error_estimate": result.error_estimate,
        "previous": result.previous,
        "converged": result.converged,
    });
    Ok(CommandOutput {
        stdout,
        stderr,
        files: vec![("cost.json".into(), json_bytes(&summary)), ("cost_samples.csv".into(), csv_bytes(&header, &rows)?)],
        code,
    })
}

struct SpectrumRow {
    at: FreqPoint,
    abscissa: f64,
    s_eigs: Vec<f64>,
    a_re: Vec<f64>,
    p_eigs: Vec<f64>,
    theta_deviation: f64,
}

fn spectrum_row(p: &crate::network_model::BlockParams, theta: Option<&RMatrix>, z: &FreqPoint) -> Result<SpectrumRow> {
    let n = p.n();
    let modes = frequency::mode_matrices(p, z)?;
    let mut a_re: Vec<f64> = cmatrix::eigenvalues(&modes.az)?.iter().map(|l| l.re).collect();
    a_re.sort_by(f64::total_cmp);
    let abscissa = a_re.last().copied().unwrap_or(f64::NEG_INFINITY);
    let nan = vec![f64::NAN; n];
    if abscissa >= -cmatrix::HURWITZ_MARGIN {
        return Ok(SpectrumRow { at: *z, abscissa, s_eigs: nan.clone(), a_re, p_eigs: nan, theta_deviation: f64::NAN });
    }
    let parts = performance::covariance_parts(p, z)?;
    Ok(SpectrumRow {
        at: *z,
        abscissa,
        s_eigs: cmatrix::hermitian_eigenvalues(&parts.s)?,
        a_re,
        p_eigs: cmatrix::hermitian_eigenvalues(&parts.symmetric_part)?,
        theta_deviation: theta.map_or(f64::NAN, |t| (&parts.commutator_part - cmatrix::complexify(t)).norm()),
    })
}

pub fn spectrum(a: &SpectrumArgs) -> Result<CommandOutput> {
    let m = load(&a.model.model)?;
    let p = &m.params;
    let grid = a.grid.or(m.run.grid).unwrap_or(64);
    if grid < 8 {
        return Err(Error::Config(format!("--grid must be at least 8, got {grid}")));
    }
    let axes = p.axis_count();
    let points = frequency::frequency_grid(grid, axes)?;
    let theta = p.theta.as_ref();
    let rows = points
        .par_iter()
        .map(|z| spectrum_row(p, theta, z))
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let n = p.n();
    let mut header = angle_header(axes);
    header.extend((1..=n).map(|k| format!("s_eig_{k}")));
    header.extend((1..=n).map(|k| format!("re_a_eig_{k}")));
    header.extend((1..=n).map(|k| format!("p_eig_{k}")));
    header.extend(["theta_deviation".into(), "stable".into()]);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row: Vec<String> = r.at.angles().into_iter().map(num).collect();
            row.extend(r.s_eigs.iter().chain(&r.a_re).chain(&r.p_eigs).map(|x| num(*x)));
            row.push(num(r.theta_deviation));
            row.push(u8::from(r.abscissa < -cmatrix::HURWITZ_MARGIN).to_string());
            row
        })
        .collect();

    let worst = rows.iter().reduce(|best, r| if r.abscissa > best.abscissa { r } else { best }).expect("non-empty grid");
    let unstable = rows.iter().filter(|r| r.abscissa >= -cmatrix::HURWITZ_MARGIN).count();
    let stable_rows = rows.iter().filter(|r| r.abscissa < -cmatrix::HURWITZ_MARGIN);
    let min_eig = stable_rows.clone().flat_map(|r| r.s_eigs.first().copied()).fold(f64::INFINITY, f64::min);
    let max_dev = stable_rows.map(|r| r.theta_deviation).filter(|d| !d.is_nan()).fold(0.0, f64::max);

    let mut stdout = format!(
        "{} points, max spectral abscissa {:.6e} at {}\n",
        rows.len(),
        worst.abscissa,
        worst.at
    );
    if unstable == 0 {
        writeln!(stdout, "min eigenvalue of S_z {min_eig:.6e}, max |Q_z - Θ| {max_dev:.3e}").ok();
    }
    let (stderr, code) = if unstable > 0 {
        (
            format!(
                "error: {unstable} of {} modes are not Hurwitz; worst at {} (spectral abscissa {:.6e})\n",
                rows.len(),
                worst.at,
                worst.abscissa
            ),
            EXIT_STABILITY,
        )
    } else {
        (String::new(), EXIT_OK)
    };
    Ok(CommandOutput { stdout, stderr, files: vec![("spectrum.csv".into(), csv_bytes(&header, &table)?)], code })
}

fn parse_horizon(text: &str) -> Result<Horizon> {
    if text.trim().eq_ignore_ascii_case("steady") {
        return Ok(Horizon::Steady);
    }
    match text.trim().parse::<f64>() {
        Ok(t) if t > 0.0 && t.is_finite() => Ok(Horizon::Fixed(t)),
        _ => Err(Error::Config(format!("--horizon expects a positive time or `steady`, got {text:?}"))),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<CommandOutput> {
    let m = load(&a.model.model)?;
    let p = &m.params;
    let sites = finite_sites(a.sites.as_deref(), m.run.sites.unwrap_or(8))?;
    let horizon = match (&a.horizon, m.run.horizon) {
        (Some(h), _) => parse_horizon(h)?,
        (None, Some(t)) => parse_horizon(&t.to_string())?,
        (None, None) => Horizon::Steady,
    };
    if a.samples == 0 {
        return Err(Error::Config("--samples must be positive".into()));
    }
    let axes = p.axis_count();
    let points = frequency::frequency_grid(sites, axes)?;
    let steady: Vec<Result<cmatrix::CMatrix>> = points.par_iter().map(|z| performance::steady_covariance(p, z)).collect();
    if horizon == Horizon::Steady {
        if let Some(Err(e)) = steady.iter().find(|s| s.is_err()) {
            return Err(match e {
                Error::Stability { at, abscissa } => Error::Stability { at: *at, abscissa: *abscissa },
                other => Error::Numeric(other.to_string()),
            });
        }
    }
    let all_stable = steady.iter().all(|s| s.is_ok());

    if a.fullchain {
        let traj = simulate::fullchain_moments(p, sites, horizon, a.samples)?;
        let header: Vec<String> = ["time", "site_trace", "site_norm"].map(String::from).to_vec();
        let rows: Vec<Vec<String>> = traj
            .times
            .iter()
            .zip(&traj.site_covariance)
            .map(|(t, s)| vec![num(*t), num(s.trace().re), num(s.norm())])
            .collect();
        let reference = all_stable.then(|| {
            let sum = steady.iter().flatten().fold(cmatrix::CMatrix::zeros(p.n(), p.n()), |acc, s| acc + s);
            sum.unscale(points.len() as f64)
        });
        let final_site = traj.site_covariance.last().cloned().unwrap_or_else(|| cmatrix::CMatrix::zeros(p.n(), p.n()));
        let deviation = reference.as_ref().map(|r| (&final_site - r).norm());
        let summary = json!({
            "sites": sites,
            "path": "fullchain",
            "steps": traj.steps,
            "final_time": traj.times.last(),
            "reached_steady": traj.reached_steady,
            "steady_deviation": deviation,
        });
        let stdout = format!(
            "full chain, N = {sites}: {} steps to t = {:.6e}, site covariance trace {:.12e}\n",
            traj.steps,
            traj.times.last().copied().unwrap_or(0.0),
            final_site.trace().re
        );
        return Ok(CommandOutput {
            stdout,
            stderr: String::new(),
            files: vec![("simulate.json".into(), json_bytes(&summary)), ("fullchain.csv".into(), csv_bytes(&header, &rows)?)],
            code: EXIT_OK,
        });
    }

    let traj = simulate::integrate_moments(p, sites, &simulate::zero_initial(p, sites), horizon, a.samples)?;
    let total = points.len() as f64;
    let mut header = vec!["time".to_string(), "site_trace".to_string()];
    header.extend((0..traj.pairs.len()).map(|l| format!("mode_{l}_norm")));
    let rows: Vec<Vec<String>> = traj
        .times
        .iter()
        .zip(&traj.values)
        .map(|(t, vals)| {
            let trace = vals.iter().map(|s| s.trace().re).sum::<f64>() / (total * total);
            let mut row = vec![num(*t), num(trace)];
            row.extend(vals.iter().map(|s| num(s.norm() / total)));
            row
        })
        .collect();
    let deviation = all_stable.then(|| {
        traj.values
            .last()
            .map(|vals| {
                vals.iter()
                    .zip(steady.iter().flatten())
                    .map(|(s, target)| (s.unscale(total) - target).norm() / target.norm().max(1.0))
                    .fold(0.0, f64::max)
            })
            .unwrap_or(f64::NAN)
    });
    let summary = json!({
        "sites": sites,
        "path": "modes",
        "steps": traj.steps,
        "final_time": traj.times.last(),
        "reached_steady": traj.reached_steady,
        "steady_deviation": deviation,
    });
    let stdout = format!(
        "{} modes, N = {sites}: {} steps to t = {:.6e}{}\n",
        traj.pairs.len(),
        traj.steps,
        traj.times.last().copied().unwrap_or(0.0),
        deviation.map_or(String::new(), |d| format!(", relative distance to steady state {d:.3e}"))
    );
    Ok(CommandOutput {
        stdout,
        stderr: String::new(),
        files: vec![("simulate.json".into(), json_bytes(&summary)), ("trajectory.csv".into(), csv_bytes(&header, &rows)?)],
        code: EXIT_OK,
    })
}

fn parse_counts(flag: &str, text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Config(format!("{flag} expects comma-separated counts, got {text:?}"))))
        .collect()
}

pub fn gen(a: &GenArgs) -> Result<CommandOutput> {
    let kind = match a.kind.as_str() {
        "random" => Some(GenKind::Random),
        "pr-consistent" => Some(GenKind::PrConsistent),
        "aliasing-witness" => None,
        other => {
            return Err(Error::Config(format!(
                "--kind expects random, pr-consistent or aliasing-witness, got {other:?}"
            )))
        }
    };
    let params = match kind {
        Some(kind) => generate::generate(&GenOptions {
            seed: a.seed,
            n: a.n,
            m0: a.m0,
            m_plus: parse_counts("--m-plus", &a.m_plus)?,
            m_minus: parse_counts("--m-minus", &a.m_minus)?,
            kind,
        })?,
        None => generate::aliasing_witness(a.seed)?,
    };
    let n = params.n();
    let w = WeightSequence::geometric(params.axis_count(), a.rho, RMatrix::identity(n, n))?;
    let run = RunSection {
        sites: Some(FragmentSpec::min_sites_for_algebraic_conditions(n)),
        grid: Some(64),
        seed: Some(a.seed),
        ..Default::default()
    };
    let text = ModelFile::from_params(&params, Some(&w), run).to_toml()?;
    Ok(CommandOutput {
        stdout: text.clone(),
        stderr: String::new(),
        files: vec![("model.toml".into(), text.into_bytes())],
        code: EXIT_OK,
    })
}

pub fn sweep(a: &SweepArgs) -> Result<CommandOutput> {
    let m = load(&a.model.model)?;
    let w = weights(&m)?;
    let p = &m.params;
    let mut sizes = parse_counts("--N", &a.sites)?;
    if sizes.iter().any(|&n| n == 0) {
        return Err(Error::Config("--N sizes must be positive".into()));
    }
    sizes.sort_unstable();
    sizes.dedup();
    let limit = performance::cost_limit(p, w)?;
    let finite = sizes
        .iter()
        .map(|&n| performance::finite_cost(p, w, n))
        .collect::<Result<Vec<_>>>()?;

    let header: Vec<String> = ["N", "cost_per_site", "limit", "abs_error", "scaled_error", "fejer_bound"]
        .map(String::from)
        .to_vec();
    let errors: Vec<f64> = finite.iter().map(|c| (c.cost_per_site - limit.cost_per_site).abs()).collect();
    let rows: Vec<Vec<String>> = sizes
        .iter()
        .zip(&finite)
        .zip(&errors)
        .map(|((n, c), e)| {
            vec![
                n.to_string(),
                num(c.cost_per_site),
                num(limit.cost_per_site),
                num(*e),
                num(*n as f64 * e),
                num(c.error_estimate),
            ]
        })
        .collect();
    let monotone = errors.windows(2).all(|w| w[1] <= w[0]);

    let mut stdout = format!("limit {:.12e} (change {:.3e})\n", limit.cost_per_site, limit.error_estimate);
    writeln!(stdout, "{:>6}  {:>20}  {:>10}  {:>10}", "N", "cost per site", "|error|", "N·|error|").ok();
    for ((n, c), e) in sizes.iter().zip(&finite).zip(&errors) {
        writeln!(stdout, "{n:>6}  {:>20.12e}  {e:>10.3e}  {:>10.3e}", c.cost_per_site, *n as f64 * e).ok();
    }
    let summary = json!({
        "limit": limit.cost_per_site,
        "limit_error_estimate": limit.error_estimate,
        "limit_converged": limit.converged,
        "sizes": sizes,
        "costs": finite.iter().map(|c| c.cost_per_site).collect::<Vec<_>>(),
        "errors": errors,
        "fejer_bounds": finite.iter().map(|c| c.error_estimate).collect::<Vec<_>>(),
        "monotone": monotone,
    });
    let (stderr, code) = if limit.converged {
        (String::new(), EXIT_OK)
    } else {
        ("error: quadrature for the limit did not converge\n".to_string(), EXIT_INCONCLUSIVE)
    };
    Ok(CommandOutput {
        stdout,
        stderr,
        files: vec![("sweep.json".into(), json_bytes(&summary)), ("sweep.csv".into(), csv_bytes(&header, &rows)?)],
        code,
    })
}
