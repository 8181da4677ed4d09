use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use idletune_core::estimator::run_tuner;
use idletune_core::ingest::{read_events, windowize};
use idletune_core::model::{failure_probability, feasibility_bound, solve_timeout};
use idletune_core::simulator::{generate_event_log, simulate_failure_prob, simulate_system};
use idletune_core::{IngestError, ModelParams, SystemConfig, TunerConfig};

use crate::args::*;
use crate::error::CliError;
use crate::sink::Sink;

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    writeln!(out, "{}", serde_json::to_string(value).expect("output serializes"))?;
    Ok(())
}

fn model_params(flags: &ModelFlags, file: &FileConfig) -> Result<ModelParams, CliError> {
    let n = required(flags.users, file.users, "users")?;
    let beta = required(flags.beta, file.beta, "beta")?;
    let xi = required(flags.xi, file.xi, "xi")?;
    Ok(ModelParams::new(n, beta, xi)?)
}

pub fn solve(args: &SolveArgs, file: &FileConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let params = model_params(&args.model, file)?;
    let eps = args.eps.or(file.eps).unwrap_or(DEFAULT_EPS);
    let policy = resolve_policy(&args.policy, file);
    match solve_timeout(&params, eps, &policy) {
        Ok(solution) => {
            eprintln!(
                "{params}: idle timeout {:.6} s for eps={eps} ({} expression)",
                solution.timeout_s, solution.expression
            );
            emit(out, &solution)
        }
        Err(e) => {
            let err = CliError::from(e);
            if let CliError::Infeasible { eps, bound } = err {
                emit(
                    out,
                    &json!({"error": "infeasible", "target_eps": eps, "feasibility_bound": bound}),
                )?;
            }
            Err(err)
        }
    }
}

pub fn prob(args: &ProbArgs, file: &FileConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let params = model_params(&args.model, file)?;
    let timeout = required(args.timeout, file.timeout, "timeout")?;
    let p = failure_probability(&params, timeout)?;
    eprintln!("{params}: failure probability {p:e} at timeout {timeout} s");
    emit(out, &json!({"timeout_s": timeout, "probability": p}))
}

pub fn bound(args: &BoundArgs, file: &FileConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let n = required(args.users, file.users, "users")?;
    let xi = required(args.xi, file.xi, "xi")?;
    // beta does not enter the bound
    let params = ModelParams::new(n, 1.0, xi)?;
    let b = feasibility_bound(&params);
    eprintln!("N={n} xi={xi}: no target at or below {b:e} is achievable");
    emit(out, &json!({"feasibility_bound": b}))
}

pub fn simulate(args: &SimulateArgs, file: &FileConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let params = model_params(&args.model, file)?;
    let timeout = required(args.timeout, file.timeout, "timeout")?;
    let trials = args.trials.or(file.trials).unwrap_or(DEFAULT_TRIALS);
    let seed = resolve_seed(args.seed, file.seed)?;
    let result = simulate_failure_prob(&params, timeout, trials, seed)?;
    eprintln!(
        "{params}: p_hat {:.6} +/- {:.6} over {trials} trials (closed form {:.6})",
        result.p_hat,
        result.std_err,
        failure_probability(&params, timeout)?
    );
    emit(out, &result)
}

pub fn sim_system(args: &SimSystemArgs, file: &FileConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let params = model_params(&args.model, file)?;
    let config = SystemConfig {
        n_users: params.n_users(),
        beta: params.beta(),
        xi: params.xi(),
        n_processes: required(args.processes, file.processes, "processes")?,
        process_life: required(args.process_life, file.process_life, "process-life")?,
        idle_timeout_s: required(args.idle_timeout, file.idle_timeout, "idle-timeout")?,
        duration_s: required(args.duration, file.duration, "duration")?,
    };
    let seed = resolve_seed(args.seed, file.seed)?;
    let report = simulate_system(&config, seed)?;
    eprintln!(
        "{} of {} marked requests hit a dropped connection ({:.4})",
        report.failed_binds, report.marked_requests, report.failure_rate
    );
    emit(out, &report)
}

pub fn gen_log(args: &GenLogArgs, file: &FileConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let params = model_params(&args.model, file)?;
    let duration = required(args.duration, file.duration, "duration")?;
    let seed = resolve_seed(args.seed, file.seed)?;
    let events = generate_event_log(&params, duration, seed)?;
    let write_all = |w: &mut dyn Write| -> io::Result<()> {
        for e in &events {
            writeln!(w, "{}", e.to_line())?;
        }
        w.flush()
    };
    match args.out.as_ref().or(file.out.as_ref()) {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            write_all(&mut w)?;
        }
        None => write_all(out)?,
    }
    eprintln!("generated {} events", events.len());
    Ok(())
}

fn open_input(path: Option<&Path>) -> Result<Box<dyn BufRead>, CliError> {
    match path {
        None => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(p) if p.as_os_str() == "-" => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            Ok(Box::new(BufReader::new(f)))
        }
    }
}

pub fn tune(args: &TuneArgs, file: &FileConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let config = TunerConfig {
        window_s: args.window.or(file.window).unwrap_or(DEFAULT_WINDOW_S),
        target_eps: args.eps.or(file.eps).unwrap_or(DEFAULT_EPS),
        n_users: required(args.users, file.users, "users")?,
        publish_delta_s: args.delta.or(file.delta).unwrap_or(DEFAULT_DELTA_S),
        schedule: resolve_schedule(args.schedule.as_deref(), file.schedule.as_deref())?,
        solver_policy: resolve_policy(&args.policy, file),
    };
    config.validate()?;
    let spec = resolve_sink(args.sink.as_deref(), file.sink.as_deref())?;
    let input = open_input(args.input.as_deref().or(file.input.as_deref()))?;
    let mut sink = Sink::open(&spec)?;

    let mut ingest_error: Option<IngestError> = None;
    let windows = windowize(read_events(input), config.window_s, config.n_users)?.map_while(|w| match w {
        Ok(w) => Some(w),
        Err(e) => {
            ingest_error = Some(e);
            None
        }
    });
    let result = run_tuner(windows, &config, &mut sink);
    drop(sink);

    if let Some(e) = ingest_error {
        if let Ok(report) = &result {
            out.write_all(report.to_json_lines().as_bytes())?;
        }
        return Err(e.into());
    }
    let report = result?;
    out.write_all(report.to_json_lines().as_bytes())?;

    if let Some(last) = report.final_record() {
        eprintln!(
            "{} iterations ({} empty windows skipped); final xi_hat={:.6} beta_hat={:.6e}; {} publish(es)",
            report.iterations.len(),
            report.skipped_windows,
            last.xi_hat,
            last.beta_hat,
            report.publishes
        );
    }
    if report.publish_failures > 0 {
        return Err(CliError::Sink {
            failed: report.publish_failures,
        });
    }
    Ok(())
}
