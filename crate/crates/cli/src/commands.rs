//! Campaign implementations behind the subcommands.

use std::path::PathBuf;

use anyhow::{Context, Result};
use serde_json::json;

use kssp_core::analysis::contraction::{
    fit_contraction_scaling, measure_contraction, solution_map_lipschitz, ContractionOptions,
    PathNorm,
};
use kssp_core::analysis::convergence::{mild_strong_gap, strong_self_convergence};
use kssp_core::analysis::convolution::stochastic_convolution_ratios;
use kssp_core::analysis::energy::{
    energy_identity_residual, ito_balance_defect, mean_energy_envelope,
};
use kssp_core::analysis::rates::{
    fit_smoothing_rate, maximal_regularity_sup, PhiFamily, SourceNorm,
};
use kssp_core::analysis::tail::tail_sweep;
use kssp_core::analysis::estimate_xt_norm;
use kssp_core::config::SigmaModeConfig;
use kssp_core::dynamics::{certify_flux_lipschitz, certify_growth_bounds, SigmaModel};
use kssp_core::noise::ito_isometry_check;
use kssp_core::report::{write_coefficient_dump, write_csv, CheckRecord, ReportSink};
use kssp_core::rng::{SeedSpec, StreamPurpose};
use kssp_core::solver::{
    ensemble_norm_traces, extend_global, simulate_path, Problem, SolverConfig,
};
use kssp_core::spectral::{SemigroupSpec, SineGrid, SpectralField};
use kssp_core::{ExecMode, ExperimentConfig};

/// Common campaign state: resolved config, assembled problem, output dir.
struct Campaign<'a> {
    config: &'a ExperimentConfig,
    problem: Problem,
    dir: PathBuf,
    sink: ReportSink,
    quiet: bool,
}

impl<'a> Campaign<'a> {
    fn new(config: &'a ExperimentConfig, quiet: bool) -> Result<Self> {
        let problem = config.build_problem()?;
        let dir = PathBuf::from(&config.output.directory);
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        std::fs::write(dir.join("config.resolved.toml"), config.to_toml_string())?;
        Ok(Self { config, problem, dir, sink: ReportSink::new(), quiet })
    }

    fn seeds(&self) -> SeedSpec {
        SeedSpec::new(self.config.ensemble.master_seed)
    }

    fn initial_field(&self) -> SpectralField {
        SpectralField::eigenmode(self.config.domain.k, 1, 1.0)
    }

    fn push(&mut self, record: CheckRecord) {
        self.sink.push(record);
    }

    fn finish(self) -> Result<bool> {
        self.sink.write_jsonl(&self.dir.join("records.jsonl"))?;
        if !self.quiet {
            for line in self.sink.summary_lines() {
                println!("{line}");
            }
        }
        Ok(self.sink.all_pass())
    }
}

pub fn simulate(config: &ExperimentConfig, dump: bool, quiet: bool) -> Result<bool> {
    let mut campaign = Campaign::new(config, quiet)?;
    let u0 = campaign.initial_field();
    let mut rng = campaign.seeds().stream(StreamPurpose::Path, 0);
    let traj = simulate_path(&campaign.problem, &config.solver, &u0, &mut rng)?;

    let n_coeffs = config.domain.k.min(8);
    let mut header = vec!["time".to_string(), "l2_norm".into(), "h2_norm".into()];
    for i in 1..=n_coeffs {
        header.push(format!("a{i}"));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| {
            let mut row = vec![
                t,
                s.l2_norm(),
                campaign.problem.basis.h2_norm_sq(s).sqrt(),
            ];
            row.extend_from_slice(&s.coeffs()[..n_coeffs]);
            row
        })
        .collect();
    write_csv(&campaign.dir.join("trajectory.csv"), &header_refs, &rows)?;
    if dump {
        write_coefficient_dump(
            &campaign.dir.join("trajectory.kssp"),
            config.solver.dt,
            config.solver.t_end,
            config.ensemble.master_seed,
            &traj.states,
        )?;
    }
    campaign.push(
        CheckRecord::decided("simulate-path-finite", traj.sup_l2_norm_sq(), 0.0, true)
            .with_detail(json!({ "tau": traj.tau_time(), "steps": traj.n_times() - 1 })),
    );
    campaign.finish()
}

pub fn ensemble(config: &ExperimentConfig, quiet: bool) -> Result<bool> {
    let mut campaign = Campaign::new(config, quiet)?;
    let u0 = campaign.initial_field();
    let traces = ensemble_norm_traces(
        &campaign.problem,
        &config.solver,
        &u0,
        config.ensemble.n_paths,
        campaign.seeds(),
        ExecMode::Parallel,
        false,
    )?;
    let stats = estimate_xt_norm(&traces)?;
    let rows: Vec<Vec<f64>> = stats
        .times
        .iter()
        .zip(stats.moment_curve.iter().zip(&stats.moment_half_width))
        .map(|(&t, (&m, &hw))| vec![t, m, hw])
        .collect();
    write_csv(
        &campaign.dir.join("moment_curve.csv"),
        &["time", "stopped_moment", "half_width"],
        &rows,
    )?;
    let max_moment = stats.moment_curve.iter().copied().fold(0.0, f64::max);
    campaign.push(
        CheckRecord::decided(
            "xt-dominates-moment-curve",
            stats.xt_norm_sq,
            stats.xt_half_width,
            stats.xt_norm_sq >= max_moment,
        )
        .with_detail(json!({
            "yt_extra": stats.yt_extra,
            "yt_half_width": stats.yt_half_width,
            "tail_count": stats.tail_count,
            "n_paths": stats.n_paths,
        })),
    );
    campaign.finish()
}

pub fn verify_lemmas(config: &ExperimentConfig, quiet: bool) -> Result<bool> {
    let mut campaign = Campaign::new(config, quiet)?;
    let basis = campaign.problem.basis.clone();
    let seeds = campaign.seeds();

    let fit = fit_smoothing_rate(
        &basis,
        2,
        SourceNorm::L2,
        PhiFamily::RoughPowerLaw { exponent: 0.51 },
        25,
    )?;
    campaign.push(
        CheckRecord::against_target("smoothing-rate-h2", fit.target, 0.05, fit.exponent, 0.0)
            .with_detail(json!({ "stderr": fit.stderr, "r2": fit.r2, "window": fit.window })),
    );
    let fit = fit_smoothing_rate(&basis, 0, SourceNorm::L1, PhiFamily::NearDirac, 25)?;
    campaign.push(
        CheckRecord::against_target("smoothing-rate-l1", fit.target, 0.05, fit.exponent, 0.0)
            .with_detail(json!({ "stderr": fit.stderr, "r2": fit.r2 })),
    );

    // Maximal regularity: stability of the sup statistic under K-doubling.
    let half_basis = SemigroupSpec::build(config.domain.l, config.domain.k / 2, config.domain.mu_min)?;
    let sup_half = {
        let mut rng = seeds.stream(StreamPurpose::Certify, 10);
        maximal_regularity_sup(&half_basis, 1.0, 200, &mut rng)?
    };
    let sup_full = {
        let mut rng = seeds.stream(StreamPurpose::Certify, 11);
        maximal_regularity_sup(&basis, 1.0, 200, &mut rng)?
    };
    campaign.push(
        CheckRecord::against_target("maximal-regularity-stability", 1.0, 0.10, sup_full / sup_half, 0.0)
            .with_detail(json!({ "sup_k": sup_full, "sup_k_half": sup_half })),
    );

    // Generalized Itô isometry on a fixed 8-mode deterministic integrand.
    let m8 = config.domain.k.min(8);
    let mut coeffs = vec![0.0; config.domain.k];
    for (i, c) in coeffs.iter_mut().take(m8).enumerate() {
        *c = 1.0 / (i + 1) as f64;
    }
    let integrand = campaign.problem.grid.synthesize(&SpectralField::new(coeffs))?;
    let steps = 50;
    let dt = config.solver.t_end / steps as f64;
    let path = vec![integrand; steps];
    let mut rng = seeds.stream(StreamPurpose::Integral, 0);
    let iso = ito_isometry_check(
        &campaign.problem.noise,
        &campaign.problem.grid,
        &path,
        dt,
        config.ensemble.n_paths.max(10_000),
        &mut rng,
    )?;
    campaign.push(
        CheckRecord::against_target("ito-isometry", 1.0, 0.05, iso.ratio, iso.half_width)
            .with_detail(json!({ "lhs": iso.lhs, "rhs": iso.rhs, "n_samples": iso.n_samples })),
    );

    // Stochastic convolution bounds: finite, and stable under simultaneous
    // dt-halving and K-doubling.
    let conv_steps = 50;
    let conv_dt = config.solver.t_end.min(0.5) / conv_steps as f64;
    let mk_path = |grid: &SineGrid, k: usize, steps: usize| -> Result<Vec<_>> {
        let mut coeffs = vec![0.0; k];
        for (i, c) in coeffs.iter_mut().take(8.min(k)).enumerate() {
            *c = 1.0 / (i + 1) as f64;
        }
        let g = grid.synthesize(&SpectralField::new(coeffs))?;
        Ok(vec![g; steps])
    };
    let n_samples = config.ensemble.n_paths.max(1000);
    let base = stochastic_convolution_ratios(
        &basis,
        &campaign.problem.grid,
        &campaign.problem.noise,
        &mk_path(&campaign.problem.grid, config.domain.k, conv_steps)?,
        conv_dt,
        n_samples,
        seeds,
        ExecMode::Parallel,
    )?;
    let fine = {
        let basis2 = SemigroupSpec::build(config.domain.l, 2 * config.domain.k, config.domain.mu_min)?;
        let grid2 = SineGrid::new(config.domain.l, 2 * config.domain.m)?;
        let noise2 = kssp_core::noise::NoiseModel::build(
            &basis2,
            kssp_core::noise::SpectrumLaw { kappa: config.noise.kappa, gamma: config.noise.gamma },
            config.noise.k_noise,
            &grid2,
        )?;
        stochastic_convolution_ratios(
            &basis2,
            &grid2,
            &noise2,
            &mk_path(&grid2, 2 * config.domain.k, 2 * conv_steps)?,
            conv_dt / 2.0,
            n_samples,
            seeds,
            ExecMode::Parallel,
        )?
    };
    for (name, a, b) in [
        ("convolution-sup-stability", base.sup_ratio, fine.sup_ratio),
        ("convolution-h2-stability", base.h2_ratio, fine.h2_ratio),
    ] {
        let change = (b / a - 1.0).abs();
        campaign.push(
            CheckRecord::decided(name, change, 0.0, a.is_finite() && b.is_finite() && change <= 0.25)
                .with_detail(json!({ "base": a, "refined": b })),
        );
    }
    campaign.finish()
}

pub fn contraction(config: &ExperimentConfig, quiet: bool) -> Result<bool> {
    let mut campaign = Campaign::new(config, quiet)?;
    let t = config.solver.t_end;
    let norm = match config.sigma.mode {
        SigmaModeConfig::Full => PathNorm::Yt,
        SigmaModeConfig::StateOnly => PathNorm::Xt,
    };
    let opts = ContractionOptions {
        windows: vec![t / 8.0, t / 4.0, t / 2.0, t],
        n_pairs: config.ensemble.n_paths.clamp(16, 64),
        norm,
        rough_fraction: 0.3,
    };
    let factors = measure_contraction(
        &campaign.problem,
        &config.solver,
        &opts,
        campaign.seeds(),
        ExecMode::Parallel,
    )?;
    let rows: Vec<Vec<f64>> = factors
        .iter()
        .map(|f| vec![f.t_window, f.max_ratio, f.rms_ratio])
        .collect();
    write_csv(
        &campaign.dir.join("contraction_windows.csv"),
        &["t_window", "max_ratio", "rms_ratio"],
        &rows,
    )?;
    for f in &factors {
        campaign.push(
            CheckRecord::decided(
                format!("contraction-window-{:.5}", f.t_window),
                f.max_ratio,
                0.0,
                f.max_ratio < 1.0,
            )
            .with_detail(json!({ "rms_ratio": f.rms_ratio, "n_pairs": f.n_pairs })),
        );
    }
    let fit = fit_contraction_scaling(&factors, config.flux.p, false)?;
    campaign.push(
        CheckRecord::decided("contraction-scaling-fit", fit.r2, 0.0, fit.r2 >= 0.9).with_detail(
            json!({
                "floor": fit.floor,
                "coef_power": fit.coef_power,
                "coef_linear": fit.coef_linear,
                "exponent": fit.exponent,
            }),
        ),
    );

    // Lipschitz continuity of the solution map under common noise.
    let u0 = campaign.initial_field();
    let pts = solution_map_lipschitz(
        &campaign.problem,
        &config.solver,
        &u0,
        &[0.1, 0.01],
        opts.n_pairs,
        norm,
        campaign.seeds(),
        ExecMode::Parallel,
    )?;
    let drift = pts[0].ratio / pts[1].ratio;
    campaign.push(
        CheckRecord::decided(
            "solution-map-lipschitz-stability",
            drift,
            0.0,
            (0.5..=2.0).contains(&drift),
        )
        .with_detail(json!({ "ratios": pts.iter().map(|p| p.ratio).collect::<Vec<_>>() })),
    );
    campaign.finish()
}

pub fn energy(config: &ExperimentConfig, quiet: bool) -> Result<bool> {
    let mut campaign = Campaign::new(config, quiet)?;
    let u0 = campaign.initial_field();
    let seeds = campaign.seeds();

    // Deterministic identity under dt-halving (noise switched off).
    let det = Problem { sigma: SigmaModel::zero(), ..clone_problem(&campaign.problem) };
    let mut residuals = Vec::new();
    for level in 0..3 {
        let cfg = SolverConfig {
            dt: config.solver.dt / f64::powi(2.0, level),
            t_end: (config.solver.t_end).min(0.25),
            ..config.solver.clone()
        };
        let mut rng = seeds.stream(StreamPurpose::Path, 1000 + level as u64);
        let traj = simulate_path(&det, &cfg, &u0, &mut rng)?;
        let rep = energy_identity_residual(&det, &traj)?;
        residuals.push(rep.max_residual);
        if level == 0 {
            campaign.push(
                CheckRecord::decided(
                    "flux-orthogonality",
                    rep.flux_orthogonality_max,
                    0.0,
                    rep.flux_orthogonality_max <= 1e-10 * u0.l2_norm_sq().max(1.0),
                )
                .with_detail(json!({ "dt": rep.dt })),
            );
        }
    }
    for w in residuals.windows(2) {
        let ratio = w[1] / w[0];
        campaign.push(
            CheckRecord::decided("energy-identity-halving", ratio, 0.0, ratio <= 0.35)
                .with_detail(json!({ "residuals": residuals })),
        );
    }

    // Mean-energy Gronwall envelope with the certified noise constant.
    let mut rng = seeds.stream(StreamPurpose::Certify, 0);
    let growth = certify_growth_bounds(
        &campaign.problem.flux,
        &campaign.problem.sigma,
        &campaign.problem.noise,
        &campaign.problem.basis,
        &campaign.problem.grid,
        1000,
        &mut rng,
    )?;
    let traces = ensemble_norm_traces(
        &campaign.problem,
        &config.solver,
        &u0,
        config.ensemble.n_paths,
        seeds,
        ExecMode::Parallel,
        true,
    )?;
    let stats = estimate_xt_norm(&traces)?;
    let envelope = mean_energy_envelope(
        &stats,
        u0.l2_norm_sq(),
        growth.sigma_growth_c,
        campaign.problem.basis.lambda()[0],
    );
    let rows: Vec<Vec<f64>> = stats
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| vec![t, stats.moment_curve[i], stats.moment_half_width[i], envelope.envelope[i]])
        .collect();
    write_csv(
        &campaign.dir.join("envelope.csv"),
        &["time", "stopped_moment", "half_width", "envelope"],
        &rows,
    )?;
    campaign.push(
        CheckRecord::decided(
            "mean-energy-envelope",
            envelope.max_violation,
            0.0,
            envelope.max_violation <= 0.0,
        )
        .with_detail(json!({ "c_sigma": envelope.c_sigma, "rate": envelope.rate, "min_margin": envelope.min_margin })),
    );

    // Discrete Itô balance defect shrinks under dt-halving.
    let defect = ito_balance_defect(&traces)?;
    let fine_cfg = config.solver.halved();
    let fine_traces = ensemble_norm_traces(
        &campaign.problem,
        &fine_cfg,
        &u0,
        config.ensemble.n_paths,
        seeds,
        ExecMode::Parallel,
        true,
    )?;
    let fine_defect = ito_balance_defect(&fine_traces)?;
    campaign.push(
        CheckRecord::decided(
            "ito-balance-refinement",
            fine_defect.max_defect_over_dt / defect.max_defect_over_dt,
            0.0,
            fine_defect.max_defect_over_dt < defect.max_defect_over_dt,
        )
        .with_detail(json!({
            "coarse": defect.max_defect_over_dt,
            "fine": fine_defect.max_defect_over_dt,
        })),
    );
    campaign.finish()
}

pub fn globalize(config: &ExperimentConfig, quiet: bool) -> Result<bool> {
    let mut campaign = Campaign::new(config, quiet)?;
    let u0 = campaign.initial_field();
    let seeds = campaign.seeds();

    // Escalation consistency on a handful of paths.
    let mut consistent = true;
    let mut escalations = 0usize;
    for path in 0..20u64 {
        let g = extend_global(&campaign.problem, &config.solver, &u0, seeds, path)?;
        consistent &= g.consistent;
        if g.levels.len() > 1 {
            escalations += 1;
        }
    }
    campaign.push(
        CheckRecord::decided("globalization-consistency", escalations as f64, 0.0, consistent)
            .with_detail(json!({ "paths": 20 })),
    );

    // Tail sweep at 2x/4x/8x the pilot median sup norm.
    let pilot_problem = Problem {
        trunc: kssp_core::dynamics::TruncationSpec::new(1e12).map_err(anyhow::Error::from)?,
        ..clone_problem(&campaign.problem)
    };
    let pilot = ensemble_norm_traces(
        &pilot_problem,
        &config.solver,
        &u0,
        200,
        seeds,
        ExecMode::Parallel,
        false,
    )?;
    let mut sups: Vec<f64> = pilot.iter().map(|t| t.sup_l2_sq().sqrt()).collect();
    sups.sort_by(f64::total_cmp);
    let median = sups[sups.len() / 2];
    let levels = [2.0 * median, 4.0 * median, 8.0 * median];
    let report = tail_sweep(
        &campaign.problem,
        &config.solver,
        &u0,
        &levels,
        config.ensemble.n_paths,
        seeds,
        ExecMode::Parallel,
    )?;
    let rows: Vec<Vec<f64>> = report
        .levels
        .iter()
        .enumerate()
        .map(|(i, &l)| vec![l, report.counts[i] as f64, report.p_hat[i], report.stopped_mean_sq[i]])
        .collect();
    write_csv(
        &campaign.dir.join("tail_counts.csv"),
        &["level", "count", "p_hat", "stopped_mean_sq"],
        &rows,
    )?;
    let slope = report.slope.as_ref().map(|s| s.slope).unwrap_or(f64::NEG_INFINITY);
    campaign.push(
        CheckRecord::decided("tail-decay", slope, 0.0, report.passes(-1.7)).with_detail(json!({
            "counts": report.counts,
            "vacuous": report.vacuous,
            "levels": report.levels,
        })),
    );
    campaign.push(CheckRecord::decided(
        "chebyshev-crosscheck",
        0.0,
        0.0,
        report.chebyshev_ok,
    ));
    campaign.finish()
}

pub fn convergence(config: &ExperimentConfig, quiet: bool) -> Result<bool> {
    let mut campaign = Campaign::new(config, quiet)?;
    let u0 = campaign.initial_field();
    let seeds = campaign.seeds();

    // Pathwise strong self-convergence with common noise.
    let levels = 3usize;
    let fine_steps = config.solver.n_steps().next_multiple_of(1 << levels);
    let fine_cfg = SolverConfig {
        dt: config.solver.t_end / fine_steps as f64,
        ..config.solver.clone()
    };
    let n_paths = config.ensemble.n_paths.clamp(16, 128);
    let study = strong_self_convergence(
        &campaign.problem,
        &fine_cfg,
        &u0,
        n_paths,
        levels,
        seeds,
        ExecMode::Parallel,
    )?;
    let rows: Vec<Vec<f64>> = study.gaps.iter().map(|&(dt, g)| vec![dt, g]).collect();
    write_csv(&campaign.dir.join("refinement.csv"), &["dt", "mean_sup_gap"], &rows)?;
    let stochastic = !campaign.problem.is_deterministic();
    let pass = if stochastic {
        (study.order.slope - 0.5).abs() <= 0.25
    } else {
        study.order.slope >= 0.9
    };
    campaign.push(
        CheckRecord::decided("strong-order", study.order.slope, 0.0, pass).with_detail(json!({
            "gaps": study.gaps,
            "pass_rule": if stochastic { "|order - 0.5| <= 0.25" } else { "order >= 0.9" },
        })),
    );

    // Mild/strong oracle gap halves with dt (noise-free route comparison).
    let det = Problem { sigma: SigmaModel::zero(), ..clone_problem(&campaign.problem) };
    let mu_max = *det.basis.mu().last().unwrap();
    let gap_at = |dt: f64| -> Result<f64> {
        let cfg = SolverConfig { dt, t_end: config.solver.t_end.min(0.05), ..config.solver.clone() };
        let substeps = (dt * mu_max / 2.0).ceil() as usize + 1;
        Ok(mild_strong_gap(&det, &cfg, &u0, substeps)?)
    };
    let g1 = gap_at(config.solver.dt)?;
    let g2 = gap_at(config.solver.dt / 2.0)?;
    let ratio = g2 / g1;
    campaign.push(
        CheckRecord::decided("mild-strong-gap-halving", ratio, 0.0, (0.3..=0.7).contains(&ratio))
            .with_detail(json!({ "gap_dt": g1, "gap_dt_half": g2 })),
    );
    campaign.finish()
}

pub fn certify(config: &ExperimentConfig, quiet: bool) -> Result<bool> {
    let mut campaign = Campaign::new(config, quiet)?;
    let seeds = campaign.seeds();
    let mut rng = seeds.stream(StreamPurpose::Certify, 0);
    let budget = config.ensemble.n_paths.max(1000);
    let growth = certify_growth_bounds(
        &campaign.problem.flux,
        &campaign.problem.sigma,
        &campaign.problem.noise,
        &campaign.problem.basis,
        &campaign.problem.grid,
        budget,
        &mut rng,
    )?;
    let all_finite = [
        growth.flux_growth,
        growth.flux_lipschitz,
        growth.sigma_growth_c,
        growth.sigma_growth_eps,
        growth.sigma_lip_c,
        growth.sigma_lip_eps,
    ]
    .iter()
    .all(|v| v.is_finite());
    campaign.push(
        CheckRecord::decided("growth-bounds-finite", growth.flux_growth, 0.0, all_finite)
            .with_detail(serde_json::to_value(&growth)?),
    );

    let mut rng = seeds.stream(StreamPurpose::Certify, 1);
    let pointwise = certify_flux_lipschitz(&campaign.problem.flux, 1_000_000, 10.0, &mut rng);
    let quadratic_cap_ok = config.flux.kind != kssp_core::config::FluxKindConfig::Quadratic
        || pointwise <= 0.5 + 1e-12;
    campaign.push(CheckRecord::decided(
        "assumption-a-pointwise",
        pointwise,
        0.0,
        pointwise.is_finite() && quadratic_cap_ok,
    ));

    // Kernel boundedness: the assumption-(C) certificate.
    let nm = &campaign.problem.noise;
    campaign.push(
        CheckRecord::decided(
            "kernel-bounded",
            nm.kernel_sup(),
            0.0,
            nm.kernel_sup() <= (2.0 / config.domain.l) * nm.trace() * (1.0 + 1e-12),
        )
        .with_detail(json!({ "trace": nm.trace() })),
    );
    campaign.finish()
}

fn clone_problem(p: &Problem) -> Problem {
    Problem {
        basis: p.basis.clone(),
        grid: p.grid.clone(),
        noise: p.noise.clone(),
        flux: p.flux.clone(),
        trunc: p.trunc,
        sigma: p.sigma,
    }
}
