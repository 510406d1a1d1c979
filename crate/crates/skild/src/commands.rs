//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};
use skild_core::ddpm::{CheatDenoiser, Denoiser, Diffusion, DiffusionState, GaussianOracle};
use skild_core::ising::{bond_probability, exact_enumeration, generate_dataset, DatasetProtocol, SpinLattice};
use skild_core::observables::{
    bicubic_threshold_sweep, corner_moments, kappa4_from_moments, BootstrapPlan, CornerMoments, DEFAULT_SIDES,
};
use skild_core::schedule::CoefficientTables;
use skild_core::sde::{em_reverse, ode_reverse, pc_reverse, DenoiserScore, ReverseGrid};
use skild_core::seed::chain_rng;
use skild_core::spectral::{DctPlan, FrequencyGrid};
use skild_core::spectrum::{eval_power_law, fit_power_law, VarianceAccumulator, VarianceSpectrum};
use skild_core::{Shape, SpectralField};

use crate::cli::{BicubicArgs, DenoiserChoice, Grid, Kappa4Args, SampleArgs, Sampler, SrStartArgs};
use crate::config::{load_schedule, read_json, write_json, PowerLawParams};
use crate::error::{Error, Result};
use crate::manifest::{sha256_file, sha256_hex, Dataset, DatasetManifest, RunClock, RunManifest, S0Provenance, MANIFEST_FILE};
use crate::tensor::{load_fields, save_field, Tensor};

/// Files per accumulation chunk; fixed so results do not depend on the
/// thread count.
const CHUNK: usize = 64;

/// Recorded in every κ₄ report.
pub const SIGN_THRESHOLD: &str = "x >= 0 -> +1, x < 0 -> -1";

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("--threads: {e}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Run manifest written next to a single-file artifact as
/// `<artifact>.manifest.json`.
fn write_sidecar(artifact: &Path, manifest: &RunManifest) -> Result<()> {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    write_json(&artifact.with_file_name(name), manifest)
}

fn options(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(map) => map,
        _ => Map::new(),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn spectrum_estimate(input: &Path, output: &Path, threads: Option<usize>, argv: &[String]) -> Result<()> {
    let clock = RunClock::start();
    let ds = Dataset::open(input)?;
    let shape = ds.load(0)?.shape();
    let plan = DctPlan::new(shape.height, shape.width)?;
    let indices: Vec<usize> = (0..ds.len()).collect();
    let partial: Vec<Result<VarianceAccumulator>> = pool(threads)?.install(|| {
        indices
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = VarianceAccumulator::new(shape);
                for &i in chunk {
                    acc.push(&plan.forward(&ds.load(i)?)?)?;
                }
                Ok(acc)
            })
            .collect()
    });
    let mut total = VarianceAccumulator::new(shape);
    for acc in partial {
        total.merge(&acc?)?;
    }
    let spectrum = total.finish()?;
    Tensor::from_spectrum(&spectrum).save(output)?;
    let mut run = clock.finish(argv, vec![file_name(output)]);
    run.options = options(json!({
        "input": input.display().to_string(),
        "samples": spectrum.sample_count(),
        "shape": [shape.channels, shape.height, shape.width],
    }));
    write_sidecar(output, &run)?;
    println!("{} samples, shape {shape}", spectrum.sample_count());
    Ok(())
}

pub fn spectrum_fit(spectrum_path: &Path, out: &Path, argv: &[String]) -> Result<()> {
    let clock = RunClock::start();
    let spectrum = Tensor::load(spectrum_path)?
        .spectrum()
        .map_err(|e| Error::format(spectrum_path, e))?;
    let shape = spectrum.shape();
    let grid = FrequencyGrid::new(shape.height, shape.width, 0.0)?;
    let fit = fit_power_law(&spectrum, &grid)?;
    let params = PowerLawParams::from_fit(&fit);
    write_json(out, &params)?;
    let mut run = clock.finish(argv, vec![file_name(out)]);
    run.s0 = Some(S0Provenance::Spectrum {
        path: spectrum_path.display().to_string(),
        sha256: sha256_file(spectrum_path)?,
    });
    write_sidecar(out, &run)?;
    println!(
        "C = {} k0_sq = {} a = {} ({} modes{})",
        params.c,
        params.k0_sq,
        params.a,
        fit.modes_fitted,
        if fit.k0_sq_at_bound { ", k0_sq at bound" } else { "" }
    );
    Ok(())
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    if sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn schedule_inspect(spec: &str, grid: Grid, csv_path: &Path, tau: f64, argv: &[String]) -> Result<()> {
    let clock = RunClock::start();
    let loaded = load_schedule(spec)?;
    let spec = loaded.spec;
    let freq = FrequencyGrid::new(grid.height, grid.width, spec.k_c())?;
    let tables = CoefficientTables::new(spec, &freq)?;
    let mut w = csv_writer(csv_path)?;
    let wrap = |source| Error::Csv {
        path: csv_path.to_path_buf(),
        source,
    };
    let mut header = vec!["n".to_string(), "t".into(), "lambda".into(), "r_eff".into()];
    header.extend((0..=10).map(|d| format!("snr_p{}", d * 10)));
    w.write_record(&header).map_err(wrap)?;
    for n in 0..=spec.n_steps() {
        let t = spec.t_n(n);
        let mut snr = tables.snr(n);
        snr.sort_by(f64::total_cmp);
        let mut row = vec![
            n.to_string(),
            t.to_string(),
            tables.lambda(n).to_string(),
            spec.effective_resolution(t, tau)?.to_string(),
        ];
        row.extend((0..=10).map(|d| quantile(&snr, d as f64 / 10.0).to_string()));
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    let mut run = clock.finish(argv, vec![file_name(csv_path)]);
    run.config_hash = Some(sha256_hex(&loaded.bytes));
    run.schedule = Some(loaded.config);
    run.options = options(json!({ "grid": [grid.height, grid.width], "tau": tau }));
    write_sidecar(csv_path, &run)
}

/// Variance spectrum for `shape`, from a spectrum tensor or a power-law file.
fn load_s0(path: &Path, shape: Shape) -> Result<(VarianceSpectrum, S0Provenance)> {
    let sha256 = sha256_file(path)?;
    let display = path.display().to_string();
    if path.extension().is_some_and(|e| e == "json") {
        let params: PowerLawParams = read_json(path)?;
        let law = params.law(path)?;
        let grid = FrequencyGrid::new(shape.height, shape.width, 0.0)?;
        let s0 = eval_power_law(&law, &grid, shape.channels)?;
        let prov = S0Provenance::PowerLaw {
            path: display,
            sha256,
            c: law.c,
            k0_sq: law.k0_sq,
            a: law.a,
        };
        return Ok((s0, prov));
    }
    let mut s0 = Tensor::load(path)?.spectrum().map_err(|e| Error::format(path, e))?;
    let found = s0.shape();
    if found.channels == 1 && shape.channels > 1 && found.height == shape.height && found.width == shape.width {
        s0 = s0.broadcast(shape.channels)?;
    }
    if s0.shape() != shape {
        return Err(skild_core::Error::ShapeMismatch {
            expected: shape,
            found: s0.shape(),
        }
        .into());
    }
    Ok((s0, S0Provenance::Spectrum { path: display, sha256 }))
}

pub fn sample(args: &SampleArgs, argv: &[String]) -> Result<()> {
    let clock = RunClock::start();
    let loaded = load_schedule(&args.spec)?;
    let spec = loaded.spec;
    let n_steps = spec.n_steps();
    let start_n = args.start_n.unwrap_or(n_steps);
    if start_n == 0 || start_n > n_steps {
        return Err(Error::Usage(format!("--start-n must lie in [1, {n_steps}], got {start_n}")));
    }
    if args.count == 0 {
        return Err(Error::Usage("--count must be at least 1".into()));
    }
    let cheat_path = match &args.denoiser {
        DenoiserChoice::Cheat(p) => Some(p.clone()),
        DenoiserChoice::Gaussian => None,
    };
    let init_path = args.init.clone().or_else(|| cheat_path.clone());
    let load_batch = |p: &PathBuf| load_fields(p);
    let cheat_fields = cheat_path.as_ref().map(load_batch).transpose()?;
    let init_fields = match (&args.init, &cheat_fields) {
        (Some(p), _) => Some(load_fields(p)?),
        (None, Some(f)) => Some(f.clone()),
        (None, None) => None,
    };
    let shape = match (&init_fields, args.grid) {
        (Some(f), _) => f[0].shape(),
        (None, Some(g)) => Shape::new(args.channels, g.height, g.width)?,
        (None, None) if args.s0.extension().is_some_and(|e| e == "json") => {
            return Err(Error::Usage(
                "--grid is required when --s0 is a params file and no field is given".into(),
            ));
        }
        (None, None) => Tensor::load(&args.s0)?
            .field_shape()
            .map_err(|e| Error::format(&args.s0, e))?,
    };
    if init_fields.is_none() && start_n < n_steps {
        return Err(Error::Usage(
            "--start-n below N needs starting fields: pass --init or a cheat denoiser".into(),
        ));
    }
    let (s0, provenance) = load_s0(&args.s0, shape)?;
    let grid = FrequencyGrid::new(shape.height, shape.width, spec.k_c())?;
    let diffusion = Diffusion::new(CoefficientTables::new(spec, &grid)?, s0)?;
    let plan = DctPlan::new(shape.height, shape.width)?;
    let to_spectral = |fields: Vec<skild_core::PixelField>, path: &Path| -> Result<Vec<SpectralField>> {
        fields
            .iter()
            .map(|f| {
                if f.shape() != shape {
                    return Err(Error::format(path, format!("field shape {} differs from {shape}", f.shape())));
                }
                Ok(plan.forward(f)?)
            })
            .collect()
    };
    let cheat_x0 = match (cheat_fields, &cheat_path) {
        (Some(f), Some(p)) => Some(to_spectral(f, p)?),
        _ => None,
    };
    let init_x0 = match (init_fields, &init_path) {
        (Some(f), Some(p)) => Some(to_spectral(f, p)?),
        _ => None,
    };
    let oracle = cheat_x0.is_none().then(|| GaussianOracle::new(&diffusion));

    let run_one = |i: usize| -> Result<String> {
        let mut rng = chain_rng(args.seed, i as u64);
        let cheat;
        let denoiser: &(dyn Denoiser + Sync) = match (&cheat_x0, &oracle) {
            (Some(x0), _) => {
                cheat = CheatDenoiser::new(x0[i % x0.len()].clone());
                &cheat
            }
            (None, Some(o)) => o,
            (None, None) => unreachable!("one denoiser is always built"),
        };
        let start = match &init_x0 {
            Some(x0) => diffusion.forward_marginal(&x0[i % x0.len()], start_n, &mut rng)?,
            None => DiffusionState {
                n: start_n,
                field: diffusion.sample_prior(&mut rng),
            },
        };
        let grid = || ReverseGrid::from_timestep(start_n, n_steps);
        let out = match args.sampler {
            Sampler::Ancestral => diffusion.ancestral_sample(start, denoiser, &mut rng, 0)?,
            Sampler::Em => em_reverse(
                &diffusion,
                &start.field,
                &DenoiserScore::new(&diffusion, denoiser),
                grid()?,
                &mut rng,
            )?,
            Sampler::Ode => ode_reverse(&diffusion, &start.field, &DenoiserScore::new(&diffusion, denoiser), grid()?)?,
            Sampler::Pc => pc_reverse(
                &diffusion,
                &start.field,
                &DenoiserScore::new(&diffusion, denoiser),
                grid()?,
                args.corrector_iters,
                args.corrector_step,
                &mut rng,
            )?,
        };
        let name = format!("sample_{i:05}.skft");
        save_field(&args.out.join(&name), &plan.inverse(&out)?)?;
        Ok(name)
    };

    create_dir(&args.out)?;
    let files = pool(args.threads)?.install(|| (0..args.count).into_par_iter().map(run_one).collect::<Result<Vec<_>>>())?;

    let generator = options(json!({
        "sampler": format!("{:?}", args.sampler).to_lowercase(),
        "denoiser": match &args.denoiser {
            DenoiserChoice::Gaussian => "gaussian".to_string(),
            DenoiserChoice::Cheat(p) => format!("cheat:{}", p.display()),
        },
        "init": init_path.map(|p| p.display().to_string()),
        "start_n": start_n,
        "count": args.count,
        "corrector_iters": args.corrector_iters,
        "corrector_step": args.corrector_step,
    }));
    let mut run = clock.finish(argv, files.clone());
    run.config_hash = Some(sha256_hex(&loaded.bytes));
    run.seed = Some(args.seed);
    run.schedule = Some(loaded.config);
    run.s0 = Some(provenance);
    run.options = generator.clone();
    let dims = Tensor::from_field(&skild_core::PixelField::zeros(shape)).dims().to_vec();
    let manifest = DatasetManifest {
        files,
        shape: dims,
        generator,
        seed: Some(args.seed),
        run: Some(run),
    };
    write_json(&args.out.join(MANIFEST_FILE), &manifest)?;
    println!("{} samples written to {}", args.count, args.out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn ising_gen(
    side: usize,
    chains: usize,
    burn_in: usize,
    samples: usize,
    seed: u64,
    beta: f64,
    out: &Path,
    argv: &[String],
) -> Result<()> {
    let clock = RunClock::start();
    let protocol = DatasetProtocol {
        beta,
        ..DatasetProtocol::new(side, chains, burn_in, samples)
    };
    create_dir(out)?;
    let mut files = Vec::with_capacity(samples);
    let mut io_error = None;
    let result = generate_dataset(protocol, seed, |_, lattice| {
        let name = format!("ising_{:06}.skft", files.len());
        if let Err(e) = save_field(&out.join(&name), &lattice.to_pixel_field()) {
            io_error = Some(e);
            return Err(skild_core::Error::InvalidParameter {
                name: "out",
                reason: "write failed".into(),
            });
        }
        files.push(name);
        Ok(())
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    result?;
    let generator = options(json!({
        "algorithm": "wolff",
        "boundary": "periodic",
        "L": side,
        "beta": beta,
        "p": bond_probability(beta),
        "chains": chains,
        "burn_in": burn_in,
        "samples": samples,
        "save_spacing": protocol.save_spacing(),
    }));
    let mut run = clock.finish(argv, files.clone());
    run.seed = Some(seed);
    run.options = generator.clone();
    let manifest = DatasetManifest {
        files,
        shape: vec![side, side],
        generator,
        seed: Some(seed),
        run: Some(run),
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    println!("{samples} configurations written to {}", out.display());
    Ok(())
}

pub fn ising_enum(side: usize, beta: f64, sides: &[usize], out: &Path, argv: &[String]) -> Result<()> {
    let clock = RunClock::start();
    let exact = exact_enumeration(side, beta, sides)?;
    let corners: Vec<Value> = exact
        .corners
        .iter()
        .map(|(d, m)| json!({ "side": d, "g4": m.g4, "ca": m.ca, "cb": m.cb, "kappa4": m.kappa4() }))
        .collect();
    let report = json!({
        "L": exact.side,
        "beta": exact.beta,
        "log_partition": exact.log_partition,
        "energy": exact.energy,
        "abs_magnetization": exact.abs_magnetization,
        "corners": corners,
    });
    write_json(out, &report)?;
    write_sidecar(out, &clock.finish(argv, vec![file_name(out)]))?;
    println!("<E> = {} <|m|> = {}", exact.energy, exact.abs_magnetization);
    Ok(())
}

#[derive(Serialize)]
struct Kappa4Record {
    side: usize,
    samples: usize,
    g4: f64,
    ca: f64,
    cb: f64,
    kappa4: f64,
    ci_low: f64,
    ci_high: f64,
    std_error: f64,
    confidence: f64,
    threshold: &'static str,
}

pub fn kappa4(args: &Kappa4Args, argv: &[String]) -> Result<()> {
    let clock = RunClock::start();
    let ds = Dataset::open(&args.inputs)?;
    let plan = BootstrapPlan::new(args.bootstrap, args.confidence, args.seed)?;
    let first = SpinLattice::from_field_sign(&ds.load(0)?)?;
    let sides: Vec<usize> = match &args.sides {
        Some(s) => s.clone(),
        None => DEFAULT_SIDES.iter().copied().filter(|&d| d < first.side()).collect(),
    };
    // moments[image][side]
    let per_image: Vec<Vec<CornerMoments>> = pool(args.threads)?.install(|| {
        (0..ds.len())
            .into_par_iter()
            .map(|i| {
                let lattice = SpinLattice::from_field_sign(&ds.load(i)?)?;
                if lattice.side() != first.side() {
                    return Err(Error::format(
                        &ds.root.join(&ds.manifest.files[i]),
                        format!("lattice side {} differs from {}", lattice.side(), first.side()),
                    ));
                }
                sides
                    .iter()
                    .map(|&d| Ok(corner_moments(lattice.spins(), lattice.side(), d)?))
                    .collect()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let by_side: Vec<Vec<CornerMoments>> = (0..sides.len())
        .map(|s| per_image.iter().map(|m| m[s]).collect())
        .collect();
    let rows = kappa4_from_moments(&by_side, &sides, &plan)?;
    let records: Vec<Kappa4Record> = rows
        .iter()
        .map(|r| Kappa4Record {
            side: r.side,
            samples: r.samples,
            g4: r.moments.g4,
            ca: r.moments.ca,
            cb: r.moments.cb,
            kappa4: r.kappa4,
            ci_low: r.interval.low,
            ci_high: r.interval.high,
            std_error: r.interval.std_error,
            confidence: plan.confidence,
            threshold: SIGN_THRESHOLD,
        })
        .collect();
    write_rows(&args.csv, &records)?;
    let mut run = clock.finish(argv, vec![file_name(&args.csv)]);
    run.seed = Some(args.seed);
    run.options = options(json!({
        "inputs": args.inputs.display().to_string(),
        "sides": sides,
        "bootstrap": plan.resamples,
        "confidence": plan.confidence,
        "threshold": SIGN_THRESHOLD,
    }));
    write_sidecar(&args.csv, &run)
}

#[derive(Serialize)]
struct SweepRecord {
    tau: f64,
    lambda: f64,
    mse: f64,
    psnr: f64,
}

pub fn validate_bicubic(args: &BicubicArgs, argv: &[String]) -> Result<()> {
    let clock = RunClock::start();
    let loaded = load_schedule(&args.spec)?;
    let images = load_fields(&args.x0)?;
    let rows = bicubic_threshold_sweep(&images, loaded.spec.k_c(), &args.thresholds, args.factor)?;
    let records: Vec<SweepRecord> = rows
        .iter()
        .map(|r| SweepRecord {
            tau: r.tau,
            lambda: r.lambda,
            mse: r.comparison.mse,
            psnr: r.comparison.psnr,
        })
        .collect();
    write_rows(&args.csv, &records)?;
    let mut run = clock.finish(argv, vec![file_name(&args.csv)]);
    run.config_hash = Some(sha256_hex(&loaded.bytes));
    run.schedule = Some(loaded.config);
    run.options = options(json!({
        "x0": args.x0.display().to_string(),
        "x0_sha256": sha256_file(&args.x0)?,
        "images": images.len(),
        "factor": args.factor,
        "thresholds": args.thresholds,
    }));
    write_sidecar(&args.csv, &run)?;
    if let Some(best) = rows
        .iter()
        .max_by(|a, b| a.comparison.psnr.total_cmp(&b.comparison.psnr))
    {
        println!("best tau = {} ({} dB)", best.tau, best.comparison.psnr);
    }
    Ok(())
}

pub fn sr_start(args: &SrStartArgs) -> Result<()> {
    let spec = load_schedule(&args.spec)?.spec;
    let n0 = spec.choose_start_timestep(args.target_res, args.tau)?;
    println!("{n0}");
    Ok(())
}
