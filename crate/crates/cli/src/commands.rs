//! One function per subcommand.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kgin::cs::{cs_tv_reconstruct, zero_filled, CsConfig};
use kgin::forward::CoilMaps;
use kgin::image::{ComplexImage, RealImage};
use kgin::inr::{load_weights, save_weights};
use kgin::kspace::{load_dataset, read_manifest, save_dataset, write_manifest, KSpaceSamples};
use kgin::metrics::{psnr_from_rmse, rmse, ssim, MetricsRecord, METRICS_HEADER};
use kgin::pgm::{read_pgm, write_pgm};
use kgin::phantom::{generate_coil_maps, generate_phantom, jitter_spec, simulate_kspace, PhantomSpec};
use kgin::training::{
    finetune_patient, reconstruct_inr, train_prior as fit_prior, tune_threshold, Checkpoint, DiscriminatorConfig,
    FineTuneConfig, PriorTrainConfig,
};
use kgin::trajectory::{normalize_coords, Trajectory, UndersamplingSpec};

use crate::config::RunConfig;
use crate::{report as rep, CliError, ReconIo};

type Result<T> = std::result::Result<T, CliError>;

/// Candidate stopping thresholds: 1e-4 steps up to 0.2.
fn tau_grid() -> Vec<f64> {
    (1..=2000).map(|i| i as f64 * 1e-4).collect()
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        return Ok(p.to_path_buf());
    }
    let cwd = std::env::current_dir().map_err(|e| kgin::Error::Io {
        path: ".".into(),
        source: e,
    })?;
    Ok(cwd.join(p))
}

/// Resolves an input path and checks that it exists.
fn input(p: &Path) -> Result<PathBuf> {
    let p = absolute(p)?;
    std::fs::metadata(&p).map_err(|e| kgin::Error::Io {
        path: p.clone(),
        source: e,
    })?;
    Ok(p)
}

/// Resolves an output path and checks that its directory exists.
fn output(p: &Path) -> Result<PathBuf> {
    let p = absolute(p)?;
    if let Some(dir) = p.parent() {
        if !dir.is_dir() {
            return Err(CliError::Data(format!("output directory {} does not exist", dir.display())));
        }
    }
    Ok(p)
}

/// The phantom of the single case `case_seed`.
fn case_phantom(cfg: &RunConfig) -> PhantomSpec {
    let mut warnings = Vec::new();
    let spec = jitter_spec(&cfg.base_phantom(), cfg.jitter, cfg.case_seed, &mut warnings);
    for w in warnings {
        log::warn!("{w}");
    }
    spec
}

fn coil_maps(cfg: &RunConfig) -> Result<CoilMaps> {
    Ok(generate_coil_maps(cfg.dims(), cfg.coils, cfg.seed)?)
}

/// Reshapes a PGM (slices stacked vertically) to the configured volume.
fn as_volume(img: RealImage, dims: [usize; 3], what: &Path) -> Result<RealImage> {
    if img.data.len() != dims.iter().product::<usize>() || img.dims[0] != dims[0] {
        return Err(kgin::Error::Shape(format!(
            "{} is {}x{} but the config describes {}x{}x{}",
            what.display(),
            img.dims[0],
            img.dims[1],
            dims[0],
            dims[1],
            dims[2]
        ))
        .into());
    }
    Ok(RealImage::new(dims, img.data)?)
}

/// A dataset with the trajectory, coordinate frame and coil maps the
/// config implies. `.kgd` files store neither, so both are regenerated:
/// the frame from the full scan, the trajectory from the first spokes.
struct Scan {
    samples: KSpaceSamples,
    traj: Trajectory,
    full: Trajectory,
    maps: CoilMaps,
}

fn load_scan(cfg: &RunConfig, path: &Path) -> Result<Scan> {
    let samples = load_dataset(&input(path)?)?;
    let full = cfg.acquisition(0).trajectory()?;
    let per = full.samples_per_spoke();
    if samples.n_coils != cfg.coils {
        return Err(CliError::Data(format!(
            "{} has {} coils but coils = {}",
            path.display(),
            samples.n_coils,
            cfg.coils
        )));
    }
    if samples.is_empty() || samples.len() % per != 0 || samples.len() > full.len() {
        return Err(CliError::Data(format!(
            "{} holds {} samples; nx = {}, partitions = {} and {} spokes allow multiples of {} up to {}",
            path.display(),
            samples.len(),
            cfg.nx,
            cfg.partitions,
            full.n_spokes,
            per,
            full.len()
        )));
    }
    let traj = full.first_spokes(samples.len() / per);
    let samples = samples.with_map(normalize_coords(&full)?.map)?;
    samples.check_trajectory(&traj)?;
    Ok(Scan {
        samples,
        traj,
        full,
        maps: coil_maps(cfg)?,
    })
}

pub fn gen_phantom(cfg: &RunConfig, out: &Path) -> Result<()> {
    let out = output(out)?;
    let image = generate_phantom(&case_phantom(cfg))?;
    write_pgm(&RealImage::normalized_magnitude(&image), &out)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

pub fn make_cohort(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let dir = absolute(dir)?;
    std::fs::create_dir_all(&dir).map_err(|e| kgin::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let acq = cfg.acquisition(cfg.seed);
    let traj = acq.trajectory()?;
    let cohort = kgin::phantom::make_cohort(cfg.cases, &cfg.base_phantom(), cfg.jitter, &traj, &acq)?;
    for w in &cohort.warnings {
        log::warn!("{w}");
    }
    let mut names = Vec::new();
    for (i, case) in cohort.cases.iter().enumerate() {
        let name = format!("case_{i:03}");
        save_dataset(&case.samples, &dir.join(format!("{name}.kgd")))?;
        write_pgm(&RealImage::normalized_magnitude(&case.image), &dir.join(format!("{name}.pgm")))?;
        names.push(format!("{name}.kgd"));
    }
    let comment = format!("kgin cohort\n{}", cfg.to_text());
    write_manifest(&dir.join("manifest.txt"), &names, &comment)?;
    log::info!("wrote {} cases to {}", names.len(), dir.display());
    Ok(())
}

pub fn simulate(cfg: &RunConfig, out: &Path, truth_out: Option<&Path>, image: Option<&Path>) -> Result<()> {
    let out = output(out)?;
    let truth_out = truth_out.map(output).transpose()?;
    let image = match image {
        Some(p) => {
            let p = input(p)?;
            let img = as_volume(read_pgm(&p)?, cfg.dims(), &p)?;
            ComplexImage::from_real(img.dims, &img.data)?
        }
        None => generate_phantom(&case_phantom(cfg))?,
    };
    let acq = cfg.acquisition(cfg.case_seed);
    let traj = acq.trajectory()?;
    let samples = simulate_kspace(&image, &coil_maps(cfg)?, &traj, &acq)?;
    save_dataset(&samples, &out)?;
    if let Some(t) = truth_out {
        write_pgm(&RealImage::normalized_magnitude(&image), &t)?;
    }
    log::info!("wrote {} ({} spokes, {} samples)", out.display(), traj.n_spokes, samples.len());
    Ok(())
}

pub fn undersample(cfg: &RunConfig, input_path: &Path, out: &Path) -> Result<()> {
    let out = output(out)?;
    let scan = load_scan(cfg, input_path)?;
    let (kept, traj) = scan.samples.undersample(&scan.traj, UndersamplingSpec::new(cfg.accel)?)?;
    save_dataset(&kept, &out)?;
    log::info!(
        "kept {} of {} spokes (R = {}) -> {}",
        traj.n_spokes,
        scan.traj.n_spokes,
        cfg.accel,
        out.display()
    );
    Ok(())
}

fn finetune_config(cfg: &RunConfig) -> FineTuneConfig {
    FineTuneConfig {
        lr: cfg.ft_lr,
        max_iters: cfg.max_iters,
        stop_threshold: cfg.tau,
        eval_every: cfg.eval_every,
        seed: cfg.seed,
    }
}

fn with_extension_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.with_extension("").into_os_string();
    s.push(suffix);
    s.into()
}

pub fn train_prior(
    cfg: &RunConfig,
    manifest: &Path,
    out: &Path,
    trace: Option<&Path>,
    validation: &[PathBuf],
) -> Result<()> {
    let out = output(out)?;
    let trace = output(&trace.map_or_else(|| with_extension_suffix(&out, ".trace.csv"), Path::to_path_buf))?;
    let files = read_manifest(&input(manifest)?)?;
    let cohort = files
        .iter()
        .map(|f| load_scan(cfg, f).map(|s| s.samples))
        .collect::<Result<Vec<_>>>()?;
    let val = validation
        .iter()
        .map(|f| load_scan(cfg, f))
        .collect::<Result<Vec<_>>>()?;
    for (s, f) in val.iter().zip(validation) {
        if s.traj.n_spokes != s.full.n_spokes {
            return Err(CliError::Data(format!("validation scan {} is not fully sampled", f.display())));
        }
    }
    let pc = PriorTrainConfig {
        lr_g: cfg.prior_lr,
        epochs: cfg.prior_epochs,
        batch_samples: cfg.batch,
        rec_weight: 1.0,
        adv_weight: cfg.adv_weight,
        disc: DiscriminatorConfig {
            hidden_layers: cfg.disc_layers,
            width: cfg.disc_width,
            lr_ratio: cfg.disc_lr_ratio,
        },
        seed: cfg.seed,
    };
    log::info!("training prior on {} cases for {} epochs", cohort.len(), cfg.prior_epochs);
    let t = Instant::now();
    let outcome = fit_prior(&cohort, &cfg.network(), &pc)?;
    if let Some(last) = outcome.trace.last() {
        log::info!("prior done in {:.1}s, last MSE {:.3e}", t.elapsed().as_secs_f64(), last.l_train);
    }
    save_weights(&outcome.checkpoint.params, &out)?;
    outcome.trace.save(&trace)?;

    if !val.is_empty() {
        let ft = finetune_config(cfg);
        for r in cfg.accel_list()? {
            let spec = UndersamplingSpec::new(r)?;
            let cases = val
                .iter()
                .map(|s| Ok((s.samples.undersample(&s.traj, spec)?.0, s.samples.clone())))
                .collect::<Result<Vec<_>>>()?;
            let (choice, _) = tune_threshold(&cases, &outcome.checkpoint, &tau_grid(), &ft)?;
            let path = with_extension_suffix(&out, &format!(".tau-x{r}.cfg"));
            let text = format!(
                "# stopping threshold for R = {r}: validation loss {:.6} at iteration {}\ntau = {}\n",
                choice.mean_l_val, choice.iteration, choice.tau
            );
            std::fs::write(&path, text).map_err(|e| kgin::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            log::info!("R = {r}: tau = {} (iteration {}) -> {}", choice.tau, choice.iteration, path.display());
        }
    }
    Ok(())
}

/// Writes the image and, given ground truth, appends a metrics row.
fn finish_recon(
    cfg: &RunConfig,
    io: &ReconIo,
    method: &str,
    image: &RealImage,
    seconds: f64,
) -> Result<()> {
    let out = output(&io.out)?;
    write_pgm(image, &out)?;
    log::info!("{method}: wrote {} after {seconds:.2}s", out.display());
    let Some(truth) = &io.truth else {
        return Ok(());
    };
    let tp = input(truth)?;
    let truth = as_volume(read_pgm(&tp)?, image.dims, &tp)?;
    let e = rmse(&image.data, &truth.data)?;
    let case = io.case.clone().unwrap_or_else(|| {
        io.input
            .file_stem()
            .map_or_else(|| "case".into(), |s| s.to_string_lossy().into_owned())
    });
    let record = MetricsRecord {
        case,
        method: method.into(),
        accel: cfg.accel,
        ssim: ssim(&image.data, &truth.data, image.dims, &cfg.ssim_config())?,
        rmse: e,
        psnr_db: psnr_from_rmse(e, 1.0)?,
        seconds,
    };
    log::info!("{method}: ssim {:.4} rmse {:.4} psnr {:.2} dB", record.ssim, record.rmse, record.psnr_db);
    match &io.metrics {
        Some(m) => append_metrics(&output(m)?, &record),
        None => {
            log::warn!("no --metrics file given; metrics row not saved");
            Ok(())
        }
    }
}

fn append_metrics(path: &Path, record: &MetricsRecord) -> Result<()> {
    let io_err = |e| kgin::Error::Io {
        path: path.into(),
        source: e,
    };
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
    let mut text = String::new();
    if fresh {
        text.push_str(METRICS_HEADER);
        text.push('\n');
    }
    text.push_str(&kgin::metrics::write_metrics_csv(std::slice::from_ref(record))?.lines().nth(1).unwrap_or(""));
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(io_err)?;
    Ok(())
}

pub fn recon_inr(
    cfg: &RunConfig,
    io: &ReconIo,
    prior: &Path,
    weights_out: Option<&Path>,
    trace: Option<&Path>,
) -> Result<()> {
    let weights_out = weights_out.map(output).transpose()?;
    let trace = trace.map(output).transpose()?;
    let params = load_weights(&input(prior)?)?;
    let scan = load_scan(cfg, &io.input)?;
    let t = Instant::now();
    let ft = finetune_patient(&Checkpoint::initial(params), &scan.samples, None, &finetune_config(cfg))?;
    let ck = &ft.checkpoint;
    if ft.converged {
        log::info!("fine-tuning reached tau = {} at iteration {}", cfg.tau, ck.iteration);
    } else {
        log::warn!("fine-tuning stopped at max_iters = {} above tau = {}", cfg.max_iters, cfg.tau);
    }
    let map = scan.samples.map.as_ref().expect("load_scan attaches the frame");
    let image = reconstruct_inr(&ck.params, &scan.full, map, scan.samples.scale, &scan.maps)?;
    let seconds = t.elapsed().as_secs_f64();
    if let Some(p) = weights_out {
        save_weights(&ck.params, &p)?;
    }
    if let Some(p) = trace {
        ft.trace.save(&p)?;
    }
    finish_recon(cfg, io, "k-ginr", &image, seconds)
}

pub fn recon_cs(cfg: &RunConfig, io: &ReconIo) -> Result<()> {
    let scan = load_scan(cfg, &io.input)?;
    let cs = CsConfig {
        lambda_tv: cfg.lambda_tv,
        huber_eps: cfg.huber_eps,
        max_iters: cfg.cs_iters,
        ..CsConfig::default()
    };
    let t = Instant::now();
    let r = cs_tv_reconstruct(&scan.samples, &scan.traj, &scan.maps, &cs)?;
    log::info!(
        "cs-tv: {} iterations, objective {:.4e} -> {:.4e}",
        r.trace.len() - 1,
        r.trace[0],
        r.trace[r.trace.len() - 1]
    );
    finish_recon(cfg, io, "cs-tv", &r.image, t.elapsed().as_secs_f64())
}

pub fn recon_zf(cfg: &RunConfig, io: &ReconIo) -> Result<()> {
    let scan = load_scan(cfg, &io.input)?;
    let t = Instant::now();
    let image = zero_filled(&scan.samples, &scan.traj, &scan.maps)?;
    finish_recon(cfg, io, "zero-filled", &image, t.elapsed().as_secs_f64())
}

pub fn evaluate(cfg: &RunConfig, image: &Path, truth: &Path, out: Option<&Path>) -> Result<()> {
    let out = out.map(output).transpose()?;
    let a = read_pgm(&input(image)?)?;
    let b = read_pgm(&input(truth)?)?;
    if a.dims != b.dims {
        return Err(kgin::Error::Shape(format!(
            "image is {}x{}, truth is {}x{}",
            a.dims[0], a.dims[1], b.dims[0], b.dims[1]
        ))
        .into());
    }
    let e = rmse(&a.data, &b.data)?;
    let s = ssim(&a.data, &b.data, a.dims, &cfg.ssim_config())?;
    let line = format!("ssim={s} rmse={e} psnr_db={}\n", psnr_from_rmse(e, 1.0)?);
    match out {
        Some(p) => std::fs::write(&p, line).map_err(|e| kgin::Error::Io { path: p, source: e })?,
        None => print!("{line}"),
    }
    Ok(())
}

pub fn report(
    metrics: &[PathBuf],
    out: &Path,
    images: &[PathBuf],
    profiles: Option<&Path>,
    row: Option<usize>,
) -> Result<()> {
    if images.is_empty() != profiles.is_none() {
        return Err(CliError::Usage("--image and --profiles go together".into()));
    }
    let out = output(out)?;
    let profiles = profiles.map(output).transpose()?;
    let mut records = Vec::new();
    for m in metrics {
        let p = input(m)?;
        let text = std::fs::read_to_string(&p).map_err(|e| kgin::Error::Io {
            path: p.clone(),
            source: e,
        })?;
        records.extend(kgin::metrics::parse_metrics_csv(&text)?);
    }
    let rows = rep::summarize(&records).map_err(CliError::Data)?;
    write_text(&out, &rep::summary_csv(&rows))?;
    log::info!("{} summary rows from {} records -> {}", rows.len(), records.len(), out.display());
    if let Some(pp) = profiles {
        let imgs = images
            .iter()
            .map(|p| {
                let name = p.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
                Ok((name, read_pgm(&input(p)?)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let y = row.unwrap_or(imgs[0].1.dims[1] / 2);
        write_text(&pp, &rep::line_profiles(&imgs, y).map_err(CliError::Data)?)?;
        log::info!("line profiles at row {y} -> {}", pp.display());
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| {
        kgin::Error::Io {
            path: path.into(),
            source: e,
        }
        .into()
    })
}
