use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, TimeZone, Utc};
use lcafix::imgio::{
    read_metadata, read_raster, sidecar_path, write_image, write_metadata, BitDepth,
};
use lcafix::planes::equalise_histogram;
use lcafix::quantify::quantify_pair;
use lcafix::recover::{linspace, recover_coefficients, sweep_error_surface, write_trace};
use lcafix::synth::{
    apply_lca, render_chequerboard, simulate_sensor, write_sidecar_with_truth, ChequerSpec, Truth,
};
use lcafix::warp::correct_image;
use lcafix::{
    Coefficients, CorrectionRecord, ImageMetadata, Intrinsics, LensDb, Lookup, Orientation,
    RgbImage,
};

use crate::{
    Command, CorrectArgs, DbCommand, DistortArgs, PlaneArg, QuantifyArgs, RecoverArgs, SweepArgs,
    SynthArgs,
};

pub fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Recover(a) => recover(a),
        Command::Correct(a) => correct(a),
        Command::Distort(a) => distort(a),
        Command::Quantify(a) => quantify(a),
        Command::Sweep(a) => sweep(a),
        Command::Db {
            command: DbCommand::List { db, lens },
        } => db_list(&db, lens.as_deref()),
        Command::Synth(a) => synth(a),
    }
}

fn fmt_coeffs(c: &Coefficients) -> String {
    format!("{:.9} {:.9} {:.9} {:.9}", c.a, c.b, c.c, c.d)
}

/// Image plus its sidecar, checked against each other.
fn load(path: &Path) -> Result<(RgbImage, BitDepth, ImageMetadata)> {
    let (img, depth) = read_raster(path).with_context(|| format!("reading {}", path.display()))?;
    let side = sidecar_path(path);
    let meta = read_metadata(&side).with_context(|| format!("reading {}", side.display()))?;
    if !meta.matches_dims(&img) {
        bail!(
            "{} says {}x{} but the image is {}x{}",
            side.display(),
            meta.width,
            meta.height,
            img.width(),
            img.height()
        );
    }
    Ok((img, depth, meta))
}

fn intrinsics(
    meta: Option<&ImageMetadata>,
    img: &RgbImage,
    centre: Option<(f64, f64)>,
) -> Intrinsics {
    let (w, h) = img.dims();
    match (centre, meta) {
        (Some((x, y)), _) => Intrinsics::with_centre(w, h, x, y),
        (None, Some(m)) => m.intrinsics(),
        (None, None) => Intrinsics::for_dims(w, h),
    }
}

fn created_at(flag: Option<&str>) -> Result<DateTime<Utc>> {
    if let Some(s) = flag {
        return Ok(DateTime::parse_from_rfc3339(s)
            .with_context(|| format!("--created-at `{s}` is not RFC 3339"))?
            .with_timezone(&Utc));
    }
    if let Ok(s) = std::env::var("SOURCE_DATE_EPOCH") {
        let secs: i64 = s
            .trim()
            .parse()
            .with_context(|| format!("SOURCE_DATE_EPOCH `{s}`"))?;
        return Utc
            .timestamp_opt(secs, 0)
            .single()
            .with_context(|| format!("SOURCE_DATE_EPOCH {secs} out of range"));
    }
    Ok(Utc::now())
}

fn write_corrected(
    img: &RgbImage,
    depth: BitDepth,
    meta: &ImageMetadata,
    rg: Coefficients,
    bg: Coefficients,
    out: &Path,
) -> Result<()> {
    write_image(img, out, depth).with_context(|| format!("writing {}", out.display()))?;
    write_metadata(meta, rg, bg, sidecar_path(out))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn recover(a: RecoverArgs) -> Result<ExitCode> {
    let (img, depth, meta) = load(&a.image)?;
    if meta.lca_corrected && !a.force {
        println!(
            "{} is already corrected; skipping (use --force to recover anyway)",
            a.image.display()
        );
        return Ok(ExitCode::SUCCESS);
    }
    let settings = a.settings.resolve();
    let params = meta.lens_params();
    params.validate()?;
    let intr = intrinsics(Some(&meta), &img, a.centre);
    let created_at = created_at(a.created_at.as_deref())?;

    let (rg, bg) = recover_coefficients(&img, &intr, &settings)?;
    if let Some(t) = &a.trace {
        write_trace(t, &[&rg, &bg])?;
    }
    for (name, r) in [("R-G", &rg), ("B-G", &bg)] {
        println!(
            "{name}: {}  error {:.6}  evaluations {}{}",
            fmt_coeffs(&r.coeffs),
            r.final_error,
            r.evaluations,
            if r.converged { "" } else { "  (not converged)" }
        );
    }
    if !(rg.converged && bg.converged) && !a.allow_nonconverged {
        eprintln!(
            "recovery did not converge within {} evaluations; nothing stored",
            settings.max_evals
        );
        return Ok(ExitCode::from(2));
    }

    let record = CorrectionRecord {
        params,
        rg: rg.coeffs,
        bg: bg.coeffs,
        width: img.width(),
        height: img.height(),
        centre_x: intr.centre_x,
        centre_y: intr.centre_y,
        created_at,
    };
    let db = LensDb::open(&a.db);
    db.append(&record)?;
    println!(
        "stored record for `{}` in {}",
        record.params.lens_id,
        a.db.display()
    );

    if a.write_corrected {
        let out = a.out.as_deref().expect("clap requires --out");
        let corrected = correct_image(&img, &rg.coeffs, &bg.coeffs, &intr);
        write_corrected(&corrected, depth, &meta, rg.coeffs, bg.coeffs, out)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn correct(a: CorrectArgs) -> Result<ExitCode> {
    let (img, depth, meta) = load(&a.image)?;
    if meta.lca_corrected && !a.force {
        println!(
            "{} is already corrected; skipping (use --force to correct again)",
            a.image.display()
        );
        return Ok(ExitCode::SUCCESS);
    }
    let intr = intrinsics(Some(&meta), &img, a.centre);
    let lookup = if a.interpolate {
        Lookup::Interpolate
    } else {
        Lookup::Nearest(a.weights.unwrap_or_default())
    };
    let db = LensDb::open(&a.db);
    let (rg, bg) = db.coefficients_for(&meta.lens_params(), &intr, lookup)?;
    println!("R-G: {}", fmt_coeffs(&rg));
    println!("B-G: {}", fmt_coeffs(&bg));
    let corrected = correct_image(&img, &rg, &bg, &intr);
    write_corrected(&corrected, depth, &meta, rg, bg, &a.out)?;
    Ok(ExitCode::SUCCESS)
}

fn distort(a: DistortArgs) -> Result<ExitCode> {
    let (img, depth) =
        read_raster(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let side = sidecar_path(&a.image);
    let meta = if side.exists() {
        Some(read_metadata(&side)?)
    } else {
        None
    };
    let intr = intrinsics(meta.as_ref(), &img, a.centre);
    let out = apply_lca(&img, &a.coeffs_rg, &a.coeffs_bg, &intr);
    write_image(&out, &a.out, depth).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(m) = meta {
        let truth = Truth {
            rg: a.coeffs_rg,
            bg: a.coeffs_bg,
        };
        write_sidecar_with_truth(&m, &truth, sidecar_path(&a.out))?;
    }
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn quantify(a: QuantifyArgs) -> Result<ExitCode> {
    let before = read_raster(&a.before)
        .with_context(|| format!("reading {}", a.before.display()))?
        .0;
    let after = read_raster(&a.after)
        .with_context(|| format!("reading {}", a.after.display()))?
        .0;
    let s = quantify_pair(&before, &after, a.window)?;
    s.write_csv(&a.out)?;
    let values = s.values();
    let total: f64 = values.iter().sum();
    let (peak_at, peak) = s.bins.iter().fold((0.0, 0.0), |best, &(f, v)| {
        if v.abs() > f64::abs(best.1) {
            (f, v)
        } else {
            best
        }
    });
    println!(
        "{} bins, sum {total:.6e}, largest change {peak:.6e} at {peak_at:.3} of Nyquist",
        values.len()
    );
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn sweep(a: SweepArgs) -> Result<ExitCode> {
    if a.steps < 2 {
        bail!("--steps must be at least 2");
    }
    let (img, _) =
        read_raster(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let side = sidecar_path(&a.image);
    let meta = if side.exists() {
        Some(read_metadata(&side)?)
    } else {
        None
    };
    let intr = intrinsics(meta.as_ref(), &img, a.centre);
    let work = match a.plane {
        PlaneArg::R => &img.r,
        PlaneArg::B => &img.b,
    };
    let ga = linspace(a.a_range.0, a.a_range.1, a.steps);
    let gb = linspace(a.b_range.0, a.b_range.1, a.steps);
    let surface = sweep_error_surface(
        &equalise_histogram(work),
        &equalise_histogram(&img.g),
        &intr,
        &ga,
        &gb,
    )?;
    fs::write(&a.out, surface.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    let (i, j) = surface.argmin();
    println!(
        "minimum {:.6} at a={} b={}{}",
        surface.at(i, j),
        ga[i],
        gb[j],
        if surface.has_unique_minimum() {
            ""
        } else {
            " (tied)"
        }
    );
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn db_list(path: &Path, lens: Option<&str>) -> Result<ExitCode> {
    let db = LensDb::open(path);
    let records = match lens {
        Some(id) => db.records_for(id)?,
        None => db.records()?,
    };
    if records.is_empty() {
        println!("no records");
    }
    for r in &records {
        println!(
            "{}  {}  f={} mm  f/{}  focus={} mm  {}x{}",
            r.created_at.to_rfc3339(),
            r.params.lens_id,
            r.params.focal_length,
            r.params.aperture,
            r.params.focus_distance,
            r.width,
            r.height
        );
        println!("  R-G: {}", fmt_coeffs(&r.rg));
        println!("  B-G: {}", fmt_coeffs(&r.bg));
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let depth = BitDepth::from_bits(a.bits)
        .with_context(|| format!("--bits must be 8 or 16, got {}", a.bits))?;
    let spec = ChequerSpec {
        width: a.width,
        height: a.height,
        cell: a.cell,
        ..ChequerSpec::default()
    };
    let board = render_chequerboard(&spec)?;
    let intr = Intrinsics::for_dims(a.width, a.height);
    let truth = Truth {
        rg: a.coeffs_rg.unwrap_or(lcafix::synth::DEFAULT_RG),
        bg: a.coeffs_bg.unwrap_or(lcafix::synth::DEFAULT_BG),
    };
    let mut img = apply_lca(&board, &truth.rg, &truth.bg, &intr);
    if a.sensor {
        img = simulate_sensor(&img)?;
    }
    write_image(&img, &a.out, depth).with_context(|| format!("writing {}", a.out.display()))?;
    let meta = ImageMetadata {
        lens_id: a.lens_id,
        camera_id: "synthetic".into(),
        focal_length: a.focal_length,
        aperture: a.aperture,
        focus_distance: a.focus_distance,
        orientation: Orientation::TopLeft,
        width: a.width,
        height: a.height,
        lca_corrected: false,
        centre_x: None,
        centre_y: None,
        coeffs_rg: None,
        coeffs_bg: None,
    };
    meta.lens_params().validate()?;
    write_sidecar_with_truth(&meta, &truth, sidecar_path(&a.out))?;
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}
