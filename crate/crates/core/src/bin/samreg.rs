use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use samreg_core::fit::{evaluate_pairs, fit_ddf, FitConfig, FitPair, PairMetrics};
use samreg_core::grid::{BinaryMask, Dims, DisplacementField, GridImage, Warp};
use samreg_core::io::{
    format_mask_manifest, format_pair_manifest, format_report, mask_file_name, read_grid,
    read_mask_manifest, read_pair_manifest, write_atomic, write_grid, GridFile, MaskEntry,
    PairRecord, Payload, MASK_MANIFEST,
};
use samreg_core::matching::{MatchConfig, MatchMode};
use samreg_core::pipeline::{ImageCandidates, Pipeline};
use samreg_core::segment::{candidate_rois, QuantileSegmenter, RoiFilterConfig};
use samreg_core::synth::{generate, generate_shifted_volume, label_candidates, SynthSpec};
use samreg_core::volume::match_volume_candidates;
use samreg_core::Error;

#[derive(Parser)]
#[command(name = "samreg", version, about = "ROI-pair correspondence registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment candidate ROIs and write one mask file per ROI.
    Segment(SegmentArgs),
    /// Match two mask sets into a pair manifest.
    Match(MatchArgs),
    /// Fit a displacement field to the pairs of a manifest.
    Fit(FitArgs),
    /// Pull an image back through a displacement field.
    Warp(WarpArgs),
    /// Dice and TRE of every manifest pair under a displacement field.
    Eval(EvalArgs),
    /// Write a synthetic case with ground truth.
    Synth(SynthArgs),
    /// Fraction of predicted pairs that agree with a ground-truth manifest.
    Score(ScoreArgs),
}

#[derive(Args)]
struct SegmentArgs {
    image: PathBuf,
    out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    min_area: usize,
    #[arg(long, default_value_t = 7000)]
    max_area: usize,
    #[arg(long, default_value_t = 0.8)]
    max_overlap: f64,
    #[arg(long, default_value_t = 8)]
    thresholds: usize,
}

#[derive(Args)]
struct MatchArgs {
    /// Directory holding the moving masks and their manifest.
    moving_masks: PathBuf,
    fixed_masks: PathBuf,
    moving_image: PathBuf,
    fixed_image: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    epsilon: f64,
    #[arg(long)]
    quantity_limit: Option<usize>,
    #[arg(long, default_value_t = MatchMode::OneToOne)]
    mode: MatchMode,
    #[arg(long, default_value_t = 11)]
    slice_range: usize,
}

#[derive(Args)]
struct FitArgs {
    manifest: PathBuf,
    /// Output displacement field.
    #[arg(short, long)]
    out: PathBuf,
    /// Report path; printed to standard output when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Image whose grid and spacing the field should use.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Slice count of a volume fit without a reference image.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 0.5)]
    step: f64,
    #[arg(long, default_value_t = 3)]
    levels: usize,
}

#[derive(Args)]
struct WarpArgs {
    image: PathBuf,
    ddf: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    manifest: PathBuf,
    ddf: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    out_dir: PathBuf,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 6)]
    blobs: usize,
    #[arg(long, default_value_t = 9.0)]
    radius_min: f64,
    #[arg(long, default_value_t = 14.0)]
    radius_max: f64,
    #[arg(long, default_value_t = 5.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 16.0)]
    sigma_d: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write a volume of this many slices whose fixed copy is shifted by `--slice-shift`.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, default_value_t = 2)]
    slice_shift: usize,
}

#[derive(Args)]
struct ScoreArgs {
    predicted: PathBuf,
    truth: PathBuf,
}

type CmdResult = Result<(), Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Segment(a) => segment(a),
        Command::Match(a) => match_masks(a),
        Command::Fit(a) => fit(a),
        Command::Warp(a) => warp(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => write_synth(a),
        Command::Score(a) => score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::EmptyInput(_) | Error::EmptyRoi(_) => 3,
        _ => 2,
    }
}

/// `SAMREG_THREADS` caps the worker pool; 0 or unset lets rayon decide.
fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("SAMREG_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("SAMREG_THREADS must be a number, got {raw:?}"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn slices_of(image: &GridImage) -> Result<Vec<GridImage>, Error> {
    match image.dims().ndim() {
        2 => Ok(vec![image.clone()]),
        _ => (0..image.dims()[0]).map(|s| image.slice(s)).collect(),
    }
}

fn plane_spacing(image: &GridImage) -> Vec<f64> {
    let s = image.spacing();
    s[s.len() - 2..].to_vec()
}

fn segment(a: SegmentArgs) -> CmdResult {
    let image = read_grid(&a.image)?.to_image()?;
    let filter = RoiFilterConfig {
        min_area: a.min_area,
        max_area: a.max_area,
        max_overlap_ratio: a.max_overlap,
    };
    filter.validate()?;
    let segmenter = QuantileSegmenter::with_thresholds(a.thresholds);
    let spacing = plane_spacing(&image);
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for (s, slice) in slices_of(&image)?.iter().enumerate() {
        for (k, m) in candidate_rois(slice, &segmenter, &filter)?.iter().enumerate() {
            let name = mask_file_name(s, k);
            files.push((a.out_dir.join(&name), GridFile::from_mask(m, &spacing)?));
            entries.push(MaskEntry {
                path: PathBuf::from(name),
                slice: s,
                index: k,
            });
        }
    }
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::Io {
        path: a.out_dir.clone(),
        source: e,
    })?;
    for (path, grid) in &files {
        write_grid(path, grid)?;
    }
    write_atomic(&a.out_dir.join(MASK_MANIFEST), format_mask_manifest(&entries).as_bytes())?;
    eprintln!("wrote {} masks to {}", files.len(), a.out_dir.display());
    Ok(())
}

/// Masks of a mask directory grouped by slice, with their file paths.
fn load_mask_dir(dir: &Path, depth: usize) -> Result<Vec<Vec<(PathBuf, BinaryMask)>>, Error> {
    let mut by_slice = vec![Vec::new(); depth];
    for e in read_mask_manifest(&dir.join(MASK_MANIFEST))? {
        if e.slice >= depth {
            return Err(Error::Dimension(format!(
                "mask {} is on slice {} of a {depth}-slice image",
                e.path.display(),
                e.slice
            )));
        }
        let mask = read_grid(&e.path)?.to_mask()?;
        by_slice[e.slice].push((e.path, mask));
    }
    Ok(by_slice)
}

fn embed_slices(
    pipeline: &Pipeline,
    slices: &[GridImage],
    masks: Vec<Vec<(PathBuf, BinaryMask)>>,
) -> Result<(Vec<ImageCandidates>, Vec<Vec<PathBuf>>), Error> {
    let mut cands = Vec::with_capacity(slices.len());
    let mut paths = Vec::with_capacity(slices.len());
    for (image, group) in slices.iter().zip(masks) {
        let (names, list): (Vec<PathBuf>, Vec<BinaryMask>) = group.into_iter().unzip();
        let (c, kept) = pipeline.embed_masks_indexed(image, list)?;
        paths.push(kept.into_iter().map(|k| names[k].clone()).collect());
        cands.push(c);
    }
    Ok((cands, paths))
}

/// Path as written into a manifest stored in `dir`: relative when below it.
fn manifest_path(path: &Path, dir: &Path) -> PathBuf {
    let abs = fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
    match fs::canonicalize(dir) {
        Ok(d) => abs.strip_prefix(&d).map(Path::to_path_buf).unwrap_or(abs),
        Err(_) => abs,
    }
}

fn manifest_dir(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn match_masks(a: MatchArgs) -> CmdResult {
    let moving = read_grid(&a.moving_image)?.to_image()?;
    let fixed = read_grid(&a.fixed_image)?.to_image()?;
    if moving.dims() != fixed.dims() {
        return Err(Error::Dimension(format!(
            "image dims differ: {:?} vs {:?}",
            moving.dims().as_slice(),
            fixed.dims().as_slice()
        )));
    }
    let matching = MatchConfig {
        epsilon: a.epsilon,
        quantity_limit: a.quantity_limit,
        mode: a.mode,
    };
    matching.validate()?;
    let pipeline = Pipeline::with_matching(matching);
    let (ms, fs) = (slices_of(&moving)?, slices_of(&fixed)?);
    let (mc, mp) = embed_slices(&pipeline, &ms, load_mask_dir(&a.moving_masks, ms.len())?)?;
    let (fc, fp) = embed_slices(&pipeline, &fs, load_mask_dir(&a.fixed_masks, fs.len())?)?;

    let dir = manifest_dir(&a.out);
    let record = |m: &PathBuf, f: &PathBuf, s: usize, t: usize, similarity: f64| PairRecord {
        moving: manifest_path(m, &dir),
        fixed: manifest_path(f, &dir),
        moving_slice: s,
        fixed_slice: t,
        similarity,
    };
    let records: Vec<PairRecord> = if moving.dims().ndim() == 2 {
        pipeline
            .match_candidates(&mc[0], &fc[0])?
            .pairs()
            .iter()
            .map(|p| record(&mp[0][p.moving_id], &fp[0][p.fixed_id], 0, 0, p.similarity))
            .collect()
    } else {
        match_volume_candidates(&mc, &fc, a.slice_range, &pipeline)?
            .pairs
            .iter()
            .map(|vp| {
                record(
                    &mp[vp.moving_slice][vp.pair.moving_id],
                    &fp[vp.fixed_slice][vp.pair.fixed_id],
                    vp.moving_slice,
                    vp.fixed_slice,
                    vp.pair.similarity,
                )
            })
            .collect()
    };
    if records.is_empty() {
        eprintln!("warning: no pairs above epsilon {}", a.epsilon);
    }
    write_atomic(&a.out, format_pair_manifest(&records).as_bytes())
}

/// Grid of a fit or evaluation: the pair masks' plane, plus slices for a volume.
struct FitGrid {
    dims: Dims,
    spacing: Vec<f64>,
}

fn load_pairs(records: &[PairRecord], grid: &FitGrid) -> Result<Vec<FitPair>, Error> {
    records
        .iter()
        .map(|r| {
            let m = read_grid(&r.moving)?.to_mask()?;
            let f = read_grid(&r.fixed)?.to_mask()?;
            if grid.dims.ndim() == 3 {
                let depth = grid.dims[0];
                FitPair::from_binary(&m.lift_to_volume(depth, r.moving_slice)?, &f.lift_to_volume(depth, r.fixed_slice)?)
            } else {
                if r.moving_slice != 0 || r.fixed_slice != 0 {
                    return Err(Error::Dimension(
                        "slice indices need a volume grid (--reference or --depth)".into(),
                    ));
                }
                FitPair::from_binary(&m, &f)
            }
        })
        .collect()
}

fn infer_grid(records: &[PairRecord], depth: Option<usize>) -> Result<FitGrid, Error> {
    let first = read_grid(&records[0].moving)?;
    let plane = first.dims.as_slice().to_vec();
    let spacing = first.spacing_f64();
    let max_slice = records
        .iter()
        .map(|r| r.moving_slice.max(r.fixed_slice))
        .max()
        .unwrap_or(0);
    let depth = match depth {
        Some(d) => Some(d),
        None if max_slice > 0 => Some(max_slice + 1),
        None => None,
    };
    Ok(match depth {
        Some(d) => FitGrid {
            dims: Dims::new(&[d, plane[0], plane[1]])?,
            spacing: [vec![1.0], spacing].concat(),
        },
        None => FitGrid {
            dims: first.dims,
            spacing,
        },
    })
}

fn fit(a: FitArgs) -> CmdResult {
    let records = read_pair_manifest(&a.manifest)?;
    if records.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no pairs", a.manifest.display())));
    }
    let grid = match &a.reference {
        Some(path) => {
            let r = read_grid(path)?;
            FitGrid {
                spacing: r.spacing_f64(),
                dims: r.dims,
            }
        }
        None => infer_grid(&records, a.depth)?,
    };
    let pairs = load_pairs(&records, &grid)?;
    let cfg = FitConfig {
        lambda: a.lambda,
        iterations: a.iters,
        step_size: a.step,
        levels: a.levels,
        ..Default::default()
    };
    let (field, mut report) = fit_ddf(&pairs, &grid.dims, &cfg)?;
    // the report's TRE uses the grid spacing
    let zero = DisplacementField::zeros(grid.dims.clone(), "zero");
    report.initial_metrics = evaluate_pairs(&pairs, &zero, &grid.spacing)?;
    report.metrics = evaluate_pairs(&pairs, &field, &grid.spacing)?;
    write_grid(&a.out, &GridFile::from_field(&field, &grid.spacing)?)?;
    let text = format_report(&report);
    match &a.report {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn warp(a: WarpArgs) -> CmdResult {
    let src = read_grid(&a.image)?;
    let image = src.to_image()?;
    let field = read_grid(&a.ddf)?.to_field()?;
    let warped = image.warp(&field)?;
    let payload = match src.payload {
        Payload::U8(_) => Payload::U8(warped.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()),
        Payload::F32(_) => Payload::F32(warped.data().iter().map(|&v| v as f32).collect()),
    };
    write_grid(&a.out, &GridFile::new(src.dims, 1, src.spacing, payload)?)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn eval(a: EvalArgs) -> CmdResult {
    let records = read_pair_manifest(&a.manifest)?;
    if records.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no pairs", a.manifest.display())));
    }
    let ddf_file = read_grid(&a.ddf)?;
    let field = ddf_file.to_field()?;
    let grid = FitGrid {
        dims: field.dims().clone(),
        spacing: ddf_file.spacing_f64(),
    };
    let pairs = load_pairs(&records, &grid)?;
    let metrics: Vec<PairMetrics> = evaluate_pairs(&pairs, &field, &grid.spacing)?;
    println!("pair\tdice\ttre");
    for (k, m) in metrics.iter().enumerate() {
        println!("{k}\t{:.6}\t{:.6}", m.dice, m.tre);
    }
    let dice: Vec<f64> = metrics.iter().map(|m| m.dice).collect();
    let tre: Vec<f64> = metrics.iter().map(|m| m.tre).filter(|t| t.is_finite()).collect();
    let (dm, ds) = mean_sd(&dice);
    let (tm, ts) = mean_sd(&tre);
    println!("mean±sd\t{dm:.6}±{ds:.6}\t{tm:.6}±{ts:.6}");
    Ok(())
}

fn write_mask_set(dir: &Path, masks: &[Vec<BinaryMask>], spacing: &[f64]) -> Result<Vec<Vec<PathBuf>>, Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut entries = Vec::new();
    let mut names = Vec::new();
    for (s, slice_masks) in masks.iter().enumerate() {
        let mut row = Vec::new();
        for (k, m) in slice_masks.iter().enumerate() {
            let name = mask_file_name(s, k);
            write_grid(&dir.join(&name), &GridFile::from_mask(m, spacing)?)?;
            entries.push(MaskEntry {
                path: PathBuf::from(&name),
                slice: s,
                index: k,
            });
            row.push(PathBuf::from(&name));
        }
        names.push(row);
    }
    write_atomic(&dir.join(MASK_MANIFEST), format_mask_manifest(&entries).as_bytes())?;
    Ok(names)
}

fn write_synth(a: SynthArgs) -> CmdResult {
    let spec = SynthSpec {
        dims: Dims::new(&[a.size, a.size])?,
        blobs: a.blobs,
        radius: (a.radius_min, a.radius_max),
        amplitude: a.amplitude,
        sigma_d: a.sigma_d,
        seed: a.seed,
    };
    let out = &a.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let spacing = [1.0, 1.0];
    let mut records = Vec::new();
    let record = |m: &PathBuf, f: &PathBuf, s: usize, t: usize| PairRecord {
        moving: Path::new("moving_masks").join(m),
        fixed: Path::new("fixed_masks").join(f),
        moving_slice: s,
        fixed_slice: t,
        similarity: 1.0,
    };
    match a.depth {
        None => {
            let case = generate(&spec)?;
            write_grid(&out.join("moving.rgrd"), &GridFile::from_image(&case.moving))?;
            write_grid(&out.join("fixed.rgrd"), &GridFile::from_image(&case.fixed))?;
            write_grid(&out.join("truth.rgrd"), &GridFile::from_field(&case.truth, &spacing)?)?;
            let mn = write_mask_set(&out.join("moving_masks"), &[case.moving_masks], &spacing)?;
            let fnames = write_mask_set(&out.join("fixed_masks"), &[case.fixed_masks], &spacing)?;
            for &(m, f) in &case.pairing.pairs {
                records.push(record(&mn[0][m], &fnames[0][f], 0, 0));
            }
        }
        Some(depth) => {
            let case = generate_shifted_volume(&spec, depth, a.slice_shift)?;
            write_grid(&out.join("moving.rgrd"), &GridFile::from_image(&case.moving))?;
            write_grid(&out.join("fixed.rgrd"), &GridFile::from_image(&case.fixed))?;
            let mn = write_mask_set(&out.join("moving_masks"), &case.moving_masks, &spacing)?;
            let fnames = write_mask_set(&out.join("fixed_masks"), &case.fixed_masks, &spacing)?;
            for (s, row) in mn.iter().enumerate() {
                for (k, m) in row.iter().enumerate() {
                    let t = s + case.slice_shift;
                    records.push(record(m, &fnames[t][k], s, t));
                }
            }
        }
    }
    write_atomic(&out.join("pairs.txt"), format_pair_manifest(&records).as_bytes())?;
    eprintln!("wrote synthetic case to {}", out.display());
    Ok(())
}

/// Truth masks per slice, keyed by the slice they sit on.
type SliceMasks = BTreeMap<usize, Vec<BinaryMask>>;

fn score(a: ScoreArgs) -> CmdResult {
    let predicted = read_pair_manifest(&a.predicted)?;
    let truth = read_pair_manifest(&a.truth)?;
    // truth record k owns the k-th entry of its moving and fixed slice lists
    let mut moving_truth = SliceMasks::new();
    let mut fixed_truth = SliceMasks::new();
    let mut owner: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut fixed_owner: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (k, r) in truth.iter().enumerate() {
        let m = moving_truth.entry(r.moving_slice).or_default();
        owner.insert((r.moving_slice, m.len()), k);
        m.push(read_grid(&r.moving)?.to_mask()?);
        let f = fixed_truth.entry(r.fixed_slice).or_default();
        fixed_owner.insert((r.fixed_slice, f.len()), k);
        f.push(read_grid(&r.fixed)?.to_mask()?);
    }
    let label = |mask: &BinaryMask, slice: usize, set: &SliceMasks, own: &BTreeMap<(usize, usize), usize>| {
        set.get(&slice)
            .and_then(|masks| label_candidates(std::slice::from_ref(mask), masks)[0])
            .and_then(|i| own.get(&(slice, i)).copied())
    };
    let mut hits = 0;
    for r in &predicted {
        let lm = label(&read_grid(&r.moving)?.to_mask()?, r.moving_slice, &moving_truth, &owner);
        let lf = label(&read_grid(&r.fixed)?.to_mask()?, r.fixed_slice, &fixed_truth, &fixed_owner);
        if lm.is_some() && lm == lf {
            hits += 1;
        }
    }
    let score = if predicted.is_empty() {
        0.0
    } else {
        hits as f64 / predicted.len() as f64
    };
    println!("{score:.6}");
    Ok(())
}
