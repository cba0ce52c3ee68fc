use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use dept_core::config::PipelineConfig;
use dept_core::depth_targets::UncertaintyMap;
use dept_core::io_formats::{
    list_frames, read_detections, read_image_sizes, read_kitti_calib, read_velodyne_bin,
    write_target_bundle, BoxSource, DetectionSet, FrameFiles,
};
use dept_core::losses::class_weights;
use dept_core::pipeline::{generate_frame_targets, FrameInput, SigmaSource};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{ConfigArgs, Format, GenTargetsArgs};
use crate::{emit, read_text, write_bytes, CliError, CliResult};

/// Builds the pipeline configuration: defaults, then the `--config` file,
/// then explicit flags.
pub fn resolve_config(args: &ConfigArgs) -> CliResult<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_overrides(&read_text(path)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    macro_rules! flag {
        ($field:ident) => {
            if let Some(v) = args.$field {
                cfg.$field = v;
            }
        };
    }
    flag!(stride);
    flag!(max_depth);
    flag!(sigma_lo);
    flag!(sigma_hi);
    flag!(score_threshold);
    flag!(propagated_weight);
    flag!(min_iou);
    flag!(n_classes);
    flag!(seed);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameSummary {
    pub frame_id: String,
    pub lidar_points: usize,
    pub boxes: usize,
    pub sparse_cells: usize,
    pub filtered_cells: usize,
    pub original_cells: usize,
    pub propagated_cells: usize,
    pub class_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenReport {
    pub frames: Vec<FrameSummary>,
    /// `(frame_id, error)` for skipped frames, sorted by frame id.
    pub failed: Vec<(String, String)>,
    pub supervised_cells: usize,
    pub original_cells: usize,
    pub propagated_cells: usize,
    pub class_counts: Vec<u64>,
    /// `None` when some class has no samples.
    pub class_weights: Option<Vec<f64>>,
    pub dropped_low_score: usize,
    pub dropped_degenerate: usize,
    pub config: PipelineConfig,
}

impl GenReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "frames processed: {}\nframes failed: {}\n",
            self.frames.len(),
            self.failed.len()
        );
        for (id, err) in &self.failed {
            s.push_str(&format!("  {id}: {err}\n"));
        }
        s.push_str(&format!(
            "supervised cells: {} (original {}, propagated {})\n",
            self.supervised_cells, self.original_cells, self.propagated_cells
        ));
        s.push_str(&format!(
            "detections dropped: {} below score threshold, {} degenerate\n",
            self.dropped_low_score, self.dropped_degenerate
        ));
        s.push_str("class  count  weight\n");
        for (k, n) in self.class_counts.iter().enumerate() {
            let w = self
                .class_weights
                .as_ref()
                .map_or("n/a".to_string(), |w| format!("{:.4}", w[k]));
            s.push_str(&format!("{k:<6} {n:<6} {w}\n"));
        }
        s.push_str("frame        points  boxes  sparse  filtered  original  propagated\n");
        for f in &self.frames {
            s.push_str(&format!(
                "{:<12} {:<7} {:<6} {:<7} {:<9} {:<9} {}\n",
                f.frame_id,
                f.lidar_points,
                f.boxes,
                f.sparse_cells,
                f.filtered_cells,
                f.original_cells,
                f.propagated_cells
            ));
        }
        s
    }
}

fn read_sigma_raster(path: &Path, width: usize, height: usize) -> Result<UncertaintyMap, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut values = Vec::with_capacity(width * height);
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        for tok in line.split_whitespace() {
            values.push(tok.parse::<f64>().map_err(|_| {
                format!(
                    "{}: line {}: `{tok}` is not a number",
                    path.display(),
                    i + 1
                )
            })?);
        }
    }
    UncertaintyMap::new(width, height, values).map_err(|e| format!("{}: {e}", path.display()))
}

struct Shared<'a> {
    config: &'a PipelineConfig,
    detections: &'a DetectionSet,
    sizes: &'a BTreeMap<String, (u32, u32)>,
    args: &'a GenTargetsArgs,
}

fn process_frame(frame: &FrameFiles, ctx: &Shared<'_>) -> Result<FrameSummary, String> {
    let (w, h) = ctx
        .sizes
        .get(&frame.frame_id)
        .copied()
        .unwrap_or((ctx.args.image_width, ctx.args.image_height));
    let calib_text = std::fs::read_to_string(&frame.calib)
        .map_err(|e| format!("{}: {e}", frame.calib.display()))?;
    let calib = read_kitti_calib(&calib_text, w, h)
        .map_err(|e| format!("{}: {e}", frame.calib.display()))?;
    let bytes =
        std::fs::read(&frame.velodyne).map_err(|e| format!("{}: {e}", frame.velodyne.display()))?;
    let points =
        read_velodyne_bin(&bytes).map_err(|e| format!("{}: {e}", frame.velodyne.display()))?;
    let sigma = match &ctx.args.sigma_dir {
        Some(dir) => {
            let (gw, gh) = calib
                .camera
                .grid_dims(ctx.config.stride)
                .map_err(|e| e.to_string())?;
            SigmaSource::Map(read_sigma_raster(
                &dir.join(format!("{}.txt", frame.frame_id)),
                gw,
                gh,
            )?)
        }
        None => SigmaSource::Constant(ctx.args.sigma),
    };
    let input = FrameInput {
        frame_id: &frame.frame_id,
        camera: calib.camera,
        lidar_to_cam: calib.lidar_to_cam,
        points: &points,
        boxes: ctx.detections.boxes(&frame.frame_id),
        box_source: BoxSource::Detector,
        sigma: &sigma,
    };
    let bundle = generate_frame_targets(&input, ctx.config).map_err(|e| e.to_string())?;
    let dir = ctx.args.out.join(&frame.frame_id);
    write_target_bundle(&bundle, &dir).map_err(|e| e.to_string())?;
    let c = &bundle.metadata.counts;
    log::debug!(
        "frame {}: {} supervised cells",
        frame.frame_id,
        bundle.depth.supervised_count()
    );
    Ok(FrameSummary {
        frame_id: frame.frame_id.clone(),
        lidar_points: c.lidar_points,
        boxes: c.boxes,
        sparse_cells: c.sparse_cells,
        filtered_cells: c.filtered_cells,
        original_cells: c.original_cells,
        propagated_cells: c.propagated_cells,
        class_counts: c.class_counts.clone(),
    })
}

/// Generates bundles for every frame. Frames that fail are skipped and
/// listed; the report is written either way, and any failure makes the
/// command return an input error.
pub fn run_gen_targets(args: &GenTargetsArgs, out: &mut dyn Write) -> CliResult<GenReport> {
    let config = resolve_config(&args.config)?;
    let frames = list_frames(&args.dataset)?;
    if frames.is_empty() {
        return Err(CliError::Input(format!(
            "no frames found in {}",
            args.dataset.display()
        )));
    }
    let det_path = args.dataset.join("detections.ndjson");
    let detections = read_detections(&read_text(&det_path)?, config.score_threshold)
        .map_err(|e| CliError::Input(format!("{}: {e}", det_path.display())))?;
    for id in detections.frames.keys() {
        if frames
            .binary_search_by(|f| f.frame_id.as_str().cmp(id))
            .is_err()
        {
            log::warn!("detections reference unknown frame {id}");
        }
    }
    let sizes_path = args.dataset.join("image_sizes.txt");
    let sizes = if sizes_path.exists() {
        read_image_sizes(&read_text(&sizes_path)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", sizes_path.display())))?
    } else {
        BTreeMap::new()
    };

    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    let ctx = Shared {
        config: &config,
        detections: &detections,
        sizes: &sizes,
        args,
    };
    log::info!("processing {} frames on {jobs} workers", frames.len());
    // collect() keeps input order, so results stay sorted by frame id
    let results: Vec<Result<FrameSummary, String>> =
        pool.install(|| frames.par_iter().map(|f| process_frame(f, &ctx)).collect());

    let mut summaries = Vec::new();
    let mut failed = Vec::new();
    for (frame, r) in frames.iter().zip(results) {
        match r {
            Ok(s) => summaries.push(s),
            Err(e) => {
                log::error!("frame {} skipped: {e}", frame.frame_id);
                failed.push((frame.frame_id.clone(), e));
            }
        }
    }
    let mut class_counts = vec![0u64; config.n_classes];
    for s in &summaries {
        for (t, c) in class_counts.iter_mut().zip(&s.class_counts) {
            *t += c;
        }
    }
    let report = GenReport {
        supervised_cells: summaries
            .iter()
            .map(|s| s.original_cells + s.propagated_cells)
            .sum(),
        original_cells: summaries.iter().map(|s| s.original_cells).sum(),
        propagated_cells: summaries.iter().map(|s| s.propagated_cells).sum(),
        class_weights: class_weights(&class_counts)
            .ok()
            .map(|t| t.weights().to_vec()),
        class_counts,
        frames: summaries,
        failed,
        dropped_low_score: detections.dropped_low_score,
        dropped_degenerate: detections.dropped_degenerate,
        config,
    };
    let (text, name) = match args.format {
        Format::Text => (report.to_text(), "report.txt"),
        Format::Json => (
            serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
            "report.json",
        ),
    };
    write_bytes(&args.out.join(name), text.as_bytes())?;
    emit(out, &text)?;
    if report.failed.is_empty() {
        Ok(report)
    } else {
        Err(CliError::Input(format!(
            "{} of {} frames failed",
            report.failed.len(),
            frames.len()
        )))
    }
}
