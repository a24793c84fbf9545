//! Run configuration and the end-to-end commands built from the other modules.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerting::{
    dispatch_with, should_dispatch, AlertEvent, DeliveryResult, DispatchPolicy, EventLog,
    Transport,
};
use crate::classifier::{
    classify_frame, forward, inspect_manifest, load_model, AlarmAggregator, AlarmDecision,
    FrameVerdict, ManifestSummary, ModelError, ModelSpec,
};
use crate::detector::{self, decode_grid, nms, BBox, Detection, DetectorError, GridPrediction};
use crate::heatmap::{HeatmapError, HeatmapGrid};
use crate::imaging::{self, open_sequence, to_tensor, Frame, ImagingError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Model {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("frame {frame}: {source}")]
    Inference {
        frame: usize,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("{context}: {source}")]
    Detector {
        context: String,
        #[source]
        source: DetectorError,
    },
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlertConfig {
    pub endpoint: Option<String>,
    pub cooldown_s: f64,
    pub max_retries: u32,
    pub backoff_base_s: f64,
}

impl Default for AlertConfig {
    fn default() -> Self {
        let p = DispatchPolicy::default();
        Self {
            endpoint: None,
            cooldown_s: p.cooldown_s,
            max_retries: p.max_retries,
            backoff_base_s: p.backoff_base_s,
        }
    }
}

impl AlertConfig {
    pub fn policy(&self) -> DispatchPolicy {
        DispatchPolicy {
            cooldown_s: self.cooldown_s,
            max_retries: self.max_retries,
            backoff_base_s: self.backoff_base_s,
        }
    }
}

/// Everything a run needs. Loaded from one JSON file; relative paths in the
/// file resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub frames_dir: Option<PathBuf>,
    pub frame_pattern: String,
    pub classifier_model: Option<PathBuf>,
    /// Defaults to the manifest path with a `.bin` extension.
    pub classifier_weights: Option<PathBuf>,
    pub detector_model: Option<PathBuf>,
    pub detector_weights: Option<PathBuf>,
    /// Directory of raw grid predictions (JSON), matched to frames by order.
    pub predictions_dir: Option<PathBuf>,
    pub predictions_pattern: String,
    pub fps: f64,
    pub frame_threshold: f64,
    pub window: usize,
    pub trigger: usize,
    pub conf_threshold: f64,
    pub iou_threshold: f64,
    pub heatmap_grid: usize,
    pub heatmap_cell_px: usize,
    pub alert: AlertConfig,
    pub event_log: Option<PathBuf>,
    pub heatmap_out: Option<PathBuf>,
    pub heatmap_json: Option<PathBuf>,
    pub verdicts_out: Option<PathBuf>,
    pub detections_out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            frames_dir: None,
            frame_pattern: "*.p[gp]m".into(),
            classifier_model: None,
            classifier_weights: None,
            detector_model: None,
            detector_weights: None,
            predictions_dir: None,
            predictions_pattern: "*.json".into(),
            fps: 10.0,
            frame_threshold: 0.5,
            window: 5,
            trigger: 3,
            conf_threshold: detector::DEFAULT_CONF_THRESHOLD,
            iou_threshold: detector::DEFAULT_IOU_THRESHOLD,
            heatmap_grid: crate::heatmap::DEFAULT_GRID,
            heatmap_cell_px: 8,
            alert: AlertConfig::default(),
            event_log: None,
            heatmap_out: None,
            heatmap_json: None,
            verdicts_out: None,
            detections_out: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            config.resolve_relative(base);
        }
        Ok(config)
    }

    fn resolve_relative(&mut self, base: &Path) {
        for p in [
            &mut self.frames_dir,
            &mut self.classifier_model,
            &mut self.classifier_weights,
            &mut self.detector_model,
            &mut self.detector_weights,
            &mut self.predictions_dir,
            &mut self.event_log,
            &mut self.heatmap_out,
            &mut self.heatmap_json,
            &mut self.verdicts_out,
            &mut self.detections_out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(PipelineError::Config(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("frame_threshold", self.frame_threshold)?;
        unit("conf_threshold", self.conf_threshold)?;
        unit("iou_threshold", self.iou_threshold)?;
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(PipelineError::Config(format!("fps must be > 0, got {}", self.fps)));
        }
        if self.trigger == 0 || self.trigger > self.window {
            return Err(PipelineError::Config(format!(
                "need window >= trigger >= 1, got window {} trigger {}",
                self.window, self.trigger
            )));
        }
        if self.heatmap_grid == 0 || self.heatmap_cell_px == 0 {
            return Err(PipelineError::Config(
                "heatmap_grid and heatmap_cell_px must be >= 1".into(),
            ));
        }
        self.alert.policy().validate().map_err(PipelineError::Config)?;
        if let Some(endpoint) = &self.alert.endpoint {
            if !crate::alerting::endpoint_is_well_formed(endpoint) {
                return Err(PipelineError::Config(format!(
                    "alert endpoint {endpoint:?} is not an http(s) URL"
                )));
            }
        }
        Ok(())
    }

    fn require<'a>(&self, value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, PipelineError> {
        value
            .as_deref()
            .ok_or_else(|| PipelineError::Config(format!("{name} is required")))
    }

    pub fn load_classifier(&self) -> Result<ModelSpec, PipelineError> {
        let manifest = self.require(&self.classifier_model, "classifier_model")?;
        load_model_files(manifest, self.classifier_weights.as_deref())
    }

    pub fn load_detector(&self) -> Result<Option<ModelSpec>, PipelineError> {
        match &self.detector_model {
            None => Ok(None),
            Some(manifest) => {
                let model = load_model_files(manifest, self.detector_weights.as_deref())?;
                if model.grid().is_none() {
                    return Err(PipelineError::Config(format!(
                        "{}: detector manifest needs a \"grid\" entry",
                        manifest.display()
                    )));
                }
                Ok(Some(model))
            }
        }
    }

    fn frames(&self) -> Result<Vec<Frame>, PipelineError> {
        let dir = self.require(&self.frames_dir, "frames_dir")?;
        Ok(open_sequence(dir, &self.frame_pattern)?.collect::<Result<Vec<_>, _>>()?)
    }
}

pub fn default_weights_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn load_model_files(manifest: &Path, weights: Option<&Path>) -> Result<ModelSpec, PipelineError> {
    let weights = weights
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_weights_path(manifest));
    let manifest_bytes = fs::read(manifest).map_err(io_at(manifest))?;
    let blob = fs::read(&weights).map_err(io_at(&weights))?;
    load_model(&manifest_bytes, &blob).map_err(|source| PipelineError::Model {
        path: manifest.to_path_buf(),
        source,
    })
}

/// Model-info report: manifest geometry, plus a full weight check when the
/// blob is present.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    #[serde(flatten)]
    pub summary: ManifestSummary,
    pub weights_verified: bool,
}

pub fn model_info(manifest: &Path, weights: Option<&Path>) -> Result<ModelInfo, PipelineError> {
    let bytes = fs::read(manifest).map_err(io_at(manifest))?;
    let model_err = |source| PipelineError::Model {
        path: manifest.to_path_buf(),
        source,
    };
    let summary = inspect_manifest(&bytes).map_err(model_err)?;
    let weights_path = weights
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_weights_path(manifest));
    let weights_verified = match (weights, weights_path.exists()) {
        // an explicitly named blob must load; the default one only if present
        (Some(_), _) | (None, true) => {
            let blob = fs::read(&weights_path).map_err(io_at(&weights_path))?;
            load_model(&bytes, &blob).map_err(model_err)?;
            true
        }
        (None, false) => false,
    };
    Ok(ModelInfo {
        summary,
        weights_verified,
    })
}

pub fn format_model_info(info: &ModelInfo) -> String {
    let s = &info.summary;
    let mut out = String::new();
    let [h, w, c] = s.input;
    out.push_str(&format!("model: {}\ninput: {h}x{w}x{c}\n", s.name));
    out.push_str(&format!("classes: {}\n", s.class_labels.join(", ")));
    for (i, layer) in s.layers.iter().enumerate() {
        out.push_str(&format!(
            "layer {i}: {:<8} {} -> {}  parameters: {}",
            layer.kind, layer.input, layer.output, layer.parameters
        ));
        if let Some(n) = layer.flattened_inputs {
            out.push_str(&format!("  flattened inputs: {n}"));
        }
        if let Some(n) = layer.dense_weights {
            out.push_str(&format!("  dense weights: {n}"));
        }
        out.push('\n');
    }
    out.push_str(&format!("dense weights total: {}\n", s.dense_weights_total));
    out.push_str(&format!("parameters total: {}\n", s.implied_parameters));
    out.push_str(&format!(
        "weights: {}\n",
        if info.weights_verified {
            "verified"
        } else {
            "not loaded"
        }
    ));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub frame: usize,
    pub probabilities: Vec<f64>,
    pub label: String,
}

impl From<&FrameVerdict> for VerdictRecord {
    fn from(v: &FrameVerdict) -> Self {
        Self {
            frame: v.frame,
            probabilities: v.probabilities.clone(),
            label: v.predicted_label.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: usize,
    pub class_id: usize,
    pub class_name: String,
    pub score: f64,
    pub confidence: f64,
    pub bbox: [f64; 4],
}

impl DetectionRecord {
    pub fn new(frame: usize, d: &Detection) -> Self {
        Self {
            frame,
            class_id: d.class_id,
            class_name: d.class_name.clone(),
            score: d.score,
            confidence: d.confidence,
            bbox: d.bbox.to_array(),
        }
    }

    pub fn to_detection(&self) -> Result<Detection, DetectorError> {
        let [x0, y0, x1, y1] = self.bbox;
        Ok(Detection {
            bbox: BBox::new(x0, y0, x1, y1)?,
            class_id: self.class_id,
            class_name: self.class_name.clone(),
            confidence: self.confidence,
            score: self.score,
        })
    }
}

pub fn to_json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("record serialises");
    s.push('\n');
    s
}

pub struct ClassifyOutcome {
    pub verdicts: Vec<FrameVerdict>,
    pub decisions: Vec<AlarmDecision>,
}

impl ClassifyOutcome {
    pub fn alarm_fired(&self) -> bool {
        self.decisions.contains(&AlarmDecision::Alarm)
    }

    pub fn jsonl(&self) -> String {
        self.verdicts
            .iter()
            .map(|v| to_json_line(&VerdictRecord::from(v)))
            .collect()
    }
}

pub fn classify(config: &RunConfig) -> Result<ClassifyOutcome, PipelineError> {
    config.validate()?;
    let model = config.load_classifier()?;
    let mut agg = AlarmAggregator::new(config.window, config.trigger).map_err(PipelineError::Config)?;
    let mut verdicts = Vec::new();
    let mut decisions = Vec::new();
    for frame in config.frames()? {
        let verdict = classify_frame(&model, &frame).map_err(|source| PipelineError::Inference {
            frame: frame.index,
            source,
        })?;
        decisions.push(agg.aggregate(&verdict, config.frame_threshold));
        verdicts.push(verdict);
    }
    Ok(ClassifyOutcome {
        verdicts,
        decisions,
    })
}

pub fn parse_prediction(bytes: &[u8]) -> Result<GridPrediction, String> {
    let pred: GridPrediction = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    pred.validate().map_err(|e| e.to_string())?;
    Ok(pred)
}

/// Runs a grid-output model on a frame and wraps the result as a prediction.
pub fn predict_grid(model: &ModelSpec, frame: &Frame) -> Result<GridPrediction, PipelineError> {
    let grid = model.grid().expect("detector models carry a grid");
    let (h, w, c) = model.input_shape();
    let input = if c == 1 && frame.channels() == 3 {
        to_tensor(&frame.to_grayscale(), h, w)
    } else {
        to_tensor(frame, h, w)
    };
    let values = forward(model, &input).map_err(|source| PipelineError::Inference {
        frame: frame.index,
        source,
    })?;
    let context = || format!("detector output for frame {}", frame.index);
    GridPrediction::new(grid.s, grid.b, grid.c, values)
        .and_then(|p| p.with_class_names(model.class_labels().to_vec()))
        .map_err(|source| PipelineError::Detector {
            context: context(),
            source,
        })
}

/// Decode + NMS for one prediction.
pub fn detect_prediction(
    pred: &GridPrediction,
    config: &RunConfig,
) -> Result<Vec<Detection>, DetectorError> {
    Ok(nms(&decode_grid(pred, config.conf_threshold)?, config.iou_threshold))
}

/// Per-frame grid predictions, from a predictions directory or a detector model.
enum PredictionSource {
    Files(Vec<PathBuf>),
    Model(ModelSpec),
}

impl PredictionSource {
    fn open(config: &RunConfig) -> Result<Option<Self>, PipelineError> {
        if let Some(dir) = &config.predictions_dir {
            return Ok(Some(Self::Files(imaging::list_matching(
                dir,
                &config.predictions_pattern,
            )?)));
        }
        Ok(config.load_detector()?.map(Self::Model))
    }

    fn predict(&self, index: usize, frame: Option<&Frame>) -> Result<Option<GridPrediction>, PipelineError> {
        match self {
            Self::Files(files) => {
                let Some(path) = files.get(index) else {
                    return Ok(None);
                };
                let bytes = fs::read(path).map_err(io_at(path))?;
                parse_prediction(&bytes)
                    .map(Some)
                    .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
            }
            Self::Model(model) => match frame {
                Some(f) => predict_grid(model, f).map(Some),
                None => Ok(None),
            },
        }
    }
}

/// Detections for every frame (or every prediction file), as `(frame, detections)`.
pub fn detect(config: &RunConfig) -> Result<Vec<(usize, Vec<Detection>)>, PipelineError> {
    config.validate()?;
    let source = PredictionSource::open(config)?.ok_or_else(|| {
        PipelineError::Config("detect needs predictions_dir or detector_model".into())
    })?;
    let frames = match &source {
        PredictionSource::Files(_) => Vec::new(),
        PredictionSource::Model(_) => config.frames()?,
    };
    let count = match &source {
        PredictionSource::Files(files) => files.len(),
        PredictionSource::Model(_) => frames.len(),
    };
    let mut out = Vec::with_capacity(count);
    for index in 0..count {
        if let Some(pred) = source.predict(index, frames.get(index))? {
            let dets = detect_prediction(&pred, config).map_err(|source| PipelineError::Detector {
                context: format!("frame {index}"),
                source,
            })?;
            out.push((index, dets));
        }
    }
    Ok(out)
}

pub fn detections_jsonl(per_frame: &[(usize, Vec<Detection>)]) -> String {
    per_frame
        .iter()
        .flat_map(|(frame, dets)| dets.iter().map(|d| to_json_line(&DetectionRecord::new(*frame, d))))
        .collect()
}

/// Accumulates detection JSONL into a grid. Each distinct frame value counts
/// as one frame; blank lines are skipped.
pub fn heatmap_from_jsonl(text: &str, grid_size: usize) -> Result<HeatmapGrid, PipelineError> {
    let mut grid = HeatmapGrid::new(grid_size)?;
    let mut current: Option<(usize, Vec<Detection>)> = None;
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| PipelineError::Parse {
            line: i + 1,
            message,
        };
        let record: DetectionRecord =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let det = record.to_detection().map_err(|e| parse_err(e.to_string()))?;
        match &mut current {
            Some((frame, dets)) if *frame == record.frame => dets.push(det),
            _ => {
                if let Some((frame, dets)) = current.take() {
                    grid.accumulate(&dets);
                    seen.insert(frame);
                }
                current = Some((record.frame, vec![det]));
            }
        }
    }
    if let Some((frame, dets)) = current {
        grid.accumulate(&dets);
        seen.insert(frame);
    }
    // frames split across non-adjacent lines count once
    Ok(HeatmapGrid::from_bins(grid.size(), seen.len() as u64, grid.bins().to_vec())?)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(io_at(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: usize,
    /// Frames on which the k-of-N rule fired.
    pub alarms: usize,
    /// Alarms that passed the cooldown and produced an alert event.
    pub alerts: usize,
    pub alerts_delivered: usize,
}

/// Side channels a run needs besides its config.
pub struct RunContext<'a> {
    pub token: Option<String>,
    pub transport: &'a mut dyn Transport,
    pub sleep: &'a mut dyn FnMut(Duration),
}

struct JsonlSink {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl JsonlSink {
    fn create(path: &Option<PathBuf>) -> Result<Option<Self>, PipelineError> {
        path.as_ref()
            .map(|p| {
                let file = fs::File::create(p).map_err(io_at(p))?;
                Ok(Self {
                    path: p.clone(),
                    out: BufWriter::new(file),
                })
            })
            .transpose()
    }

    fn write(&mut self, line: &str) -> Result<(), PipelineError> {
        self.out.write_all(line.as_bytes()).map_err(io_at(&self.path))
    }

    fn finish(mut self) -> Result<(), PipelineError> {
        self.out.flush().map_err(io_at(&self.path))
    }
}

/// Classify, detect, accumulate and alert over the whole frame sequence.
pub fn run(config: &RunConfig, ctx: RunContext<'_>) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let model = config.load_classifier()?;
    let predictions = PredictionSource::open(config)?;
    let frames_dir = config.require(&config.frames_dir, "frames_dir")?;
    let source = open_sequence(frames_dir, &config.frame_pattern)?;
    let mut agg = AlarmAggregator::new(config.window, config.trigger).map_err(PipelineError::Config)?;
    let mut grid = HeatmapGrid::new(config.heatmap_grid)?;
    let policy = config.alert.policy();

    let mut event_log = match &config.event_log {
        Some(p) => Some(EventLog::create(p).map_err(io_at(p))?),
        None => None,
    };
    let mut verdict_sink = JsonlSink::create(&config.verdicts_out)?;
    let mut detection_sink = JsonlSink::create(&config.detections_out)?;

    let mut summary = RunSummary {
        frames: 0,
        alarms: 0,
        alerts: 0,
        alerts_delivered: 0,
    };
    let mut last_sent: Option<f64> = None;

    for frame in source {
        let frame = frame?;
        let index = frame.index;
        summary.frames += 1;

        let verdict = classify_frame(&model, &frame).map_err(|source| PipelineError::Inference {
            frame: index,
            source,
        })?;
        if let Some(sink) = &mut verdict_sink {
            sink.write(&to_json_line(&VerdictRecord::from(&verdict)))?;
        }

        if let Some(predictions) = &predictions {
            let dets = match predictions.predict(index, Some(&frame))? {
                Some(pred) => detect_prediction(&pred, config).map_err(|source| {
                    PipelineError::Detector {
                        context: format!("frame {index}"),
                        source,
                    }
                })?,
                None => Vec::new(),
            };
            grid.accumulate(&dets);
            if let Some(sink) = &mut detection_sink {
                for d in &dets {
                    sink.write(&to_json_line(&DetectionRecord::new(index, d)))?;
                }
            }
        } else {
            grid.accumulate(&[]);
        }

        if agg.aggregate(&verdict, config.frame_threshold) == AlarmDecision::NoAlarm {
            continue;
        }
        summary.alarms += 1;
        let now = index as f64 / config.fps;
        if !should_dispatch(last_sent, now, &policy) {
            continue;
        }
        last_sent = Some(now);
        summary.alerts += 1;
        let event = AlertEvent::new(index, config.fps, verdict.crime_probability);
        let result = match &config.alert.endpoint {
            Some(endpoint) => dispatch_with(
                &event,
                endpoint,
                ctx.token.as_deref(),
                &policy,
                &mut *ctx.transport,
                &mut *ctx.sleep,
            ),
            None => DeliveryResult::not_attempted("no endpoint configured"),
        };
        if result.delivered {
            summary.alerts_delivered += 1;
        }
        if let Some(log) = &mut event_log {
            log.append(&event, &result)
                .map_err(|source| PipelineError::Io {
                    path: log.path().to_path_buf(),
                    source,
                })?;
        }
    }

    for sink in [verdict_sink, detection_sink].into_iter().flatten() {
        sink.finish()?;
    }
    if let Some(path) = &config.heatmap_out {
        write_file(path, &grid.render_ppm(config.heatmap_cell_px))?;
    }
    if let Some(path) = &config.heatmap_json {
        write_file(path, grid.to_json().as_bytes())?;
    }
    Ok(summary)
}
