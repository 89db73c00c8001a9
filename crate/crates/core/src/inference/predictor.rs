use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use byteorder::{ByteOrder, LittleEndian};
use serde::Serialize;

use super::{reflect_index, InferenceError};
use crate::volume::{LabelMask, NUM_CLASSES};

/// One window handed to a predictor. `start` is in padded coordinates;
/// subtracting `padding_lo` gives the position in the source volume.
#[derive(Debug, Clone, Copy)]
pub struct WindowInput<'a> {
    pub index: usize,
    pub start: [usize; 3],
    pub patch: [usize; 3],
    pub padding_lo: [usize; 3],
    pub volume_dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Normalized intensities, x-fastest, `patch` volume long.
    pub values: &'a [f32],
}

impl WindowInput<'_> {
    pub fn voxels(&self) -> usize {
        self.patch.iter().product()
    }
}

/// Anything that turns a window of normalized intensities into class-major
/// scores (`classes() * patch volume` values). Implementations are called
/// from several worker threads at once.
pub trait Predictor: Send + Sync {
    fn classes(&self) -> usize {
        NUM_CLASSES
    }

    fn predict(&self, input: &WindowInput<'_>) -> Result<Vec<f32>, InferenceError>;
}

/// Emits the same class vector at every voxel.
#[derive(Debug, Clone)]
pub struct ConstantPredictor {
    scores: Vec<f32>,
}

impl ConstantPredictor {
    pub fn new(scores: Vec<f32>) -> Self {
        Self { scores }
    }

    pub fn one_hot(class: usize) -> Self {
        let mut scores = vec![0.0; NUM_CLASSES];
        scores[class] = 1.0;
        Self { scores }
    }

    pub fn uniform() -> Self {
        Self {
            scores: vec![1.0 / NUM_CLASSES as f32; NUM_CLASSES],
        }
    }
}

impl Predictor for ConstantPredictor {
    fn classes(&self) -> usize {
        self.scores.len()
    }

    fn predict(&self, input: &WindowInput<'_>) -> Result<Vec<f32>, InferenceError> {
        let n = input.voxels();
        let mut out = Vec::with_capacity(n * self.scores.len());
        for &s in &self.scores {
            out.extend(std::iter::repeat_n(s, n));
        }
        Ok(out)
    }
}

/// Serves one-hot ground truth for whatever window is requested. The mask must
/// share the grid of the volume being tiled.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    dims: [usize; 3],
    labels: Vec<u8>,
}

impl OraclePredictor {
    pub fn new(mask: &LabelMask) -> Self {
        Self {
            dims: mask.geometry().dims,
            labels: mask.labels(),
        }
    }
}

impl Predictor for OraclePredictor {
    fn predict(&self, input: &WindowInput<'_>) -> Result<Vec<f32>, InferenceError> {
        if input.volume_dims != self.dims {
            return Err(InferenceError::PlanMismatch(format!(
                "oracle mask is {:?}, volume is {:?}",
                self.dims, input.volume_dims
            )));
        }
        let n = input.voxels();
        let maps: [Vec<usize>; 3] = [0, 1, 2].map(|a| {
            (0..input.patch[a])
                .map(|l| {
                    reflect_index(
                        (input.start[a] + l) as isize - input.padding_lo[a] as isize,
                        self.dims[a],
                    )
                })
                .collect()
        });
        let mut out = vec![0.0f32; NUM_CLASSES * n];
        let mut local = 0;
        for &k in &maps[2] {
            for &j in &maps[1] {
                for &i in &maps[0] {
                    let label = self.labels[(k * self.dims[1] + j) * self.dims[0] + i] as usize;
                    out[label * n + local] = 1.0;
                    local += 1;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct Sidecar {
    dims: [usize; 3],
    spacing: [f64; 3],
    value_scale: &'static str,
}

/// Runs an external command once per window.
///
/// The template may reference `{input}`, `{sidecar}`, `{output}` and
/// `{classes}`; it is executed through `sh -c`. Input is raw little-endian
/// f32 (x-fastest), output must be raw little-endian f32, class-major.
#[derive(Debug, Clone)]
pub struct SubprocessPredictor {
    template: String,
    classes: usize,
    timeout: Duration,
}

impl SubprocessPredictor {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

    pub fn new(template: impl Into<String>) -> Self {
        Self {
            template: template.into(),
            classes: NUM_CLASSES,
            timeout: Self::DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    fn render(&self, input: &Path, sidecar: &Path, output: &Path) -> String {
        self.template
            .replace("{input}", &shell_quote(input))
            .replace("{sidecar}", &shell_quote(sidecar))
            .replace("{output}", &shell_quote(output))
            .replace("{classes}", &self.classes.to_string())
    }
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> InferenceError + '_ {
    move |source| InferenceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Predictor for SubprocessPredictor {
    fn classes(&self) -> usize {
        self.classes
    }

    fn predict(&self, input: &WindowInput<'_>) -> Result<Vec<f32>, InferenceError> {
        let dir = tempfile::Builder::new()
            .prefix("cardioseg-window-")
            .tempdir()
            .map_err(io_err(Path::new("temporary directory")))?;
        let input_path = dir.path().join("input.f32");
        let sidecar_path = dir.path().join("input.json");
        let output_path = dir.path().join("output.f32");
        let stderr_path = dir.path().join("stderr.txt");

        let mut bytes = vec![0u8; input.values.len() * 4];
        LittleEndian::write_f32_into(input.values, &mut bytes);
        fs::write(&input_path, &bytes).map_err(io_err(&input_path))?;
        let sidecar = Sidecar {
            dims: input.patch,
            spacing: input.spacing,
            value_scale: "unit_interval",
        };
        let json = serde_json::to_vec(&sidecar).expect("sidecar serializes");
        fs::write(&sidecar_path, json).map_err(io_err(&sidecar_path))?;

        let command = self.render(&input_path, &sidecar_path, &output_path);
        let stderr_file = fs::File::create(&stderr_path).map_err(io_err(&stderr_path))?;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr_file)
            .spawn()
            .map_err(|source| InferenceError::Spawn {
                command: command.clone(),
                source,
            })?;

        let started = Instant::now();
        let status = loop {
            match child.try_wait().map_err(io_err(&stderr_path))? {
                Some(status) => break status,
                None if started.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(InferenceError::Timeout {
                        command,
                        seconds: self.timeout.as_secs_f64(),
                    });
                }
                None => thread::sleep(Duration::from_millis(2)),
            }
        };
        if !status.success() {
            let stderr = fs::read_to_string(&stderr_path).unwrap_or_default();
            return Err(InferenceError::ExitStatus {
                command,
                status: status.to_string(),
                stderr: stderr.trim().to_string(),
            });
        }

        let raw = fs::read(&output_path).map_err(io_err(&output_path))?;
        let expected = self.classes * input.voxels();
        if raw.len() != expected * 4 {
            return Err(InferenceError::WrongLength {
                expected,
                got: raw.len() / 4,
            });
        }
        let mut scores = vec![0.0f32; expected];
        LittleEndian::read_f32_into(&raw, &mut scores);
        Ok(scores)
    }
}
