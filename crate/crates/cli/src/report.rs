//! Deterministic JSON serialization of run reports: sorted keys (the
//! default serde_json map is ordered) and a fixed 17-significant-digit
//! float rendering, so identical runs produce identical bytes.

use serde::Serialize;
use serde_json::{json, Map, Value};

use oddspot_core::calibrate::GgdParams;
use oddspot_core::detect::{DetectionConfig, DetectionRecord, NfaMapStack, StageTimings};
use oddspot_core::features::{FeatureMode, PcaBasis};

struct SigFigFormatter;

impl serde_json::ser::Formatter for SigFigFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Renders a JSON value with sorted keys and fixed float formatting,
/// followed by a trailing newline.
pub fn to_deterministic_json(value: &Value) -> Vec<u8> {
    let mut bytes = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut bytes, SigFigFormatter);
    value
        .serialize(&mut ser)
        .expect("in-memory JSON serialization cannot fail");
    bytes.push(b'\n');
    bytes
}

fn float(v: f64) -> Value {
    Value::from(v)
}

pub fn config_value(config: &DetectionConfig, input: &str, seed: u64) -> Value {
    let mode = match config.mode {
        FeatureMode::Pixels => "pixels",
        FeatureMode::ExternalFeatures { .. } => "features",
    };
    let mut obj = Map::new();
    obj.insert("epsilon".into(), float(config.epsilon));
    obj.insert("h".into(), float(config.residual.h));
    obj.insert("input".into(), Value::from(input));
    obj.insert(
        "kernel_radii".into(),
        Value::from(config.kernel_radii.clone()),
    );
    obj.insert("mode".into(), Value::from(mode));
    obj.insert("n_scales".into(), Value::from(config.n_scales as u64));
    obj.insert(
        "neighbors".into(),
        Value::from(config.residual.n_neighbors as u64),
    );
    obj.insert(
        "patch_side".into(),
        Value::from(config.residual.patch_side as u64),
    );
    obj.insert("seed".into(), Value::from(seed));
    obj.insert(
        "stride".into(),
        Value::from(config.residual.search_stride as u64),
    );
    if let FeatureMode::ExternalFeatures { input_channels } = config.mode {
        obj.insert(
            "input_channels".into(),
            Value::from(input_channels as u64),
        );
    }
    Value::Object(obj)
}

pub fn record_value(r: &DetectionRecord) -> Value {
    json!({
        "band": r.band.as_str(),
        "channel": r.channel as u64,
        "kernel_radius": r.kernel_radius as u64,
        "log10_nfa": float(r.log10_nfa),
        "nfa": float(r.nfa),
        "scale": r.scale as u64,
        "x": r.x as u64,
        "y": r.y as u64,
    })
}

/// The full detection report. `nfa_files` must align with `stack.maps`.
pub fn run_report(
    config: &DetectionConfig,
    input: &str,
    seed: u64,
    ggd: &[GgdParams],
    stack: &NfaMapStack,
    nfa_files: &[String],
    records: &[DetectionRecord],
) -> Value {
    let maps: Vec<Value> = stack
        .maps
        .iter()
        .zip(nfa_files)
        .map(|(m, file)| {
            json!({
                "channel": m.channel as u64,
                "height": m.height as u64,
                "kernel_radius": m.kernel_radius as u64,
                "median": float(m.median),
                "nfa_file": file,
                "scale": m.scale as u64,
                "sigma": float(m.sigma),
                "valid_margin": m.valid_margin as u64,
                "width": m.width as u64,
            })
        })
        .collect();
    let ggd: Vec<Value> = ggd
        .iter()
        .enumerate()
        .map(|(c, p)| {
            json!({
                "channel": c as u64,
                "scale": float(p.scale),
                "shape": float(p.shape),
            })
        })
        .collect();
    let min_log10 = records
        .iter()
        .map(|r| r.log10_nfa)
        .fold(f64::INFINITY, f64::min);
    json!({
        "config": config_value(config, input, seed),
        "detections": records.len() as u64,
        "ggd": ggd,
        "maps": maps,
        "min_log10_nfa": if records.is_empty() { Value::Null } else { float(min_log10) },
        "n_tests": stack.n_tests as u64,
        "records": records.iter().map(record_value).collect::<Vec<_>>(),
        "schema": 1,
        "timings_file": "timings.json",
    })
}

pub fn timings_value(load_s: f64, write_s: f64, t: &StageTimings) -> Value {
    json!({
        "calibrate_s": float(t.calibrate_s),
        "group_s": float(t.group_s),
        "load_s": float(load_s),
        "maps_s": float(t.maps_s),
        "pyramid_s": float(t.pyramid_s),
        "residual_s": float(t.residual_s),
        "write_s": float(write_s),
    })
}

pub fn basis_value(basis: &PcaBasis) -> Value {
    json!({
        "components": basis
            .components
            .iter()
            .map(|c| c.iter().copied().map(float).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
        "explained_variance": basis
            .explained_variance
            .iter()
            .copied()
            .map(float)
            .collect::<Vec<_>>(),
        "mean": basis.mean.iter().copied().map(float).collect::<Vec<_>>(),
        "rank_deficient": basis.rank_deficient,
        "schema": 1,
    })
}
