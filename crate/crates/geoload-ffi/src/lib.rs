//! C ABI over the forecasting and explanation pipeline. Handles are
//! opaque pointers; every fallible call returns a status code and stores a
//! human-readable message retrievable with `geoload_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, CStr, CString};
use std::path::Path;
use std::ptr;

use geoload::config::RunConfig;
use geoload::data::{
    build_samples, ingest, synthesize, write_csvs, Sample, SyntheticGroundTruth, EXO_LEN,
    NODE_FEATURES,
};
use geoload::explain::explain_locations;
use geoload::graph::build_adjacency;
use geoload::model::{load_model, save_model, train, IntegratedModel, ModelFile};

/// Status codes mirrored in the generated header.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeoloadStatus {
    GeoloadOk = 0,
    /// Runtime failure (I/O, numerics, training divergence).
    GeoloadErrRuntime = 1,
    /// Invalid configuration or arguments.
    GeoloadErrInvalid = 2,
    /// A required pointer was null.
    GeoloadErrNullPointer = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &geoload::Error) -> GeoloadStatus {
    match err.exit_code() {
        2 => GeoloadStatus::GeoloadErrInvalid,
        _ => GeoloadStatus::GeoloadErrRuntime,
    }
}

fn fail(err: geoload::Error) -> GeoloadStatus {
    set_error(&err.to_string());
    status_of(&err)
}



fn null_arg(what: &str) -> GeoloadStatus {
    set_error(&format!("{what} is null"));
    GeoloadStatus::GeoloadErrNullPointer
}

/// Message for the most recent error on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn geoload_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn cstr_path<'a>(ptr: *const c_char) -> Result<&'a Path, std::str::Utf8Error> {
    Ok(Path::new(CStr::from_ptr(ptr).to_str()?))
}

macro_rules! try_path {
    ($ptr:expr, $what:expr) => {{
        if $ptr.is_null() {
            return null_arg($what);
        }
        match cstr_path($ptr) {
            Ok(p) => p,
            Err(_) => {
                set_error(concat!($what, " is not valid UTF-8"));
                return GeoloadStatus::GeoloadErrInvalid;
            }
        }
    }};
}

/// Opaque trained-model handle.
pub struct GeoloadModel {
    model: IntegratedModel,
    file: ModelFile,
}

/// Write a synthetic dataset (load.csv, weather.csv, locations.csv) into
/// `out_dir`. Planted weights decay geometrically from location 0.
///
/// # Safety
/// `out_dir` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn geoload_synth(
    out_dir: *const c_char,
    n_locations: usize,
    n_days: usize,
    noise_mw: c_double,
    seed: u64,
) -> GeoloadStatus {
    let out = try_path!(out_dir, "out_dir");
    let weights: Vec<f64> = (0..n_locations).map(|i| 0.6f64.powi(i as i32)).collect();
    let truth = SyntheticGroundTruth::new(weights, noise_mw, seed);
    let result = synthesize(n_locations, n_days, &truth).and_then(|dataset| {
        std::fs::create_dir_all(out).map_err(geoload::Error::from)?;
        write_csvs(
            &dataset,
            &out.join("load.csv"),
            &out.join("weather.csv"),
            &out.join("locations.csv"),
        )
    });
    match result {
        Ok(()) => GeoloadStatus::GeoloadOk,
        Err(e) => fail(e),
    }
}

fn train_at(data: &Path, model_out: &Path, seed: u64) -> geoload::Result<()> {
    let mut config = RunConfig::default();
    config.trainer.seed = seed;
    let dataset =
        ingest(&data.join("load.csv"), &data.join("weather.csv"), &data.join("locations.csv"))?;
    let adjacency = build_adjacency(&dataset.locations, config.graph_rule)?;
    let sets = build_samples(&dataset, config.split)?;
    let mut model = IntegratedModel::init(
        adjacency,
        NODE_FEATURES,
        EXO_LEN,
        &config.gcn_dims,
        &config.dense_hidden,
        seed,
        config.hash(),
    );
    train(&mut model, &sets.train, &sets.val, &config.trainer)?;
    save_model(model_out, &model, config.graph_rule, &sets.schema, &sets.stats)
}

/// Train the integrated model on CSVs in `data_dir` (default
/// configuration) and write the model file to `model_path`.
///
/// # Safety
/// Both arguments must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn geoload_train(
    data_dir: *const c_char,
    model_path: *const c_char,
    seed: u64,
) -> GeoloadStatus {
    let data = try_path!(data_dir, "data_dir");
    let out = try_path!(model_path, "model_path");
    match train_at(data, out, seed) {
        Ok(()) => GeoloadStatus::GeoloadOk,
        Err(e) => fail(e),
    }
}

/// Load a trained model file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer. On success `*out` owns the handle until `geoload_model_free`.
#[no_mangle]
pub unsafe extern "C" fn geoload_model_load(
    path: *const c_char,
    out: *mut *mut GeoloadModel,
) -> GeoloadStatus {
    if out.is_null() {
        return null_arg("out");
    }
    let path = try_path!(path, "path");
    match load_model(path) {
        Ok((model, file)) => {
            *out = Box::into_raw(Box::new(GeoloadModel { model, file }));
            GeoloadStatus::GeoloadOk
        }
        Err(e) => {
            *out = ptr::null_mut();
            fail(e)
        }
    }
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `handle` must come from `geoload_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn geoload_model_free(handle: *mut GeoloadModel) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of weather collection locations the model was trained on.
///
/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn geoload_model_locations(
    handle: *const GeoloadModel,
    out: *mut usize,
) -> GeoloadStatus {
    if handle.is_null() {
        return null_arg("handle");
    }
    if out.is_null() {
        return null_arg("out");
    }
    *out = (*handle).model.n_nodes();
    GeoloadStatus::GeoloadOk
}

/// Forecast one hour, in MW. `node_features` is row-major n x 2 (z-scored
/// temperature, humidity); `exo` has the 50 calendar/lag entries with lags
/// z-scored.
///
/// # Safety
/// `node_features` must hold n*2 doubles, `exo` 50 doubles; all pointers
/// valid.
#[no_mangle]
pub unsafe extern "C" fn geoload_model_predict(
    handle: *const GeoloadModel,
    node_features: *const c_double,
    exo: *const c_double,
    out_mw: *mut c_double,
) -> GeoloadStatus {
    if handle.is_null() {
        return null_arg("handle");
    }
    if node_features.is_null() || exo.is_null() || out_mw.is_null() {
        return null_arg("node_features/exo/out_mw");
    }
    let h = &*handle;
    let n = h.model.n_nodes();
    let features = std::slice::from_raw_parts(node_features, n * NODE_FEATURES);
    let exo = std::slice::from_raw_parts(exo, EXO_LEN);
    let sample = Sample {
        timestamp: chrono::Utc::now(),
        node_features: ndarray::Array2::from_shape_vec((n, NODE_FEATURES), features.to_vec())
            .expect("shape checked above"),
        exo: ndarray::Array1::from_vec(exo.to_vec()),
        target: 0.0,
        actual_mw: 0.0,
    };
    match h.model.predict(&sample) {
        Ok(z) => {
            *out_mw = h.file.stats.denormalize_target(z);
            GeoloadStatus::GeoloadOk
        }
        Err(e) => fail(e),
    }
}

/// Score per-location importance over the test split of `data_dir` and
/// write `importances` (length n, MW) and `ranking` (location indices,
/// most important first).
///
/// # Safety
/// `importances` and `ranking` must each have room for n entries, where n
/// is the model's location count.
#[no_mangle]
pub unsafe extern "C" fn geoload_explain(
    handle: *const GeoloadModel,
    data_dir: *const c_char,
    mask_count: usize,
    sample_limit: usize,
    seed: u64,
    importances: *mut c_double,
    ranking: *mut usize,
) -> GeoloadStatus {
    if handle.is_null() {
        return null_arg("handle");
    }
    if importances.is_null() || ranking.is_null() {
        return null_arg("importances/ranking");
    }
    let data = try_path!(data_dir, "data_dir");
    let h = &*handle;
    let config = RunConfig::default();
    let result = (|| -> geoload::Result<geoload::explain::Explanation> {
        let dataset = ingest(
            &data.join("load.csv"),
            &data.join("weather.csv"),
            &data.join("locations.csv"),
        )?;
        let sets = build_samples(&dataset, config.split)?;
        if sets.schema.hash() != h.file.schema_hash {
            return Err(geoload::Error::Validation(
                "feature schema mismatch between model and data".into(),
            ));
        }
        let subset: Vec<Sample> = if sample_limit == 0 || sample_limit >= sets.test.len() {
            sets.test
        } else {
            let stride = sets.test.len() / sample_limit;
            sets.test.into_iter().step_by(stride).take(sample_limit).collect()
        };
        explain_locations(&h.model, &subset, mask_count, seed, &h.file.stats)
    })();
    match result {
        Ok(explanation) => {
            let n = explanation.phi.len();
            std::slice::from_raw_parts_mut(importances, n).copy_from_slice(&explanation.phi);
            std::slice::from_raw_parts_mut(ranking, n).copy_from_slice(&explanation.ranking);
            GeoloadStatus::GeoloadOk
        }
        Err(e) => fail(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    #[test]
    fn null_arguments_are_reported() {
        let status = unsafe { geoload_model_load(ptr::null(), ptr::null_mut()) };
        assert_eq!(status, GeoloadStatus::GeoloadErrNullPointer);
        let msg = unsafe { CStr::from_ptr(geoload_last_error()) };
        assert!(!msg.to_bytes().is_empty());
    }

    #[test]
    fn missing_model_file_is_runtime_error() {
        let path = c("/nonexistent/model.json");
        let mut handle: *mut GeoloadModel = ptr::null_mut();
        let status = unsafe { geoload_model_load(path.as_ptr(), &mut handle) };
        assert_eq!(status, GeoloadStatus::GeoloadErrRuntime);
        assert!(handle.is_null());
    }

    #[test]
    fn synth_rejects_single_location() {
        let dir = tempfile::tempdir().unwrap();
        let out = c(dir.path().to_str().unwrap());
        let status = unsafe { geoload_synth(out.as_ptr(), 1, 90, 2.0, 0) };
        assert_eq!(status, GeoloadStatus::GeoloadErrInvalid);
    }
}
