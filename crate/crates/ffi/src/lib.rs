//! C ABI over `calseg`.
//!
//! Every fallible function returns a [`CalsegStatus`]; on failure the
//! message is available from [`calseg_last_error`] on the same thread.
//! Objects are opaque handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Arrays are caller-owned, row-major
//! `double` buffers with explicit lengths.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use calseg::autodiff::Graph;
use calseg::losses::{make_loss, onehot_from_mask, LabelledBatch, Loss, LossConfig, LossKind};
use calseg::segnet::{self, NetConfig, ParameterSet};
use calseg::{metrics, Error, Tensor};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CalsegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Domain = 4,
    Config = 5,
    Format = 6,
    Io = 7,
    Panic = 8,
}

impl From<&Error> for CalsegStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape(_) | Error::Axis { .. } => CalsegStatus::Shape,
            Error::Domain(_) => CalsegStatus::Domain,
            Error::InvalidArgument(_) => CalsegStatus::InvalidArgument,
            Error::Config(_) => CalsegStatus::Config,
            Error::Format { .. } => CalsegStatus::Format,
            Error::Io(_) => CalsegStatus::Io,
        }
    }
}

/// Network hyperparameters, mirrored from the Rust side.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CalsegNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub input_channels: usize,
    pub seed: u64,
}

impl From<CalsegNetConfig> for NetConfig {
    fn from(c: CalsegNetConfig) -> Self {
        NetConfig {
            depth: c.depth,
            base_channels: c.base_channels,
            kernel: c.kernel,
            input_channels: c.input_channels,
            seed: c.seed,
        }
    }
}

/// Opaque loss handle.
pub struct CalsegLoss {
    cfg: LossConfig,
}

/// Opaque model handle: a network configuration plus its weights.
pub struct CalsegModel {
    net: NetConfig,
    params: ParameterSet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg);
}

struct Failure(CalsegStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(CalsegStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn null(what: &str) -> Failure {
    Failure(CalsegStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CalsegStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> CalsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CalsegStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CalsegStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut_arg<'a, T>(p: *mut T, len: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn calseg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn calseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a loss from its name (`ce`, `dsc`, `dscpp`, `tversky`,
/// `focal_tversky`, `combo`, `unified_focal`) with default
/// hyperparameters. `plusplus` non-zero selects the `++` variant.
///
/// # Safety
/// `kind` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn calseg_loss_new(kind: *const c_char, plusplus: i32, out: *mut *mut CalsegLoss) -> CalsegStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let kind: LossKind = str_arg(kind, "kind")?.parse()?;
        let cfg = LossConfig::new(kind).with_plusplus(plusplus != 0);
        cfg.validate()?;
        *out = Box::into_raw(Box::new(CalsegLoss { cfg }));
        Ok(())
    })
}

/// Sets one hyperparameter: `gamma`, `alpha`, `beta`, `delta`, `lambda`
/// or `smooth`. The loss is left unchanged if the result is invalid.
///
/// # Safety
/// `loss` must come from [`calseg_loss_new`]; `name` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn calseg_loss_set(loss: *mut CalsegLoss, name: *const c_char, value: f64) -> CalsegStatus {
    guard(|| {
        let loss = out_arg(loss, "loss")?;
        let mut cfg = loss.cfg.clone();
        let slot = match str_arg(name, "name")? {
            "gamma" => &mut cfg.gamma,
            "alpha" => &mut cfg.alpha,
            "beta" => &mut cfg.beta,
            "delta" => &mut cfg.delta,
            "lambda" => &mut cfg.lambda,
            "smooth" => &mut cfg.smooth,
            other => return Err(invalid(format!("unknown loss parameter `{other}`"))),
        };
        *slot = value;
        cfg.validate()?;
        loss.cfg = cfg;
        Ok(())
    })
}

/// Releases a loss. Null is ignored.
///
/// # Safety
/// `loss` must come from [`calseg_loss_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn calseg_loss_free(loss: *mut CalsegLoss) {
    if !loss.is_null() {
        drop(Box::from_raw(loss));
    }
}

fn built(cfg: &LossConfig) -> FfiResult<Loss> {
    Ok(make_loss(cfg)?)
}

fn onehot(truth: &[u8]) -> FfiResult<Tensor> {
    if let Some(v) = truth.iter().find(|v| **v > 1) {
        return Err(invalid(format!("truth labels must be 0 or 1, got {v}")));
    }
    Ok(onehot_from_mask(&Tensor::from_vec(truth.iter().map(|v| f64::from(*v)).collect()))?)
}

/// Loss of foreground probabilities `fg[n]` against labels `truth[n]`
/// (0 or 1). The background probability is `1 - fg`.
///
/// # Safety
/// `fg` and `truth` must hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn calseg_loss_value(
    loss: *const CalsegLoss,
    fg: *const f64,
    truth: *const u8,
    n: usize,
    out: *mut f64,
) -> CalsegStatus {
    guard(|| {
        let loss = ref_arg(loss, "loss")?;
        let fg = slice_arg(fg, n, "fg")?;
        let truth = slice_arg(truth, n, "truth")?;
        let out = out_arg(out, "out")?;
        let mut probs = fg.to_vec();
        probs.extend(fg.iter().map(|p| 1.0 - p));
        let probs = Tensor::new(vec![2, n], probs)?;
        *out = built(&loss.cfg)?.value(&probs, &onehot(truth)?)?;
        Ok(())
    })
}

/// Loss of `softmax(logits)` and its gradient with respect to the logits.
/// `logits` and `grad` are `[2, n]`, foreground channel first.
///
/// # Safety
/// `logits` and `grad` must hold `2 n` elements, `truth` `n`; `value`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn calseg_loss_grad(
    loss: *const CalsegLoss,
    logits: *const f64,
    truth: *const u8,
    n: usize,
    value: *mut f64,
    grad: *mut f64,
) -> CalsegStatus {
    guard(|| {
        let loss = ref_arg(loss, "loss")?;
        let len = n.checked_mul(2).ok_or_else(|| invalid("n too large"))?;
        let logits = slice_arg(logits, len, "logits")?;
        let truth = slice_arg(truth, n, "truth")?;
        let value = out_arg(value, "value")?;
        let grad = slice_mut_arg(grad, len, "grad")?;
        let l = built(&loss.cfg)?;
        let mut g = Graph::new();
        let z = g.variable(Tensor::new(vec![2, n], logits.to_vec())?);
        let p = g.softmax_channels(z)?;
        let batch = LabelledBatch::new(&g, p, onehot(truth)?)?;
        let root = l.build(&mut g, &batch)?;
        g.backward(root)?;
        *value = g.value(root).item()?;
        grad.copy_from_slice(g.grad(z).data());
        Ok(())
    })
}

/// Default network hyperparameters.
#[no_mangle]
pub extern "C" fn calseg_net_config_default() -> CalsegNetConfig {
    let d = NetConfig::default();
    CalsegNetConfig {
        depth: d.depth,
        base_channels: d.base_channels,
        kernel: d.kernel,
        input_channels: d.input_channels,
        seed: d.seed,
    }
}

/// Creates a freshly initialised model.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn calseg_model_new(config: CalsegNetConfig, out: *mut *mut CalsegModel) -> CalsegStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let net = NetConfig::from(config);
        let params = segnet::init_params(&net)?;
        *out = Box::into_raw(Box::new(CalsegModel { net, params }));
        Ok(())
    })
}

/// Loads a checkpoint and checks it against `config`.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn calseg_model_load(
    config: CalsegNetConfig,
    path: *const c_char,
    out: *mut *mut CalsegModel,
) -> CalsegStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let net = NetConfig::from(config);
        let file = std::fs::File::open(&path).map_err(Error::from)?;
        let params = segnet::read_checkpoint(std::io::BufReader::new(file))?;
        params.check_against(&net)?;
        *out = Box::into_raw(Box::new(CalsegModel { net, params }));
        Ok(())
    })
}

/// Writes the model weights as a checkpoint file.
///
/// # Safety
/// `model` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn calseg_model_save(model: *const CalsegModel, path: *const c_char) -> CalsegStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let file = std::fs::File::create(str_arg(path, "path")?).map_err(Error::from)?;
        segnet::write_checkpoint(&model.params, std::io::BufWriter::new(file))?;
        Ok(())
    })
}

/// Number of trainable scalars in the model.
///
/// # Safety
/// `model` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn calseg_model_param_count(model: *const CalsegModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.scalar_count())
}

/// Foreground probabilities `fg[height * width]` for an image of shape
/// `[input_channels, height, width]`. The image is used as given; callers
/// wanting the training-time normalisation must apply it first.
///
/// # Safety
/// `image` must hold `input_channels * height * width` values and `fg`
/// `height * width`.
#[no_mangle]
pub unsafe extern "C" fn calseg_model_predict(
    model: *const CalsegModel,
    image: *const f64,
    height: usize,
    width: usize,
    fg: *mut f64,
) -> CalsegStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let plane = height.checked_mul(width).ok_or_else(|| invalid("image too large"))?;
        let len = plane
            .checked_mul(model.net.input_channels)
            .ok_or_else(|| invalid("image too large"))?;
        let image = slice_arg(image, len, "image")?;
        let fg = slice_mut_arg(fg, plane, "fg")?;
        let x = Tensor::new(vec![model.net.input_channels, height, width], image.to_vec())?;
        let probs = segnet::predict(&model.net, &model.params, &x)?;
        fg.copy_from_slice(probs.channel(0)?.data());
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn calseg_model_free(model: *mut CalsegModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Two-sided Wilcoxon rank-sum test of `xs[nx]` against `ys[ny]`.
/// `exact` is set to 1 when the p-value comes from full enumeration.
///
/// # Safety
/// The arrays must hold the stated counts; the outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn calseg_wilcoxon_rank_sum(
    xs: *const f64,
    nx: usize,
    ys: *const f64,
    ny: usize,
    statistic: *mut f64,
    p_value: *mut f64,
    exact: *mut i32,
) -> CalsegStatus {
    guard(|| {
        let t = metrics::wilcoxon_rank_sum(slice_arg(xs, nx, "xs")?, slice_arg(ys, ny, "ys")?)?;
        *out_arg(statistic, "statistic")? = t.statistic;
        *out_arg(p_value, "p_value")? = t.two_sided_p;
        *out_arg(exact, "exact")? = i32::from(t.exact);
        Ok(())
    })
}

/// Percentile bootstrap interval of the mean of `values[n]`.
///
/// # Safety
/// `values` must hold `n` elements; `lo` and `hi` must be valid.
#[no_mangle]
pub unsafe extern "C" fn calseg_bootstrap_ci(
    values: *const f64,
    n: usize,
    level: f64,
    resamples: usize,
    seed: u64,
    lo: *mut f64,
    hi: *mut f64,
) -> CalsegStatus {
    guard(|| {
        let (a, b) = metrics::bootstrap_ci(slice_arg(values, n, "values")?, level, resamples, seed)?;
        *out_arg(lo, "lo")? = a;
        *out_arg(hi, "hi")? = b;
        Ok(())
    })
}
