//! C ABI over the engine: load a recognition net behind an opaque handle,
//! classify images, and run any command from a JSON config.
//!
//! Every function returns a [`SoptStatus`]; on failure the message is kept
//! per thread and read with [`sopt_last_error`]. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sopt::cli::{self, CommandKind, Overrides};
use sopt::{Error, RecognitionNet, Tensor};

/// Status codes; 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SoptStatus {
    Ok = 0,
    Other = 1,
    Config = 2,
    Numerical = 3,
    MissingInput = 4,
    NullPointer = 5,
    InvalidArgument = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque handle to a loaded recognition net.
pub struct SoptNet {
    net: RecognitionNet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(SoptStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match cli::exit_code(&e) {
            cli::EXIT_CONFIG => SoptStatus::Config,
            cli::EXIT_NUMERICAL => SoptStatus::Numerical,
            cli::EXIT_MISSING_INPUT => SoptStatus::MissingInput,
            _ => SoptStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SoptStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SoptStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SoptStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SoptStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SoptStatus::Panic
        }
    }
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// # Safety
/// `net` must be null or a handle from [`sopt_net_load`] not yet freed.
unsafe fn net_arg<'a>(net: *const SoptNet) -> Result<&'a RecognitionNet, Failure> {
    net.as_ref().map(|n| &n.net).ok_or_else(|| null("net"))
}

/// # Safety
/// `pixels` must point to `len` readable floats.
unsafe fn image_arg(net: &RecognitionNet, pixels: *const f32, len: usize) -> Result<Tensor, Failure> {
    if pixels.is_null() {
        return Err(null("pixels"));
    }
    let [c, h, w] = net.input_shape();
    if len != c * h * w {
        return Err(invalid(format!(
            "expected {} pixels ({c}x{h}x{w}), got {len}",
            c * h * w
        )));
    }
    let data = std::slice::from_raw_parts(pixels, len).to_vec();
    if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("pixels must lie in [0, 1]"));
    }
    Ok(Tensor::new(vec![1, c, h, w], data)?)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sopt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Engine version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sopt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint into `*out`. Free it with [`sopt_net_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sopt_net_load(path: *const c_char, out: *mut *mut SoptNet) -> SoptStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let net = RecognitionNet::load_checkpoint(path)?;
        *out = Box::into_raw(Box::new(SoptNet { net }));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `net` must be null or a live handle from [`sopt_net_load`].
#[no_mangle]
pub unsafe extern "C" fn sopt_net_free(net: *mut SoptNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Writes channels, height and width to `out[0..3]`.
///
/// # Safety
/// `net` must be a live handle and `out` point to 3 writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn sopt_net_input_shape(net: *const SoptNet, out: *mut usize) -> SoptStatus {
    guard(|| {
        let net = net_arg(net)?;
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, 3).copy_from_slice(&net.input_shape());
        Ok(())
    })
}

/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sopt_net_num_classes(net: *const SoptNet, out: *mut usize) -> SoptStatus {
    guard(|| {
        let net = net_arg(net)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = net.num_classes();
        Ok(())
    })
}

/// Copies the NUL-terminated name of class `index` into `buf`. `*needed`
/// (when non-null) receives the size including the terminator; a short
/// buffer gives `BufferTooSmall` and leaves `buf` untouched.
///
/// # Safety
/// `net` must be a live handle, `buf` hold `buf_len` bytes (or be null with
/// `buf_len` 0) and `needed` be null or writable.
#[no_mangle]
pub unsafe extern "C" fn sopt_net_class_name(
    net: *const SoptNet,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> SoptStatus {
    guard(|| {
        let net = net_arg(net)?;
        let name = net
            .class_names()
            .get(index)
            .ok_or_else(|| invalid(format!("class {index} of {}", net.num_classes())))?;
        let size = name.len() + 1;
        if !needed.is_null() {
            *needed = size;
        }
        if buf_len < size {
            return Err(Failure(
                SoptStatus::BufferTooSmall,
                format!("need {size} bytes, got {buf_len}"),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(name.as_ptr(), buf.cast::<u8>(), name.len());
        *buf.add(name.len()) = 0;
        Ok(())
    })
}

/// Top-1 class of one `C x H x W` image with values in `[0, 1]`.
///
/// # Safety
/// `net` must be a live handle, `pixels` point to `len` floats and
/// `out_class` be writable.
#[no_mangle]
pub unsafe extern "C" fn sopt_net_classify(
    net: *const SoptNet,
    pixels: *const f32,
    len: usize,
    out_class: *mut usize,
) -> SoptStatus {
    guard(|| {
        let net = net_arg(net)?;
        if out_class.is_null() {
            return Err(null("out_class"));
        }
        let image = image_arg(net, pixels, len)?;
        *out_class = net.predict(&image)?[0];
        Ok(())
    })
}

/// Class logits of one image into `out[0..out_len]`; `out_len` must equal
/// the class count.
///
/// # Safety
/// As [`sopt_net_classify`], with `out` pointing to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn sopt_net_logits(
    net: *const SoptNet,
    pixels: *const f32,
    len: usize,
    out: *mut f32,
    out_len: usize,
) -> SoptStatus {
    guard(|| {
        let net = net_arg(net)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len != net.num_classes() {
            return Err(invalid(format!("out_len {out_len} != {} classes", net.num_classes())));
        }
        let image = image_arg(net, pixels, len)?;
        let record = net.forward(&image)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(record.logits().data());
        Ok(())
    })
}

/// Runs `command` (`train`, `synth` or `eval`) with a JSON config, exactly
/// as the command-line tool does with `--config`. `out_dir` may be null to
/// keep the config's output directory.
///
/// # Safety
/// `command` and `config_json` must be NUL-terminated strings; `out_dir`
/// null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sopt_run_config(
    command: *const c_char,
    config_json: *const c_char,
    out_dir: *const c_char,
) -> SoptStatus {
    guard(|| {
        let kind = match str_arg(command, "command")? {
            "train" => CommandKind::Train,
            "synth" => CommandKind::Synth,
            "eval" => CommandKind::Eval,
            other => return Err(invalid(format!("unknown command {other:?}"))),
        };
        let text = str_arg(config_json, "config_json")?;
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Failure(SoptStatus::Config, format!("config: {e}")))?;
        if !value.is_object() {
            return Err(Failure(SoptStatus::Config, "config must be a JSON object".into()));
        }
        let out = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(out_dir, "out_dir")?))
        };
        let cfg = cli::resolve(
            kind,
            Some(value),
            &Overrides {
                out,
                ..Default::default()
            },
        )?;
        cli::run(&cfg)?;
        Ok(())
    })
}
