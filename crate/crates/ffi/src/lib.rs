//! C ABI over the `anomagent` core library.
//!
//! Conventions:
//! - Every fallible function returns an [`AgStatus`]; on failure a message is
//!   available from [`ag_last_error_message`] on the same thread.
//! - Results are written through out-pointers. Strings returned through `char **`
//!   are owned by the caller and must be released with [`ag_string_free`].
//! - Trajectories are opaque handles released with [`ag_trajectory_free`].
//! - Complex values cross the boundary as UTF-8 JSON.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, UnwindSafe};
use std::ptr;

use anomagent::agent_loop::{EpisodeRecord, EpisodeResult};
use anomagent::grpo::{group_advantages, grpo_loss, sft_loss, GroupRollout, GrpoConfig};
use anomagent::metrics::{inception_score, ProbMatrix};
use anomagent::protocol::{
    check_format, format_violation, parse_trajectory, serialize_trajectory, TaskSpec, Trajectory,
};
use anomagent::rewards::{
    reflection_reward, total_reward, RewardWeights, TaskSource, TransitionTable,
};
use anomagent::tools::BackendConfig;
use anomagent::trajectory_builder::{build_trajectory, BuildSpec};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    Protocol = 4,
    InvalidArgument = 5,
    Backend = 6,
    Panic = 7,
}

/// Opaque trajectory handle.
pub struct AgTrajectory {
    inner: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AgStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> FfiResult<()> + UnwindSafe>(f: F) -> AgStatus {
    match catch_unwind(f) {
        Ok(Ok(())) => AgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AgStatus::Panic
        }
    }
}

fn fail<T>(status: AgStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(AgStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(AgStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn json_arg<T: serde::de::DeserializeOwned>(p: *const c_char, name: &str) -> FfiResult<T> {
    let s = str_arg(p, name)?;
    serde_json::from_str(s).map_err(|e| Failure(AgStatus::InvalidJson, format!("{name}: {e}")))
}

/// Null means "use the default".
unsafe fn json_or_default<T: serde::de::DeserializeOwned + Default>(
    p: *const c_char,
    name: &str,
) -> FfiResult<T> {
    if p.is_null() {
        Ok(T::default())
    } else {
        json_arg(p, name)
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(AgStatus::NullPointer, format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> FfiResult<()> {
    if out.is_null() {
        return fail(AgStatus::NullPointer, format!("{name} is null"));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let c = CString::new(s).map_err(|e| Failure(AgStatus::InvalidArgument, e.to_string()))?;
    write_out(out, c.into_raw(), "out")
}

fn to_json<T: serde::Serialize>(v: &T) -> FfiResult<String> {
    serde_json::to_string(v).map_err(|e| Failure(AgStatus::InvalidJson, e.to_string()))
}

unsafe fn handle<'a>(h: *const AgTrajectory) -> FfiResult<&'a Trajectory> {
    if h.is_null() {
        return fail(AgStatus::NullPointer, "trajectory handle is null");
    }
    Ok(&(*h).inner)
}

unsafe fn write_handle(out: *mut *mut AgTrajectory, t: Trajectory) -> FfiResult<()> {
    if out.is_null() {
        return fail(AgStatus::NullPointer, "out is null");
    }
    out.write(Box::into_raw(Box::new(AgTrajectory { inner: t })));
    Ok(())
}

/// Last error message on this thread, or null. Valid until the next failing call on
/// the same thread; do not free.
#[no_mangle]
pub extern "C" fn ag_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn ag_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn ag_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn ag_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses trajectory JSON (`{task, segments, images}`) into a new handle.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ag_trajectory_from_json(
    json: *const c_char,
    out: *mut *mut AgTrajectory,
) -> AgStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let t = Trajectory::from_jsonl_line(text)
            .map_err(|e| Failure(AgStatus::InvalidJson, e.to_string()))?;
        write_handle(out, t)
    })
}

/// Parses a tagged transcript for the task given as JSON (`{item_name, anomaly_type,
/// normal_image}`).
///
/// # Safety
/// `transcript` and `task_json` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ag_trajectory_parse_transcript(
    transcript: *const c_char,
    task_json: *const c_char,
    out: *mut *mut AgTrajectory,
) -> AgStatus {
    guard(|| {
        let raw = str_arg(transcript, "transcript")?;
        let task: TaskSpec = json_arg(task_json, "task_json")?;
        let t =
            parse_trajectory(raw, task).map_err(|e| Failure(AgStatus::Protocol, e.to_string()))?;
        write_handle(out, t)
    })
}

/// Trajectory as one line of JSON.
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ag_trajectory_to_json(
    h: *const AgTrajectory,
    out: *mut *mut c_char,
) -> AgStatus {
    guard(|| {
        let t = handle(h)?;
        write_string(out, t.to_jsonl_line())
    })
}

/// Trajectory as tagged transcript text.
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ag_trajectory_serialize(
    h: *const AgTrajectory,
    out: *mut *mut c_char,
) -> AgStatus {
    guard(|| {
        let t = handle(h)?;
        write_string(out, serialize_trajectory(t))
    })
}

/// Writes whether the trajectory is format-valid. When it is not and `reason` is
/// non-null, a description of the first violation is written there.
///
/// # Safety
/// `h` must be a live handle; `valid` must be writable; `reason` may be null.
#[no_mangle]
pub unsafe extern "C" fn ag_trajectory_check_format(
    h: *const AgTrajectory,
    valid: *mut bool,
    reason: *mut *mut c_char,
) -> AgStatus {
    guard(|| {
        let t = handle(h)?;
        let violation = format_violation(t);
        write_out(valid, violation.is_none(), "valid")?;
        if let (Some(v), false) = (violation, reason.is_null()) {
            write_string(reason, v.to_string())?;
        }
        debug_assert_eq!(check_format(t), format_violation(t).is_none());
        Ok(())
    })
}

/// Number of transcript segments.
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ag_trajectory_segment_count(
    h: *const AgTrajectory,
    out: *mut usize,
) -> AgStatus {
    guard(|| {
        let t = handle(h)?;
        write_out(out, t.segments.len(), "out")
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `h` must be null or a handle from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn ag_trajectory_free(h: *mut AgTrajectory) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Group-normalized advantages of `len` rewards into `out` (`len` slots).
///
/// # Safety
/// `rewards` must hold `len` values and `out` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn ag_group_advantages(
    rewards: *const f64,
    len: usize,
    std_floor: f64,
    out: *mut f64,
) -> AgStatus {
    guard(|| {
        let r = slice_arg(rewards, len, "rewards")?;
        let cfg = GrpoConfig {
            std_floor,
            ..GrpoConfig::default()
        };
        let a = group_advantages(r, &cfg)
            .map_err(|e| Failure(AgStatus::InvalidArgument, e.to_string()))?;
        if out.is_null() {
            return fail(AgStatus::NullPointer, "out is null");
        }
        ptr::copy_nonoverlapping(a.as_ptr(), out, a.len());
        Ok(())
    })
}

/// Negative sum of the masked log-probabilities and the number of masked tokens.
///
/// # Safety
/// `logprobs` and `mask` must each hold `len` values; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ag_sft_loss(
    logprobs: *const f64,
    mask: *const bool,
    len: usize,
    out_loss: *mut f64,
    out_tokens: *mut usize,
) -> AgStatus {
    guard(|| {
        let lp = slice_arg(logprobs, len, "logprobs")?;
        let m = slice_arg(mask, len, "mask")?;
        let l = sft_loss(lp, m).map_err(|e| Failure(AgStatus::InvalidArgument, e.to_string()))?;
        write_out(out_loss, l.loss, "out_loss")?;
        write_out(out_tokens, l.tokens, "out_tokens")
    })
}

/// Inception Score of a row-major `rows x cols` probability matrix.
///
/// # Safety
/// `probs` must hold `rows * cols` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ag_inception_score(
    probs: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> AgStatus {
    guard(|| {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(AgStatus::InvalidArgument, "rows * cols overflows".into()))?;
        let flat = slice_arg(probs, n, "probs")?;
        if cols == 0 {
            return fail(AgStatus::InvalidArgument, "cols must be positive");
        }
        let m = ProbMatrix::new(flat.chunks(cols).map(<[f64]>::to_vec).collect())
            .map_err(|e| Failure(AgStatus::InvalidArgument, e.to_string()))?;
        write_out(out, inception_score(&m), "out")
    })
}

/// Sum of positive consecutive quality-score gains.
///
/// # Safety
/// `scores` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ag_reflection_reward(
    scores: *const f64,
    len: usize,
    out: *mut f64,
) -> AgStatus {
    guard(|| {
        let s = slice_arg(scores, len, "scores")?;
        write_out(out, reflection_reward(s), "out")
    })
}

/// GRPO loss with diagnostics. `group_json` is `{rewards, tokens: [{new, old, ref,
/// mask}]}`; `config_json` may be null for defaults. Writes the result as JSON.
///
/// # Safety
/// String arguments must be NUL-terminated (or null where allowed); `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ag_grpo_loss_json(
    group_json: *const c_char,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> AgStatus {
    guard(|| {
        let group: GroupRollout = json_arg(group_json, "group_json")?;
        let cfg: GrpoConfig = json_or_default(config_json, "config_json")?;
        let loss = grpo_loss(&group, &cfg)
            .map_err(|e| Failure(AgStatus::InvalidArgument, e.to_string()))?;
        write_string(out, to_json(&loss)?)
    })
}

/// Reward breakdown of an episode (a bare episode or an episode record) using the
/// episode's own last quality score. `weights_json` may be null for defaults.
///
/// # Safety
/// String arguments must be NUL-terminated (or null where allowed); `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ag_score_episode_json(
    episode_json: *const c_char,
    weights_json: *const c_char,
    out: *mut *mut c_char,
) -> AgStatus {
    guard(|| {
        let text = str_arg(episode_json, "episode_json")?;
        let episode = match serde_json::from_str::<EpisodeRecord>(text) {
            Ok(r) => r.episode,
            Err(_) => serde_json::from_str::<EpisodeResult>(text)
                .map_err(|e| Failure(AgStatus::InvalidJson, format!("episode_json: {e}")))?,
        };
        let w: RewardWeights = json_or_default(weights_json, "weights_json")?;
        w.validate()
            .map_err(|e| Failure(AgStatus::InvalidArgument, e))?;
        let b = total_reward(&episode, &w, &TransitionTable::default(), TaskSource::Reuse)
            .map_err(|e| Failure(AgStatus::Backend, e.to_string()))?;
        write_string(out, to_json(&b)?)
    })
}

/// Builds one trajectory from a build spec. `backend_json` may be null for the default
/// simulated backend. Writes trajectory JSON.
///
/// # Safety
/// String arguments must be NUL-terminated (or null where allowed); `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ag_build_trajectory_json(
    spec_json: *const c_char,
    backend_json: *const c_char,
    out: *mut *mut c_char,
) -> AgStatus {
    guard(|| {
        let spec: BuildSpec = json_arg(spec_json, "spec_json")?;
        let backend = if backend_json.is_null() {
            BackendConfig::simulated(0, Default::default())
        } else {
            json_arg(backend_json, "backend_json")?
        };
        backend
            .validate()
            .map_err(|e| Failure(AgStatus::InvalidArgument, e.to_string()))?;
        let t = build_trajectory(&spec, &backend)
            .map_err(|e| Failure(AgStatus::Backend, e.to_string()))?;
        write_string(out, t.to_jsonl_line())
    })
}
