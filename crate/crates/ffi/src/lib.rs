//! C ABI over the agentrec environment.
//!
//! Every function returns an [`AgentrecStatus`]. Results are JSON strings
//! written through `out` pointers and must be released with
//! [`agentrec_string_free`]. On failure, [`agentrec_last_error`] describes
//! the most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use agentrec::bundle::{prepare_tasks, Bundle};
use agentrec::episode::Ranking;
use agentrec::metrics::hit_rate_at_n;
use agentrec::service::{CreateSession, EnvConfig, Environment, ErrorCode, ServiceError, SubmitRanking};
use agentrec::store::UriStore;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentrecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    NotFound = 4,
    Conflict = 5,
    BudgetExhausted = 6,
    MalformedSpec = 7,
    MalformedRanking = 8,
    SessionClosed = 9,
    Internal = 10,
}

/// Opaque environment handle.
pub struct AgentrecEnv {
    inner: Environment,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes replaced"));
}

struct Failure(AgentrecStatus, String);

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        let status = match e.code {
            ErrorCode::NotFound => AgentrecStatus::NotFound,
            ErrorCode::Conflict => AgentrecStatus::Conflict,
            ErrorCode::BudgetExhausted => AgentrecStatus::BudgetExhausted,
            ErrorCode::MalformedSpec => AgentrecStatus::MalformedSpec,
            ErrorCode::MalformedRanking => AgentrecStatus::MalformedRanking,
            ErrorCode::SessionClosed => AgentrecStatus::SessionClosed,
            ErrorCode::Internal => AgentrecStatus::Internal,
        };
        Failure(status, e.message)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AgentrecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AgentrecStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AgentrecStatus::Internal
        }
    }
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure(AgentrecStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(AgentrecStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn env_ref<'a>(env: *const AgentrecEnv) -> Result<&'a Environment, Failure> {
    env.as_ref()
        .map(|e| &e.inner)
        .ok_or_else(|| Failure(AgentrecStatus::NullPointer, "env is null".into()))
}

unsafe fn write_json<T: serde::Serialize>(out: *mut *mut c_char, value: &T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(AgentrecStatus::NullPointer, "out is null".into()));
    }
    let json = serde_json::to_string(value).map_err(|e| Failure(AgentrecStatus::Internal, e.to_string()))?;
    *out = CString::new(json).expect("JSON has no nul bytes").into_raw();
    Ok(())
}

fn io(e: impl std::fmt::Display) -> Failure {
    Failure(AgentrecStatus::Io, e.to_string())
}

/// Loads a store directory and `n_bundles` task bundle directories.
///
/// # Safety
/// `store_dir` and each of the `n_bundles` entries of `bundle_dirs` must be
/// valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agentrec_env_open(
    store_dir: *const c_char,
    bundle_dirs: *const *const c_char,
    n_bundles: usize,
    budget: u32,
    out: *mut *mut AgentrecEnv,
) -> AgentrecStatus {
    guard(|| {
        if out.is_null() || (bundle_dirs.is_null() && n_bundles > 0) {
            return Err(Failure(AgentrecStatus::NullPointer, "null argument".into()));
        }
        if budget == 0 {
            return Err(Failure(AgentrecStatus::Internal, "budget must be at least 1".into()));
        }
        let store = UriStore::load_dir(&PathBuf::from(text(store_dir, "store_dir")?)).map_err(io)?;
        let mut bundles = Vec::with_capacity(n_bundles);
        for i in 0..n_bundles {
            let dir = text(*bundle_dirs.add(i), "bundle dir")?;
            bundles.push(Bundle::load(&PathBuf::from(dir)).map_err(io)?);
        }
        let tasks = prepare_tasks(&store, &bundles).map_err(io)?;
        let config = EnvConfig { budget, ..EnvConfig::default() };
        let env = AgentrecEnv {
            inner: Environment::new(Arc::new(store), tasks, config),
        };
        *out = Box::into_raw(Box::new(env));
        Ok(())
    })
}

/// # Safety
/// `env` must come from [`agentrec_env_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn agentrec_env_free(env: *mut AgentrecEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Writes the public task list as JSON.
///
/// # Safety
/// `env` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agentrec_tasks(env: *const AgentrecEnv, out: *mut *mut c_char) -> AgentrecStatus {
    guard(|| write_json(out, &env_ref(env)?.public_tasks()))
}

/// Opens a session; writes `{session_token, observation}`.
///
/// # Safety
/// Pointers must be valid; `agent` may be null.
#[no_mangle]
pub unsafe extern "C" fn agentrec_session_create(
    env: *const AgentrecEnv,
    run_id: *const c_char,
    task_id: *const c_char,
    agent: *const c_char,
    out: *mut *mut c_char,
) -> AgentrecStatus {
    guard(|| {
        let env = env_ref(env)?;
        let request = CreateSession {
            task_id: text(task_id, "task_id")?.to_string(),
            agent: if agent.is_null() { None } else { Some(text(agent, "agent")?.to_string()) },
        };
        let created = env.create_session(text(run_id, "run_id")?, &request)?;
        write_json(out, &created)
    })
}

/// Runs one query spec (JSON); writes the next observation.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn agentrec_session_query(
    env: *const AgentrecEnv,
    token: *const c_char,
    spec_json: *const c_char,
    out: *mut *mut c_char,
) -> AgentrecStatus {
    guard(|| {
        let obs = env_ref(env)?.query(text(token, "token")?, text(spec_json, "spec")?)?;
        write_json(out, &obs)
    })
}

/// Submits `{"ranking": [...]}`; writes the receipt.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn agentrec_session_submit(
    env: *const AgentrecEnv,
    token: *const c_char,
    ranking_json: *const c_char,
    out: *mut *mut c_char,
) -> AgentrecStatus {
    guard(|| {
        let env = env_ref(env)?;
        let request: SubmitRanking = serde_json::from_str(text(ranking_json, "ranking")?)
            .map_err(|e| Failure(AgentrecStatus::MalformedRanking, e.to_string()))?;
        let receipt = env.submit(text(token, "token")?, request.ranking)?;
        write_json(out, &receipt)
    })
}

/// Writes the metric report for a run.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn agentrec_run_metrics(
    env: *const AgentrecEnv,
    run_id: *const c_char,
    partial: bool,
    out: *mut *mut c_char,
) -> AgentrecStatus {
    guard(|| {
        let report = env_ref(env)?.metrics(text(run_id, "run_id")?, partial)?;
        write_json(out, &report)
    })
}

/// HR@n over `[{"ranking": [...] | null, "positive": "..."}]`.
///
/// # Safety
/// `rows_json` must be a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agentrec_hit_rate(rows_json: *const c_char, n: usize, out: *mut f64) -> AgentrecStatus {
    #[derive(serde::Deserialize)]
    struct Row {
        ranking: Option<Ranking>,
        positive: String,
    }
    guard(|| {
        if out.is_null() {
            return Err(Failure(AgentrecStatus::NullPointer, "out is null".into()));
        }
        let rows: Vec<Row> = serde_json::from_str(text(rows_json, "rows")?)
            .map_err(|e| Failure(AgentrecStatus::MalformedRanking, e.to_string()))?;
        let pairs: Vec<_> = rows.iter().map(|r| (r.ranking.as_ref(), r.positive.as_str())).collect();
        *out = hit_rate_at_n(&pairs, n).map_err(|e| Failure(AgentrecStatus::Internal, e.to_string()))?;
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn agentrec_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Last error message on this thread; empty after a success. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn agentrec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn agentrec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
