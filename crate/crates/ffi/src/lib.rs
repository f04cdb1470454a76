//! C interface to the demand and pricing kernels.
//!
//! Every call returns a [`CsStatus`]; on failure the message is available
//! from [`cs_last_error`] on the same thread. Objects cross the boundary as
//! opaque handles that must be released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use conductsim::demand::{
    consumer_surplus, DemandContext, DemandParams, MeanUtilities, NestStructure, SurplusPolicy, TasteDraws,
};
use conductsim::supply::{
    build_conduct, recover_marginal_costs, solve_equilibrium, ConductSpec, EquilibriumOptions, EquilibriumResult,
    Platform, Scenario, SpGrouping,
};
use conductsim::{Error, ErrorKind};
use nalgebra::DVector;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

/// One market: prices, demand primitives and seller labels.
pub struct CsMarket {
    demand: DemandContext,
    delta: MeanUtilities,
    firms: Vec<String>,
    platforms: Vec<Platform>,
    sp: Vec<bool>,
}

/// A solved price equilibrium.
pub struct CsEquilibrium {
    result: EquilibriumResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(e: &Error) -> CsStatus {
    match e.kind() {
        ErrorKind::Validation => CsStatus::Validation,
        ErrorKind::Numerical => CsStatus::Numerical,
        ErrorKind::Io => CsStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), CsStatus>) -> CsStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic");
            CsStatus::Panic
        }
    }
}

fn fail(e: Error) -> CsStatus {
    let status = status_of(&e);
    set_error(e.to_string());
    status
}

fn null(name: &str) -> CsStatus {
    set_error(format!("`{name}` is null"));
    CsStatus::NullPointer
}

unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], CsStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, needed: usize, name: &str) -> Result<&'a mut [f64], CsStatus> {
    if p.is_null() {
        return Err(null(name));
    }
    if len < needed {
        set_error(format!("`{name}` holds {len} values but {needed} are required"));
        return Err(CsStatus::InvalidArgument);
    }
    Ok(slice::from_raw_parts_mut(p, needed))
}

unsafe fn market<'a>(m: *const CsMarket) -> Result<&'a CsMarket, CsStatus> {
    m.as_ref().ok_or_else(|| null("market"))
}

impl CsMarket {
    fn conduct(&self, scenario: Scenario) -> Result<ConductSpec, CsStatus> {
        build_conduct(&self.firms, &self.platforms, &self.sp, scenario, SpGrouping::PerHost).map_err(fail)
    }
}

/// Builds a market handle.
///
/// `nests` are 1-based group labels, `firms` integer seller ids, and
/// `airbnb` / `smart_pricing` 0/1 flags; every array has `n` entries. The
/// handle is written to `out` and must be released with `cs_market_free`.
///
/// # Safety
/// All pointers must be valid for `n` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_market_new(
    n: usize,
    prices: *const f64,
    delta: *const f64,
    nests: *const u32,
    firms: *const u32,
    airbnb: *const u8,
    smart_pricing: *const u8,
    alpha: f64,
    sigma: f64,
    rho: f64,
    n_draws: usize,
    seed: u64,
    market_size: f64,
    out: *mut *mut CsMarket,
) -> CsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if n == 0 || n_draws == 0 {
            set_error("a market needs at least one product and one draw");
            return Err(CsStatus::InvalidArgument);
        }
        let prices = input(prices, n, "prices")?;
        let delta = input(delta, n, "delta")?;
        let nests = input(nests, n, "nests")?;
        let firms = input(firms, n, "firms")?;
        let airbnb = input(airbnb, n, "airbnb")?;
        let sp = input(smart_pricing, n, "smart_pricing")?;
        if !(market_size > 0.0) {
            set_error("market size must be positive");
            return Err(CsStatus::InvalidArgument);
        }
        let params = DemandParams::new(alpha, sigma, rho).map_err(fail)?;
        let nests = NestStructure::new(nests.iter().map(|&g| g as usize).collect()).map_err(fail)?;
        let delta = MeanUtilities::new(DVector::from_column_slice(delta)).map_err(fail)?;
        let handle = CsMarket {
            demand: DemandContext {
                prices: DVector::from_column_slice(prices),
                params,
                nests,
                draws: TasteDraws::new(n_draws, seed),
                market_size,
            },
            delta,
            firms: firms.iter().map(|f| f.to_string()).collect(),
            platforms: airbnb
                .iter()
                .map(|&a| if a != 0 { Platform::Airbnb } else { Platform::Hotel })
                .collect(),
            sp: sp.iter().map(|&s| s != 0).collect(),
        };
        // reject inconsistent labels up front
        handle.conduct(Scenario::Baseline)?;
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// # Safety
/// `m` must come from `cs_market_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_market_free(m: *mut CsMarket) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of products in the market, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live market handle.
#[no_mangle]
pub unsafe extern "C" fn cs_market_len(m: *const CsMarket) -> usize {
    m.as_ref().map_or(0, |m| m.demand.prices.len())
}

/// Writes the `n` market shares.
///
/// # Safety
/// `m` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cs_market_shares(m: *const CsMarket, out: *mut f64, len: usize) -> CsStatus {
    guard(|| {
        let m = market(m)?;
        let shares = m.demand.shares(&m.delta).map_err(fail)?;
        output(out, len, shares.len(), "out")?.copy_from_slice(shares.as_slice());
        Ok(())
    })
}

/// Writes the demand Jacobian `dq_j / dp_k` in row-major order (`n * n`).
///
/// # Safety
/// `m` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cs_market_jacobian(m: *const CsMarket, out: *mut f64, len: usize) -> CsStatus {
    guard(|| {
        let m = market(m)?;
        let jac = m.demand.jacobian(&m.delta).map_err(fail)?;
        let n = jac.nrows();
        let dst = output(out, len, n * n, "out")?;
        for j in 0..n {
            for k in 0..n {
                dst[j * n + k] = jac[(j, k)];
            }
        }
        Ok(())
    })
}

/// Consumer surplus of the whole market in price units.
///
/// # Safety
/// `m` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_market_consumer_surplus(m: *const CsMarket, out: *mut f64) -> CsStatus {
    guard(|| {
        let m = market(m)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cs = consumer_surplus(
            &m.delta,
            &m.demand.prices,
            &m.demand.params,
            &m.demand.nests,
            &m.demand.draws,
            SurplusPolicy::default(),
        )
        .map_err(fail)?;
        *out = cs.market_total(m.demand.market_size);
        Ok(())
    })
}

/// Marginal costs implied by baseline first-order conditions at the
/// market's prices; smart-pricing listings get zero.
///
/// # Safety
/// `m` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cs_market_recover_costs(m: *const CsMarket, out: *mut f64, len: usize) -> CsStatus {
    guard(|| {
        let m = market(m)?;
        let conduct = m.conduct(Scenario::Baseline)?;
        let q = m.demand.shares(&m.delta).map_err(fail)? * m.demand.market_size;
        let jac = m.demand.jacobian(&m.delta).map_err(fail)?;
        let costs = recover_marginal_costs(&m.demand.prices, &q, &jac, &conduct).map_err(fail)?;
        output(out, len, costs.mc.len(), "out")?.copy_from_slice(costs.mc.as_slice());
        Ok(())
    })
}

/// Solves prices given marginal costs. `self_preferencing` selects the
/// conduct: 0 for the baseline, nonzero for commission-maximizing smart
/// pricing.
///
/// # Safety
/// `m` must be a live handle, `mc` valid for `n` reads and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_market_solve(
    m: *const CsMarket,
    mc: *const f64,
    n: usize,
    self_preferencing: u8,
    out: *mut *mut CsEquilibrium,
) -> CsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = market(m)?;
        if n != m.demand.prices.len() {
            set_error(format!("expected {} marginal costs, got {n}", m.demand.prices.len()));
            return Err(CsStatus::InvalidArgument);
        }
        let mc = DVector::from_column_slice(input(mc, n, "mc")?);
        let scenario = if self_preferencing != 0 {
            Scenario::SelfPreferencing
        } else {
            Scenario::Baseline
        };
        let conduct = m.conduct(scenario)?;
        let result = solve_equilibrium(&mc, &conduct, &m.demand, &m.delta, None, &EquilibriumOptions::default())
            .map_err(fail)?;
        *out = Box::into_raw(Box::new(CsEquilibrium { result }));
        Ok(())
    })
}

/// # Safety
/// `e` must come from `cs_market_solve` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_equilibrium_free(e: *mut CsEquilibrium) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// # Safety
/// `e` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cs_equilibrium_prices(e: *const CsEquilibrium, out: *mut f64, len: usize) -> CsStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("equilibrium"))?;
        output(out, len, e.result.prices.len(), "out")?.copy_from_slice(e.result.prices.as_slice());
        Ok(())
    })
}

/// # Safety
/// `e` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cs_equilibrium_quantities(e: *const CsEquilibrium, out: *mut f64, len: usize) -> CsStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("equilibrium"))?;
        output(out, len, e.result.quantities.len(), "out")?.copy_from_slice(e.result.quantities.as_slice());
        Ok(())
    })
}

/// Platform commission revenue at the equilibrium, or NaN for a null handle.
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_equilibrium_commission(e: *const CsEquilibrium) -> f64 {
    e.as_ref().map_or(f64::NAN, |e| e.result.commission)
}

/// First-order residual of the equilibrium, or NaN for a null handle.
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_equilibrium_residual(e: *const CsEquilibrium) -> f64 {
    e.as_ref().map_or(f64::NAN, |e| e.result.foc_residual)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
