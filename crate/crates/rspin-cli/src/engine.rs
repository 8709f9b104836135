//! Command wiring: sizes jets to each request, drives both evaluation
//! pipelines, and produces the values, tables, suite reports, and symbol
//! dumps the binary serializes.

use rspin_core::correlators::{
    check_closed_sector, check_closed_strings, check_dispersive_limits, check_extended_strings,
    check_homogeneity_dispersive, check_homogeneity_extended, check_homogeneity_l0,
    check_homogeneity_phi0, check_open_sector, check_specialized_trrs, closed_gate,
    closed_potential_in_t, crosscheck, enumerate_insertions, extended_from_phi0,
    extract_correlator, lax_slice_identity, open_potential, ChangeOfVars, CorrelatorKey,
    CorrelatorTable, Sector, SuiteOutcome,
};
use rspin_core::hierarchy::{
    assemble_f0_closed, build_l0, build_l_dispersive, build_phi0, build_phi_dispersive,
    two_point_closed, v_coords, verify_dispersive_flows, verify_l0_flows, verify_phi0_string,
    verify_phi_dispersive_string,
};
use rspin_core::pdo::PDOp;
use rspin_core::scalar::{Rational, Scalar};
use rspin_core::series::{LinearRule, TSeries};
use rspin_core::zsymbol::ZSymbol;

use crate::config::RunConfig;
use crate::CliError;

/// A computed correlator ready for serialization.
pub struct ValueOut {
    pub key_text: String,
    pub num: String,
    pub den: String,
    pub lambda_exp: Option<i64>,
    pub provenance: &'static str,
}

/// One table entry: the key plus its serialized value.
pub struct TableRow {
    pub key: CorrelatorKey,
    pub num: String,
    pub den: String,
    pub lambda_exp: Option<i64>,
    pub provenance: &'static str,
}

/// Outcome of one verification suite.
pub struct SuiteReport {
    pub name: String,
    pub checked: usize,
    pub pass: bool,
    pub first_failure: Option<String>,
}

/// Split a quotient-ring value into decimal num/den strings plus the
/// lambda exponent when the value is a single non-rational monomial.
pub fn scalar_parts(v: &Scalar) -> Result<(String, String, Option<i64>), CliError> {
    if let Ok(q) = v.as_rational() {
        return Ok((q.numer_string(), q.denom_string(), None));
    }
    let span = 2 * (v.r() as usize + 1);
    let mut found: Option<(usize, &Rational)> = None;
    for k in 0..span {
        let c = v.coeff(k);
        if !c.is_zero() {
            if found.is_some() {
                return Err(CliError::Fail(format!(
                    "value {v} is not a rational multiple of a single lambda power"
                )));
            }
            found = Some((k, c));
        }
    }
    let (k, q) = found.expect("non-rational value has a nonzero coefficient");
    Ok((q.numer_string(), q.denom_string(), Some(k as i64)))
}

/// Smallest coupling-slot count serving the given insertions.
fn needed_flows(r: u32, ins: &[(u32, u32)]) -> u32 {
    ins.iter().map(|&(a, d)| a + r * d + 1).max().unwrap_or(0).max(r)
}

/// Resolve explicit cap overrides against the sizes a request needs.
fn sized(
    needed_deg: u32,
    needed_fl: u32,
    deg: Option<u32>,
    flows: Option<u32>,
) -> Result<(u32, u32), CliError> {
    let d = match deg {
        None => needed_deg,
        Some(d) if d >= needed_deg => d,
        Some(d) => {
            return Err(CliError::Cap(format!(
                "request needs a degree cap of at least {needed_deg}, got --deg {d}"
            )))
        }
    };
    let f = match flows {
        None => needed_fl,
        Some(f) if f >= needed_fl => f,
        Some(f) => {
            return Err(CliError::Cap(format!(
                "request needs at least {needed_fl} coupling slots, got --flows {f}"
            )))
        }
    };
    Ok((d, f))
}

/// Both pipelines at the given caps: the recursion table seeded with the
/// hierarchy's closed potential, plus the wave-function extended potential.
pub fn build_pipelines(
    r: u32,
    deg: u32,
    n_flows: u32,
) -> Result<(CorrelatorTable, TSeries<Scalar>), CliError> {
    let jet = build_l0(r, deg.max(1), n_flows.max(r))?;
    let phi = build_phi0(&jet)?;
    let vc = v_coords(r, (r + 2).max(6))?;
    let cov = ChangeOfVars::new(r, jet.n_flows() as usize);
    let f0c = closed_potential_in_t(&jet, &vc, &cov)?;
    let f_ext = extended_from_phi0(&phi, &cov)?;
    Ok((CorrelatorTable::new(r, f0c), f_ext))
}

/// Caps implied by the run configuration: potentials to total degree
/// max_insertions over every slot reachable within the depth cap.
fn config_caps(cfg: &RunConfig) -> (u32, u32) {
    let deg = (cfg.max_insertions as u32).max(1);
    let flows = cfg.r * (cfg.max_descendent_depth + 1);
    (deg, flows.max(cfg.r))
}

/// The open-sector dictionary value: (-r)^(m-1) times the extended
/// correlator with the boundary points replaced by top-twist insertions.
fn open_by_dictionary(
    table: &mut CorrelatorTable,
    r: u32,
    ins: &[(u32, u32)],
    m: u32,
) -> Result<Scalar, CliError> {
    if m == 0 {
        return Ok(Scalar::zero(r));
    }
    let mut ext_ins = ins.to_vec();
    for _ in 0..m {
        ext_ins.push((r - 1, 0));
    }
    let key = CorrelatorKey::extended(r, &ext_ins)?;
    let base = table.reconstruct_extended(&key)?;
    let factor = Rational::from_int(-(r as i64)).pow(m as i32 - 1);
    Ok(base.mul_rational(&factor))
}

/// Compute one correlator, cross-checking both pipelines where both apply.
#[allow(clippy::too_many_arguments)]
pub fn single_correlator(
    r: u32,
    sector: Sector,
    ins: &[(u32, u32)],
    minus_desc: u32,
    boundary: u32,
    deg: Option<u32>,
    flows: Option<u32>,
) -> Result<ValueOut, CliError> {
    let n = ins.len() as u32;
    let out = |key_text: String, v: Scalar, provenance: &'static str| -> Result<ValueOut, CliError> {
        let (num, den, lambda_exp) = scalar_parts(&v)?;
        Ok(ValueOut { key_text, num, den, lambda_exp, provenance })
    };
    match sector {
        Sector::Closed => {
            if minus_desc != 0 || boundary != 0 {
                return Err(CliError::Parse(
                    "closed keys take neither --minus-desc nor --boundary".into(),
                ));
            }
            let key = CorrelatorKey::closed(r, ins)?;
            let (d, fl) = sized(n, needed_flows(r, ins), deg, flows)?;
            let (mut table, _) = build_pipelines(r, d, fl)?;
            let v = table.closed_correlator(&key)?;
            out(key.to_string(), v, "hierarchy")
        }
        Sector::Extended => {
            if boundary != 0 {
                return Err(CliError::Parse("extended keys take no --boundary".into()));
            }
            let key = CorrelatorKey::extended(r, ins)?;
            let (d, fl) = sized(n, needed_flows(r, ins), deg, flows)?;
            let (mut table, f_ext) = build_pipelines(r, d, fl)?;
            if minus_desc > 0 {
                let v = table.extended_minus_descendent(minus_desc, ins)?;
                let text = format!("{key} with {minus_desc} descendents at -1");
                return out(text, v, "recursion");
            }
            let rec = table.reconstruct_extended(&key)?;
            let hier = extract_correlator(&f_ext, &key)?;
            if rec != hier {
                return Err(CliError::Fail(format!(
                    "pipelines disagree on {key}: recursion {rec}, hierarchy {hier}"
                )));
            }
            out(key.to_string(), rec, "both")
        }
        Sector::Open => {
            if minus_desc != 0 {
                return Err(CliError::Parse("open keys take no --minus-desc".into()));
            }
            let key = CorrelatorKey::open(r, ins, boundary)?;
            let (d, fl) = sized(n + boundary, needed_flows(r, ins).max(r), deg, flows)?;
            let (mut table, f_ext) = build_pipelines(r, d, fl)?;
            let f_o = open_potential(&f_ext)?;
            let hier = extract_correlator(&f_o, &key)?;
            let rec = open_by_dictionary(&mut table, r, ins, boundary)?;
            if rec != hier {
                return Err(CliError::Fail(format!(
                    "pipelines disagree on {key}: dictionary {rec}, potential {hier}"
                )));
            }
            out(key.to_string(), rec, "both")
        }
    }
}

/// All nonzero in-cap correlators of a sector, sorted by key.
///
/// Total insertions per key (including the implicit -1 of extended keys
/// and the boundary points of open keys) stay within max_insertions;
/// descendent depths stay within max_descendent_depth.
pub fn generate_table(cfg: &RunConfig, sector: Sector) -> Result<Vec<TableRow>, CliError> {
    let r = cfg.r;
    let max_n = cfg.max_insertions;
    let max_d = cfg.max_descendent_depth;
    let (deg, flows) = config_caps(cfg);
    let (mut table, f_ext) = build_pipelines(r, deg, flows)?;
    let n_slots = flows as usize;
    let mut rows: Vec<TableRow> = Vec::new();
    let mut push = |key: CorrelatorKey, v: Scalar, provenance: &'static str| -> Result<(), CliError> {
        if v.is_zero() {
            return Ok(());
        }
        let (num, den, lambda_exp) = scalar_parts(&v)?;
        rows.push(TableRow { key, num, den, lambda_exp, provenance });
        Ok(())
    };
    match sector {
        Sector::Closed => {
            for ins in enumerate_insertions(r, n_slots, max_n, max_d, max_d) {
                if ins.iter().any(|&(a, _)| a == r - 1) || !closed_gate(r, &ins) {
                    continue;
                }
                let key = CorrelatorKey::closed(r, &ins)?;
                let v = table.closed_correlator(&key)?;
                push(key, v, "hierarchy")?;
            }
        }
        Sector::Extended => {
            for ins in enumerate_insertions(r, n_slots, max_n.saturating_sub(1), max_d, max_d) {
                let key = CorrelatorKey::extended(r, &ins)?;
                let rec = table.reconstruct_extended(&key)?;
                let hier = extract_correlator(&f_ext, &key)?;
                table.record_hierarchy(&key, hier);
                push(key, rec, "both")?;
            }
            if let Some((k, a, b)) = table.poisoned() {
                return Err(CliError::Fail(format!(
                    "pipelines disagree on {k}: recursion {a}, hierarchy {b}"
                )));
            }
        }
        Sector::Open => {
            let f_o = open_potential(&f_ext)?;
            let mut ns_sets = vec![Vec::new()];
            ns_sets.extend(enumerate_insertions(
                r,
                n_slots,
                max_n.saturating_sub(1),
                max_d,
                max_d,
            ));
            for ins in ns_sets {
                for m in 1..=(max_n - ins.len()) as u32 {
                    let key = CorrelatorKey::open(r, &ins, m)?;
                    let hier = extract_correlator(&f_o, &key)?;
                    let rec = open_by_dictionary(&mut table, r, &ins, m)?;
                    if rec != hier {
                        return Err(CliError::Fail(format!(
                            "pipelines disagree on {key}: dictionary {rec}, potential {hier}"
                        )));
                    }
                    push(key, rec, "both")?;
                }
            }
        }
    }
    rows.sort_by(|x, y| x.key.cmp(&y.key));
    Ok(rows)
}

/// Coefficientwise agreement of two rational series up to total degree dmax.
fn agree_below(a: &TSeries<Rational>, b: &TSeries<Rational>, dmax: u32) -> bool {
    let half = |x: &TSeries<Rational>, y: &TSeries<Rational>| {
        x.iter()
            .filter(|(m, _)| m.degree() <= dmax)
            .all(|(m, c)| y.coefficient(m).map(|d| d == *c).unwrap_or(false))
    };
    half(a, b) && half(b, a)
}

fn suite_theorem(cfg: &RunConfig) -> Result<SuiteOutcome, CliError> {
    let (deg, flows) = config_caps(cfg);
    let (mut table, f_ext) = build_pipelines(cfg.r, deg, flows)?;
    let report = crosscheck(&mut table, &f_ext, cfg.max_insertions, cfg.max_descendent_depth)?;
    let mut out = SuiteOutcome::default();
    out.checked = report.keys;
    out.failures.extend(report.mismatches);
    if let Some((k, a, b)) = table.poisoned() {
        out.failures.push(format!("table poisoned at {k}: {a} vs {b}"));
    }
    Ok(out)
}

fn suite_strings(cfg: &RunConfig) -> Result<SuiteOutcome, CliError> {
    let (deg, flows) = config_caps(cfg);
    let jet = build_l0(cfg.r, deg, flows)?;
    let phi = build_phi0(&jet)?;
    let mut out = SuiteOutcome::default();
    out.checked += 1;
    if let Err(e) = verify_phi0_string(&phi) {
        out.failures.push(format!("wave function: {e}"));
    }
    let vc = v_coords(cfg.r, (cfg.r + 2).max(6))?;
    let cov = ChangeOfVars::new(cfg.r, jet.n_flows() as usize);
    let f0c = closed_potential_in_t(&jet, &vc, &cov)?;
    let mut table = CorrelatorTable::new(cfg.r, f0c);
    out.merge(check_extended_strings(
        &mut table,
        cfg.max_insertions,
        cfg.max_descendent_depth,
    )?);
    out.merge(check_closed_strings(
        &mut table,
        cfg.max_insertions,
        cfg.max_descendent_depth,
    )?);
    Ok(out)
}

fn suite_trr(cfg: &RunConfig) -> Result<SuiteOutcome, CliError> {
    let (deg, flows) = config_caps(cfg);
    let (mut table, _) = build_pipelines(cfg.r, deg, flows)?;
    check_specialized_trrs(&mut table, cfg.max_insertions, cfg.max_descendent_depth)
        .map_err(CliError::from)
}

fn suite_flows(cfg: &RunConfig, inject_fault: bool) -> Result<SuiteOutcome, CliError> {
    let r = cfg.r;
    let (deg, flows) = config_caps(cfg);
    let mut jet = build_l0(r, deg, flows)?;
    if inject_fault {
        jet.inject_fault(0);
    }
    let mut out = SuiteOutcome::default();
    verify_l0_flows(&jet)?;
    out.checked += jet.n_flows() as usize;
    // The r-th root recomposes to the symbol above the truncation tail.
    let sym = jet.symbol();
    let depth = -4 * r as i64;
    let root = sym.fractional_power(1, depth)?;
    let mut powered = root.clone();
    for _ in 1..r {
        powered = powered.mul(&root);
    }
    let diff = powered.sub(&sym);
    for (k, s) in diff.iter() {
        if *k >= depth + 2 * r as i64 {
            out.checked += 1;
            if !s.is_zero() {
                out.failures.push(format!("root power mismatch at z^{k}"));
            }
        }
    }
    // res(sym^(n/r)) is the mixed T_1 T_n derivative of the potential.
    let vc = v_coords(r, (r + 2).max(6))?;
    let f = assemble_f0_closed(&jet, &vc)?;
    let d1 = f.derivative(0)?;
    for n in 1..=jet.n_flows() {
        let lhs = jet.residue_power(n)?;
        let rhs = d1.derivative(n as usize - 1)?;
        out.checked += 1;
        if !agree_below(&lhs, &rhs, deg.saturating_sub(2)) {
            out.failures.push(format!("residue of power {n}/{r} is not d2F/dT1 dT{n}"));
        }
    }
    // Two-point functions are symmetric in their indices (both slots must
    // be primary flow indices; the second argument differentiates in the
    // coordinate v_{r-b} and is only defined below r).
    let hi = jet.n_flows().min(r - 1);
    for a in 1..=hi {
        for b in (a + 1)..=hi {
            let ab = two_point_closed(a, b, &jet, &vc)?;
            let ba = two_point_closed(b, a, &jet, &vc)?;
            out.checked += 1;
            if ab != ba {
                out.failures.push(format!("two-point series ({a},{b}) is asymmetric"));
            }
        }
    }
    Ok(out)
}

fn suite_homogeneity(cfg: &RunConfig) -> Result<SuiteOutcome, CliError> {
    let (deg, flows) = config_caps(cfg);
    let jet = build_l0(cfg.r, deg, flows)?;
    let phi = build_phi0(&jet)?;
    let cov = ChangeOfVars::new(cfg.r, jet.n_flows() as usize);
    let f_ext = extended_from_phi0(&phi, &cov)?;
    let mut out = check_homogeneity_l0(&jet);
    out.merge(check_homogeneity_phi0(&phi));
    out.merge(check_homogeneity_extended(&f_ext));
    Ok(out)
}

fn suite_ramond(cfg: &RunConfig) -> Result<SuiteOutcome, CliError> {
    let (deg, flows) = config_caps(cfg);
    let jet = build_l0(cfg.r, deg, flows)?;
    let vc = v_coords(cfg.r, (cfg.r + 2).max(6))?;
    let cov = ChangeOfVars::new(cfg.r, jet.n_flows() as usize);
    let f0c = closed_potential_in_t(&jet, &vc, &cov)?;
    check_closed_sector(&f0c).map_err(CliError::from)
}

fn suite_open(cfg: &RunConfig) -> Result<SuiteOutcome, CliError> {
    let (deg, flows) = config_caps(cfg);
    let (mut table, f_ext) = build_pipelines(cfg.r, deg, flows)?;
    check_open_sector(
        &mut table,
        &f_ext,
        cfg.max_insertions,
        cfg.max_insertions as u32,
        cfg.max_descendent_depth,
    )
    .map_err(CliError::from)
}

fn suite_lax(cfg: &RunConfig) -> Result<SuiteOutcome, CliError> {
    let deg = (cfg.max_insertions as u32).clamp(4, 8);
    lax_slice_identity(cfg.r, deg).map_err(CliError::from)
}

fn suite_dispersive(cfg: &RunConfig) -> Result<SuiteOutcome, CliError> {
    // Fixed shallow caps: dispersive jets grow quickly, and the shape,
    // limit, and dimension statements are already sharp at low degree.
    let r = cfg.r;
    let deg = 3;
    let flows = r + 1;
    let g_window = cfg.genus_max + 1;
    let lax = build_l_dispersive(r, deg, flows, g_window)?;
    let mut out = SuiteOutcome::default();
    out.checked += 1;
    if let Err(e) = verify_dispersive_flows(&lax, cfg.genus_max) {
        out.failures.push(format!("dispersive flows: {e}"));
    }
    let phi_d = build_phi_dispersive(&lax, g_window)?;
    out.checked += 1;
    if let Err(e) = verify_phi_dispersive_string(&phi_d) {
        out.failures.push(format!("dispersive wave function: {e}"));
    }
    let l0 = build_l0(r, deg, flows)?;
    let phi0 = build_phi0(&l0)?;
    out.merge(check_dispersive_limits(&lax, &l0, &phi_d, &phi0)?);
    out.merge(check_homogeneity_dispersive(&lax, &phi_d)?);
    Ok(out)
}

/// Run one named suite, folding any internal error into a failed report.
pub fn run_suite(name: &str, cfg: &RunConfig, inject_fault: bool) -> SuiteReport {
    let res = match name {
        "theorem" => suite_theorem(cfg),
        "strings" => suite_strings(cfg),
        "trr" => suite_trr(cfg),
        "flows" => suite_flows(cfg, inject_fault),
        "homogeneity" => suite_homogeneity(cfg),
        "ramond" => suite_ramond(cfg),
        "open" => suite_open(cfg),
        "lax" => suite_lax(cfg),
        "dispersive" => suite_dispersive(cfg),
        other => Err(CliError::Parse(format!("unknown suite {other:?}"))),
    };
    match res {
        Ok(o) => SuiteReport {
            name: name.into(),
            checked: o.checked,
            pass: o.ok(),
            first_failure: o.failures.into_iter().next(),
        },
        Err(e) => SuiteReport {
            name: name.into(),
            checked: 0,
            pass: false,
            first_failure: Some(e.to_string()),
        },
    }
}

/// Zero every coupling except T_1 in a dispersionless symbol.
fn restrict_symbol(sym: &ZSymbol) -> Result<ZSymbol, CliError> {
    let space = *sym.space();
    let rules: Vec<LinearRule<Rational>> = (1..space.count())
        .map(|var| LinearRule { var, scale: Rational::zero(), shift: None })
        .collect();
    let mut out = ZSymbol::zero(space, sym.cap());
    for (&k, s) in sym.iter() {
        let t = s.substitute_linear(space, &rules)?;
        if !t.is_zero() {
            out.add_term(k, &t);
        }
    }
    Ok(out)
}

/// Zero every coupling except T_1 in a dispersive operator.
fn restrict_operator(op: &PDOp) -> Result<PDOp, CliError> {
    use rspin_core::scalar::EpsScalar;
    let space = *op.space();
    let rules: Vec<LinearRule<EpsScalar>> = (1..space.count())
        .map(|var| LinearRule { var, scale: EpsScalar::zero(), shift: None })
        .collect();
    let mut out = PDOp::zero(space, op.cap());
    for (&k, s) in op.iter() {
        let t = s.substitute_linear(space, &rules)?;
        if !t.is_zero() {
            out.add_term(k, &t);
        }
    }
    Ok(out)
}

/// Canonical text of the Lax symbol, optionally restricted to the initial
/// slice T_2 = T_3 = ... = 0; the dispersive variant dumps the operator.
pub fn lax_dump(
    r: u32,
    deg: u32,
    flows: u32,
    dispersive: bool,
    genus_max: u32,
    slice_initial: bool,
) -> Result<String, CliError> {
    if dispersive {
        let lax = build_l_dispersive(r, deg.max(1), flows.max(r), genus_max + 1)?;
        let op = lax.operator();
        let op = if slice_initial { restrict_operator(&op)? } else { op };
        Ok(format!("{op}\n"))
    } else {
        let jet = build_l0(r, deg.max(1), flows.max(r))?;
        let sym = jet.symbol();
        let sym = if slice_initial { restrict_symbol(&sym)? } else { sym };
        Ok(format!("{sym}\n"))
    }
}
