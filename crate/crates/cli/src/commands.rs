use std::path::Path;
use std::sync::Arc;

use ftap_core::detect::{
    floor_bisect, lower_floor_lp, market_polytope, na_check, na_closure_check, naflvr_report, FloorKind, NaVerdict,
    PolytopeMode, PolytopeStatus, ReportOptions,
};
use ftap_core::emery::{cauchy_limit, emery_distance, one_period_distance, CandidateFamily, CauchyOutcome};
use ftap_core::markets::{
    builtin_market, exact_mean, random_market, solve_epsilon, AssetSpec, BinaryLargeMarket, OnePeriodMarket,
    BINARY_DENSE_LIMIT, BUILTIN_MARKETS,
};
use ftap_core::portfolio::truncation_decompose;
use ftap_core::probspace::{random_tree, RandomTreeSpec, TreeDocument};
use ftap_core::{AdaptedProcess, ScenarioTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::output::{num, nums, Output};
use crate::{Cli, CliError, Command, FloorArg, MarketArg, ModeArg, Outcome};

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let mut out = Output::new(&cli.out_dir)?;
    let outcome = match &cli.command {
        Command::Counterexample { n_max, tol } => counterexample(&mut out, *n_max, *tol)?,
        Command::Binary { n, p, gate } => binary(&mut out, *n, p, gate.assert_no_arbitrage)?,
        Command::Scan { market, floor_bisect_tol, c_list, gate } => {
            scan(&mut out, market, *floor_bisect_tol, c_list, gate.assert_no_arbitrage)?
        }
        Command::Emery { n, p, family, tol, seed } => emery(&mut out, *n, p, family, *tol, *seed)?,
        Command::Decompose { input, threshold, seed } => decompose(&mut out, input.as_deref(), *threshold, *seed)?,
        Command::Polytope { market, delta, mode, floor, tol } => polytope(&mut out, market, *delta, *mode, *floor, *tol)?,
    };
    for path in out.written() {
        println!("wrote {}", path.display());
    }
    Ok(outcome)
}

fn positive(name: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::Input(format!("--{name} must be a positive number, got {x}")))
    }
}

fn counterexample(out: &mut Output, n_max: usize, tol: f64) -> Result<Outcome, CliError> {
    positive("tol", tol)?;
    if n_max == 0 {
        return Err(CliError::Input("--n-max must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for n in 1..=n_max {
        let root = solve_epsilon(n, tol)?;
        let mean = exact_mean(n, root.eps)?;
        rows.push(vec![n.to_string(), num(root.eps), num(root.residual), num(mean)]);
    }
    let residual = format!("residual[tol={tol:e}]");
    out.csv("counterexample.csv", &["n", "eps_n[omega]", &residual, "mean_S1[exact]"], &rows)?;
    println!("{n_max} cut points solved");
    Ok(Outcome::Clean)
}

fn parse_probs(spec: &str, n: usize) -> Result<BinaryLargeMarket, CliError> {
    if n == 0 {
        return Err(CliError::Input("--n must be at least 1".into()));
    }
    let market = if let Some(r) = spec.strip_prefix("geometric:") {
        let ratio: f64 = r.parse().map_err(|_| CliError::Input(format!("--p: cannot parse ratio {r:?}")))?;
        BinaryLargeMarket::geometric(n, ratio)
    } else {
        let probs = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::Input(format!("--p: cannot parse probability {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if probs.len() != n {
            return Err(CliError::Input(format!("--p lists {} probabilities but --n is {n}", probs.len())));
        }
        BinaryLargeMarket::new(probs)
    };
    market.map_err(|e| CliError::Input(format!("--p: {e}")))
}

fn verdict_label(v: &NaVerdict) -> &'static str {
    if v.holds() {
        "pass"
    } else {
        "fail"
    }
}

fn binary(out: &mut Output, n: usize, p: &str, gate: bool) -> Result<Outcome, CliError> {
    let b = parse_probs(p, n)?;
    let dense = n <= BINARY_DENSE_LIMIT;
    let product = if dense { Some(b.to_market()?) } else { None };
    let mut rows = Vec::new();
    let mut small_ok = true;
    for k in 1..=n {
        let d = one_period_distance(&[-2.0, 0.0], b.marginal_tree(k)?.atom_probs())?;
        // Beyond the dense limit, independence reduces NA to per-asset checks.
        let verdict = match &product {
            Some(m) => na_check(m, &(0..k).collect::<Vec<_>>())?,
            None => na_check(&marginal_market(&b, k)?, &[0])?,
        };
        small_ok &= verdict.holds();
        rows.push(vec![k.to_string(), num(b.p(k)), num(d), verdict_label(&verdict).into()]);
    }
    out.csv("binary.csv", &["n", "p_n[prob]", "d_S(S^n;J)[exact one-period]", "na_small[assets 1..n]"], &rows)?;

    let (closure, floors) = match &product {
        Some(m) => {
            let closure = na_closure_check(m, m.limit_candidates())?;
            let gens: Vec<&[f64]> = m.assets().iter().map(|a| a.payoff.as_slice()).collect();
            let lower = lower_floor_lp(m.probs(), &gens, PolytopeMode::Equality)?.unwrap_or(0.0);
            let band = if m.num_atoms() <= 256 {
                Some(floor_bisect(m.probs(), &gens, PolytopeMode::Equality, FloorKind::Band, 1e-9)?)
            } else {
                None
            };
            (closure, json!({ "lower": lower, "band": band, "bisect_tol": 1e-9 }))
        }
        None => {
            let m = marginal_market(&b, n)?.with_limit_candidates(vec![unit_candidate(2)])?;
            (na_closure_check(&m, m.limit_candidates())?, json!(null))
        }
    };
    let summary = json!({
        "n": n,
        "p": b.probs(),
        "analysis": if dense { "product" } else { "marginal" },
        "na_small": small_ok,
        "na_closure": { "fails": closure.fails, "witness": closure.witness, "certificate": closure.augmented.certificate() },
        "martingale_floor": floors,
    });
    out.json("binary.json", &summary)?;
    println!(
        "NA-small {} for all n; NA-in-closure {}",
        if small_ok { "passes" } else { "fails" },
        if closure.fails { "fails (witness J)" } else { "holds" }
    );
    if gate && (!small_ok || closure.fails) {
        return Ok(Outcome::ArbitrageFound("binary market admits an arbitrage in the closure".into()));
    }
    Ok(Outcome::Clean)
}

fn unit_candidate(atoms: usize) -> AssetSpec {
    AssetSpec { label: "J".into(), payoff: vec![1.0; atoms] }
}

fn marginal_market(b: &BinaryLargeMarket, k: usize) -> Result<OnePeriodMarket, CliError> {
    let asset = AssetSpec { label: format!("S{k}"), payoff: vec![-1.0, 1.0] };
    Ok(OnePeriodMarket::new(format!("binary-marginal-{k}"), vec![b.p(k), 1.0 - b.p(k)], vec![asset], Vec::new())?)
}

fn load_market(arg: &MarketArg) -> Result<OnePeriodMarket, CliError> {
    if BUILTIN_MARKETS.contains(&arg.market.as_str()) {
        return Ok(builtin_market(&arg.market)?);
    }
    if arg.market == "random" {
        let mut rng = ChaCha8Rng::seed_from_u64(arg.seed);
        return Ok(random_market(&mut rng, 8, 3));
    }
    let text = std::fs::read_to_string(&arg.market).map_err(|e| {
        CliError::Input(format!(
            "cannot read market config {}: {e} (built-in markets: {}, or `random`)",
            arg.market,
            BUILTIN_MARKETS.join(", ")
        ))
    })?;
    OnePeriodMarket::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", arg.market)))
}

fn scan(out: &mut Output, arg: &MarketArg, bisect_tol: f64, c_list: &[f64], gate: bool) -> Result<Outcome, CliError> {
    positive("floor-bisect-tol", bisect_tol)?;
    if c_list.is_empty() || c_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Input("--c-list must be a nonempty strictly increasing list".into()));
    }
    let market = load_market(arg)?;
    let opts = ReportOptions { c_list: c_list.to_vec(), bisect_tol, ..ReportOptions::default() };
    let report = naflvr_report(&market, &opts)?;

    let verdicts: Vec<Vec<String>> = report
        .na_small
        .iter()
        .map(|s| {
            let label = s.assets.iter().map(|a| market.assets()[*a].label.clone()).collect::<Vec<_>>().join(";");
            let (min, gain) = s.verdict.certificate().map_or((String::new(), String::new()), |c| (num(c.min_payoff), num(c.gain_prob)));
            vec!["na-small".into(), label, verdict_label(&s.verdict).into(), min, gain]
        })
        .chain(std::iter::once({
            let c = report.na_closure.augmented.certificate();
            vec![
                "na-closure".into(),
                report.na_closure.witness.clone().unwrap_or_default(),
                if report.na_closure.fails { "fail" } else { "pass" }.into(),
                c.map_or(String::new(), |c| num(c.min_payoff)),
                c.map_or(String::new(), |c| num(c.gain_prob)),
            ]
        }))
        .collect();
    out.csv("scan_verdicts.csv", &["leg", "assets", "verdict", "min_payoff[currency]", "gain_prob[prob]"], &verdicts)?;

    let profile: Vec<Vec<String>> = report
        .nupbr
        .points
        .iter()
        .map(|p| vec![num(p.c), num(p.prob), if p.exact { "exact" } else { "heuristic" }.into(), nums(&p.theta)])
        .collect();
    out.csv("scan_profile.csv", &["c[currency]", "max_prob[prob]", "method", "theta"], &profile)?;

    let mut certs = Vec::new();
    for s in &report.na_small {
        if let Some(c) = s.verdict.certificate() {
            certs.push(vec!["na-small".into(), c.labels.join(";"), nums(&c.theta), nums(&c.payoff)]);
        }
    }
    if let Some(c) = report.na_closure.augmented.certificate() {
        certs.push(vec!["na-closure".into(), c.labels.join(";"), nums(&c.theta), nums(&c.payoff)]);
    }
    if let Some(w) = &report.nupbr.aa1 {
        certs.push(vec!["aa1".into(), String::new(), nums(&w.theta), String::new()]);
    }
    out.csv("scan_certificates.csv", &["leg", "labels", "theta", "payoff[currency per atom]"], &certs)?;

    let mut floors = Vec::new();
    for mode in [PolytopeMode::Inequality, PolytopeMode::Equality] {
        let gens: Vec<&[f64]> = market.assets().iter().map(|a| a.payoff.as_slice()).collect();
        let lower = lower_floor_lp(market.probs(), &gens, mode)?.unwrap_or(0.0);
        floors.push(vec![mode_name(mode).into(), "lower".into(), num(lower.min(1.0)), "lp".into()]);
        if market.num_atoms() <= opts.band_floor_atoms {
            let band = floor_bisect(market.probs(), &gens, mode, FloorKind::Band, bisect_tol)?;
            floors.push(vec![mode_name(mode).into(), "band".into(), num(band), format!("bisection tol={bisect_tol:e}")]);
        }
    }
    out.csv("scan_polytope.csv", &["mode", "floor", "delta_star[density ratio]", "method"], &floors)?;
    out.json("scan.json", &report)?;

    for r in &report.reasons {
        println!("{r}");
    }
    println!("NAFLVR {}", if report.naflvr { "holds" } else { "fails" });
    if gate && !report.naflvr {
        let leg = report.failing.as_ref().map_or("unknown", |f| f.leg.as_str());
        return Ok(Outcome::ArbitrageFound(format!("{} fails NAFLVR on leg {leg}", market.name())));
    }
    Ok(Outcome::Clean)
}

fn mode_name(m: PolytopeMode) -> &'static str {
    match m {
        PolytopeMode::Inequality => "inequality",
        PolytopeMode::Equality => "equality",
    }
}

fn emery(out: &mut Output, n: usize, p: &str, family: &str, tol: f64, seed: u64) -> Result<Outcome, CliError> {
    positive("tol", tol)?;
    if n < 2 {
        return Err(CliError::Input("--n must be at least 2 to compare successive assets".into()));
    }
    if n > BINARY_DENSE_LIMIT {
        return Err(CliError::Input(format!("--n {n} exceeds the product-tree limit {BINARY_DENSE_LIMIT}")));
    }
    let b = parse_probs(p, n)?;
    let bt = b.build_tree()?;
    let tree = bt.tree.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = match family {
        "greedy" => CandidateFamily::new(tree.clone()),
        "enum" => CandidateFamily::enumerated(tree.clone())?,
        other => match other.strip_prefix("random:").and_then(|k| k.parse::<usize>().ok()) {
            Some(k) => CandidateFamily::new(tree.clone()).with_random(k, &mut rng),
            None => return Err(CliError::Input(format!("--family must be greedy, enum or random:<count>, got {other:?}"))),
        },
    };
    let family_for = |x: &AdaptedProcess, y: &AdaptedProcess| -> Result<CandidateFamily, CliError> {
        if family == "greedy" {
            Ok(base.clone().with_sign_greedy(&x.sub(y)?)?)
        } else {
            Ok(base.clone())
        }
    };
    let mut rows = Vec::new();
    let mut pairs: Vec<(String, &AdaptedProcess, &AdaptedProcess)> = Vec::new();
    for k in 0..n - 1 {
        pairs.push((format!("S{}-S{}", k + 1, k + 2), &bt.prices[k], &bt.prices[k + 1]));
    }
    for k in 0..n {
        pairs.push((format!("S{}-J", k + 1), &bt.prices[k], &bt.unit_jump));
    }
    for (label, x, y) in &pairs {
        let fam = family_for(x, y)?;
        let est = emery_distance(x, y, &fam)?;
        rows.push(vec![label.clone(), num(est.value), format!("{}#{}", est.provenance, est.index), est.family]);
    }
    out.csv("emery.csv", &["pair", "estimate[lower bound, truncated at 1]", "strategy", "family"], &rows)?;

    let mut cauchy_family = base.clone();
    if family == "greedy" {
        for w in bt.prices.windows(2) {
            cauchy_family = cauchy_family.with_sign_greedy(&w[0].sub(&w[1])?)?;
        }
    }
    let summary = match cauchy_limit(&bt.prices, &cauchy_family, tol, Some(&bt.unit_jump))? {
        CauchyOutcome::Limit { residuals, max_residual, successive, .. } => json!({
            "verdict": "cauchy (heuristic)", "limit": "J", "residuals": residuals,
            "max_residual": max_residual, "successive": successive, "tol": tol,
        }),
        CauchyOutcome::NotCauchy { successive } => json!({ "verdict": "not-cauchy", "successive": successive, "tol": tol }),
    };
    println!("Cauchy verdict: {}", summary["verdict"].as_str().unwrap_or_default());
    out.json("emery.json", &summary)?;
    Ok(Outcome::Clean)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecomposeInput {
    tree: TreeDocument,
    values: Vec<f64>,
}

fn decompose(out: &mut Output, input: Option<&Path>, threshold: f64, seed: u64) -> Result<Outcome, CliError> {
    positive("threshold", threshold)?;
    let x = match input {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            let doc: DecomposeInput = serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let tree = Arc::new(ScenarioTree::from_document(&doc.tree).map_err(|e| CliError::Input(e.to_string()))?);
            AdaptedProcess::new(tree, doc.values).map_err(|e| CliError::Input(format!("values: {e}")))?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tree = random_tree(&mut rng, RandomTreeSpec::default());
            let mut values = vec![0.0; tree.num_nodes()];
            for v in tree.top_down() {
                if let Some(u) = tree.parent(v) {
                    values[v] = values[u] + rng.gen_range(-2.0..2.0);
                }
            }
            AdaptedProcess::new(tree, values)?
        }
    };
    let d = truncation_decompose(&x, threshold)?;
    let tree = x.tree();
    let rows: Vec<Vec<String>> = tree
        .top_down()
        .map(|v| {
            vec![
                v.to_string(),
                tree.parent(v).map_or(String::new(), |u| u.to_string()),
                tree.depth(v).to_string(),
                num(x.value(v)),
                num(d.b.value(v)),
                num(d.m.value(v)),
                num(d.big.value(v)),
            ]
        })
        .collect();
    let big = format!("big[|dX|>{threshold}]");
    out.csv("decompose.csv", &["node", "parent", "depth", "x", "b[predictable]", "m[martingale]", &big], &rows)?;
    let summary = json!({
        "threshold": threshold,
        "reconstruction_error": d.reconstruction_error(&x),
        "martingale_residual": d.martingale_residual(),
        "max_martingale_jump": d.max_martingale_jump(),
        "tree": tree.to_document(),
    });
    out.json("decompose.json", &summary)?;
    println!("reconstruction error {:e}, martingale residual {:e}", d.reconstruction_error(&x), d.martingale_residual());
    Ok(Outcome::Clean)
}

fn polytope(out: &mut Output, arg: &MarketArg, delta: f64, mode: ModeArg, floor: FloorArg, tol: f64) -> Result<Outcome, CliError> {
    positive("tol", tol)?;
    if !(0.0..=1.0).contains(&delta) {
        return Err(CliError::Input(format!("--delta must lie in [0, 1], got {delta}")));
    }
    let market = load_market(arg)?;
    let mode = match mode {
        ModeArg::Inequality => PolytopeMode::Inequality,
        ModeArg::Equality => PolytopeMode::Equality,
    };
    let floor = match floor {
        FloorArg::Lower => FloorKind::Lower,
        FloorArg::Band => FloorKind::Band,
    };
    if floor == FloorKind::Band && market.num_atoms() > 256 {
        return Err(CliError::Input(format!("--floor band is limited to 256 atoms, market has {}", market.num_atoms())));
    }
    let poly = market_polytope(&market, delta, mode, floor, tol)?;
    let rows: Vec<Vec<String>> = match &poly.status {
        PolytopeStatus::Feasible { q } => (0..q.len())
            .map(|a| vec![a.to_string(), num(market.probs()[a]), num(q[a]), num(q[a] / market.probs()[a])])
            .collect(),
        PolytopeStatus::Infeasible { .. } => Vec::new(),
    };
    out.csv("polytope.csv", &["atom", "p[prob]", "q[prob]", "density[q/p]"], &rows)?;
    out.json("polytope.json", &poly)?;
    let status = if poly.witness().is_some() { "feasible" } else { "infeasible" };
    println!("{status} at floor {delta}; delta* = {} (bisection tol {tol:e})", num(poly.delta_star));
    Ok(Outcome::Clean)
}
