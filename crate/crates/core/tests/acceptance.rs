//! Acceptance criteria for the convergence studies. Runs the ladders
//! `h = 2^-k, k = 2..6`, fits rates over `k = 3..6` and prints one
//! PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

use dilab_core::fem::{
    solve_krylov, BlockCsr, KrylovMethod, Preconditioner, QuadraturePlan, QuadratureRule, ScalarField, SolverOptions,
};
use dilab_core::geometry::projector;
use dilab_core::helmholtz::{assemble_system_matrix, DiffuseProblemConfig, DiscreteGeometry, NormalSource};
use dilab_core::mesh::{bisect_all, build_box_mesh, refine_to_band, BoxBounds, RefineOptions, RefinementBand};
use dilab_core::metrics::{observed_order, InterfaceWeight};
use dilab_core::sdf::{build_bvh, mesh_signed_distance, triangulate_torus};
use dilab_core::study::{fit_orders, run_study, Experiment, ExperimentRecord, OrderRow, StudyConfig};
use dilab_core::{InterfaceProfile, Mat3, TorusGeometry, Vec3};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

const RATE_TOL: f64 = 0.35;

struct Ladder {
    records: Vec<ExperimentRecord>,
    orders: Vec<OrderRow>,
    seconds: f64,
}

impl Ladder {
    fn order(&self, p: u32, normal: Option<NormalSource>, error: &str) -> Result<&OrderRow, String> {
        self.orders
            .iter()
            .find(|r| r.relation_p == p && r.normal_source == normal && r.error == error)
            .ok_or_else(|| format!("no fit for p = {p} {error}"))
    }

    /// Records of one `(p, normal)` ladder, coarse to fine.
    fn runs(&self, p: u32, normal: Option<NormalSource>) -> Vec<&ExperimentRecord> {
        let mut runs: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.relation_p == p && r.normal_source == normal)
            .collect();
        runs.sort_by(|a, b| b.h.total_cmp(&a.h));
        runs
    }
}

#[derive(Default)]
struct Studies {
    cache: HashMap<(Experiment, u32, Vec<NormalSource>), Ladder>,
}

impl Studies {
    fn ladder(&mut self, experiment: Experiment, p: u32, normals: &[NormalSource]) -> Result<&Ladder, String> {
        let key = (experiment, p, normals.to_vec());
        if !self.cache.contains_key(&key) {
            let cfg = StudyConfig {
                relations: vec![p],
                normal_sources: if normals.is_empty() { vec![NormalSource::A] } else { normals.to_vec() },
                ..StudyConfig::default()
            };
            let start = Instant::now();
            let records = run_study(&cfg, &[experiment]).map_err(|e| e.to_string())?;
            let seconds = start.elapsed().as_secs_f64();
            let orders = fit_orders(&records);
            for r in &records {
                println!(
                    "    {} p={} h={:.6} eps={:.6} normal={} errors={:?} iterations={}",
                    r.experiment,
                    r.relation_p,
                    r.h,
                    r.epsilon,
                    r.normal_source.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
                    r.errors.entries().iter().filter_map(|(n, v)| v.map(|v| format!("{n}={v:.4e}"))).collect::<Vec<_>>(),
                    r.iterations
                );
            }
            self.cache.insert(key.clone(), Ladder { records, orders, seconds });
        }
        Ok(&self.cache[&key])
    }
}

type Check = Result<String, String>;
type Criterion = (&'static str, Box<dyn FnOnce(&mut Studies) -> Check>);

fn require(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn coarea_sanity() -> Check {
    let start = Instant::now();
    let g = TorusGeometry::benchmark();
    let profile = InterfaceProfile::for_torus(0.125, &g).map_err(|e| e.to_string())?;
    let band = RefinementBand::new(&g, profile, 1.0 / 32.0).map_err(|e| e.to_string())?;
    let mesh = refine_to_band(build_box_mesh(BoxBounds::cube(2.0), 0.5).unwrap(), &band, RefineOptions::default())
        .map_err(|e| e.to_string())?;
    let rho: Vec<f64> = mesh.vertices().iter().map(|x| g.signed_distance(x)).collect();
    let plan = QuadraturePlan::near_interface(&mesh, &rho, 3.0 * 0.125, 5, 2);
    let total = InterfaceWeight { torus: &g, profile: &profile }.total(&mesh, &plan);
    let area = 4.0 * std::f64::consts::PI * std::f64::consts::PI * 0.5;
    let rel = (total - area).abs() / area;
    let secs = start.elapsed().as_secs_f64();
    require(
        rel <= 0.02 && secs < 60.0,
        format!("int W = {total:.5}, area = {area:.5}, relative deviation {rel:.2e}, {secs:.1} s"),
    )
}

fn e1_rates(studies: &mut Studies) -> Check {
    let ladder = studies.ladder(Experiment::E1, 2, &[])?;
    let rho = ladder.order(2, None, "err_rho")?.order_eps;
    let phi = ladder.order(2, None, "err_phi")?.order_eps;
    require(
        rho >= 1.8 && within(phi, rho - 1.0, RATE_TOL) && ladder.seconds < 600.0,
        format!("rho slope {rho:.3}, phi slope {phi:.3}, {:.0} s", ladder.seconds),
    )
}

fn e1_normal_a(studies: &mut Studies) -> Check {
    let slope = studies.ladder(Experiment::E1, 2, &[])?.order(2, None, "err_nu_A")?.order_eps;
    require(slope >= 1.7, format!("nu_A slope {slope:.3} at p = 2"))
}

fn e1_normal_b(studies: &mut Studies) -> Check {
    let mut slopes = Vec::new();
    for p in [2, 3, 5] {
        slopes.push(studies.ladder(Experiment::E1, p, &[])?.order(p, None, "err_nu_B")?.order_eps);
    }
    require(
        slopes[0] <= 0.3 && within(slopes[1], 1.0, 0.4) && slopes[2] >= 1.6,
        format!("nu_B slopes p=2 {:.3}, p=3 {:.3}, p=5 {:.3}", slopes[0], slopes[1], slopes[2]),
    )
}

fn e2_rates(studies: &mut Studies) -> Check {
    let analytic = Some(NormalSource::Analytic);
    let (eps2, h2, secs2) = {
        let l = studies.ladder(Experiment::E2, 2, &[])?;
        let row = l.order(2, analytic, "err_u")?;
        (row.order_eps, row.order_h, l.seconds)
    };
    let (h3, secs3) = {
        let l = studies.ladder(Experiment::E2, 3, &[])?;
        (l.order(3, analytic, "err_u")?.order_h, l.seconds)
    };
    let secs = secs2 + secs3;
    require(
        within(eps2, 2.0, RATE_TOL) && h3 <= h2 + 0.3 && secs < 1800.0,
        format!("p=2 slope vs eps {eps2:.3}, vs h {h2:.3}; p=3 slope vs h {h3:.3}; {secs:.0} s"),
    )
}

fn e3_normal_a(studies: &mut Studies) -> Check {
    let e2: Vec<f64> = studies
        .ladder(Experiment::E2, 2, &[])?
        .runs(2, Some(NormalSource::Analytic))
        .iter()
        .map(|r| r.errors.err_u.unwrap_or(f64::NAN))
        .collect();
    let l = studies.ladder(Experiment::E3, 2, &[NormalSource::A, NormalSource::B])?;
    let slope = l.order(2, Some(NormalSource::A), "err_u")?.order_eps;
    let e3: Vec<f64> = l.runs(2, Some(NormalSource::A)).iter().map(|r| r.errors.err_u.unwrap_or(f64::NAN)).collect();
    let ratios: Vec<f64> = e3.iter().zip(&e2).map(|(a, b)| a / b).collect();
    let close = ratios.len() == e2.len() && ratios.iter().all(|r| (0.5..=2.0).contains(r));
    require(
        slope >= 1.7 && close,
        format!("slope {slope:.3}, E3/E2 ratios {:?}", ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()),
    )
}

fn e3_normal_b(studies: &mut Studies) -> Check {
    let b = Some(NormalSource::B);
    let ratios = studies
        .ladder(Experiment::E3, 2, &[NormalSource::A, NormalSource::B])?
        .order(2, b, "err_u")?
        .ratios
        .clone();
    let slope5 = studies.ladder(Experiment::E3, 5, &[NormalSource::B])?.order(5, b, "err_u")?.order_eps;
    require(
        ratios.iter().all(|r| (0.6..=1.6).contains(r)) && slope5 >= 1.6,
        format!(
            "p=2 level ratios {:?}, p=5 slope {slope5:.3}",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn tangentiality(studies: &mut Studies) -> Check {
    let e2 = studies.ladder(Experiment::E2, 2, &[])?.order(2, Some(NormalSource::Analytic), "err_un")?.order_eps;
    let e3 = studies
        .ladder(Experiment::E3, 2, &[NormalSource::A, NormalSource::B])?
        .order(2, Some(NormalSource::A), "err_un")?
        .order_eps;
    require(e2 >= 1.7 && e3 >= 1.7, format!("U_h.nu slopes E2 {e2:.3}, E3-A {e3:.3}"))
}

fn property_suites() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = TorusGeometry::benchmark();
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    // Projector algebra.
    let tube: Vec<Vec3> = (0..500)
        .map(|_| {
            let y = g.parametric_point(rng.gen::<f64>() * 6.3, rng.gen::<f64>() * 6.3);
            y + g.normal(&y).unwrap() * rng.gen_range(-0.4..0.4)
        })
        .collect();
    check(
        "projector",
        tube.iter().all(|x| {
            let nu = g.normal(x).unwrap();
            let pi = projector(&nu).unwrap();
            (pi * pi - pi).amax() < 1e-14 && (pi - pi.transpose()).amax() < 1e-15 && (pi * nu).norm() < 1e-14
        }),
    );

    // Mesh conformity and box volume.
    let mut mesh = build_box_mesh(BoxBounds::cube(2.0), 1.0).unwrap();
    for _ in 0..3 {
        mesh = bisect_all(mesh, &g).unwrap();
        check("uniform conformity", mesh.audit().is_ok());
    }
    let profile = InterfaceProfile::for_torus(0.2, &g).unwrap();
    let band = RefinementBand::new(&g, profile, 0.125).unwrap();
    let band_mesh = refine_to_band(build_box_mesh(BoxBounds::cube(2.0), 0.5).unwrap(), &band, RefineOptions::default()).unwrap();
    check("band conformity", band_mesh.audit().is_ok());
    check("volume 64", (band_mesh.total_volume() - 64.0).abs() < 1e-10);

    // Quadrature exactness on the reference simplex.
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    for rule in [QuadratureRule::four_point(), QuadratureRule::fourteen_point(), QuadratureRule::of_degree(8)] {
        for i in 0..=rule.degree() {
            for j in 0..=rule.degree() - i {
                for k in 0..=rule.degree() - i - j {
                    let exact = fact(i) * fact(j) * fact(k) / fact(i + j + k + 3);
                    let approx = rule
                        .iter()
                        .map(|(b, w)| w * b[1].powi(i as i32) * b[2].powi(j as i32) * b[3].powi(k as i32))
                        .sum::<f64>()
                        / 6.0;
                    check("quadrature exactness", (approx - exact).abs() < 1e-14);
                }
            }
        }
    }

    // BVH against a linear scan.
    let bvh = build_bvh(&triangulate_torus(&g, 0.05).unwrap());
    check(
        "bvh exactness",
        (0..500).all(|_| {
            let x = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let tree = bvh.nearest(&x).unwrap();
            bvh.nearest_linear(&x) == Some((tree.triangle, tree.distance))
        }),
    );

    // SPD of the assembled system on a coarse mesh.
    let coarse_profile = InterfaceProfile::for_torus(0.3, &g).unwrap();
    let coarse_band = RefinementBand::new(&g, coarse_profile, 0.7).unwrap();
    let coarse = refine_to_band(build_box_mesh(BoxBounds::cube(2.0), 1.0).unwrap(), &coarse_band, RefineOptions::default()).unwrap();
    let cfg = DiffuseProblemConfig::default();
    let geom = DiscreteGeometry::analytic(&coarse, g, coarse_profile, &cfg);
    let system = assemble_system_matrix(&geom, &cfg, 0.7).unwrap();
    let dense = system.to_dense();
    check("coarse vertex count", coarse.num_vertices() <= 500);
    check("symmetry", system.asymmetry() < 1e-12);
    check("spd", dense.clone().symmetric_eigen().eigenvalues.min() > 0.0);

    // Solver against a dense factorisation.
    let b = DVector::from_fn(dense.nrows(), |i, _| ((i * 7919) % 13) as f64 - 6.0);
    check("solver agreement", solver_matches_lu(&system, &dense, &b));

    // Gradient recovery on structured patches.
    let sizes = [0.5, 0.25, 0.125];
    let errors: Vec<f64> = sizes
        .iter()
        .map(|&h| {
            let m = build_box_mesh(BoxBounds::cube(2.0), h).unwrap();
            let grad = ScalarField::interpolate(&m, |x| x.x.sin() * x.y.cos() + x.z.powi(3)).recover_gradient().unwrap();
            m.vertices()
                .iter()
                .zip(grad.values())
                .filter(|(x, _)| x.amax() < 1.5)
                .map(|(x, v)| (v - Vec3::new(x.x.cos() * x.y.cos(), -x.x.sin() * x.y.sin(), 3.0 * x.z * x.z)).norm())
                .fold(0.0, f64::max)
        })
        .collect();
    let recovery = observed_order(&sizes, &errors).map(|f| f.slope).unwrap_or(0.0);
    check("gradient recovery order", recovery >= 1.5);

    // Richardson consistency of the finite-difference covariant gradient.
    check(
        "ext_grad Richardson",
        tube.iter().take(100).all(|x| {
            let at = |s: f64| g.ext_grad_solution_with_step(x, s).unwrap();
            let (a, b, c) = (at(4e-3), at(2e-3), at(1e-3));
            let ratio = (a - b).amax() / (b - c).amax();
            let extrapolated: Mat3 = (b * 4.0 - a) / 3.0;
            (3.5..=4.5).contains(&ratio) && (g.ext_grad_solution(x).unwrap() - extrapolated).amax() < 1e-6
        }),
    );

    let secs = start.elapsed().as_secs_f64();
    require(
        failures.is_empty() && secs < 120.0,
        format!("recovery slope {recovery:.2}, failures {failures:?}, {secs:.1} s"),
    )
}

fn solver_matches_lu(system: &BlockCsr, dense: &DMatrix<f64>, b: &DVector<f64>) -> bool {
    let opts = SolverOptions {
        method: KrylovMethod::Cg,
        preconditioner: Preconditioner::BlockJacobi,
        tol: 1e-12,
        max_iter: 100_000,
    };
    let Ok((x, _)) = solve_krylov(system, b.as_slice(), None, &opts) else {
        return false;
    };
    let Some(oracle) = dense.clone().lu().solve(b) else {
        return false;
    };
    (DVector::from_vec(x) - &oracle).amax() <= 1e-6 * oracle.amax()
}

fn mesh_sdf_order() -> Check {
    let g = TorusGeometry::benchmark();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let samples: Vec<Vec3> = (0..1000)
        .map(|_| {
            let y = g.parametric_point(rng.gen::<f64>() * std::f64::consts::TAU, rng.gen::<f64>() * std::f64::consts::TAU);
            y + g.normal(&y).unwrap() * ((rng.gen::<f64>() - 0.5) * 0.2)
        })
        .collect();
    let sizes = [0.2, 0.1, 0.05, 0.025];
    let errors: Vec<f64> = sizes
        .iter()
        .map(|&h_s| {
            let bvh = build_bvh(&triangulate_torus(&g, h_s).unwrap());
            samples
                .iter()
                .map(|x| (mesh_signed_distance(&bvh, x) - g.signed_distance(x)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let slope = observed_order(&sizes, &errors).map_err(|e| e.to_string())?.slope;
    require(within(slope, 2.0, 0.3), format!("slope {slope:.3}, max errors {errors:?}"))
}

fn main() -> ExitCode {
    let mut studies = Studies::default();
    let criteria: Vec<Criterion> = vec![
        ("co-area sanity", Box::new(|_| coarea_sanity())),
        ("E1 rho/phi rates", Box::new(e1_rates)),
        ("E1 normal [A]", Box::new(e1_normal_a)),
        ("E1 normal [B]", Box::new(e1_normal_b)),
        ("E2 rates", Box::new(e2_rates)),
        ("E3 normal [A]", Box::new(e3_normal_a)),
        ("E3 normal [B]", Box::new(e3_normal_b)),
        ("tangentiality control", Box::new(tangentiality)),
        ("property suites", Box::new(|_| property_suites())),
        ("mesh SDF second order", Box::new(|_| mesh_sdf_order())),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut lines = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = run(&mut studies);
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        let line = format!("criterion {id:>2} {status} {name}: {detail} [{:.0} s]", start.elapsed().as_secs_f64());
        println!("{line}");
        lines.push((outcome.is_ok(), line));
    }
    println!("\nacceptance summary");
    for (_, line) in &lines {
        println!("{line}");
    }
    if lines.iter().all(|(ok, _)| *ok) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
