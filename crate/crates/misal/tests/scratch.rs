use misal::analysis::{self, checks};
use misal::benchmark;
use misal::driver;
use misal::learning::LearningSequence;
use misal::problem::Penalty;
use misal::schedule::InexactnessSchedule;
use nalgebra::DVector;

#[test]
fn probe_benchmark_run() {
    let seed = 42u64;
    let fixture = benchmark::random_qp(5, 3, 2, seed).unwrap();
    let p = &fixture.problem;
    println!("certificates: {:?}", p.certificates);
    let gt = analysis::solve_ground_truth(p, &fixture.theta_star).unwrap();
    println!("f* = {}, lambda* = {:?}, x* = {:?}", gt.f_star, gt.lambda_star.as_slice(), gt.x_star.as_slice());
    println!("kkt residual {}, duality gap check {}", gt.kkt_residual, gt.duality_gap_check);

    let theta_box = p.theta_box.clone();
    let offset = DVector::from_vec(vec![0.8, -0.8]);
    let theta_0 = theta_box.project(&(&fixture.theta_star + offset));
    let seq = LearningSequence::geometric(theta_box, fixture.theta_star.clone(), theta_0, 0.9).unwrap();
    println!("initial gap = {}", seq.certificate().initial_gap);

    let sched = InexactnessSchedule::default_power();
    let cfg = Penalty::new(1.0).unwrap();
    let t0 = std::time::Instant::now();
    let outcome = driver::run(p, &cfg, &seq, &sched, 2000).unwrap();
    let run_secs = t0.elapsed().as_secs_f64();
    assert!(outcome.is_complete(), "{:?}", outcome.trace.status);
    let total_inner: usize = outcome.trace.records.iter().map(|r| r.inner_iterations).sum();
    println!("run: {run_secs:.2}s, total inner iterations {total_inner}");
    println!("lam_K = {:?}", outcome.state.lam.as_slice());

    let consts = analysis::compute_constants(p, &cfg, &sched, &seq.certificate(), &gt).unwrap();
    println!("C_lambda={} B_g={} C_1={} C_2={} U={} M_h={}", consts.c_lambda, consts.b_g, consts.c_1, consts.c_2, consts.u, consts.m_h);

    let t1 = std::time::Instant::now();
    let report = checks::run_all_checks(&outcome.trace, p, &cfg, &gt, &consts, None).unwrap();
    println!("checks: {:.2}s, pass = {}", t1.elapsed().as_secs_f64(), report.pass);
    for t in &report.theorems {
        println!(
            "  {}: pass={} max_ratio={:.4e} slope={:?} violations={}",
            t.name, t.pass, t.max_ratio, t.tail_slope, t.violations.len()
        );
    }
}

#[test]
fn probe_perfect_information() {
    let fixture = benchmark::random_qp(5, 3, 2, 42).unwrap();
    let p = &fixture.problem;
    let gt = analysis::solve_ground_truth(p, &fixture.theta_star).unwrap();
    let seq = LearningSequence::geometric(
        p.theta_box.clone(),
        fixture.theta_star.clone(),
        fixture.theta_star.clone(),
        0.9,
    )
    .unwrap();
    assert_eq!(seq.certificate().initial_gap, 0.0);
    let sched = InexactnessSchedule::default_power();
    let cfg = Penalty::new(1.0).unwrap();
    let outcome = driver::run(p, &cfg, &seq, &sched, 2000).unwrap();
    let consts = analysis::compute_constants(p, &cfg, &sched, &seq.certificate(), &gt).unwrap();
    println!("perfect-info: C_lambda={} B_g={} U={}", consts.c_lambda, consts.b_g, consts.u);
    let report = checks::run_all_checks(&outcome.trace, p, &cfg, &gt, &consts, None).unwrap();
    println!("pass = {}", report.pass);
    for t in &report.theorems {
        println!("  {}: pass={} max_ratio={:.4e}", t.name, t.pass, t.max_ratio);
    }
    // dual gap at K for ordering comparison
    let dual = report.theorem("dual_suboptimality").unwrap();
    println!("dual gap measured at last sampled k: {:?}", dual.measured.last());
}
