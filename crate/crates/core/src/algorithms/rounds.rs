use rayon::prelude::*;

use super::{check_schedules, descend, guard, local_grad, RoundResult};
use crate::datagen::{BatchSize, MinibatchSchedule};
use crate::error::{Error, Result};
use crate::objectives::ClientObjective;
use crate::paramspace::{mean_reduce, ParamVector, SeededStream};
use crate::problem::FederatedProblem;

/// Full-batch schedules for every client of `problem`.
pub fn full_schedules(problem: &FederatedProblem) -> Vec<MinibatchSchedule> {
    problem
        .clients()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            MinibatchSchedule::new(i, c.num_examples(), BatchSize::Full, SeededStream::new(0))
                .expect("clients always have at least one example")
        })
        .collect()
}

/// One gradient step on the mean objective.
pub fn gd_step(problem: &FederatedProblem, x: &ParamVector, alpha: f64) -> Result<ParamVector> {
    descend(x, alpha, &problem.mean_grad(x)?, 1, "gd")
}

/// Runs `work` for every client in parallel and returns results in client
/// order, surfacing the error of the lowest-indexed failing client.
fn per_client<T, F>(problem: &FederatedProblem, schedules: &mut [MinibatchSchedule], work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &dyn ClientObjective, &mut MinibatchSchedule) -> Result<T> + Sync,
{
    check_schedules(problem, schedules)?;
    let out: Vec<Result<T>> = problem
        .clients()
        .par_iter()
        .zip(schedules.par_iter_mut())
        .enumerate()
        .map(|(i, (c, s))| work(i, c.as_ref(), s))
        .collect();
    out.into_iter().collect()
}

fn averaged(finals: Vec<ParamVector>, comm: usize, displacement_norms: Vec<f64>) -> Result<RoundResult> {
    Ok(RoundResult {
        server_params: mean_reduce(&finals)?,
        per_client_final: finals,
        comm_rounds_used: comm,
        displacement_norms,
    })
}

/// Client gradients at `x`, their mean, and `vᵢ = ∇f − ∇fᵢ`.
fn alignment_terms(problem: &FederatedProblem, x: &ParamVector) -> Result<(Vec<ParamVector>, ParamVector, Vec<ParamVector>)> {
    let grads = problem.client_grads(x)?;
    let mean = mean_reduce(&grads)?;
    let v = grads.iter().map(|g| mean.sub(g)).collect::<Result<Vec<_>>>()?;
    Ok((grads, mean, v))
}

fn displaced(x: &ParamVector, beta: f64, v: &ParamVector) -> Result<ParamVector> {
    if beta == 0.0 {
        Ok(x.clone())
    } else {
        x.plus_scaled(-beta, v)
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::usage("a round needs at least one local step"))
    } else {
        Ok(())
    }
}

/// Every client takes `x − α∇fᵢ(x)` and the server averages.
pub fn largebatch_gd_round(problem: &FederatedProblem, x: &ParamVector, alpha: f64) -> Result<RoundResult> {
    let grads = problem.client_grads(x)?;
    let finals = grads
        .iter()
        .map(|g| descend(x, alpha, g, 1, "largebatch_gd"))
        .collect::<Result<Vec<_>>>()?;
    averaged(finals, 1, vec![0.0; problem.n()])
}

/// Parallel step with gradients taken at the displaced points `x − βvᵢ`.
pub fn gradalign_round(problem: &FederatedProblem, x: &ParamVector, alpha: f64, beta: f64) -> Result<RoundResult> {
    let (_, _, v) = alignment_terms(problem, x)?;
    let results: Vec<Result<ParamVector>> = problem
        .clients()
        .par_iter()
        .zip(v.par_iter())
        .map(|(c, vi)| {
            let g = c.grad(&displaced(x, beta, vi)?)?;
            descend(x, alpha, &g, 1, "gradalign")
        })
        .collect();
    let finals = results.into_iter().collect::<Result<Vec<_>>>()?;
    averaged(finals, 2, v.iter().map(|vi| beta * vi.norm()).collect())
}

fn local_sgd(
    client: &dyn ClientObjective,
    start: ParamVector,
    alpha: f64,
    k: usize,
    schedule: &mut MinibatchSchedule,
    algo: &str,
) -> Result<ParamVector> {
    let mut y = start;
    for step in 1..=k {
        let g = local_grad(client, &y, schedule)?;
        y = descend(&y, alpha, &g, step, algo)?;
    }
    Ok(y)
}

/// `k` local stochastic steps per client from `x`, then averaging.
pub fn fedavg_round(
    problem: &FederatedProblem,
    x: &ParamVector,
    alpha: f64,
    k: usize,
    schedules: &mut [MinibatchSchedule],
) -> Result<RoundResult> {
    check_k(k)?;
    let finals = per_client(problem, schedules, |_, c, s| local_sgd(c, x.clone(), alpha, k, s, "fedavg"))?;
    averaged(finals, 1, vec![0.0; problem.n()])
}

/// Each client starts from `x − βvᵢ`, runs `k` local steps, and the server
/// averages the final iterates without removing the displacement.
pub fn fedga_round(
    problem: &FederatedProblem,
    x: &ParamVector,
    alpha: f64,
    beta: f64,
    k: usize,
    schedules: &mut [MinibatchSchedule],
) -> Result<RoundResult> {
    check_k(k)?;
    let (_, _, v) = alignment_terms(problem, x)?;
    let finals = per_client(problem, schedules, |i, c, s| {
        let start = guard(displaced(x, beta, &v[i])?, 0, "fedga")?;
        local_sgd(c, start, alpha, k, s, "fedga")
    })?;
    averaged(finals, 2, v.iter().map(|vi| beta * vi.norm()).collect())
}

/// Like [`fedga_round`] but every local gradient is taken at `y − βvᵢ` while
/// the stored iterate `y` stays undisplaced.
pub fn fedga_perstep_round(
    problem: &FederatedProblem,
    x: &ParamVector,
    alpha: f64,
    beta: f64,
    k: usize,
    schedules: &mut [MinibatchSchedule],
) -> Result<RoundResult> {
    check_k(k)?;
    let (_, _, v) = alignment_terms(problem, x)?;
    let finals = per_client(problem, schedules, |i, c, s| {
        let mut y = x.clone();
        for step in 1..=k {
            let g = local_grad(c, &displaced(&y, beta, &v[i])?, s)?;
            y = descend(&y, alpha, &g, step, "fedga_perstep")?;
        }
        Ok(y)
    })?;
    averaged(finals, 2, v.iter().map(|vi| beta * vi.norm()).collect())
}

/// Local steps corrected by the control variate `∇f(x) − ∇fᵢ(x)`.
///
/// The step direction is formed as `(gᵢ(y) − ∇fᵢ(x)) + ∇f(x)` so that with
/// one full-batch step every client moves by exactly `−α∇f(x)`.
pub fn scaffold_round(
    problem: &FederatedProblem,
    x: &ParamVector,
    alpha: f64,
    k: usize,
    schedules: &mut [MinibatchSchedule],
) -> Result<RoundResult> {
    check_k(k)?;
    let (grads, mean, v) = alignment_terms(problem, x)?;
    let finals = per_client(problem, schedules, |i, c, s| {
        let mut y = x.clone();
        for step in 1..=k {
            let g = local_grad(c, &y, s)?;
            let dir = g.sub(&grads[i])?.add(&mean)?;
            y = descend(&y, alpha, &dir, step, "scaffold")?;
        }
        Ok(y)
    })?;
    averaged(finals, 2, v.iter().map(ParamVector::norm).collect())
}

/// Local steps on `fᵢ(y) + (μ/2)‖y − x‖²` using its gradient, then averaging.
pub fn fedprox_round(
    problem: &FederatedProblem,
    x: &ParamVector,
    alpha: f64,
    k: usize,
    mu: f64,
    schedules: &mut [MinibatchSchedule],
) -> Result<RoundResult> {
    check_k(k)?;
    if !(mu >= 0.0) {
        return Err(Error::usage("proximal weight must be non-negative"));
    }
    let finals = per_client(problem, schedules, |_, c, s| {
        let mut y = x.clone();
        for step in 1..=k {
            let mut g = local_grad(c, &y, s)?;
            if mu != 0.0 {
                g = g.plus_scaled(mu, &y.sub(x)?)?;
            }
            y = descend(&y, alpha, &g, step, "fedprox")?;
        }
        Ok(y)
    })?;
    averaged(finals, 1, vec![0.0; problem.n()])
}

/// Mean server result over `repeats` independent draws.
///
/// `op` receives a distinct stream for each repeat, from which it should
/// build the minibatch schedules of that draw.
pub fn expected_round<F>(repeats: usize, stream: &SeededStream, mut op: F) -> Result<ParamVector>
where
    F: FnMut(&SeededStream) -> Result<RoundResult>,
{
    if repeats == 0 {
        return Err(Error::usage("expected_round needs at least one repeat"));
    }
    let servers = (0..repeats)
        .map(|r| op(&stream.derive("repeat", r as u64)).map(|res| res.server_params))
        .collect::<Result<Vec<_>>>()?;
    mean_reduce(&servers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::run_gd_sequence;
    use crate::objectives::{make_quadratic_problem, Model, ModelSpec, QuadraticClient, SupervisedClient};
    use crate::datagen::{gen_blobs, partition, PartitionMode};

    fn fixture() -> FederatedProblem {
        FederatedProblem::from_clients(vec![
            QuadraticClient::scalar(0, 2.0, 0.0).unwrap(),
            QuadraticClient::scalar(1, 0.0, 0.0).unwrap(),
        ])
        .unwrap()
    }

    fn noisy_quadratics(seed: u64) -> FederatedProblem {
        let clients: Vec<QuadraticClient> = make_quadratic_problem(4, 3, 0.5, &SeededStream::new(seed))
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, q)| q.with_gaussian_noise(12, 0.3, &SeededStream::new(seed).derive("noise", i as u64)).unwrap())
            .collect();
        FederatedProblem::from_clients(clients).unwrap()
    }

    fn schedules(p: &FederatedProblem, b: usize, seed: u64) -> Vec<MinibatchSchedule> {
        p.clients()
            .iter()
            .enumerate()
            .map(|(i, c)| {
                MinibatchSchedule::new(i, c.num_examples(), BatchSize::Fixed(b), SeededStream::new(seed).derive("minibatch", i as u64))
                    .unwrap()
            })
            .collect()
    }

    fn logistic_problem(seed: u64) -> FederatedProblem {
        let ds = gen_blobs(3, 20, 4, 2.0, &SeededStream::new(seed)).unwrap();
        let part = partition(&ds, 4, PartitionMode::Iid, &SeededStream::new(seed + 1)).unwrap();
        let model = Model::new(&ModelSpec::Logistic, 4, 3).unwrap();
        let clients: Vec<SupervisedClient> = part
            .assignment
            .iter()
            .enumerate()
            .map(|(i, idx)| {
                let (f, l) = ds.select(idx);
                SupervisedClient::new(i, f, l, model.clone(), 1e-3).unwrap()
            })
            .collect();
        FederatedProblem::from_clients(clients).unwrap()
    }

    fn x1(v: f64) -> ParamVector {
        ParamVector::new(vec![v]).unwrap()
    }

    #[test]
    fn gradalign_fixture() {
        let p = fixture();
        let res = gradalign_round(&p, &x1(1.0), 0.1, 0.1).unwrap();
        assert!((res.per_client_final[0][0] - 0.78).abs() < 1e-15);
        assert_eq!(res.per_client_final[1][0], 1.0);
        assert!((res.server_params[0] - 0.89).abs() < 1e-15);
        assert_eq!(res.comm_rounds_used, 2);
        let gd = gd_step(&p, &x1(1.0), 0.1).unwrap();
        assert!((res.server_params[0] - gd[0] + 0.01).abs() < 1e-15);
    }

    #[test]
    fn reduction_lattice_is_bit_exact() {
        let p = noisy_quadratics(3);
        let x = ParamVector::new(vec![0.4, -0.2, 1.0]).unwrap();
        let (a, k) = (0.05, 4);

        let avg = fedavg_round(&p, &x, a, k, &mut schedules(&p, 3, 9)).unwrap();
        let ga0 = fedga_round(&p, &x, a, 0.0, k, &mut schedules(&p, 3, 9)).unwrap();
        let prox0 = fedprox_round(&p, &x, a, k, 0.0, &mut schedules(&p, 3, 9)).unwrap();
        let per0 = fedga_perstep_round(&p, &x, a, 0.0, k, &mut schedules(&p, 3, 9)).unwrap();
        assert!(ga0.server_params.bit_eq(&avg.server_params));
        assert!(prox0.server_params.bit_eq(&avg.server_params));
        assert!(per0.server_params.bit_eq(&avg.server_params));

        let lb = largebatch_gd_round(&p, &x, a).unwrap();
        assert!(gradalign_round(&p, &x, a, 0.0).unwrap().server_params.bit_eq(&lb.server_params));
        let avg1 = fedavg_round(&p, &x, a, 1, &mut full_schedules(&p)).unwrap();
        assert!(avg1.server_params.bit_eq(&lb.server_params));

        let sc = scaffold_round(&p, &x, a, 1, &mut full_schedules(&p)).unwrap();
        let gd = gd_step(&p, &x, a).unwrap();
        assert!(sc.server_params.bit_eq(&gd));
        assert!(sc.per_client_final.iter().all(|y| y.bit_eq(&gd)));
    }

    #[test]
    fn perstep_formulation_with_one_step_is_gradalign() {
        let p = noisy_quadratics(5);
        let x = ParamVector::new(vec![1.0, 0.3, -0.6]).unwrap();
        let ga = gradalign_round(&p, &x, 0.05, 0.2).unwrap();
        let per = fedga_perstep_round(&p, &x, 0.05, 0.2, 1, &mut full_schedules(&p)).unwrap();
        assert!(per.server_params.bit_eq(&ga.server_params));
        let fedga = fedga_round(&p, &x, 0.05, 0.2, 1, &mut full_schedules(&p)).unwrap();
        let scale = ga.server_params.norm();
        assert!(fedga.server_params.dist(&ga.server_params).unwrap() <= 1e-14 * scale);
    }

    #[test]
    fn displacement_is_either_up_front_or_per_step() {
        let p = logistic_problem(2);
        let mut x = ParamVector::zeros(p.dim());
        let (a, b, k) = (0.1, 0.5, 5);
        let mut s1 = schedules(&p, 4, 1);
        let mut s2 = s1.clone();
        for _ in 0..5 {
            let (_, _, v) = alignment_terms(&p, &x).unwrap();
            let ga = fedga_round(&p, &x, a, b, k, &mut s1).unwrap();
            let per = fedga_perstep_round(&p, &x, a, b, k, &mut s2).unwrap();
            let rel = ga.server_params.dist(&per.server_params).unwrap() / ga.server_params.norm();
            assert!(rel <= 1e-10, "{rel}");
            for i in 0..p.n() {
                let shifted = ga.per_client_final[i].plus_scaled(b, &v[i]).unwrap();
                assert!(shifted.dist(&per.per_client_final[i]).unwrap() <= 1e-12);
            }
            x = ga.server_params;
        }
    }

    #[test]
    fn homogeneous_clients_collapse() {
        let q = make_quadratic_problem(1, 2, 0.0, &SeededStream::new(8)).unwrap().remove(0);
        let p = FederatedProblem::from_clients(vec![q.clone(), q.clone(), q]).unwrap();
        let x = ParamVector::new(vec![2.0, -1.0]).unwrap();
        let avg = fedavg_round(&p, &x, 0.1, 3, &mut full_schedules(&p)).unwrap();
        let gd = run_gd_sequence(&p, &x, 0.1, 3).unwrap();
        assert!(avg.server_params.dist(&gd).unwrap() <= 1e-15);
        let ga = fedga_round(&p, &x, 0.1, 0.7, 3, &mut full_schedules(&p)).unwrap();
        assert!(ga.server_params.bit_eq(&avg.server_params));
        let sc = scaffold_round(&p, &x, 0.1, 3, &mut full_schedules(&p)).unwrap();
        assert!(sc.server_params.dist(&avg.server_params).unwrap() <= 1e-15);
        let gdr = gradalign_round(&p, &x, 0.1, 5.0).unwrap();
        assert!(gdr.server_params.bit_eq(&gd_step(&p, &x, 0.1).unwrap()));
    }

    #[test]
    fn single_client_fedavg_is_local_sgd() {
        let p = noisy_quadratics(1).subset(&[2]).unwrap();
        let x = ParamVector::new(vec![0.1, 0.2, 0.3]).unwrap();
        let mut s = schedules(&p, 5, 4);
        let mut s2 = s.clone();
        let avg = fedavg_round(&p, &x, 0.05, 6, &mut s).unwrap();
        let mut y = x.clone();
        for _ in 0..6 {
            let g = p.client(0).stoch_grad(&y, &s2[0].next_batch()).unwrap();
            y = y.plus_scaled(-0.05, &g).unwrap();
        }
        assert!(avg.server_params.bit_eq(&y));
    }

    #[test]
    fn strong_proximal_term_pins_the_iterate() {
        let p = noisy_quadratics(6);
        let x = ParamVector::new(vec![1.0, 1.0, 1.0]).unwrap();
        let (a, mu) = (1e-7, 1e6);
        let res = fedprox_round(&p, &x, a, 1, mu, &mut full_schedules(&p)).unwrap();
        for (i, y) in res.per_client_final.iter().enumerate() {
            let step = p.client(i).grad(&x).unwrap().norm() * a;
            assert!(y.dist(&x).unwrap() < step * 1.01);
        }
        let res = fedprox_round(&p, &x, 1e-3, 20, mu, &mut full_schedules(&p));
        assert!(matches!(res, Err(Error::Divergence(_))));
    }

    #[test]
    fn expected_round_of_deterministic_op() {
        let p = fixture();
        let op = |_: &SeededStream| fedavg_round(&p, &x1(1.0), 0.1, 2, &mut full_schedules(&p));
        let one = expected_round(1, &SeededStream::new(0), op).unwrap();
        let five = expected_round(5, &SeededStream::new(0), op).unwrap();
        assert!(one.bit_eq(&five));
        assert!(expected_round(0, &SeededStream::new(0), op).is_err());
    }

    #[test]
    fn monte_carlo_fedavg_approaches_deterministic() {
        let p = noisy_quadratics(11);
        let x = ParamVector::new(vec![0.5, 0.5, -0.5]).unwrap();
        let det = fedavg_round(&p, &x, 0.1, 3, &mut full_schedules(&p)).unwrap().server_params;
        let err = |reps: usize| {
            let m = expected_round(reps, &SeededStream::new(3), |s| {
                let mut sc: Vec<MinibatchSchedule> = (0..p.n())
                    .map(|i| MinibatchSchedule::new(i, 12, BatchSize::Fixed(2), s.derive("minibatch", i as u64)).unwrap())
                    .collect();
                fedavg_round(&p, &x, 0.1, 3, &mut sc)
            })
            .unwrap();
            m.dist(&det).unwrap()
        };
        let (e1, e2) = (err(25), err(1600));
        // 64× more draws should shrink the error roughly 8×
        assert!(e2 < e1 / 3.0, "{e1} {e2}");
    }

    #[test]
    fn coupled_schedules_see_identical_batches() {
        let p = noisy_quadratics(2);
        let mut a = schedules(&p, 3, 17);
        let mut b = schedules(&p, 3, 17);
        for _ in 0..10 {
            for (sa, sb) in a.iter_mut().zip(b.iter_mut()) {
                assert_eq!(sa.next_batch(), sb.next_batch());
            }
        }
    }
}
