use super::bound::{BoundContext, PairWeights};
use super::{FitResult, HorizonMode, VariationalState};
use crate::error::{invalid, Result};
use crate::events::{pair_index, partition_by_blocks, EventStream};
use crate::generator::BlockHawkesModel;
use crate::hawkes::{fit_mle_with, HawkesParams, MleConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct VemConfig {
    pub max_iterations: usize,
    /// Stop when the relative change of the bound falls below this.
    pub tol: f64,
    /// Per-iteration slack allowed before a decrease counts as a failure.
    pub slack: f64,
    /// Quasi-Newton iterations per block pair in each M step.
    pub m_step_iterations: usize,
    pub horizon: HorizonMode,
    pub mle: MleConfig,
}

impl Default for VemConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tol: 1e-6,
            slack: 1e-8,
            m_step_iterations: 8,
            horizon: HorizonMode::LastEvent,
            mle: MleConfig::default(),
        }
    }
}

/// Variational EM over mean-field class posteriors.
///
/// Each iteration takes one E step, refreshes the reference assignment when
/// that does not lower the bound, and then runs the M step: a few
/// quasi-Newton iterations per block pair and `π` set to the column means of
/// `τ`. The E step moves all rows at once toward
/// `τ̃_i ∝ π exp(∂F/∂τ_i)` and backtracks until the bound does not decrease.
pub fn variational_em(stream: &EventStream, tau0: &VariationalState, num_classes: usize, config: &VemConfig) -> Result<FitResult> {
    let k = num_classes;
    if tau0.num_classes() != k || tau0.num_nodes() != stream.num_nodes() {
        return invalid("initial variational state does not match the stream and K");
    }
    let horizon = config.horizon.resolve(stream);
    let ctx = BoundContext::new(stream, horizon);
    let mut tau = tau0.as_slice().to_vec();
    let n = stream.num_nodes();
    let mut reference = tau0.hard_assignment().labels().to_vec();
    let mut pi = tau0.class_means();

    let view = partition_by_blocks(stream, &tau0.hard_assignment())?;
    let mut theta = Vec::with_capacity(k * k);
    for times in &view.times {
        let fit = fit_mle_with(times, horizon, None, &config.mle)?;
        theta.push(usable(fit.params, &config.mle));
    }
    m_step(&ctx, &tau, k, &reference, &mut theta, config);
    let mut value = ctx.evaluate(&tau, k, &theta, &pi, &reference).total;
    let mut trace = vec![value];
    let mut warnings = Vec::new();
    let mut converged = k == 1;
    let mut iterations = 0;

    while !converged && iterations < config.max_iterations {
        iterations += 1;
        let start = value;

        // E step
        let (_, grad) = ctx.energy_gradient(&tau, k, &theta, &pi, &reference);
        let proposal = softmax_rows(&grad, &pi, n, k);
        let mut eta = 1.0;
        for _ in 0..30 {
            let cand: Vec<f64> = tau.iter().zip(&proposal).map(|(&a, &b)| a + eta * (b - a)).collect();
            let v = ctx.evaluate(&cand, k, &theta, &pi, &reference).total;
            if v > value {
                tau = cand;
                value = v;
                break;
            }
            eta *= 0.5;
        }

        let fresh = VariationalState::from_flat(tau.clone(), n, k).hard_assignment().labels().to_vec();
        if fresh != reference {
            let v = ctx.evaluate(&tau, k, &theta, &pi, &fresh).total;
            if v >= value {
                reference = fresh;
                value = v;
            }
        }

        // M step
        m_step(&ctx, &tau, k, &reference, &mut theta, config);
        let new_pi = VariationalState::from_flat(tau.clone(), n, k).class_means();
        let v = ctx.evaluate(&tau, k, &theta, &new_pi, &reference).total;
        if v >= value {
            pi = new_pi;
            value = v;
        }

        if value < start - config.slack {
            warnings.push(format!("bound decreased from {start} to {value} at iteration {iterations}"));
            trace.push(value);
            break;
        }
        trace.push(value);
        if (value - start).abs() <= config.tol * start.abs().max(1.0) {
            converged = true;
        }
    }
    if !converged && warnings.is_empty() {
        warnings.push(format!("no convergence within {} iterations", config.max_iterations));
    }

    let state = VariationalState::from_flat(tau, n, k);
    let model = BlockHawkesModel {
        num_classes: k,
        class_probs: pi,
        params: theta,
    };
    Ok(FitResult {
        assignment: state.hard_assignment(),
        tau: Some(state),
        model,
        objective: value,
        trace,
        iterations,
        converged,
        warnings,
    })
}

fn usable(p: HawkesParams, mle: &MleConfig) -> HawkesParams {
    HawkesParams {
        alpha: p.alpha.max(mle.alpha_floor),
        beta: p.beta.max(mle.beta_floor),
        lambda_inf: p.lambda_inf.max(mle.lambda_floor),
    }
}

fn softmax_rows(grad: &[f64], pi: &[f64], n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let logits: Vec<f64> = (0..k).map(|q| pi[q].ln() + grad[i * k + q]).collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| (z - top).exp()).collect();
        let s: f64 = exps.iter().sum();
        for q in 0..k {
            out[i * k + q] = exps[q] / s;
        }
    }
    out
}

fn m_step(ctx: &BoundContext, tau: &[f64], k: usize, reference: &[usize], theta: &mut [HawkesParams], config: &VemConfig) {
    let lo = [
        config.mle.alpha_floor.ln(),
        config.mle.beta_floor.ln(),
        config.mle.lambda_floor.ln(),
    ];
    let hi = [config.mle.upper_cap.ln(); 3];
    for q in 0..k {
        for l in 0..k {
            let b = pair_index(q, l, k);
            let (w, in_ref) = ctx.pair_weights(tau, k, reference, q, l);
            let pw = PairWeights {
                w: &w,
                in_ref: &in_ref,
                off_diagonal: q != l,
            };
            let objective = |x: &[f64; 3]| {
                let p = HawkesParams {
                    alpha: x[0].exp(),
                    beta: x[1].exp(),
                    lambda_inf: x[2].exp(),
                };
                ctx.hawkes_pair(&pw, &p, None)
            };
            let p = theta[b];
            let x0 = [p.alpha.ln(), p.beta.ln(), p.lambda_inf.ln()];
            let x = maximize(objective, x0, lo, hi, config.m_step_iterations);
            theta[b] = HawkesParams {
                alpha: x[0].exp(),
                beta: x[1].exp(),
                lambda_inf: x[2].exp(),
            };
        }
    }
}

/// Box-constrained BFGS ascent with central-difference gradients and
/// backtracking. Only improving steps are taken.
fn maximize(f: impl Fn(&[f64; 3]) -> f64, x0: [f64; 3], lo: [f64; 3], hi: [f64; 3], iterations: usize) -> [f64; 3] {
    let clamp = |x: [f64; 3]| -> [f64; 3] { std::array::from_fn(|i| x[i].clamp(lo[i], hi[i])) };
    let grad = |x: &[f64; 3]| -> [f64; 3] {
        std::array::from_fn(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            let mut up = *x;
            let mut dn = *x;
            up[i] = (up[i] + h).min(hi[i]);
            dn[i] = (dn[i] - h).max(lo[i]);
            if up[i] == dn[i] {
                0.0
            } else {
                (f(&up) - f(&dn)) / (up[i] - dn[i])
            }
        })
    };
    let mut x = clamp(x0);
    let mut fx = f(&x);
    let mut g = grad(&x);
    // inverse Hessian approximation of -f
    let mut hinv = [[0.0; 3]; 3];
    for (i, row) in hinv.iter_mut().enumerate() {
        row[i] = 1.0 / (g.iter().map(|v| v.abs()).fold(1.0, f64::max));
    }
    for _ in 0..iterations {
        let mut d: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| hinv[i][j] * g[j]).sum());
        if d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() <= 0.0 {
            d = g;
            hinv = [[0.0; 3]; 3];
            for (i, row) in hinv.iter_mut().enumerate() {
                row[i] = 1e-3;
            }
        }
        let big = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if big > 2.0 {
            d.iter_mut().for_each(|v| *v *= 2.0 / big);
        }
        let mut t = 1.0;
        let mut moved = None;
        for _ in 0..30 {
            let cand = clamp(std::array::from_fn(|i| x[i] + t * d[i]));
            let fc = f(&cand);
            if fc.is_finite() && fc > fx {
                moved = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_)) = moved else { break };
        let gn = grad(&xn);
        let s: [f64; 3] = std::array::from_fn(|i| xn[i] - x[i]);
        // curvature pair for the minimization of -f
        let y: [f64; 3] = std::array::from_fn(|i| g[i] - gn[i]);
        let sy: f64 = (0..3).map(|i| s[i] * y[i]).sum();
        if sy > 1e-12 {
            let hy: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| hinv[i][j] * y[j]).sum());
            let yhy: f64 = (0..3).map(|i| y[i] * hy[i]).sum();
            for i in 0..3 {
                for j in 0..3 {
                    hinv[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        let rel = (fn_ - fx) / fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        if rel < 1e-13 {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::ClassAssignment;
    use crate::generator::{sample_network_with_classes, BlockHawkesModel};
    use crate::hawkes::fit_mle;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn planted(n_per: usize, k: usize, horizon: f64, seed: u64) -> (EventStream, ClassAssignment) {
        let diag = HawkesParams::new(0.6, 0.8, 1.8).unwrap();
        let off = HawkesParams::new(0.6, 0.8, 0.3).unwrap();
        let model = BlockHawkesModel::planted(k, diag, off).unwrap();
        let labels = (0..n_per * k).map(|i| i / n_per).collect();
        let c = ClassAssignment::new(labels, k).unwrap();
        let net = sample_network_with_classes(&model, c, horizon, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (net.stream, net.classes)
    }

    #[test]
    fn maximize_finds_a_concave_peak() {
        let f = |x: &[f64; 3]| -(x[0] - 1.0).powi(2) - 2.0 * (x[1] + 0.5).powi(2) - (x[2] - 0.2).powi(2) - 0.5 * x[0] * x[2];
        let x = maximize(f, [0.0; 3], [-10.0; 3], [10.0; 3], 100);
        let g = [
            -2.0 * (x[0] - 1.0) - 0.5 * x[2],
            -4.0 * (x[1] + 0.5),
            -2.0 * (x[2] - 0.2) - 0.5 * x[0],
        ];
        assert!(g.iter().all(|v| v.abs() < 1e-5), "{x:?}");
    }

    #[test]
    fn single_class_gives_the_pair_mle() {
        let (stream, _) = planted(6, 1, 40.0, 1);
        let tau = VariationalState::hard(&ClassAssignment::uniform(6, 1).unwrap());
        let fit = variational_em(&stream, &tau, 1, &VemConfig::default()).unwrap();
        assert!(fit.converged);
        let times: Vec<f64> = stream.times().collect();
        let mle = fit_mle(&times, stream.last_time(), None).unwrap();
        let p = fit.model.params[0];
        assert_relative_eq!(p.alpha, mle.params.alpha, max_relative = 1e-3);
        assert_relative_eq!(p.lambda_inf, mle.params.lambda_inf, max_relative = 1e-3);
    }

    #[test]
    fn trace_never_decreases() {
        let (stream, _) = planted(5, 2, 30.0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tau = VariationalState::random(10, 2, &mut rng);
        let fit = variational_em(&stream, &tau, 2, &VemConfig::default()).unwrap();
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0] - 1e-8), "{:?}", fit.trace);
        assert!(fit.warnings.iter().all(|w| !w.contains("decreased")));
    }
}
