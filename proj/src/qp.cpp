#include "perchkit/qp.hpp"
#include <cstdio>

#include <cmath>
#include <stdexcept>

namespace perchkit::qp {

namespace {

double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv, double eta) {
    double a = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (dv[i] < 0.0) a = std::min(a, -eta * v[i] / dv[i]);
    }
    return a;
}

void check_problem(const QpProblem& p) {
    const int n = p.num_vars();
    if (p.Q.cols() != n) throw std::invalid_argument("solve_qp: Q must be square");
    if (p.A.size() > 0 && p.A.cols() != n) throw std::invalid_argument("solve_qp: A column mismatch");
    if (p.A.rows() != p.b.size()) throw std::invalid_argument("solve_qp: A/b row mismatch");
    if (p.G.size() > 0 && p.G.cols() != n) throw std::invalid_argument("solve_qp: G column mismatch");
    if (p.G.rows() != p.y.size() || p.G.rows() != p.z.size())
        throw std::invalid_argument("solve_qp: G/y/z row mismatch");
    if ((p.Q - p.Q.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, p.Q.cwiseAbs().maxCoeff()))
        throw std::invalid_argument("solve_qp: Q not symmetric");
    for (Eigen::Index i = 0; i < p.y.size(); ++i) {
        if (std::isfinite(p.y[i]) && std::isfinite(p.z[i]) && p.y[i] > p.z[i])
            throw std::invalid_argument("solve_qp: lower bound exceeds upper bound");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p.Q, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-8) throw std::invalid_argument("solve_qp: Q not PSD");
}

}  // namespace

void QpProblem::one_sided(Eigen::MatrixXd& W, Eigen::VectorXd& w) const {
    int k = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (std::isfinite(y[i])) ++k;
        if (std::isfinite(z[i])) ++k;
    }
    W.resize(k, Q.rows());
    w.resize(k);
    int r = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (std::isfinite(y[i])) {
            W.row(r) = G.row(i);
            w[r++] = y[i];
        }
    }
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        if (std::isfinite(z[i])) {
            W.row(r) = -G.row(i);
            w[r++] = -z[i];
        }
    }
}

QpSolution solve_qp(const QpProblem& problem, const SolverOptions& opts) {
    if (opts.validate) check_problem(problem);

    const int n = problem.num_vars();
    const int J = problem.num_eq();
    Eigen::MatrixXd W;
    Eigen::VectorXd w;
    problem.one_sided(W, w);
    const int K = static_cast<int>(W.rows());

    const double data_scale = std::max(
        {1.0, problem.Q.size() ? problem.Q.cwiseAbs().maxCoeff() : 0.0,
         J ? problem.b.cwiseAbs().maxCoeff() : 0.0, K ? w.cwiseAbs().maxCoeff() : 0.0});

    QpSolution sol;
    sol.lambda1 = Eigen::VectorXd::Zero(J);
    sol.lambda2 = Eigen::VectorXd::Ones(K);
    sol.slack = Eigen::VectorXd::Ones(K);

    // Least-squares primal start on the equality block; zero otherwise.
    if (J > 0) {
        sol.c = problem.A.colPivHouseholderQr().solve(problem.b);
        if (!sol.c.allFinite()) sol.c = Eigen::VectorXd::Zero(n);
    } else {
        sol.c = Eigen::VectorXd::Zero(n);
    }

    // Normalize the objective so the KKT blocks are balanced; the minimizer is
    // unchanged and multipliers are rescaled on the way out.
    const double q_scale = std::max(1.0, problem.Q.size() ? problem.Q.cwiseAbs().maxCoeff() : 0.0);
    const Eigen::MatrixXd Qr = problem.Q / q_scale +
                               1e-9 * Eigen::MatrixXd::Identity(n, n);  // PSD, often rank-deficient
    auto finish = [&](QpSolution s) {
        s.lambda1 *= q_scale;
        s.lambda2 *= q_scale;
        return s;
    };

    int stall = 0;
    double prev_mu = std::numeric_limits<double>::infinity();
    double prev_rp = std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < opts.max_iters; ++iter) {
        sol.iterations = iter;
        const Eigen::VectorXd qc = Qr * sol.c;
        const Eigen::VectorXd atl =
            J ? (problem.A.transpose() * sol.lambda1).eval() : Eigen::VectorXd::Zero(n);
        const Eigen::VectorXd wtl =
            K ? (W.transpose() * sol.lambda2).eval() : Eigen::VectorXd::Zero(n);
        const Eigen::VectorXd rd = qc - atl - wtl;
        const Eigen::VectorXd rp = J ? (problem.A * sol.c - problem.b).eval() : Eigen::VectorXd();
        const Eigen::VectorXd rg = K ? (W * sol.c - w - sol.slack).eval() : Eigen::VectorXd();
        const double nrd = rd.size() ? rd.cwiseAbs().maxCoeff() : 0.0;
        const double nrp = rp.size() ? rp.cwiseAbs().maxCoeff() : 0.0;
        const double nrg = rg.size() ? rg.cwiseAbs().maxCoeff() : 0.0;
        const double comp = K ? sol.lambda2.dot(sol.slack) : 0.0;
        const double mu = K ? comp / K : 0.0;

        // Tolerances track the magnitude of the terms forming each residual, so
        // badly scaled cost matrices do not loosen the feasibility checks.
        if (opts.trace)
            std::fprintf(stderr, "qp iter %3d: rd=%9.2e rp=%9.2e rg=%9.2e mu=%9.2e\n", iter, nrd,
                         nrp, nrg, mu);
        const double stat_scale = std::max({1.0, qc.cwiseAbs().maxCoeff(),
                                            atl.cwiseAbs().maxCoeff(), wtl.cwiseAbs().maxCoeff()});
        const double prim_scale =
            std::max({1.0, J ? problem.b.cwiseAbs().maxCoeff() : 0.0,
                      K ? w.cwiseAbs().maxCoeff() : 0.0});
        const double obj_scale = std::max(1.0, std::abs(sol.c.dot(qc)));
        if (nrd <= 1e-9 * stat_scale && nrp <= 1e-9 * prim_scale && nrg <= 1e-9 * prim_scale &&
            comp <= 1e-9 * obj_scale) {
            sol.status = SolveStatus::optimal;
            return finish(sol);
        }

        // Stagnation => no strictly feasible point compatible with the
        // constraints; flag infeasible rather than grinding to max_iters.
        const double prim_inf = std::max(nrp, nrg);
        const bool stalled = K ? (mu > opts.stall_tol && prim_inf > opts.stall_tol &&
                                  mu > 0.9 * prev_mu)
                               : (prim_inf > opts.stall_tol && prim_inf > 0.9 * prev_rp);
        stall = stalled ? stall + 1 : 0;
        if (stall >= opts.stall_iters ||
            (K && (sol.lambda2.maxCoeff() > 1e14 || sol.slack.maxCoeff() > 1e14))) {
            sol.status = SolveStatus::infeasible;
            return finish(sol);
        }
        prev_mu = mu;
        prev_rp = prim_inf;

        // Normal-equations reduction: M = Q + W' diag(l2/s) W, with the
        // diagonal clipped so late iterations stay factorizable.
        Eigen::MatrixXd M = Qr;
        if (K) {
            Eigen::VectorXd d = sol.lambda2.cwiseQuotient(sol.slack);
            for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = std::clamp(d[i], 1e-10, 1e12);
            M.noalias() += W.transpose() * d.asDiagonal() * W;
        }
        M.diagonal().array() += 1e-12;
        Eigen::LLT<Eigen::MatrixXd> lltM(M);
        if (lltM.info() != Eigen::Success) {
            sol.status = SolveStatus::infeasible;
            return finish(sol);
        }

        Eigen::MatrixXd MinvAt;
        Eigen::LLT<Eigen::MatrixXd> lltS;
        if (J) {
            MinvAt = lltM.solve(problem.A.transpose());
            Eigen::MatrixXd Schur = problem.A * MinvAt;
            Schur.diagonal().array() += 1e-12 * std::max(1.0, Schur.cwiseAbs().maxCoeff());
            lltS.compute(Schur);
            if (lltS.info() != Eigen::Success) {
                sol.status = SolveStatus::infeasible;
                return finish(sol);
            }
        }

        auto solve_kkt = [&](const Eigen::VectorXd& rc_comp, Eigen::VectorXd& dc,
                             Eigen::VectorXd& dl1, Eigen::VectorXd& dl2, Eigen::VectorXd& ds) {
            // rc_comp is the complementarity residual target: S*l2 form.
            Eigen::VectorXd rhs = -rd;
            if (K) rhs.noalias() -= W.transpose() * ((rc_comp + sol.lambda2.cwiseProduct(rg)).cwiseQuotient(sol.slack));
            if (J) {
                const Eigen::VectorXd t = lltM.solve(rhs);
                dl1 = lltS.solve(-rp - problem.A * t);
                dc = t + MinvAt * dl1;
            } else {
                dl1.resize(0);
                dc = lltM.solve(rhs);
            }
            // The Schur reduction sheds digits once the barrier weights spread;
            // two refinement rounds on the (dc, dl1) system recover them.
            for (int round = 0; round < 2; ++round) {
                Eigen::VectorXd e1 = rhs - M * dc;
                if (J) {
                    e1.noalias() += problem.A.transpose() * dl1;
                    const Eigen::VectorXd e2 = -rp - problem.A * dc;
                    const Eigen::VectorXd tc = lltM.solve(e1);
                    const Eigen::VectorXd dlc = lltS.solve(e2 - problem.A * tc);
                    dc += tc + MinvAt * dlc;
                    dl1 += dlc;
                } else {
                    dc += lltM.solve(e1);
                }
            }
            if (K) {
                ds = W * dc + rg;
                dl2 = -(rc_comp + sol.lambda2.cwiseProduct(ds)).cwiseQuotient(sol.slack);
            } else {
                ds.resize(0);
                dl2.resize(0);
            }
        };

        Eigen::VectorXd dc, dl1, dl2, ds;
        if (K == 0) {
            // Pure Newton step on the equality KKT system.
            solve_kkt(Eigen::VectorXd(), dc, dl1, dl2, ds);
            if (!dc.allFinite() || (J && !dl1.allFinite())) {
                sol.status = SolveStatus::infeasible;
                return finish(sol);
            }
            sol.c += dc;
            sol.lambda1 += dl1;
            continue;
        }

        // Predictor (affine scaling) step.
        Eigen::VectorXd rc_aff = sol.lambda2.cwiseProduct(sol.slack);
        solve_kkt(rc_aff, dc, dl1, dl2, ds);
        if (!dc.allFinite()) {
            sol.status = SolveStatus::infeasible;
            return finish(sol);
        }
        const double ap_aff = max_step(sol.slack, ds, 1.0);
        const double ad_aff = max_step(sol.lambda2, dl2, 1.0);
        const double mu_aff =
            (sol.lambda2 + ad_aff * dl2).dot(sol.slack + ap_aff * ds) / K;
        double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
        // Keep some centering while the primal is still infeasible; letting mu
        // collapse early strands the iterate off the feasible set.
        if (std::max(nrp, nrg) > 1e-7 * prim_scale) sigma = std::clamp(sigma, 0.1, 1.0);

        // Corrector with centering.
        Eigen::VectorXd rc = rc_aff + dl2.cwiseProduct(ds) -
                             Eigen::VectorXd::Constant(K, sigma * mu);
        solve_kkt(rc, dc, dl1, dl2, ds);
        if (!dc.allFinite()) {
            sol.status = SolveStatus::infeasible;
            return finish(sol);
        }

        // A common step for both sides; asymmetric steps let the duals race
        // ahead of a blocked primal.
        const double alpha = std::min(max_step(sol.slack, ds, opts.fraction_to_boundary),
                                      max_step(sol.lambda2, dl2, opts.fraction_to_boundary));
        sol.c += alpha * dc;
        sol.slack += alpha * ds;
        sol.lambda1 += alpha * dl1;
        sol.lambda2 += alpha * dl2;
    }

    sol.status = SolveStatus::max_iter;
    return finish(sol);
}

KktResiduals kkt_residuals(const QpProblem& problem, const QpSolution& solution) {
    Eigen::MatrixXd W;
    Eigen::VectorXd w;
    problem.one_sided(W, w);
    if (solution.c.size() != problem.num_vars() || solution.lambda1.size() != problem.num_eq() ||
        solution.lambda2.size() != W.rows() || solution.slack.size() != W.rows())
        throw std::invalid_argument("kkt_residuals: dimension mismatch");

    KktResiduals r;
    Eigen::VectorXd st = problem.Q * solution.c;
    if (problem.num_eq()) st -= problem.A.transpose() * solution.lambda1;
    if (W.rows()) st -= W.transpose() * solution.lambda2;
    r.stationarity = st.size() ? st.cwiseAbs().maxCoeff() : 0.0;
    if (problem.num_eq())
        r.primal_eq = (problem.A * solution.c - problem.b).cwiseAbs().maxCoeff();
    if (W.rows()) {
        r.primal_ineq = (W * solution.c - w - solution.slack).cwiseAbs().maxCoeff();
        r.complementarity = std::abs(solution.lambda2.dot(solution.slack));
    }
    return r;
}

}  // namespace perchkit::qp
