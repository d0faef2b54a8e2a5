#ifndef PERCHKIT_QP_HPP
#define PERCHKIT_QP_HPP

#include <Eigen/Dense>
#include <limits>

namespace perchkit::qp {

// min c'Qc  s.t.  Ac = b,  y <= Gc <= z.
// Bounds may be +-inf for one-sided rows. Internally the two-sided block is
// split into one-sided rows W c >= w with W = [G_rows_with_finite_y;
// -G_rows_with_finite_z], in that order; multipliers and slacks in QpSolution
// follow this split layout.
struct QpProblem {
    Eigen::MatrixXd Q;   // n x n, symmetric PSD
    Eigen::MatrixXd A;   // J x n
    Eigen::VectorXd b;   // J
    Eigen::MatrixXd G;   // K x n
    Eigen::VectorXd y;   // K lower bounds (-inf allowed)
    Eigen::VectorXd z;   // K upper bounds (+inf allowed)

    int num_vars() const { return static_cast<int>(Q.rows()); }
    int num_eq() const { return static_cast<int>(A.rows()); }
    int num_ineq() const { return static_cast<int>(G.rows()); }

    // One-sided form of the inequality block.
    void one_sided(Eigen::MatrixXd& W, Eigen::VectorXd& w) const;
};

enum class SolveStatus { optimal, infeasible, max_iter };

struct QpSolution {
    Eigen::VectorXd c;        // n
    Eigen::VectorXd lambda1;  // J equality multipliers
    Eigen::VectorXd lambda2;  // split-row inequality multipliers (>= 0)
    Eigen::VectorXd slack;    // split-row slacks (>= 0)
    SolveStatus status = SolveStatus::max_iter;
    int iterations = 0;
};

struct SolverOptions {
    int max_iters = 100;
    double fraction_to_boundary = 0.995;
    // Stagnation rule: infeasible when mu stays above this for `stall_iters`
    // consecutive iterations while the primal residual exceeds it too.
    double stall_tol = 1e-6;
    int stall_iters = 10;
    bool validate = true;  // symmetry / PSD / bound-order checks
    bool trace = false;    // per-iteration residual dump to stderr
};

// Mehrotra predictor-corrector primal-dual interior point. Deterministic:
// identical inputs give identical outputs.
QpSolution solve_qp(const QpProblem& problem, const SolverOptions& opts = {});

struct KktResiduals {
    double stationarity = 0.0;    // ||Qc - A'l1 - W'l2||_inf
    double primal_eq = 0.0;       // ||Ac - b||_inf
    double primal_ineq = 0.0;     // ||Wc - w - s||_inf
    double complementarity = 0.0; // l2's
};

KktResiduals kkt_residuals(const QpProblem& problem, const QpSolution& solution);

inline double inf() { return std::numeric_limits<double>::infinity(); }

}  // namespace perchkit::qp

#endif  // PERCHKIT_QP_HPP
