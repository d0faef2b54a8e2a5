// Test-only oracles, independent of the library implementation paths they
// check: dense sampling, quadrature, companion-matrix roots, and brute-force
// QP enumeration.
#ifndef PERCHKIT_TESTS_ORACLES_HPP
#define PERCHKIT_TESTS_ORACLES_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <optional>
#include <vector>

namespace oracles {

// Horner evaluation on a raw ascending coefficient vector (deliberately a
// different evaluation scheme from the library's running-power sum).
inline double horner(const std::vector<double>& c, double t) {
    double acc = 0.0;
    for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * t + *it;
    return acc;
}

// Sign-change count over a uniform grid of `samples` points on [t0, tf].
inline int sampled_sign_changes(const std::vector<double>& c, double t0, double tf, int samples) {
    int changes = 0;
    int prev = 0;
    for (int i = 0; i < samples; ++i) {
        const double t = t0 + (tf - t0) * i / (samples - 1);
        const double v = horner(c, t);
        const int s = v > 0.0 ? 1 : (v < 0.0 ? -1 : 0);
        if (s == 0) continue;
        if (prev != 0 && s != prev) ++changes;
        prev = s;
    }
    return changes;
}

// Max over a uniform grid.
inline double grid_max(const std::vector<double>& c, double t0, double tf, int samples) {
    double m = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < samples; ++i) {
        const double t = t0 + (tf - t0) * i / (samples - 1);
        m = std::max(m, horner(c, t));
    }
    return m;
}

// All complex roots via the companion matrix (Eigen eigenvalues).
inline std::vector<std::complex<double>> companion_roots(const std::vector<double>& c) {
    std::vector<double> cc = c;
    while (cc.size() > 1 && cc.back() == 0.0) cc.pop_back();
    const int n = static_cast<int>(cc.size()) - 1;
    if (n < 1) return {};
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) C(i, i - 1) = 1.0;
    for (int i = 0; i < n; ++i) C(i, n - 1) = -cc[static_cast<size_t>(i)] / cc.back();
    Eigen::EigenSolver<Eigen::MatrixXd> es(C, /*computeEigenvectors=*/false);
    std::vector<std::complex<double>> roots(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) roots[static_cast<size_t>(i)] = es.eigenvalues()[i];
    return roots;
}

// Adaptive-ish quadrature: composite Simpson with interval doubling until the
// estimate settles.
inline double quad(const std::function<double(double)>& f, double a, double b,
                   double rel_tol = 1e-10) {
    auto simpson = [&](int n) {
        const double h = (b - a) / n;
        double s = f(a) + f(b);
        for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
        return s * h / 3.0;
    };
    double prev = simpson(64);
    for (int n = 128; n <= 1 << 20; n *= 2) {
        const double cur = simpson(n);
        if (std::abs(cur - prev) <= rel_tol * std::max(1.0, std::abs(cur))) return cur;
        prev = cur;
    }
    return prev;
}

// Global minimum of min c'Qc s.t. Ac=b, lo <= c <= hi by enumerating the 3^n
// bound-activity patterns of the box. Exact for convex QPs of small n.
inline std::optional<double> brute_force_box_qp(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& A,
                                                const Eigen::VectorXd& b, const Eigen::VectorXd& lo,
                                                const Eigen::VectorXd& hi) {
    const int n = static_cast<int>(Q.rows());
    const int J = static_cast<int>(A.rows());
    std::optional<double> best;
    std::vector<int> state(static_cast<size_t>(n), 0);  // 0 free, 1 at lo, 2 at hi
    const long total = static_cast<long>(std::pow(3.0, n));
    for (long mask = 0; mask < total; ++mask) {
        long m = mask;
        for (int i = 0; i < n; ++i) {
            state[static_cast<size_t>(i)] = static_cast<int>(m % 3);
            m /= 3;
        }
        std::vector<int> free_idx;
        Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < n; ++i) {
            if (state[static_cast<size_t>(i)] == 0)
                free_idx.push_back(i);
            else
                c[i] = state[static_cast<size_t>(i)] == 1 ? lo[i] : hi[i];
        }
        const int nf = static_cast<int>(free_idx.size());
        if (nf > 0) {
            Eigen::MatrixXd Qff(nf, nf), Af(J, nf);
            Eigen::VectorXd g = Eigen::VectorXd::Zero(nf);
            for (int r = 0; r < nf; ++r) {
                for (int cidx = 0; cidx < nf; ++cidx) Qff(r, cidx) = Q(free_idx[r], free_idx[cidx]);
                double acc = 0.0;
                for (int i = 0; i < n; ++i)
                    if (state[static_cast<size_t>(i)] != 0) acc += Q(free_idx[r], i) * c[i];
                g[r] = acc;
                for (int j = 0; j < J; ++j) Af(j, r) = A(j, free_idx[r]);
            }
            Eigen::VectorXd rhs_b = b;
            for (int j = 0; j < J; ++j) {
                double acc = 0.0;
                for (int i = 0; i < n; ++i)
                    if (state[static_cast<size_t>(i)] != 0) acc += A(j, i) * c[i];
                rhs_b[j] -= acc;
            }
            Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nf + J, nf + J);
            kkt.topLeftCorner(nf, nf) = 2.0 * Qff;
            if (J) {
                kkt.topRightCorner(nf, J) = Af.transpose();
                kkt.bottomLeftCorner(J, nf) = Af;
            }
            Eigen::VectorXd rhs(nf + J);
            rhs.head(nf) = -2.0 * g;
            if (J) rhs.tail(J) = rhs_b;
            Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
            if (!lu.isInvertible()) continue;
            const Eigen::VectorXd sol = lu.solve(rhs);
            for (int r = 0; r < nf; ++r) c[free_idx[r]] = sol[r];
        }
        bool ok = true;
        for (int i = 0; i < n && ok; ++i) ok = c[i] >= lo[i] - 1e-9 && c[i] <= hi[i] + 1e-9;
        if (ok && J) ok = (A * c - b).cwiseAbs().maxCoeff() < 1e-8;
        if (!ok) continue;
        const double obj = c.dot(Q * c);
        if (!best || obj < *best) best = obj;
    }
    return best;
}

}  // namespace oracles

#endif  // PERCHKIT_TESTS_ORACLES_HPP
