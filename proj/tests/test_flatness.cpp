#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "perchkit/flatness.hpp"

using namespace perchkit;
using namespace perchkit::flat;
using Eigen::Matrix3d;
using Eigen::Vector3d;
using poly::Polynomial;
using poly::Spline;

namespace {

const VehicleParams kVp{};

Spline hover_spline(double duration = 2.0, double psi_rate = 0.0) {
    Spline::Segment seg;
    seg.axes = {Polynomial::constant(0.0), Polynomial::constant(0.0), Polynomial::constant(1.0),
                Polynomial({0.0, psi_rate})};
    seg.duration = duration;
    return Spline({std::move(seg)});
}

// Mild random 4-axis spline; rejection-filtered by the caller.
Spline random_spline(std::mt19937_64& rng, double duration) {
    std::normal_distribution<double> g(0.0, 1.0);
    Spline::Segment seg;
    seg.duration = duration;
    double fact = 1.0;
    std::vector<double> scale(8);
    for (int n = 0; n < 8; ++n) {
        scale[static_cast<size_t>(n)] = 1.0 / fact;
        fact *= std::max(1, n + 1) * 1.6;
    }
    for (int ax = 0; ax < 4; ++ax) {
        std::vector<double> c(8);
        const double amp = ax == 3 ? 0.25 : 1.2;
        for (int n = 0; n < 8; ++n) c[static_cast<size_t>(n)] = amp * scale[static_cast<size_t>(n)] * g(rng);
        seg.axes.push_back(Polynomial(c));
    }
    return Spline({std::move(seg)});
}

bool mild_and_feasible(const Spline& s, const VehicleParams& vp) {
    for (int i = 0; i <= 200; ++i) {
        const double t = s.total_time() * i / 200.0;
        const FlatState fs = flat_state_at(s, t);
        const double tau = thrust_norm(fs.a, vp);
        if (tau < vp.tau_min || tau > vp.tau_max) return false;
        Matrix3d R;
        try {
            R = rotation_from_flat(fs.a, fs.psi, vp);
        } catch (const std::domain_error&) {
            return false;
        }
        const Vector3d eul = euler_zyx(R);
        if (std::abs(eul[2]) > M_PI / 4.0 * 0.95) return false;
        if (std::abs(fs.psi_dot) > 1.2) return false;
    }
    return true;
}

Vector3d omega_by_finite_difference(const Spline& s, double t, const VehicleParams& vp, double h) {
    const FlatState f0 = flat_state_at(s, t - h);
    const FlatState f1 = flat_state_at(s, t + h);
    const Matrix3d R0 = rotation_from_flat(f0.a, f0.psi, vp);
    const Matrix3d R1 = rotation_from_flat(f1.a, f1.psi, vp);
    const FlatState fc = flat_state_at(s, t);
    const Matrix3d R = rotation_from_flat(fc.a, fc.psi, vp);
    const Matrix3d Om = R.transpose() * (R1 - R0) / (2.0 * h);
    return {Om(2, 1), Om(0, 2), Om(1, 0)};
}

}  // namespace

TEST_CASE("thrust_norm") {
    CHECK(thrust_norm(Vector3d::Zero(), kVp) == doctest::Approx(9.81));
    CHECK(thrust_norm(Vector3d(0, 0, 9.81), kVp) == doctest::Approx(19.62));
    // 90-degree perch endpoint, alpha = 4: thrust aligns with the pad normal.
    CHECK(thrust_norm(Vector3d(4.0, 0, -9.81), kVp) == doctest::Approx(4.0));
}

TEST_CASE("b3_axis") {
    CHECK(b3_axis(Vector3d::Zero(), kVp).isApprox(Vector3d::UnitZ(), 1e-12));
    CHECK(b3_axis(Vector3d(4.0, 0, -9.81), kVp).isApprox(Vector3d::UnitX(), 1e-12));
    CHECK(b3_axis(Vector3d(0, 9.81, -9.81), kVp).isApprox(Vector3d::UnitY(), 1e-12));
    CHECK_THROWS_AS(b3_axis(Vector3d(0, 0, -9.81), kVp), std::domain_error);
}

TEST_CASE("rotation_from_flat basics") {
    CHECK(rotation_from_flat(Vector3d::Zero(), 0.0, kVp).isApprox(Matrix3d::Identity(), 1e-12));
    Matrix3d Rz90;
    Rz90 << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    CHECK(rotation_from_flat(Vector3d::Zero(), M_PI / 2, kVp).isApprox(Rz90, 1e-12));
    // b3 = e2 and psi = 0 puts b2_des parallel to b3.
    CHECK_THROWS_AS(rotation_from_flat(Vector3d(0, 9.81, -9.81), 0.0, kVp), std::domain_error);
}

TEST_CASE("rotation_from_flat is SO(3) and b3 matches") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> g(0.0, 3.0);
    std::uniform_real_distribution<double> yaw(-M_PI, M_PI);
    int done = 0;
    while (done < 10000) {
        const Vector3d a(g(rng), g(rng), g(rng));
        const double psi = yaw(rng);
        const Vector3d f = a + 9.81 * Vector3d::UnitZ();
        if (f.norm() < 0.5) continue;
        Matrix3d R;
        try {
            R = rotation_from_flat(a, psi, kVp);
        } catch (const std::domain_error&) {
            continue;
        }
        CHECK((R.transpose() * R - Matrix3d::Identity()).norm() < 1e-10);
        CHECK(std::abs(R.determinant() - 1.0) < 1e-9);
        CHECK((R.col(2) - b3_axis(a, kVp)).norm() < 1e-10);
        ++done;
    }
}

TEST_CASE("omega_from_flat hover cases") {
    FlatState s;
    CHECK(omega_from_flat(s, kVp).isApprox(Vector3d::Zero(), 1e-12));
    s.psi_dot = 1.0;
    CHECK(omega_from_flat(s, kVp).isApprox(Vector3d(0, 0, 1), 1e-12));
    s.psi_dot = 0.0;
    s.j = Vector3d(9.81, 0, 0);
    CHECK(omega_from_flat(s, kVp).isApprox(Vector3d(0, 1, 0), 1e-9));
}

TEST_CASE("omega_from_flat matches rotation finite differences") {
    std::mt19937_64 rng(22);
    int done = 0;
    double worst = 0.0;
    while (done < 100) {
        const Spline s = random_spline(rng, 2.0);
        if (!mild_and_feasible(s, kVp)) continue;
        for (int i = 1; i < 10; ++i) {
            const double t = s.total_time() * i / 10.0;
            const FlatState fs = flat_state_at(s, t);
            const Vector3d w = omega_from_flat(fs, kVp);
            const Vector3d wfd = omega_by_finite_difference(s, t, kVp, 1e-5);
            worst = std::max(worst, (w - wfd).cwiseAbs().maxCoeff());
        }
        ++done;
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("reference_command") {
    const Spline hover = hover_spline();
    const auto cmd = reference_command(hover, 1.0, kVp);
    CHECK(cmd.rotation.isApprox(Matrix3d::Identity(), 1e-12));
    CHECK(cmd.omega.norm() < 1e-12);
    CHECK(cmd.omega_dot.norm() < 1e-9);

    const Spline yawing = hover_spline(2.0, 1.0);
    const auto cmd2 = reference_command(yawing, 0.7, kVp);
    CHECK(cmd2.omega.isApprox(Vector3d(0, 0, 1), 1e-9));
}

TEST_CASE("thrust_sq_poly") {
    const Spline hover = hover_spline();
    const Polynomial p = thrust_sq_poly(hover, 0, kVp);
    CHECK(p.degree() == 0);
    CHECK(p.eval(0.3) == doctest::Approx(96.2361));

    // x(t) = t^3/6 has xdd = t.
    Spline::Segment seg;
    seg.axes = {Polynomial({0, 0, 0, 1.0 / 6.0}), Polynomial::constant(0.0),
                Polynomial::constant(0.0), Polynomial::constant(0.0)};
    seg.duration = 1.0;
    const Spline ramp({seg});
    const Polynomial q = thrust_sq_poly(ramp, 0, kVp);
    for (double t : {0.0, 0.4, 1.0})
        CHECK(q.eval(t) == doctest::Approx(t * t + 96.2361));

    std::mt19937_64 rng(23);
    int done = 0;
    while (done < 20) {
        const Spline s = random_spline(rng, 1.5);
        if (!mild_and_feasible(s, kVp)) continue;
        const Polynomial tp = thrust_sq_poly(s, 0, kVp);
        CHECK(tp.degree() == 2 * (s.segment(0).axes[0].degree() - 2));
        for (int i = 0; i <= 1000; ++i) {
            const double t = s.total_time() * i / 1000.0;
            const double truth = std::pow(thrust_norm(flat_state_at(s, t).a, kVp), 2);
            CHECK(tp.eval(t) == doctest::Approx(truth).epsilon(1e-8));
        }
        ++done;
    }
}

TEST_CASE("actuator bounds: hover special cases") {
    const Spline hover = hover_spline();
    const auto tr = actuator_bound_poly(hover, 0, BoundKind::thrust_rate_sq, kVp);
    REQUIRE(tr.size() == 1);
    CHECK(tr[0].is_zero());

    const auto om = actuator_bound_poly(hover, 0, BoundKind::omega_sq, kVp);
    REQUIRE(om.size() == 1);
    CHECK(om[0].degree() == 0);
    CHECK(om[0].eval(0.0) == doctest::Approx(2.5));
}

TEST_CASE("gyroscopic bound special cases") {
    const Spline hover = hover_spline();
    const auto k = gyroscopic_bound(hover, 0, kVp);
    for (const auto& p : k)
        for (double t : {0.0, 1.0}) CHECK(p.eval(t) >= 0.0);

    VehicleParams iso = kVp;
    iso.inertia = (0.006 * Eigen::Vector3d::Ones()).asDiagonal();
    const auto kz = gyroscopic_bound(hover, 0, iso);
    for (const auto& p : kz) CHECK(p.is_zero());

    VehicleParams bad = kVp;
    bad.inertia(0, 1) = 1e-3;
    CHECK_THROWS_AS(gyroscopic_bound(hover, 0, bad), std::invalid_argument);
}

TEST_CASE("actuator bounds dominate sampled truth on mild trajectories") {
    std::mt19937_64 rng(24);
    int done = 0;
    while (done < 15) {
        const Spline s = random_spline(rng, 1.5);
        if (!mild_and_feasible(s, kVp)) continue;
        const auto btr = actuator_bound_poly(s, 0, BoundKind::thrust_rate_sq, kVp)[0];
        const auto bom = actuator_bound_poly(s, 0, BoundKind::omega_sq, kVp)[0];
        const auto bod = actuator_bound_poly(s, 0, BoundKind::omega_dot_sq, kVp)[0];
        const auto bmo = actuator_bound_poly(s, 0, BoundKind::moment, kVp);
        const auto gyro = gyroscopic_bound(s, 0, kVp);
        REQUIRE(bmo.size() == 3);
        const Matrix3d J = kVp.inertia;
        for (int i = 1; i < 1000; ++i) {
            const double t = s.total_time() * i / 1000.0;
            const FlatState fs = flat_state_at(s, t);
            const Matrix3d R = rotation_from_flat(fs.a, fs.psi, kVp);
            const Vector3d w = omega_from_flat(fs, kVp);
            const double tau = thrust_norm(fs.a, kVp);
            const double taudot = kVp.mass * R.col(2).dot(fs.j);
            (void)tau;
            CHECK(btr.eval(t) >= taudot * taudot - 1e-9);
            CHECK(bom.eval(t) >= w.squaredNorm() - 1e-9);

            const double h = 1e-5;
            const Vector3d wm = omega_from_flat(flat_state_at(s, t - h), kVp);
            const Vector3d wp = omega_from_flat(flat_state_at(s, t + h), kVp);
            const Vector3d wdot = (wp - wm) / (2 * h);
            CHECK(bod.eval(t) >= wdot.squaredNorm() - 1e-6);

            const Vector3d gy = w.cross(J * w);
            const Vector3d moment = J * wdot + gy;
            for (int kc = 0; kc < 3; ++kc) {
                CHECK(gyro[static_cast<size_t>(kc)].eval(t) >= std::abs(gy[kc]) - 1e-9);
                CHECK(bmo[static_cast<size_t>(kc)].eval(t) >= std::abs(moment[kc]) - 1e-6);
            }
        }
        ++done;
    }
}
