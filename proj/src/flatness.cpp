#include "perchkit/flatness.hpp"

#include <cmath>
#include <stdexcept>

namespace perchkit::flat {

using Eigen::Matrix3d;
using Eigen::Vector3d;
using poly::Polynomial;
using poly::Spline;

void VehicleParams::validate() const {
    if (!(mass > 0.0)) throw std::invalid_argument("VehicleParams: mass must be > 0");
    if (!(tau_min > 0.0 && tau_min < tau_max))
        throw std::invalid_argument("VehicleParams: need 0 < tau_min < tau_max");
    if (inertia.diagonal().minCoeff() <= 0.0)
        throw std::invalid_argument("VehicleParams: inertia diagonal must be positive");
    if (k_x.minCoeff() <= 0.0 || k_v.minCoeff() <= 0.0 || k_rot.minCoeff() <= 0.0 ||
        k_omega.minCoeff() <= 0.0)
        throw std::invalid_argument("VehicleParams: gains must be positive");
}

double thrust_norm(const Vector3d& a, const VehicleParams& params) {
    return params.mass * (a + params.gravity * Vector3d::UnitZ()).norm();
}

Vector3d b3_axis(const Vector3d& a, const VehicleParams& params) {
    const Vector3d f = a + params.gravity * Vector3d::UnitZ();
    const double n = f.norm();
    if (n <= 1e-6) throw std::domain_error("b3_axis: free-fall singularity");
    return f / n;
}

Matrix3d rotation_from_flat(const Vector3d& a, double psi_des, const VehicleParams& params) {
    const Vector3d b3 = b3_axis(a, params);
    const Vector3d b2_des(-std::sin(psi_des), std::cos(psi_des), 0.0);
    const Vector3d cross = b2_des.cross(b3);
    const double n = cross.norm();
    if (n <= 1e-6) throw std::domain_error("rotation_from_flat: roll singularity (b2_des || b3)");
    const Vector3d b1 = cross / n;
    const Vector3d b2 = b3.cross(b1);
    Matrix3d R;
    R.col(0) = b1;
    R.col(1) = b2;
    R.col(2) = b3;
    return R;
}

Vector3d euler_zyx(const Matrix3d& R) {
    const double theta = -std::asin(std::clamp(R(2, 0), -1.0, 1.0));
    double phi = 0.0, psi = 0.0;
    if (std::hypot(R(2, 1), R(2, 2)) > 1e-9) {
        phi = std::atan2(R(2, 1), R(2, 2));
        psi = std::atan2(R(1, 0), R(0, 0));
    } else {
        // Pitch at +-90 deg: only psi -+ phi is observable; park roll at zero.
        psi = std::atan2(-R(0, 1), R(1, 1));
    }
    return {psi, theta, phi};
}

Vector3d omega_from_flat(const FlatState& state, const VehicleParams& params) {
    const double tau = thrust_norm(state.a, params);
    if (!(tau > 0.0)) throw std::domain_error("omega_from_flat: thrust must be positive");
    const Matrix3d R = rotation_from_flat(state.a, state.psi, params);
    const double m = params.mass;
    const double w1 = -(m / tau) * R.col(1).dot(state.j);
    const double w2 = (m / tau) * R.col(0).dot(state.j);
    const Vector3d eul = euler_zyx(R);
    const double theta = eul[1], phi = eul[2];
    const double cphi = std::cos(phi);
    if (std::abs(cphi) <= 1e-6) throw std::domain_error("omega_from_flat: roll at +-90 deg");
    const double w3 = (std::cos(theta) / cphi) * state.psi_dot - w2 * std::tan(phi);
    return {w1, w2, w3};
}

FlatState flat_state_at(const Spline& traj, double t) {
    FlatState s;
    for (int ax = 0; ax < 3; ++ax) {
        s.x[ax] = traj.eval(ax, t, 0);
        s.v[ax] = traj.eval(ax, t, 1);
        s.a[ax] = traj.eval(ax, t, 2);
        s.j[ax] = traj.eval(ax, t, 3);
        s.snap[ax] = traj.eval(ax, t, 4);
    }
    if (traj.num_axes() > 3) {
        s.psi = traj.eval(3, t, 0);
        s.psi_dot = traj.eval(3, t, 1);
        s.psi_ddot = traj.eval(3, t, 2);
    }
    return s;
}

ReferenceCommand reference_command(const Spline& traj, double t, const VehicleParams& params) {
    const FlatState fs = flat_state_at(traj, t);
    ReferenceCommand cmd;
    cmd.rotation = rotation_from_flat(fs.a, fs.psi, params);
    cmd.omega = omega_from_flat(fs, params);

    const double h = 1e-4;
    const double t1 = std::max(t - h, 0.0);
    const double t2 = std::min(t + h, traj.total_time());
    const Vector3d w1 = omega_from_flat(flat_state_at(traj, t1), params);
    const Vector3d w2 = omega_from_flat(flat_state_at(traj, t2), params);
    cmd.omega_dot = (t2 > t1) ? ((w2 - w1) / (t2 - t1)).eval() : Vector3d::Zero();
    return cmd;
}

namespace {

// Per-axis derivative polynomials of one segment.
std::array<Polynomial, 3> axis_derivs(const Spline& traj, int segment, int order) {
    const auto& seg = traj.segment(segment);
    return {seg.axes[0].derivative(order), seg.axes[1].derivative(order),
            seg.axes[2].derivative(order)};
}

// |x| <= 0.1 x^2 + 2.5, lifted to polynomials: takes a bound on x^2.
Polynomial abs_surrogate(const Polynomial& x_sq_bound) {
    return 0.1 * x_sq_bound + 2.5;
}

}  // namespace

Polynomial thrust_sq_poly(const Spline& traj, int segment, const VehicleParams& params) {
    const auto acc = axis_derivs(traj, segment, 2);
    const double m = params.mass;
    return vec_norm_sq(m * acc[0], m * acc[1], m * acc[2] + m * params.gravity);
}

std::vector<Polynomial> actuator_bound_poly(const Spline& traj, int segment, BoundKind kind,
                                            const VehicleParams& params) {
    const double m = params.mass;
    const double mt = m / params.tau_min;  // thrust replaced by its lower bound
    const auto jerk = axis_derivs(traj, segment, 3);
    const Polynomial nj2 = vec_norm_sq(jerk);

    Polynomial pd = Polynomial::zero();
    Polynomial pdd = Polynomial::zero();
    if (traj.num_axes() > 3) {
        pd = traj.segment(segment).axes[3].derivative(1);
        pdd = traj.segment(segment).axes[3].derivative(2);
    }
    const Polynomial pd2 = pd * pd;

    switch (kind) {
        case BoundKind::thrust_rate_sq:
            // taudot^2 <= (m ||j||)^2
            return {m * m * nj2};
        case BoundKind::omega_sq:
            // ||Omega||^2 <= 5m/2tau ||j||^2 + psidot^2/2 + m/10tau ||j||^2 psidot^2 + 2.5
            return {2.5 * mt * nj2 + 0.5 * pd2 + (mt / 10.0) * (nj2 * pd2) + 2.5};
        default:
            break;
    }

    const auto snap = axis_derivs(traj, segment, 4);
    const Polynomial ns2 = vec_norm_sq(snap);
    const Polynomial pdd2 = pdd * pdd;

    // First two angular-acceleration components, with |taudot| <= m||j||
    // and the trailing omega3 factor replaced by its surrogate bound.
    const Polynomial F = 2.0 * mt * ns2 + 4.0 * mt * mt * (abs_surrogate(nj2) * nj2) +
                         mt * (nj2 * (abs_surrogate(pd2) + mt * abs_surrogate(nj2)));

    // Pieces feeding the omega3dot bound.
    const Polynomial w2_sq = 2.0 * mt * nj2;
    const Polynomial w1w2_sq = mt * mt * (nj2 * nj2);
    const Polynomial w3_sq =
        0.5 * pd2 + 0.5 * mt * nj2 + (mt / 10.0) * (nj2 * pd2) + 2.5;
    const double s2 = std::sqrt(2.0) / 2.0;
    const Polynomial G = s2 * (abs_surrogate(pdd2) + abs_surrogate(F) + abs_surrogate(w1w2_sq) +
                               pd2 + abs_surrogate(pd2 * w2_sq)) +
                         abs_surrogate(w3_sq);
    const Polynomial wdot_sq = F + G * G;

    if (kind == BoundKind::omega_dot_sq) return {wdot_sq};
    if (kind != BoundKind::moment) throw std::invalid_argument("actuator_bound_poly: unknown kind");

    const auto K = gyroscopic_bound(traj, segment, params);
    const Polynomial wdot_abs = abs_surrogate(wdot_sq);  // |Omegadot_i| <= ||Omegadot||
    std::vector<Polynomial> mb;
    mb.reserve(3);
    for (int i = 0; i < 3; ++i)
        mb.push_back(params.inertia(i, i) * wdot_abs + K[static_cast<size_t>(i)]);
    return mb;
}

std::array<Polynomial, 3> gyroscopic_bound(const Spline& traj, int segment,
                                           const VehicleParams& params) {
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            if (r != c && std::abs(params.inertia(r, c)) > 1e-15)
                throw std::invalid_argument("gyroscopic_bound: non-diagonal inertia unsupported");

    const double m = params.mass;
    const double mt = m / params.tau_min;
    const auto jerk = axis_derivs(traj, segment, 3);
    const Polynomial nj2 = vec_norm_sq(jerk);
    Polynomial pd = traj.num_axes() > 3 ? traj.segment(segment).axes[3].derivative(1)
                                        : Polynomial::zero();
    const Polynomial pd2 = pd * pd;

    const double jx = params.inertia(0, 0), jy = params.inertia(1, 1), jz = params.inertia(2, 2);
    const double i1 = std::abs(jz - jy), i2 = std::abs(jx - jz), i3 = std::abs(jy - jx);
    const double s2 = std::sqrt(2.0) / 2.0;

    // (sqrt2/2)(m/tau) ||j|| (|psidot| + (m/tau)||j||), with ||j|| |psidot|
    // through the surrogate so it stays polynomial.
    const Polynomial tilt = s2 * mt * (abs_surrogate(nj2 * pd2) + mt * nj2);
    const Polynomial spin = mt * mt * nj2;
    return {i1 * tilt, i2 * tilt, i3 * spin};
}

}  // namespace perchkit::flat
