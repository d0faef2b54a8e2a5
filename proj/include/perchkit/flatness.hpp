#ifndef PERCHKIT_FLATNESS_HPP
#define PERCHKIT_FLATNESS_HPP

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "perchkit/polynomial.hpp"

namespace perchkit::flat {

struct VehicleParams {
    double mass = 1.0;
    Eigen::Matrix3d inertia =
        Eigen::Vector3d(0.005, 0.005, 0.009).asDiagonal();  // kg m^2
    double tau_min = 0.5;   // N
    double tau_max = 25.0;  // N
    double gravity = 9.81;  // m/s^2
    // Geometric-controller gains (diagonal).
    Eigen::Vector3d k_x{6.0, 6.0, 6.0};
    Eigen::Vector3d k_v{4.0, 4.0, 4.0};
    Eigen::Vector3d k_rot{3.0, 3.0, 3.0};
    Eigen::Vector3d k_omega{0.3, 0.3, 0.3};

    void validate() const;  // throws std::invalid_argument on bad values
};

// Flat outputs {x, y, z, psi} and the derivatives the planner works with.
struct FlatState {
    Eigen::Vector3d x = Eigen::Vector3d::Zero();
    Eigen::Vector3d v = Eigen::Vector3d::Zero();
    Eigen::Vector3d a = Eigen::Vector3d::Zero();
    Eigen::Vector3d j = Eigen::Vector3d::Zero();
    Eigen::Vector3d snap = Eigen::Vector3d::Zero();
    double psi = 0.0;
    double psi_dot = 0.0;
    double psi_ddot = 0.0;
};

// ||m a + m g e3||.
double thrust_norm(const Eigen::Vector3d& a, const VehicleParams& params);

// Body z axis implied by an acceleration; throws near free fall.
Eigen::Vector3d b3_axis(const Eigen::Vector3d& a, const VehicleParams& params);

// Attitude from acceleration and desired yaw: columns [b1 b2 b3] with
// b2_des = [-sin psi, cos psi, 0]. Throws when b2_des is parallel to b3
// (roll at +-90 deg).
Eigen::Matrix3d rotation_from_flat(const Eigen::Vector3d& a, double psi_des,
                                   const VehicleParams& params);

// Z-Y-X Euler angles (psi, theta, phi) of a rotation matrix. At the pitch
// gimbal lock the roll is reported as 0 and yaw absorbs the freedom.
Eigen::Vector3d euler_zyx(const Eigen::Matrix3d& R);

// Body angular velocity along a flat trajectory. Throws when thrust vanishes
// or the roll approaches +-90 deg.
Eigen::Vector3d omega_from_flat(const FlatState& state, const VehicleParams& params);

struct ReferenceCommand {
    Eigen::Matrix3d rotation;
    Eigen::Vector3d omega;
    Eigen::Vector3d omega_dot;
};

// Commanded attitude, body rate, and body-rate derivative at time t of a
// 4-axis trajectory. omega_dot uses a central difference (step 1e-4 s)
// with the stencil clamped inside the trajectory domain.
ReferenceCommand reference_command(const poly::Spline& traj, double t,
                                   const VehicleParams& params);

// Flat outputs and derivatives of a 4-axis spline (x,y,z,yaw) at time t.
FlatState flat_state_at(const poly::Spline& traj, double t);

// ||m xdd(t) + m g e3||^2 on a segment's local time. Checking it against
// tau_max^2 (and its negation against -tau_min^2) realizes the thrust bound.
poly::Polynomial thrust_sq_poly(const poly::Spline& traj, int segment,
                                const VehicleParams& params);

enum class BoundKind { thrust_rate_sq, omega_sq, omega_dot_sq, moment };

// Polynomial upper bounds on actuator quantities over a segment, valid under
// the |roll| <= pi/4 assumption. Thrust in denominators is replaced by
// tau_min and |x| by the surrogate 0.1 x^2 + 2.5 so the bound stays
// polynomial. Returns one polynomial, or three (componentwise) for moment.
std::vector<poly::Polynomial> actuator_bound_poly(const poly::Spline& traj, int segment,
                                                  BoundKind kind, const VehicleParams& params);

// Componentwise polynomial bound on |Omega x J Omega| for diagonal inertia.
std::array<poly::Polynomial, 3> gyroscopic_bound(const poly::Spline& traj, int segment,
                                                 const VehicleParams& params);

}  // namespace perchkit::flat

#endif  // PERCHKIT_FLATNESS_HPP
