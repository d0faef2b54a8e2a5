#ifndef PERCHKIT_PLANNER_HPP
#define PERCHKIT_PLANNER_HPP

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "perchkit/flatness.hpp"
#include "perchkit/polynomial.hpp"
#include "perchkit/qp.hpp"

namespace perchkit::planner {

// Landing-pad frame. Column s3 is the outward surface normal (the body
// thrust axis at contact); s1 and s2 span the pad, s1 pointing down-slope.
struct PerchTarget {
    Eigen::Vector3d s = Eigen::Vector3d::Zero();
    Eigen::Matrix3d R_S = Eigen::Matrix3d::Identity();

    Eigen::Vector3d s1() const { return R_S.col(0); }
    Eigen::Vector3d s2() const { return R_S.col(1); }
    Eigen::Vector3d s3() const { return R_S.col(2); }
    double incline_deg() const;  // angle between s3 and vertical
    void validate() const;       // R_S in SO(3) within 1e-9

    // Pad at `center` tilted `incline_deg` about the (yawed) e2 axis:
    // 0 deg = floor pad (s3 = e3), 90 deg = wall pad with horizontal normal.
    static PerchTarget from_incline(const Eigen::Vector3d& center, double incline_deg,
                                    double yaw_deg = 0.0);
};

struct PlanParams {
    double alpha = 4.0;  // endpoint thrust magnitude / mass, m/s^2
    double q = 0.1;      // pre-impact acceleration tolerance
    double t_k = 0.15;   // pre-impact window, s
    double dt = 0.01;    // band sampling step, s

    // Endpoint velocity, physical roles: v_s1 is the speed pressed into the
    // pad along the inward normal (the attach momentum), v_s3 the signed slide
    // along the pad's slope axis with negative values arriving in descent.
    // nullopt leaves the component free.
    std::optional<double> v_s1 = 0.3;
    std::optional<double> v_s2 = 0.0;
    std::optional<double> v_s3 = -2.0;

    int deriv_order = 4;  // cost minimizes the j-th derivative
    int degree = 9;
    int num_segments = 2;

    // FoV constraint (linearized around the previous trajectory).
    bool fov_enabled = true;
    int n_p = 8;
    double fov_ratio = std::tan(35.0 * M_PI / 180.0);  // r/h of the cone
    double trust_pos = 0.05;   // Eq-uclidean trust radii; boxes use radius/sqrt(3)
    double trust_acc = 0.2;
    double trust_yaw = 0.1;
    Eigen::Vector3d camera_axis_body = Eigen::Vector3d::UnitX();

    // Initial-time heuristic and the stretch loop.
    double v_avg = 1.5;
    double time_scale = 1.0;              // scales the heuristic (test hook)
    std::optional<double> total_time;     // overrides the heuristic entirely
    double time_stretch = 1.2;
    int max_stretch_iters = 20;

    // Opt-in appendix-bound certification on top of the thrust check.
    bool strict_bounds = false;
    double omega_max = 13.0;       // rad/s
    double thrust_rate_max = 80.0; // N/s
    double omega_dot_max = 250.0;  // rad/s^2
    double moment_max = 4.0;       // N m, componentwise

    void validate() const;
};

// Column layout of the spline QP: axis-major, then segment, then ascending
// power; coefficients are in each segment's local time.
struct SplineLayout {
    int axes = 4;
    int degree = 9;
    std::vector<double> durations;

    int coeffs_per_seg() const { return degree + 1; }
    int num_segments() const { return static_cast<int>(durations.size()); }
    int cols() const { return axes * num_segments() * coeffs_per_seg(); }
    int col(int axis, int seg, int n) const {
        return (axis * num_segments() + seg) * coeffs_per_seg() + n;
    }
    double total_time() const;
    std::pair<int, double> locate(double t) const;  // global -> (segment, local)

    // Writes d^order(t^n)/dt^order values for one axis/segment into `row`.
    void add_basis(Eigen::Ref<Eigen::RowVectorXd> row, int axis, int seg, int order,
                   double t_local, double coeff = 1.0) const;
};

struct EqRows {
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    void append(const EqRows& other);
};

struct IneqRows {
    Eigen::MatrixXd G;
    Eigen::VectorXd lo, hi;
    void append(const IneqRows& other);
};

// Q with c'Qc = integral of ||d^j P/dt^j||^2 over all segments and axes.
// Segments of degree < j contribute a zero block (the derivative vanishes).
Eigen::MatrixXd build_min_deriv_cost(const SplineLayout& layout, int j);

// Endpoint side of the boundary conditions.
struct EndpointSpec {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    std::optional<double> v_s1, v_s2, v_s3;  // target-frame components
    double yaw = 0.0;
    std::optional<double> yaw_rate;
};

// Pins position..snap (yaw..yaw accel) at t=0 to `start`, C4 continuity at
// interior knots, and the endpoint flat outputs of `end`.
EqRows build_boundary_constraints(const SplineLayout& layout, const flat::FlatState& start,
                                  const EndpointSpec& end, const PerchTarget& target);

struct PerchRows {
    EqRows accel_eq;             // xdd(t_f) = alpha s3 - g e3
    IneqRows band;               // pre-impact acceleration band
    std::vector<double> band_times;
};
PerchRows build_perch_constraints(const SplineLayout& layout, const PerchTarget& target,
                                  const PlanParams& params, double gravity);

struct FovEval {
    double f = 0.0;        // off-axis distance of the target
    double g = 0.0;        // cone radius at the target's depth
    double axis_dot = 0.0; // n_d . e_c; constraint is meaningful only when > 0
    bool satisfied() const { return axis_dot > 0.0 && f <= g; }
};
FovEval fov_nonlinear_eval(const Eigen::Vector3d& x, double psi, const Eigen::Vector3d& a,
                           const PerchTarget& target, const PlanParams& params,
                           const Eigen::Vector3d& camera_axis_body,
                           const flat::VehicleParams& vehicle);

// Difference (f-g) and its gradient w.r.t. (x, psi, a) by central differences;
// shared by the row builder and the linearization-fidelity checks.
double fov_residual(const Eigen::Vector3d& x, double psi, const Eigen::Vector3d& a,
                    const PerchTarget& target, const PlanParams& params,
                    const Eigen::Vector3d& camera_axis_body, const flat::VehicleParams& vehicle);
Eigen::Matrix<double, 7, 1> fov_residual_gradient(const Eigen::Vector3d& x, double psi,
                                                  const Eigen::Vector3d& a, const PerchTarget& target,
                                                  const PlanParams& params,
                                                  const Eigen::Vector3d& camera_axis_body,
                                                  const flat::VehicleParams& vehicle,
                                                  double step = 1e-6);

struct FovRows {
    IneqRows rows;
    int points_used = 0;
    int points_skipped = 0;  // behind-camera linearization points
};
// Linearized cone rows plus trust-region boxes at n_p interior sample times;
// linearization points come from the previous trajectory.
FovRows build_fov_constraints(const SplineLayout& layout, const poly::Spline& prev_traj,
                              double t_now, const PerchTarget& target, const PlanParams& params,
                              const Eigen::Vector3d& camera_axis_body,
                              const flat::VehicleParams& vehicle);

enum class PlanStatus { ok, qp_infeasible, stretch_exhausted };

struct PlanDiagnostics {
    PlanStatus status = PlanStatus::ok;
    qp::SolveStatus kkt_status = qp::SolveStatus::optimal;
    int stretch_count = 0;
    bool fov_dropped = false;
    int fov_rows = 0;
    int fov_points_skipped = 0;
    bool gbc_thrust_ok = false;
    bool gbc_strict_ok = true;
    double total_time = 0.0;
    double solve_ms = 0.0;  // assembly + QP + certification of the final pass
    int qp_iterations = 0;
};

struct PlanResult {
    poly::Spline traj;
    PlanDiagnostics diag;
    bool ok() const { return diag.status == PlanStatus::ok; }
};

struct PrevPlan {
    const poly::Spline* traj = nullptr;
    double t_now = 0.0;  // current time on the previous trajectory
};

// Full pipeline: cost + boundary/perch(+FoV) rows, QP solve, thrust GBC with
// geometric time stretching until certified.
PlanResult plan(const flat::FlatState& start, const PerchTarget& target, const PlanParams& params,
                const flat::VehicleParams& vehicle, const PrevPlan* prev = nullptr);

// Identical problem without the FoV rows; sets diag.fov_dropped.
PlanResult relax_fov_and_replan(const flat::FlatState& start, const PerchTarget& target,
                                const PlanParams& params, const flat::VehicleParams& vehicle,
                                const PrevPlan* prev = nullptr);

// plan(), falling back to the relaxed problem when the QP reports infeasible.
PlanResult plan_with_relaxation(const flat::FlatState& start, const PerchTarget& target,
                                const PlanParams& params, const flat::VehicleParams& vehicle,
                                const PrevPlan* prev = nullptr);

// Post-hoc constraint audit of a planned trajectory.
struct PlanReport {
    double endpoint_accel_residual = 0.0;
    double endpoint_velocity_residual = 0.0;  // over the pinned components
    double endpoint_position_residual = 0.0;
    double band_violation = 0.0;              // max over band sample times
    double knot_discontinuity = 0.0;          // max over orders 0..4, all axes
    double thrust_margin_low = 0.0;           // min sampled tau - tau_min
    double thrust_margin_high = 0.0;          // tau_max - max sampled tau
    bool gbc_thrust_ok = false;
    Eigen::Vector3d endpoint_accel = Eigen::Vector3d::Zero();
};
PlanReport analyze_plan(const poly::Spline& traj, const PerchTarget& target,
                        const PlanParams& params, const flat::VehicleParams& vehicle,
                        int thrust_samples = 10000);

// Desired final yaw: b2 parallel to s2, branch nearest psi_start.
double endpoint_yaw(const PerchTarget& target, double psi_start);

}  // namespace perchkit::planner

#endif  // PERCHKIT_PLANNER_HPP
