#ifndef PERCHKIT_REPLANNER_HPP
#define PERCHKIT_REPLANNER_HPP

#include <optional>

#include "perchkit/planner.hpp"

namespace perchkit::avp {

// Bookkeeping for the active-visual-perching loop. The trajectory produced by
// a replan is staged as `pending` and becomes active once wall time reaches
// its start (the anticipated execution instant).
struct AvpState {
    poly::Spline active;
    double traj_start_wall = 0.0;

    poly::Spline pending;
    double pending_start_wall = 0.0;
    bool has_pending = false;

    double replan_period = 1.0 / 30.0;
    double expected_plan_latency = 0.020;
    double capture_radius = 0.05;
    // Replans are suppressed once less than this remains on the active plan;
    // the terminal stretch flies open loop on the last trajectory.
    double min_replan_horizon = 0.25;

    int replan_count = 0;
    int failed_replan_count = 0;
    int fov_dropped_count = 0;
    bool terminated = false;

    // Prediction made by the last accepted replan, for anticipation-error logs.
    Eigen::Vector3d last_predicted_x = Eigen::Vector3d::Zero();
    bool prediction_pending = false;

    double total_plan_ms = 0.0;
    double max_plan_ms = 0.0;

    void validate() const;

    // Applies a due swap and returns the trajectory commanding at wall_t.
    const poly::Spline& resolve_active(double wall_t);
    double local_time(double wall_t) const;  // clamped into the active domain
};

// Flat state the vehicle will occupy at t_ex given odometry taken at t_rp:
// odometry plus the trajectory's own displacement over [t_rp, t_ex], applied
// to every derivative order (position through snap, yaw through yaw accel).
// Times past the trajectory end are clamped to it (flagged via *clamped).
flat::FlatState anticipate(const flat::FlatState& odom, const poly::Spline& traj, double t_rp,
                           double t_ex, bool* clamped = nullptr);

// One replanning cycle at wall time wall_t. Without a (fresh) target estimate
// the active trajectory is kept. A successful plan is staged for the swap at
// wall_t + expected_plan_latency; a failed plan keeps the active trajectory
// (fail operational). Sets `terminated` inside the capture radius.
void avp_step(AvpState& avp, double wall_t, const flat::FlatState& odom,
              const std::optional<planner::PerchTarget>& target_meas,
              const planner::PlanParams& params, const flat::VehicleParams& vehicle);

}  // namespace perchkit::avp

#endif  // PERCHKIT_REPLANNER_HPP
