#include "perchkit/planner.hpp"
#include <cstdlib>

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace perchkit::planner {

using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::Vector3d;
using Eigen::VectorXd;
using flat::FlatState;
using flat::VehicleParams;
using poly::Polynomial;
using poly::Spline;

double PerchTarget::incline_deg() const {
    return std::acos(std::clamp(s3().dot(Vector3d::UnitZ()), -1.0, 1.0)) * 180.0 / M_PI;
}

void PerchTarget::validate() const {
    if ((R_S.transpose() * R_S - Matrix3d::Identity()).norm() > 1e-9 ||
        std::abs(R_S.determinant() - 1.0) > 1e-9)
        throw std::invalid_argument("PerchTarget: R_S not in SO(3)");
}

PerchTarget PerchTarget::from_incline(const Vector3d& center, double incline_deg, double yaw_deg) {
    const double b = incline_deg * M_PI / 180.0;
    const double c = yaw_deg * M_PI / 180.0;
    PerchTarget t;
    t.s = center;
    t.R_S = Eigen::AngleAxisd(c, Vector3d::UnitZ()).toRotationMatrix() *
            Eigen::AngleAxisd(b, Vector3d::UnitY()).toRotationMatrix();
    return t;
}

void PlanParams::validate() const {
    if (!(alpha > 0.0)) throw std::invalid_argument("PlanParams: alpha must be > 0");
    if (q < 0.0) throw std::invalid_argument("PlanParams: q must be >= 0");
    if (!(dt > 0.0 && dt < t_k)) throw std::invalid_argument("PlanParams: need 0 < dt < t_k");
    if (n_p < 1) throw std::invalid_argument("PlanParams: n_p must be >= 1");
    if (!(trust_pos > 0.0 && trust_acc > 0.0 && trust_yaw > 0.0))
        throw std::invalid_argument("PlanParams: trust radii must be > 0");
    if (degree < deriv_order) throw std::invalid_argument("PlanParams: degree below cost order");
    if (num_segments < 1) throw std::invalid_argument("PlanParams: need at least one segment");
}

double SplineLayout::total_time() const {
    double t = 0.0;
    for (double d : durations) t += d;
    return t;
}

std::pair<int, double> SplineLayout::locate(double t) const {
    double acc = 0.0;
    for (size_t i = 0; i + 1 < durations.size(); ++i) {
        if (t < acc + durations[i]) return {static_cast<int>(i), t - acc};
        acc += durations[i];
    }
    return {num_segments() - 1, t - acc};
}

void SplineLayout::add_basis(Eigen::Ref<RowVectorXd> row, int axis, int seg, int order,
                             double t_local, double coeff) const {
    const int base = col(axis, seg, 0);
    for (int n = order; n <= degree; ++n) {
        double f = 1.0;
        for (int k = 0; k < order; ++k) f *= static_cast<double>(n - k);
        row[base + n] += coeff * f * std::pow(t_local, n - order);
    }
}

void EqRows::append(const EqRows& other) {
    if (other.A.rows() == 0) return;
    if (A.rows() == 0) {
        A = other.A;
        b = other.b;
        return;
    }
    const Eigen::Index r = A.rows();
    A.conservativeResize(r + other.A.rows(), Eigen::NoChange);
    A.bottomRows(other.A.rows()) = other.A;
    b.conservativeResize(r + other.b.size());
    b.tail(other.b.size()) = other.b;
}

void IneqRows::append(const IneqRows& other) {
    if (other.G.rows() == 0) return;
    if (G.rows() == 0) {
        G = other.G;
        lo = other.lo;
        hi = other.hi;
        return;
    }
    const Eigen::Index r = G.rows();
    G.conservativeResize(r + other.G.rows(), Eigen::NoChange);
    G.bottomRows(other.G.rows()) = other.G;
    lo.conservativeResize(r + other.lo.size());
    lo.tail(other.lo.size()) = other.lo;
    hi.conservativeResize(r + other.hi.size());
    hi.tail(other.hi.size()) = other.hi;
}

Eigen::MatrixXd build_min_deriv_cost(const SplineLayout& layout, int j) {
    for (double d : layout.durations)
        if (!(d > 0.0)) throw std::invalid_argument("build_min_deriv_cost: durations must be > 0");
    MatrixXd Q = MatrixXd::Zero(layout.cols(), layout.cols());
    const int nc = layout.coeffs_per_seg();
    for (int seg = 0; seg < layout.num_segments(); ++seg) {
        const double T = layout.durations[static_cast<size_t>(seg)];
        MatrixXd block = MatrixXd::Zero(nc, nc);
        for (int m = j; m <= layout.degree; ++m) {
            double fm = 1.0;
            for (int k = 0; k < j; ++k) fm *= static_cast<double>(m - k);
            for (int n = j; n <= layout.degree; ++n) {
                double fn = 1.0;
                for (int k = 0; k < j; ++k) fn *= static_cast<double>(n - k);
                const int pw = m + n - 2 * j + 1;
                block(m, n) = fm * fn * std::pow(T, pw) / pw;
            }
        }
        for (int axis = 0; axis < layout.axes; ++axis) {
            const int base = layout.col(axis, seg, 0);
            Q.block(base, base, nc, nc) = block;
        }
    }
    return Q;
}

namespace {

EqRows single_row(const SplineLayout& layout) {
    EqRows r;
    r.A = MatrixXd::Zero(1, layout.cols());
    r.b = VectorXd::Zero(1);
    return r;
}

}  // namespace

double endpoint_yaw(const PerchTarget& target, double psi_start) {
    const Vector3d s2 = target.s2();
    double cand;
    if (std::hypot(s2.x(), s2.y()) < 1e-9) {
        cand = psi_start;  // pad s2 vertical: any yaw perches, keep the current one
    } else {
        cand = std::atan2(-s2.x(), s2.y());
    }
    // Pick the branch (cand or cand+pi) nearest the start yaw, unwrapped.
    auto wrap = [](double a) {
        while (a > M_PI) a -= 2 * M_PI;
        while (a < -M_PI) a += 2 * M_PI;
        return a;
    };
    const double d0 = wrap(cand - psi_start);
    const double d1 = wrap(cand + M_PI - psi_start);
    return psi_start + (std::abs(d0) <= std::abs(d1) ? d0 : d1);
}

EqRows build_boundary_constraints(const SplineLayout& layout, const FlatState& start,
                                  const EndpointSpec& end, const PerchTarget& target) {
    const int ns = layout.num_segments();
    std::vector<std::pair<RowVectorXd, double>> rows;
    auto blank = [&] { return RowVectorXd::Zero(layout.cols()).eval(); };

    // Start conditions at segment 0, local t = 0.
    const std::array<const Vector3d*, 5> start_orders = {&start.x, &start.v, &start.a, &start.j,
                                                         &start.snap};
    for (int order = 0; order < 5; ++order) {
        for (int ax = 0; ax < 3; ++ax) {
            auto r = blank();
            layout.add_basis(r, ax, 0, order, 0.0);
            rows.emplace_back(r, (*start_orders[static_cast<size_t>(order)])[ax]);
        }
    }
    const std::array<double, 3> yaw_start = {start.psi, start.psi_dot, start.psi_ddot};
    for (int order = 0; order < 3; ++order) {
        auto r = blank();
        layout.add_basis(r, 3, 0, order, 0.0);
        rows.emplace_back(r, yaw_start[static_cast<size_t>(order)]);
    }

    // C4 continuity at interior knots, every axis.
    for (int seg = 0; seg + 1 < ns; ++seg) {
        const double T = layout.durations[static_cast<size_t>(seg)];
        for (int ax = 0; ax < layout.axes; ++ax) {
            for (int order = 0; order <= 4; ++order) {
                auto r = blank();
                layout.add_basis(r, ax, seg, order, T);
                layout.add_basis(r, ax, seg + 1, order, 0.0, -1.0);
                rows.emplace_back(r, 0.0);
            }
        }
    }

    // Endpoint: position, optional target-frame velocity components, yaw.
    const int last = ns - 1;
    const double Tf = layout.durations[static_cast<size_t>(last)];
    for (int ax = 0; ax < 3; ++ax) {
        auto r = blank();
        layout.add_basis(r, ax, last, 0, Tf);
        rows.emplace_back(r, end.position[ax]);
    }
    const std::array<std::pair<const std::optional<double>*, Vector3d>, 3> vel_rows = {
        std::make_pair(&end.v_s1, target.s1()), std::make_pair(&end.v_s2, target.s2()),
        std::make_pair(&end.v_s3, target.s3())};
    for (const auto& [val, dir] : vel_rows) {
        if (!val->has_value()) continue;
        auto r = blank();
        for (int ax = 0; ax < 3; ++ax) layout.add_basis(r, ax, last, 1, Tf, dir[ax]);
        rows.emplace_back(r, **val);
    }
    {
        auto r = blank();
        layout.add_basis(r, 3, last, 0, Tf);
        rows.emplace_back(r, end.yaw);
    }
    if (end.yaw_rate) {
        auto r = blank();
        layout.add_basis(r, 3, last, 1, Tf);
        rows.emplace_back(r, *end.yaw_rate);
    }

    EqRows eq;
    eq.A = MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), layout.cols());
    eq.b = VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        eq.A.row(static_cast<Eigen::Index>(i)) = rows[i].first;
        eq.b[static_cast<Eigen::Index>(i)] = rows[i].second;
    }
    return eq;
}

PerchRows build_perch_constraints(const SplineLayout& layout, const PerchTarget& target,
                                  const PlanParams& params, double gravity) {
    const double total = layout.total_time();
    if (!(params.t_k < total))
        throw std::invalid_argument("build_perch_constraints: t_k must be below the total time");

    const Vector3d acc_end = params.alpha * target.s3() - gravity * Vector3d::UnitZ();
    PerchRows out;

    out.accel_eq.A = MatrixXd::Zero(3, layout.cols());
    out.accel_eq.b = acc_end;
    const int last = layout.num_segments() - 1;
    const double Tf = layout.durations[static_cast<size_t>(last)];
    for (int ax = 0; ax < 3; ++ax) {
        RowVectorXd r = RowVectorXd::Zero(layout.cols());
        layout.add_basis(r, ax, last, 2, Tf);
        out.accel_eq.A.row(ax) = r;
    }

    for (int j = 0; j < static_cast<int>(params.t_k / params.dt); ++j)
        out.band_times.push_back(total - params.t_k + j * params.dt);

    const int nb = static_cast<int>(out.band_times.size());
    out.band.G = MatrixXd::Zero(3 * nb, layout.cols());
    out.band.lo = VectorXd::Zero(3 * nb);
    out.band.hi = VectorXd::Zero(3 * nb);
    for (int i = 0; i < nb; ++i) {
        const auto [seg, tl] = layout.locate(out.band_times[static_cast<size_t>(i)]);
        for (int ax = 0; ax < 3; ++ax) {
            RowVectorXd r = RowVectorXd::Zero(layout.cols());
            layout.add_basis(r, ax, seg, 2, tl);
            out.band.G.row(3 * i + ax) = r;
            const double v = acc_end[ax];
            const double w = (1.0 + params.q) * v;
            out.band.lo[3 * i + ax] = std::min(v, w);
            out.band.hi[3 * i + ax] = std::max(v, w);
        }
    }
    return out;
}

FovEval fov_nonlinear_eval(const Vector3d& x, double psi, const Vector3d& a,
                           const PerchTarget& target, const PlanParams& params,
                           const Vector3d& camera_axis_body, const VehicleParams& vehicle) {
    const Vector3d n_d = target.s - x;
    if (n_d.norm() < 1e-9)
        throw std::domain_error("fov_nonlinear_eval: vehicle at the target center");
    const Matrix3d R = flat::rotation_from_flat(a, psi, vehicle);
    const Vector3d ec = R * camera_axis_body;
    const double axis_dot = n_d.dot(ec);
    const Vector3d n_proj = axis_dot * ec;
    FovEval e;
    e.axis_dot = axis_dot;
    e.f = (n_d - n_proj).norm();
    e.g = params.fov_ratio * n_proj.norm();
    return e;
}

double fov_residual(const Vector3d& x, double psi, const Vector3d& a, const PerchTarget& target,
                    const PlanParams& params, const Vector3d& camera_axis_body,
                    const VehicleParams& vehicle) {
    const FovEval e = fov_nonlinear_eval(x, psi, a, target, params, camera_axis_body, vehicle);
    return e.f - e.g;
}

Eigen::Matrix<double, 7, 1> fov_residual_gradient(const Vector3d& x, double psi, const Vector3d& a,
                                                  const PerchTarget& target, const PlanParams& params,
                                                  const Vector3d& camera_axis_body,
                                                  const VehicleParams& vehicle, double step) {
    Eigen::Matrix<double, 7, 1> grad;
    auto eval = [&](const Vector3d& xx, double pp, const Vector3d& aa) {
        return fov_residual(xx, pp, aa, target, params, camera_axis_body, vehicle);
    };
    for (int i = 0; i < 3; ++i) {
        Vector3d xp = x, xm = x;
        xp[i] += step;
        xm[i] -= step;
        grad[i] = (eval(xp, psi, a) - eval(xm, psi, a)) / (2 * step);
    }
    grad[3] = (eval(x, psi + step, a) - eval(x, psi - step, a)) / (2 * step);
    for (int i = 0; i < 3; ++i) {
        Vector3d ap = a, am = a;
        ap[i] += step;
        am[i] -= step;
        grad[4 + i] = (eval(x, psi, ap) - eval(x, psi, am)) / (2 * step);
    }
    return grad;
}

FovRows build_fov_constraints(const SplineLayout& layout, const Spline& prev_traj, double t_now,
                              const PerchTarget& target, const PlanParams& params,
                              const Vector3d& camera_axis_body, const VehicleParams& vehicle) {
    FovRows out;
    std::vector<RowVectorXd> rows;
    std::vector<double> los, his;
    // Sample only ahead of the pre-impact window: the band owns the terminal
    // accelerations and the camera has already rotated off the target there.
    const double horizon_prev = std::max(prev_traj.total_time() - t_now - params.t_k, 0.0);
    const double total_new = std::max(layout.total_time() - params.t_k, 0.0);
    const double inv_sqrt3 = 1.0 / std::sqrt(3.0);
    if (horizon_prev <= 0.0 || total_new <= 0.0) {
        out.rows.G = MatrixXd(0, layout.cols());
        out.rows.lo = VectorXd(0);
        out.rows.hi = VectorXd(0);
        return out;
    }

    for (int k = 1; k <= params.n_p; ++k) {
        const double u = static_cast<double>(k) / (params.n_p + 1);
        const double t_prev = t_now + u * horizon_prev;
        const double t_new = u * total_new;
        const FlatState ref = flat::flat_state_at(prev_traj, t_prev);

        FovEval ev;
        try {
            ev = fov_nonlinear_eval(ref.x, ref.psi, ref.a, target, params, camera_axis_body, vehicle);
        } catch (const std::domain_error&) {
            ++out.points_skipped;
            continue;
        }
        if (ev.axis_dot <= 0.0) {
            // Target behind the camera on the previous trajectory; a Taylor
            // expansion of the cone test is meaningless on that side.
            ++out.points_skipped;
            continue;
        }
        if (ev.f > ev.g) {
            // The base trajectory already violates the cone here, more than a
            // trust-region step can repair; keeping the row would reject the
            // whole problem instead of shaping the still-visible stretch.
            ++out.points_skipped;
            continue;
        }
        ++out.points_used;

        const auto grad = fov_residual_gradient(ref.x, ref.psi, ref.a, target, params,
                                                camera_axis_body, vehicle);
        const auto [seg, tl] = layout.locate(t_new);

        RowVectorXd row = RowVectorXd::Zero(layout.cols());
        for (int ax = 0; ax < 3; ++ax) layout.add_basis(row, ax, seg, 0, tl, grad[ax]);
        layout.add_basis(row, 3, seg, 0, tl, grad[3]);
        for (int ax = 0; ax < 3; ++ax) layout.add_basis(row, ax, seg, 2, tl, grad[4 + ax]);

        Eigen::Matrix<double, 7, 1> z0;
        z0 << ref.x, ref.psi, ref.a;
        const double rhs = (ev.g - ev.f) + grad.dot(z0);
        rows.push_back(row);
        los.push_back(-std::numeric_limits<double>::infinity());
        his.push_back(rhs);

        // Trust boxes keeping the linearization honest (inscribed in the
        // Euclidean balls, hence the 1/sqrt(3)).
        for (int ax = 0; ax < 3; ++ax) {
            RowVectorXd tr = RowVectorXd::Zero(layout.cols());
            layout.add_basis(tr, ax, seg, 0, tl);
            rows.push_back(tr);
            los.push_back(ref.x[ax] - params.trust_pos * inv_sqrt3);
            his.push_back(ref.x[ax] + params.trust_pos * inv_sqrt3);
        }
        for (int ax = 0; ax < 3; ++ax) {
            RowVectorXd tr = RowVectorXd::Zero(layout.cols());
            layout.add_basis(tr, ax, seg, 2, tl);
            rows.push_back(tr);
            los.push_back(ref.a[ax] - params.trust_acc * inv_sqrt3);
            his.push_back(ref.a[ax] + params.trust_acc * inv_sqrt3);
        }
        RowVectorXd ty = RowVectorXd::Zero(layout.cols());
        layout.add_basis(ty, 3, seg, 0, tl);
        rows.push_back(ty);
        los.push_back(ref.psi - params.trust_yaw);
        his.push_back(ref.psi + params.trust_yaw);
    }

    out.rows.G = MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), layout.cols());
    out.rows.lo = VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
    out.rows.hi = VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        out.rows.G.row(static_cast<Eigen::Index>(i)) = rows[i];
        out.rows.lo[static_cast<Eigen::Index>(i)] = los[i];
        out.rows.hi[static_cast<Eigen::Index>(i)] = his[i];
    }
    return out;
}

namespace {

// Column scale mapping local-time coefficients to a normalized basis where
// monomial values stay O(1); keeps the QP well conditioned for long segments.
VectorXd column_scales(const SplineLayout& layout) {
    VectorXd s = VectorXd::Ones(layout.cols());
    for (int ax = 0; ax < layout.axes; ++ax)
        for (int seg = 0; seg < layout.num_segments(); ++seg) {
            const double T = std::max(layout.durations[static_cast<size_t>(seg)], 1e-6);
            double pw = 1.0;
            for (int n = 0; n <= layout.degree; ++n) {
                s[layout.col(ax, seg, n)] = pw;  // c_local = c_scaled / T^n
                pw *= T;
            }
        }
    return s;
}

// Keep a maximal independent subset of the rows (modified Gram-Schmidt with a
// relative tolerance); the band window over-samples on purpose, so dependent
// rows are expected. Returns false when a dropped row is inconsistent.
bool reduce_equalities(MatrixXd& A, VectorXd& b) {
    if (A.rows() == 0) return true;
    const Eigen::Index n = A.cols();
    std::vector<Eigen::Index> keep;
    MatrixXd basis(A.rows(), n);  // orthonormal rows
    Eigen::Index nb = 0;
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        VectorXd v = A.row(i).transpose();
        const double orig = std::max(v.norm(), 1e-300);
        for (Eigen::Index k = 0; k < nb; ++k) v -= basis.row(k).dot(v) * basis.row(k).transpose();
        for (Eigen::Index k = 0; k < nb; ++k) v -= basis.row(k).dot(v) * basis.row(k).transpose();
        if (v.norm() > 1e-10 * orig) {
            basis.row(nb++) = v.transpose() / v.norm();
            keep.push_back(i);
        }
    }
    if (static_cast<Eigen::Index>(keep.size()) == A.rows()) return true;

    MatrixXd A2(static_cast<Eigen::Index>(keep.size()), n);
    VectorXd b2(static_cast<Eigen::Index>(keep.size()));
    for (size_t i = 0; i < keep.size(); ++i) {
        A2.row(static_cast<Eigen::Index>(i)) = A.row(keep[i]);
        b2[static_cast<Eigen::Index>(i)] = b[keep[i]];
    }
    // Dropped rows are combinations of kept ones; any particular solution of
    // the kept system decides their consistency.
    const VectorXd c0 = A2.colPivHouseholderQr().solve(b2);
    const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
    const bool consistent = (A * c0 - b).cwiseAbs().maxCoeff() <= 1e-7 * scale;
    A = std::move(A2);
    b = std::move(b2);
    return consistent;
}

Spline spline_from_coeffs(const SplineLayout& layout, const VectorXd& c) {
    std::vector<Spline::Segment> segs;
    for (int seg = 0; seg < layout.num_segments(); ++seg) {
        Spline::Segment sg;
        sg.duration = layout.durations[static_cast<size_t>(seg)];
        for (int ax = 0; ax < layout.axes; ++ax) {
            std::vector<double> coef(static_cast<size_t>(layout.coeffs_per_seg()));
            for (int n = 0; n <= layout.degree; ++n)
                coef[static_cast<size_t>(n)] = c[layout.col(ax, seg, n)];
            sg.axes.push_back(Polynomial(coef));
        }
        segs.push_back(std::move(sg));
    }
    return Spline(std::move(segs));
}

// Certification runs on the unit interval (local time scaled by the segment
// duration) so the Sturm chains see well-ranged coefficients.
bool gbc_below_on_segment(const Polynomial& p, double bound, double T) {
    return poly::gbc(poly::time_scaled(p, T), bound, 0.0, 1.0);
}

bool certify_thrust(const Spline& traj, const VehicleParams& vehicle) {
    for (int seg = 0; seg < traj.num_segments(); ++seg) {
        const Polynomial tp = flat::thrust_sq_poly(traj, seg, vehicle);
        const double T = traj.segment(seg).duration;
        if (!gbc_below_on_segment(tp, vehicle.tau_max * vehicle.tau_max, T)) return false;
        if (!gbc_below_on_segment(-1.0 * tp, -vehicle.tau_min * vehicle.tau_min, T)) return false;
    }
    return true;
}

bool certify_strict(const Spline& traj, const PlanParams& params, const VehicleParams& vehicle) {
    using flat::BoundKind;
    for (int seg = 0; seg < traj.num_segments(); ++seg) {
        const double T = traj.segment(seg).duration;
        const auto om = flat::actuator_bound_poly(traj, seg, BoundKind::omega_sq, vehicle)[0];
        if (!gbc_below_on_segment(om, params.omega_max * params.omega_max, T)) return false;
        const auto tr = flat::actuator_bound_poly(traj, seg, BoundKind::thrust_rate_sq, vehicle)[0];
        if (!gbc_below_on_segment(tr, params.thrust_rate_max * params.thrust_rate_max, T)) return false;
        const auto od = flat::actuator_bound_poly(traj, seg, BoundKind::omega_dot_sq, vehicle)[0];
        if (!gbc_below_on_segment(od, params.omega_dot_max * params.omega_dot_max, T)) return false;
        const auto mo = flat::actuator_bound_poly(traj, seg, BoundKind::moment, vehicle);
        for (const auto& m : mo)
            if (!gbc_below_on_segment(m, params.moment_max, T)) return false;
    }
    return true;
}

PlanResult plan_impl(const FlatState& start, const PerchTarget& target, const PlanParams& params,
                     const VehicleParams& vehicle, const PrevPlan* prev, bool fov_dropped) {
    params.validate();
    vehicle.validate();
    target.validate();
    const auto t_begin = std::chrono::steady_clock::now();

    double total = params.total_time
                       ? *params.total_time
                       : std::max((target.s - start.x).norm() / params.v_avg, 1.0) * params.time_scale;
    if (!(total > params.t_k)) total = 2.0 * params.t_k;

    const bool use_fov = params.fov_enabled && !fov_dropped && prev && prev->traj;

    EndpointSpec end;
    end.position = target.s;
    // The named parameters keep their physical roles: v_s1 is the touch speed
    // pressed into the pad (against the outward normal s3) and v_s3 the signed
    // slide along the pad's slope axis, negative arriving in descent. In frame
    // components that is v = -v_s3 * s1 - v_s1 * s3.
    if (params.v_s3) end.v_s1 = -*params.v_s3;
    end.v_s2 = params.v_s2;
    if (params.v_s1) end.v_s3 = -*params.v_s1;
    end.yaw = endpoint_yaw(target, start.psi);
    end.yaw_rate = 0.0;

    PlanResult result;
    result.diag.fov_dropped = fov_dropped;

    for (int stretch = 0; stretch <= params.max_stretch_iters; ++stretch) {
        SplineLayout layout;
        layout.axes = 4;
        layout.degree = params.degree;
        layout.durations.assign(static_cast<size_t>(params.num_segments),
                                total / params.num_segments);

        EqRows eq = build_boundary_constraints(layout, start, end, target);
        PerchRows perch = build_perch_constraints(layout, target, params, vehicle.gravity);
        eq.append(perch.accel_eq);

        IneqRows ineq;
        // Degenerate band rows (zero endpoint-acceleration component, or q = 0)
        // are equalities. Where such samples cover more points of one segment
        // than the acceleration polynomial has coefficients, they pin that
        // polynomial entirely; emit the equivalent single-coefficient rows
        // instead of a clustered Vandermonde block the solver cannot digest.
        {
            const int acc_coeffs = layout.degree - 1;  // accel degree + 1
            std::vector<std::vector<double>> collapsed_times(
                static_cast<size_t>(3 * layout.num_segments()));
            for (int bi = 0; bi < static_cast<int>(perch.band_times.size()); ++bi) {
                const auto [seg, tl] = layout.locate(perch.band_times[static_cast<size_t>(bi)]);
                for (int ax = 0; ax < 3; ++ax) {
                    const Eigen::Index row = 3 * bi + ax;
                    if (perch.band.hi[row] - perch.band.lo[row] < 1e-12) {
                        collapsed_times[static_cast<size_t>(3 * seg + ax)].push_back(tl);
                    } else {
                        IneqRows r;
                        r.G = perch.band.G.row(row);
                        r.lo = VectorXd::Constant(1, perch.band.lo[row]);
                        r.hi = VectorXd::Constant(1, perch.band.hi[row]);
                        ineq.append(r);
                    }
                }
            }
            const Vector3d acc_end =
                params.alpha * target.s3() - vehicle.gravity * Vector3d::UnitZ();
            for (int seg = 0; seg < layout.num_segments(); ++seg) {
                for (int ax = 0; ax < 3; ++ax) {
                    const auto& times = collapsed_times[static_cast<size_t>(3 * seg + ax)];
                    if (times.empty()) continue;
                    if (static_cast<int>(times.size()) >= acc_coeffs) {
                        // xdd == acc_end[ax] on the whole segment.
                        for (int n = 2; n <= layout.degree; ++n) {
                            EqRows r = single_row(layout);
                            r.A(0, layout.col(ax, seg, n)) = n * (n - 1);
                            r.b[0] = n == 2 ? acc_end[ax] : 0.0;
                            eq.append(r);
                        }
                    } else {
                        for (double tl : times) {
                            EqRows r = single_row(layout);
                            RowVectorXd row = RowVectorXd::Zero(layout.cols());
                            layout.add_basis(row, ax, seg, 2, tl);
                            r.A.row(0) = row;
                            r.b[0] = acc_end[ax];
                            eq.append(r);
                        }
                    }
                }
            }
        }

        if (use_fov) {
            FovRows fov = build_fov_constraints(layout, *prev->traj, prev->t_now, target, params,
                                                params.camera_axis_body, vehicle);
            ineq.append(fov.rows);
            result.diag.fov_rows = static_cast<int>(fov.rows.G.rows());
            result.diag.fov_points_skipped = fov.points_skipped;
            if (fov.points_used == 0 && fov.points_skipped > 0) {
                // Every linearization point saw the target behind the camera:
                // the visibility constraint is incompatible with the previous
                // trajectory; report infeasible so the caller can relax it.
                result.diag.status = PlanStatus::qp_infeasible;
                result.diag.kkt_status = qp::SolveStatus::infeasible;
                result.diag.stretch_count = stretch;
                result.diag.total_time = total;
                return result;
            }
        }

        // Work in the normalized coefficient basis.
        const VectorXd scales = column_scales(layout);
        const VectorXd inv_scales = scales.cwiseInverse();
        const int n = layout.cols();
        MatrixXd Qn = inv_scales.asDiagonal() * build_min_deriv_cost(layout, params.deriv_order) *
                      inv_scales.asDiagonal();
        Qn = 0.5 * (Qn + Qn.transpose());  // symmetrize fp residue
        MatrixXd An = eq.A * inv_scales.asDiagonal();
        VectorXd bn = eq.b;
        if (!reduce_equalities(An, bn)) {
            result.diag.status = PlanStatus::qp_infeasible;
            result.diag.kkt_status = qp::SolveStatus::infeasible;
            result.diag.stretch_count = stretch;
            result.diag.total_time = total;
            return result;
        }

        // Null-space elimination of the equality block: c = t*c_p + N xi with
        // a single benign equality t = 1. The perch band's active boundary sits
        // exactly on the endpoint equality, which starves an interior-point
        // iteration of strictly feasible directions unless the equalities are
        // eliminated up front.
        Eigen::ColPivHouseholderQR<MatrixXd> qrAt(An.transpose());
        const int rank = static_cast<int>(qrAt.rank());
        const MatrixXd Qfac = qrAt.householderQ();
        const MatrixXd N = Qfac.rightCols(n - rank);
        const VectorXd c_p = An.colPivHouseholderQr().solve(bn);
        if ((An * c_p - bn).cwiseAbs().maxCoeff() > 1e-7 * std::max(1.0, bn.cwiseAbs().maxCoeff())) {
            result.diag.status = PlanStatus::qp_infeasible;
            result.diag.kkt_status = qp::SolveStatus::infeasible;
            result.diag.stretch_count = stretch;
            result.diag.total_time = total;
            return result;
        }

        const int nr = static_cast<int>(N.cols()) + 1;  // [xi; t]
        qp::QpProblem prob;
        MatrixXd B(n, nr);
        B.leftCols(nr - 1) = N;
        B.col(nr - 1) = c_p;
        prob.Q = B.transpose() * Qn * B;
        prob.Q = 0.5 * (prob.Q + prob.Q.transpose());
        prob.A = MatrixXd::Zero(1, nr);
        prob.A(0, nr - 1) = 1.0;
        prob.b = VectorXd::Ones(1);
        if (ineq.G.rows() > 0) {
            prob.G = ineq.G * inv_scales.asDiagonal() * B;
            prob.y = ineq.lo;
            prob.z = ineq.hi;
        } else {
            prob.G = MatrixXd(0, nr);
            prob.y = VectorXd(0);
            prob.z = VectorXd(0);
        }

        qp::SolverOptions opts;
        opts.validate = false;  // Q is a Gram matrix plus regularization by construction
        opts.trace = std::getenv("PERCHKIT_QP_TRACE") != nullptr;
        const qp::QpSolution sol = qp::solve_qp(prob, opts);
        result.diag.kkt_status = sol.status;
        result.diag.qp_iterations = sol.iterations;
        result.diag.stretch_count = stretch;
        result.diag.total_time = total;

        if (sol.status != qp::SolveStatus::optimal) {
            if (!use_fov && stretch < params.max_stretch_iters) {
                // Without FoV rows the only reason the perch QP rejects is a
                // schedule too tight for the band and boundary rows; time is
                // the lever here exactly as for the actuator bounds.
                total *= params.time_stretch;
                continue;
            }
            result.diag.status =
                use_fov ? PlanStatus::qp_infeasible : PlanStatus::stretch_exhausted;
            result.diag.solve_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_begin)
                    .count();
            return result;
        }

        result.traj = spline_from_coeffs(layout, (B * sol.c).cwiseProduct(inv_scales));
        result.diag.gbc_thrust_ok = certify_thrust(result.traj, vehicle);
        result.diag.gbc_strict_ok =
            !params.strict_bounds || certify_strict(result.traj, params, vehicle);
        if (result.diag.gbc_thrust_ok && result.diag.gbc_strict_ok) {
            result.diag.status = PlanStatus::ok;
            result.diag.solve_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_begin)
                    .count();
            return result;
        }
        total *= params.time_stretch;
    }

    result.diag.status = PlanStatus::stretch_exhausted;
    result.diag.solve_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_begin).count();
    return result;
}

}  // namespace

PlanResult plan(const FlatState& start, const PerchTarget& target, const PlanParams& params,
                const VehicleParams& vehicle, const PrevPlan* prev) {
    return plan_impl(start, target, params, vehicle, prev, false);
}

PlanResult relax_fov_and_replan(const FlatState& start, const PerchTarget& target,
                                const PlanParams& params, const VehicleParams& vehicle,
                                const PrevPlan* prev) {
    return plan_impl(start, target, params, vehicle, prev, true);
}

PlanResult plan_with_relaxation(const FlatState& start, const PerchTarget& target,
                                const PlanParams& params, const VehicleParams& vehicle,
                                const PrevPlan* prev) {
    PlanResult first = plan(start, target, params, vehicle, prev);
    const bool had_fov = params.fov_enabled && prev && prev->traj;
    if (first.diag.status == PlanStatus::qp_infeasible && had_fov)
        return relax_fov_and_replan(start, target, params, vehicle, prev);
    return first;
}

PlanReport analyze_plan(const Spline& traj, const PerchTarget& target, const PlanParams& params,
                        const VehicleParams& vehicle, int thrust_samples) {
    PlanReport rep;
    const double tf = traj.total_time();
    const FlatState fe = flat::flat_state_at(traj, tf);
    const Vector3d acc_des = params.alpha * target.s3() - vehicle.gravity * Vector3d::UnitZ();
    rep.endpoint_accel = fe.a;
    rep.endpoint_accel_residual = (fe.a - acc_des).norm();
    rep.endpoint_position_residual = (fe.x - target.s).norm();

    double vres = 0.0;
    if (params.v_s3) vres = std::max(vres, std::abs(fe.v.dot(target.s1()) + *params.v_s3));
    if (params.v_s2) vres = std::max(vres, std::abs(fe.v.dot(target.s2()) - *params.v_s2));
    if (params.v_s1) vres = std::max(vres, std::abs(fe.v.dot(target.s3()) + *params.v_s1));
    rep.endpoint_velocity_residual = vres;

    for (int j = 0; j < static_cast<int>(params.t_k / params.dt); ++j) {
        const double t = tf - params.t_k + j * params.dt;
        const Vector3d a = flat::flat_state_at(traj, t).a;
        for (int ax = 0; ax < 3; ++ax) {
            const double v = acc_des[ax];
            const double lo = std::min(v, (1 + params.q) * v);
            const double hi = std::max(v, (1 + params.q) * v);
            rep.band_violation = std::max({rep.band_violation, lo - a[ax], a[ax] - hi});
        }
    }

    const auto knots = traj.knot_times();
    for (size_t k = 1; k + 1 < knots.size(); ++k) {
        for (int ax = 0; ax < traj.num_axes(); ++ax)
            for (int order = 0; order <= 4; ++order) {
                const double left =
                    traj.segment(static_cast<int>(k) - 1).axes[static_cast<size_t>(ax)].derivative(order).eval(
                        traj.segment(static_cast<int>(k) - 1).duration);
                const double right =
                    traj.segment(static_cast<int>(k)).axes[static_cast<size_t>(ax)].derivative(order).eval(0.0);
                rep.knot_discontinuity = std::max(rep.knot_discontinuity, std::abs(left - right));
            }
    }

    double tau_lo = std::numeric_limits<double>::infinity();
    double tau_hi = -std::numeric_limits<double>::infinity();
    for (int i = 0; i <= thrust_samples; ++i) {
        const double t = tf * i / thrust_samples;
        const double tau = flat::thrust_norm(flat::flat_state_at(traj, t).a, vehicle);
        tau_lo = std::min(tau_lo, tau);
        tau_hi = std::max(tau_hi, tau);
    }
    rep.thrust_margin_low = tau_lo - vehicle.tau_min;
    rep.thrust_margin_high = vehicle.tau_max - tau_hi;
    rep.gbc_thrust_ok = certify_thrust(traj, vehicle);
    return rep;
}

}  // namespace perchkit::planner
