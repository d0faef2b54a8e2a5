#include "perchkit/polynomial.hpp"

#include <algorithm>
#include <cmath>

namespace perchkit::poly {

namespace {

std::vector<double> trimmed(std::vector<double> c) {
    while (c.size() > 1 && c.back() == 0.0) c.pop_back();
    if (c.empty()) c.push_back(0.0);
    return c;
}

int fp_sign(double v) {
    if (v > 0.0) return 1;
    if (v < 0.0) return -1;
    return 0;
}

}  // namespace

Polynomial::Polynomial(std::vector<double> coeffs) : c_(trimmed(std::move(coeffs))) {
    if (degree() > kMaxDegree) {
        throw std::invalid_argument("Polynomial degree " + std::to_string(degree()) +
                                    " exceeds cap " + std::to_string(kMaxDegree));
    }
}

double Polynomial::max_abs_coeff() const {
    double m = 0.0;
    for (double v : c_) m = std::max(m, std::abs(v));
    return m;
}

double Polynomial::eval(double t) const {
    // Running-power accumulation; avoids Horner's cancellation bias near roots,
    // which matters for the sign tests in the Sturm machinery.
    double acc = 0.0;
    double tn = 1.0;
    for (double cn : c_) {
        acc += cn * tn;
        tn *= t;
    }
    return acc;
}

Polynomial Polynomial::derivative(int order) const {
    if (order < 0) throw std::invalid_argument("derivative order must be >= 0");
    if (order == 0) return *this;
    if (order > degree()) return Polynomial::zero();
    std::vector<double> d(c_.size() - static_cast<size_t>(order));
    for (size_t n = 0; n < d.size(); ++n) {
        double f = 1.0;
        for (int k = 0; k < order; ++k) f *= static_cast<double>(n + static_cast<size_t>(order) - static_cast<size_t>(k));
        d[n] = c_[n + static_cast<size_t>(order)] * f;
    }
    return Polynomial(std::move(d));
}

Polynomial& Polynomial::operator+=(const Polynomial& rhs) {
    std::vector<double> c = c_;
    c.resize(std::max(c.size(), rhs.c_.size()), 0.0);
    for (size_t i = 0; i < rhs.c_.size(); ++i) c[i] += rhs.c_[i];
    c_ = trimmed(std::move(c));
    return *this;
}

Polynomial& Polynomial::operator-=(const Polynomial& rhs) {
    std::vector<double> c = c_;
    c.resize(std::max(c.size(), rhs.c_.size()), 0.0);
    for (size_t i = 0; i < rhs.c_.size(); ++i) c[i] -= rhs.c_[i];
    c_ = trimmed(std::move(c));
    return *this;
}

Polynomial& Polynomial::operator*=(double s) {
    for (double& v : c_) v *= s;
    c_ = trimmed(std::move(c_));
    return *this;
}

Polynomial operator+(Polynomial lhs, const Polynomial& rhs) { return lhs += rhs; }
Polynomial operator-(Polynomial lhs, const Polynomial& rhs) { return lhs -= rhs; }

Polynomial operator*(const Polynomial& lhs, const Polynomial& rhs) {
    if (lhs.is_zero() || rhs.is_zero()) return Polynomial::zero();
    const auto& a = lhs.coeffs();
    const auto& b = rhs.coeffs();
    std::vector<double> c(a.size() + b.size() - 1, 0.0);
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < b.size(); ++j) c[i + j] += a[i] * b[j];
    return Polynomial(std::move(c));
}

Polynomial operator*(double s, Polynomial p) { return p *= s; }
Polynomial operator*(Polynomial p, double s) { return p *= s; }
Polynomial operator+(Polynomial p, double v) { return p += Polynomial::constant(v); }
Polynomial operator-(Polynomial p, double v) { return p -= Polynomial::constant(v); }

Polynomial vec_norm_sq(const Polynomial& px, const Polynomial& py, const Polynomial& pz) {
    return px * px + py * py + pz * pz;
}

Polynomial vec_norm_sq(const std::array<Polynomial, 3>& v) {
    return vec_norm_sq(v[0], v[1], v[2]);
}

DivResult divide(const Polynomial& num, const Polynomial& den) {
    if (den.is_zero()) throw std::invalid_argument("polynomial division by zero");
    std::vector<double> r = num.coeffs();
    const auto& d = den.coeffs();
    const int dn = den.degree();
    const double lead = d.back();
    if (num.degree() < dn) return {Polynomial::zero(), num};

    std::vector<double> q(static_cast<size_t>(num.degree() - dn) + 1, 0.0);
    for (int k = num.degree() - dn; k >= 0; --k) {
        const double f = r[static_cast<size_t>(k + dn)] / lead;
        q[static_cast<size_t>(k)] = f;
        for (int j = 0; j <= dn; ++j) r[static_cast<size_t>(k + j)] -= f * d[static_cast<size_t>(j)];
    }
    r.resize(static_cast<size_t>(dn) > 0 ? static_cast<size_t>(dn) : 1, 0.0);

    // Relative trim of fp residue: remainders of nearby-degree divisions never
    // cancel exactly in floating point.
    double mx = 0.0;
    for (double v : r) mx = std::max(mx, std::abs(v));
    if (mx > 0.0) {
        for (double& v : r)
            if (std::abs(v) < 1e-12 * mx) v = 0.0;
    }
    return {Polynomial(std::move(q)), Polynomial(std::move(r))};
}

SturmSequence sturm_sequence(const Polynomial& p) {
    if (p.is_zero()) throw std::invalid_argument("sturm_sequence: zero polynomial");
    SturmSequence seq;
    seq.chain.push_back(p);
    if (p.degree() == 0) return seq;
    seq.chain.push_back(p.derivative(1));
    while (seq.chain.back().degree() > 0) {
        const auto& a = seq.chain[seq.chain.size() - 2];
        const auto& b = seq.chain.back();
        Polynomial rem = divide(a, b).remainder;
        if (rem.is_zero()) break;  // gcd reached; chain still counts distinct roots
        seq.chain.push_back(-1.0 * rem);
    }
    return seq;
}

int SturmSequence::sign_changes(double t) const {
    int changes = 0;
    int prev = 0;
    for (const auto& s : chain) {
        const int sg = fp_sign(s.eval(t));
        if (sg == 0) continue;
        if (prev != 0 && sg != prev) ++changes;
        prev = sg;
    }
    return changes;
}

int count_roots(const SturmSequence& seq, const Polynomial& p, double t0, double tf) {
    if (!(t0 < tf)) throw std::invalid_argument("count_roots: requires t0 < tf");
    double a = t0, b = tf;
    double nudge = 1e-12 * (tf - t0);
    while (p.eval(a) == 0.0 && a < b) {
        a += nudge;
        nudge *= 2.0;
    }
    nudge = 1e-12 * (tf - t0);
    while (p.eval(b) == 0.0 && b > a) {
        b -= nudge;
        nudge *= 2.0;
    }
    if (!(a < b)) return 0;
    const int va = seq.sign_changes(a);
    const int vb = seq.sign_changes(b);
    return std::max(0, va - vb);
}

int count_roots(const Polynomial& p, double t0, double tf) {
    return count_roots(sturm_sequence(p), p, t0, tf);
}

bool gbc(const Polynomial& H, double b, double t0, double tf) {
    if (!(t0 < tf)) throw std::invalid_argument("gbc: requires t0 < tf");
    Polynomial F = H - b;
    if (F.is_zero()) return false;  // H == b everywhere; not strictly below
    if (F.eval(t0) > 0.0 || F.eval(tf) > 0.0) return false;
    if (F.degree() == 0) return true;  // nonzero constant, endpoint check decided
    // Scaling F leaves roots and endpoint signs unchanged but keeps the Sturm
    // division residue trimming meaningful for wide coefficient ranges.
    F *= 1.0 / F.max_abs_coeff();
    return count_roots(F, t0, tf) == 0;
}

Polynomial time_scaled(const Polynomial& p, double s) {
    std::vector<double> c = p.coeffs();
    double pw = 1.0;
    for (double& v : c) {
        v *= pw;
        pw *= s;
    }
    return Polynomial(std::move(c));
}

Spline::Spline(std::vector<Segment> segments) : segments_(std::move(segments)) {
    for (const auto& s : segments_) {
        if (!(s.duration > 0.0)) throw std::invalid_argument("Spline: segment duration must be > 0");
        if (segments_[0].axes.size() != s.axes.size())
            throw std::invalid_argument("Spline: inconsistent axis counts");
    }
}

double Spline::total_time() const {
    double t = 0.0;
    for (const auto& s : segments_) t += s.duration;
    return t;
}

std::vector<double> Spline::knot_times() const {
    std::vector<double> k{0.0};
    k.reserve(segments_.size() + 1);
    for (const auto& s : segments_) k.push_back(k.back() + s.duration);
    return k;
}

std::pair<int, double> Spline::locate(double t) const {
    if (segments_.empty()) throw std::logic_error("Spline::locate on empty spline");
    double acc = 0.0;
    for (size_t i = 0; i + 1 < segments_.size(); ++i) {
        if (t < acc + segments_[i].duration) return {static_cast<int>(i), t - acc};
        acc += segments_[i].duration;
    }
    return {static_cast<int>(segments_.size()) - 1, t - acc};
}

double Spline::eval(int axis, double t, int deriv) const {
    const auto [seg, local] = locate(t);
    return segments_[static_cast<size_t>(seg)].axes.at(static_cast<size_t>(axis)).derivative(deriv).eval(local);
}

}  // namespace perchkit::poly
