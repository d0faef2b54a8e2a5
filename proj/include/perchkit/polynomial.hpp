#ifndef PERCHKIT_POLYNOMIAL_HPP
#define PERCHKIT_POLYNOMIAL_HPP

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace perchkit::poly {

// Dense real polynomial, coefficients stored ascending (c0 + c1*t + ...).
// Leading exact-zero coefficients are trimmed on construction; the zero
// polynomial is stored as the single coefficient {0}.
class Polynomial {
public:
    static constexpr int kMaxDegree = 64;

    Polynomial() : c_{0.0} {}
    explicit Polynomial(std::vector<double> coeffs);
    Polynomial(std::initializer_list<double> coeffs)
        : Polynomial(std::vector<double>(coeffs)) {}

    static Polynomial zero() { return Polynomial(); }
    static Polynomial constant(double v) { return Polynomial({v}); }

    int degree() const { return static_cast<int>(c_.size()) - 1; }
    bool is_zero() const { return c_.size() == 1 && c_[0] == 0.0; }
    const std::vector<double>& coeffs() const { return c_; }
    double coeff(int n) const { return n >= 0 && n < static_cast<int>(c_.size()) ? c_[n] : 0.0; }
    double max_abs_coeff() const;

    double eval(double t) const;
    Polynomial derivative(int order = 1) const;

    Polynomial& operator+=(const Polynomial& rhs);
    Polynomial& operator-=(const Polynomial& rhs);
    Polynomial& operator*=(double s);

private:
    std::vector<double> c_;
};

Polynomial operator+(Polynomial lhs, const Polynomial& rhs);
Polynomial operator-(Polynomial lhs, const Polynomial& rhs);
Polynomial operator*(const Polynomial& lhs, const Polynomial& rhs);
Polynomial operator*(double s, Polynomial p);
Polynomial operator*(Polynomial p, double s);
Polynomial operator+(Polynomial p, double v);
Polynomial operator-(Polynomial p, double v);

inline double eval(const Polynomial& p, double t) { return p.eval(t); }
inline Polynomial derivative(const Polynomial& p, int order) { return p.derivative(order); }
inline Polynomial mul(const Polynomial& p, const Polynomial& q) { return p * q; }

// Squared Euclidean norm of a 3-vector of polynomials, as a polynomial.
Polynomial vec_norm_sq(const Polynomial& px, const Polynomial& py, const Polynomial& pz);
Polynomial vec_norm_sq(const std::array<Polynomial, 3>& v);

// Quotient/remainder of polynomial long division. Remainder coefficients
// smaller than 1e-12 of the remainder's own max |coefficient| are dropped
// to keep floating-point Sturm chains from growing spurious members.
struct DivResult {
    Polynomial quotient;
    Polynomial remainder;
};
DivResult divide(const Polynomial& num, const Polynomial& den);

// Signed-remainder chain: S0 = p, S1 = p', S_{i+1} = -rem(S_{i-1}, S_i),
// terminating at a constant (or when a remainder vanishes).
struct SturmSequence {
    std::vector<Polynomial> chain;

    // Number of sign changes of the chain evaluated at t (zeros skipped).
    int sign_changes(double t) const;
};

SturmSequence sturm_sequence(const Polynomial& p);

// Distinct real roots of p in (t0, tf). Sturm's theorem needs nonvanishing
// endpoints; an endpoint where p evaluates to exactly 0 is nudged inward by
// 1e-12*(tf-t0) (doubling until nonzero). Consequently a root sitting exactly
// on an endpoint is not counted.
int count_roots(const Polynomial& p, double t0, double tf);
int count_roots(const SturmSequence& seq, const Polynomial& p, double t0, double tf);

// Global Bound Checking: true iff H(t) < b for all t in [t0, tf].
// Endpoint sign tests on F = H - b followed by a Sturm root count of F over
// the interval. F identically zero returns false (the inequality is strict).
bool gbc(const Polynomial& H, double b, double t0, double tf);

// p(s*t) as a polynomial in t: maps queries on [0, T] to the unit interval
// via time_scaled(p, T). Keeps certification polynomials well scaled.
Polynomial time_scaled(const Polynomial& p, double s);

// Piecewise polynomial over consecutive time segments. Each segment holds one
// polynomial per axis in local time (t=0 at the segment start). Evaluation
// outside [0, total_time] extrapolates the first/last segment.
class Spline {
public:
    struct Segment {
        std::vector<Polynomial> axes;
        double duration = 0.0;
    };

    Spline() = default;
    explicit Spline(std::vector<Segment> segments);

    bool empty() const { return segments_.empty(); }
    int num_segments() const { return static_cast<int>(segments_.size()); }
    int num_axes() const { return segments_.empty() ? 0 : static_cast<int>(segments_[0].axes.size()); }
    const Segment& segment(int i) const { return segments_.at(static_cast<size_t>(i)); }
    double total_time() const;
    std::vector<double> knot_times() const;   // cumulative, size num_segments()+1

    // (segment index, local time); clamps to the first/last segment.
    std::pair<int, double> locate(double t) const;

    double eval(int axis, double t, int deriv = 0) const;

private:
    std::vector<Segment> segments_;
};

}  // namespace perchkit::poly

#endif  // PERCHKIT_POLYNOMIAL_HPP
