#pragma once

#include <cmath>
#include <ostream>

#include "treerisk/errors.hpp"

namespace treerisk {

/// Extended real value used for penalties: either a finite double or +infinity.
///
/// Infinity is carried as an explicit flag rather than as a large float, and
/// multiplication follows the measure-theoretic convention 0 * inf := 0 that
/// the discounted-penalty identities rely on (a vanished discount annihilates
/// an infinite penalty).
class ExtReal {
  public:
    constexpr ExtReal() : value_(0.0), inf_(false) {}
    constexpr ExtReal(double v) : value_(v), inf_(false) {}  // NOLINT: implicit by design

    static constexpr ExtReal infinity() {
        ExtReal r;
        r.inf_ = true;
        return r;
    }

    constexpr bool is_inf() const { return inf_; }
    /// Finite value; calling this on an infinite ExtReal is a logic error.
    double finite() const {
        if (inf_) throw InfinitePenalty("ExtReal: finite() called on infinity");
        return value_;
    }
    /// Value with infinity mapped to the IEEE infinity (for reporting only).
    constexpr double as_double() const {
        return inf_ ? std::numeric_limits<double>::infinity() : value_;
    }

    friend constexpr ExtReal operator+(ExtReal a, ExtReal b) {
        if (a.inf_ || b.inf_) return infinity();
        return ExtReal(a.value_ + b.value_);
    }
    friend constexpr ExtReal operator-(ExtReal a, double b) {
        if (a.inf_) return infinity();
        return ExtReal(a.value_ - b);
    }
    /// Scale by a nonnegative factor with the 0 * inf := 0 convention.
    friend constexpr ExtReal operator*(double c, ExtReal a) {
        if (a.inf_) return c == 0.0 ? ExtReal(0.0) : infinity();
        return ExtReal(c * a.value_);
    }
    friend constexpr bool operator==(ExtReal a, ExtReal b) {
        if (a.inf_ || b.inf_) return a.inf_ && b.inf_;
        return a.value_ == b.value_;
    }
    friend constexpr bool operator<(ExtReal a, ExtReal b) {
        if (a.inf_) return false;
        if (b.inf_) return true;
        return a.value_ < b.value_;
    }
    friend constexpr bool operator<=(ExtReal a, ExtReal b) { return a < b || a == b; }

    friend std::ostream& operator<<(std::ostream& os, ExtReal a) {
        if (a.inf_) return os << "inf";
        return os << a.value_;
    }

  private:
    double value_;
    bool inf_;
};

}  // namespace treerisk
