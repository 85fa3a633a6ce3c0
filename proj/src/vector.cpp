#include "lexroute/vector.hpp"

#include <cmath>
#include <string>

#include "lexroute/error.hpp"

namespace lexroute {

Vector::Vector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) {
        throw Error(ErrorCode::Dimension, "vector dimension must be positive");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw Error(ErrorCode::Numeric, "non-finite vector component at index " + std::to_string(i));
        }
    }
}

Vector Vector::zeros(std::size_t dim) {
    return Vector(std::vector<double>(dim, 0.0));
}

double Vector::norm() const {
    double s = 0.0;
    for (double x : values_) s += x * x;
    return std::sqrt(s);
}

bool Vector::is_zero() const {
    for (double x : values_) {
        if (x != 0.0) return false;
    }
    return true;
}

static void require_same_dim(const Vector& a, const Vector& b) {
    if (a.dim() != b.dim()) {
        throw Error(ErrorCode::Dimension,
                    "dimension mismatch: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
    }
}

double dot(const Vector& a, const Vector& b) {
    require_same_dim(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
    return s;
}

double cosine(const Vector& a, const Vector& b) {
    require_same_dim(a, b);
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    // sqrt(aa)*sqrt(bb) is symmetric in (a, b); sqrt(aa*bb) could overflow.
    double c = ab / (std::sqrt(aa) * std::sqrt(bb));
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return c;
}

Vector normalize(const Vector& v) {
    double n = v.norm();
    if (n == 0.0) {
        throw Error(ErrorCode::Normalization, "cannot normalize the zero vector");
    }
    std::vector<double> out(v.values().begin(), v.values().end());
    for (double& x : out) x /= n;
    return Vector(std::move(out));
}

}  // namespace lexroute
