#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lexroute {

/// Dense real vector. Immutable once built: dimension is positive and every
/// component is finite, both checked at construction.
class Vector {
public:
    explicit Vector(std::vector<double> values);

    static Vector zeros(std::size_t dim);

    std::size_t dim() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

    double norm() const;
    bool is_zero() const;

    friend bool operator==(const Vector&, const Vector&) = default;

private:
    std::vector<double> values_;
};

double dot(const Vector& a, const Vector& b);

/// Cosine similarity (a.b)/(|a||b|). Dimension mismatch throws; if either
/// side is the zero vector the similarity is 0.0 so empty texts rank last.
double cosine(const Vector& a, const Vector& b);

/// Unit-length copy of v. Throws Normalization on the zero vector.
Vector normalize(const Vector& v);

}  // namespace lexroute
