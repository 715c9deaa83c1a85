#pragma once

#include <string>
#include <variant>
#include <vector>

#include "cortex/rng.hpp"

namespace cortex {

/// Sampling distribution over non-negative reals. Every sample consumes
/// exactly one uniform from the stream (inverse-CDF), which keeps keyed
/// substreams aligned across configurations.
class Distribution {
public:
    struct Constant {
        double value;
    };
    struct Uniform {
        double lo, hi;
    };
    // Integers in [min, max] with P(k) proportional to (1 - p)^(k - min).
    struct TruncatedGeometric {
        double p;
        long long min, max;
    };
    struct Empirical {
        std::vector<double> values;
    };
    using Shape = std::variant<Constant, Uniform, TruncatedGeometric, Empirical>;

    static Distribution constant(double value);
    static Distribution uniform(double lo, double hi);
    static Distribution truncated_geometric(double p, long long min, long long max);
    static Distribution empirical(std::vector<double> values);

    double sample(RngStream& rng) const;
    /// Inverse CDF at u in [0, 1).
    double quantile(double u) const;
    double mean() const;
    double min() const;

    /// Multiplies every sample (and the mean) by `factor`.
    Distribution scaled(double factor) const;
    double scale() const { return scale_; }
    const Shape& shape() const { return shape_; }

    std::string describe() const;

private:
    explicit Distribution(Shape shape);

    Shape shape_;
    double scale_ = 1.0;
};

}  // namespace cortex
