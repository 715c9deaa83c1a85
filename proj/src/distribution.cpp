#include "cortex/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cortex/errors.hpp"

namespace cortex {

namespace {
template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace

Distribution::Distribution(Shape shape) : shape_(std::move(shape)) {}

Distribution Distribution::constant(double value) {
    if (!std::isfinite(value) || value < 0) {
        throw ConfigError("constant distribution needs a finite non-negative value");
    }
    return Distribution(Constant{value});
}

Distribution Distribution::uniform(double lo, double hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi) || lo < 0 || hi < lo) {
        throw ConfigError("uniform distribution needs 0 <= lo <= hi");
    }
    return Distribution(Uniform{lo, hi});
}

Distribution Distribution::truncated_geometric(double p, long long min, long long max) {
    if (!(p > 0 && p <= 1) || min < 0 || max < min) {
        throw ConfigError("truncated geometric needs 0 < p <= 1 and 0 <= min <= max");
    }
    return Distribution(TruncatedGeometric{p, min, max});
}

Distribution Distribution::empirical(std::vector<double> values) {
    if (values.empty()) {
        throw ConfigError("empirical distribution needs at least one value");
    }
    for (double v : values) {
        if (!std::isfinite(v) || v < 0) {
            throw ConfigError("empirical distribution values must be finite and non-negative");
        }
    }
    return Distribution(Empirical{std::move(values)});
}

double Distribution::sample(RngStream& rng) const { return quantile(rng.uniform()); }

double Distribution::quantile(double u) const {
    double raw = std::visit(
        overloaded{
            [](const Constant& c) { return c.value; },
            [u](const Uniform& d) { return d.lo + u * (d.hi - d.lo); },
            [u](const TruncatedGeometric& g) {
                if (g.p >= 1.0) {
                    return static_cast<double>(g.min);
                }
                const double q = 1.0 - g.p;
                const double n = static_cast<double>(g.max - g.min + 1);
                // smallest k with 1 - q^(k+1) >= u (1 - q^n)
                const double target = 1.0 - u * (1.0 - std::pow(q, n));
                double k = std::ceil(std::log(target) / std::log(q)) - 1.0;
                k = std::clamp(k, 0.0, n - 1.0);
                return static_cast<double>(g.min) + k;
            },
            [u](const Empirical& e) {
                auto idx = static_cast<std::size_t>(u * static_cast<double>(e.values.size()));
                return e.values[std::min(idx, e.values.size() - 1)];
            },
        },
        shape_);
    return raw * scale_;
}

double Distribution::mean() const {
    double raw = std::visit(
        overloaded{
            [](const Constant& c) { return c.value; },
            [](const Uniform& d) { return 0.5 * (d.lo + d.hi); },
            [](const TruncatedGeometric& g) {
                if (g.p >= 1.0) {
                    return static_cast<double>(g.min);
                }
                const double q = 1.0 - g.p;
                const double n = static_cast<double>(g.max - g.min + 1);
                const double qn = std::pow(q, n);
                return static_cast<double>(g.min) + q / (1.0 - q) - n * qn / (1.0 - qn);
            },
            [](const Empirical& e) {
                return std::accumulate(e.values.begin(), e.values.end(), 0.0) /
                       static_cast<double>(e.values.size());
            },
        },
        shape_);
    return raw * scale_;
}

double Distribution::min() const {
    double raw = std::visit(overloaded{
                                [](const Constant& c) { return c.value; },
                                [](const Uniform& d) { return d.lo; },
                                [](const TruncatedGeometric& g) { return static_cast<double>(g.min); },
                                [](const Empirical& e) {
                                    return *std::min_element(e.values.begin(), e.values.end());
                                },
                            },
                            shape_);
    return raw * scale_;
}

Distribution Distribution::scaled(double factor) const {
    if (!std::isfinite(factor) || factor < 0) {
        throw ConfigError("distribution scale must be finite and non-negative");
    }
    Distribution d = *this;
    d.scale_ *= factor;
    return d;
}

std::string Distribution::describe() const {
    std::ostringstream os;
    std::visit(overloaded{
                   [&](const Constant& c) { os << "constant(" << c.value << ")"; },
                   [&](const Uniform& d) { os << "uniform(" << d.lo << "," << d.hi << ")"; },
                   [&](const TruncatedGeometric& g) {
                       os << "geometric(p=" << g.p << "," << g.min << ".." << g.max << ")";
                   },
                   [&](const Empirical& e) { os << "empirical[" << e.values.size() << "]"; },
               },
               shape_);
    if (scale_ != 1.0) {
        os << "*" << scale_;
    }
    return os.str();
}

}  // namespace cortex
