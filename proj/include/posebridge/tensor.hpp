#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "posebridge/common.hpp"
#include "posebridge/rng.hpp"

namespace posebridge {

// Dense row-major f64 tensor. Values are expected to stay finite; ops that
// could produce NaN/Inf check and raise.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }

    Tensor(std::vector<size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        require(data.size() == numel_of(shape),
                "tensor data length does not match shape");
    }

    static size_t numel_of(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) n *= d;
        return n;
    }

    size_t numel() const { return data.size(); }
    size_t rank() const { return shape.size(); }
    size_t dim(size_t i) const { return shape.at(i); }

    double& at(size_t i) { return data[i]; }
    double at(size_t i) const { return data[i]; }

    // 2-D accessors (rows x cols).
    double& at2(size_t r, size_t c) { return data[r * shape[1] + c]; }
    double at2(size_t r, size_t c) const { return data[r * shape[1] + c]; }

    // 3-D accessors.
    double& at3(size_t a, size_t b, size_t c) {
        return data[(a * shape[1] + b) * shape[2] + c];
    }
    double at3(size_t a, size_t b, size_t c) const {
        return data[(a * shape[1] + b) * shape[2] + c];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void check_finite(const char* where) const {
        if (!all_finite()) fail(std::string("non-finite value in ") + where);
    }

    static Tensor zeros(std::vector<size_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<size_t> s, double v) {
        Tensor t(std::move(s));
        for (double& x : t.data) x = v;
        return t;
    }

    static Tensor randn(std::vector<size_t> s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (double& x : t.data) x = rng.gauss() * stddev;
        return t;
    }

    double norm2() const {
        double s = 0.0;
        for (double v : data) s += v * v;
        return std::sqrt(s);
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape.size(); ++i)
            os << shape[i] << (i + 1 < shape.size() ? "," : "");
        os << ")";
        return os.str();
    }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace posebridge
