#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace duohdr {

// Error taxonomy. The CLI maps these onto exit codes:
// ConfigError -> 1 (usage), ShapeError/IoError -> 2 (data), VerifyError -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct VerifyError : Error {
    using Error::Error;
};

// Shape of a dense tensor, rank 0..4. Row-major layout throughout.
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<int> dims) : rank_(static_cast<int>(dims.size())) {
        if (dims.size() > 4) throw ShapeError("tensor rank > 4 is not supported");
        int i = 0;
        for (int d : dims) {
            if (d <= 0) throw ShapeError("shape extent must be positive, got " + std::to_string(d) + " at axis " + std::to_string(i));
            d_[i++] = d;
        }
    }

    int rank() const { return rank_; }
    int operator[](int i) const { return d_[i]; }
    int& operator[](int i) { return d_[i]; }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int i = 0; i < rank_; ++i) n *= d_[i];
        return n;
    }

    bool operator==(const Shape& o) const {
        if (rank_ != o.rank_) return false;
        for (int i = 0; i < rank_; ++i)
            if (d_[i] != o.d_[i]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << '(';
        for (int i = 0; i < rank_; ++i) os << d_[i] << (i + 1 < rank_ ? "," : "");
        os << ')';
        return os.str();
    }

private:
    std::array<int, 4> d_{1, 1, 1, 1};
    int rank_ = 0;
};

// Dense tensor: shape + contiguous row-major buffer. The universal value type
// of the network; gradients live on tape nodes, not here.
template <typename S>
struct Tensor {
    Shape shape;
    std::vector<S> data;

    Tensor() = default;
    explicit Tensor(const Shape& sh, S fill = S(0)) : shape(sh), data(static_cast<size_t>(sh.numel()), fill) {}
    Tensor(const Shape& sh, std::vector<S> buf) : shape(sh), data(std::move(buf)) {
        if (static_cast<std::int64_t>(data.size()) != shape.numel())
            throw ShapeError("buffer length " + std::to_string(data.size()) + " does not match shape " + shape.str());
    }

    static Tensor scalar(S v) { return Tensor(Shape{1}, std::vector<S>{v}); }

    std::int64_t numel() const { return shape.numel(); }
    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }

    // Indexed access for ranks 1..4 (row-major).
    S& operator()(int i) { return data[static_cast<size_t>(i)]; }
    S operator()(int i) const { return data[static_cast<size_t>(i)]; }
    S& operator()(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    S operator()(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
    S& operator()(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    S operator()(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    S& operator()(int b, int c, int y, int x) {
        return data[((static_cast<size_t>(b) * shape[1] + c) * static_cast<size_t>(shape[2]) + y) * shape[3] + x];
    }
    S operator()(int b, int c, int y, int x) const {
        return data[((static_cast<size_t>(b) * shape[1] + c) * static_cast<size_t>(shape[2]) + y) * shape[3] + x];
    }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    Tensor reshaped(const Shape& sh) const {
        if (sh.numel() != numel())
            throw ShapeError("cannot reshape " + shape.str() + " to " + sh.str());
        Tensor t;
        t.shape = sh;
        t.data = data;
        return t;
    }

    using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapM = Eigen::Map<MatRM>;
    using CMapM = Eigen::Map<const MatRM>;
    using MapA = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
    using CMapA = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

    MapM mat(int rows, int cols) {
        if (static_cast<std::int64_t>(rows) * cols != numel())
            throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) + " does not cover " + shape.str());
        return MapM(ptr(), rows, cols);
    }
    CMapM mat(int rows, int cols) const {
        if (static_cast<std::int64_t>(rows) * cols != numel())
            throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) + " does not cover " + shape.str());
        return CMapM(ptr(), rows, cols);
    }
    MapA arr() { return MapA(ptr(), numel()); }
    CMapA arr() const { return CMapA(ptr(), numel()); }
};

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over the combined word
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Deterministic RNG. mt19937_64 is bit-exact across platforms; the uniform and
// normal transforms below avoid std::*_distribution, whose output is
// implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform() {  // [0,1)
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {  // Box-Muller, cached spare
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0, u2 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t next_u64() { return eng_(); }
    int next_int(int n) { return static_cast<int>(eng_() % static_cast<std::uint64_t>(n)); }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

template <typename S>
Tensor<S> random_tensor(const Shape& sh, Rng& rng, double scale = 1.0) {
    Tensor<S> t(sh);
    for (auto& v : t.data) v = static_cast<S>(scale * rng.normal());
    return t;
}

}  // namespace duohdr
