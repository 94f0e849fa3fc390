#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lcco {

/// Dense row-major tensor of doubles. Value type; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v) { return Tensor(std::move(shape), v); }
    static Tensor from(std::vector<int> shape, std::vector<double> data);
    static Tensor scalar(double v) { return from({1}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    long long size() const { return static_cast<long long>(data_.size()); }
    bool empty() const { return data_.empty(); }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](long long i) { return data_[static_cast<size_t>(i)]; }
    double operator[](long long i) const { return data_[static_cast<size_t>(i)]; }

    // Indexed access for the common ranks; no bounds checks in release builds.
    double& at2(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    double at2(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    double& at3(int c, int y, int x) {
        return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    double at3(int c, int y, int x) const {
        return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    double& at4(int a, int b, int c, int d) {
        return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    double at4(int a, int b, int c, int d) const {
        return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    void fill(double v);
    bool all_finite() const;
    double sum() const;
    double max_abs() const;

    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

/// Max |a-b| over all entries; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// FNV-1a over raw bytes, used for content-addressed fixtures and checksums.
std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h = 1469598103934665603ULL);
std::uint64_t fnv1a64_str(const std::string& s, std::uint64_t h = 1469598103934665603ULL);

}  // namespace lcco
