#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmnet/rng.hpp"

#ifndef MMNET_REAL
#define MMNET_REAL float
#endif

namespace mmnet {

// Element type of every tensor. Release builds use float; a double build of
// the same kernels backs the finite-difference gradient checks.
using real = MMNET_REAL;

// Up to four extents in N,C,H,W order.
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<std::size_t> extents);
    explicit Shape(std::span<const std::size_t> extents);

    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t operator[](std::size_t i) const { return dims_.at(i); }
    std::size_t numel() const noexcept;
    std::span<const std::size_t> dims() const noexcept { return dims_; }

    bool operator==(const Shape&) const = default;
    std::string str() const;

private:
    std::vector<std::size_t> dims_;
};

// Fill rule for tensor_create.
struct Init {
    enum class Kind { constant, uniform, kaiming_normal };
    Kind kind = Kind::constant;
    double a = 0.0; // constant value | uniform lower bound
    double b = 0.0; // uniform upper bound
    std::size_t fan_in = 1;

    static Init constant(double v) { return {Kind::constant, v, 0.0, 1}; }
    static Init uniform(double lo, double hi) { return {Kind::uniform, lo, hi, 1}; }
    static Init kaiming_normal(std::size_t fan_in) { return {Kind::kaiming_normal, 0.0, 0.0, fan_in}; }
};

// Dense tensor of `real`, row-major with W fastest.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, real fill = 0.0f);
    Tensor(Shape shape, std::vector<real> data);

    static Tensor create(const Shape& shape, const Init& init, Rng* rng = nullptr);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.rank(); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // NCHW accessors; only valid for rank-4 tensors.
    std::size_t n() const { return shape_[0]; }
    std::size_t c() const { return shape_[1]; }
    std::size_t h() const { return shape_[2]; }
    std::size_t w() const { return shape_[3]; }

    std::span<real> data() noexcept { return data_; }
    std::span<const real> data() const noexcept { return data_; }
    real* ptr() noexcept { return data_.data(); }
    const real* ptr() const noexcept { return data_.data(); }

    real& operator[](std::size_t i) { return data_[i]; }
    real operator[](std::size_t i) const { return data_[i]; }
    real& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
    real at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    // Same data, new shape with equal element count.
    Tensor reshaped(const Shape& shape) const&;
    Tensor reshaped(const Shape& shape) &&;

    double sum() const;
    bool all_finite() const noexcept;

private:
    Shape shape_;
    std::vector<real> data_;
};

// Throws NumericError naming `what` when any value is NaN/Inf.
void ensure_finite(const Tensor& t, const char* what);

enum class BinaryOp { add, sub, mul, div, max };

// Pointwise op. `b` has the shape of `a` or is a (1,C,1,1) per-channel tensor.
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);

// Row-major matrix product of rank-2 tensors, accumulated in double.
Tensor matmul(const Tensor& a, const Tensor& b);

// Raw GEMM used by the layer kernels: C(m x n) = op(A) * op(B) [+ C].
// A is m x k (or k x m when trans_a), B is k x n (or n x k when trans_b).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const real* a, const real* b, real* c, bool accumulate = false);

// `pad` zeros precede each spatial axis; `pad_end` (defaults to `pad`) follows
// the height axis and `pad_end_w` (defaults to `pad_end`) the width axis.
// A stride-2 3x3 conv on an even input uses pad=1, pad_end=0 so the output
// extent is exactly half.
struct ConvGeometry {
    std::size_t kh = 1, kw = 1, stride = 1, pad = 0;
    std::optional<std::size_t> pad_end;
    std::optional<std::size_t> pad_end_w;

    std::size_t trailing_pad() const { return pad_end.value_or(pad); }
    std::size_t trailing_pad_w() const { return pad_end_w.value_or(trailing_pad()); }
    // Throws ShapeError unless (in + pads - k) is a multiple of stride.
    std::size_t out_extent(std::size_t in, std::size_t k) const { return extent(in, k, trailing_pad()); }
    std::size_t out_h(std::size_t h) const { return extent(h, kh, trailing_pad()); }
    std::size_t out_w(std::size_t w) const { return extent(w, kw, trailing_pad_w()); }

private:
    std::size_t extent(std::size_t in, std::size_t k, std::size_t trailing) const;
};

// Lowers a rank-4 input to a (C*kh*kw) x (N*Ho*Wo) matrix; channels [c0, c0+cn).
Tensor im2col(const Tensor& input, const ConvGeometry& g);
void im2col(const Tensor& input, const ConvGeometry& g, std::size_t c0, std::size_t cn,
            std::span<real> out);
// Adjoint of im2col: scatters columns back, summing overlaps.
void col2im(std::span<const real> cols, const ConvGeometry& g, std::size_t c0, std::size_t cn,
            Tensor& grad_input);

} // namespace mmnet
