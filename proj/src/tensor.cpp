#include "mmnet/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "mmnet/error.hpp"

namespace mmnet {

Shape::Shape(std::initializer_list<std::size_t> extents)
    : Shape(std::span<const std::size_t>(extents.begin(), extents.size()))
{
}

Shape::Shape(std::span<const std::size_t> extents) : dims_(extents.begin(), extents.end())
{
    if (dims_.empty() || dims_.size() > 4)
        throw ShapeError("tensor rank must be 1..4, got " + std::to_string(dims_.size()));
    std::size_t total = 1;
    for (auto d : dims_) {
        if (d == 0)
            throw ShapeError("zero extent in shape " + str());
        if (total > std::numeric_limits<std::size_t>::max() / d)
            throw ShapeError("element count overflows in shape " + str());
        total *= d;
    }
    // real payload must stay addressable
    if (total > std::numeric_limits<std::ptrdiff_t>::max() / sizeof(real))
        throw ShapeError("element count overflows in shape " + str());
}

std::size_t Shape::numel() const noexcept
{
    if (dims_.empty())
        return 0;
    std::size_t total = 1;
    for (auto d : dims_)
        total *= d;
    return total;
}

std::string Shape::str() const
{
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims_.size(); ++i)
        os << (i ? "," : "") << dims_[i];
    os << ')';
    return os.str();
}

Tensor::Tensor(Shape shape, real fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<real> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (data_.size() != shape_.numel())
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_.str());
}

Tensor Tensor::create(const Shape& shape, const Init& init, Rng* rng)
{
    Tensor t(shape);
    switch (init.kind) {
    case Init::Kind::constant:
        std::fill(t.data_.begin(), t.data_.end(), static_cast<real>(init.a));
        break;
    case Init::Kind::uniform:
        if (!rng)
            throw UsageError("uniform init requires an rng");
        for (auto& v : t.data_)
            v = static_cast<real>(rng->uniform(init.a, init.b));
        break;
    case Init::Kind::kaiming_normal: {
        if (!rng)
            throw UsageError("kaiming init requires an rng");
        const double stddev = std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(init.fan_in, 1)));
        for (auto& v : t.data_)
            v = static_cast<real>(stddev * rng->normal());
        break;
    }
    }
    return t;
}

real& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w)
{
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

real Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const
{
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(const Shape& shape) const&
{
    return Tensor(*this).reshaped(shape);
}

Tensor Tensor::reshaped(const Shape& shape) &&
{
    if (shape.numel() != data_.size())
        throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    Tensor out;
    out.shape_ = shape;
    out.data_ = std::move(data_);
    shape_ = Shape();
    return out;
}

double Tensor::sum() const
{
    double s = 0.0;
    for (real v : data_)
        s += v;
    return s;
}

bool Tensor::all_finite() const noexcept
{
    for (real v : data_)
        if (!std::isfinite(v))
            return false;
    return true;
}

void ensure_finite(const Tensor& t, const char* what)
{
    if (!t.all_finite())
        throw NumericError(std::string("non-finite value in ") + what);
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b)
{
    std::size_t channels = 0, plane = 0;
    const bool same = a.shape() == b.shape();
    if (!same) {
        const bool per_channel = a.rank() == 4 && b.rank() == 4 && b.n() == 1 && b.h() == 1 &&
                                 b.w() == 1 && b.c() == a.c();
        if (!per_channel)
            throw ShapeError("elementwise: incompatible shapes " + a.shape().str() + " and " +
                             b.shape().str());
        channels = a.c();
        plane = a.h() * a.w();
    }
    Tensor out(a.shape());
    const auto x = a.data();
    const auto y = b.data();
    auto z = out.data();
    auto rhs = [&](std::size_t i) { return same ? y[i] : y[(i / plane) % channels]; };
    for (std::size_t i = 0; i < x.size(); ++i) {
        const real r = rhs(i);
        switch (op) {
        case BinaryOp::add: z[i] = x[i] + r; break;
        case BinaryOp::sub: z[i] = x[i] - r; break;
        case BinaryOp::mul: z[i] = x[i] * r; break;
        case BinaryOp::div:
            if (r == 0.0f)
                throw NumericError("elementwise: division by zero");
            z[i] = x[i] / r;
            break;
        case BinaryOp::max: z[i] = std::max(x[i], r); break;
        }
    }
    ensure_finite(out, "elementwise result");
    return out;
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const real* a,
          const real* b, real* c, bool accumulate)
{
    // Each output row is reduced in a fixed k order into a double buffer, so
    // results do not depend on how rows are scheduled.
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        if (trans_b) {
            // B is n x k: each output is a dot product of contiguous rows.
            for (std::size_t j = 0; j < n; ++j) {
                const real* bj = b + j * k;
                double s = 0.0;
                if (trans_a) {
                    for (std::size_t p = 0; p < k; ++p)
                        s += static_cast<double>(a[p * m + i]) * bj[p];
                } else {
                    const real* ai = a + i * k;
                    for (std::size_t p = 0; p < k; ++p)
                        s += static_cast<double>(ai[p]) * bj[p];
                }
                acc[j] = s;
            }
        } else {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t p = 0; p < k; ++p) {
                const double av = trans_a ? a[p * m + i] : a[i * k + p];
                if (av == 0.0)
                    continue;
                const real* bp = b + p * n;
                for (std::size_t j = 0; j < n; ++j)
                    acc[j] += av * bp[j];
            }
        }
        real* ci = c + i * n;
        if (accumulate) {
            for (std::size_t j = 0; j < n; ++j)
                ci[j] = static_cast<real>(static_cast<double>(ci[j]) + acc[j]);
        } else {
            for (std::size_t j = 0; j < n; ++j)
                ci[j] = static_cast<real>(acc[j]);
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b)
{
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul expects rank-2 operands, got " + a.shape().str() + " and " +
                         b.shape().str());
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k)
        throw ShapeError("matmul: inner dimensions differ in " + a.shape().str() + " x " +
                         b.shape().str());
    Tensor c(Shape{m, n});
    gemm(false, false, m, n, k, a.ptr(), b.ptr(), c.ptr());
    ensure_finite(c, "matmul result");
    return c;
}

std::size_t ConvGeometry::extent(std::size_t in, std::size_t k, std::size_t trailing) const
{
    const std::size_t padded = in + pad + trailing;
    if (stride == 0 || padded < k)
        throw ShapeError("convolution window larger than padded input");
    if ((padded - k) % stride != 0)
        throw ShapeError("non-integral convolution output extent: (" + std::to_string(in) + "+" +
                         std::to_string(pad) + "+" + std::to_string(trailing) + "-" +
                         std::to_string(k) + ")/" + std::to_string(stride));
    return (padded - k) / stride + 1;
}

void im2col(const Tensor& input, const ConvGeometry& g, std::size_t c0, std::size_t cn,
            std::span<real> out)
{
    const std::size_t N = input.n(), C = input.c(), H = input.h(), W = input.w();
    if (c0 + cn > C)
        throw ShapeError("im2col channel range out of bounds");
    const std::size_t Ho = g.out_h(H), Wo = g.out_w(W);
    const std::size_t cols = N * Ho * Wo;
    if (out.size() != cn * g.kh * g.kw * cols)
        throw ShapeError("im2col output buffer has wrong size");
    const real* src = input.ptr();
    std::size_t row = 0;
    for (std::size_t c = c0; c < c0 + cn; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
                real* dst = out.data() + row * cols;
                for (std::size_t n = 0; n < N; ++n) {
                    const real* plane = src + (n * C + c) * H * W;
                    for (std::size_t oy = 0; oy < Ho; ++oy) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        real* d = dst + (n * Ho + oy) * Wo;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) {
                            std::fill(d, d + Wo, 0.0f);
                            continue;
                        }
                        const real* line = plane + iy * W;
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                      static_cast<std::ptrdiff_t>(g.pad);
                            d[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) ? 0.0f : line[ix];
                        }
                    }
                }
            }
        }
    }
}

Tensor im2col(const Tensor& input, const ConvGeometry& g)
{
    if (input.rank() != 4)
        throw ShapeError("im2col expects an NCHW tensor, got " + input.shape().str());
    const std::size_t Ho = g.out_h(input.h()), Wo = g.out_w(input.w());
    Tensor out(Shape{input.c() * g.kh * g.kw, input.n() * Ho * Wo});
    im2col(input, g, 0, input.c(), out.data());
    return out;
}

void col2im(std::span<const real> cols, const ConvGeometry& g, std::size_t c0, std::size_t cn,
            Tensor& grad_input)
{
    const std::size_t N = grad_input.n(), C = grad_input.c(), H = grad_input.h(), W = grad_input.w();
    const std::size_t Ho = g.out_h(H), Wo = g.out_w(W);
    const std::size_t ncols = N * Ho * Wo;
    if (cols.size() != cn * g.kh * g.kw * ncols)
        throw ShapeError("col2im input buffer has wrong size");
    real* dst = grad_input.ptr();
    std::size_t row = 0;
    for (std::size_t c = c0; c < c0 + cn; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
                const real* s = cols.data() + row * ncols;
                for (std::size_t n = 0; n < N; ++n) {
                    real* plane = dst + (n * C + c) * H * W;
                    for (std::size_t oy = 0; oy < Ho; ++oy) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H))
                            continue;
                        const real* sv = s + (n * Ho + oy) * Wo;
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                      static_cast<std::ptrdiff_t>(g.pad);
                            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(W))
                                plane[iy * W + ix] += sv[ox];
                        }
                    }
                }
            }
        }
    }
}

} // namespace mmnet
