#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ainet/common.hpp"
#include "ainet/rng.hpp"

namespace ainet {

class Tensor;

namespace autograd {

struct Node {
    const char* op = "";
    std::vector<Tensor> inputs;
    // Reads the output's grad buffer and accumulates into the inputs' grads.
    std::function<void(const Tensor& out)> apply;
};

// Grad recording is on by default; NoGradGuard switches it off for a scope.
bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

}  // namespace autograd

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until touched by backward / zero_grad
    bool requires_grad = false;
    std::shared_ptr<autograd::Node> grad_fn;
};

// Dense row-major double tensor with reverse-mode autodiff. Value-semantic
// handle over shared storage; operations are pure (no in-place math).
class Tensor {
public:
    Tensor() = default;

    static Tensor from_vector(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
    static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }
    double* ptr() { return impl_->data.data(); }
    const double* ptr() const { return impl_->data.data(); }

    double value() const;  // scalar tensors only
    double at(std::initializer_list<int64_t> idx) const;
    void set(std::initializer_list<int64_t> idx, double v);

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        impl_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::vector<double>& grad();              // allocates zeros on first use
    const std::vector<double>& grad() const;  // fails if absent
    void zero_grad();                         // allocate if needed, fill 0

    // Detached copy of the values (fresh storage, no graph, no grad flag).
    Tensor detach() const;
    // Deep copy preserving requires_grad, without graph history.
    Tensor clone() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    const void* id() const { return impl_.get(); }  // identity for wiring tests

    static Tensor wrap(std::shared_ptr<TensorImpl> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// ---- shape helpers ----
Shape broadcast_shapes(const Shape& a, const Shape& b);

// ---- elementwise (trailing-dimension broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor tanh(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor neg(const Tensor& x);
// phi1(x) = expm1(x)/x with phi1(0) = 1; the ZOH input-coupling factor.
Tensor phi1(const Tensor& x);

enum class EwKind { Add, Sub, Mul, Tanh, Silu, Softplus, Exp, Scale };
// Dispatch form of the fixed elementwise set (binary kinds take two inputs,
// unary kinds one; Scale reads `factor`).
Tensor elementwise(EwKind kind, const std::vector<Tensor>& inputs, double factor = 1.0);

// ---- linear algebra ----
// a [..,m,k] x b [..,k,n] -> [..,m,n]; leading batch dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
// y = x*W + bias (bias optional: pass undefined Tensor to skip)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// ---- normalization / reductions ----
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax(const Tensor& x);  // last axis
Tensor sum(const Tensor& x);      // all elements -> scalar
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);

// ---- structure ----
Tensor concat(const std::vector<Tensor>& tensors, int axis);
std::vector<Tensor> split(const Tensor& x, const std::vector<int64_t>& sizes, int axis);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose_last(const Tensor& x);  // swap the last two axes
// x [B,L,C], one row index per batch element -> [B,C]
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows);
// x [B,L,C] -> [B,len,C], tokens [start, start+len)
Tensor slice_tokens(const Tensor& x, int64_t start, int64_t len);
// Move whole blocks of `block_len` tokens: out block j = in block order[b][j].
Tensor reorder_blocks(const Tensor& x, const std::vector<std::vector<int64_t>>& order,
                      int64_t block_len);

// ---- sequence kernels ----
// Depthwise causal 1-D convolution over tokens; left zero-padding keeps
// output t a function of inputs [0, t]. x [B,L,D], w [D,K], bias [D].
Tensor causal_dwconv1d(const Tensor& x, const Tensor& w, const Tensor& bias);

// Input-dependent (S6) scan with exact per-step ZOH discretization:
//   s      = delta[b,t,d] * A[d,n]
//   Abar   = exp(s)
//   Bbar   = delta * phi1(s) * Bp[b,t,n]
//   h      = Abar*h + Bbar*u[b,t,d]
//   y      = sum_n Cp[b,t,n]*h  (+ d_skip[d]*u when d_skip is defined)
// u,delta [B,L,D]; A [D,N]; Bp,Cp [B,L,N]; d_skip [D] or undefined.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& Bp,
                      const Tensor& Cp, const Tensor& d_skip);

// ---- autodiff driver ----
// loss must be scalar; accumulates d(loss)/d(t) into the grads of every
// requires-grad tensor reachable from it, then releases the graph.
void backward(const Tensor& loss);

}  // namespace ainet
