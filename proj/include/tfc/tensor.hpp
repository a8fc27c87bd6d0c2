#pragma once

// Reverse-mode autodiff over dense row-major tensors, templated on the scalar
// type: float for the training path, double for the finite-difference suites.
// Graphs are built dynamically; backward() walks reverse topological order and
// releases interior activations as soon as they are consumed.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "tfc/errors.hpp"
#include "tfc/fft.hpp"
#include "tfc/spectral.hpp"

namespace tfc::ad {

template <typename T>
struct Tensor {
    std::vector<long> shape;
    std::shared_ptr<std::vector<T>> store;

    Tensor() = default;

    static Tensor zeros(std::vector<long> s) {
        Tensor t;
        t.shape = std::move(s);
        t.store = std::make_shared<std::vector<T>>(t.count(), T(0));
        return t;
    }
    static Tensor full(std::vector<long> s, T v) {
        Tensor t = zeros(std::move(s));
        std::fill(t.store->begin(), t.store->end(), v);
        return t;
    }
    static Tensor from(std::vector<long> s, std::vector<T> data) {
        Tensor t;
        t.shape = std::move(s);
        if (static_cast<long>(data.size()) != t.count())
            throw ShapeError("tensor: data size does not match shape");
        t.store = std::make_shared<std::vector<T>>(std::move(data));
        return t;
    }

    long count() const {
        long n = 1;
        for (long d : shape) n *= d;
        return n;
    }
    long numel() const { return store ? static_cast<long>(store->size()) : 0; }
    int ndim() const { return static_cast<int>(shape.size()); }
    long dim(int i) const { return shape[i]; }
    T* data() { return store->data(); }
    const T* data() const { return store->data(); }
    bool empty() const { return !store; }
    void release() {
        store.reset();
        shape.clear();
    }
};

template <typename T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad = Tensor<T>::zeros(val.shape);
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(v);
    return n;
}

template <typename T>
Var<T> leaf(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(v);
    n->requires_grad = true;
    n->is_leaf = true;
    return n;
}

template <typename T>
Var<T> make_node(Tensor<T> val, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> bwd) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(val);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(bwd);
    }
    return n;
}

// Eigen views over the flat buffers.
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using RowArr = Eigen::Array<T, 1, Eigen::Dynamic>;

template <typename T>
void accumulate(const Var<T>& p, const T* g, long n) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    ArrMap<T>(p->grad.data(), n) += ConstArrMap<T>(g, n);
}

// Seeds the scalar root with grad 1 and walks the graph in reverse
// topological order. Interior activations and graph edges are dropped as soon
// as each node has been processed, so peak memory stays near the forward peak
// and the graph is single-use.
template <typename T>
void backward(const Var<T>& root) {
    if (root->val.count() != 1) throw ShapeError("backward: root must be scalar");

    std::vector<Var<T>> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Var<T>, std::size_t>> stack;
    stack.push_back({root, 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& top = stack.back();
        Node<T>* node = top.first.get();
        if (top.second < node->parents.size()) {
            Var<T> p = node->parents[top.second++];
            if (p->requires_grad && seen.insert(p.get()).second)
                stack.push_back({std::move(p), 0});
        } else {
            order.push_back(top.first);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    std::fill(root->grad.store->begin(), root->grad.store->end(), T(1));

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = it->get();
        if (!n->grad.empty() && n->backward_fn) n->backward_fn(*n);
        if (!n->is_leaf) {
            if (n != root.get()) {
                n->val.release();
                n->grad.release();
            }
            n->backward_fn = nullptr;
            n->parents.clear();
        }
    }
}

template <typename T>
void zero_grad(const Var<T>& v) {
    v->grad.release();
}

// ---- elementwise ----

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape != b.shape) throw ShapeError(std::string(op) + ": shape mismatch");
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->val, b->val, "add");
    Tensor<T> out = Tensor<T>::zeros(a->val.shape);
    const long n = out.count();
    ArrMap<T>(out.data(), n) =
        ConstArrMap<T>(a->val.data(), n) + ConstArrMap<T>(b->val.data(), n);
    return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        const long n = self.grad.count();
        accumulate(a, self.grad.data(), n);
        accumulate(b, self.grad.data(), n);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->val, b->val, "sub");
    Tensor<T> out = Tensor<T>::zeros(a->val.shape);
    const long n = out.count();
    ArrMap<T>(out.data(), n) =
        ConstArrMap<T>(a->val.data(), n) - ConstArrMap<T>(b->val.data(), n);
    return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        const long n = self.grad.count();
        accumulate(a, self.grad.data(), n);
        if (b->requires_grad) {
            b->ensure_grad();
            ArrMap<T>(b->grad.data(), n) -= ConstArrMap<T>(self.grad.data(), n);
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->val, b->val, "mul");
    Tensor<T> out = Tensor<T>::zeros(a->val.shape);
    const long n = out.count();
    ArrMap<T>(out.data(), n) =
        ConstArrMap<T>(a->val.data(), n) * ConstArrMap<T>(b->val.data(), n);
    return make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        const long n = self.grad.count();
        ConstArrMap<T> g(self.grad.data(), n);
        if (a->requires_grad) {
            a->ensure_grad();
            ArrMap<T>(a->grad.data(), n) += g * ConstArrMap<T>(b->val.data(), n);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            ArrMap<T>(b->grad.data(), n) += g * ConstArrMap<T>(a->val.data(), n);
        }
    });
}

template <typename T>
Var<T> smul(const Var<T>& a, T s) {
    Tensor<T> out = Tensor<T>::zeros(a->val.shape);
    const long n = out.count();
    ArrMap<T>(out.data(), n) = ConstArrMap<T>(a->val.data(), n) * s;
    return make_node<T>(std::move(out), {a}, [a, s](Node<T>& self) {
        const long n = self.grad.count();
        if (!a->requires_grad) return;
        a->ensure_grad();
        ArrMap<T>(a->grad.data(), n) += ConstArrMap<T>(self.grad.data(), n) * s;
    });
}

template <typename T>
Var<T> sadd(const Var<T>& a, T s) {
    Tensor<T> out = Tensor<T>::zeros(a->val.shape);
    const long n = out.count();
    ArrMap<T>(out.data(), n) = ConstArrMap<T>(a->val.data(), n) + s;
    return make_node<T>(std::move(out), {a}, [a](Node<T>& self) {
        accumulate(a, self.grad.data(), self.grad.count());
    });
}

// x^p for x >= 0
template <typename T>
Var<T> pow_scalar(const Var<T>& a, T p) {
    Tensor<T> out = Tensor<T>::zeros(a->val.shape);
    const long n = out.count();
    const T* x = a->val.data();
    T* y = out.data();
    for (long i = 0; i < n; ++i) y[i] = std::pow(x[i], p);
    return make_node<T>(std::move(out), {a}, [a, p](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const long n = self.grad.count();
        const T* x = a->val.data();
        const T* g = self.grad.data();
        T* d = a->grad.data();
        for (long i = 0; i < n; ++i) {
            const T base = x[i];
            d[i] += (base == T(0) && p < T(1)) ? T(0) : g[i] * p * std::pow(base, p - T(1));
        }
    });
}

template <typename T>
Var<T> sqrt_op(const Var<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a->val.shape);
    const long n = out.count();
    ArrMap<T>(out.data(), n) = ConstArrMap<T>(a->val.data(), n).sqrt();
    return make_node<T>(std::move(out), {a}, [a](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const long n = self.grad.count();
        const T* x = a->val.data();
        const T* g = self.grad.data();
        T* d = a->grad.data();
        for (long i = 0; i < n; ++i) {
            const T r = std::sqrt(x[i]);
            d[i] += r > T(0) ? g[i] / (T(2) * r) : T(0);
        }
    });
}

template <typename T>
Var<T> abs_op(const Var<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a->val.shape);
    const long n = out.count();
    ArrMap<T>(out.data(), n) = ConstArrMap<T>(a->val.data(), n).abs();
    return make_node<T>(std::move(out), {a}, [a](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const long n = self.grad.count();
        const T* x = a->val.data();
        const T* g = self.grad.data();
        T* d = a->grad.data();
        for (long i = 0; i < n; ++i) d[i] += x[i] > T(0) ? g[i] : (x[i] < T(0) ? -g[i] : T(0));
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a->val.shape);
    const long n = out.count();
    const T* x = a->val.data();
    T* y = out.data();
    for (long i = 0; i < n; ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
    Tensor<T> saved = out;  // shares the store
    return make_node<T>(std::move(out), {a}, [a, saved](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const long n = self.grad.count();
        const T* s = saved.data();
        const T* g = self.grad.data();
        T* d = a->grad.data();
        for (long i = 0; i < n; ++i) d[i] += g[i] * s[i] * (T(1) - s[i]);
    });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a->val.shape);
    const long n = out.count();
    const T* x = a->val.data();
    T* y = out.data();
    for (long i = 0; i < n; ++i) y[i] = x[i] / (T(1) + std::exp(-x[i]));
    return make_node<T>(std::move(out), {a}, [a](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const long n = self.grad.count();
        const T* x = a->val.data();
        const T* g = self.grad.data();
        T* d = a->grad.data();
        for (long i = 0; i < n; ++i) {
            const T s = T(1) / (T(1) + std::exp(-x[i]));
            d[i] += g[i] * s * (T(1) + x[i] * (T(1) - s));
        }
    });
}

// slope is either one scalar or one value per channel (last dim)
template <typename T>
Var<T> prelu(const Var<T>& x, const Var<T>& slope) {
    const long c = x->val.shape.back();
    const long sc = slope->val.count();
    if (sc != 1 && sc != c) throw ShapeError("prelu: slope count must be 1 or channels");
    Tensor<T> out = Tensor<T>::zeros(x->val.shape);
    const long n = out.count();
    const T* xd = x->val.data();
    const T* a = slope->val.data();
    T* y = out.data();
    for (long i = 0; i < n; ++i) {
        const T s = a[sc == 1 ? 0 : i % c];
        y[i] = xd[i] > T(0) ? xd[i] : s * xd[i];
    }
    return make_node<T>(std::move(out), {x, slope}, [x, slope, c, sc](Node<T>& self) {
        const long n = self.grad.count();
        const T* xd = x->val.data();
        const T* g = self.grad.data();
        if (x->requires_grad) {
            x->ensure_grad();
            const T* a = slope->val.data();
            T* d = x->grad.data();
            for (long i = 0; i < n; ++i)
                d[i] += g[i] * (xd[i] > T(0) ? T(1) : a[sc == 1 ? 0 : i % c]);
        }
        if (slope->requires_grad) {
            slope->ensure_grad();
            T* da = slope->grad.data();
            for (long i = 0; i < n; ++i)
                if (xd[i] <= T(0)) da[sc == 1 ? 0 : i % c] += g[i] * xd[i];
        }
    });
}

// ---- reductions ----

// Reductions accumulate with plain left-to-right loops. Eigen's vectorized
// redux splits at an address-dependent boundary, which makes results depend
// on where the allocator placed the buffer; fixed-order loops keep outputs
// bitwise reproducible across runs and across batch positions.
template <typename T>
T strict_sum(const T* x, long n) {
    T acc = T(0);
    for (long i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    const long n = a->val.count();
    Tensor<T> out = Tensor<T>::from({1}, {strict_sum(a->val.data(), n)});
    return make_node<T>(std::move(out), {a}, [a, n](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const T g = self.grad.data()[0];
        ArrMap<T>(a->grad.data(), n) += g;
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    const long n = a->val.count();
    return smul(sum(a), T(1) / static_cast<T>(n));
}

// ---- linear algebra ----

// Forward accumulates each output row over depth in a fixed order, so a
// row's result depends only on its own contents. Eigen's packed GEMM does
// not guarantee that at every shape, and matmul is where independent batch
// items share one call.
template <typename T>
void rowwise_gemm(const T* a, const T* b, T* c, long m, long k, long n) {
    for (long i = 0; i < m; ++i) {
        Eigen::Map<Eigen::Array<T, 1, Eigen::Dynamic>> crow(c + i * n, n);
        for (long kk = 0; kk < k; ++kk)
            crow += a[i * k + kk] *
                    Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>>(b + kk * n, n);
    }
}

// Unpacked kernels for products where one dimension is a per-head width.
// Packed GEMM spends more time packing than multiplying there, and each
// output element below accumulates in an index-determined order.

// C (m,n) += A (m,p) B (n,p)^T: every element is one short dot of two rows.
template <typename T, int P>
void dot_rows_acc(const T* a, const T* b, T* c, long m, long n) {
    using V = Eigen::Array<T, P, 1>;
    for (long i = 0; i < m; ++i) {
        Eigen::Map<const V> ar(a + i * P);
        for (long j = 0; j < n; ++j)
            c[i * n + j] += (ar * Eigen::Map<const V>(b + j * P)).sum();
    }
}

// C (m,n) += A (m,k) B (k,n): register accumulators per row, walked over k.
template <typename T, int N>
void row_acc_gemm(const T* a, const T* b, T* c, long m, long k) {
    using V = Eigen::Array<T, N, 1>;
    for (long i = 0; i < m; ++i) {
        V acc = V::Zero();
        const T* ar = a + i * k;
        for (long kk = 0; kk < k; ++kk) acc += ar[kk] * Eigen::Map<const V>(b + kk * N);
        Eigen::Map<V>(c + i * N) += acc;
    }
}

// C (k,n) += A (r,k)^T B (r,n): rank-1 updates in row order of A, so every
// C row still sees a fixed accumulation order.
template <typename T, int N>
void outer_acc_gemm(const T* a, const T* b, T* c, long r, long k) {
    using V = Eigen::Array<T, N, 1>;
    for (long i = 0; i < r; ++i) {
        const T* ar = a + i * k;
        Eigen::Map<const V> br(b + i * N);
        for (long j = 0; j < k; ++j) Eigen::Map<V>(c + j * N) += ar[j] * br;
    }
}

// Row reductions with a fixed eight-accumulator stride pattern: the grouping
// depends only on element index, so results stay independent of where the
// row lives, and the chains pipeline instead of serializing.
template <typename T>
T strided_row_max(const T* row, long n) {
    if (n < 8) {
        T m = row[0];
        for (long j = 1; j < n; ++j) m = std::max(m, row[j]);
        return m;
    }
    T m0 = row[0], m1 = row[1], m2 = row[2], m3 = row[3];
    T m4 = row[4], m5 = row[5], m6 = row[6], m7 = row[7];
    long j = 8;
    for (; j + 8 <= n; j += 8) {
        m0 = std::max(m0, row[j]);
        m1 = std::max(m1, row[j + 1]);
        m2 = std::max(m2, row[j + 2]);
        m3 = std::max(m3, row[j + 3]);
        m4 = std::max(m4, row[j + 4]);
        m5 = std::max(m5, row[j + 5]);
        m6 = std::max(m6, row[j + 6]);
        m7 = std::max(m7, row[j + 7]);
    }
    for (; j < n; ++j) m0 = std::max(m0, row[j]);
    return std::max(std::max(std::max(m0, m1), std::max(m2, m3)),
                    std::max(std::max(m4, m5), std::max(m6, m7)));
}

template <typename T>
T strided_row_sum(const T* row, long n) {
    T a0 = T(0), a1 = T(0), a2 = T(0), a3 = T(0);
    T a4 = T(0), a5 = T(0), a6 = T(0), a7 = T(0);
    long j = 0;
    for (; j + 8 <= n; j += 8) {
        a0 += row[j];
        a1 += row[j + 1];
        a2 += row[j + 2];
        a3 += row[j + 3];
        a4 += row[j + 4];
        a5 += row[j + 5];
        a6 += row[j + 6];
        a7 += row[j + 7];
    }
    for (; j < n; ++j) a0 += row[j];
    return ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7));
}

template <typename T>
T strided_row_dot(const T* a, const T* b, long n) {
    T a0 = T(0), a1 = T(0), a2 = T(0), a3 = T(0);
    T a4 = T(0), a5 = T(0), a6 = T(0), a7 = T(0);
    long j = 0;
    for (; j + 8 <= n; j += 8) {
        a0 += a[j] * b[j];
        a1 += a[j + 1] * b[j + 1];
        a2 += a[j + 2] * b[j + 2];
        a3 += a[j + 3] * b[j + 3];
        a4 += a[j + 4] * b[j + 4];
        a5 += a[j + 5] * b[j + 5];
        a6 += a[j + 6] * b[j + 6];
        a7 += a[j + 7] * b[j + 7];
    }
    for (; j < n; ++j) a0 += a[j] * b[j];
    return ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7));
}

// The three dispatchers return false when the small dimension is too wide,
// and the caller falls back to Eigen.
template <typename T>
bool dot_rows_small(const T* a, const T* b, T* c, long m, long n, long p) {
    switch (p) {
        case 1: dot_rows_acc<T, 1>(a, b, c, m, n); return true;
        case 2: dot_rows_acc<T, 2>(a, b, c, m, n); return true;
        case 3: dot_rows_acc<T, 3>(a, b, c, m, n); return true;
        case 4: dot_rows_acc<T, 4>(a, b, c, m, n); return true;
        case 5: dot_rows_acc<T, 5>(a, b, c, m, n); return true;
        case 6: dot_rows_acc<T, 6>(a, b, c, m, n); return true;
        case 7: dot_rows_acc<T, 7>(a, b, c, m, n); return true;
        case 8: dot_rows_acc<T, 8>(a, b, c, m, n); return true;
    }
    return false;
}

template <typename T>
bool row_acc_small(const T* a, const T* b, T* c, long m, long k, long n) {
    switch (n) {
        case 1: row_acc_gemm<T, 1>(a, b, c, m, k); return true;
        case 2: row_acc_gemm<T, 2>(a, b, c, m, k); return true;
        case 3: row_acc_gemm<T, 3>(a, b, c, m, k); return true;
        case 4: row_acc_gemm<T, 4>(a, b, c, m, k); return true;
        case 5: row_acc_gemm<T, 5>(a, b, c, m, k); return true;
        case 6: row_acc_gemm<T, 6>(a, b, c, m, k); return true;
        case 7: row_acc_gemm<T, 7>(a, b, c, m, k); return true;
        case 8: row_acc_gemm<T, 8>(a, b, c, m, k); return true;
    }
    return false;
}

template <typename T>
bool outer_acc_small(const T* a, const T* b, T* c, long r, long k, long n) {
    switch (n) {
        case 1: outer_acc_gemm<T, 1>(a, b, c, r, k); return true;
        case 2: outer_acc_gemm<T, 2>(a, b, c, r, k); return true;
        case 3: outer_acc_gemm<T, 3>(a, b, c, r, k); return true;
        case 4: outer_acc_gemm<T, 4>(a, b, c, r, k); return true;
        case 5: outer_acc_gemm<T, 5>(a, b, c, r, k); return true;
        case 6: outer_acc_gemm<T, 6>(a, b, c, r, k); return true;
        case 7: outer_acc_gemm<T, 7>(a, b, c, r, k); return true;
        case 8: outer_acc_gemm<T, 8>(a, b, c, r, k); return true;
    }
    return false;
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a->val.ndim() != 2 || b->val.ndim() != 2 || a->val.dim(1) != b->val.dim(0))
        throw ShapeError("matmul: incompatible shapes");
    const long m = a->val.dim(0), k = a->val.dim(1), n = b->val.dim(1);
    Tensor<T> out = Tensor<T>::zeros({m, n});
    rowwise_gemm(a->val.data(), b->val.data(), out.data(), m, k, n);
    return make_node<T>(std::move(out), {a, b}, [a, b, m, k, n](Node<T>& self) {
        ConstMatMap<T> g(self.grad.data(), m, n);
        if (a->requires_grad) {
            a->ensure_grad();
            MatMap<T>(a->grad.data(), m, k).noalias() +=
                g * ConstMatMap<T>(b->val.data(), k, n).transpose();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            MatMap<T>(b->grad.data(), k, n).noalias() +=
                ConstMatMap<T>(a->val.data(), m, k).transpose() * g;
        }
    });
}

// rows of x (flattened to 2D on the last dim) plus a length-C bias
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
    const long c = x->val.shape.back();
    if (b->val.count() != c) throw ShapeError("add_bias: bias length mismatch");
    const long rows = x->val.count() / c;
    Tensor<T> out = Tensor<T>::zeros(x->val.shape);
    ConstMatMap<T> xm(x->val.data(), rows, c);
    Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>> ba(b->val.data(), c);
    MatMap<T>(out.data(), rows, c) = xm;
    MatMap<T>(out.data(), rows, c).array().rowwise() += ba;
    return make_node<T>(std::move(out), {x, b}, [x, b, rows, c](Node<T>& self) {
        accumulate(x, self.grad.data(), self.grad.count());
        if (b->requires_grad) {
            b->ensure_grad();
            const T* g = self.grad.data();
            T* db = b->grad.data();
            for (long r = 0; r < rows; ++r)
                for (long j = 0; j < c; ++j) db[j] += g[r * c + j];
        }
    });
}

// (N, M, K) x (N, K, P) batched product
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
    if (a->val.ndim() != 3 || b->val.ndim() != 3 || a->val.dim(0) != b->val.dim(0) ||
        a->val.dim(2) != b->val.dim(1))
        throw ShapeError("bmm: incompatible shapes");
    const long nb = a->val.dim(0), m = a->val.dim(1), k = a->val.dim(2), p = b->val.dim(2);
    Tensor<T> out = Tensor<T>::zeros({nb, m, p});
    for (long i = 0; i < nb; ++i) {
        const T* as = a->val.data() + i * m * k;
        const T* bs = b->val.data() + i * k * p;
        if (!row_acc_small(as, bs, out.data() + i * m * p, m, k, p))
            MatMap<T>(out.data() + i * m * p, m, p).noalias() =
                ConstMatMap<T>(as, m, k) * ConstMatMap<T>(bs, k, p);
    }
    return make_node<T>(std::move(out), {a, b}, [a, b, nb, m, k, p](Node<T>& self) {
        for (long i = 0; i < nb; ++i) {
            const T* g = self.grad.data() + i * m * p;
            ConstMatMap<T> gm(g, m, p);
            if (a->requires_grad) {
                a->ensure_grad();
                const T* bs = b->val.data() + i * k * p;
                if (!dot_rows_small(g, bs, a->grad.data() + i * m * k, m, k, p))
                    MatMap<T>(a->grad.data() + i * m * k, m, k).noalias() +=
                        gm * ConstMatMap<T>(bs, k, p).transpose();
            }
            if (b->requires_grad) {
                b->ensure_grad();
                const T* as = a->val.data() + i * m * k;
                if (!outer_acc_small(as, g, b->grad.data() + i * k * p, m, k, p))
                    MatMap<T>(b->grad.data() + i * k * p, k, p).noalias() +=
                        ConstMatMap<T>(as, m, k).transpose() * gm;
            }
        }
    });
}

// Scaled dot-product attention probabilities: softmax(scale * Q K^T) done as
// one node so the raw score matrix never persists in the graph. Backward uses
// only the saved probabilities.
template <typename T>
Var<T> attention_probs(const Var<T>& q, const Var<T>& k, T scale) {
    if (q->val.ndim() != 3 || k->val.ndim() != 3 || q->val.dim(0) != k->val.dim(0) ||
        q->val.dim(2) != k->val.dim(2))
        throw ShapeError("attention_probs: incompatible shapes");
    const long nb = q->val.dim(0), lq = q->val.dim(1), lk = k->val.dim(1), dh = q->val.dim(2);
    Tensor<T> out = Tensor<T>::zeros({nb, lq, lk});
    // Rows are exponentiated in one fixed aligned scratch buffer so every row
    // takes the identical SIMD path: vectorized exp applied in place would
    // split packet/scalar work by row address, and the two paths round
    // differently.
    const long lk_pad = (lk + 15) & ~long(15);
    std::vector<T, Eigen::aligned_allocator<T>> earg(lk_pad, T(0));
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>, Eigen::Aligned64> em(earg.data(), lk_pad);
    for (long i = 0; i < nb; ++i) {
        const T* qs = q->val.data() + i * lq * dh;
        const T* ks = k->val.data() + i * lk * dh;
        if (!dot_rows_small(qs, ks, out.data() + i * lq * lk, lq, lk, dh))
            MatMap<T>(out.data() + i * lq * lk, lq, lk).noalias() =
                ConstMatMap<T>(qs, lq, dh) * ConstMatMap<T>(ks, lk, dh).transpose();
        for (long r = 0; r < lq; ++r) {
            T* row = out.data() + (i * lq + r) * lk;
            const T mx = strided_row_max(row, lk) * scale;
            for (long j = 0; j < lk; ++j) earg[j] = row[j] * scale - mx;
            for (long j = lk; j < lk_pad; ++j) earg[j] = T(0);
            em = em.exp();
            const T z = strided_row_sum(earg.data(), lk);
            for (long j = 0; j < lk; ++j) row[j] = earg[j] / z;
        }
    }
    Tensor<T> probs = out;  // shared store, survives into the closure
    return make_node<T>(std::move(out), {q, k}, [q, k, probs, nb, lq, lk, dh,
                                                 scale](Node<T>& self) {
        RowMat<T> ds(lq, lk);
        for (long i = 0; i < nb; ++i) {
            for (long r = 0; r < lq; ++r) {
                const T* pr = probs.data() + (i * lq + r) * lk;
                const T* gr = self.grad.data() + (i * lq + r) * lk;
                const T dot = strided_row_dot(gr, pr, lk);
                for (long j = 0; j < lk; ++j)
                    ds(r, j) = scale * pr[j] * (gr[j] - dot);
            }
            if (q->requires_grad) {
                q->ensure_grad();
                const T* ks = k->val.data() + i * lk * dh;
                if (!row_acc_small(ds.data(), ks, q->grad.data() + i * lq * dh, lq, lk, dh))
                    MatMap<T>(q->grad.data() + i * lq * dh, lq, dh).noalias() +=
                        ds * ConstMatMap<T>(ks, lk, dh);
            }
            if (k->requires_grad) {
                k->ensure_grad();
                const T* qs = q->val.data() + i * lq * dh;
                if (!outer_acc_small(ds.data(), qs, k->grad.data() + i * lk * dh, lq, lk, dh))
                    MatMap<T>(k->grad.data() + i * lk * dh, lk, dh).noalias() +=
                        ds.transpose() * ConstMatMap<T>(qs, lq, dh);
            }
        }
    });
}

// ---- shape ops ----

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<long> shape) {
    long n = 1;
    for (long d : shape) n *= d;
    if (n != a->val.count()) throw ShapeError("reshape: element count mismatch");
    Tensor<T> out;
    out.shape = std::move(shape);
    out.store = a->val.store;  // no copy
    return make_node<T>(std::move(out), {a}, [a](Node<T>& self) {
        accumulate(a, self.grad.data(), self.grad.count());
    });
}

namespace detail {

inline std::array<long, 4> pad4(const std::vector<long>& s) {
    std::array<long, 4> d{1, 1, 1, 1};
    const int off = 4 - static_cast<int>(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) d[off + i] = s[i];
    return d;
}

// out[idx[perm]] = in[idx], shapes padded to 4 dims on the left
template <typename T>
void permute_copy(const T* src, T* dst, const std::array<long, 4>& in_dim,
                  const std::array<int, 4>& perm, bool add) {
    std::array<long, 4> out_dim;
    for (int i = 0; i < 4; ++i) out_dim[i] = in_dim[perm[i]];
    const std::array<long, 4> in_stride = {in_dim[1] * in_dim[2] * in_dim[3],
                                           in_dim[2] * in_dim[3], in_dim[3], 1};
    std::array<long, 4> out_stride_of_in{};
    {
        std::array<long, 4> out_stride = {out_dim[1] * out_dim[2] * out_dim[3],
                                          out_dim[2] * out_dim[3], out_dim[3], 1};
        for (int i = 0; i < 4; ++i) out_stride_of_in[perm[i]] = out_stride[i];
    }
    for (long i0 = 0; i0 < in_dim[0]; ++i0)
        for (long i1 = 0; i1 < in_dim[1]; ++i1)
            for (long i2 = 0; i2 < in_dim[2]; ++i2) {
                const T* s = src + i0 * in_stride[0] + i1 * in_stride[1] + i2 * in_stride[2];
                T* base = dst + i0 * out_stride_of_in[0] + i1 * out_stride_of_in[1] +
                          i2 * out_stride_of_in[2];
                const long st = out_stride_of_in[3];
                if (add)
                    for (long i3 = 0; i3 < in_dim[3]; ++i3) base[i3 * st] += s[i3];
                else
                    for (long i3 = 0; i3 < in_dim[3]; ++i3) base[i3 * st] = s[i3];
            }
}

// adjoint of the forward copy: walk input indices again, read from the
// permuted grad locations, add into the input-grad buffer
template <typename T>
void permute_copy_back(const T* gout, T* gin, const std::array<long, 4>& in_dim,
                       const std::array<int, 4>& perm) {
    std::array<long, 4> out_dim;
    for (int i = 0; i < 4; ++i) out_dim[i] = in_dim[perm[i]];
    const std::array<long, 4> in_stride = {in_dim[1] * in_dim[2] * in_dim[3],
                                           in_dim[2] * in_dim[3], in_dim[3], 1};
    std::array<long, 4> out_stride_of_in{};
    {
        std::array<long, 4> out_stride = {out_dim[1] * out_dim[2] * out_dim[3],
                                          out_dim[2] * out_dim[3], out_dim[3], 1};
        for (int i = 0; i < 4; ++i) out_stride_of_in[perm[i]] = out_stride[i];
    }
    for (long i0 = 0; i0 < in_dim[0]; ++i0)
        for (long i1 = 0; i1 < in_dim[1]; ++i1)
            for (long i2 = 0; i2 < in_dim[2]; ++i2) {
                T* d = gin + i0 * in_stride[0] + i1 * in_stride[1] + i2 * in_stride[2];
                const T* base = gout + i0 * out_stride_of_in[0] + i1 * out_stride_of_in[1] +
                                i2 * out_stride_of_in[2];
                const long st = out_stride_of_in[3];
                for (long i3 = 0; i3 < in_dim[3]; ++i3) d[i3] += base[i3 * st];
            }
}

}  // namespace detail

// Permutation over up to 4 dims; perm lists source axes in output order.
template <typename T>
Var<T> permute(const Var<T>& a, std::vector<int> perm_in) {
    const int nd = a->val.ndim();
    if (static_cast<int>(perm_in.size()) != nd) throw ShapeError("permute: rank mismatch");
    const int off = 4 - nd;
    std::array<int, 4> perm{0, 1, 2, 3};
    for (int i = 0; i < nd; ++i) perm[off + i] = perm_in[i] + off;

    const auto in_dim = detail::pad4(a->val.shape);
    std::vector<long> out_shape(nd);
    for (int i = 0; i < nd; ++i) out_shape[i] = a->val.shape[perm_in[i]];

    Tensor<T> out = Tensor<T>::zeros(out_shape);
    detail::permute_copy(a->val.data(), out.data(), in_dim, perm, false);
    return make_node<T>(std::move(out), {a}, [a, in_dim, perm](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        detail::permute_copy_back(self.grad.data(), a->grad.data(), in_dim, perm);
    });
}

template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_last: no inputs");
    std::vector<long> shape = parts[0]->val.shape;
    long total_c = 0;
    const long rows = parts[0]->val.count() / shape.back();
    for (const auto& p : parts) {
        auto s = p->val.shape;
        s.back() = shape.back();
        if (s != shape || p->val.count() / p->val.shape.back() != rows)
            throw ShapeError("concat_last: shape mismatch");
        total_c += p->val.shape.back();
    }
    shape.back() = total_c;
    Tensor<T> out = Tensor<T>::zeros(shape);
    long col = 0;
    for (const auto& p : parts) {
        const long c = p->val.shape.back();
        for (long r = 0; r < rows; ++r)
            std::copy(p->val.data() + r * c, p->val.data() + (r + 1) * c,
                      out.data() + r * total_c + col);
        col += c;
    }
    std::vector<Var<T>> parents = parts;
    return make_node<T>(std::move(out), parts, [parents, rows, total_c](Node<T>& self) {
        long col = 0;
        for (const auto& p : parents) {
            const long c = p->val.shape.back();
            if (p->requires_grad) {
                p->ensure_grad();
                for (long r = 0; r < rows; ++r)
                    ArrMap<T>(p->grad.data() + r * c, c) +=
                        ConstArrMap<T>(self.grad.data() + r * total_c + col, c);
            }
            col += c;
        }
    });
}

template <typename T>
Var<T> slice_last(const Var<T>& a, long start, long len) {
    const long c = a->val.shape.back();
    if (start < 0 || start + len > c) throw ShapeError("slice_last: out of range");
    std::vector<long> shape = a->val.shape;
    shape.back() = len;
    const long rows = a->val.count() / c;
    Tensor<T> out = Tensor<T>::zeros(shape);
    for (long r = 0; r < rows; ++r)
        std::copy(a->val.data() + r * c + start, a->val.data() + r * c + start + len,
                  out.data() + r * len);
    return make_node<T>(std::move(out), {a}, [a, start, len, rows, c](Node<T>& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (long r = 0; r < rows; ++r)
            ArrMap<T>(a->grad.data() + r * c + start, len) +=
                ConstArrMap<T>(self.grad.data() + r * len, len);
    });
}

// ---- normalization ----

// LayerNorm over the last dim with affine parameters.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const long c = x->val.shape.back();
    if (gamma->val.count() != c || beta->val.count() != c)
        throw ShapeError("layer_norm: affine size mismatch");
    const long rows = x->val.count() / c;
    Tensor<T> out = Tensor<T>::zeros(x->val.shape);
    auto stats = std::make_shared<std::vector<T>>(2 * rows);  // mean, inv std per row
    for (long r = 0; r < rows; ++r) {
        const T* xr = x->val.data() + r * c;
        const T m = strict_sum(xr, c) / static_cast<T>(c);
        T v = T(0);
        for (long j = 0; j < c; ++j) {
            const T d = xr[j] - m;
            v += d * d;
        }
        v /= static_cast<T>(c);
        const T inv = T(1) / std::sqrt(v + eps);
        (*stats)[2 * r] = m;
        (*stats)[2 * r + 1] = inv;
        T* yr = out.data() + r * c;
        for (long j = 0; j < c; ++j)
            yr[j] = (xr[j] - m) * inv * gamma->val.data()[j] + beta->val.data()[j];
    }
    return make_node<T>(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, stats, rows, c](Node<T>& self) {
        std::vector<T> xhat(c), gy(c);
        for (long r = 0; r < rows; ++r) {
            const T* xr = x->val.data() + r * c;
            const T* g = self.grad.data() + r * c;
            const T m = (*stats)[2 * r];
            const T inv = (*stats)[2 * r + 1];
            for (long j = 0; j < c; ++j) xhat[j] = (xr[j] - m) * inv;
            if (gamma->requires_grad) {
                gamma->ensure_grad();
                for (long j = 0; j < c; ++j) gamma->grad.data()[j] += g[j] * xhat[j];
            }
            if (beta->requires_grad) {
                beta->ensure_grad();
                for (long j = 0; j < c; ++j) beta->grad.data()[j] += g[j];
            }
            if (x->requires_grad) {
                x->ensure_grad();
                T mg = T(0), mgx = T(0);
                for (long j = 0; j < c; ++j) {
                    gy[j] = g[j] * gamma->val.data()[j];
                    mg += gy[j];
                    mgx += gy[j] * xhat[j];
                }
                mg /= static_cast<T>(c);
                mgx /= static_cast<T>(c);
                T* dx = x->grad.data() + r * c;
                for (long j = 0; j < c; ++j) dx[j] += inv * (gy[j] - mg - xhat[j] * mgx);
            }
        }
    });
}

// InstanceNorm for (B, T, F, C): statistics over T*F per (batch, channel).
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                     T eps = T(1e-5)) {
    if (x->val.ndim() != 4) throw ShapeError("instance_norm: expected B,T,F,C");
    const long b = x->val.dim(0), t = x->val.dim(1), f = x->val.dim(2), c = x->val.dim(3);
    if (gamma->val.count() != c || beta->val.count() != c)
        throw ShapeError("instance_norm: affine size mismatch");
    const long plane = t * f;
    Tensor<T> out = Tensor<T>::zeros(x->val.shape);
    auto stats = std::make_shared<std::vector<T>>(2 * b * c);
    for (long bi = 0; bi < b; ++bi) {
        const T* xb = x->val.data() + bi * plane * c;
        T* yb = out.data() + bi * plane * c;
        for (long ci = 0; ci < c; ++ci) {
            T m = T(0);
            for (long p = 0; p < plane; ++p) m += xb[p * c + ci];
            m /= static_cast<T>(plane);
            T v = T(0);
            for (long p = 0; p < plane; ++p) {
                const T d = xb[p * c + ci] - m;
                v += d * d;
            }
            v /= static_cast<T>(plane);
            const T inv = T(1) / std::sqrt(v + eps);
            (*stats)[2 * (bi * c + ci)] = m;
            (*stats)[2 * (bi * c + ci) + 1] = inv;
            const T gc = gamma->val.data()[ci], bc = beta->val.data()[ci];
            for (long p = 0; p < plane; ++p)
                yb[p * c + ci] = (xb[p * c + ci] - m) * inv * gc + bc;
        }
    }
    return make_node<T>(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, stats, b, plane, c](Node<T>& self) {
        for (long bi = 0; bi < b; ++bi) {
            const T* xb = x->val.data() + bi * plane * c;
            const T* gb = self.grad.data() + bi * plane * c;
            for (long ci = 0; ci < c; ++ci) {
                const T m = (*stats)[2 * (bi * c + ci)];
                const T inv = (*stats)[2 * (bi * c + ci) + 1];
                T sg = T(0), sgx = T(0);
                for (long p = 0; p < plane; ++p) {
                    const T g = gb[p * c + ci];
                    sg += g;
                    sgx += g * (xb[p * c + ci] - m) * inv;
                }
                if (gamma->requires_grad) {
                    gamma->ensure_grad();
                    gamma->grad.data()[ci] += sgx;
                }
                if (beta->requires_grad) {
                    beta->ensure_grad();
                    beta->grad.data()[ci] += sg;
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    const T gc = gamma->val.data()[ci];
                    const T mg = sg / static_cast<T>(plane) * gc;
                    const T mgx = sgx / static_cast<T>(plane) * gc;
                    T* dxb = x->grad.data() + bi * plane * c;
                    for (long p = 0; p < plane; ++p) {
                        const T xhat = (xb[p * c + ci] - m) * inv;
                        dxb[p * c + ci] += inv * (gb[p * c + ci] * gc - mg - xhat * mgx);
                    }
                }
            }
        }
    });
}

// ---- convolutions ----

// x: (B, T, F, Ci), w: (kt, kf, Ci, Co), bias: (Co) or empty Var.
// Same padding along T with time dilation; F strided by stride_f with pad_f.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, long dil_t, long stride_f,
              long pad_t, long pad_f) {
    if (x->val.ndim() != 4 || w->val.ndim() != 4) throw ShapeError("conv2d: rank mismatch");
    const long b = x->val.dim(0), t = x->val.dim(1), f = x->val.dim(2), ci = x->val.dim(3);
    const long kt = w->val.dim(0), kf = w->val.dim(1);
    if (w->val.dim(2) != ci) throw ShapeError("conv2d: channel mismatch");
    const long co = w->val.dim(3);
    const long t_out = t + 2 * pad_t - dil_t * (kt - 1);
    const long f_out = (f + 2 * pad_f - kf) / stride_f + 1;
    if (t_out <= 0 || f_out <= 0) throw ShapeError("conv2d: empty output");

    const long tp = t + 2 * pad_t, fp = f + 2 * pad_f;
    auto make_padded = [=](const T* src) {
        std::vector<T> xp(static_cast<std::size_t>(b) * tp * fp * ci, T(0));
        for (long bi = 0; bi < b; ++bi)
            for (long ti = 0; ti < t; ++ti)
                std::copy(src + ((bi * t + ti) * f) * ci, src + ((bi * t + ti + 1) * f) * ci,
                          xp.data() + ((bi * tp + ti + pad_t) * fp + pad_f) * ci);
        return xp;
    };

    Tensor<T> out = Tensor<T>::zeros({b, t_out, f_out, co});
    {
        const std::vector<T> xp = make_padded(x->val.data());
        for (long it = 0; it < kt; ++it)
            for (long jf = 0; jf < kf; ++jf) {
                ConstMatMap<T> wm(w->val.data() + (it * kf + jf) * ci * co, ci, co);
                for (long bi = 0; bi < b; ++bi)
                    for (long ti = 0; ti < t_out; ++ti) {
                        const T* src = xp.data() + ((bi * tp + ti + it * dil_t) * fp + jf) * ci;
                        Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> in(
                            src, f_out, ci, Eigen::OuterStride<>(stride_f * ci));
                        MatMap<T>(out.data() + ((bi * t_out + ti) * f_out) * co, f_out, co)
                            .noalias() += in * wm;
                    }
            }
        if (bias && bias->val.count()) {
            Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>> ba(bias->val.data(), co);
            MatMap<T>(out.data(), b * t_out * f_out, co).array().rowwise() += ba;
        }
    }

    std::vector<Var<T>> parents = bias ? std::vector<Var<T>>{x, w, bias}
                                       : std::vector<Var<T>>{x, w};
    return make_node<T>(std::move(out), std::move(parents),
                        [=](Node<T>& self) {
        const long n_out = b * t_out * f_out;
        if (bias && bias->requires_grad) {
            bias->ensure_grad();
            const T* g = self.grad.data();
            T* db = bias->grad.data();
            for (long r = 0; r < n_out; ++r)
                for (long j = 0; j < co; ++j) db[j] += g[r * co + j];
        }
        const std::vector<T> xp = make_padded(x->val.data());
        std::vector<T> dxp;
        if (x->requires_grad) dxp.assign(xp.size(), T(0));
        if (w->requires_grad) w->ensure_grad();

        for (long it = 0; it < kt; ++it)
            for (long jf = 0; jf < kf; ++jf) {
                ConstMatMap<T> wm(w->val.data() + (it * kf + jf) * ci * co, ci, co);
                T* dw = w->requires_grad ? w->grad.data() + (it * kf + jf) * ci * co : nullptr;
                for (long bi = 0; bi < b; ++bi)
                    for (long ti = 0; ti < t_out; ++ti) {
                        ConstMatMap<T> g(self.grad.data() + ((bi * t_out + ti) * f_out) * co,
                                         f_out, co);
                        const long base = ((bi * tp + ti + it * dil_t) * fp + jf) * ci;
                        if (dw) {
                            Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> in(
                                xp.data() + base, f_out, ci,
                                Eigen::OuterStride<>(stride_f * ci));
                            MatMap<T>(dw, ci, co).noalias() += in.transpose() * g;
                        }
                        if (x->requires_grad) {
                            Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>> din(
                                dxp.data() + base, f_out, ci,
                                Eigen::OuterStride<>(stride_f * ci));
                            din.noalias() += g * wm.transpose();
                        }
                    }
            }
        if (x->requires_grad) {
            x->ensure_grad();
            for (long bi = 0; bi < b; ++bi)
                for (long ti = 0; ti < t; ++ti)
                    ArrMap<T>(x->grad.data() + ((bi * t + ti) * f) * ci, f * ci) +=
                        ConstArrMap<T>(dxp.data() + ((bi * tp + ti + pad_t) * fp + pad_f) * ci,
                                       f * ci);
        }
    });
}

// Depthwise 1D convolution along L for (N, L, C), same padding, kernel (K, C).
template <typename T>
Var<T> depthwise_conv1d(const Var<T>& x, const Var<T>& w) {
    if (x->val.ndim() != 3 || w->val.ndim() != 2) throw ShapeError("depthwise: rank mismatch");
    const long nb = x->val.dim(0), l = x->val.dim(1), c = x->val.dim(2);
    const long k = w->val.dim(0);
    if (w->val.dim(1) != c) throw ShapeError("depthwise: channel mismatch");
    const long pad = k / 2;

    Tensor<T> out = Tensor<T>::zeros(x->val.shape);
    for (long n = 0; n < nb; ++n) {
        MatMap<T> y(out.data() + n * l * c, l, c);
        ConstMatMap<T> xin(x->val.data() + n * l * c, l, c);
        for (long ki = 0; ki < k; ++ki) {
            const long o = ki - pad;
            const long lo = std::max<long>(0, -o);
            const long hi = std::min<long>(l, l - o);
            if (hi <= lo) continue;
            Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>> wk(w->val.data() + ki * c, c);
            y.middleRows(lo, hi - lo).array() +=
                xin.middleRows(lo + o, hi - lo).array().rowwise() * wk;
        }
    }
    return make_node<T>(std::move(out), {x, w}, [x, w, nb, l, c, k, pad](Node<T>& self) {
        for (long n = 0; n < nb; ++n) {
            ConstMatMap<T> g(self.grad.data() + n * l * c, l, c);
            for (long ki = 0; ki < k; ++ki) {
                const long o = ki - pad;
                const long lo = std::max<long>(0, -o);
                const long hi = std::min<long>(l, l - o);
                if (hi <= lo) continue;
                if (x->requires_grad) {
                    x->ensure_grad();
                    Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>> wk(
                        w->val.data() + ki * c, c);
                    MatMap<T>(x->grad.data() + n * l * c, l, c)
                        .middleRows(lo + o, hi - lo)
                        .array() += g.middleRows(lo, hi - lo).array().rowwise() * wk;
                }
                if (w->requires_grad) {
                    w->ensure_grad();
                    const T* xin = x->val.data() + n * l * c;
                    const T* gd = self.grad.data() + n * l * c;
                    T* dw = w->grad.data() + ki * c;
                    for (long r = lo; r < hi; ++r)
                        for (long j = 0; j < c; ++j)
                            dw[j] += xin[(r + o) * c + j] * gd[r * c + j];
                }
            }
        }
    });
}

// Channels-to-frequency rearrangement (B,T,F,2C) -> (B,T,2F,C):
// out[b,t,2f+j,c] = in[b,t,f,jC+c]. The row-major layout makes this a pure
// reinterpretation, so it costs nothing.
template <typename T>
Var<T> subpixel_freq2(const Var<T>& x) {
    if (x->val.ndim() != 4 || x->val.dim(3) % 2 != 0)
        throw ShapeError("subpixel_freq2: needs B,T,F,2C");
    return reshape(x, {x->val.dim(0), x->val.dim(1), x->val.dim(2) * 2, x->val.dim(3) / 2});
}

// ---- differentiable iSTFT ----

// re, im: (T, F) grids with F = fft/2 bins (Nyquist treated as zero).
// Output: (length) waveform. Internals run in double regardless of T.
template <typename T>
Var<T> istft_wave(const Var<T>& re, const Var<T>& im, const StftConfig& cfg, long length) {
    check_same_shape(re->val, im->val, "istft_wave");
    if (re->val.ndim() != 2) throw ShapeError("istft_wave: expected T,F grid");
    const long frames = re->val.dim(0), bins = re->val.dim(1);
    if (bins != cfg.bins()) throw ShapeError("istft_wave: wrong bin count");

    ComplexSpectrogram S;
    S.cfg = cfg;
    S.frames = static_cast<int>(frames);
    S.bins = static_cast<int>(bins);
    S.data.resize(frames * bins);
    for (long i = 0; i < frames * bins; ++i)
        S.data[i] = cplx(static_cast<double>(re->val.data()[i]),
                         static_cast<double>(im->val.data()[i]));
    const Waveform y = istft(S, cfg, length);

    Tensor<T> out = Tensor<T>::zeros({length});
    for (long i = 0; i < length; ++i) out.data()[i] = static_cast<T>(y.samples[i]);

    return make_node<T>(std::move(out), {re, im},
                        [re, im, cfg, frames, bins, length](Node<T>& self) {
        const int n = cfg.fft_size;
        const std::vector<double> win = make_window(cfg.window, n);
        const long buf_len = (frames - 1) * cfg.hop + n;
        std::vector<double> env(buf_len, 0.0);
        for (long t = 0; t < frames; ++t)
            for (int i = 0; i < n; ++i) env[t * cfg.hop + i] += win[i] * win[i];

        const int off = cfg.centered ? n / 2 : 0;
        std::vector<double> dacc(buf_len, 0.0);
        for (long i = 0; i < length; ++i) {
            const long j = i + off;
            if (j >= buf_len) break;
            dacc[j] = static_cast<double>(self.grad.data()[i]) / std::max(env[j], 1e-12);
        }

        if (re->requires_grad) re->ensure_grad();
        if (im->requires_grad) im->ensure_grad();
        std::vector<double> frame(n);
        for (long t = 0; t < frames; ++t) {
            for (int i = 0; i < n; ++i) frame[i] = dacc[t * cfg.hop + i] * win[i];
            const std::vector<cplx> spec = rfft(frame);
            for (long k = 0; k < bins; ++k) {
                const double ck = (k == 0) ? 1.0 : 2.0;
                if (re->requires_grad)
                    re->grad.data()[t * bins + k] +=
                        static_cast<T>(ck / n * spec[k].real());
                if (im->requires_grad)
                    im->grad.data()[t * bins + k] +=
                        static_cast<T>(2.0 / n * spec[k].imag());
            }
        }
    });
}

}  // namespace tfc::ad
