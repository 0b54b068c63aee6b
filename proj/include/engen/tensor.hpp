#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "engen/common.hpp"

namespace engen {

// Dense row-major tensor. Rank is dynamic; most of the engine uses rank 1-3.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), T(0));
    }
    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        assert(data.size() == numel_of(shape));
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= size_t(d);
        return n;
    }

    size_t numel() const { return data.size(); }
    int dim(int i) const { return shape[size_t(i)]; }
    int rank() const { return int(shape.size()); }

    T& at(int i) { return data[size_t(i)]; }
    const T& at(int i) const { return data[size_t(i)]; }
    T& at(int i, int j) { return data[size_t(i) * size_t(shape[1]) + size_t(j)]; }
    const T& at(int i, int j) const { return data[size_t(i) * size_t(shape[1]) + size_t(j)]; }

    T* row(int i) { return data.data() + size_t(i) * size_t(shape[1]); }
    const T* row(int i) const { return data.data() + size_t(i) * size_t(shape[1]); }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, T v) {
        Tensor t(std::move(s));
        t.fill(v);
        return t;
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    static Tensor randn(std::vector<int> s, Rng& rng, T std_dev) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = T(rng.normal()) * std_dev;
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }

    bool all_finite() const {
        for (const T& x : data)
            if (!std::isfinite(double(x))) return false;
        return true;
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += "x";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_acc(int m, int k, int n, const T* A, const T* B, T* C) {
    for (int i = 0; i < m; ++i) {
        const T* a = A + size_t(i) * size_t(k);
        T* c = C + size_t(i) * size_t(n);
        for (int p = 0; p < k; ++p) {
            T av = a[p];
            const T* b = B + size_t(p) * size_t(n);
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[m,n] += A^T * B where A is [k,m], B is [k,n]
template <typename T>
void gemm_at_b_acc(int m, int k, int n, const T* A, const T* B, T* C) {
    for (int p = 0; p < k; ++p) {
        const T* a = A + size_t(p) * size_t(m);
        const T* b = B + size_t(p) * size_t(n);
        for (int i = 0; i < m; ++i) {
            T av = a[i];
            T* c = C + size_t(i) * size_t(n);
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[m,n] += A * B^T where A is [m,k], B is [n,k]
template <typename T>
void gemm_a_bt_acc(int m, int k, int n, const T* A, const T* B, T* C) {
    for (int i = 0; i < m; ++i) {
        const T* a = A + size_t(i) * size_t(k);
        T* c = C + size_t(i) * size_t(n);
        for (int j = 0; j < n; ++j) {
            const T* b = B + size_t(j) * size_t(k);
            T acc = T(0);
            for (int p = 0; p < k; ++p) acc += a[p] * b[p];
            c[j] += acc;
        }
    }
}

} // namespace engen
