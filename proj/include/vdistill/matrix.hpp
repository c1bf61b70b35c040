#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <vector>

namespace vdistill {

// Dense row-major matrix. Row vectors are 1 x n matrices.
template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, T(0)) {}

    T& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    const T& operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    T* row_ptr(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const T* row_ptr(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return data.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(T(0)); }
};

template <typename T>
Mat<T> randn(int rows, int cols, std::mt19937& rng, T sigma) {
    Mat<T> m(rows, cols);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : m.data) v = static_cast<T>(dist(rng)) * sigma;
    return m;
}

// C = A * B^T, A: m x k, B: n x k -> m x n
template <typename T>
void matmul_nt(const Mat<T>& a, const Mat<T>& b, Mat<T>& out, bool accumulate = false) {
    if (a.cols != b.cols) throw std::runtime_error("matmul_nt: inner dim mismatch");
    if (!accumulate) {
        out = Mat<T>(a.rows, b.rows);
    }
    for (int i = 0; i < a.rows; ++i) {
        const T* ai = a.row_ptr(i);
        for (int j = 0; j < b.rows; ++j) {
            const T* bj = b.row_ptr(j);
            T acc = 0;
            for (int k = 0; k < a.cols; ++k) acc += ai[k] * bj[k];
            out(i, j) += acc;
        }
    }
}

// C = A * B, A: m x k, B: k x n -> m x n
template <typename T>
void matmul_nn(const Mat<T>& a, const Mat<T>& b, Mat<T>& out, bool accumulate = false) {
    if (a.cols != b.rows) throw std::runtime_error("matmul_nn: inner dim mismatch");
    if (!accumulate) {
        out = Mat<T>(a.rows, b.cols);
    }
    for (int i = 0; i < a.rows; ++i) {
        const T* ai = a.row_ptr(i);
        for (int k = 0; k < a.cols; ++k) {
            T av = ai[k];
            if (av == T(0)) continue;
            const T* bk = b.row_ptr(k);
            T* oi = out.row_ptr(i);
            for (int j = 0; j < b.cols; ++j) oi[j] += av * bk[j];
        }
    }
}

// C = A^T * B, A: k x m, B: k x n -> m x n
template <typename T>
void matmul_tn(const Mat<T>& a, const Mat<T>& b, Mat<T>& out, bool accumulate = false) {
    if (a.rows != b.rows) throw std::runtime_error("matmul_tn: inner dim mismatch");
    if (!accumulate) {
        out = Mat<T>(a.cols, b.cols);
    }
    for (int k = 0; k < a.rows; ++k) {
        const T* ak = a.row_ptr(k);
        const T* bk = b.row_ptr(k);
        for (int i = 0; i < a.cols; ++i) {
            T av = ak[i];
            if (av == T(0)) continue;
            T* oi = out.row_ptr(i);
            for (int j = 0; j < b.cols; ++j) oi[j] += av * bk[j];
        }
    }
}

template <typename T>
void add_inplace(Mat<T>& dst, const Mat<T>& src) {
    if (!dst.same_shape(src)) throw std::runtime_error("add_inplace: shape mismatch");
    for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

// In-place row softmax.
template <typename T>
void softmax_rows_inplace(Mat<T>& m) {
    for (int r = 0; r < m.rows; ++r) {
        T* p = m.row_ptr(r);
        T mx = p[0];
        for (int c = 1; c < m.cols; ++c) mx = std::max(mx, p[c]);
        T sum = 0;
        for (int c = 0; c < m.cols; ++c) {
            p[c] = std::exp(p[c] - mx);
            sum += p[c];
        }
        for (int c = 0; c < m.cols; ++c) p[c] /= sum;
    }
}

template <typename T>
Mat<T> softmax_rows(const Mat<T>& m) {
    Mat<T> out = m;
    softmax_rows_inplace(out);
    return out;
}

}  // namespace vdistill
