#pragma once

#include <Eigen/Core>

namespace fewcount {

// Row-major GEMM: C (+)= op(A) * op(B), where op is optional transpose.
// A is MxK after op, B is KxN after op. Leading dimensions are row strides
// of the stored (untransposed) matrices. Backed by Eigen's single-threaded
// kernels; everything above this call (im2col, layout, autodiff) is ours.
template <typename T>
void gemm(int m, int n, int k, bool trans_a, const T* a, int lda, bool trans_b, const T* b,
          int ldb, T* c, int ldc, bool accumulate) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
    using MMap = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;

    CMap am(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
    CMap bm(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
    MMap cm(c, m, n, Eigen::OuterStride<>(ldc));

    if (!trans_a && !trans_b) {
        if (accumulate) cm.noalias() += am * bm;
        else cm.noalias() = am * bm;
    } else if (trans_a && !trans_b) {
        if (accumulate) cm.noalias() += am.transpose() * bm;
        else cm.noalias() = am.transpose() * bm;
    } else if (!trans_a && trans_b) {
        if (accumulate) cm.noalias() += am * bm.transpose();
        else cm.noalias() = am * bm.transpose();
    } else {
        if (accumulate) cm.noalias() += am.transpose() * bm.transpose();
        else cm.noalias() = am.transpose() * bm.transpose();
    }
}

} // namespace fewcount
