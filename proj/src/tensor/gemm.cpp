#include <Eigen/Core>

#include "internal.hpp"

namespace catcd::detail {

template <typename T>
void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const Mat>;
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ni = static_cast<Eigen::Index>(n);
  const auto ki = static_cast<Eigen::Index>(k);
  ConstMap am(a, transpose_a ? ki : mi, transpose_a ? mi : ki);
  ConstMap bm(b, transpose_b ? ni : ki, transpose_b ? ki : ni);
  Eigen::Map<Mat> cm(c, mi, ni);
  if (!accumulate) cm.setZero();
  if (transpose_a && transpose_b) {
    cm.noalias() += am.transpose() * bm.transpose();
  } else if (transpose_a) {
    cm.noalias() += am.transpose() * bm;
  } else if (transpose_b) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() += am * bm;
  }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*,
                           const double*, double*, bool);

}  // namespace catcd::detail
