#pragma once

#include <string>

#include <Eigen/Dense>

#include "errors.hpp"

namespace corrgcv {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace linalg {

// Procedure: sym_eig
// Ascending eigenvalues of a symmetric matrix; eigenvectors in the columns of *v when requested.
inline Vec sym_eig(const Mat& a, Mat* v = nullptr) {
  const Index n = a.rows();
  if (a.cols() != n) throw DimensionMismatch("sym_eig: matrix not square");
  if (n == 0) return Vec();
  Eigen::SelfAdjointEigenSolver<Mat> es(a, v ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error("sym_eig: eigensolver did not converge");
  if (v) *v = es.eigenvectors();
  return es.eigenvalues();
}

// Procedure: tridiag_eigvals
// Eigenvalues (ascending) of the symmetric tridiagonal matrix with diagonal d and off-diagonal e.
inline Vec tridiag_eigvals(const Vec& d, const Vec& e) {
  const Index n = d.size();
  if (n == 0) return d;
  if (e.size() != n - 1) throw DimensionMismatch("tridiag_eigvals: off-diagonal length");
  if (n == 1) return d;
  Eigen::SelfAdjointEigenSolver<Mat> es;
  es.computeFromTridiagonal(d, e, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error("tridiag_eigvals: eigensolver did not converge");
  return es.eigenvalues();
}

}  // end of namespace linalg

}  // end of namespace corrgcv ------------------------------------------------
