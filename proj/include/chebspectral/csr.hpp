#ifndef CHEBSPECTRAL_CSR_HPP
#define CHEBSPECTRAL_CSR_HPP

#include "dense.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace chebspectral {

/// Compressed sparse row matrix. Columns are strictly increasing within each
/// row so two matrices built from the same entries compare equal bit-for-bit.
class CsrMatrix {
 public:
  CsrMatrix() : row_ptr_(1, 0) {}

  CsrMatrix(Index rows, Index cols, std::vector<Index> row_ptr,
            std::vector<Index> col_idx, std::vector<double> values,
            bool symmetric = false)
      : rows_(rows),
        cols_(cols),
        row_ptr_(std::move(row_ptr)),
        col_idx_(std::move(col_idx)),
        values_(std::move(values)),
        symmetric_(symmetric) {
    validate();
  }

  struct Triplet {
    Index row;
    Index col;
    double value;
  };

  /// Duplicate (row, col) entries are summed.
  static CsrMatrix from_triplets(Index rows, Index cols,
                                 std::vector<Triplet> entries,
                                 bool symmetric = false) {
    std::sort(entries.begin(), entries.end(), [](const auto& x, const auto& y) {
      return std::tie(x.row, x.col) < std::tie(y.row, y.col);
    });
    std::vector<Index> ptr(static_cast<std::size_t>(rows) + 1, 0);
    std::vector<Index> idx;
    std::vector<double> val;
    idx.reserve(entries.size());
    val.reserve(entries.size());
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto& t = entries[k];
      if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols)
        throw std::out_of_range("CsrMatrix::from_triplets: index out of range");
      if (!idx.empty() && k > 0 && entries[k - 1].row == t.row &&
          entries[k - 1].col == t.col) {
        val.back() += t.value;
        continue;
      }
      idx.push_back(t.col);
      val.push_back(t.value);
      ++ptr[static_cast<std::size_t>(t.row) + 1];
    }
    std::partial_sum(ptr.begin(), ptr.end(), ptr.begin());
    return CsrMatrix(rows, cols, std::move(ptr), std::move(idx), std::move(val),
                     symmetric);
  }

  static CsrMatrix identity(Index n) {
    std::vector<Index> ptr(static_cast<std::size_t>(n) + 1);
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(ptr.begin(), ptr.end(), Index{0});
    std::iota(idx.begin(), idx.end(), Index{0});
    return CsrMatrix(n, n, std::move(ptr), std::move(idx),
                     std::vector<double>(static_cast<std::size_t>(n), 1.0), true);
  }

  static CsrMatrix from_dense(const DenseBlock& d, bool symmetric = false) {
    std::vector<Triplet> t;
    for (Index i = 0; i < d.rows(); ++i)
      for (Index j = 0; j < d.cols(); ++j)
        if (d(i, j) != 0.0) t.push_back({i, j, d(i, j)});
    return from_triplets(d.rows(), d.cols(), std::move(t), symmetric);
  }

  Index rows() const noexcept { return rows_; }
  Index cols() const noexcept { return cols_; }
  /// Dimension of a square matrix.
  Index n() const noexcept { return rows_; }
  Index nnz() const noexcept { return static_cast<Index>(col_idx_.size()); }
  bool symmetric() const noexcept { return symmetric_; }

  const std::vector<Index>& row_ptr() const noexcept { return row_ptr_; }
  const std::vector<Index>& col_idx() const noexcept { return col_idx_; }
  const std::vector<double>& values() const noexcept { return values_; }

  /// Exact structural and value symmetry check.
  bool is_symmetric() const { return rows_ == cols_ && *this == transposed(); }

  DenseBlock to_dense() const {
    DenseBlock d = DenseBlock::Zero(rows_, cols_);
    for (Index i = 0; i < rows_; ++i)
      for (Index k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
        d(i, col_idx_[k]) = values_[k];
    return d;
  }

  CsrMatrix transposed() const {
    std::vector<Index> ptr(static_cast<std::size_t>(cols_) + 1, 0);
    for (Index c : col_idx_) ++ptr[static_cast<std::size_t>(c) + 1];
    std::partial_sum(ptr.begin(), ptr.end(), ptr.begin());
    std::vector<Index> next(ptr.begin(), ptr.end() - 1);
    std::vector<Index> idx(col_idx_.size());
    std::vector<double> val(values_.size());
    // Row-major sweep keeps the transposed columns sorted.
    for (Index i = 0; i < rows_; ++i)
      for (Index k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
        const Index dst = next[col_idx_[k]]++;
        idx[dst] = i;
        val[dst] = values_[k];
      }
    return CsrMatrix(cols_, rows_, std::move(ptr), std::move(idx),
                     std::move(val), symmetric_);
  }

  /// Sub-matrix of rows [r0, r1) and columns [c0, c1), re-indexed from zero.
  CsrMatrix tile(Index r0, Index r1, Index c0, Index c1) const {
    std::vector<Index> ptr(static_cast<std::size_t>(r1 - r0) + 1, 0);
    std::vector<Index> idx;
    std::vector<double> val;
    for (Index i = r0; i < r1; ++i) {
      const auto first = col_idx_.begin() + row_ptr_[i];
      const auto last = col_idx_.begin() + row_ptr_[i + 1];
      auto it = std::lower_bound(first, last, c0);
      for (; it != last && *it < c1; ++it) {
        idx.push_back(*it - c0);
        val.push_back(values_[static_cast<std::size_t>(it - col_idx_.begin())]);
      }
      ptr[static_cast<std::size_t>(i - r0) + 1] = static_cast<Index>(idx.size());
    }
    return CsrMatrix(r1 - r0, c1 - c0, std::move(ptr), std::move(idx),
                     std::move(val), false);
  }

  /// Entries of rows [r0, r1) whose column lies in [c0, c1).
  Index count_in(Index r0, Index r1, Index c0, Index c1) const {
    Index count = 0;
    for (Index i = r0; i < r1; ++i) {
      const auto first = col_idx_.begin() + row_ptr_[i];
      const auto last = col_idx_.begin() + row_ptr_[i + 1];
      count += std::lower_bound(first, last, c1) - std::lower_bound(first, last, c0);
    }
    return count;
  }

  friend bool operator==(const CsrMatrix& x, const CsrMatrix& y) {
    return x.rows_ == y.rows_ && x.cols_ == y.cols_ && x.row_ptr_ == y.row_ptr_ &&
           x.col_idx_ == y.col_idx_ && x.values_ == y.values_;
  }

 private:
  void validate() const {
    if (rows_ < 0 || cols_ < 0) throw std::invalid_argument("CsrMatrix: negative shape");
    if (row_ptr_.size() != static_cast<std::size_t>(rows_) + 1 || row_ptr_.front() != 0 ||
        row_ptr_.back() != static_cast<Index>(col_idx_.size()) ||
        col_idx_.size() != values_.size())
      throw std::invalid_argument("CsrMatrix: inconsistent storage");
    for (Index i = 0; i < rows_; ++i) {
      if (row_ptr_[i] > row_ptr_[i + 1])
        throw std::invalid_argument("CsrMatrix: row_ptr decreasing");
      for (Index k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
        if (col_idx_[k] < 0 || col_idx_[k] >= cols_)
          throw std::invalid_argument("CsrMatrix: column out of range");
        if (k > row_ptr_[i] && col_idx_[k] <= col_idx_[k - 1])
          throw std::invalid_argument("CsrMatrix: columns not strictly increasing");
      }
    }
  }

  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<Index> row_ptr_;
  std::vector<Index> col_idx_;
  std::vector<double> values_;
  bool symmetric_ = false;
};

/// out = a * v, accumulated left to right along each row.
inline void spmm_into(const CsrMatrix& a, const DenseBlock& v, DenseBlock& out) {
  if (a.cols() != v.rows())
    throw std::invalid_argument("spmm: dimension mismatch");
  out.resize(a.rows(), v.cols());
  const auto& ptr = a.row_ptr();
  const auto& idx = a.col_idx();
  const auto& val = a.values();
  for (Index c = 0; c < v.cols(); ++c) {
    const double* x = v.col(c).data();
    double* y = out.col(c).data();
    for (Index i = 0; i < a.rows(); ++i) {
      double s = 0.0;
      for (Index k = ptr[i]; k < ptr[i + 1]; ++k) s += val[k] * x[idx[k]];
      y[i] = s;
    }
  }
}

/// Serial sparse times tall-skinny product; reference for the distributed one.
inline DenseBlock spmm_serial(const CsrMatrix& a, const DenseBlock& v) {
  DenseBlock out;
  spmm_into(a, v, out);
  return out;
}

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_CSR_HPP
