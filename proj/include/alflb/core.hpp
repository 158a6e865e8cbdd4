// SPDX-License-Identifier: Apache-2.0
//
// Shared domain types for bias-shifted Top-K routing: problem dimensions,
// affinity matrices, bias vectors, assignments, and loads.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace alflb {

enum class ErrorCode {
  NonDivisible,
  InvalidRange,
  DimMismatch,
  OverflowGuard,
  KNotOne,
  DegenerateGaps,
  TooLarge,
  TooManyTerms,
  NoConvergence,
  ParseError,
  ValidationError,
  IoError,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonDivisible: return "NonDivisible";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::OverflowGuard: return "OverflowGuard";
    case ErrorCode::KNotOne: return "KNotOne";
    case ErrorCode::DegenerateGaps: return "DegenerateGaps";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::TooManyTerms: return "TooManyTerms";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Dense row-major matrix.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<T> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const T> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  const std::vector<T>& data() const noexcept { return data_; }
  std::vector<T>& data() noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// Token count T, expert count E, sparsity K and the per-expert target load L.
///
/// In balanced mode L = K*T/E and must be an integer. The unbalanced escape
/// hatch carries a user-specified real L; balance-guarantee checkers refuse
/// to run on such dims.
struct ProblemDims {
  std::size_t tokens = 0;
  std::size_t experts = 0;
  std::size_t sparsity = 1;
  double target_load = 0.0;
  bool balanced = true;

  friend bool operator==(const ProblemDims&, const ProblemDims&) = default;
};

inline ProblemDims validate_dims(ProblemDims dims, bool balanced = true) {
  if (dims.tokens == 0) throw Error(ErrorCode::InvalidRange, "T must be positive");
  if (dims.experts < 2) throw Error(ErrorCode::InvalidRange, "E must be at least 2");
  if (dims.sparsity == 0 || dims.sparsity > dims.experts) {
    throw Error(ErrorCode::InvalidRange, "K must satisfy 1 <= K <= E");
  }
  dims.balanced = balanced;
  if (balanced) {
    const std::size_t total = dims.sparsity * dims.tokens;
    if (total % dims.experts != 0) {
      throw Error(ErrorCode::NonDivisible,
                  "K*T = " + std::to_string(total) + " not divisible by E = " +
                      std::to_string(dims.experts));
    }
    dims.target_load = static_cast<double>(total / dims.experts);
  } else if (!(dims.target_load > 0.0) || !std::isfinite(dims.target_load)) {
    throw Error(ErrorCode::InvalidRange, "unbalanced target load must be a positive real");
  }
  return dims;
}

inline ProblemDims make_dims(std::size_t tokens, std::size_t experts, std::size_t sparsity) {
  return validate_dims(ProblemDims{tokens, experts, sparsity, 0.0, true}, true);
}

inline ProblemDims make_unbalanced_dims(std::size_t tokens, std::size_t experts,
                                        std::size_t sparsity, double target_load) {
  return validate_dims(ProblemDims{tokens, experts, sparsity, target_load, false}, false);
}

/// T x E affinity scores, each strictly inside (0, 1).
class AffinityMatrix {
 public:
  AffinityMatrix() = default;
  explicit AffinityMatrix(Matrix<double> values) : values_(std::move(values)) {
    for (double v : values_.data()) {
      if (!(v > 0.0 && v < 1.0)) {
        throw Error(ErrorCode::InvalidRange, "affinity entries must lie in (0,1)");
      }
    }
  }

  static AffinityMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    Matrix<double> m(rows.size(), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != cols) throw Error(ErrorCode::DimMismatch, "ragged affinity rows");
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return AffinityMatrix(std::move(m));
  }

  std::size_t tokens() const noexcept { return values_.rows(); }
  std::size_t experts() const noexcept { return values_.cols(); }
  double operator()(std::size_t i, std::size_t k) const { return values_(i, k); }
  std::span<const double> row(std::size_t i) const { return values_.row(i); }
  const Matrix<double>& values() const noexcept { return values_; }

  friend bool operator==(const AffinityMatrix&, const AffinityMatrix&) = default;

 private:
  Matrix<double> values_;
};

/// Per-expert additive shifts p_k.
struct BiasVector {
  std::vector<double> values;

  BiasVector() = default;
  explicit BiasVector(std::size_t experts) : values(experts, 0.0) {}
  explicit BiasVector(std::vector<double> v) : values(std::move(v)) {
    for (double x : values) {
      if (!std::isfinite(x)) throw Error(ErrorCode::InvalidRange, "bias entries must be finite");
    }
  }

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t k) const { return values[k]; }
  double& operator[](std::size_t k) { return values[k]; }

  double sum() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  bool is_zero_sum(double tolerance = 1e-12) const { return std::abs(sum()) <= tolerance; }

  friend bool operator==(const BiasVector&, const BiasVector&) = default;
};

struct LoadVector {
  std::vector<std::size_t> counts;

  std::size_t size() const noexcept { return counts.size(); }
  std::size_t operator[](std::size_t k) const { return counts[k]; }
  std::size_t total() const {
    std::size_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  std::size_t max() const { return counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end()); }
  std::size_t min() const { return counts.empty() ? 0 : *std::min_element(counts.begin(), counts.end()); }

  friend bool operator==(const LoadVector&, const LoadVector&) = default;
};

/// Binary T x E selection with exactly K ones per row.
class Assignment {
 public:
  Assignment() = default;
  Assignment(std::size_t sparsity, Matrix<std::uint8_t> selected)
      : sparsity_(sparsity), selected_(std::move(selected)) {
    for (std::size_t i = 0; i < selected_.rows(); ++i) {
      std::size_t ones = 0;
      for (auto b : selected_.row(i)) {
        if (b > 1) throw Error(ErrorCode::InvalidRange, "assignment entries must be 0/1");
        ones += b;
      }
      if (ones != sparsity_) {
        throw Error(ErrorCode::InvalidRange,
                    "assignment row " + std::to_string(i) + " does not sum to K");
      }
    }
  }

  /// Builds an assignment from one expert index list per token.
  static Assignment from_choices(std::size_t experts,
                                 const std::vector<std::vector<std::size_t>>& choices) {
    const std::size_t k = choices.empty() ? 1 : choices.front().size();
    Matrix<std::uint8_t> m(choices.size(), experts, 0);
    for (std::size_t i = 0; i < choices.size(); ++i) {
      for (auto e : choices[i]) {
        if (e >= experts) throw Error(ErrorCode::DimMismatch, "expert index out of range");
        m(i, e) = 1;
      }
    }
    return Assignment(k, std::move(m));
  }

  std::size_t tokens() const noexcept { return selected_.rows(); }
  std::size_t experts() const noexcept { return selected_.cols(); }
  std::size_t sparsity() const noexcept { return sparsity_; }
  bool operator()(std::size_t i, std::size_t k) const { return selected_(i, k) != 0; }
  const Matrix<std::uint8_t>& selected() const noexcept { return selected_; }

  friend bool operator==(const Assignment&, const Assignment&) = default;

 private:
  std::size_t sparsity_ = 1;
  Matrix<std::uint8_t> selected_;
};

inline LoadVector loads_from_assignment(const Assignment& x) {
  LoadVector loads{std::vector<std::size_t>(x.experts(), 0)};
  for (std::size_t i = 0; i < x.tokens(); ++i) {
    for (std::size_t k = 0; k < x.experts(); ++k) loads.counts[k] += x(i, k) ? 1 : 0;
  }
  return loads;
}

// Neumaier-compensated running sum; the Lagrangian identity is checked at
// 1e-9 relative and the strict-decrease property needs a clean sign.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace alflb
