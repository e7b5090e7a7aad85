#pragma once

#include <utility>
#include <vector>

#include "localgp/errors.hpp"
#include "localgp/kernel.hpp"
#include "localgp/knn.hpp"

namespace localgp {

/// Full training design (X, Y) with an exact neighbor index. Shared
/// read-only across workers; queries allocate only in the caller.
class DesignSet {
 public:
  DesignSet(RowMatrix X, Vector Y) : X_(std::move(X)), Y_(std::move(Y)) {
    if (X_.rows() != Y_.size()) {
      throw DimensionError("DesignSet: X rows != Y length");
    }
    if (!X_.allFinite() || !Y_.allFinite()) {
      throw InvalidInputError("DesignSet: non-finite entries");
    }
    tree_ = KdTree(X_);
  }

  // The tree holds a pointer to X_; relocation would leave it dangling.
  DesignSet(const DesignSet&) = delete;
  DesignSet& operator=(const DesignSet&) = delete;

  int n() const { return static_cast<int>(X_.rows()); }
  int dim() const { return static_cast<int>(X_.cols()); }
  const RowMatrix& X() const { return X_; }
  const Vector& Y() const { return Y_; }
  double y(int row) const { return Y_(row); }

  /// k nearest design rows to x, ascending by (squared distance, id).
  void knn(ConstVecRef x, int k, std::vector<Neighbor>& out) const {
    if (x.size() != X_.cols()) {
      throw DimensionError("DesignSet::knn: point dimension");
    }
    tree_.query(x.data(), k, out);
  }

 private:
  RowMatrix X_;
  Vector Y_;
  KdTree tree_;
};

}  // namespace localgp
