#pragma once

#include <algorithm>
#include <vector>

#include "localgp/errors.hpp"
#include "localgp/kernel.hpp"

namespace localgp {

struct Neighbor {
  double d2 = 0.0;
  int id = -1;
};

/// Orders by (distance, id); the id part makes every k-NN set unique, so
/// ties at the k-th distance break toward lower row ids.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  if (a.d2 != b.d2) return a.d2 < b.d2;
  return a.id < b.id;
}

/// Exact k-nearest-neighbor index (median-split kd-tree, bounded max-heap
/// queries). The far branch is pruned only when its plane distance strictly
/// exceeds the current k-th best, so results equal a full sort, including
/// id tie-breaks.
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(const RowMatrix& points, int leaf_size = 24)
      : points_(&points), leaf_size_(leaf_size) {
    const int n = static_cast<int>(points.rows());
    perm_.resize(n);
    for (int i = 0; i < n; ++i) perm_[i] = i;
    if (n > 0) {
      nodes_.reserve(2 * (n / leaf_size_ + 2));
      root_ = build(0, n);
    }
  }

  /// k nearest rows to x, ascending by (d2, id). k is clamped to n.
  void query(const double* x, int k, std::vector<Neighbor>& out) const {
    out.clear();
    if (!points_ || points_->rows() == 0 || k <= 0) return;
    k = std::min<int>(k, static_cast<int>(points_->rows()));
    out.reserve(k);
    search(root_, x, k, out);
    std::sort(out.begin(), out.end(), neighbor_less);
  }

 private:
  struct Node {
    int left = -1;
    int right = -1;
    int begin = 0;
    int end = 0;  // leaf range in perm_ when left < 0
    int dim = 0;
    double split = 0.0;
  };

  int build(int begin, int end) {
    Node node;
    node.begin = begin;
    node.end = end;
    const int count = end - begin;
    const int p = static_cast<int>(points_->cols());
    if (count > leaf_size_) {
      // Split the widest dimension at its median point.
      int best_dim = 0;
      double best_spread = -1.0;
      for (int d = 0; d < p; ++d) {
        double lo = (*points_)(perm_[begin], d), hi = lo;
        for (int i = begin + 1; i < end; ++i) {
          const double v = (*points_)(perm_[i], d);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        if (hi - lo > best_spread) {
          best_spread = hi - lo;
          best_dim = d;
        }
      }
      if (best_spread > 0.0) {
        const int mid = begin + count / 2;
        std::nth_element(perm_.begin() + begin, perm_.begin() + mid,
                         perm_.begin() + end, [&](int a, int b) {
                           return (*points_)(a, best_dim) <
                                  (*points_)(b, best_dim);
                         });
        node.dim = best_dim;
        node.split = (*points_)(perm_[mid], best_dim);
        const int idx = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        const int left = build(begin, mid);
        const int right = build(mid, end);
        nodes_[idx].left = left;
        nodes_[idx].right = right;
        return idx;
      }
      // All points identical in every dimension: keep as one leaf.
    }
    const int idx = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    return idx;
  }

  void search(int node_idx, const double* x, int k,
              std::vector<Neighbor>& heap) const {
    const Node& node = nodes_[node_idx];
    const int p = static_cast<int>(points_->cols());
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int id = perm_[i];
        const double* row =
            points_->data() + static_cast<std::ptrdiff_t>(id) * p;
        const Neighbor cand{detail::sq_dist_raw(x, row, p), id};
        if (static_cast<int>(heap.size()) < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end(), neighbor_less);
        } else if (neighbor_less(cand, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), neighbor_less);
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end(), neighbor_less);
        }
      }
      return;
    }
    const double delta = x[node.dim] - node.split;
    const int near = delta <= 0.0 ? node.left : node.right;
    const int far = delta <= 0.0 ? node.right : node.left;
    search(near, x, k, heap);
    const double plane_d2 = delta * delta;
    if (static_cast<int>(heap.size()) < k || plane_d2 <= heap.front().d2) {
      search(far, x, k, heap);
    }
  }

  const RowMatrix* points_ = nullptr;
  int leaf_size_ = 24;
  int root_ = -1;
  std::vector<int> perm_;
  std::vector<Node> nodes_;
};

}  // namespace localgp
